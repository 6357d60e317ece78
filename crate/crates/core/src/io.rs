//! CSV and JSON on disk: trajectories (one CSV per frame plus a manifest),
//! space-time tables and their interpolation.
//!
//! Every CSV starts with a `# kolmo <version> spec_hash=<hash> ...` comment
//! line; readers skip `#` lines.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, Grid, PointFunction, Trajectory};
use crate::geometry::Point;
use crate::potential::{Lattice, SpaceTimeField};

pub const TOOL: &str = "kolmo";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    fn fs(path: &Path, source: std::io::Error) -> Self {
        IoError::Fs { path: path.to_path_buf(), source }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), message: message.into() }
    }
}

/// Shortest round-trip text, switching to exponent form for very large or
/// very small magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn header(spec_hash: &str, extra: &str) -> String {
    if extra.is_empty() {
        format!("# {TOOL} {VERSION} spec_hash={spec_hash}\n")
    } else {
        format!("# {TOOL} {VERSION} spec_hash={spec_hash} {extra}\n")
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::fs(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| IoError::fs(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn read_rows(path: &Path, expected: &[&str]) -> Result<Vec<Vec<f64>>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path).map_err(|e| IoError::format(path, e.to_string()))?;
    let head = rdr.headers().map_err(|e| IoError::format(path, e.to_string()))?.clone();
    if head.iter().collect::<Vec<_>>() != expected {
        return Err(IoError::format(path, format!("expected header {}, got {}", expected.join(","), head.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IoError::format(path, e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| IoError::format(path, format!("row {}: bad number {s:?}", n + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != expected.len() {
            return Err(IoError::format(path, format!("row {}: {} columns", n + 1, row.len())));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// One time level as `x,y,value`, x-major.
pub fn field_csv(f: &Field, spec_hash: &str) -> String {
    let g = f.grid;
    let mut s = header(spec_hash, &format!("t={}", fmt_f64(f.t)));
    s.push_str("x,y,value\n");
    for i in 0..g.nx {
        for j in 0..g.ny {
            let (x, y) = (g.xc(i as isize), g.yc(j as isize));
            s.push_str(&format!("{},{},{}\n", fmt_f64(x), fmt_f64(y), fmt_f64(f.get(i, j))));
        }
    }
    s
}

fn read_field(path: &Path, grid: Grid, t: f64) -> Result<Field, IoError> {
    let rows = read_rows(path, &["x", "y", "value"])?;
    if rows.len() != grid.len() {
        return Err(IoError::format(path, format!("{} rows for a {}x{} grid", rows.len(), grid.nx, grid.ny)));
    }
    let mut f = Field::zeros(grid, t);
    let mut seen = vec![false; grid.len()];
    for r in rows {
        let i = ((r[0] - grid.x_range.0) / grid.dx() - 0.5).round();
        let j = ((r[1] - grid.y_range.0) / grid.dy() - 0.5).round();
        if i < 0.0 || j < 0.0 || i >= grid.nx as f64 || j >= grid.ny as f64 {
            return Err(IoError::format(path, format!("point ({}, {}) is off the grid", r[0], r[1])));
        }
        let k = i as usize * grid.ny + j as usize;
        if seen[k] {
            return Err(IoError::format(path, format!("duplicate cell ({}, {})", r[0], r[1])));
        }
        seen[k] = true;
        f.values[k] = r[2];
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub steps: usize,
    pub dt: f64,
    pub stable_dt: f64,
    pub upwind_cells: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub tool: String,
    pub version: String,
    pub spec_hash: String,
    pub grid: Grid,
    pub times: Vec<f64>,
    pub files: Vec<String>,
    #[serde(default)]
    pub solve: Option<SolveInfo>,
}

/// Writes `frame_NNNN.csv` per time level and `manifest.json` into `dir`.
pub fn write_trajectory(dir: &Path, traj: &Trajectory, spec_hash: &str, solve: Option<SolveInfo>) -> Result<TrajectoryManifest, IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::fs(dir, e))?;
    let mut files = Vec::new();
    for (k, f) in traj.frames.iter().enumerate() {
        let name = format!("frame_{k:04}.csv");
        write_file(&dir.join(&name), &field_csv(f, spec_hash))?;
        files.push(name);
    }
    let manifest =
        TrajectoryManifest { tool: TOOL.into(), version: VERSION.into(), spec_hash: spec_hash.into(), grid: traj.grid, times: traj.times(), files, solve };
    write_file(&dir.join(MANIFEST), &to_json(&manifest))?;
    Ok(manifest)
}

pub fn read_trajectory(dir: &Path) -> Result<(Trajectory, TrajectoryManifest), IoError> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| IoError::fs(&mpath, e))?;
    let manifest: TrajectoryManifest = serde_json::from_str(&text).map_err(|e| IoError::format(&mpath, e.to_string()))?;
    if manifest.files.len() != manifest.times.len() {
        return Err(IoError::format(&mpath, "times and files differ in length"));
    }
    if manifest.times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(IoError::format(&mpath, "times must increase"));
    }
    manifest.grid.check().map_err(|m| IoError::format(&mpath, m))?;
    let frames = manifest.files.iter().zip(&manifest.times).map(|(name, &t)| read_field(&dir.join(name), manifest.grid, t)).collect::<Result<Vec<_>, _>>()?;
    Ok((Trajectory::new(manifest.grid, frames), manifest))
}

/// Values on a tensor lattice of nodes, read as `x,y,t,value` rows.
/// Interpolation is trilinear and clamps outside the node hull; a single
/// node along an axis makes the table constant in that variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub ts: Vec<f64>,
    /// Index `(i·ny + j)·nt + k`.
    pub values: Vec<f64>,
}

fn bracket(nodes: &[f64], v: f64) -> (usize, usize, f64) {
    let n = nodes.len();
    if n == 1 || v <= nodes[0] {
        return (0, 0, 0.0);
    }
    if v >= nodes[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = nodes.partition_point(|&x| x <= v).min(n - 1);
    let lo = hi - 1;
    (lo, hi, (v - nodes[lo]) / (nodes[hi] - nodes[lo]))
}

fn unique_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl Table {
    /// Samples `f` at every node.
    pub fn sample(xs: Vec<f64>, ys: Vec<f64>, ts: Vec<f64>, f: impl Fn(Point) -> Result<f64, String>) -> Result<Self, String> {
        let mut values = Vec::with_capacity(xs.len() * ys.len() * ts.len());
        for &x in &xs {
            for &y in &ys {
                for &t in &ts {
                    values.push(f(Point::new(x, y, t))?);
                }
            }
        }
        Ok(Self { xs, ys, ts, values })
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.ys.len() + j) * self.ts.len() + k]
    }

    pub fn interpolate(&self, p: Point) -> f64 {
        let (i0, i1, fx) = bracket(&self.xs, p.x);
        let (j0, j1, fy) = bracket(&self.ys, p.y);
        let (k0, k1, ft) = bracket(&self.ts, p.t);
        let lerp = |a: f64, b: f64, s: f64| if s == 0.0 { a } else { a + s * (b - a) };
        let plane = |k: usize| {
            let lo = lerp(self.at(i0, j0, k), self.at(i0, j1, k), fy);
            let hi = lerp(self.at(i1, j0, k), self.at(i1, j1, k), fy);
            lerp(lo, hi, fx)
        };
        lerp(plane(k0), plane(k1), ft)
    }

    pub fn to_csv(&self, spec_hash: &str, name: &str) -> String {
        let mut s = header(spec_hash, &format!("table={name}"));
        s.push_str("x,y,t,value\n");
        for (i, &x) in self.xs.iter().enumerate() {
            for (j, &y) in self.ys.iter().enumerate() {
                for (k, &t) in self.ts.iter().enumerate() {
                    s.push_str(&format!("{},{},{},{}\n", fmt_f64(x), fmt_f64(y), fmt_f64(t), fmt_f64(self.at(i, j, k))));
                }
            }
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let rows = read_rows(path, &["x", "y", "t", "value"])?;
        let xs = unique_sorted(rows.iter().map(|r| r[0]).collect());
        let ys = unique_sorted(rows.iter().map(|r| r[1]).collect());
        let ts = unique_sorted(rows.iter().map(|r| r[2]).collect());
        let n = xs.len() * ys.len() * ts.len();
        if rows.len() != n || n == 0 {
            return Err(IoError::format(path, format!("{} rows do not form a {}x{}x{} lattice", rows.len(), xs.len(), ys.len(), ts.len())));
        }
        let find = |nodes: &[f64], v: f64| nodes.binary_search_by(|x| x.total_cmp(&v)).expect("node present");
        let mut values = vec![f64::NAN; n];
        for r in &rows {
            let k = (find(&xs, r[0]) * ys.len() + find(&ys, r[1])) * ts.len() + find(&ts, r[2]);
            if !values[k].is_nan() {
                return Err(IoError::format(path, format!("duplicate node ({}, {}, {})", r[0], r[1], r[2])));
            }
            values[k] = r[3];
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IoError::format(path, "non-finite or missing values"));
        }
        Ok(Self { xs, ys, ts, values })
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

impl PointFunction for Table {
    fn value(&self, p: Point) -> Result<f64, String> {
        Ok(self.interpolate(p))
    }

    fn time_dependent(&self) -> bool {
        self.ts.len() > 1
    }
}

/// Lattice cell centers as table nodes.
pub fn space_time_to_table(f: &SpaceTimeField) -> Table {
    let l = f.lattice;
    Table {
        xs: (0..l.n[0]).map(|i| l.center(i, 0, 0).x).collect(),
        ys: (0..l.n[1]).map(|j| l.center(0, j, 0).y).collect(),
        ts: (0..l.n[2]).map(|k| l.center(0, 0, k).t).collect(),
        values: f.values.clone(),
    }
}

/// Inverse of [`space_time_to_table`]: nodes must be uniformly spaced with at
/// least two per axis.
pub fn table_to_space_time(t: &Table, path: &Path) -> Result<SpaceTimeField, IoError> {
    let span = |nodes: &[f64], name: &str| -> Result<(f64, f64), IoError> {
        if nodes.len() < 2 {
            return Err(IoError::format(path, format!("need at least two {name} nodes")));
        }
        let h = (nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64;
        if nodes.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
            return Err(IoError::format(path, format!("{name} nodes are not uniformly spaced")));
        }
        Ok((nodes[0] - 0.5 * h, nodes[nodes.len() - 1] + 0.5 * h))
    };
    let (x, y, s) = (span(&t.xs, "x")?, span(&t.ys, "y")?, span(&t.ts, "t")?);
    let lattice = Lattice::new(Point::new(x.0, y.0, s.0), Point::new(x.1, y.1, s.1), [t.xs.len(), t.ys.len(), t.ts.len()]);
    Ok(SpaceTimeField { lattice, values: t.values.clone() })
}
