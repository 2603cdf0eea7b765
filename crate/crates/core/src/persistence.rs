//! Text file formats: network weights, trajectories, contour grids,
//! datasets, the metrics stream and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ddn::{Activation, LayerParams, NetworkParams};
use crate::error::{Error, Result};
use crate::learning::{Dataset, SafeSample, SampleSource, UnsafeSample};
use crate::sim::{ContourGrid, ControllerTag, Trajectory, TrajectoryRow};
use crate::task::ExperimentConfig;

pub const WEIGHTS_MAGIC: &str = "cbf-ddn-weights";
pub const WEIGHTS_VERSION: &str = "v1";

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Seventeen significant digits, enough to round-trip any `f64`.
fn fmt_exact(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn weights_to_string(net: &NetworkParams) -> String {
    let mut s = String::new();
    let sizes = net.sizes();
    writeln!(s, "{WEIGHTS_MAGIC} {WEIGHTS_VERSION}").unwrap();
    writeln!(
        s,
        "sizes {}",
        sizes.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
    )
    .unwrap();
    writeln!(
        s,
        "activations {}",
        net.layers
            .iter()
            .map(|l| l.activation.name())
            .collect::<Vec<_>>()
            .join(" ")
    )
    .unwrap();
    for (i, layer) in net.layers.iter().enumerate() {
        writeln!(s, "layer {i} weight {} {}", layer.n_out(), layer.n_in()).unwrap();
        for r in 0..layer.n_out() {
            let row: Vec<String> = layer.weight.row(r).iter().map(|v| fmt_exact(*v)).collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
        writeln!(s, "layer {i} bias {}", layer.n_out()).unwrap();
        let row: Vec<String> = layer.bias.iter().map(|v| fmt_exact(*v)).collect();
        writeln!(s, "{}", row.join(" ")).unwrap();
    }
    writeln!(s, "end").unwrap();
    s
}

pub fn save_weights(net: &NetworkParams, path: &Path) -> Result<()> {
    write_file(path, &weights_to_string(net))
}

pub fn load_weights(path: &Path) -> Result<NetworkParams> {
    parse_weights(&read_file(path)?, path)
}

struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, path: &'a Path) -> Self {
        Self {
            path,
            iter: text.lines().enumerate(),
            line: 0,
        }
    }

    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn next(&mut self, field: &str) -> Result<Vec<&'a str>> {
        match self.iter.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.split_whitespace().collect())
            }
            None => {
                self.line += 1;
                Err(self.err(field, "unexpected end of file"))
            }
        }
    }

    fn keyword(&mut self, field: &str, expect: &[&str]) -> Result<Vec<&'a str>> {
        let toks = self.next(field)?;
        if toks.len() < expect.len() || toks[..expect.len()] != *expect {
            return Err(self.err(field, format!("expected `{}`", expect.join(" "))));
        }
        Ok(toks[expect.len()..].to_vec())
    }

    fn usize_at(&self, field: &str, tok: Option<&&str>) -> Result<usize> {
        tok.ok_or_else(|| self.err(field, "missing integer"))?
            .parse()
            .map_err(|e| self.err(field, format!("{e}")))
    }

    fn floats(&mut self, field: &str, count: usize) -> Result<Vec<f64>> {
        let toks = self.next(field)?;
        if toks.len() != count {
            return Err(self.err(field, format!("expected {count} values, found {}", toks.len())));
        }
        toks.iter()
            .enumerate()
            .map(|(k, t)| t.parse::<f64>().map_err(|e| self.err(field, format!("value {k}: {e}"))))
            .collect()
    }
}

pub fn parse_weights(text: &str, path: &Path) -> Result<NetworkParams> {
    let mut lines = Lines::new(text, path);
    let head = lines.next("header")?;
    if head.first() != Some(&WEIGHTS_MAGIC) {
        return Err(lines.err("header", format!("expected `{WEIGHTS_MAGIC} {WEIGHTS_VERSION}`")));
    }
    let found = head.get(1).copied().unwrap_or("<none>");
    if found != WEIGHTS_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: found.to_string(),
            expected: WEIGHTS_VERSION.to_string(),
        });
    }
    let sizes = lines
        .keyword("sizes", &["sizes"])?
        .iter()
        .map(|t| t.parse::<usize>().map_err(|e| lines.err("sizes", format!("{e}"))))
        .collect::<Result<Vec<_>>>()?;
    if sizes.len() < 2 {
        return Err(lines.err("sizes", "need at least two sizes"));
    }
    let acts = lines.keyword("activations", &["activations"])?;
    if acts.len() != sizes.len() - 1 {
        return Err(lines.err("activations", format!("expected {} names", sizes.len() - 1)));
    }
    let acts = acts
        .iter()
        .map(|a| Activation::from_name(a).ok_or_else(|| lines.err("activations", format!("unknown activation {a:?}"))))
        .collect::<Result<Vec<_>>>()?;

    let mut layers = Vec::with_capacity(acts.len());
    for (i, act) in acts.into_iter().enumerate() {
        let (n_in, n_out) = (sizes[i], sizes[i + 1]);
        let idx = i.to_string();
        let field = format!("layer {i} weight");
        let dims = lines.keyword(&field, &["layer", &idx, "weight"])?;
        let (r, c) = (
            lines.usize_at(&field, dims.first())?,
            lines.usize_at(&field, dims.get(1))?,
        );
        if (r, c) != (n_out, n_in) {
            return Err(lines.err(&field, format!("shape {r}x{c} does not match sizes ({n_out}x{n_in})")));
        }
        let mut weight = DMatrix::zeros(n_out, n_in);
        for row in 0..n_out {
            let vals = lines.floats(&format!("layer {i} weight row {row}"), n_in)?;
            for (col, v) in vals.into_iter().enumerate() {
                weight[(row, col)] = v;
            }
        }
        let field = format!("layer {i} bias");
        let dims = lines.keyword(&field, &["layer", &idx, "bias"])?;
        if lines.usize_at(&field, dims.first())? != n_out {
            return Err(lines.err(&field, format!("length does not match size {n_out}")));
        }
        let bias = DVector::from_vec(lines.floats(&field, n_out)?);
        layers.push(LayerParams {
            weight,
            bias,
            activation: act,
        });
    }
    lines.keyword("end", &["end"])?;
    NetworkParams::new(layers)
}

pub fn trajectory_header(state_names: &[String]) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend(state_names.iter().cloned());
    cols.extend(["u_ref", "u_safe", "h", "controller"].map(String::from));
    cols.join(",")
}

pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let mut s = trajectory_header(&traj.state_names);
    s.push('\n');
    for r in &traj.rows {
        write!(s, "{}", r.t).unwrap();
        for v in &r.x {
            write!(s, ",{v}").unwrap();
        }
        writeln!(s, ",{},{},{},{}", r.u_ref, r.u_safe, r.h, r.controller.as_str()).unwrap();
    }
    s
}

pub fn export_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    write_file(path, &trajectory_to_csv(traj))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let text = read_file(path)?;
    let mut lines = Lines::new(&text, path);
    let header = lines.next("header")?.concat();
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 6 || cols[0] != "t" || cols[cols.len() - 4..] != ["u_ref", "u_safe", "h", "controller"] {
        return Err(lines.err("header", "not a trajectory file"));
    }
    let names: Vec<String> = cols[1..cols.len() - 4].iter().map(|s| s.to_string()).collect();
    let n = names.len();
    let mut rows = Vec::new();
    while let Some((i, l)) = lines.iter.next() {
        lines.line = i + 1;
        if l.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != n + 5 {
            return Err(lines.err("row", format!("expected {} fields, found {}", n + 5, f.len())));
        }
        let num =
            |k: usize, lines: &Lines| -> Result<f64> { f[k].parse().map_err(|e| lines.err(cols[k], format!("{e}"))) };
        rows.push(TrajectoryRow {
            t: num(0, &lines)?,
            x: (1..=n).map(|k| num(k, &lines)).collect::<Result<_>>()?,
            u_ref: num(n + 1, &lines)?,
            u_safe: num(n + 2, &lines)?,
            h: num(n + 3, &lines)?,
            controller: ControllerTag::parse(f[n + 4])
                .ok_or_else(|| lines.err("controller", format!("unknown tag {:?}", f[n + 4])))?,
        });
    }
    let dt = if rows.len() > 1 { rows[1].t - rows[0].t } else { 0.0 };
    Ok(Trajectory {
        state_names: names,
        dt,
        rows,
    })
}

pub fn contour_to_csv(grid: &ContourGrid) -> String {
    let mut s = format!("{},{},h\n", grid.x_name, grid.y_name);
    for (j, y) in grid.ys.iter().enumerate() {
        for (i, x) in grid.xs.iter().enumerate() {
            writeln!(s, "{x},{y},{}", grid.values[(j, i)]).unwrap();
        }
    }
    s
}

pub fn export_contour(grid: &ContourGrid, path: &Path) -> Result<()> {
    write_file(path, &contour_to_csv(grid))
}

/// `kind,source,<state names>,u` with an empty `u` for unsafe samples.
pub fn dataset_to_csv(data: &Dataset, state_names: &[&str]) -> String {
    let mut s = format!("kind,source,{},u\n", state_names.join(","));
    let join = |x: &DVector<f64>| x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    for d in data.safe() {
        writeln!(s, "safe,{},{},{}", d.source.as_str(), join(&d.x), join(&d.u)).unwrap();
    }
    for d in data.unsafe_samples() {
        writeln!(s, "unsafe,{},{},", d.source.as_str(), join(&d.x)).unwrap();
    }
    s
}

pub fn save_dataset(data: &Dataset, state_names: &[&str], path: &Path) -> Result<()> {
    write_file(path, &dataset_to_csv(data, state_names))
}

pub fn load_dataset(path: &Path, capacity: usize) -> Result<Dataset> {
    let text = read_file(path)?;
    let mut lines = Lines::new(&text, path);
    let header = lines.next("header")?.concat();
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[..2] != ["kind", "source"] || cols.last() != Some(&"u") {
        return Err(lines.err("header", "not a dataset file"));
    }
    let n = cols.len() - 3;
    let mut data = Dataset::new(capacity);
    while let Some((i, l)) = lines.iter.next() {
        lines.line = i + 1;
        if l.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != n + 3 {
            return Err(lines.err("row", format!("expected {} fields, found {}", n + 3, f.len())));
        }
        let source =
            SampleSource::parse(f[1]).ok_or_else(|| lines.err("source", format!("unknown source {:?}", f[1])))?;
        let x = f[2..2 + n]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| lines.err("state", format!("{e}"))))
            .collect::<Result<Vec<_>>>()?;
        let x = DVector::from_vec(x);
        match f[0] {
            "safe" => {
                let u: f64 = f[n + 2].parse().map_err(|e| lines.err("u", format!("{e}")))?;
                data.push_safe(SafeSample {
                    x,
                    u: DVector::from_element(1, u),
                    source,
                });
            }
            "unsafe" => data.push_unsafe(UnsafeSample { x, source }),
            other => return Err(lines.err("kind", format!("unknown kind {other:?}"))),
        }
    }
    Ok(data)
}

/// Appends one JSON object per line.
pub struct MetricsWriter {
    path: PathBuf,
    file: fs::File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Numeric(e.to_string()))?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = read_file(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                field: "record".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub artifacts: Vec<ArtifactEntry>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        let now = unix_now();
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed,
            config: config.clone(),
            artifacts: Vec::new(),
            started_unix_s: now,
            finished_unix_s: now,
            wall_time_s: 0.0,
        }
    }

    /// Records `dir/rel` with its current checksum.
    pub fn add_artifact(&mut self, dir: &Path, rel: &str) -> Result<()> {
        let path = dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(ArtifactEntry {
            path: rel.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn finish(&mut self) {
        self.finished_unix_s = unix_now();
        self.wall_time_s = (self.finished_unix_s - self.started_unix_s).max(0.0);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Numeric(e.to_string()))?;
        s.push('\n');
        write_file(path, &s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            field: "manifest".into(),
            message: e.to_string(),
        })
    }

    /// Paths whose contents no longer match the recorded checksum.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|a| sha256_file(&dir.join(&a.path)).map_or(true, |h| h != a.sha256))
            .map(|a| a.path.clone())
            .collect()
    }
}

fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}
