//! Tabular learning-curve benchmarks: on-disk formats, normalization, and
//! LC-mixup augmentation.
//!
//! A task is a pool of `N` hyperparameter configurations (coordinates
//! normalized to [0,1]) with one learning curve of `T` epochs per
//! configuration, values in [0,1] with higher better, plus the average
//! performance before any training (`y0_bar`).

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance band for values that must land in [0,1]: anything inside
/// `[-1e-9, 1+1e-9]` is clamped, anything outside is rejected.
pub const RANGE_TOL: f64 = 1e-9;

fn clamp_unit(v: f64, what: &str) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{what} = {v}")));
    }
    if v < -RANGE_TOL || v > 1.0 + RANGE_TOL {
        return Err(Error::Range(format!("{what} = {v} outside [0,1]")));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// A validated learning-curve benchmark task.
#[derive(Debug, Clone, PartialEq)]
pub struct LCTask {
    name: String,
    configs: Vec<Vec<f64>>,
    curves: Vec<Vec<f64>>,
    y0_bar: f64,
}

impl LCTask {
    /// Validates shapes and ranges; curve and config values within the
    /// tolerance band are clamped to [0,1]. When `y0_bar` is absent it
    /// defaults to the mean first-epoch value.
    pub fn new(
        name: impl Into<String>,
        configs: Vec<Vec<f64>>,
        curves: Vec<Vec<f64>>,
        y0_bar: Option<f64>,
    ) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Domain(format!("task name must be non-empty without whitespace, got {name:?}")));
        }
        let n = curves.len();
        if n == 0 {
            return Err(Error::Shape("task needs at least one configuration".into()));
        }
        if configs.len() != n {
            return Err(Error::Shape(format!("{} configs but {} curves", configs.len(), n)));
        }
        let dim = configs[0].len();
        if dim == 0 {
            return Err(Error::Shape("configuration dimension must be >= 1".into()));
        }
        if configs.iter().any(|c| c.len() != dim) {
            return Err(Error::Shape("ragged configuration rows".into()));
        }
        let epochs = curves[0].len();
        if epochs < 2 {
            return Err(Error::Shape(format!("curves need at least 2 epochs, got {epochs}")));
        }
        if curves.iter().any(|c| c.len() != epochs) {
            return Err(Error::Shape("ragged curve rows".into()));
        }

        let mut configs = configs;
        for (i, row) in configs.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = clamp_unit(*v, &format!("config[{i}][{j}]"))?;
            }
        }
        let mut curves = curves;
        for (i, row) in curves.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = clamp_unit(*v, &format!("curve[{i}][{j}]"))?;
            }
        }
        let y0_bar = match y0_bar {
            Some(v) => clamp_unit(v, "y0_bar")?,
            None => curves.iter().map(|c| c[0]).sum::<f64>() / n as f64,
        };
        Ok(LCTask {
            name,
            configs,
            curves,
            y0_bar,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_configs(&self) -> usize {
        self.curves.len()
    }

    /// Number of training epochs `T`.
    pub fn epochs(&self) -> usize {
        self.curves[0].len()
    }

    pub fn dim(&self) -> usize {
        self.configs[0].len()
    }

    pub fn y0_bar(&self) -> f64 {
        self.y0_bar
    }

    pub fn configs(&self) -> &[Vec<f64>] {
        &self.configs
    }

    pub fn curves(&self) -> &[Vec<f64>] {
        &self.curves
    }

    /// Curve value `y_{n,t}` for a 1-based epoch `t`.
    pub fn curve_value(&self, n: usize, t: u32) -> f64 {
        self.curves[n][(t - 1) as usize]
    }
}

/// On-disk benchmark representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskFormat {
    Csv,
    Json,
}

impl TaskFormat {
    /// Picks the format from the file extension (`.csv` or `.json`).
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(TaskFormat::Csv),
            Some("json") => Ok(TaskFormat::Json),
            other => Err(Error::Domain(format!(
                "cannot infer task format from extension {other:?} of {}",
                path.display()
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TaskJson {
    name: String,
    configs: Vec<Vec<f64>>,
    curves: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y0_bar: Option<f64>,
}

/// Loads a benchmark task from disk.
pub fn load_task(path: &Path, format: TaskFormat) -> Result<LCTask> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let label = path.display().to_string();
    match format {
        TaskFormat::Csv => task_from_csv_str(&text, &label),
        TaskFormat::Json => task_from_json_str(&text),
    }
}

/// Writes a benchmark task in canonical form (shortest round-trip floats).
pub fn save_task(task: &LCTask, path: &Path, format: TaskFormat) -> Result<()> {
    let text = match format {
        TaskFormat::Csv => task_to_csv_string(task),
        TaskFormat::Json => task_to_json_string(task),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn task_to_json_string(task: &LCTask) -> String {
    let repr = TaskJson {
        name: task.name.clone(),
        configs: task.configs.clone(),
        curves: task.curves.clone(),
        y0_bar: Some(task.y0_bar),
    };
    let mut s = serde_json::to_string(&repr).expect("task serialization cannot fail");
    s.push('\n');
    s
}

pub fn task_from_json_str(s: &str) -> Result<LCTask> {
    let repr: TaskJson = serde_json::from_str(s)?;
    LCTask::new(repr.name, repr.configs, repr.curves, repr.y0_bar)
}

pub fn task_to_csv_string(task: &LCTask) -> String {
    let mut s = format!(
        "# lctask v1 name={} N={} T={} dx={} y0={}\n",
        task.name,
        task.n_configs(),
        task.epochs(),
        task.dim(),
        task.y0_bar
    );
    for row in &task.configs {
        push_csv_row(&mut s, row);
    }
    for row in &task.curves {
        push_csv_row(&mut s, row);
    }
    s
}

fn push_csv_row(s: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s.push('\n');
}

pub fn task_from_csv_str(text: &str, path_label: &str) -> Result<LCTask> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path_label.into(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| perr(1, "empty file".into()))?;
    let rest = header
        .strip_prefix("# lctask v1 ")
        .ok_or_else(|| perr(1, "missing `# lctask v1` header".into()))?;

    let mut name = None;
    let mut n = None;
    let mut t = None;
    let mut dx = None;
    let mut y0 = None;
    for kv in rest.split_whitespace() {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| perr(1, format!("malformed header field {kv:?}")))?;
        match key {
            "name" => name = Some(value.to_string()),
            "N" => n = Some(value.parse::<usize>().map_err(|_| perr(1, format!("bad N: {value}")))?),
            "T" => t = Some(value.parse::<usize>().map_err(|_| perr(1, format!("bad T: {value}")))?),
            "dx" => dx = Some(value.parse::<usize>().map_err(|_| perr(1, format!("bad dx: {value}")))?),
            "y0" => y0 = Some(value.parse::<f64>().map_err(|_| perr(1, format!("bad y0: {value}")))?),
            other => return Err(perr(1, format!("unknown header field {other:?}"))),
        }
    }
    let name = name.ok_or_else(|| perr(1, "header missing name".into()))?;
    let n = n.ok_or_else(|| perr(1, "header missing N".into()))?;
    let t = t.ok_or_else(|| perr(1, "header missing T".into()))?;
    let dx = dx.ok_or_else(|| perr(1, "header missing dx".into()))?;

    let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(2 * n);
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| perr(idx + 1, format!("bad float {field:?}")))?;
            row.push(v);
        }
        rows.push((idx + 1, row));
    }
    if rows.len() != 2 * n {
        return Err(Error::Shape(format!(
            "{path_label}: expected {} data rows ({n} configs + {n} curves), got {}",
            2 * n,
            rows.len()
        )));
    }
    let mut configs = Vec::with_capacity(n);
    for (line, row) in &rows[..n] {
        if row.len() != dx {
            return Err(Error::Shape(format!(
                "{path_label} line {line}: config row has {} values, expected {dx}",
                row.len()
            )));
        }
        configs.push(row.clone());
    }
    let mut curves = Vec::with_capacity(n);
    for (line, row) in &rows[n..] {
        if row.len() != t {
            return Err(Error::Shape(format!(
                "{path_label} line {line}: curve row has {} values, expected {t}",
                row.len()
            )));
        }
        curves.push(row.clone());
    }
    LCTask::new(name, configs, curves, y0)
}

/// Which way the raw metric improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

/// Affine min-max normalization onto [0,1] with higher-is-better output.
pub fn normalize_curves(
    raw: &[Vec<f64>],
    direction: Direction,
    lo: f64,
    hi: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(hi > lo) {
        return Err(Error::Range(format!("degenerate range: hi={hi} <= lo={lo}")));
    }
    let span = hi - lo;
    raw.iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("raw value {v}")));
                    }
                    let mapped = match direction {
                        Direction::Maximize => (v - lo) / span,
                        Direction::Minimize => (hi - v) / span,
                    };
                    Ok(mapped.clamp(0.0, 1.0))
                })
                .collect()
        })
        .collect()
}

/// A shape-aligned set of tasks sharing configuration matrices, as required
/// for dataset-level mixup.
#[derive(Debug, Clone)]
pub struct LCDatasetCollection {
    tasks: Vec<LCTask>,
}

impl LCDatasetCollection {
    pub fn new(tasks: Vec<LCTask>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Shape("collection needs at least one task".into()));
        }
        let first = &tasks[0];
        for t in &tasks[1..] {
            if t.n_configs() != first.n_configs()
                || t.epochs() != first.epochs()
                || t.dim() != first.dim()
            {
                return Err(Error::Shape(format!(
                    "task {} has shape (N={}, T={}, dx={}) but {} has (N={}, T={}, dx={})",
                    t.name(),
                    t.n_configs(),
                    t.epochs(),
                    t.dim(),
                    first.name(),
                    first.n_configs(),
                    first.epochs(),
                    first.dim()
                )));
            }
            if t.configs() != first.configs() {
                return Err(Error::Shape(format!(
                    "task {} has a different configuration matrix than {}",
                    t.name(),
                    first.name()
                )));
            }
        }
        Ok(LCDatasetCollection { tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[LCTask] {
        &self.tasks
    }
}

fn check_lambda(l: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&l) || !l.is_finite() {
        return Err(Error::Domain(format!("lambda must be in [0,1], got {l}")));
    }
    Ok(())
}

/// Dataset-level mixup: `L' = lambda1 * L(m) + (1 - lambda1) * L(m')`.
pub fn mixup_datasets(
    collection: &LCDatasetCollection,
    m: usize,
    m_prime: usize,
    lambda1: f64,
) -> Result<Vec<Vec<f64>>> {
    check_lambda(lambda1)?;
    let tasks = collection.tasks();
    if m >= tasks.len() || m_prime >= tasks.len() {
        return Err(Error::Index(format!(
            "dataset indices ({m}, {m_prime}) out of range for M={}",
            tasks.len()
        )));
    }
    let a = tasks[m].curves();
    let b = tasks[m_prime].curves();
    Ok(a.iter()
        .zip(b)
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .map(|(&va, &vb)| lambda1 * va + (1.0 - lambda1) * vb)
                .collect()
        })
        .collect())
}

/// Interpolates the 0-epoch averages with the same coefficient as
/// [`mixup_datasets`].
pub fn mixup_y0(
    collection: &LCDatasetCollection,
    m: usize,
    m_prime: usize,
    lambda1: f64,
) -> Result<f64> {
    check_lambda(lambda1)?;
    let tasks = collection.tasks();
    if m >= tasks.len() || m_prime >= tasks.len() {
        return Err(Error::Index(format!(
            "dataset indices ({m}, {m_prime}) out of range for M={}",
            tasks.len()
        )));
    }
    Ok(lambda1 * tasks[m].y0_bar() + (1.0 - lambda1) * tasks[m_prime].y0_bar())
}

/// Configuration-level mixup over rows of an already-mixed curve matrix:
/// returns the interpolated configuration and its curve.
pub fn mixup_configs(
    l_prime: &[Vec<f64>],
    configs: &[Vec<f64>],
    n: usize,
    n_prime: usize,
    lambda2: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lambda(lambda2)?;
    if n >= l_prime.len() || n_prime >= l_prime.len() || n >= configs.len() || n_prime >= configs.len() {
        return Err(Error::Index(format!(
            "configuration indices ({n}, {n_prime}) out of range for N={}",
            l_prime.len().min(configs.len())
        )));
    }
    let x = configs[n]
        .iter()
        .zip(&configs[n_prime])
        .map(|(&a, &b)| lambda2 * a + (1.0 - lambda2) * b)
        .collect();
    let l = l_prime[n]
        .iter()
        .zip(&l_prime[n_prime])
        .map(|(&a, &b)| lambda2 * a + (1.0 - lambda2) * b)
        .collect();
    Ok((x, l))
}

/// Draws one augmented (configuration, curve) example: dataset mixup (when
/// M >= 2) followed by configuration mixup, with all lambdas uniform on
/// [0,1]. With a single task the dataset stage is skipped.
pub fn sample_augmented(
    collection: &LCDatasetCollection,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m_count = collection.len();
    let l_prime = if m_count >= 2 {
        let m = rng.random_range(0..m_count);
        let m_prime = rng.random_range(0..m_count);
        let lambda1: f64 = rng.random();
        mixup_datasets(collection, m, m_prime, lambda1)?
    } else {
        collection.tasks()[0].curves().to_vec()
    };
    let n_count = collection.tasks()[0].n_configs();
    let n = rng.random_range(0..n_count);
    let n_prime = rng.random_range(0..n_count);
    let lambda2: f64 = rng.random();
    mixup_configs(&l_prime, collection.tasks()[0].configs(), n, n_prime, lambda2)
}
