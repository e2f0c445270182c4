//! Parametric utility functions over (budget, performance) and their
//! estimation from pairwise preference data via the Bradley-Terry model.
//!
//! A utility is a weighted sum of penalty terms subtracted from the
//! best-so-far performance: `U(b, y) = y - sum_i w_i * penalty_i(b)`. Power
//! penalties are `alpha * (b/B)^c`; staircase penalties charge a constant per
//! budget interval.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything that scores a (budget, performance) point.
///
/// Budget is measured in epochs spent; performance is the best cumulative
/// value in [0,1]. Implementations may return `f64::NEG_INFINITY` for
/// infeasible points; that sentinel is ordered below all reals and is never
/// exponentiated by the preference model.
pub trait Utility {
    fn eval(&self, budget: u32, perf: f64) -> f64;
}

/// One penalty term of a [`UtilityFn`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum UtilityTerm {
    /// `alpha * (b/B)^c`.
    Power { c: f64, alpha: f64 },
    /// Piecewise-constant penalty: `edges` split `[1, B]` into
    /// `edges.len() + 1` intervals and `alphas[j]` is charged on interval `j`
    /// (interval `j` covers budgets in `[edges[j-1], edges[j])`).
    Staircase { edges: Vec<u32>, alphas: Vec<f64> },
}

impl UtilityTerm {
    /// Penalty value at budget `b` with horizon `cap`.
    pub fn penalty(&self, b: u32, cap: u32) -> f64 {
        match self {
            UtilityTerm::Power { c, alpha } => alpha * (f64::from(b) / f64::from(cap)).powf(*c),
            UtilityTerm::Staircase { edges, alphas } => {
                let j = edges.partition_point(|&e| e <= b);
                alphas[j]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            UtilityTerm::Power { c, alpha } => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(Error::Domain(format!("power exponent must be > 0, got {c}")));
                }
                if !(alpha.is_finite() && *alpha >= 0.0) {
                    return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
                }
            }
            UtilityTerm::Staircase { edges, alphas } => {
                if alphas.len() != edges.len() + 1 {
                    return Err(Error::Shape(format!(
                        "staircase needs one alpha per interval: {} edges require {} alphas, got {}",
                        edges.len(),
                        edges.len() + 1,
                        alphas.len()
                    )));
                }
                if edges.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Domain("staircase edges must be strictly increasing".into()));
                }
                if alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
                    return Err(Error::Domain("staircase alphas must be >= 0".into()));
                }
            }
        }
        Ok(())
    }
}

fn is_false(v: &bool) -> bool {
    !*v
}

/// A parametric utility over (budget, best-so-far performance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityFn {
    /// Total budget horizon `B` used to normalize power penalties.
    #[serde(rename = "B")]
    pub budget_cap: u32,
    pub terms: Vec<UtilityTerm>,
    /// Per-term mixing weights, nonnegative, summing to 1.
    pub weights: Vec<f64>,
    /// When set, `eval` returns negative infinity for budgets beyond `B`.
    #[serde(default, skip_serializing_if = "is_false")]
    pub hard_cap: bool,
}

impl UtilityFn {
    pub fn new(budget_cap: u32, terms: Vec<UtilityTerm>, weights: Vec<f64>) -> Result<Self> {
        let u = UtilityFn {
            budget_cap,
            terms,
            weights,
            hard_cap: false,
        };
        u.validate()?;
        Ok(u)
    }

    /// Single power term `y - alpha * (b/B)^c` with weight 1.
    pub fn power(budget_cap: u32, c: f64, alpha: f64) -> Result<Self> {
        Self::new(budget_cap, vec![UtilityTerm::Power { c, alpha }], vec![1.0])
    }

    /// Linear utility `y - alpha * b/B`.
    pub fn linear(budget_cap: u32, alpha: f64) -> Result<Self> {
        Self::power(budget_cap, 1.0, alpha)
    }

    pub fn with_hard_cap(mut self) -> Self {
        self.hard_cap = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget_cap == 0 {
            return Err(Error::Domain("budget cap must be >= 1".into()));
        }
        if self.terms.is_empty() {
            return Err(Error::Shape("utility needs at least one term".into()));
        }
        if self.terms.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "{} terms but {} weights",
                self.terms.len(),
                self.weights.len()
            )));
        }
        for t in &self.terms {
            t.validate()?;
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("weights must be finite and >= 0".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("weights must sum to 1, got {total}")));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let u: UtilityFn = serde_json::from_str(s)?;
        u.validate()?;
        Ok(u)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json_str(&s)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string(self).expect("utility serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

impl Utility for UtilityFn {
    fn eval(&self, budget: u32, perf: f64) -> f64 {
        if self.hard_cap && budget > self.budget_cap {
            return f64::NEG_INFINITY;
        }
        let penalty: f64 = self
            .terms
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * t.penalty(budget, self.budget_cap))
            .sum();
        perf - penalty
    }
}

/// One side of a preference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefPoint {
    pub budget: u32,
    pub perf: f64,
}

/// A labeled pairwise comparison; `preferred_left` is true when the left
/// point has the higher utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferencePair {
    pub left: PrefPoint,
    pub right: PrefPoint,
    pub preferred_left: bool,
}

fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Bradley-Terry probability that the left point is preferred, computed in
/// log-space as `sigmoid((U_left - U_right) / tau)`.
pub fn bt_probability<U: Utility + ?Sized>(u: &U, pair: &PreferencePair, tau: f64) -> f64 {
    assert!(tau > 0.0, "temperature must be positive");
    let ul = u.eval(pair.left.budget, pair.left.perf);
    let ur = u.eval(pair.right.budget, pair.right.perf);
    match (ul == f64::NEG_INFINITY, ur == f64::NEG_INFINITY) {
        (true, true) => 0.5,
        (true, false) => 0.0,
        (false, true) => 1.0,
        (false, false) => stable_sigmoid((ul - ur) / tau),
    }
}

const PROB_FLOOR: f64 = 1e-12;

/// Mean binary cross-entropy of the Bradley-Terry probabilities against the
/// preference labels. Probabilities are floored at 1e-12 before the log.
pub fn bt_loss<U: Utility + ?Sized>(u: &U, data: &[PreferencePair], tau: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData("bt_loss needs at least one pair".into()));
    }
    let mut total = 0.0;
    for pair in data {
        let p = bt_probability(u, pair, tau);
        let hit = if pair.preferred_left { p } else { 1.0 - p };
        total -= hit.max(PROB_FLOOR).ln();
    }
    Ok(total / data.len() as f64)
}

/// Convergence record of a utility fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub utility: UtilityFn,
    /// Loss after each iteration (length = iters).
    pub loss_trace: Vec<f64>,
}

impl FitResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("fit runs at least one iteration")
    }
}

/// Options for [`fit_utility`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub iters: usize,
    pub step_size: f64,
    pub tau: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            iters: 1000,
            step_size: 0.05,
            tau: 0.05,
        }
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
fn project_simplex(w: &mut [f64]) {
    let mut sorted: Vec<f64> = w.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("weights are finite"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    for v in w.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}

/// Fits the free parameters of `family` (term alphas, and weights when there
/// is more than one term) to preference data by full-batch gradient descent
/// on the Bradley-Terry cross-entropy.
///
/// Alphas start at 1e-4 and are clamped to [0,1] after each step; weights
/// start uniform and are re-projected onto the simplex. Term exponents and
/// staircase edges are fixed inputs.
pub fn fit_utility(data: &[PreferencePair], family: &UtilityFn, opts: &FitOptions) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::EmptyData("fit_utility needs at least one pair".into()));
    }
    family.validate()?;
    if opts.iters == 0 || !(opts.step_size > 0.0) || !(opts.tau > 0.0) {
        return Err(Error::Domain("fit options must have iters >= 1, step > 0, tau > 0".into()));
    }

    let mut u = family.clone();
    for term in &mut u.terms {
        match term {
            UtilityTerm::Power { alpha, .. } => *alpha = 1e-4,
            UtilityTerm::Staircase { alphas, .. } => alphas.iter_mut().for_each(|a| *a = 1e-4),
        }
    }
    let k = u.terms.len();
    u.weights.iter_mut().for_each(|w| *w = 1.0 / k as f64);
    let fit_weights = k > 1;

    let n = data.len() as f64;
    let cap = u.budget_cap;
    let mut loss_trace = Vec::with_capacity(opts.iters);

    for _ in 0..opts.iters {
        let mut grad_alpha: Vec<Vec<f64>> = u
            .terms
            .iter()
            .map(|t| match t {
                UtilityTerm::Power { .. } => vec![0.0],
                UtilityTerm::Staircase { alphas, .. } => vec![0.0; alphas.len()],
            })
            .collect();
        let mut grad_w = vec![0.0; k];
        let mut loss = 0.0;

        for pair in data {
            let ul = u.eval(pair.left.budget, pair.left.perf);
            let ur = u.eval(pair.right.budget, pair.right.perf);
            let p = stable_sigmoid((ul - ur) / opts.tau);
            let y = if pair.preferred_left { 1.0 } else { 0.0 };
            let hit = if pair.preferred_left { p } else { 1.0 - p };
            loss -= hit.max(PROB_FLOOR).ln();
            // d(loss)/d(theta) = (p - y)/tau * (dU_l/dtheta - dU_r/dtheta)
            let dz = (p - y) / opts.tau;
            for (i, term) in u.terms.iter().enumerate() {
                let w = u.weights[i];
                match term {
                    UtilityTerm::Power { c, .. } => {
                        let pl = (f64::from(pair.left.budget) / f64::from(cap)).powf(*c);
                        let pr = (f64::from(pair.right.budget) / f64::from(cap)).powf(*c);
                        grad_alpha[i][0] += dz * (-w) * (pl - pr);
                    }
                    UtilityTerm::Staircase { edges, .. } => {
                        let jl = edges.partition_point(|&e| e <= pair.left.budget);
                        let jr = edges.partition_point(|&e| e <= pair.right.budget);
                        grad_alpha[i][jl] += dz * (-w);
                        grad_alpha[i][jr] -= dz * (-w);
                    }
                }
                if fit_weights {
                    let pen_l = term.penalty(pair.left.budget, cap);
                    let pen_r = term.penalty(pair.right.budget, cap);
                    grad_w[i] += dz * (-(pen_l - pen_r));
                }
            }
        }

        loss /= n;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("fit loss became {loss}; reduce the step size")));
        }
        loss_trace.push(loss);

        for (i, term) in u.terms.iter_mut().enumerate() {
            match term {
                UtilityTerm::Power { alpha, .. } => {
                    *alpha = (*alpha - opts.step_size * grad_alpha[i][0] / n).clamp(0.0, 1.0);
                }
                UtilityTerm::Staircase { alphas, .. } => {
                    for (a, g) in alphas.iter_mut().zip(&grad_alpha[i]) {
                        *a = (*a - opts.step_size * g / n).clamp(0.0, 1.0);
                    }
                }
            }
        }
        if fit_weights {
            for (w, g) in u.weights.iter_mut().zip(&grad_w) {
                *w -= opts.step_size * g / n;
            }
            project_simplex(&mut u.weights);
        }
    }

    Ok(FitResult { utility: u, loss_trace })
}

/// Strategy for drawing simulated preference pairs.
#[derive(Debug, Clone, Copy)]
pub enum PrefSampler<'a> {
    /// Draw both points uniformly over budget x performance and keep only
    /// pairs where neither point has both higher performance and lower
    /// budget (a genuine trade-off exists).
    UniformMeaningful,
    /// Sample above/below an incumbent trajectory at a shared budget,
    /// skipping the first 50 budgets. `incumbents[i]` is the best-so-far
    /// performance at budget `i + 1`.
    AroundTrajectory { incumbents: &'a [f64] },
}

const TRAJECTORY_SKIP: usize = 50;

/// Simulates labeled preference pairs from a ground-truth utility.
pub fn simulate_preferences(
    true_u: &UtilityFn,
    sampler: PrefSampler<'_>,
    n_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PreferencePair>> {
    if n_pairs == 0 {
        return Err(Error::Domain("n_pairs must be >= 1".into()));
    }
    let cap = true_u.budget_cap;
    let mut out = Vec::with_capacity(n_pairs);
    match sampler {
        PrefSampler::UniformMeaningful => {
            while out.len() < n_pairs {
                let bl = rng.random_range(1..=cap);
                let yl: f64 = rng.random();
                let br = rng.random_range(1..=cap);
                let yr: f64 = rng.random();
                let meaningful = (bl < br && yl < yr) || (bl > br && yl > yr);
                if !meaningful {
                    continue;
                }
                out.push(label_pair(true_u, PrefPoint { budget: bl, perf: yl }, PrefPoint { budget: br, perf: yr }));
            }
        }
        PrefSampler::AroundTrajectory { incumbents } => {
            if incumbents.len() <= TRAJECTORY_SKIP {
                return Err(Error::Domain(format!(
                    "trajectory sampler needs more than {TRAJECTORY_SKIP} budgets, got {}",
                    incumbents.len()
                )));
            }
            for _ in 0..n_pairs {
                let idx = rng.random_range(TRAJECTORY_SKIP..incumbents.len());
                let b = (idx + 1) as u32;
                let y_b = incumbents[idx].clamp(0.0, 1.0);
                let up = y_b + (1.0 - y_b) * rng.random::<f64>();
                let down = y_b * rng.random::<f64>();
                out.push(label_pair(true_u, PrefPoint { budget: b, perf: up }, PrefPoint { budget: b, perf: down }));
            }
        }
    }
    Ok(out)
}

fn label_pair(u: &UtilityFn, left: PrefPoint, right: PrefPoint) -> PreferencePair {
    let preferred_left = u.eval(left.budget, left.perf) > u.eval(right.budget, right.perf);
    PreferencePair {
        left,
        right,
        preferred_left,
    }
}

const PREFS_CSV_HEADER: &str = "b,y,b2,y2,label";

/// Serializes preference pairs as `b,y,b2,y2,label` lines with a header.
pub fn prefs_to_csv(pairs: &[PreferencePair]) -> String {
    let mut s = String::from(PREFS_CSV_HEADER);
    s.push('\n');
    for p in pairs {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            p.left.budget,
            p.left.perf,
            p.right.budget,
            p.right.perf,
            u8::from(p.preferred_left)
        );
    }
    s
}

/// Parses a preference CSV; `path_label` is used in error messages.
pub fn prefs_from_csv(s: &str, path_label: &str) -> Result<Vec<PreferencePair>> {
    let mut out = Vec::new();
    for (i, line) in s.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == PREFS_CSV_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                path: path_label.into(),
                line: i + 1,
                msg: format!("expected 5 comma-separated fields, got {}", fields.len()),
            });
        }
        let parse_err = |what: &str| Error::Parse {
            path: path_label.into(),
            line: i + 1,
            msg: format!("invalid {what}"),
        };
        let bl: u32 = fields[0].parse().map_err(|_| parse_err("budget"))?;
        let yl: f64 = fields[1].parse().map_err(|_| parse_err("performance"))?;
        let br: u32 = fields[2].parse().map_err(|_| parse_err("budget"))?;
        let yr: f64 = fields[3].parse().map_err(|_| parse_err("performance"))?;
        let label: u8 = fields[4].parse().map_err(|_| parse_err("label"))?;
        if label > 1 {
            return Err(parse_err("label (must be 0 or 1)"));
        }
        if bl == 0 || br == 0 {
            return Err(parse_err("budget (must be >= 1)"));
        }
        if !(0.0..=1.0).contains(&yl) || !(0.0..=1.0).contains(&yr) {
            return Err(parse_err("performance (must be in [0,1])"));
        }
        out.push(PreferencePair {
            left: PrefPoint { budget: bl, perf: yl },
            right: PrefPoint { budget: br, perf: yr },
            preferred_left: label == 1,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyData(format!("{path_label} contains no preference pairs")));
    }
    Ok(out)
}
