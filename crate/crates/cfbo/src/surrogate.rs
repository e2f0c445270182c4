//! Probabilistic learning-curve extrapolation.
//!
//! Given the freeze-thaw history, the surrogate produces Monte-Carlo samples
//! of each configuration's remaining curve. The default implementation fits
//! a bootstrap ensemble of three-parameter power-law curves per observed
//! configuration and falls back to a pooled prior (or a flat prior around the
//! 0-epoch average) for cold starts; the [`CurveSampler`] trait keeps the
//! model pluggable so a learned extrapolator can be dropped in without
//! touching the acquisition or the loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::lc_data::LCTask;

/// The freeze-thaw observation set plus loop bookkeeping.
///
/// Observations per configuration always cover the contiguous epoch prefix
/// `1..=t_n`; this is guaranteed by construction since [`History::record`]
/// only ever appends the next epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    prefixes: Vec<Vec<f64>>,
    order: Vec<(usize, u32, f64)>,
    budget_spent: u32,
    incumbent: f64,
    prev_utility: f64,
}

impl History {
    pub fn new(n_configs: usize) -> Self {
        History {
            prefixes: vec![Vec::new(); n_configs],
            order: Vec::new(),
            budget_spent: 0,
            incumbent: f64::NEG_INFINITY,
            prev_utility: 0.0,
        }
    }

    pub fn n_configs(&self) -> usize {
        self.prefixes.len()
    }

    /// Records the next epoch of configuration `n`; returns the new frontier.
    pub fn record(&mut self, n: usize, value: f64) -> Result<u32> {
        if n >= self.prefixes.len() {
            return Err(Error::Index(format!("config {n} out of range (N={})", self.prefixes.len())));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("observed value {value}")));
        }
        self.prefixes[n].push(value);
        let t = self.prefixes[n].len() as u32;
        self.order.push((n, t, value));
        self.budget_spent += 1;
        if value > self.incumbent {
            self.incumbent = value;
        }
        Ok(t)
    }

    /// Last observed epoch of configuration `n` (0 if unobserved).
    pub fn frontier(&self, n: usize) -> u32 {
        self.prefixes[n].len() as u32
    }

    /// Observed values of configuration `n` for epochs `1..=t_n`.
    pub fn prefix(&self, n: usize) -> &[f64] {
        &self.prefixes[n]
    }

    /// All observations in reveal order as `(config, epoch, value)`.
    pub fn observations(&self) -> &[(usize, u32, f64)] {
        &self.order
    }

    /// Total budget spent, `b = sum_n t_n`.
    pub fn budget_spent(&self) -> u32 {
        self.budget_spent
    }

    /// Best observed value so far (negative infinity before any
    /// observation); never seeded from the 0-epoch average.
    pub fn incumbent(&self) -> f64 {
        self.incumbent
    }

    /// Utility achieved at the most recent step (`U_p`).
    pub fn prev_utility(&self) -> f64 {
        self.prev_utility
    }

    pub fn set_prev_utility(&mut self, u: f64) {
        self.prev_utility = u;
    }
}

/// Options controlling the power-law ensemble surrogate.
#[derive(Debug, Clone)]
pub struct SurrogateOptions {
    /// Bootstrap ensemble members per observed configuration.
    pub ensemble_size: usize,
    /// Neighbors used for cold-start parameter transfer.
    pub knn: usize,
    /// Lower bound on the residual noise scale.
    pub residual_floor: f64,
    /// Std of the flat prior around `y0_bar` used when nothing is observed.
    pub cold_spread: f64,
    /// Seed for the bootstrap resampling inside `fit`.
    pub fit_seed: u64,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        SurrogateOptions {
            ensemble_size: 8,
            knn: 5,
            residual_floor: 0.01,
            cold_spread: 0.25,
            fit_seed: 0,
        }
    }
}

const DECAY_MIN: f64 = 1e-3;
const DECAY_MAX: f64 = 5.0;
/// Pseudo-epoch at which the 0-epoch average anchors low-data fits.
const ANCHOR_T: f64 = 0.5;
/// Observation count below which fits are anchored and the ensemble comes
/// from the pooled prior instead of bootstrap resampling.
const LOW_DATA: usize = 3;

/// Saturating power-law curve `y(t) = asymptote - scale * t^(-decay)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pow3 {
    pub asymptote: f64,
    pub scale: f64,
    pub decay: f64,
}

impl Pow3 {
    pub fn eval(&self, t: f64) -> f64 {
        self.asymptote - self.scale * (-self.decay * t.ln()).exp()
    }

    fn clamped(asymptote: f64, scale: f64, decay: f64) -> Pow3 {
        Pow3 {
            asymptote: asymptote.clamp(0.0, 1.0),
            scale: scale.max(0.0),
            decay: decay.clamp(DECAY_MIN, DECAY_MAX),
        }
    }
}

/// Least-squares `(asymptote, scale)` for a fixed decay; operates on
/// precomputed log-epochs and returns the fit and its sum of squared errors.
fn solve_linear(ln_ts: &[f64], ys: &[f64], decay: f64) -> (Pow3, f64) {
    let m = ln_ts.len() as f64;
    let mut su = 0.0;
    let mut suu = 0.0;
    let mut sy = 0.0;
    let mut suy = 0.0;
    for (&lt, &y) in ln_ts.iter().zip(ys) {
        let u = (-decay * lt).exp();
        su += u;
        suu += u * u;
        sy += y;
        suy += u * y;
    }
    let var_u = suu - su * su / m;
    let scale = if var_u > 1e-12 {
        ((su * sy / m - suy) / var_u).max(0.0)
    } else {
        0.0
    };
    let asymptote = ((sy + scale * su) / m).clamp(0.0, 1.0);
    let model = Pow3 {
        asymptote,
        scale,
        decay,
    };
    let sse: f64 = ln_ts
        .iter()
        .zip(ys)
        .map(|(&lt, &y)| {
            let r = y - (model.asymptote - model.scale * (-model.decay * lt).exp());
            r * r
        })
        .sum();
    (model, sse)
}

/// Grid initialization over the decay exponent followed by a shrinking
/// multiplicative line search, re-solving the linear part at each candidate.
fn fit_pow3(ts: &[f64], ys: &[f64]) -> (Pow3, f64) {
    debug_assert!(ts.len() >= 2);
    let ln_ts: Vec<f64> = ts.iter().map(|&t| t.ln()).collect();
    fit_pow3_ln(&ln_ts, ys)
}

fn fit_pow3_ln(ln_ts: &[f64], ys: &[f64]) -> (Pow3, f64) {
    let mut best: Option<(Pow3, f64)> = None;
    for decay in [0.25, 0.5, 1.0, 2.0] {
        let cand = solve_linear(ln_ts, ys, decay);
        if best.as_ref().is_none_or(|b| cand.1 < b.1) {
            best = Some(cand);
        }
    }
    let (mut model, mut sse) = best.expect("grid is non-empty");
    let mut step = 1.6f64;
    for _ in 0..14 {
        let mut moved = false;
        for decay in [model.decay / step, model.decay * step] {
            let decay = decay.clamp(DECAY_MIN, DECAY_MAX);
            let cand = solve_linear(ln_ts, ys, decay);
            if cand.1 < sse {
                model = cand.0;
                sse = cand.1;
                moved = true;
            }
        }
        if !moved {
            step = step.sqrt();
            if step < 1.001 {
                break;
            }
        }
    }
    (model, sse)
}

#[derive(Debug, Clone)]
struct ConfigModel {
    members: Vec<Pow3>,
    residual_scale: f64,
}

/// Fitted surrogate: per-configuration curve ensembles plus a pooled prior
/// over parameters for cold starts.
#[derive(Debug, Clone)]
pub struct SurrogateState {
    models: Vec<Option<ConfigModel>>,
    pool: Vec<Pow3>,
    pool_std: [f64; 3],
    pool_residual: f64,
    y0_bar: f64,
    epochs: u32,
    configs: Vec<Vec<f64>>,
    opts: SurrogateOptions,
}

impl SurrogateState {
    /// Fits the ensemble surrogate to the current history.
    ///
    /// Every observed configuration gets a primary anchored fit feeding the
    /// pool; configurations with at least [`LOW_DATA`] epochs additionally
    /// get a bootstrap ensemble, others draw their members from the pool.
    pub fn fit(history: &History, task: &LCTask, opts: &SurrogateOptions) -> SurrogateState {
        assert!(opts.ensemble_size >= 1, "ensemble size must be >= 1");
        let n_total = task.n_configs();
        let y0 = task.y0_bar();

        // Primary fits and pool.
        let mut primaries: Vec<Option<(Pow3, f64)>> = vec![None; n_total];
        let mut pool = Vec::new();
        for n in 0..n_total {
            let prefix = history.prefix(n);
            if prefix.is_empty() {
                continue;
            }
            let mut ts: Vec<f64> = (1..=prefix.len()).map(|t| t as f64).collect();
            let mut ys = prefix.to_vec();
            if prefix.len() < LOW_DATA {
                ts.push(ANCHOR_T);
                ys.push(y0);
            }
            let (model, sse) = fit_pow3(&ts, &ys);
            let residual = (sse / ts.len() as f64).sqrt().max(opts.residual_floor);
            primaries[n] = Some((model, residual));
            pool.push(model);
        }

        let pool_std = pool_stats(&pool);
        let pool_residual = {
            let obs: Vec<f64> = primaries.iter().flatten().map(|(_, r)| *r).collect();
            if obs.is_empty() {
                opts.residual_floor
            } else {
                (obs.iter().sum::<f64>() / obs.len() as f64).max(opts.residual_floor)
            }
        };

        // Ensembles.
        let mut models: Vec<Option<ConfigModel>> = vec![None; n_total];
        for n in 0..n_total {
            let Some((primary, residual)) = primaries[n] else {
                continue;
            };
            let prefix = history.prefix(n);
            let mut members = Vec::with_capacity(opts.ensemble_size);
            if prefix.len() >= LOW_DATA {
                let ln_ts: Vec<f64> = (1..=prefix.len()).map(|t| (t as f64).ln()).collect();
                let mut blts = Vec::with_capacity(prefix.len());
                let mut bys = Vec::with_capacity(prefix.len());
                for k in 0..opts.ensemble_size {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        derive_seed(opts.fit_seed, n as u64),
                        k as u64,
                    ));
                    blts.clear();
                    bys.clear();
                    for _ in 0..prefix.len() {
                        let idx = rng.random_range(0..prefix.len());
                        blts.push(ln_ts[idx]);
                        bys.push(prefix[idx]);
                    }
                    members.push(fit_pow3_ln(&blts, &bys).0);
                }
            } else {
                for k in 0..opts.ensemble_size {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        derive_seed(opts.fit_seed, n as u64),
                        k as u64,
                    ));
                    members.push(draw_from_pool(&pool, &pool_std, &mut rng).unwrap_or(primary));
                }
            }
            models[n] = Some(ConfigModel {
                members,
                residual_scale: residual,
            });
        }

        SurrogateState {
            models,
            pool,
            pool_std,
            pool_residual,
            y0_bar: y0,
            epochs: task.epochs() as u32,
            configs: task.configs().to_vec(),
            opts: opts.clone(),
        }
    }

    /// Epochs per curve in the underlying task.
    pub fn epochs(&self) -> u32 {
        self.epochs
    }

    pub fn n_configs(&self) -> usize {
        self.configs.len()
    }

    /// Pooled parameter triples of all observed configurations.
    pub fn pool(&self) -> &[Pow3] {
        &self.pool
    }

    /// Mean parameter triple of the `k` observed configurations nearest to
    /// config `n` in Euclidean distance.
    fn knn_params(&self, n: usize) -> Option<Pow3> {
        if self.pool.is_empty() {
            return None;
        }
        let target = &self.configs[n];
        let mut dists: Vec<(f64, usize)> = Vec::new();
        for (i, model) in self.models.iter().enumerate() {
            if model.is_none() {
                continue;
            }
            let d: f64 = self.configs[i]
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push((d, i));
        }
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("distances are finite").then(a.1.cmp(&b.1)));
        dists.truncate(self.opts.knn.max(1));
        let mut acc = [0.0f64; 3];
        let mut count = 0.0;
        for &(_, i) in &dists {
            // Average the primary member set: members of observed configs all
            // derive from the same data, their mean is a stable summary.
            let m = self.models[i].as_ref().expect("filtered to observed");
            let k = m.members.len() as f64;
            for member in &m.members {
                acc[0] += member.asymptote / k;
                acc[1] += member.scale / k;
                acc[2] += member.decay / k;
            }
            count += 1.0;
        }
        Some(Pow3::clamped(acc[0] / count, acc[1] / count, acc[2] / count))
    }
}

fn pool_stats(pool: &[Pow3]) -> [f64; 3] {
    if pool.is_empty() {
        return [0.0; 3];
    }
    let m = pool.len() as f64;
    let mut mean = [0.0; 3];
    for p in pool {
        mean[0] += p.asymptote / m;
        mean[1] += p.scale / m;
        mean[2] += p.decay / m;
    }
    let mut var = [0.0; 3];
    for p in pool {
        var[0] += (p.asymptote - mean[0]).powi(2) / m;
        var[1] += (p.scale - mean[1]).powi(2) / m;
        var[2] += (p.decay - mean[2]).powi(2) / m;
    }
    [var[0].sqrt(), var[1].sqrt(), var[2].sqrt()]
}

fn draw_from_pool(pool: &[Pow3], std: &[f64; 3], rng: &mut ChaCha8Rng) -> Option<Pow3> {
    if pool.is_empty() {
        return None;
    }
    let base = pool[rng.random_range(0..pool.len())];
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    Some(Pow3::clamped(
        base.asymptote + z0 * std[0],
        base.scale + z1 * std[1],
        base.decay + z2 * std[2],
    ))
}

/// Monte-Carlo samples of one configuration's remaining curve.
///
/// `samples[s][h]` predicts the value at epoch `first_epoch + h`; every path
/// is nondecreasing and confined to [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSamples {
    samples: Vec<Vec<f64>>,
    first_epoch: u32,
}

impl CurveSamples {
    pub fn new(samples: Vec<Vec<f64>>, first_epoch: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyData("curve samples need S >= 1".into()));
        }
        let h = samples[0].len();
        if h == 0 {
            return Err(Error::Shape("curve samples need a horizon >= 1".into()));
        }
        if samples.iter().any(|s| s.len() != h) {
            return Err(Error::Shape("ragged sample matrix".into()));
        }
        if samples.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Range("curve sample outside [0,1]".into()));
        }
        Ok(CurveSamples { samples, first_epoch })
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn horizon(&self) -> usize {
        self.samples[0].len()
    }

    pub fn first_epoch(&self) -> u32 {
        self.first_epoch
    }

    pub fn paths(&self) -> &[Vec<f64>] {
        &self.samples
    }
}

/// Pluggable source of learning-curve futures for the BO loop.
pub trait CurveSampler {
    /// Draws `s` sampled futures of configuration `n` over the remaining
    /// horizon `t_n+1..=T`.
    fn sample_futures(
        &self,
        n: usize,
        history: &History,
        s: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<CurveSamples>;
}

impl CurveSampler for SurrogateState {
    fn sample_futures(
        &self,
        n: usize,
        history: &History,
        s: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<CurveSamples> {
        sample_futures(self, n, history, s, rng)
    }
}

/// Draws `s` futures of configuration `n` from the fitted state.
///
/// Observed configurations draw one ensemble member per sample; unobserved
/// ones draw a neighbor-averaged parameter triple perturbed by the pool
/// spread, or a flat level around `y0_bar` when nothing has been observed at
/// all. Per-epoch Gaussian residual noise is added, then a running max and a
/// clamp to [0,1] are applied.
pub fn sample_futures(
    state: &SurrogateState,
    n: usize,
    history: &History,
    s: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CurveSamples> {
    if n >= state.n_configs() {
        return Err(Error::Index(format!("config {n} out of range (N={})", state.n_configs())));
    }
    if s == 0 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    let t_n = history.frontier(n);
    if t_n >= state.epochs {
        return Err(Error::Domain(format!(
            "config {n} fully observed (t_n = {t_n} = T); nothing to extrapolate"
        )));
    }
    let horizon = (state.epochs - t_n) as usize;
    let ln_ts: Vec<f64> = (1..=horizon).map(|h| f64::from(t_n + h as u32).ln()).collect();

    let mut samples = Vec::with_capacity(s);
    match &state.models[n] {
        Some(model) => {
            // Member curves over the horizon, computed once.
            let member_curves: Vec<Vec<f64>> = model
                .members
                .iter()
                .map(|m| ln_ts.iter().map(|&lt| m.asymptote - m.scale * (-m.decay * lt).exp()).collect())
                .collect();
            for _ in 0..s {
                let curve = &member_curves[rng.random_range(0..member_curves.len())];
                samples.push(noisy_monotone_path(curve, model.residual_scale, rng));
            }
        }
        None => match state.knn_params(n) {
            Some(knn_mean) => {
                let noise = state.pool_residual;
                for _ in 0..s {
                    let z0: f64 = rng.sample(StandardNormal);
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    let p = Pow3::clamped(
                        knn_mean.asymptote + z0 * state.pool_std[0],
                        knn_mean.scale + z1 * state.pool_std[1],
                        knn_mean.decay + z2 * state.pool_std[2],
                    );
                    let mut path = Vec::with_capacity(horizon);
                    let mut best = f64::NEG_INFINITY;
                    for &lt in &ln_ts {
                        let v = p.asymptote - p.scale * (-p.decay * lt).exp();
                        let z: f64 = rng.sample(StandardNormal);
                        let y = v + noise * z;
                        if y > best {
                            best = y;
                        }
                        path.push(best.clamp(0.0, 1.0));
                    }
                    samples.push(path);
                }
            }
            None => {
                // Flat prior centered at the 0-epoch average.
                let noise = state.opts.residual_floor;
                for _ in 0..s {
                    let z: f64 = rng.sample(StandardNormal);
                    let level = state.y0_bar + state.opts.cold_spread * z;
                    let mut path = Vec::with_capacity(horizon);
                    let mut best = f64::NEG_INFINITY;
                    for _ in 0..horizon {
                        let z: f64 = rng.sample(StandardNormal);
                        let y = level + noise * z;
                        if y > best {
                            best = y;
                        }
                        path.push(best.clamp(0.0, 1.0));
                    }
                    samples.push(path);
                }
            }
        },
    }
    CurveSamples::new(samples, t_n + 1)
}

fn noisy_monotone_path(curve: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    curve
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            let y = v + noise * z;
            if y > best {
                best = y;
            }
            best.clamp(0.0, 1.0)
        })
        .collect()
}

/// Groups samples and replaces each group by its elementwise mean (the
/// remainder of samples not filling a full group is dropped).
pub fn variance_reduce(samples: &CurveSamples, group_size: usize) -> Result<CurveSamples> {
    if group_size < 1 {
        return Err(Error::Domain("group size must be >= 1".into()));
    }
    if group_size == 1 {
        return Ok(samples.clone());
    }
    let groups = samples.count() / group_size;
    if groups == 0 {
        return Err(Error::Domain(format!(
            "group size {group_size} exceeds sample count {}",
            samples.count()
        )));
    }
    let h = samples.horizon();
    let mut out = Vec::with_capacity(groups);
    for g in 0..groups {
        let mut mean = vec![0.0f64; h];
        for s in 0..group_size {
            for (acc, v) in mean.iter_mut().zip(&samples.paths()[g * group_size + s]) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= group_size as f64;
        }
        out.push(mean);
    }
    CurveSamples::new(out, samples.first_epoch())
}
