//! Expected improvement of utility with dynamic target-epoch selection.
//!
//! For each candidate configuration the acquisition extrapolates the
//! remaining curve, turns every sampled future into a running best-so-far,
//! and scores the mean clipped utility gain over the most recent utility
//! `U_p` at every increment `dt`; the per-candidate value is the best gain
//! over increments. `U_p` is deliberately the latest utility, not the
//! historical maximum: spent budget cannot be taken back, so earlier utility
//! levels are no longer attainable reference points.

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::surrogate::{variance_reduce, CurveSampler, CurveSamples, History, SurrogateState};
use crate::utility::Utility;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result of scoring one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    /// Best expected clipped utility gain over all increments; nonnegative.
    pub value: f64,
    /// Increment achieving the max (1-based; first maximum on ties).
    pub best_dt: u32,
    /// Expected gain at every increment `1..=horizon`, for diagnostics.
    pub per_dt: Vec<f64>,
}

/// Monte-Carlo configuration for acquisition sampling.
#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    /// Raw curve samples drawn per candidate.
    pub raw_samples: usize,
    /// Group size for variance reduction; the effective sample count is
    /// `raw_samples / group_size`.
    pub group_size: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            raw_samples: 5000,
            group_size: 5,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.raw_samples == 0 || self.group_size == 0 || self.raw_samples < self.group_size {
            return Err(Error::Domain(format!(
                "invalid MC config: raw_samples={}, group_size={}",
                self.raw_samples, self.group_size
            )));
        }
        Ok(())
    }
}

/// Expected improvement of utility over the sampled futures of one
/// configuration.
///
/// For sample `s` and increment `dt`, the future best is
/// `max(incumbent, max_{d <= dt} sample[d])` and the gain is
/// `[U(b + dt, best) - U_p]^+`; the result is the mean over samples,
/// maximized over `dt`.
pub fn expected_improvement<U: Utility + ?Sized>(
    u: &U,
    samples: &CurveSamples,
    history: &History,
) -> Result<AcquisitionResult> {
    let horizon = samples.horizon();
    let count = samples.count();
    if count == 0 {
        return Err(Error::EmptyData("expected_improvement needs samples".into()));
    }
    let b = history.budget_spent();
    let incumbent = history.incumbent();
    let u_p = history.prev_utility();

    let mut sums = vec![0.0f64; horizon];
    for path in samples.paths() {
        let mut best = incumbent;
        for (i, &v) in path.iter().enumerate() {
            if v > best {
                best = v;
            }
            let util = u.eval(b + (i as u32) + 1, best);
            if util > u_p {
                sums[i] += util - u_p;
            }
        }
    }

    let inv = 1.0 / count as f64;
    let per_dt: Vec<f64> = sums.into_iter().map(|s| s * inv).collect();
    let mut value = per_dt[0];
    let mut best_dt = 1u32;
    for (i, &v) in per_dt.iter().enumerate().skip(1) {
        if v > value {
            value = v;
            best_dt = (i + 1) as u32;
        }
    }
    Ok(AcquisitionResult {
        value,
        best_dt,
        per_dt,
    })
}

/// Probability that the configuration improves on `U_p` at its best future
/// increment: `max_dt mean_s 1(U(b + dt, best_s) > U_p)`.
pub fn prob_improvement<U: Utility + ?Sized>(
    u: &U,
    samples: &CurveSamples,
    history: &History,
) -> Result<f64> {
    let horizon = samples.horizon();
    let count = samples.count();
    if count == 0 {
        return Err(Error::EmptyData("prob_improvement needs samples".into()));
    }
    let b = history.budget_spent();
    let incumbent = history.incumbent();
    let u_p = history.prev_utility();

    let mut hits = vec![0usize; horizon];
    for path in samples.paths() {
        let mut best = incumbent;
        for (i, &v) in path.iter().enumerate() {
            if v > best {
                best = v;
            }
            if u.eval(b + (i as u32) + 1, best) > u_p {
                hits[i] += 1;
            }
        }
    }
    let p = hits.into_iter().max().unwrap_or(0) as f64 / count as f64;
    Ok(p)
}

/// Outcome of scoring all live candidates at one step.
#[derive(Debug, Clone)]
pub struct Selection {
    /// Chosen configuration index (ties broken by lowest index).
    pub config: usize,
    pub acquisition: AcquisitionResult,
    /// The variance-reduced samples the winner was scored with; reused for
    /// the probability of improvement so both quantities agree.
    pub samples: CurveSamples,
}

/// Scores every configuration with remaining epochs using fresh
/// variance-reduced samples and returns the argmax.
///
/// Each candidate gets an independent random source derived from `seed` and
/// its index, so the result does not depend on evaluation order.
pub fn select_config<U: Utility + ?Sized>(
    u: &U,
    state: &SurrogateState,
    history: &History,
    mc: &McConfig,
    seed: u64,
) -> Result<Selection> {
    mc.validate()?;
    let mut best: Option<Selection> = None;
    for n in 0..state.n_configs() {
        if history.frontier(n) >= state.epochs() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, n as u64));
        let raw = state.sample_futures(n, history, mc.raw_samples, &mut rng)?;
        let reduced = variance_reduce(&raw, mc.group_size)?;
        let acq = expected_improvement(u, &reduced, history)?;
        let better = match &best {
            None => true,
            Some(cur) => acq.value > cur.acquisition.value,
        };
        if better {
            best = Some(Selection {
                config: n,
                acquisition: acq,
                samples: reduced,
            });
        }
    }
    best.ok_or(Error::Exhausted)
}
