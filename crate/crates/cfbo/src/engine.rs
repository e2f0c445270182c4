//! The freeze-thaw BO main loop.
//!
//! Each step refits the surrogate, scores every live configuration with the
//! expected improvement of utility, checks the stopping rule against the
//! previous step's estimated regret, then reveals one more epoch of the
//! chosen configuration and updates the bookkeeping. The full run is
//! recorded as a JSON-lines trace: a header line, one line per budget unit
//! spent, and a summary line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::{prob_improvement, select_config, McConfig};
use crate::error::{Error, Result};
use crate::lc_data::LCTask;
use crate::stopping::{adaptive_threshold, estimated_regret, should_stop, StopConfig};
use crate::surrogate::{History, SurrogateOptions, SurrogateState};
use crate::utility::{Utility, UtilityFn};
use crate::derive_seed;

/// Version string stamped into trace headers.
pub const TRACE_VERSION: &str = env!("CARGO_PKG_VERSION");

const FIT_STREAM: u64 = 0x5f17;
const SELECT_STREAM: u64 = 0x5e1e;

/// Options for one BO run.
#[derive(Debug, Clone)]
pub struct BOOptions {
    /// Total budget `B` in epochs.
    pub budget: u32,
    pub mc: McConfig,
    pub seed: u64,
    pub surrogate: SurrogateOptions,
}

impl Default for BOOptions {
    fn default() -> Self {
        BOOptions {
            budget: 300,
            mc: McConfig::default(),
            seed: 0,
            surrogate: SurrogateOptions::default(),
        }
    }
}

/// One budget unit of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Budget spent after this step.
    pub b: u32,
    /// Chosen configuration index.
    pub config: usize,
    /// Increment that maximized the acquisition (absent for baselines).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_dt: Option<u32>,
    /// Newly revealed curve value.
    pub observed: f64,
    /// Best observed value so far.
    pub incumbent: f64,
    /// Utility after this step, `U_p = U(b, incumbent)`.
    pub utility: f64,
    /// Probability of improvement of the chosen configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_improve: Option<f64>,
    /// Stopping threshold active at this step (fixed or adaptive).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Estimated regret after this step.
    pub r_hat: f64,
}

/// Why the loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Ran to the full budget.
    Budget,
    /// Stopping criterion fired.
    Stopped,
    /// Every configuration was fully trained.
    Exhausted,
}

/// Best observation of the run: train `config` for `epoch` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncumbentTriple {
    pub config: usize,
    pub epoch: u32,
    pub value: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: String,
    pub task: String,
    pub method: String,
    pub seed: u64,
    pub budget: u32,
    pub raw_samples: usize,
    pub group_size: usize,
    pub utility: UtilityFn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Budget spent at termination (`B` when never stopped early).
    pub stop_step: u32,
    pub reason: StopReason,
    /// Estimated regret that triggered the stop (from the last recorded step).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_r_hat: Option<f64>,
    /// Threshold the regret was compared against when stopping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_threshold: Option<f64>,
    /// Probability of improvement computed at the stopping check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_p: Option<f64>,
    pub incumbent: IncumbentTriple,
}

/// A complete run record.
#[derive(Debug, Clone, PartialEq)]
pub struct BOTrace {
    pub header: TraceHeader,
    pub steps: Vec<TraceStep>,
    pub summary: TraceSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Step(TraceStep),
    Summary(TraceSummary),
}

impl BOTrace {
    pub fn stop_step(&self) -> u32 {
        self.summary.stop_step
    }

    /// Utility at termination.
    pub fn terminal_utility(&self) -> Option<f64> {
        self.steps.last().map(|s| s.utility)
    }

    /// Best-so-far series indexed by budget (`incumbents()[b-1]`).
    pub fn incumbents(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.incumbent).collect()
    }

    /// Serializes as JSON lines: header, steps, summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &TraceLine| {
            out.push_str(&serde_json::to_string(line).expect("trace serialization cannot fail"));
            out.push('\n');
        };
        push(&TraceLine::Header(self.header.clone()));
        for step in &self.steps {
            push(&TraceLine::Step(step.clone()));
        }
        push(&TraceLine::Summary(self.summary.clone()));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: "<trace>".into(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            match parsed {
                TraceLine::Header(h) => header = Some(h),
                TraceLine::Step(s) => steps.push(s),
                TraceLine::Summary(s) => summary = Some(s),
            }
        }
        let header = header.ok_or_else(|| Error::EmptyData("trace has no header line".into()))?;
        let summary = summary.ok_or_else(|| Error::EmptyData("trace has no summary line".into()))?;
        Ok(BOTrace {
            header,
            steps,
            summary,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_jsonl(&text)
    }
}

fn incumbent_triple(history: &History, task: &LCTask) -> IncumbentTriple {
    let mut best: Option<(usize, u32, f64)> = None;
    for &(n, t, y) in history.observations() {
        if best.is_none_or(|(_, _, by)| y > by) {
            best = Some((n, t, y));
        }
    }
    match best {
        Some((n, t, y)) => IncumbentTriple {
            config: n,
            epoch: t,
            value: y,
            x: task.configs()[n].clone(),
        },
        None => IncumbentTriple {
            config: 0,
            epoch: 0,
            value: f64::NEG_INFINITY,
            x: Vec::new(),
        },
    }
}

fn check_run_inputs(u: &UtilityFn, opts: &BOOptions) -> Result<()> {
    if opts.budget == 0 {
        return Err(Error::Domain("budget must be >= 1".into()));
    }
    opts.mc.validate()?;
    u.validate()?;
    if u.budget_cap != opts.budget {
        return Err(Error::Mismatch(format!(
            "utility normalizes over B={} but the run budget is {}",
            u.budget_cap, opts.budget
        )));
    }
    Ok(())
}

/// Runs cost-sensitive freeze-thaw BO and returns the trace.
///
/// Per step: refit the surrogate, pick the configuration with the best
/// expected utility improvement, compute the threshold (adaptive thresholds
/// use the chosen configuration's probability of improvement), stop if the
/// previous step's estimated regret exceeds it, otherwise reveal one epoch
/// and update incumbent, utility, and regret. The stopping check is skipped
/// at `b = 1` where no previous-step quantities exist.
pub fn run(task: &LCTask, u: &UtilityFn, stop_cfg: &StopConfig, opts: &BOOptions) -> Result<BOTrace> {
    check_run_inputs(u, opts)?;
    stop_cfg.validate()?;

    let method = match stop_cfg {
        StopConfig::Adaptive { .. } => "cfbo",
        StopConfig::Fixed { .. } => "cfbo-fixed-threshold",
    };
    let mut history = History::new(task.n_configs());
    let mut steps: Vec<TraceStep> = Vec::new();
    let mut u_max_hat = f64::NEG_INFINITY;
    let mut u_min_hat = f64::NAN;
    let mut r_prev = 0.0;
    let mut reason = StopReason::Budget;
    let mut stop_info: Option<(f64, f64, f64)> = None;

    for b in 1..=opts.budget {
        let step_seed = derive_seed(opts.seed, u64::from(b));
        let surrogate_opts = SurrogateOptions {
            fit_seed: derive_seed(step_seed, FIT_STREAM),
            ..opts.surrogate.clone()
        };
        let state = SurrogateState::fit(&history, task, &surrogate_opts);
        let selection = match select_config(u, &state, &history, &opts.mc, derive_seed(step_seed, SELECT_STREAM)) {
            Ok(s) => s,
            Err(Error::Exhausted) => {
                reason = StopReason::Exhausted;
                break;
            }
            Err(e) => return Err(e),
        };
        let p_b = prob_improvement(u, &selection.samples, &history)?;
        let threshold = match *stop_cfg {
            StopConfig::Fixed { delta } => delta,
            StopConfig::Adaptive { beta, gamma } => adaptive_threshold(p_b, beta, gamma)?,
        };
        if b >= 2 && should_stop(r_prev, threshold) {
            reason = StopReason::Stopped;
            stop_info = Some((r_prev, threshold, p_b));
            break;
        }

        let next_epoch = history.frontier(selection.config) + 1;
        let observed = task.curve_value(selection.config, next_epoch);
        history.record(selection.config, observed)?;
        let incumbent = history.incumbent();
        let utility = u.eval(b, incumbent);
        history.set_prev_utility(utility);
        if utility > u_max_hat {
            u_max_hat = utility;
        }
        if b == 1 {
            u_min_hat = u.eval(opts.budget, incumbent);
        }
        let regret = estimated_regret(u_max_hat, utility, u_min_hat);
        r_prev = regret.value;

        steps.push(TraceStep {
            b,
            config: selection.config,
            best_dt: Some(selection.acquisition.best_dt),
            observed,
            incumbent,
            utility,
            p_improve: Some(p_b),
            threshold: Some(threshold),
            r_hat: regret.value,
        });
    }

    let summary = TraceSummary {
        stop_step: steps.len() as u32,
        reason,
        stop_r_hat: stop_info.map(|(r, _, _)| r),
        stop_threshold: stop_info.map(|(_, t, _)| t),
        stop_p: stop_info.map(|(_, _, p)| p),
        incumbent: incumbent_triple(&history, task),
    };
    Ok(BOTrace {
        header: TraceHeader {
            version: TRACE_VERSION.into(),
            task: task.name().into(),
            method: method.into(),
            seed: opts.seed,
            budget: opts.budget,
            raw_samples: opts.mc.raw_samples,
            group_size: opts.mc.group_size,
            utility: u.clone(),
            stop: Some(*stop_cfg),
        },
        steps,
        summary,
    })
}

/// Random-search baseline: repeatedly draws an untrained configuration
/// uniformly and reveals its curve epoch by epoch until the budget runs out.
/// No stopping criterion; budget accounting matches [`run`].
pub fn run_baseline_random(task: &LCTask, u: &UtilityFn, opts: &BOOptions) -> Result<BOTrace> {
    use rand::{Rng, SeedableRng};
    check_run_inputs(u, opts)?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let t_max = task.epochs() as u32;
    let mut history = History::new(task.n_configs());
    let mut steps: Vec<TraceStep> = Vec::new();
    let mut u_max_hat = f64::NEG_INFINITY;
    let mut u_min_hat = f64::NAN;
    let mut reason = StopReason::Budget;
    let mut current: Option<usize> = None;

    for b in 1..=opts.budget {
        if current.map_or(true, |n| history.frontier(n) >= t_max) {
            let untrained: Vec<usize> = (0..task.n_configs())
                .filter(|&n| history.frontier(n) == 0)
                .collect();
            if untrained.is_empty() {
                reason = StopReason::Exhausted;
                break;
            }
            current = Some(untrained[rng.random_range(0..untrained.len())]);
        }
        let n = current.expect("a configuration was just chosen");
        let next_epoch = history.frontier(n) + 1;
        let observed = task.curve_value(n, next_epoch);
        history.record(n, observed)?;
        let incumbent = history.incumbent();
        let utility = u.eval(b, incumbent);
        history.set_prev_utility(utility);
        if utility > u_max_hat {
            u_max_hat = utility;
        }
        if b == 1 {
            u_min_hat = u.eval(opts.budget, incumbent);
        }
        let regret = estimated_regret(u_max_hat, utility, u_min_hat);

        steps.push(TraceStep {
            b,
            config: n,
            best_dt: None,
            observed,
            incumbent,
            utility,
            p_improve: None,
            threshold: None,
            r_hat: regret.value,
        });
    }

    let summary = TraceSummary {
        stop_step: steps.len() as u32,
        reason,
        stop_r_hat: None,
        stop_threshold: None,
        stop_p: None,
        incumbent: incumbent_triple(&history, task),
    };
    Ok(BOTrace {
        header: TraceHeader {
            version: TRACE_VERSION.into(),
            task: task.name().into(),
            method: "random".into(),
            seed: opts.seed,
            budget: opts.budget,
            raw_samples: opts.mc.raw_samples,
            group_size: opts.mc.group_size,
            utility: u.clone(),
            stop: None,
        },
        steps,
        summary,
    })
}
