//! Regret-based stopping criterion with a fixed or adaptive threshold.
//!
//! The adaptive threshold maps the probability of improvement `p_b` through
//! the CDF of a symmetric Beta distribution raised to a power:
//! `delta_b = BetaCDF(p_b; beta, beta)^gamma`. Small `beta` flattens the
//! threshold to a constant, large `beta` turns it into a hard step at
//! `p_b = 0.5`, and `gamma` pins the value taken at `p_b = 0.5`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stopping rule configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StopConfig {
    /// Stop when the estimated regret exceeds a constant threshold.
    Fixed { delta: f64 },
    /// Stop when the estimated regret exceeds `BetaCDF(p_b; beta, beta)^gamma`.
    Adaptive { beta: f64, gamma: f64 },
}

impl StopConfig {
    /// Default fixed threshold: `delta = 0.2`.
    pub fn default_fixed() -> Self {
        StopConfig::Fixed { delta: 0.2 }
    }

    /// Default adaptive threshold: `beta = exp(-1)`, `gamma = log_0.5(0.2)`,
    /// so the threshold equals 0.2 at `p_b = 0.5`.
    pub fn default_adaptive() -> Self {
        StopConfig::Adaptive {
            beta: (-1.0f64).exp(),
            gamma: 0.2f64.ln() / 0.5f64.ln(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StopConfig::Fixed { delta } => {
                if !(0.0..=1.0).contains(&delta) {
                    return Err(Error::Domain(format!("delta must be in [0,1], got {delta}")));
                }
            }
            StopConfig::Adaptive { beta, gamma } => {
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(Error::Domain(format!("beta must be > 0, got {beta}")));
                }
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(Error::Domain(format!("gamma must be > 0, got {gamma}")));
                }
            }
        }
        Ok(())
    }
}

// Lanczos approximation, g = 7, 9 coefficients.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for positive arguments.
fn ln_gamma(z: f64) -> f64 {
    if z < 0.5 {
        // Reflection: Gamma(z) Gamma(1-z) = pi / sin(pi z).
        let pi = std::f64::consts::PI;
        pi.ln() - (pi * z).sin().ln() - ln_gamma(1.0 - z)
    } else {
        let z = z - 1.0;
        let mut acc = LANCZOS[0];
        for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
            acc += c / (z + i as f64);
        }
        let t = z + LANCZOS_G + 0.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta function (modified Lentz).
///
/// Converges for `x < (a + 1) / (a + b + 2)`; callers flip via the symmetry
/// identity outside that range.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 2000;
    const EPS: f64 = 1e-16;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;

    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        // Even step.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;

        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;

        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
fn betainc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    // Exact by symmetry for the shapes used here.
    if a == b && x == 0.5 {
        return 0.5;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        let front = ln_front.exp();
        front * beta_cf(a, b, x) / a
    } else {
        let front = ln_front.exp();
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of the symmetric `Beta(beta, beta)` distribution at `x`.
pub fn beta_cdf(x: f64, beta: f64) -> Result<f64> {
    if !x.is_finite() || !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("beta_cdf: x must be in [0,1], got {x}")));
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::Domain(format!("beta_cdf: shape must be > 0, got {beta}")));
    }
    Ok(betainc(beta, beta, x).clamp(0.0, 1.0))
}

/// Adaptive stopping threshold `delta_b = BetaCDF(p_b; beta, beta)^gamma`.
pub fn adaptive_threshold(p_b: f64, beta: f64, gamma: f64) -> Result<f64> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::Domain(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(beta_cdf(p_b, beta)?.powf(gamma))
}

/// Estimated normalized regret at the current step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretEstimate {
    /// `(U_max_hat - U_p) / (U_max_hat - U_min_hat)`, clamped to [0,1].
    pub value: f64,
    /// True when the denominator carried no information (`U_max_hat <=
    /// U_min_hat`); the value is then 0 and the step should not stop.
    pub degenerate: bool,
}

/// Computes the estimated regret from the running utility extremes.
///
/// `u_max_hat` is the running maximum of the utility (including `u_p`),
/// `u_min_hat` the rough minimum estimate fixed at the first step.
pub fn estimated_regret(u_max_hat: f64, u_p: f64, u_min_hat: f64) -> RegretEstimate {
    let denom = u_max_hat - u_min_hat;
    if !(denom > 0.0) || !denom.is_finite() {
        return RegretEstimate {
            value: 0.0,
            degenerate: true,
        };
    }
    RegretEstimate {
        value: ((u_max_hat - u_p) / denom).clamp(0.0, 1.0),
        degenerate: false,
    }
}

/// Stop decision: strictly greater than the threshold.
pub fn should_stop(r_hat: f64, threshold: f64) -> bool {
    r_hat > threshold
}
