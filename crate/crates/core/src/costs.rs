//! Strongly convex scalar cost functions with analytic gradients.
//!
//! The families form a closed enumeration: a generic quadratic plus the
//! three non-quadratic shapes used in the built-in scenarios. Each carries
//! its strong-convexity constant `l_lower` and gradient Lipschitz constant
//! `l_upper`, which feed the generator tuning rule. A bracketing/bisection
//! minimizer of the aggregate gradient serves as the independent optimum
//! oracle against which closed-loop runs are judged.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Closed-form cost families.
///
/// All are functions of a scalar decision variable `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CostFamily {
    /// `(c/2) (y - target)^2`
    Quadratic { c: f64, target: f64 },
    /// `y^2 / (a ln(y^2 + b)) + (1/2)(y - target)^2`, requires `b >= 2`.
    ScaledLogQuadratic { a: f64, b: f64, target: f64 },
    /// `y^2 / (a sqrt(y^2 + 1)) + (1/2) y^2`
    SqrtRatioQuadratic { a: f64 },
    /// `(1/2) ln(e^{-s y} + e^{s y}) + (1/2) y^2`
    LogSumExpQuadratic { s: f64 },
}

/// A cost together with its declared convexity window `[l_lower, l_upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostFunction {
    #[serde(flatten)]
    pub family: CostFamily,
    pub l_lower: f64,
    pub l_upper: f64,
}

impl CostFunction {
    pub fn new(family: CostFamily, l_lower: f64, l_upper: f64) -> Result<CostFunction> {
        if !(l_lower > 0.0 && l_lower <= l_upper) {
            return Err(Error::InvalidCost(format!(
                "need 0 < l_lower <= l_upper, got ({l_lower}, {l_upper})"
            )));
        }
        if let CostFamily::ScaledLogQuadratic { a, b, .. } = family {
            if b < 2.0 {
                return Err(Error::InvalidCost(format!(
                    "scaled-log family needs b >= 2 so ln(y^2 + b) stays positive, got b = {b}"
                )));
            }
            if a == 0.0 {
                return Err(Error::InvalidCost("scaled-log family needs a != 0".into()));
            }
        }
        if let CostFamily::SqrtRatioQuadratic { a } = family {
            if a == 0.0 {
                return Err(Error::InvalidCost("sqrt-ratio family needs a != 0".into()));
            }
        }
        Ok(CostFunction {
            family,
            l_lower,
            l_upper,
        })
    }

    /// Quadratic `(c/2)(y - target)^2`; its gradient slope is exactly `c`.
    pub fn quadratic(c: f64, target: f64) -> CostFunction {
        CostFunction::new(CostFamily::Quadratic { c, target }, c, c)
            .expect("positive curvature quadratic")
    }
}

/// Evaluate a cost at `y`.
pub fn eval(f: &CostFunction, y: f64) -> f64 {
    match f.family {
        CostFamily::Quadratic { c, target } => {
            let d = y - target;
            0.5 * c * d * d
        }
        CostFamily::ScaledLogQuadratic { a, b, target } => {
            let d = y - target;
            y * y / (a * (y * y + b).ln()) + 0.5 * d * d
        }
        CostFamily::SqrtRatioQuadratic { a } => {
            y * y / (a * (y * y + 1.0).sqrt()) + 0.5 * y * y
        }
        CostFamily::LogSumExpQuadratic { s } => {
            // ln(e^{-sy} + e^{sy}) = |sy| + ln(1 + e^{-2|sy|}), overflow-safe.
            let t = (s * y).abs();
            0.5 * (t + (-2.0 * t).exp().ln_1p()) + 0.5 * y * y
        }
    }
}

/// Closed-form gradient of a cost at `y`.
pub fn grad(f: &CostFunction, y: f64) -> f64 {
    match f.family {
        CostFamily::Quadratic { c, target } => c * (y - target),
        CostFamily::ScaledLogQuadratic { a, b, target } => {
            let q = y * y + b;
            let ln_q = q.ln();
            (2.0 * y * ln_q - 2.0 * y * y * y / q) / (a * ln_q * ln_q) + (y - target)
        }
        CostFamily::SqrtRatioQuadratic { a } => {
            let q = y * y + 1.0;
            y * (y * y + 2.0) / (a * q * q.sqrt()) + y
        }
        CostFamily::LogSumExpQuadratic { s } => 0.5 * s * (s * y).tanh() + y,
    }
}

/// The collection of per-agent costs defining the global objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEnsemble {
    pub costs: Vec<CostFunction>,
}

impl CostEnsemble {
    pub fn new(costs: Vec<CostFunction>) -> CostEnsemble {
        CostEnsemble { costs }
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    /// min_i l_lower_i.
    pub fn l_lower(&self) -> f64 {
        self.costs
            .iter()
            .map(|c| c.l_lower)
            .fold(f64::INFINITY, f64::min)
    }

    /// max_i l_upper_i.
    pub fn l_upper(&self) -> f64 {
        self.costs.iter().map(|c| c.l_upper).fold(0.0, f64::max)
    }

    /// Sum of gradients at a common point.
    pub fn aggregate_grad(&self, y: f64) -> f64 {
        self.costs.iter().map(|c| grad(c, y)).sum()
    }
}

/// Sampling check of the declared convexity window on an interval.
///
/// For every pair of sample points the secant inequality of `l_lower`-strong
/// convexity and the `l_upper`-Lipschitz bound on the gradient must hold,
/// each with `1e-9` slack on the constant. A `false` verdict means the
/// declared window is wrong somewhere on the interval; it proves nothing
/// outside it.
pub fn verify_convexity_window(f: &CostFunction, interval: [f64; 2], samples: usize) -> bool {
    assert!(samples >= 2, "need at least two samples");
    assert!(
        interval[1] > interval[0],
        "interval must be nondegenerate"
    );
    const SLACK: f64 = 1e-9;
    let pts: Vec<f64> = (0..samples)
        .map(|k| {
            interval[0] + (interval[1] - interval[0]) * k as f64 / (samples - 1) as f64
        })
        .collect();
    let grads: Vec<f64> = pts.iter().map(|&y| grad(f, y)).collect();
    for i in 0..samples {
        for j in (i + 1)..samples {
            let dy = pts[i] - pts[j];
            let dg = grads[i] - grads[j];
            if dg * dy < (f.l_lower - SLACK) * dy * dy {
                return false;
            }
            if dg.abs() > (f.l_upper + SLACK) * dy.abs() {
                return false;
            }
        }
    }
    true
}

/// Global minimizer of the summed cost, by bracketing the sign change of
/// the aggregate gradient (monotone under strong convexity) and bisecting.
///
/// Independent of the distributed generator: this is the oracle the
/// closed-loop runs are compared against. Fails if no sign change is found
/// within `|y| <= 1e9`, which signals a non-coercive (invalid) ensemble.
pub fn global_minimizer(ensemble: &CostEnsemble, tol: f64) -> Result<f64> {
    assert!(tol > 0.0);
    if ensemble.is_empty() {
        return Err(Error::InvalidCost("empty cost ensemble".into()));
    }
    const LIMIT: f64 = 1e9;
    let mut lo = -1.0f64;
    let mut hi = 1.0f64;
    let mut g_lo = ensemble.aggregate_grad(lo);
    let mut g_hi = ensemble.aggregate_grad(hi);
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }
    while g_lo > 0.0 || g_hi < 0.0 {
        if hi >= LIMIT {
            return Err(Error::NoBracket { limit: LIMIT });
        }
        lo *= 2.0;
        hi *= 2.0;
        g_lo = ensemble.aggregate_grad(lo);
        g_hi = ensemble.aggregate_grad(hi);
    }
    // Bisection: the aggregate gradient is increasing, g(lo) < 0 < g(hi).
    let mut g_mid = f64::INFINITY;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        g_mid = ensemble.aggregate_grad(mid);
        if g_mid.abs() <= tol {
            return Ok(mid);
        }
        if g_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::ToleranceUnreachable {
        achieved: g_mid.abs(),
        requested: tol,
    })
}
