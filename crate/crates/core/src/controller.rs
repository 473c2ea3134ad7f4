//! Per-agent control laws: integral compensator, dirty-derivative
//! observer, and the output-feedback / partial-state-feedback laws.
//!
//! With `e = y - z` the local tracking error, relative degree `m >= 2`, and
//! a Hurwitz coefficient vector `k`, the output-feedback law reads
//!
//! ```text
//! u = -eps [ k_1 xi0 + k_2 (y - z) + k_3 chi_2 + ... + k_m chi_{m-1} + chi_m ]
//! ```
//!
//! where `xi0` integrates `y - z` and `chi` is the observer state with
//! gains `l_r = gamma^r k_{m-r+1}`. The coefficient pairing (`k_{r+1}`
//! multiplies `chi_r` for `2 <= r <= m-1`, the top state enters with
//! coefficient one) mirrors the partial-state law, where the same slots
//! hold the true output derivatives. For `m = 1` both laws degenerate to
//! `u = -eps [ k_1 xi0 + (y - z) ]` with no observer.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tuning;
use serde::{Deserialize, Serialize};

/// All controller parameters for one agent class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    /// Relative degree of the plant the gains were built for.
    pub m: usize,
    /// Hurwitz coefficients `k_1 .. k_m` of `k_1 + k_2 s + ... + s^m`.
    pub k: Vec<f64>,
    /// Pole location used when `k` was synthesized as `(s + lambda0)^m`.
    pub lambda0: f64,
    /// Loop gain.
    pub epsilon: f64,
    /// Observer time-scale parameter.
    pub gamma: f64,
    /// Observer gains `l_r = gamma^r k_{m-r+1}`, derived.
    pub observer_l: Vec<f64>,
}

impl Gains {
    /// Validating constructor; derives the observer gains from `k` and
    /// `gamma`.
    pub fn new(m: usize, k: Vec<f64>, lambda0: f64, epsilon: f64, gamma: f64) -> Result<Gains> {
        if m == 0 || k.len() != m {
            return Err(Error::InvalidGains(format!(
                "need m >= 1 coefficients, got m = {m}, k of length {}",
                k.len()
            )));
        }
        let mut poly = k.clone();
        poly.push(1.0);
        if !tuning::hurwitz_check(&poly) {
            return Err(Error::InvalidGains(format!(
                "k = {k:?} does not yield a Hurwitz polynomial"
            )));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidGains(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(gamma >= 1.0) {
            return Err(Error::InvalidGains(format!("gamma must be >= 1, got {gamma}")));
        }
        Ok(Gains {
            observer_l: observer_gains(&k, gamma),
            m,
            k,
            lambda0,
            epsilon,
            gamma,
        })
    }

    /// Number of observer states carried by each agent (zero when `m = 1`,
    /// where the measured output makes the observer redundant).
    pub fn observer_states(&self) -> usize {
        if self.m >= 2 {
            self.m
        } else {
            0
        }
    }
}

/// `l_r = gamma^r k_{m-r+1}` for `r = 1..m`.
pub fn observer_gains(k: &[f64], gamma: f64) -> Vec<f64> {
    let m = k.len();
    (1..=m).map(|r| gamma.powi(r as i32) * k[m - r]).collect()
}

/// Dynamic state of one agent's controller.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState {
    /// Integral of the tracking error.
    pub xi0: f64,
    /// Observer state `chi_1 .. chi_m`; empty when `m = 1`.
    pub chi: Vec<f64>,
}

impl ControllerState {
    /// Default initialization: zero integral, observer seeded with the
    /// measured output (`chi = (y, 0, .., 0)`), which avoids the worst of
    /// the high-gain peaking transient.
    pub fn initial(gains: &Gains, y0: f64) -> ControllerState {
        let mut chi = vec![0.0; gains.observer_states()];
        if let Some(first) = chi.first_mut() {
            *first = y0;
        }
        ControllerState { xi0: 0.0, chi }
    }
}

/// Output-feedback control value.
pub fn control_output(g: &Gains, c: &ControllerState, y: f64, z: f64) -> f64 {
    let m = g.m;
    if m == 1 {
        return -g.epsilon * (g.k[0] * c.xi0 + (y - z));
    }
    debug_assert_eq!(c.chi.len(), m);
    let mut s = g.k[0] * c.xi0 + g.k[1] * (y - z);
    for r in 2..m {
        s += g.k[r] * c.chi[r - 1]; // k_{r+1} chi_r
    }
    s += c.chi[m - 1];
    -g.epsilon * s
}

/// Observer dynamics `chidot_r = chi_{r+1} - l_r (chi_1 - y)` (last row
/// drops the shift). Only defined for `m >= 2`.
pub fn observer_rhs(g: &Gains, chi: &[f64], y: f64) -> Result<Vec<f64>> {
    let m = g.m;
    if m < 2 {
        return Err(Error::InvalidGains(
            "observer is undefined for relative degree 1".into(),
        ));
    }
    if chi.len() != m {
        return Err(Error::Dimension(format!(
            "observer state has length {}, expected {m}",
            chi.len()
        )));
    }
    let innovation = chi[0] - y;
    let mut out = vec![0.0; m];
    for r in 0..m - 1 {
        out[r] = chi[r + 1] - g.observer_l[r] * innovation;
    }
    out[m - 1] = -g.observer_l[m - 1] * innovation;
    Ok(out)
}

/// Integral compensator dynamics.
#[inline]
pub fn integral_rhs(y: f64, z: f64) -> f64 {
    y - z
}

/// Partial-state-feedback control: the observer slots are replaced by the
/// true output derivatives `y^{(r)} = C A^r x`, valid for `r < m` because
/// the first `m - 1` Markov parameters vanish.
pub fn partial_state_control(
    g: &Gains,
    xi0: f64,
    x: &[f64],
    z: f64,
    a: &Matrix,
    c: &[f64],
) -> f64 {
    let m = g.m;
    let mut row = c.to_vec();
    let y = crate::linalg::dot(&row, x);
    if m == 1 {
        return -g.epsilon * (g.k[0] * xi0 + (y - z));
    }
    let mut s = g.k[0] * xi0 + g.k[1] * (y - z);
    // Derivatives y^{(1)} .. y^{(m-1)} via successive rows C A^r.
    for r in 1..m {
        row = a.transpose().mul_vec(&row);
        let deriv = crate::linalg::dot(&row, x);
        if r < m - 1 {
            s += g.k[r + 1] * deriv;
        } else {
            s += deriv;
        }
    }
    -g.epsilon * s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gains_m2() -> Gains {
        Gains::new(2, vec![1.0, 2.0], 1.0, 6.0, 10.0).unwrap()
    }

    #[test]
    fn observer_gain_formula() {
        let g = gains_m2();
        assert_eq!(g.observer_l, vec![20.0, 100.0]);
        let g3 = Gains::new(3, vec![8.0, 12.0, 6.0], 2.0, 1.0, 2.0).unwrap();
        // l_r = gamma^r k_{m-r+1}: (2*6, 4*12, 8*8)
        assert_eq!(g3.observer_l, vec![12.0, 48.0, 64.0]);
    }

    #[test]
    fn control_output_zero_state() {
        let g = gains_m2();
        let c = ControllerState { xi0: 0.0, chi: vec![0.0, 0.0] };
        assert_eq!(control_output(&g, &c, 1.0, 1.0), 0.0);
    }

    #[test]
    fn control_output_hand_value() {
        let g = gains_m2();
        let c = ControllerState { xi0: 1.0, chi: vec![0.0, -0.25] };
        // u = -6 (1*1 + 2*0.5 - 0.25) = -10.5
        assert_eq!(control_output(&g, &c, 0.5, 0.0), -10.5);
    }

    #[test]
    fn control_output_m3_indexing() {
        let g = Gains::new(3, vec![8.0, 12.0, 6.0], 2.0, 1.0, 1.0).unwrap();
        let c = ControllerState { xi0: 0.5, chi: vec![9.0, 2.0, 3.0] };
        // u = -eps (k1 xi0 + k2 e + k3 chi2 + chi3); chi1 is unused.
        let u = control_output(&g, &c, 1.0, 0.0);
        assert_eq!(u, -(8.0 * 0.5 + 12.0 * 1.0 + 6.0 * 2.0 + 3.0));
    }

    #[test]
    fn observer_hand_value() {
        let g = gains_m2();
        let dot = observer_rhs(&g, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(dot, vec![20.0, 100.0]);
    }

    #[test]
    fn observer_consistent_estimate_is_stationary() {
        let g = gains_m2();
        let dot = observer_rhs(&g, &[5.0, 0.0], 5.0).unwrap();
        assert_eq!(dot, vec![0.0, 0.0]);
    }

    #[test]
    fn observer_rejects_m1() {
        let g = Gains::new(1, vec![3.0], 3.0, 1.0, 1.0).unwrap();
        assert!(observer_rhs(&g, &[0.0], 0.0).is_err());
    }

    #[test]
    fn observer_tracks_ramp() {
        // y(t) = t; integrate the observer 1 s with RK4-quality Euler steps.
        let g = gains_m2();
        let mut chi = vec![0.0, 1.0];
        let h = 1e-4;
        let mut t = 0.0;
        while t < 1.0 {
            let d = observer_rhs(&g, &chi, t).unwrap();
            chi[0] += h * d[0];
            chi[1] += h * d[1];
            t += h;
        }
        assert!((chi[0] - 1.0).abs() < 0.1, "chi1 = {} at t = 1", chi[0]);
    }

    #[test]
    fn integral_rhs_is_error() {
        assert_eq!(integral_rhs(3.0, 1.0), 2.0);
        assert_eq!(integral_rhs(2.0, 2.0), 0.0);
    }

    #[test]
    fn partial_state_double_integrator_hand_value() {
        let g = gains_m2();
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let c = vec![1.0, 0.0];
        // y = 1, ydot = 2: u = -6 (0 + 2*1 + 2) = -24
        let u = partial_state_control(&g, 0.0, &[1.0, 2.0], 0.0, &a, &c);
        assert_eq!(u, -24.0);
    }

    #[test]
    fn partial_state_zero_state() {
        let g = gains_m2();
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let u = partial_state_control(&g, 0.0, &[0.0, 0.0], 0.0, &a, &[1.0, 0.0]);
        assert_eq!(u, 0.0);
    }

    #[test]
    fn output_law_with_true_derivative_matches_partial_state() {
        // m = 2 identity: replacing chi_2 by the true ydot makes the two
        // laws algebraically equal.
        let g = gains_m2();
        let a = Matrix::from_rows(&[vec![0.3, 1.2], vec![-0.7, 0.1]]).unwrap();
        let c = vec![0.9, -0.4];
        let mut rng = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..50 {
            let x = [next() * 5.0, next() * 5.0];
            let xi0 = next() * 3.0;
            let z = next() * 2.0;
            let y = crate::linalg::dot(&c, &x);
            let ydot = crate::linalg::dot(&a.transpose().mul_vec(&c), &x);
            let state = ControllerState { xi0, chi: vec![y, ydot] };
            let u_out = control_output(&g, &state, y, z);
            let u_ps = partial_state_control(&g, xi0, &x, z, &a, &c);
            assert!((u_out - u_ps).abs() <= 1e-12 * u_ps.abs().max(1.0));
        }
    }

    #[test]
    fn control_output_is_linear() {
        let g = gains_m2();
        let mut rng = 0xdeadbeefcafef00du64;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..30 {
            let (a1, e1, c1) = (next(), next(), next());
            let (a2, e2, c2) = (next(), next(), next());
            let s1 = ControllerState { xi0: a1, chi: vec![0.0, c1] };
            let s2 = ControllerState { xi0: a2, chi: vec![0.0, c2] };
            let sum = ControllerState { xi0: a1 + a2, chi: vec![0.0, c1 + c2] };
            let u1 = control_output(&g, &s1, e1, 0.0);
            let u2 = control_output(&g, &s2, e2, 0.0);
            let u12 = control_output(&g, &sum, e1 + e2, 0.0);
            assert!((u12 - (u1 + u2)).abs() <= 1e-12 * u12.abs().max(1.0));
        }
    }

    #[test]
    fn m1_law_has_no_observer_terms() {
        let g = Gains::new(1, vec![3.0], 3.0, 2.0, 1.0).unwrap();
        assert_eq!(g.observer_states(), 0);
        let c = ControllerState { xi0: 0.5, chi: vec![] };
        assert_eq!(control_output(&g, &c, 2.0, 1.0), -2.0 * (3.0 * 0.5 + 1.0));
    }

    #[test]
    fn bad_gains_rejected() {
        assert!(Gains::new(2, vec![-1.0, 0.0], 1.0, 6.0, 10.0).is_err());
        assert!(Gains::new(2, vec![1.0, 2.0], 1.0, 0.0, 10.0).is_err());
        assert!(Gains::new(2, vec![1.0, 2.0], 1.0, 6.0, 0.5).is_err());
    }
}
