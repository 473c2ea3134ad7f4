//! Distributed optimal signal generator.
//!
//! Each agent carries an estimate `z_i` of the global optimum and an
//! auxiliary state `v_i`, coupled through the communication graph:
//!
//! ```text
//! zdot_i = -alpha grad f_i(z_i) - beta sum_j a_ij (z_i - z_j) + sum_j a_ij (v_i - v_j)
//! vdot_i =  alpha beta sum_j a_ij (z_i - z_j)
//! ```
//!
//! Under a strongly connected weight-balanced graph and strongly convex
//! costs, every `z_i` converges exponentially to the minimizer of the
//! summed cost, from any initialization. The sufficient gain rule
//!
//! ```text
//! alpha >= max{1, 1/l_lower, 2 l_upper^2 / (l_lower lambda_2)}
//! beta  >= max{1, 1/lambda_2, 6 alpha^2 lambda_N^2 / lambda_2^2}
//! ```
//!
//! is offered by [`tune_alpha_beta`] but deliberately not defaulted: it is
//! conservative, and the built-in scenarios use much smaller hand-picked
//! values that a stability certificate confirms.

use crate::costs::{self, CostEnsemble};
use crate::error::{Error, Result};
use crate::graph::Digraph;
use serde::{Deserialize, Serialize};

/// Stacked generator state across all agents.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorState {
    pub z: Vec<f64>,
    pub v: Vec<f64>,
}

impl GeneratorState {
    pub fn zeros(n: usize) -> GeneratorState {
        GeneratorState {
            z: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Generator coupling gains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorGains {
    pub alpha: f64,
    pub beta: f64,
}

impl GeneratorGains {
    pub fn new(alpha: f64, beta: f64) -> Result<GeneratorGains> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(Error::InvalidGains(format!(
                "generator gains must be positive, got alpha = {alpha}, beta = {beta}"
            )));
        }
        Ok(GeneratorGains { alpha, beta })
    }
}

/// Right-hand side of the generator dynamics.
///
/// Neighbor sums run in ascending neighbor index so results are bitwise
/// deterministic regardless of how callers parallelize agents.
pub fn generator_rhs(
    state: &GeneratorState,
    ensemble: &CostEnsemble,
    g: &Digraph,
    gains: GeneratorGains,
) -> (Vec<f64>, Vec<f64>) {
    let n = g.node_count();
    assert_eq!(state.z.len(), n, "z length must match graph");
    assert_eq!(state.v.len(), n, "v length must match graph");
    assert_eq!(ensemble.len(), n, "one cost per agent");
    let mut z_dot = vec![0.0; n];
    let mut v_dot = vec![0.0; n];
    for i in 0..n {
        let mut lap_z = 0.0; // sum_j a_ij (z_i - z_j)
        let mut lap_v = 0.0;
        for j in 0..n {
            let a_ij = g.weight(i, j);
            if a_ij > 0.0 {
                lap_z += a_ij * (state.z[i] - state.z[j]);
                lap_v += a_ij * (state.v[i] - state.v[j]);
            }
        }
        z_dot[i] =
            -gains.alpha * costs::grad(&ensemble.costs[i], state.z[i]) - gains.beta * lap_z
                - lap_v;
        v_dot[i] = gains.alpha * gains.beta * lap_z;
    }
    (z_dot, v_dot)
}

/// Sufficient gains from the convexity window and the spectrum of `Sym(L)`,
/// tight at the bound.
pub fn tune_alpha_beta(
    l_lower: f64,
    l_upper: f64,
    lambda2: f64,
    lambda_n: f64,
) -> Result<GeneratorGains> {
    if l_lower <= 0.0 {
        return Err(Error::InvalidCost(format!(
            "strong-convexity constant must be positive, got {l_lower}"
        )));
    }
    if lambda2 <= 0.0 {
        return Err(Error::AssumptionViolated(format!(
            "lambda_2 = {lambda2} <= 0: graph is disconnected or not weight-balanced; refusing to tune"
        )));
    }
    let alpha = 1.0f64
        .max(1.0 / l_lower)
        .max(2.0 * l_upper * l_upper / (l_lower * lambda2));
    let beta = 1.0f64
        .max(1.0 / lambda2)
        .max(6.0 * alpha * alpha * lambda_n * lambda_n / (lambda2 * lambda2));
    Ok(GeneratorGains { alpha, beta })
}

/// True iff the state is (numerically) the generator equilibrium at the
/// oracle optimum: both derivatives below `tol` in Euclidean norm and every
/// `z_i` within `tol` of the bisection oracle's minimizer.
pub fn generator_equilibrium_check(
    state: &GeneratorState,
    ensemble: &CostEnsemble,
    g: &Digraph,
    gains: GeneratorGains,
    tol: f64,
) -> Result<bool> {
    let (z_dot, v_dot) = generator_rhs(state, ensemble, g, gains);
    let y_star = costs::global_minimizer(ensemble, (tol * 1e-2).max(1e-11))?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(norm(&z_dot) <= tol
        && norm(&v_dot) <= tol
        && state.z.iter().all(|&zi| (zi - y_star).abs() <= tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostFunction;
    use crate::linalg::Matrix;

    #[test]
    fn identical_quadratics_at_consensus_are_stationary() {
        let n = 4;
        let g = Digraph::cycle(n);
        let ens = CostEnsemble::new(vec![CostFunction::quadratic(1.0, 3.0); n]);
        let state = GeneratorState {
            z: vec![3.0; n],
            v: vec![0.0; n],
        };
        let gains = GeneratorGains::new(1.0, 1.0).unwrap();
        let (z_dot, v_dot) = generator_rhs(&state, &ens, &g, gains);
        assert!(z_dot.iter().all(|x| x.abs() < 1e-15));
        assert!(v_dot.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn two_agent_hand_evaluation() {
        // Bidirectional unit pair, f1 = y^2/2, f2 = (y-2)^2/2,
        // z = (0, 2), v = 0, alpha = beta = 1.
        let g = Digraph::from_edges(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let ens = CostEnsemble::new(vec![
            CostFunction::quadratic(1.0, 0.0),
            CostFunction::quadratic(1.0, 2.0),
        ]);
        let state = GeneratorState {
            z: vec![0.0, 2.0],
            v: vec![0.0, 0.0],
        };
        let (z_dot, v_dot) =
            generator_rhs(&state, &ens, &g, GeneratorGains { alpha: 1.0, beta: 1.0 });
        assert_eq!(z_dot, vec![2.0, -2.0]);
        assert_eq!(v_dot, vec![-2.0, 2.0]);
    }

    #[test]
    fn edgeless_graph_decouples_to_gradient_flow() {
        let g = Digraph::new(Matrix::zeros(3, 3)).unwrap();
        let ens = CostEnsemble::new(vec![
            CostFunction::quadratic(1.0, 1.0),
            CostFunction::quadratic(2.0, -1.0),
            CostFunction::quadratic(1.0, 0.0),
        ]);
        let state = GeneratorState {
            z: vec![0.0, 0.0, 5.0],
            v: vec![1.0, -2.0, 0.5],
        };
        let gains = GeneratorGains { alpha: 2.0, beta: 7.0 };
        let (z_dot, v_dot) = generator_rhs(&state, &ens, &g, gains);
        assert_eq!(z_dot[0], -2.0 * 1.0 * (0.0 - 1.0));
        assert_eq!(z_dot[1], -2.0 * 2.0 * (0.0 + 1.0));
        assert_eq!(z_dot[2], -2.0 * 5.0);
        assert!(v_dot.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn tuning_rule_cases() {
        // l = lbar = 1, lambda2 = 1, lambdaN = 2.
        let g = tune_alpha_beta(1.0, 1.0, 1.0, 2.0).unwrap();
        assert_eq!(g.alpha, 2.0);
        assert_eq!(g.beta, 96.0);
        // Example-2 constants.
        let g = tune_alpha_beta(0.5, 1.5, 1.0, 2.0).unwrap();
        assert_eq!(g.alpha, 9.0);
        assert_eq!(g.beta, 1944.0);
        // lambda2 = lambdaN = 1.
        let g = tune_alpha_beta(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(g.alpha, 2.0);
        assert_eq!(g.beta, 24.0);
    }

    #[test]
    fn tuning_refuses_disconnected_spectrum() {
        assert!(matches!(
            tune_alpha_beta(1.0, 1.0, 0.0, 2.0),
            Err(Error::AssumptionViolated(_))
        ));
    }

    #[test]
    fn equilibrium_check_verdicts() {
        let n = 4;
        let g = Digraph::cycle(n);
        let targets = [1.0, 3.0, 5.0, 7.0];
        let ens = CostEnsemble::new(
            targets.iter().map(|&t| CostFunction::quadratic(2.0, t)).collect(),
        );
        let gains = GeneratorGains { alpha: 1.0, beta: 15.0 };
        // z = 1 y*, v solving L v = -alpha grad(z*): regularized least squares.
        let y_star = 4.0;
        let spec = crate::graph::laplacian(&g);
        let grad_at: Vec<f64> = ens.costs.iter().map(|c| costs::grad(c, y_star)).collect();
        let rhs: Vec<f64> = grad_at.iter().map(|gi| -gains.alpha * gi).collect();
        let lt = spec.laplacian.transpose();
        let mut normal = lt.matmul(&spec.laplacian);
        for i in 0..n {
            for j in 0..n {
                normal[(i, j)] += 1.0; // + ones ones^T pins the kernel
            }
        }
        let v = crate::linalg::Lu::factor(&normal).unwrap().solve(&lt.mul_vec(&rhs));
        let state = GeneratorState { z: vec![y_star; n], v };
        assert!(generator_equilibrium_check(&state, &ens, &g, gains, 1e-6).unwrap());

        let wrong = GeneratorState::zeros(n);
        assert!(!generator_equilibrium_check(&wrong, &ens, &g, gains, 1e-6).unwrap());
    }
}
