//! Gain synthesis and certification.
//!
//! The controller needs a Hurwitz coefficient vector `k`, a loop gain
//! `eps`, and an observer parameter `gamma`. `k` comes from the binomial
//! expansion of `(s + lambda0)^m`; `eps` has a constructive lower bound
//! assembled from Lyapunov solutions on the zero dynamics and the tracking
//! chain; `gamma`'s sufficient condition involves existence-level constants,
//! so the executable surrogate is an eigenvalue certificate: assemble the
//! full linearized closed loop at sampled parameter points and demand every
//! eigenvalue except the structural one sit strictly in the left half plane.

use crate::controller::Gains;
use crate::costs::{self, CostEnsemble};
use crate::error::{Error, Result};
use crate::generator::GeneratorGains;
use crate::graph::{self, Digraph};
use crate::linalg::{self, Lu, Matrix};
use crate::plant::{normal_form, relative_degree, AffinePlant, GridSpec, StateSpace, REL_DEG_TOL};
use serde::Serialize;

/// Coefficients `k_j = binom(m, j-1) lambda0^{m-j+1}` of `(s + lambda0)^m`
/// below the leading term, so `k_1 + k_2 s + ... + k_m s^{m-1} + s^m`
/// equals `(s + lambda0)^m`.
pub fn stabilizer_gains(m: usize, lambda0: f64) -> Vec<f64> {
    assert!(m >= 1 && lambda0 > 0.0);
    (1..=m)
        .map(|j| binomial(m, j - 1) * lambda0.powi((m - j + 1) as i32))
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Routh–Hurwitz test on ascending coefficients `a_0 + a_1 s + ... + a_n s^n`.
///
/// Requires a positive leading coefficient (callers pass monic
/// polynomials); a zero pivot in the array is reported as not Hurwitz.
pub fn hurwitz_check(coeffs: &[f64]) -> bool {
    let n = coeffs.len().saturating_sub(1);
    if coeffs.is_empty() || *coeffs.last().unwrap() <= 0.0 {
        return false;
    }
    if n == 0 {
        return true; // constant polynomial, no roots
    }
    // Descending coefficients, normalized by the leading one.
    let lead = coeffs[n];
    let desc: Vec<f64> = coeffs.iter().rev().map(|c| c / lead).collect();
    let width = n / 2 + 1;
    let mut prev: Vec<f64> = (0..width).map(|j| *desc.get(2 * j).unwrap_or(&0.0)).collect();
    let mut curr: Vec<f64> = (0..width)
        .map(|j| *desc.get(2 * j + 1).unwrap_or(&0.0))
        .collect();
    if prev[0] <= 0.0 {
        return false;
    }
    for _row in 1..=n {
        if curr[0] <= 0.0 {
            return false; // zero or sign-changing first column
        }
        let mut next = vec![0.0; width];
        for j in 0..width - 1 {
            next[j] = (curr[0] * prev[j + 1] - prev[0] * curr[j + 1]) / curr[0];
        }
        prev = curr;
        curr = next;
    }
    true
}

/// Unique symmetric positive-definite solution `P` of
/// `A^T P + P A = -2 I`, by Kronecker vectorization and a dense LU solve.
///
/// Refuses non-Hurwitz `A` (checked through the eigenvalue path) and
/// validates the residual of the solved equation.
pub fn solve_lyapunov(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::Dimension("Lyapunov equation needs square A".into()));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let eigs = linalg::eigenvalues(a)?;
    if let Some(bad) = eigs.iter().find(|z| z.re >= 0.0) {
        return Err(Error::NotHurwitz(format!("eigenvalue at {bad}")));
    }
    // vec(A^T P) = (I (x) A^T) vec(P), vec(P A) = (A^T (x) I) vec(P)
    // with column-major vec.
    let at = a.transpose();
    let eye = Matrix::identity(n);
    let k = eye.kron(&at).add(&at.kron(&eye));
    let mut rhs = vec![0.0; n * n];
    for i in 0..n {
        rhs[i * n + i] = -2.0;
    }
    let x = Lu::factor(&k)
        .map_err(|e| Error::Singular(format!("Kronecker system: {e}")))?
        .solve(&rhs);
    let mut p = Matrix::zeros(n, n);
    for col in 0..n {
        for row in 0..n {
            p[(row, col)] = x[col * n + row];
        }
    }
    let p = p.add(&p.transpose()).scale(0.5);
    // Residual of the defining equation.
    let mut resid = at.matmul(&p).add(&p.matmul(a));
    for i in 0..n {
        resid[(i, i)] += 2.0;
    }
    let tol = 1e-9 * p.max_abs().max(1.0);
    if resid.max_abs() > tol {
        return Err(Error::Singular(format!(
            "Lyapunov residual {:e} above tolerance {tol:e}",
            resid.max_abs()
        )));
    }
    Ok(p)
}

/// Companion-form matrix of the tracking chain under the control law:
/// zeros with a superdiagonal of ones and last row `-k_1 .. -k_m`.
pub fn chain_matrix(k: &[f64]) -> Matrix {
    let m = k.len();
    let mut a = Matrix::zeros(m, m);
    for r in 0..m - 1 {
        a[(r, r + 1)] = 1.0;
    }
    for (j, kj) in k.iter().enumerate() {
        a[(m - 1, j)] = -kj;
    }
    a
}

/// Scaled observer-error matrix: `[[ -p_chi | I ], [ -k_1 | 0 ]]` with
/// `p_chi = (k_m, ..., k_2)`; its characteristic polynomial is the same
/// Hurwitz polynomial as the chain's.
pub fn observer_error_matrix(k: &[f64]) -> Matrix {
    let m = k.len();
    let mut a = Matrix::zeros(m, m);
    for r in 0..m - 1 {
        a[(r, 0)] = -k[m - 1 - r];
        if r + 1 < m {
            a[(r, r + 1)] = 1.0;
        }
    }
    a[(m - 1, 0)] = -k[0];
    a
}

/// How the chain-Lyapunov weight `eps_hat` is chosen.
#[derive(Clone, Copy, Debug)]
pub enum EpsHatPolicy {
    /// `eps_hat = 4 max_w ||P0(w) b0(w)||^2 + 1`.
    Formula,
    Fixed(f64),
}

/// Result of the constructive `eps` lower bound.
#[derive(Clone, Debug, Serialize)]
pub struct EpsilonBound {
    pub eps_hat: f64,
    pub eps_bound: f64,
    pub min_b1: f64,
    pub max_p0b0_sq: f64,
    pub max_xi_sigma: f64,
    pub p1_bbar0_sq: f64,
}

/// Sufficient loop gain over a sampled box.
///
/// For every sampled `w` the normal form supplies the zero-dynamics block
/// (whose Lyapunov solution is `P0(w)`), the couplings `A1(w)`, `A2(w)`,
/// and `b1(w) > 0`. With `Abar0` the chain matrix, `P1` its Lyapunov
/// solution and `bbar0 = e_m`:
///
/// ```text
/// Abar2(w) = A2(w) Abar0 - k_m [k_1, k_2 - k_1/k_m, ..., k_m - k_{m-1}/k_m]
/// Abar3(w) = A2(w) bbar0 + k_m
/// Xi(w)    = Abar3(w) + ||A1(w)||^2 + ||Abar2(w)||^2 / eps_hat
/// eps     >= (max_w Xi(w) + eps_hat ||P1 bbar0||^2 + 2) / min_w b1(w)
/// ```
///
/// The result is clamped from below by the floor `2 / min_w b1(w)`.
pub fn epsilon_bound(
    plant: &AffinePlant,
    k: &[f64],
    policy: EpsHatPolicy,
    grid: GridSpec,
) -> Result<EpsilonBound> {
    let m = k.len();
    let abar0 = chain_matrix(k);
    let p1 = solve_lyapunov(&abar0)?;
    // ||P1 bbar0||^2 = squared norm of P1's last column.
    let p1_bbar0_sq: f64 = (0..m).map(|i| p1[(i, m - 1)] * p1[(i, m - 1)]).sum();

    struct SampleData {
        b1: f64,
        p0b0_sq: f64,
        a1_sq: f64,
        abar2_sq: f64,
        abar3: f64,
    }
    let mut data = Vec::new();
    for w in grid.points(&plant.bounds) {
        let ss = plant.materialize(&w)?;
        let (mw, b1) = relative_degree(&ss.a, &ss.b, &ss.c, REL_DEG_TOL).map_err(|e| {
            Error::AssumptionViolated(format!("at w = {w:?}: {e}"))
        })?;
        if mw != m {
            return Err(Error::AssumptionViolated(format!(
                "relative degree {mw} at w = {w:?} differs from {m}"
            )));
        }
        if b1 <= 0.0 {
            return Err(Error::AssumptionViolated(format!(
                "high-frequency gain b1 = {b1} at w = {w:?} not positive"
            )));
        }
        let nf = normal_form(&ss.a, &ss.b, &ss.c)?;
        let p0b0_sq = if nf.a0z.rows() == 0 {
            0.0
        } else {
            let p0 = solve_lyapunov(&nf.a0z).map_err(|e| {
                Error::AssumptionViolated(format!(
                    "zero dynamics at w = {w:?} not stable (minimum phase fails): {e}"
                ))
            })?;
            let p0b0 = p0.mul_vec(&nf.b0z);
            linalg::dot(&p0b0, &p0b0)
        };
        // Abar2 = A2 Abar0 - k_m [k_1, k_2 - k_1/k_m, ..., k_m - k_{m-1}/k_m]
        let a2_abar0: Vec<f64> = (0..m)
            .map(|j| (0..m).map(|i| nf.a2z[i] * abar0[(i, j)]).sum())
            .collect();
        let km = k[m - 1];
        let abar2: Vec<f64> = (0..m)
            .map(|j| {
                let bracket = if j == 0 { k[0] } else { k[j] - k[j - 1] / km };
                a2_abar0[j] - km * bracket
            })
            .collect();
        let abar3 = nf.a2z[m - 1] + km;
        data.push(SampleData {
            b1,
            p0b0_sq,
            a1_sq: linalg::dot(&nf.a1z, &nf.a1z),
            abar2_sq: linalg::dot(&abar2, &abar2),
            abar3,
        });
    }

    let max_p0b0_sq = data.iter().map(|d| d.p0b0_sq).fold(0.0, f64::max);
    let eps_hat = match policy {
        EpsHatPolicy::Formula => 4.0 * max_p0b0_sq + 1.0,
        EpsHatPolicy::Fixed(v) => v,
    };
    let min_b1 = data.iter().map(|d| d.b1).fold(f64::INFINITY, f64::min);
    let max_xi_sigma = data
        .iter()
        .map(|d| d.abar3 + d.a1_sq + d.abar2_sq / eps_hat)
        .fold(f64::NEG_INFINITY, f64::max);
    let raw = (max_xi_sigma + eps_hat * p1_bbar0_sq + 2.0) / min_b1;
    let eps_bound = raw.max(2.0 / min_b1);
    Ok(EpsilonBound {
        eps_hat,
        eps_bound,
        min_b1,
        max_p0b0_sq,
        max_xi_sigma,
        p1_bbar0_sq,
    })
}

/// Outcome of a closed-loop eigenvalue certificate sweep.
#[derive(Clone, Debug, Serialize)]
pub struct TuningCertificate {
    /// Zero-dynamics Lyapunov solution at the nominal parameter
    /// (empty when the plant has no zero dynamics).
    pub p0: Matrix,
    /// Chain Lyapunov solution.
    pub p1: Matrix,
    /// Observer-error Lyapunov solution (empty when `m = 1`).
    pub pchi: Matrix,
    pub eps_hat: f64,
    pub eps_bound: f64,
    pub gamma_used: f64,
    pub sampled_w: Vec<Vec<f64>>,
    /// Stability margin (largest non-structural eigenvalue real part) per
    /// sampled point.
    pub margins: Vec<f64>,
    pub worst_margin: f64,
    pub worst_w: Vec<f64>,
    pub pass: bool,
}

/// Assemble the linearized closed-loop matrix at one parameter point.
///
/// State layout per agent: plant states, integral state, observer states
/// (when `m >= 2`); then all generator estimates `z`, then all auxiliary
/// states `v`. Costs enter through their curvatures `q_i` at the
/// linearization point.
pub fn closed_loop_matrix(
    ss: &StateSpace,
    gains: &Gains,
    gen: GeneratorGains,
    q: &[f64],
    lap: &Matrix,
) -> Matrix {
    let n = ss.a.rows();
    let n_agents = lap.rows();
    let m = gains.m;
    let m_obs = gains.observer_states();
    let per_agent = n + 1 + m_obs;
    let dim = n_agents * per_agent + 2 * n_agents;
    let z_off = n_agents * per_agent;
    let v_off = z_off + n_agents;
    let eps = gains.epsilon;
    let k = &gains.k;

    // Coefficient of chi_r inside the bracket of the control law.
    let chi_coef = |r: usize| -> f64 {
        // r is 1-based; slots 2..m-1 carry k_{r+1}, the top slot carries 1.
        if r == m {
            1.0
        } else if r >= 2 {
            k[r]
        } else {
            0.0
        }
    };

    let mut mat = Matrix::zeros(dim, dim);
    for agent in 0..n_agents {
        let x0 = agent * per_agent;
        let xi = x0 + n;
        let chi0 = x0 + n + 1;
        let zi = z_off + agent;

        // xdot = A x + B u
        for i in 0..n {
            for j in 0..n {
                mat[(x0 + i, x0 + j)] = ss.a[(i, j)];
            }
        }
        // u = -eps [ k1 xi0 + k_e (y - z) + sum chi terms ], y = C x
        let k_e = if m == 1 { 1.0 } else { k[1] };
        for i in 0..n {
            let bi = ss.b[i];
            if bi == 0.0 {
                continue;
            }
            for j in 0..n {
                mat[(x0 + i, x0 + j)] -= eps * k_e * bi * ss.c[j];
            }
            mat[(x0 + i, xi)] -= eps * k[0] * bi;
            mat[(x0 + i, zi)] += eps * k_e * bi;
            for r in 1..=m_obs {
                let coef = chi_coef(r);
                if coef != 0.0 {
                    mat[(x0 + i, chi0 + r - 1)] -= eps * coef * bi;
                }
            }
        }
        // xi0dot = y - z
        for j in 0..n {
            mat[(xi, x0 + j)] = ss.c[j];
        }
        mat[(xi, zi)] = -1.0;
        // Observer rows.
        for r in 0..m_obs {
            let l_r = gains.observer_l[r];
            mat[(chi0 + r, chi0)] -= l_r;
            for j in 0..n {
                mat[(chi0 + r, x0 + j)] += l_r * ss.c[j];
            }
            if r + 1 < m_obs {
                mat[(chi0 + r, chi0 + r + 1)] += 1.0;
            }
        }
        // Generator rows.
        mat[(z_off + agent, z_off + agent)] -= gen.alpha * q[agent];
        for j in 0..n_agents {
            let lij = lap[(agent, j)];
            if lij != 0.0 {
                mat[(z_off + agent, z_off + j)] -= gen.beta * lij;
                mat[(z_off + agent, v_off + j)] -= lij;
                mat[(v_off + agent, z_off + j)] += gen.alpha * gen.beta * lij;
            }
        }
    }
    mat
}

/// Eigenvalue certificate of the closed loop over a sampled box.
///
/// Costs are replaced by their quadratic models at the oracle optimum
/// (curvature by central finite differences of the gradient, h = 1e-5).
/// The `(z, v)` subsystem owns one structural zero eigenvalue from the
/// translation `v -> v + c 1` (its direction `t` satisfies `M t = 0`
/// because `L 1 = 0`); the single eigenvalue of smallest magnitude is
/// excluded when it is below 1e-8 and the translation direction is
/// verified to lie in the kernel. Every remaining eigenvalue must have a
/// strictly negative real part at every sampled point.
pub fn certify_closed_loop(
    plant: &AffinePlant,
    ensemble: &CostEnsemble,
    g: &Digraph,
    gains: &Gains,
    gen: GeneratorGains,
    grid: GridSpec,
) -> Result<TuningCertificate> {
    let n_agents = g.node_count();
    if ensemble.len() != n_agents {
        return Err(Error::Dimension(format!(
            "{} costs for {} agents",
            ensemble.len(),
            n_agents
        )));
    }
    let y_star = costs::global_minimizer(ensemble, 1e-10)?;
    let h = 1e-5;
    let q: Vec<f64> = ensemble
        .costs
        .iter()
        .map(|c| (costs::grad(c, y_star + h) - costs::grad(c, y_star - h)) / (2.0 * h))
        .collect();
    let lap = graph::laplacian(g).laplacian;

    let mut sampled_w = Vec::new();
    let mut margins = Vec::new();
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_w = Vec::new();

    for w in grid.points(&plant.bounds) {
        let ss = plant.materialize(&w)?;
        let mat = closed_loop_matrix(&ss, gains, gen, &q, &lap);
        let dim = mat.rows();
        // Structural-kernel direction: ones on the v block.
        let mut t = vec![0.0; dim];
        let v_off = dim - n_agents;
        for i in 0..n_agents {
            t[v_off + i] = 1.0 / (n_agents as f64).sqrt();
        }
        let kernel_resid = linalg::norm_inf(&mat.mul_vec(&t));
        let structural = kernel_resid <= 1e-8 * mat.max_abs().max(1.0);

        let mut eigs = linalg::eigenvalues(&mat)?;
        eigs.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
        let mut margin = f64::NEG_INFINITY;
        let mut excluded = false;
        for z in &eigs {
            if !excluded && structural && z.abs() <= 1e-8 {
                excluded = true;
                continue;
            }
            margin = margin.max(z.re);
        }
        if margin > worst_margin {
            worst_margin = margin;
            worst_w = w.clone();
        }
        margins.push(margin);
        sampled_w.push(w);
    }

    // Lyapunov certificates at the nominal parameter.
    let nominal = plant.materialize(&vec![0.0; plant.n_params()])?;
    let nf = normal_form(&nominal.a, &nominal.b, &nominal.c)?;
    let p0 = if nf.a0z.rows() == 0 {
        Matrix::zeros(0, 0)
    } else {
        solve_lyapunov(&nf.a0z)?
    };
    let p1 = solve_lyapunov(&chain_matrix(&gains.k))?;
    let pchi = if gains.m >= 2 {
        solve_lyapunov(&observer_error_matrix(&gains.k))?
    } else {
        Matrix::zeros(0, 0)
    };
    let eb = epsilon_bound(plant, &gains.k, EpsHatPolicy::Formula, grid)?;

    Ok(TuningCertificate {
        p0,
        p1,
        pchi,
        eps_hat: eb.eps_hat,
        eps_bound: eb.eps_bound,
        gamma_used: gains.gamma,
        sampled_w,
        margins,
        worst_margin,
        worst_w,
        pass: worst_margin < 0.0,
    })
}

/// Smallest `gamma` in `{1, 2, 4, ...} <= gamma_max` whose certificate
/// passes on the grid. Returns 1 immediately for relative degree 1, where
/// no observer exists.
pub fn gamma_search(
    plant: &AffinePlant,
    ensemble: &CostEnsemble,
    g: &Digraph,
    k: &[f64],
    lambda0: f64,
    epsilon: f64,
    gen: GeneratorGains,
    grid: GridSpec,
    gamma_max: f64,
) -> Result<f64> {
    let m = k.len();
    if m == 1 {
        return Ok(1.0);
    }
    let mut best_margin = f64::INFINITY;
    let mut gamma = 1.0;
    while gamma <= gamma_max {
        let gains = Gains::new(m, k.to_vec(), lambda0, epsilon, gamma)?;
        let cert = certify_closed_loop(plant, ensemble, g, &gains, gen, grid)?;
        if cert.pass {
            return Ok(gamma);
        }
        best_margin = best_margin.min(cert.worst_margin);
        gamma *= 2.0;
    }
    Err(Error::NoPassingGamma {
        gamma_max,
        best_margin,
    })
}
