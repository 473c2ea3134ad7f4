//! Uncertain affine-parameterized SISO plants.
//!
//! A plant is `xdot = A(w) x + B(w) u + E`, `y = C(w) x` with
//! `A(w) = A0 + sum_k w_k A_k` (same for B, C) and the parameter vector `w`
//! ranging over a known box containing the origin. This module materializes
//! the matrices at a parameter point, computes relative degree and
//! high-frequency gain, finds transmission zeros from the numerator of
//! `C (sI - A)^{-1} B` (Faddeev–LeVerrier recursion, Durand–Kerner roots),
//! checks the minimum-phase/relative-degree assumption over a sampling grid
//! of the box, and produces the normal-form decomposition used by the gain
//! certificates.

use crate::error::{Error, Result};
use crate::linalg::{self, Complex, Lu, Matrix};
use serde::{Deserialize, Serialize};

/// Default absolute tolerance on Markov parameters when deciding the
/// relative degree.
pub const REL_DEG_TOL: f64 = 1e-8;

/// Plant matrices materialized at one parameter point.
#[derive(Clone, Debug)]
pub struct StateSpace {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Constant additive disturbance on the state derivative.
    pub e: Vec<f64>,
}

/// Affine uncertain plant over a parameter box.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffinePlant {
    pub n: usize,
    pub a0: Matrix,
    pub b0: Vec<f64>,
    pub c0: Vec<f64>,
    /// Per-parameter deviation of A; zero matrices where a parameter does
    /// not enter.
    pub a_dev: Vec<Matrix>,
    pub b_dev: Vec<Vec<f64>>,
    pub c_dev: Vec<Vec<f64>>,
    /// Box `[w_k^-, w_k^+]` per parameter; must contain the origin.
    pub bounds: Vec<[f64; 2]>,
    /// Optional constant disturbance vector added to the state derivative.
    pub disturbance: Option<Vec<f64>>,
}

impl AffinePlant {
    pub fn new(
        a0: Matrix,
        b0: Vec<f64>,
        c0: Vec<f64>,
        a_dev: Vec<Matrix>,
        b_dev: Vec<Vec<f64>>,
        c_dev: Vec<Vec<f64>>,
        bounds: Vec<[f64; 2]>,
        disturbance: Option<Vec<f64>>,
    ) -> Result<AffinePlant> {
        let n = a0.rows();
        if !a0.is_square() || n == 0 {
            return Err(Error::Dimension("A0 must be square and non-empty".into()));
        }
        if b0.len() != n || c0.len() != n {
            return Err(Error::Dimension("B0/C0 must have length n".into()));
        }
        let n_w = bounds.len();
        if a_dev.len() != n_w || b_dev.len() != n_w || c_dev.len() != n_w {
            return Err(Error::Dimension(format!(
                "need one deviation triple per parameter ({n_w})"
            )));
        }
        for (k, (ak, (bk, ck))) in a_dev.iter().zip(b_dev.iter().zip(c_dev.iter())).enumerate() {
            if ak.rows() != n || ak.cols() != n || bk.len() != n || ck.len() != n {
                return Err(Error::Dimension(format!(
                    "deviation {k} has inconsistent dimensions"
                )));
            }
        }
        for (k, b) in bounds.iter().enumerate() {
            if !(b[0] <= 0.0 && 0.0 <= b[1]) {
                return Err(Error::Config(format!(
                    "box interval {k} = [{}, {}] must contain the origin",
                    b[0], b[1]
                )));
            }
        }
        if let Some(e) = &disturbance {
            if e.len() != n {
                return Err(Error::Dimension("disturbance must have length n".into()));
            }
        }
        Ok(AffinePlant {
            n,
            a0,
            b0,
            c0,
            a_dev,
            b_dev,
            c_dev,
            bounds,
            disturbance,
        })
    }

    /// A plant with no uncertain parameters.
    pub fn exact(a0: Matrix, b0: Vec<f64>, c0: Vec<f64>) -> Result<AffinePlant> {
        AffinePlant::new(a0, b0, c0, vec![], vec![], vec![], vec![], None)
    }

    pub fn n_params(&self) -> usize {
        self.bounds.len()
    }

    /// Whether `w` lies inside the box. Materialization outside the box is
    /// allowed (robustness stress tests) but callers should warn.
    pub fn box_contains(&self, w: &[f64]) -> bool {
        w.len() == self.bounds.len()
            && w.iter()
                .zip(&self.bounds)
                .all(|(&wk, b)| b[0] <= wk && wk <= b[1])
    }

    /// Materialize `(A(w), B(w), C(w), E)` at a parameter point.
    pub fn materialize(&self, w: &[f64]) -> Result<StateSpace> {
        if w.len() != self.bounds.len() {
            return Err(Error::Dimension(format!(
                "parameter vector has length {}, plant has {} parameters",
                w.len(),
                self.bounds.len()
            )));
        }
        let mut a = self.a0.clone();
        let mut b = self.b0.clone();
        let mut c = self.c0.clone();
        for (k, &wk) in w.iter().enumerate() {
            if wk == 0.0 {
                continue;
            }
            a.axpy(wk, &self.a_dev[k]);
            for (bi, di) in b.iter_mut().zip(&self.b_dev[k]) {
                *bi += wk * di;
            }
            for (ci, di) in c.iter_mut().zip(&self.c_dev[k]) {
                *ci += wk * di;
            }
        }
        let e = self
            .disturbance
            .clone()
            .unwrap_or_else(|| vec![0.0; self.n]);
        Ok(StateSpace { a, b, c, e })
    }
}

/// Relative degree `m` and high-frequency gain `b1 = C A^{m-1} B`.
///
/// `m` is the smallest `r` in `[1, n]` with `|C A^{r-1} B| > tol`.
pub fn relative_degree(a: &Matrix, b: &[f64], c: &[f64], tol: f64) -> Result<(usize, f64)> {
    assert!(tol > 0.0);
    let n = a.rows();
    let mut v = b.to_vec(); // A^{r-1} B
    for r in 1..=n {
        let markov = linalg::dot(c, &v);
        if markov.abs() > tol {
            return Ok((r, markov));
        }
        v = a.mul_vec(&v);
    }
    Err(Error::NoRelativeDegree { n, tol })
}

/// Transmission zeros: roots of the numerator of `C (sI - A)^{-1} B`.
///
/// The numerator coefficients come from the Faddeev–LeVerrier adjugate
/// chain; its degree must be `n - m`, with leading coefficient `b1`. Roots
/// via Durand–Kerner (tolerance 1e-10, at most 500 iterations).
pub fn transmission_zeros(a: &Matrix, b: &[f64], c: &[f64]) -> Result<Vec<Complex>> {
    let n = a.rows();
    let (m, b1) = relative_degree(a, b, c, REL_DEG_TOL)?;
    let (_, chain) = linalg::char_poly(a);
    // Numerator coefficient of s^{n-1-k} is C M_k B.
    let mut descending: Vec<f64> = chain
        .iter()
        .map(|mk| linalg::dot(c, &mk.mul_vec(b)))
        .collect();
    // The top m-1 coefficients vanish by the relative-degree structure.
    for lead in descending.iter().take(m - 1) {
        if lead.abs() > 1e-7 * b1.abs().max(1.0) {
            return Err(Error::AssumptionViolated(format!(
                "numerator degree exceeds n - m (stray coefficient {lead:e}); \
                 relative-degree tolerance too loose"
            )));
        }
    }
    let ascending: Vec<f64> = descending.split_off(m - 1).into_iter().rev().collect();
    if ascending.len() != n - m + 1 {
        return Err(Error::Dimension("numerator extraction failed".into()));
    }
    let zeros = linalg::poly_roots(&ascending, 1e-10, 500)?;
    if zeros.len() != n - m {
        return Err(Error::AssumptionViolated(format!(
            "expected {} transmission zeros, found {}",
            n - m,
            zeros.len()
        )));
    }
    Ok(zeros)
}

/// Per-point result of a plant analysis.
#[derive(Clone, Debug, Serialize)]
pub struct PlantAnalysis {
    pub m: usize,
    pub b1: f64,
    pub zeros: Vec<(f64, f64)>,
    pub minimum_phase: bool,
}

/// Analyze the plant at one parameter point.
pub fn analyze_at(plant: &AffinePlant, w: &[f64]) -> Result<PlantAnalysis> {
    let ss = plant.materialize(w)?;
    let (m, b1) = relative_degree(&ss.a, &ss.b, &ss.c, REL_DEG_TOL)?;
    let zeros = transmission_zeros(&ss.a, &ss.b, &ss.c)?;
    let minimum_phase = zeros.iter().all(|z| z.re < 0.0);
    Ok(PlantAnalysis {
        m,
        b1,
        zeros: zeros.iter().map(|z| (z.re, z.im)).collect(),
        minimum_phase,
    })
}

/// Sampling specification for the parameter box: a uniform grid with
/// `points_per_axis` points per axis (endpoints included), plus all box
/// corners (already covered whenever `points_per_axis >= 2`).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_axis: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { points_per_axis: 3 }
    }
}

impl GridSpec {
    /// All sample points for the given box. For an empty box (no uncertain
    /// parameters) this is the single empty vector.
    pub fn points(&self, bounds: &[[f64; 2]]) -> Vec<Vec<f64>> {
        let ppa = self.points_per_axis.max(2);
        let mut pts: Vec<Vec<f64>> = vec![vec![]];
        for b in bounds {
            let mut next = Vec::with_capacity(pts.len() * ppa);
            for base in &pts {
                for k in 0..ppa {
                    let frac = k as f64 / (ppa - 1) as f64;
                    let mut p = base.clone();
                    p.push(b[0] + (b[1] - b[0]) * frac);
                    next.push(p);
                }
            }
            pts = next;
        }
        pts
    }

    /// Only the 2^{n_w} corners of the box.
    pub fn corners(bounds: &[[f64; 2]]) -> Vec<Vec<f64>> {
        GridSpec { points_per_axis: 2 }.points(bounds)
    }
}

/// One sampled point in an assumption-3 sweep.
#[derive(Clone, Debug, Serialize)]
pub struct BoxAssumptionsSample {
    pub w: Vec<f64>,
    pub m: Option<usize>,
    pub b1: Option<f64>,
    pub max_zero_real_part: Option<f64>,
    pub ok: bool,
    pub reason: Option<String>,
}

/// Result of sweeping the uncertainty box: relative degree constant and
/// equal to the nominal one, `b1(w) > 0`, and all zeros strictly stable at
/// every sampled point.
#[derive(Clone, Debug, Serialize)]
pub struct BoxAssumptionsReport {
    pub nominal_m: usize,
    pub samples: Vec<BoxAssumptionsSample>,
    pub pass: bool,
}

impl BoxAssumptionsReport {
    pub fn violations(&self) -> impl Iterator<Item = &BoxAssumptionsSample> {
        self.samples.iter().filter(|s| !s.ok)
    }
}

/// Check relative degree, positive high-frequency gain, and minimum phase
/// over a sampled grid of the box. Violations are report entries, not
/// errors.
pub fn check_box_assumptions(plant: &AffinePlant, grid: GridSpec) -> Result<BoxAssumptionsReport> {
    let nominal = analyze_at(plant, &vec![0.0; plant.n_params()])?;
    let mut samples = Vec::new();
    let mut pass = true;
    for w in grid.points(&plant.bounds) {
        let sample = match analyze_at(plant, &w) {
            Ok(an) => {
                let mut reason = None;
                if an.m != nominal.m {
                    reason = Some(format!(
                        "relative degree {} differs from nominal {}",
                        an.m, nominal.m
                    ));
                } else if an.b1 <= 0.0 {
                    reason = Some(format!("high-frequency gain b1 = {} not positive", an.b1));
                } else if !an.minimum_phase {
                    reason = Some("a transmission zero has nonnegative real part".into());
                }
                BoxAssumptionsSample {
                    w,
                    m: Some(an.m),
                    b1: Some(an.b1),
                    max_zero_real_part: an
                        .zeros
                        .iter()
                        .map(|z| z.0)
                        .fold(None, |acc: Option<f64>, x| {
                            Some(acc.map_or(x, |a| a.max(x)))
                        }),
                    ok: reason.is_none(),
                    reason,
                }
            }
            Err(e) => BoxAssumptionsSample {
                w,
                m: None,
                b1: None,
                max_zero_real_part: None,
                ok: false,
                reason: Some(e.to_string()),
            },
        };
        pass &= sample.ok;
        samples.push(sample);
    }
    Ok(BoxAssumptionsReport {
        nominal_m: nominal.m,
        samples,
        pass,
    })
}

/// Normal-form decomposition of a plant at a fixed parameter point.
///
/// The change of basis `T` stacks `n - m` zero-dynamics coordinates on top
/// of the output chain `(y, ydot, ..., y^{(m-1)})`. In the new coordinates
/// the dynamics read
///
/// ```text
/// x0dot   = A0z x0 + b0z y
/// xi_rdot = xi_{r+1}              r = 1..m-1
/// xi_mdot = A1z x0 + A2z xi + b1 u
/// y       = xi_1
/// ```
///
/// so the zero-dynamics block is driven by the output alone and its
/// eigenvalues are the transmission zeros.
#[derive(Clone, Debug)]
pub struct NormalForm {
    /// Change of basis: first `n - m` rows are the zero-dynamics
    /// coordinates, last `m` rows are `C, CA, ..., CA^{m-1}`.
    pub t: Matrix,
    pub t_inv: Matrix,
    /// 1-norm condition number of `T`.
    pub cond_t: f64,
    pub m: usize,
    /// Zero-dynamics matrix, `(n-m) x (n-m)`.
    pub a0z: Matrix,
    /// Output-to-zero-dynamics column, length `n - m`.
    pub b0z: Vec<f64>,
    /// Coupling row from zero dynamics into the last chain state, length `n - m`.
    pub a1z: Vec<f64>,
    /// Coupling row from the chain into the last chain state, length `m`.
    pub a2z: Vec<f64>,
    /// High-frequency gain.
    pub b1: f64,
}

/// Compute the normal form of `(A, B, C)`.
///
/// The zero-dynamics rows start from an orthonormal (Householder) basis of
/// the annihilator of `{B, C, CA, ..., CA^{m-2}}` and are then sheared by
/// multiples of `C, CA, ..., CA^{m-2}` so the zero-dynamics derivative
/// depends on the chain only through `y` (the shear multiples keep the rows
/// orthogonal to `B` because `C A^j B = 0` for `j <= m-2`).
pub fn normal_form(a: &Matrix, b: &[f64], c: &[f64]) -> Result<NormalForm> {
    let n = a.rows();
    let (m, b1) = relative_degree(a, b, c, REL_DEG_TOL)?;

    // Output chain rows C, CA, ..., CA^{m-1}.
    let mut chain_rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut row = c.to_vec();
    for _ in 0..m {
        chain_rows.push(row.clone());
        row = a.transpose().mul_vec(&row);
    }
    let ca_m = row; // C A^m

    let t = if n == m {
        Matrix::from_rows(&chain_rows)?
    } else {
        // Annihilated directions: B and the first m-1 chain rows.
        let mut annihilated: Vec<Vec<f64>> = vec![b.to_vec()];
        annihilated.extend(chain_rows.iter().take(m - 1).cloned());
        let w = linalg::orthonormal_complement(&annihilated, n);
        if w.rows() != n - m {
            return Err(Error::Singular(format!(
                "zero-dynamics complement has dimension {} instead of {}",
                w.rows(),
                n - m
            )));
        }

        // Express W A in the basis {W rows, chain rows}: W A = F W + sum g_r CA^{r-1}.
        let mut basis_rows = w.to_rows();
        basis_rows.extend(chain_rows.iter().cloned());
        let basis = Matrix::from_rows(&basis_rows)?;
        // Coordinates X with W A = X * basis, solved row by row against basis^T.
        let wa = w.matmul(a);
        let nm = n - m;
        let mut f = Matrix::zeros(nm, nm);
        let mut g: Vec<Vec<f64>> = vec![vec![0.0; nm]; m]; // g[r][i]
        let basis_t_lu = Lu::factor(&basis.transpose())
            .map_err(|_| Error::Singular("T singular: relative-degree tolerance too loose".into()))?;
        for i in 0..nm {
            let coords = basis_t_lu.solve(wa.row(i));
            for j in 0..nm {
                f[(i, j)] = coords[j];
            }
            for r in 0..m {
                g[r][i] = coords[nm + r];
            }
        }

        // Shear so only the y-column survives: d_{m-1} = -g_m,
        // d_{r-1} = F d_r - g_r for r = m-1 .. 2 (1-based), then
        // T0 = W + sum_r d_r CA^{r-1}.
        let mut d: Vec<Vec<f64>> = vec![vec![0.0; nm]; m]; // d[r] for r = 1..m-1 at indices 1..m-1
        if m >= 2 {
            d[m - 1] = g[m - 1].iter().map(|x| -x).collect();
            for r in (1..m - 1).rev() {
                let fd = f.mul_vec(&d[r + 1]);
                d[r] = fd.iter().zip(&g[r]).map(|(fd_i, g_i)| fd_i - g_i).collect();
            }
        }
        let mut t0 = w.clone();
        for r in 1..m {
            for i in 0..nm {
                let coef = d[r][i];
                if coef != 0.0 {
                    for jcol in 0..n {
                        t0[(i, jcol)] += coef * chain_rows[r - 1][jcol];
                    }
                }
            }
        }

        let mut t_rows = t0.to_rows();
        t_rows.extend(chain_rows.iter().cloned());
        Matrix::from_rows(&t_rows)?
    };

    let t_lu = Lu::factor(&t)
        .map_err(|_| Error::Singular("T singular: relative-degree tolerance too loose".into()))?;
    let t_inv = t_lu.inverse();
    let cond_t = {
        let n1 = |mm: &Matrix| {
            (0..mm.cols())
                .map(|j| (0..mm.rows()).map(|i| mm[(i, j)].abs()).sum::<f64>())
                .fold(0.0f64, f64::max)
        };
        n1(&t) * n1(&t_inv)
    };

    let nm = n - m;
    // Zero-dynamics blocks from T0 A = A0z T0 + b0z C.
    let (a0z, b0z) = if nm == 0 {
        (Matrix::zeros(0, 0), Vec::new())
    } else {
        let t0 = Matrix::from_rows(&t.to_rows()[..nm])?;
        let t0a = t0.matmul(a);
        let t_t_lu = Lu::factor(&t.transpose())?;
        let mut a0z = Matrix::zeros(nm, nm);
        let mut b0z = vec![0.0; nm];
        for i in 0..nm {
            let coords = t_t_lu.solve(t0a.row(i));
            for j in 0..nm {
                a0z[(i, j)] = coords[j];
            }
            b0z[i] = coords[nm];
            // Residual dependence on the rest of the chain must vanish.
            for r in 1..m {
                if coords[nm + r].abs() > 1e-7 * (1.0 + a.max_abs()) {
                    return Err(Error::Singular(format!(
                        "normal-form shear left residual {:.3e} on chain state {}",
                        coords[nm + r],
                        r + 1
                    )));
                }
            }
        }
        (a0z, b0z)
    };

    // Last chain row: C A^m = [A1z | A2z] T.
    let t_t_lu = Lu::factor(&t.transpose())?;
    let coords = t_t_lu.solve(&ca_m);
    let a1z = coords[..nm].to_vec();
    let a2z = coords[nm..].to_vec();

    Ok(NormalForm {
        t,
        t_inv,
        cond_t,
        m,
        a0z,
        b0z,
        a1z,
        a2z,
        b1,
    })
}

impl NormalForm {
    /// Rebuild the full `(A, B, C)` from the blocks and `T`; used to check
    /// the decomposition.
    pub fn reconstruct(&self, n: usize) -> (Matrix, Vec<f64>, Vec<f64>) {
        let nm = n - self.m;
        let mut a_tilde = Matrix::zeros(n, n);
        for i in 0..nm {
            for j in 0..nm {
                a_tilde[(i, j)] = self.a0z[(i, j)];
            }
            a_tilde[(i, nm)] = self.b0z[i];
        }
        for r in 0..self.m - 1 {
            a_tilde[(nm + r, nm + r + 1)] = 1.0;
        }
        for j in 0..nm {
            a_tilde[(n - 1, j)] = self.a1z[j];
        }
        for r in 0..self.m {
            a_tilde[(n - 1, nm + r)] = self.a2z[r];
        }
        let mut b_tilde = vec![0.0; n];
        b_tilde[n - 1] = self.b1;
        let mut c_tilde = vec![0.0; n];
        c_tilde[nm] = 1.0;

        let a_rec = self.t_inv.matmul(&a_tilde).matmul(&self.t);
        let b_rec = self.t_inv.mul_vec(&b_tilde);
        let c_rec = {
            // C = c_tilde T
            let mut out = vec![0.0; n];
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += c_tilde[i] * self.t[(i, j)];
                }
                out[j] = acc;
            }
            out
        };
        (a_rec, b_rec, c_rec)
    }
}
