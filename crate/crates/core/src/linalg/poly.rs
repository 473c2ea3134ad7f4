use super::{Complex, Matrix};
use crate::error::{Error, Result};

/// Characteristic polynomial of a square matrix by the Faddeev–LeVerrier
/// recursion, plus the adjugate chain.
///
/// Returns `(den, num_chain)` where `den` holds the coefficients of
/// `det(sI - A)` in ascending order (monic, length n+1) and `num_chain`
/// the matrices `M_0 .. M_{n-1}` of the resolvent expansion
/// `(sI - A)^{-1} = (sum_k s^{n-1-k} M_k) / det(sI - A)`.
pub fn char_poly(a: &Matrix) -> (Vec<f64>, Vec<Matrix>) {
    assert!(a.is_square());
    let n = a.rows();
    // c[k] is the coefficient of s^{n-k}; c[0] = 1.
    let mut c = vec![0.0; n + 1];
    c[0] = 1.0;
    let mut chain = Vec::with_capacity(n);
    let mut m = Matrix::identity(n);
    for k in 1..=n {
        chain.push(m.clone());
        let am = a.matmul(&m);
        c[k] = -am.trace() / (k as f64);
        m = am;
        for i in 0..n {
            m[(i, i)] += c[k];
        }
    }
    // Ascending order: coefficient of s^j is c[n-j].
    let ascending: Vec<f64> = (0..=n).map(|j| c[n - j]).collect();
    (ascending, chain)
}

/// Evaluate a polynomial with ascending real coefficients at a complex point.
pub fn poly_eval(coeffs: &[f64], z: Complex) -> Complex {
    let mut acc = Complex::real(0.0);
    for &c in coeffs.iter().rev() {
        acc = acc * z + Complex::real(c);
    }
    acc
}

/// All roots of a real polynomial (ascending coefficients) by Durand–Kerner
/// simultaneous iteration.
///
/// Degrees 1 and 2 go through closed forms. Convergence is declared when
/// either every approximant moves by less than `tol * (1 + |z|)` in one
/// pass, or every residual |p(z_k)| drops below a backward-error bound
/// (the latter is what terminates on clustered/multiple roots, where the
/// plain step criterion stalls).
pub fn poly_roots(coeffs: &[f64], tol: f64, max_iter: usize) -> Result<Vec<Complex>> {
    // Trim numerically zero leading coefficients.
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Ok(Vec::new());
    }
    let mut c: Vec<f64> = coeffs.to_vec();
    while c.len() > 1 && c.last().unwrap().abs() <= 1e-14 * scale {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return Ok(Vec::new());
    }
    // Monic normalization.
    let lead = *c.last().unwrap();
    let monic: Vec<f64> = c.iter().map(|x| x / lead).collect();

    if deg == 1 {
        return Ok(vec![Complex::real(-monic[0])]);
    }
    if deg == 2 {
        return Ok(quadratic_roots(monic[0], monic[1]));
    }

    // Cauchy bound on root magnitude.
    let radius = 1.0 + monic[..deg].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut z: Vec<Complex> = (0..deg)
        .map(|k| {
            Complex::from_polar(
                radius * (0.5 + 0.5 * (k as f64 + 1.0) / deg as f64),
                2.0 * std::f64::consts::PI * k as f64 / deg as f64 + 0.7,
            )
        })
        .collect();

    let mut worst_residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut max_step = 0.0f64;
        for k in 0..deg {
            let pk = poly_eval(&monic, z[k]);
            let mut denom = Complex::real(1.0);
            for j in 0..deg {
                if j != k {
                    denom = denom * (z[k] - z[j]);
                }
            }
            if denom.abs() == 0.0 {
                // Coincident approximants: nudge apart deterministically.
                z[k] = z[k] + Complex::new(1e-8 * radius, 1e-8 * radius);
                max_step = f64::INFINITY;
                continue;
            }
            let step = pk / denom;
            z[k] = z[k] - step;
            if !z[k].is_finite() {
                return Err(Error::RootsDiverged { residual: f64::INFINITY });
            }
            max_step = max_step.max(step.abs() / (1.0 + z[k].abs()));
        }
        if max_step <= tol {
            return Ok(z);
        }
        // Backward-error acceptance for clustered roots.
        worst_residual = 0.0;
        let mut all_small = true;
        for zk in &z {
            let s: f64 = monic
                .iter()
                .enumerate()
                .map(|(i, a)| a.abs() * zk.abs().powi(i as i32))
                .sum::<f64>()
                .max(1.0);
            let rel = poly_eval(&monic, *zk).abs() / s;
            worst_residual = worst_residual.max(rel);
            if rel > 1e-13 {
                all_small = false;
            }
        }
        if all_small {
            return Ok(z);
        }
    }
    Err(Error::RootsDiverged {
        residual: worst_residual,
    })
}

/// Roots of z^2 + b z + a (monic, ascending input [a, b, 1]).
fn quadratic_roots(a: f64, b: f64) -> Vec<Complex> {
    let disc = b * b - 4.0 * a;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        // Stable variant: avoid cancellation in the smaller root.
        let q = -0.5 * (b + b.signum() * sq);
        if q == 0.0 {
            return vec![Complex::real(0.0), Complex::real(-b)];
        }
        vec![Complex::real(q), Complex::real(a / q)]
    } else {
        let sq = (-disc).sqrt() / 2.0;
        vec![Complex::new(-b / 2.0, sq), Complex::new(-b / 2.0, -sq)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_real(mut roots: Vec<Complex>) -> Vec<f64> {
        roots.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        roots.iter().map(|z| z.re).collect()
    }

    #[test]
    fn char_poly_2x2() {
        // det(sI - [[0,1],[-2,-3]]) = s^2 + 3s + 2
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![-2.0, -3.0]]).unwrap();
        let (p, _) = char_poly(&a);
        assert!((p[0] - 2.0).abs() < 1e-12);
        assert!((p[1] - 3.0).abs() < 1e-12);
        assert!((p[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_roots() {
        // (s+1)(s+2)(s+3) = s^3 + 6s^2 + 11s + 6
        let roots = poly_roots(&[6.0, 11.0, 6.0, 1.0], 1e-10, 500).unwrap();
        let re = sorted_real(roots);
        assert!((re[0] + 3.0).abs() < 1e-8);
        assert!((re[1] + 2.0).abs() < 1e-8);
        assert!((re[2] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn complex_pair() {
        // s^2 + 2s + 5 -> -1 +- 2i
        let roots = poly_roots(&[5.0, 2.0, 1.0], 1e-10, 500).unwrap();
        for r in roots {
            assert!((r.re + 1.0).abs() < 1e-10);
            assert!((r.im.abs() - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn triple_root_accepted_by_residual() {
        // (s+2)^3 = s^3 + 6 s^2 + 12 s + 8
        let roots = poly_roots(&[8.0, 12.0, 6.0, 1.0], 1e-10, 500).unwrap();
        assert_eq!(roots.len(), 3);
        for r in roots {
            assert!((r.re + 2.0).abs() < 1e-3, "triple root too far: {r}");
            assert!(r.im.abs() < 1e-3);
        }
    }

    #[test]
    fn double_root_at_minus_ten() {
        // Observer-style spectrum: (s+10)^2 (s+1)
        let roots = poly_roots(&[100.0, 120.0, 21.0, 1.0], 1e-10, 500).unwrap();
        let re = sorted_real(roots);
        assert!((re[0] + 10.0).abs() < 1e-4);
        assert!((re[1] + 10.0).abs() < 1e-4);
        assert!((re[2] + 1.0).abs() < 1e-8);
    }
}
