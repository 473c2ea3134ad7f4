use super::Matrix;

/// Matrix exponential by scaling-and-squaring of the Taylor series.
///
/// Reference-quality for desk-scale matrices; used as an independent
/// oracle against the RK4 integrator.
pub fn expm(a: &Matrix) -> Matrix {
    assert!(a.is_square());
    let n = a.rows();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    // Scale so the series argument has norm <= 0.5.
    let norm = one_norm(a);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let b = a.scale(2.0f64.powi(-(s as i32)));

    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=60u32 {
        term = term.matmul(&b).scale(1.0 / k as f64);
        result = result.add(&term);
        if term.max_abs() <= 1e-20 * result.max_abs().max(1.0) {
            break;
        }
    }
    for _ in 0..s {
        result = result.matmul(&result);
    }
    result
}

fn one_norm(a: &Matrix) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..a.cols() {
        let mut s = 0.0;
        for i in 0..a.rows() {
            s += a[(i, j)].abs();
        }
        best = best.max(s);
    }
    best
}
