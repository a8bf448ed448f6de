//! Dense symmetric positive-definite helpers for the small systems that show
//! up in leaf updates and least squares. Matrices are row-major `dim * dim`.

/// In-place lower Cholesky factor. Returns `false` if the matrix is not
/// numerically positive definite. The strict upper triangle is zeroed.
pub fn cholesky(a: &mut [f64], dim: usize) -> bool {
    debug_assert_eq!(a.len(), dim * dim);
    for j in 0..dim {
        let mut d = a[j * dim + j];
        for k in 0..j {
            d -= a[j * dim + k] * a[j * dim + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * dim + j] = d;
        for i in (j + 1)..dim {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= a[i * dim + k] * a[j * dim + k];
            }
            a[i * dim + j] = s / d;
        }
        for k in (j + 1)..dim {
            a[j * dim + k] = 0.0;
        }
    }
    true
}

/// Solve `L y = b` in place.
pub fn forward_solve(l: &[f64], dim: usize, b: &mut [f64]) {
    for i in 0..dim {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * dim + k] * b[k];
        }
        b[i] = s / l[i * dim + i];
    }
}

/// Solve `L^T x = y` in place.
pub fn backward_solve_transpose(l: &[f64], dim: usize, y: &mut [f64]) {
    for i in (0..dim).rev() {
        let mut s = y[i];
        for k in (i + 1)..dim {
            s -= l[k * dim + i] * y[k];
        }
        y[i] = s / l[i * dim + i];
    }
}

/// Least squares fit of `y` on the columns of `design` (row-major, `n x k`).
/// Returns the coefficients, or `None` when the normal equations are singular.
pub fn least_squares(design: &[f64], n: usize, k: usize, y: &[f64]) -> Option<Vec<f64>> {
    let mut xtx = vec![0.0; k * k];
    let mut xty = vec![0.0; k];
    for i in 0..n {
        let row = &design[i * k..(i + 1) * k];
        for a in 0..k {
            xty[a] += row[a] * y[i];
            for b in 0..=a {
                xtx[a * k + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[b * k + a] = xtx[a * k + b];
        }
    }
    if !cholesky(&mut xtx, k) {
        return None;
    }
    // Reject near-singular systems: a tiny pivot relative to the largest one.
    let diag: Vec<f64> = (0..k).map(|i| xtx[i * k + i]).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if diag.iter().any(|d| *d < max * 1e-7) {
        return None;
    }
    forward_solve(&xtx, k, &mut xty);
    backward_solve_transpose(&xtx, k, &mut xty);
    Some(xty)
}
