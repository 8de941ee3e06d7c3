//! Small dense linear algebra on row-major slices.
//!
//! State dimensions here are tiny (1 to a handful), and these routines run
//! inside the O(N²·M) smoothing kernel, so they work in caller-owned buffers
//! and never allocate.

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Writes Σ = σσᵀ (`dim_x × dim_x`) from a row-major `dim_x × dim_w` σ.
pub fn outer_self(sigma: &[f64], dim_x: usize, dim_w: usize, out: &mut [f64]) {
    for i in 0..dim_x {
        for k in 0..=i {
            let mut acc = 0.0;
            for w in 0..dim_w {
                acc += sigma[i * dim_w + w] * sigma[k * dim_w + w];
            }
            out[i * dim_x + k] = acc;
            out[k * dim_x + i] = acc;
        }
    }
}

/// In-place lower Cholesky factorisation. Returns `false` when the matrix is
/// not (numerically) symmetric positive definite. The strict upper triangle
/// is zeroed.
pub fn cholesky_in_place(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / ljj;
        }
        for i in 0..j {
            a[i * d + j] = 0.0;
        }
    }
    true
}

/// Solves (L Lᵀ) x = b in place given the lower factor.
pub fn cholesky_solve(l: &[f64], d: usize, b: &mut [f64]) {
    for i in 0..d {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * d + k] * b[k];
        }
        b[i] = v / l[i * d + i];
    }
    for i in (0..d).rev() {
        let mut v = b[i];
        for k in (i + 1)..d {
            v -= l[k * d + i] * b[k];
        }
        b[i] = v / l[i * d + i];
    }
}

/// log |L Lᵀ| from the lower factor.
pub fn cholesky_logdet(l: &[f64], d: usize) -> f64 {
    (0..d).map(|i| l[i * d + i].ln()).sum::<f64>() * 2.0
}

/// Writes (L Lᵀ)⁻¹ into `out`; `col` is scratch of length `d`.
pub fn cholesky_inverse(l: &[f64], d: usize, out: &mut [f64], col: &mut [f64]) {
    for c in 0..d {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[c] = 1.0;
        cholesky_solve(l, d, col);
        for r in 0..d {
            out[r * d + c] = col[r];
        }
    }
}

/// Solves the square system σ z = r by Gaussian elimination with partial
/// pivoting. `a` is a scratch copy of σ (destroyed). Returns `false` if σ is
/// singular.
pub fn solve_square(a: &mut [f64], d: usize, r: &mut [f64]) -> bool {
    if d == 1 {
        if a[0] == 0.0 || !a[0].is_finite() {
            return false;
        }
        r[0] /= a[0];
        return true;
    }
    for col in 0..d {
        let mut piv = col;
        for row in (col + 1)..d {
            if a[row * d + col].abs() > a[piv * d + col].abs() {
                piv = row;
            }
        }
        if a[piv * d + col] == 0.0 || !a[piv * d + col].is_finite() {
            return false;
        }
        if piv != col {
            for k in 0..d {
                a.swap(col * d + k, piv * d + k);
            }
            r.swap(col, piv);
        }
        let p = a[col * d + col];
        for row in (col + 1)..d {
            let f = a[row * d + col] / p;
            if f != 0.0 {
                for k in col..d {
                    a[row * d + k] -= f * a[col * d + k];
                }
                r[row] -= f * r[col];
            }
        }
    }
    for row in (0..d).rev() {
        let mut v = r[row];
        for k in (row + 1)..d {
            v -= a[row * d + k] * r[k];
        }
        r[row] = v / a[row * d + row];
    }
    true
}

/// Row-major matrix-vector product `out = A v` for a `rows × cols` matrix.
pub fn mat_vec(a: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let mut acc = 0.0;
        for c in 0..cols {
            acc += a[r * cols + c] * v[c];
        }
        out[r] = acc;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable log Σ exp(vᵢ); `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs_matrix() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let mut l = a;
        assert!(cholesky_in_place(&mut l, 3));
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert!((v - a[i * 3 + j]).abs() < 1e-12);
            }
        }
        let mut inv = [0.0; 9];
        let mut col = [0.0; 3];
        cholesky_inverse(&l, 3, &mut inv, &mut col);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12);
            }
        }
        // det = 4(15-1) - 2(6-0.6) + 0.6(2-3) = 56 - 10.8 - 0.6 = 44.6
        assert!((cholesky_logdet(&l, 3) - 44.6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite_and_singular() {
        let mut a = [1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_in_place(&mut a, 2));
        let mut z = [0.0];
        assert!(!cholesky_in_place(&mut z, 1));
        let mut nan = [f64::NAN];
        assert!(!cholesky_in_place(&mut nan, 1));
    }

    #[test]
    fn square_solve_matches_direct() {
        let sigma = [0.0, 2.0, 3.0, 1.0];
        let mut a = sigma;
        let mut r = [4.0, 5.0];
        assert!(solve_square(&mut a, 2, &mut r));
        // 2 z1 = 4, 3 z0 + z1 = 5
        assert!((r[1] - 2.0).abs() < 1e-14);
        assert!((r[0] - 1.0).abs() < 1e-14);
        let mut singular = [1.0, 2.0, 2.0, 4.0];
        let mut r = [1.0, 1.0];
        assert!(!solve_square(&mut singular, 2, &mut r));
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
