//! Small dense linear-algebra helpers over nalgebra: row-major adapters,
//! least squares, and a Lawson-Hanson nonnegative least squares used by the
//! anchor feasibility programs.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};

/// Builds a nalgebra matrix from a row-major slice.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(data.len(), rows * cols);
    DMatrix::from_row_slice(rows, cols, data)
}

/// Flattens a nalgebra matrix to row-major.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Solves `a x = b` by LU with partial pivoting.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| CoreError::internal("LU solve failed: matrix is singular"))
}

/// Inverts a square matrix, reporting a 1-norm condition estimate on failure
/// and alongside the result.
pub fn invert_with_condition(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let norm_a = one_norm(a);
    match a.clone().try_inverse() {
        Some(inv) => {
            let cond = norm_a * one_norm(&inv);
            Ok((inv, cond))
        }
        None => Err(CoreError::invalid(format!(
            "matrix is singular (1-norm {norm_a:.3e}); cannot invert"
        ))),
    }
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|c| a.column(c).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Least-squares solve of `a x = b` via SVD. Returns the minimizer.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, svd_rank_eps(a, &svd.singular_values))
        .map_err(|e| CoreError::internal(format!("SVD least squares failed: {e}")))
}

/// Least-squares solve with a matrix right-hand side (one solve per column).
pub fn lstsq_multi(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let eps = svd_rank_eps(a, &svd.singular_values);
    svd.solve(b, eps)
        .map_err(|e| CoreError::internal(format!("SVD least squares failed: {e}")))
}

/// Numerical rank of `a` under the usual `max_dim * eps * sigma_max` cutoff.
pub fn rank(a: &DMatrix<f64>) -> usize {
    let svd = a.clone().svd(false, false);
    let cutoff = svd_rank_eps(a, &svd.singular_values);
    svd.singular_values.iter().filter(|&&s| s > cutoff).count()
}

fn svd_rank_eps(a: &DMatrix<f64>, singular_values: &DVector<f64>) -> f64 {
    let smax = singular_values.iter().cloned().fold(0.0, f64::max);
    smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64
}

/// Lawson-Hanson nonnegative least squares: minimizes `|a x - b|_2` over
/// `x >= 0`. Returns the solution and the 2-norm residual.
///
/// Deterministic; used as the feasibility program behind anchor discovery
/// ("is this feature row a convex combination of the others?").
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = a.ncols();
    let mut passive = vec![false; n];
    let mut x = DVector::zeros(n);
    let mut residual = b - a * &x;
    // Inner LS solves are on at most min(nrows, n) passive columns; the outer
    // loop adds one column at a time, so 4n iterations is a generous cap.
    let max_outer = 4 * n + 16;
    let tol = 1e-12 * (one_norm(a) * b.amax().max(1.0)).max(1.0);

    for _ in 0..max_outer {
        let w = a.transpose() * &residual;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && w[j] > tol {
                match best {
                    Some((_, bw)) if bw >= w[j] => {}
                    _ => best = Some((j, w[j])),
                }
            }
        }
        let Some((enter, _)) = best else { break };
        passive[enter] = true;

        for _ in 0..n + 2 {
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(cols.iter());
            let z_sub = match sub.clone().svd(true, true).solve(&b.clone(), 1e-13) {
                Ok(z) => z,
                Err(_) => {
                    // Degenerate subproblem: drop the entering column and stop.
                    passive[enter] = false;
                    break;
                }
            };
            if z_sub.iter().all(|&z| z > tol) {
                x.fill(0.0);
                for (idx, &j) in cols.iter().enumerate() {
                    x[j] = z_sub[idx];
                }
                break;
            }
            // Step toward z as far as nonnegativity allows, then drop the
            // variables that hit zero.
            let mut alpha = f64::INFINITY;
            for (idx, &j) in cols.iter().enumerate() {
                if z_sub[idx] <= tol {
                    let denom = x[j] - z_sub[idx];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (idx, &j) in cols.iter().enumerate() {
                x[j] += alpha * (z_sub[idx] - x[j]);
                if x[j] <= tol {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if cols.iter().all(|&j| !passive[j]) {
                break;
            }
        }
        residual = b - a * &x;
    }
    let norm = residual.norm();
    (x, norm)
}
