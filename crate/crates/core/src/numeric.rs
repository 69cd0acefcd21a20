//! Small numerical kernels shared across modules: finite differences,
//! Simpson quadrature on uniform grids, SVD-based rank and projections,
//! least squares and log-log slope fits.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// Default per-coordinate central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference Jacobian of `f` at `x`; column `j` is `∂f/∂x^j`.
pub fn central_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.clone();
    for j in 0..n {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(&xp)?;
        xp[j] = orig - h;
        let fm = f(&xp)?;
        xp[j] = orig;
        cols.push((fp - fm) / (2.0 * h));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    let mut jac = DMatrix::zeros(rows, n);
    for (j, c) in cols.into_iter().enumerate() {
        jac.set_column(j, &c);
    }
    Ok(jac)
}

/// Cumulative integral of uniformly sampled values, starting at zero.
///
/// Even nodes use composite Simpson; odd nodes add one interval integrated
/// with the three-point quadratic rule, so every node is fourth-order accurate.
pub fn cumulative_simpson(values: &[f64], h: f64) -> Vec<f64> {
    let len = values.len();
    let mut out = vec![0.0; len];
    if len < 2 {
        return out;
    }
    if len == 2 {
        out[1] = 0.5 * h * (values[0] + values[1]);
        return out;
    }
    for i in 1..len {
        out[i] = if i % 2 == 0 {
            out[i - 2] + h / 3.0 * (values[i - 2] + 4.0 * values[i - 1] + values[i])
        } else if i == 1 {
            h / 12.0 * (5.0 * values[0] + 8.0 * values[1] - values[2])
        } else {
            out[i - 1] + h / 12.0 * (-values[i - 2] + 8.0 * values[i - 1] + 5.0 * values[i])
        };
    }
    out
}

/// Composite Simpson integral over all nodes (node count should be odd;
/// with an even count the final interval uses the three-point rule).
pub fn simpson(values: &[f64], h: f64) -> f64 {
    cumulative_simpson(values, h).last().copied().unwrap_or(0.0)
}

/// Numerical rank: number of singular values above `tol * σ_max`.
pub fn numerical_rank(mat: &DMatrix<f64>, tol: f64) -> usize {
    if mat.nrows() == 0 || mat.ncols() == 0 {
        return 0;
    }
    let sv = mat.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Orthonormal basis of the column span of `cols`, or `None` when the
/// columns are rank deficient at relative tolerance `tol`.
pub fn span_basis(cols: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let k = cols.ncols();
    let svd = cols.clone().svd(true, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 || svd.singular_values.iter().any(|&s| s <= tol * smax) {
        return None;
    }
    let u = svd.u?;
    Some(u.columns(0, k).into_owned())
}

/// Orthonormal basis of the orthogonal complement of the column span.
pub fn complement_basis(cols: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cols.nrows();
    let k = cols.ncols();
    if k >= n {
        return DMatrix::zeros(n, 0);
    }
    // Full U from the SVD of the n×n padded matrix.
    let mut padded = DMatrix::zeros(n, n);
    padded.columns_mut(0, k).copy_from(cols);
    let svd = padded.svd(true, false);
    let u = svd.u.expect("u requested");
    // Singular values are sorted in descending order; the trailing n-k
    // left singular vectors span the complement.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = DMatrix::zeros(n, n - k);
    for (j, &idx) in order[k..].iter().enumerate() {
        out.set_column(j, &u.column(idx));
    }
    out
}

/// Least-squares solution of `a x ≈ b` via SVD.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.solve(b, 1e-14 * smax.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Formats a float with 17 significant digits for CSV output.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_simpson_is_fourth_order() {
        let h = 0.1;
        let vals: Vec<f64> = (0..12).map(|i| (i as f64 * h).powi(3)).collect();
        let cum = cumulative_simpson(&vals, h);
        for (i, c) in cum.iter().enumerate() {
            let t = i as f64 * h;
            let exact = t.powi(4) / 4.0;
            // odd nodes use a quadratic rule on the last interval
            assert!(
                (c - exact).abs() < 0.3 * h.powi(4),
                "node {i}: {c} vs {exact}"
            );
        }
        let even: Vec<f64> = (0..11).map(|i| (i as f64 * h).powi(3)).collect();
        assert!((simpson(&even, h) - 1.0_f64.powi(4) / 4.0).abs() < 1e-14);
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&e| (e, 3.0 * e * e))
            .collect();
        assert!((loglog_slope(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn complement_is_orthogonal_to_span() {
        let cols = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0]);
        let c = complement_basis(&cols);
        assert_eq!(c.ncols(), 1);
        let prod = cols.transpose() * &c;
        assert!(prod.norm() < 1e-12);
        assert!((c.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_of_dependent_columns() {
        let m = DMatrix::from_column_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(numerical_rank(&m, 1e-8), 2);
        assert!(span_basis(&m, 1e-10).is_none());
    }
}
