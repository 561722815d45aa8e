//! Small dense solvers and deterministic reductions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Relative threshold below which a Gram pivot counts as zero.
pub(crate) const RANK_TOL: f64 = 1e-10;

/// Indices of columns that are (numerically) linear combinations of the
/// columns before them, found by a greedy Cholesky sweep over `gram`.
pub(crate) fn collinear_columns(gram: &DMatrix<f64>) -> Vec<usize> {
    let p = gram.nrows();
    let scale = (0..p).map(|k| gram[(k, k)].abs()).fold(0.0, f64::max);
    let mut kept: Vec<usize> = Vec::new();
    let mut bad = Vec::new();
    // rows of the Cholesky factor for kept columns
    let mut factor: Vec<Vec<f64>> = Vec::new();
    for k in 0..p {
        let mut l = Vec::with_capacity(kept.len());
        for (a, &ka) in kept.iter().enumerate() {
            let mut v = gram[(k, ka)];
            for b in 0..a {
                v -= l[b] * factor[a][b];
            }
            l.push(v / factor[a][a]);
        }
        let resid = gram[(k, k)] - l.iter().map(|v| v * v).sum::<f64>();
        let diag = gram[(k, k)].abs();
        if diag <= RANK_TOL * scale || resid <= RANK_TOL * diag.max(f64::MIN_POSITIVE) {
            bad.push(k);
        } else {
            l.push(resid.sqrt());
            factor.push(l);
            kept.push(k);
        }
    }
    bad
}

/// Solves `gram · x = rhs` for a symmetric positive definite `gram`.
/// Returns the indices of offending columns when it is singular.
pub(crate) fn solve_spd(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, Vec<usize>> {
    let bad = collinear_columns(gram);
    if !bad.is_empty() {
        return Err(bad);
    }
    let chol = gram.clone().cholesky().ok_or_else(|| vec![gram.nrows().saturating_sub(1)])?;
    Ok(chol.solve(rhs))
}

/// Least squares fit with classical standard errors.
#[derive(Debug, Clone)]
pub(crate) struct LeastSquares {
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
}

/// Ordinary least squares of `y` on the row-major `n × k` matrix `x`,
/// solved through a QR factorization.
pub(crate) fn least_squares(x: &[f64], k: usize, y: &[f64]) -> Result<LeastSquares, Vec<usize>> {
    let n = y.len();
    let xm = DMatrix::from_row_slice(n, k, x);
    let gram = xm.transpose() * &xm;
    let bad = collinear_columns(&gram);
    if !bad.is_empty() || n < k {
        return Err(if bad.is_empty() { (0..k).collect() } else { bad });
    }
    let yv = DVector::from_column_slice(y);
    let qr = xm.clone().qr();
    let qty = qr.q().transpose() * &yv;
    let r = qr.r();
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| (0..k).collect::<Vec<_>>())?;
    let resid = &yv - &xm * &coef;
    let dof = (n as f64 - k as f64).max(1.0);
    let sigma2 = resid.norm_squared() / dof;
    let inv = gram.cholesky().map(|c| c.inverse()).ok_or_else(|| (0..k).collect::<Vec<_>>())?;
    let se = (0..k).map(|j| (sigma2 * inv[(j, j)]).max(0.0).sqrt()).collect();
    Ok(LeastSquares { coef: coef.iter().copied().collect(), se })
}

/// Fixed block length for parallel accumulation; independent of the thread
/// count so partial sums are identical however the work is scheduled.
pub(crate) const BLOCK: usize = 64;

/// Sums `f(block)` over `0..n_blocks` in parallel and reduces the partial
/// vectors with a fixed pairwise tree, so the result is bit-stable across
/// thread counts.
pub(crate) fn block_sum<F>(n_blocks: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let parts: Vec<Vec<f64>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; width];
            f(b, &mut acc);
            acc
        })
        .collect();
    tree_reduce(parts, width)
}

pub(crate) fn tree_reduce(mut parts: Vec<Vec<f64>>, width: usize) -> Vec<f64> {
    if parts.is_empty() {
        return vec![0.0; width];
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_duplicate_column() {
        // columns: a, 2a, b
        let x = DMatrix::from_row_slice(4, 3, &[1., 2., 0., 2., 4., 1., 3., 6., 5., 4., 8., 2.]);
        let gram = x.transpose() * &x;
        assert_eq!(collinear_columns(&gram), vec![1]);
    }

    #[test]
    fn zero_column_is_collinear() {
        let x = DMatrix::from_row_slice(3, 2, &[1., 0., 2., 0., 3., 0.]);
        assert_eq!(collinear_columns(&(x.transpose() * &x)), vec![1]);
    }

    #[test]
    fn least_squares_exact_fit() {
        let x: Vec<f64> = (0..10).flat_map(|i| [1.0, i as f64, (i * i) as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 1.0 - 2.0 * i as f64 + 0.5 * (i * i) as f64).collect();
        let fit = least_squares(&x, 3, &y).unwrap();
        for (c, t) in fit.coef.iter().zip([1.0, -2.0, 0.5]) {
            assert!((c - t).abs() < 1e-10);
        }
        assert!(fit.se.iter().all(|s| *s < 1e-9));
    }

    #[test]
    fn tree_reduce_matches_sequential_on_integers() {
        let parts: Vec<Vec<f64>> = (0..37).map(|i| vec![i as f64, 1.0]).collect();
        assert_eq!(tree_reduce(parts, 2), vec![666.0, 37.0]);
        assert_eq!(tree_reduce(vec![], 3), vec![0.0; 3]);
    }
}
