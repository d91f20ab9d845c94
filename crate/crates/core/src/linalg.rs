use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

/// Solve the square sparse system given by (possibly repeated) triplets.
/// Returns `None` when the matrix is singular or the solution is not finite.
pub(crate) fn solve_sparse(n: usize, triplets: &[Triplet<usize, usize, f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    if n == 0 {
        return Some(Vec::new());
    }
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, triplets).ok()?;
    let lu = a.sp_lu().ok()?;
    let b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    let x = lu.solve(&b);
    let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// `Jᵀ r` for a triplet matrix.
pub(crate) fn transpose_apply(n: usize, triplets: &[Triplet<usize, usize, f64>], r: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for t in triplets {
        out[t.col] += t.val * r[t.row];
    }
    out
}

/// `J x` for a triplet matrix.
#[cfg(test)]
pub(crate) fn apply(n: usize, triplets: &[Triplet<usize, usize, f64>], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for t in triplets {
        out[t.row] += t.val * x[t.col];
    }
    out
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
