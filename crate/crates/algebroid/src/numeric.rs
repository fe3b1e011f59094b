//! Finite-difference steps and small dense linear algebra helpers shared by
//! the geometric modules.

use crate::error::Result;
use nalgebra::{DMatrix, DVector};

/// Relative scale for first-order central differences.
pub const FD_SCALE: f64 = 1e-6;

/// Wider relative scale used when differentiating a quantity that is itself
/// produced by finite differences; keeps the inner noise from dominating.
pub const FD_NESTED_SCALE: f64 = 1e-4;

/// Relative singular-value cutoff for subspace comparisons on the dual side.
pub const RANK_CUTOFF_DUAL: f64 = 1e-9;

/// Relative singular-value cutoff for iterated-bracket rank growth.
pub const RANK_CUTOFF_BRACKET: f64 = 1e-8;

pub fn fd_step(x: f64) -> f64 {
    FD_SCALE * x.abs().max(1.0)
}

pub fn fd_nested_step(x: f64) -> f64 {
    FD_NESTED_SCALE * x.abs().max(1.0)
}

/// Central difference of `f` at `x` with the standard step.
pub fn central_diff<F>(f: &mut F, x: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    central_diff_step(f, x, fd_step(x))
}

pub fn central_diff_step<F>(f: &mut F, x: f64, h: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

/// Numerical rank: singular values above `rel_cutoff` times the largest.
pub fn rank(m: &DMatrix<f64>, rel_cutoff: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if !(smax > 0.0) {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_cutoff * smax).count()
}

/// Orthonormal basis of the (right) nullspace. The input is padded with zero
/// rows up to square so the decomposition exposes all of V, not just the
/// thin part.
pub fn nullspace(m: &DMatrix<f64>, rel_cutoff: f64) -> Vec<DVector<f64>> {
    let n = m.ncols();
    if n == 0 {
        return Vec::new();
    }
    let rows = m.nrows().max(n);
    let mut sq = DMatrix::zeros(rows, n);
    sq.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("svd with v_t requested");
    let sv = &svd.singular_values;
    let smax = sv.max();
    let mut out = Vec::new();
    for i in 0..sv.len() {
        if sv[i] <= rel_cutoff * smax {
            out.push(vt.row(i).transpose());
        }
    }
    out
}

/// Column spans compared by rank: equal iff rank(A) = rank(B) = rank([A|B]).
pub fn subspaces_equal(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_cutoff: f64) -> bool {
    assert_eq!(a.nrows(), b.nrows(), "subspaces live in the same ambient space");
    let ra = rank(a, rel_cutoff);
    let rb = rank(b, rel_cutoff);
    if ra != rb {
        return false;
    }
    let mut joined = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    joined.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    joined
        .view_mut((0, a.ncols()), (b.nrows(), b.ncols()))
        .copy_from(b);
    rank(&joined, rel_cutoff) == ra
}
