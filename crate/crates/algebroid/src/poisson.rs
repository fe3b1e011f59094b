//! The linear almost-Poisson side of the story: the bundle data induces a
//! bracket on functions over the dual bundle whose matrix has the anchor in
//! the base-fiber block and the momentum-contracted structure functions in
//! the fiber-fiber block. Jacobi holds iff the underlying bundle is a Lie
//! algebroid; the defect is measured by [`jacobiator`].

use crate::algebroid::{CoordFn, Section1Form, SkewAlgebroid};
use crate::error::{Error, Result};
use crate::expr::{Expr, VarBinding};
use crate::numeric::{self, RANK_CUTOFF_DUAL};
use nalgebra::{DMatrix, DVector};

/// A point of the dual bundle: base coordinates plus fiber momenta.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl DualPoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        DualPoint { q, p }
    }

    pub fn dim(&self) -> usize {
        self.q.len() + self.p.len()
    }
}

/// Momentum coordinates are always named `p1..pn` in expressions.
pub fn fiber_name(alpha: usize) -> String {
    format!("p{}", alpha + 1)
}

/// Binding with parameters, base coordinates, then fiber momenta.
pub fn dual_binding(a: &SkewAlgebroid, x: &DualPoint) -> Result<VarBinding> {
    if x.p.len() != a.rank() {
        return Err(Error::shape(format!(
            "dual point has {} momenta, bundle rank is {}",
            x.p.len(),
            a.rank()
        )));
    }
    let mut b = a.binding_for(&x.q)?;
    for (alpha, &v) in x.p.iter().enumerate() {
        let name = fiber_name(alpha);
        if b.get(&name).is_some() {
            return Err(Error::model(format!(
                "fiber coordinate `{name}` collides with a base coordinate or parameter"
            )));
        }
        b.set(&name, v);
    }
    Ok(b)
}

/// A scalar function on the dual bundle.
#[derive(Debug, Clone)]
pub struct ScalarOnDual {
    expr: Expr,
}

impl ScalarOnDual {
    pub fn new(a: &SkewAlgebroid, expr: Expr) -> Result<Self> {
        for v in expr.free_vars() {
            let fiber_ok = (0..a.rank()).any(|alpha| fiber_name(alpha) == v);
            let ok = fiber_ok
                || a.base_coords().contains(&v)
                || a.params().get(&v).is_some();
            if !ok {
                return Err(Error::model(format!(
                    "dual scalar references unknown variable `{v}`"
                )));
            }
        }
        Ok(ScalarOnDual { expr })
    }

    pub fn parse_for(a: &SkewAlgebroid, src: &str) -> Result<Self> {
        ScalarOnDual::new(a, crate::expr::parse(src)?)
    }

    /// The coordinate function `q^i` or `p_alpha` as a dual scalar.
    pub fn coordinate(a: &SkewAlgebroid, c: CoordFn) -> ScalarOnDual {
        let name = match c {
            CoordFn::Base(i) => a.base_coords()[i].clone(),
            CoordFn::Fiber(alpha) => fiber_name(alpha),
        };
        ScalarOnDual { expr: Expr::Var(name) }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn eval(&self, a: &SkewAlgebroid, x: &DualPoint) -> Result<f64> {
        self.expr.eval(&dual_binding(a, x)?)
    }
}

/// Gradient of a dual scalar over (q, p) by central differences with the
/// standard step, reusing one binding.
fn grad_dual(
    a: &SkewAlgebroid,
    f: &Expr,
    b: &mut VarBinding,
    x: &DualPoint,
) -> Result<DVector<f64>> {
    let m = x.q.len();
    let n = x.p.len();
    let off = a.coord_offset();
    let mut out = DVector::zeros(m + n);
    for k in 0..(m + n) {
        let slot = off + k;
        let v = b.get_at(slot);
        let h = numeric::fd_step(v);
        b.set_at(slot, v + h);
        let fp = f.eval(b)?;
        b.set_at(slot, v - h);
        let fm = f.eval(b)?;
        b.set_at(slot, v);
        out[k] = (fp - fm) / (2.0 * h);
    }
    Ok(out)
}

/// Gradient of an opaque function of a dual point. `nested` selects the
/// wider step used when the function is itself built from finite
/// differences.
fn grad_closure(
    g: &mut dyn FnMut(&DualPoint) -> Result<f64>,
    x: &DualPoint,
    nested: bool,
) -> Result<DVector<f64>> {
    let m = x.q.len();
    let n = x.p.len();
    fn slot(y: &mut DualPoint, k: usize) -> &mut f64 {
        let m = y.q.len();
        if k < m { &mut y.q[k] } else { &mut y.p[k - m] }
    }
    let mut out = DVector::zeros(m + n);
    let mut y = x.clone();
    for k in 0..(m + n) {
        let v = *slot(&mut y, k);
        let h = if nested {
            numeric::fd_nested_step(v)
        } else {
            numeric::fd_step(v)
        };
        *slot(&mut y, k) = v + h;
        let fp = g(&y)?;
        *slot(&mut y, k) = v - h;
        let fm = g(&y)?;
        *slot(&mut y, k) = v;
        out[k] = (fp - fm) / (2.0 * h);
    }
    Ok(out)
}

/// The bracket matrix at a dual point, rows and columns ordered
/// (q^1..q^m, p_1..p_n): zero base-base block, the anchor in the base-fiber
/// block, and entry (p_alpha, p_beta) contracting the structure functions
/// with the momenta.
pub fn lambda_matrix(a: &SkewAlgebroid, x: &DualPoint) -> Result<DMatrix<f64>> {
    let m = a.base_dim();
    let n = a.rank();
    let b = dual_binding(a, x)?;
    let rho = a.anchor_matrix_with(&b)?;
    let c = a.structure_at(&b)?;
    let mut lam = DMatrix::zeros(m + n, m + n);
    for i in 0..m {
        for alpha in 0..n {
            lam[(i, m + alpha)] = rho[(i, alpha)];
            lam[(m + alpha, i)] = -rho[(i, alpha)];
        }
    }
    for alpha in 0..n {
        for beta in (alpha + 1)..n {
            let mut k = 0.0;
            for gamma in 0..n {
                k -= c.get(alpha, beta, gamma) * x.p[gamma];
            }
            lam[(m + alpha, m + beta)] = k;
            lam[(m + beta, m + alpha)] = -k;
        }
    }
    Ok(lam)
}

/// Almost-Poisson bracket of two dual scalars.
pub fn bracket(
    a: &SkewAlgebroid,
    phi: &ScalarOnDual,
    psi: &ScalarOnDual,
    x: &DualPoint,
) -> Result<f64> {
    let lam = lambda_matrix(a, x)?;
    let mut b = dual_binding(a, x)?;
    let gphi = grad_dual(a, &phi.expr, &mut b, x)?;
    let gpsi = grad_dual(a, &psi.expr, &mut b, x)?;
    Ok((gphi.transpose() * lam * gpsi)[(0, 0)])
}

/// Bracket where the second operand is an opaque function; used for nesting.
fn bracket_with_closure(
    a: &SkewAlgebroid,
    phi: &ScalarOnDual,
    g: &mut dyn FnMut(&DualPoint) -> Result<f64>,
    x: &DualPoint,
) -> Result<f64> {
    let lam = lambda_matrix(a, x)?;
    let mut b = dual_binding(a, x)?;
    let gphi = grad_dual(a, &phi.expr, &mut b, x)?;
    let gg = grad_closure(g, x, true)?;
    Ok((gphi.transpose() * lam * gg)[(0, 0)])
}

/// Jacobi defect {phi,{psi,chi}} + {psi,{chi,phi}} + {chi,{phi,psi}}. The
/// inner brackets are differentiated as opaque functions with the nested
/// step, so second-order finite-difference noise stays well under the 1e-3
/// scale this is compared against.
pub fn jacobiator(
    a: &SkewAlgebroid,
    phi: &ScalarOnDual,
    psi: &ScalarOnDual,
    chi: &ScalarOnDual,
    x: &DualPoint,
) -> Result<f64> {
    let t1 = bracket_with_closure(a, phi, &mut |y| bracket(a, psi, chi, y), x)?;
    let t2 = bracket_with_closure(a, psi, &mut |y| bracket(a, chi, phi, y), x)?;
    let t3 = bracket_with_closure(a, chi, &mut |y| bracket(a, phi, psi, y), x)?;
    Ok(t1 + t2 + t3)
}

/// Hamiltonian vector field at a dual point, components ordered
/// (dq^1..dq^m, dp_1..dp_n):
///
/// ```text
/// dq^i = rho^i_alpha dh/dp_alpha
/// dp_a = -(rho^i_a dh/dq^i + C^g_{ab} p_g dh/dp_b)
/// ```
///
/// which is the contraction of the bracket matrix with dh.
pub fn hamiltonian_vf(a: &SkewAlgebroid, h: &ScalarOnDual, x: &DualPoint) -> Result<Vec<f64>> {
    let m = a.base_dim();
    let n = a.rank();
    let mut b = dual_binding(a, x)?;
    let rho = a.anchor_matrix_with(&b)?;
    let c = a.structure_at(&b)?;
    let grad = grad_dual(a, &h.expr, &mut b, x)?;
    let mut out = vec![0.0; m + n];
    for i in 0..m {
        let mut v = 0.0;
        for alpha in 0..n {
            v += rho[(i, alpha)] * grad[m + alpha];
        }
        out[i] = v;
    }
    for alpha in 0..n {
        let mut v = 0.0;
        for i in 0..m {
            v += rho[(i, alpha)] * grad[i];
        }
        for gamma in 0..n {
            if x.p[gamma] == 0.0 {
                continue;
            }
            for beta in 0..n {
                v += c.get(alpha, beta, gamma) * x.p[gamma] * grad[m + beta];
            }
        }
        out[m + alpha] = -v;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Subspace propositions

/// Tangent space of the section graph along anchored directions: column
/// gamma has base part rho^i_gamma and fiber part the directional derivative
/// of each dual component along that anchored field.
fn section_tangent(a: &SkewAlgebroid, alpha: &Section1Form, q: &[f64]) -> Result<DMatrix<f64>> {
    let m = a.base_dim();
    let n = a.rank();
    let mut b = alpha.binding_for(a, q)?;
    let rho = a.anchor_matrix_with(&b)?;
    let mut grads = Vec::with_capacity(n);
    for e in alpha.components() {
        grads.push(a.grad_base(e, &mut b, q)?);
    }
    let mut l = DMatrix::zeros(m + n, n);
    for gamma in 0..n {
        for i in 0..m {
            l[(i, gamma)] = rho[(i, gamma)];
        }
        for comp in 0..n {
            let mut v = 0.0;
            for i in 0..m {
                v += grads[comp][i] * rho[(i, gamma)];
            }
            l[(m + comp, gamma)] = v;
        }
    }
    Ok(l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceReport {
    pub dim: usize,
    pub holds: bool,
}

/// Checks whether the graph tangent space L at alpha(q) satisfies
/// #_Lambda(L^0) = L, the Lagrangian-type condition that characterizes
/// closed sections.
pub fn lagrangian_subspace_check(
    a: &SkewAlgebroid,
    alpha: &Section1Form,
    q: &[f64],
) -> Result<SubspaceReport> {
    let l = section_tangent(a, alpha, q)?;
    let x = DualPoint::new(q.to_vec(), alpha.value(a, q)?);
    let lam = lambda_matrix(a, &x)?;
    let dim_l = numeric::rank(&l, RANK_CUTOFF_DUAL);
    let annihilator = numeric::nullspace(&l.transpose(), RANK_CUTOFF_DUAL);
    let mut image = DMatrix::zeros(a.base_dim() + a.rank(), annihilator.len());
    for (idx, eta) in annihilator.iter().enumerate() {
        image.set_column(idx, &(&lam * eta));
    }
    let holds = numeric::subspaces_equal(&image, &l, RANK_CUTOFF_DUAL);
    Ok(SubspaceReport { dim: dim_l, holds })
}

/// Checks Ker #_Lambda(alpha(q)) within the annihilator of the graph tangent
/// space. Requires alpha to be a cocycle at q; that is the proposition's
/// hypothesis, so violating it is an error, not a `false`.
pub fn kernel_inclusion_check(a: &SkewAlgebroid, alpha: &Section1Form, q: &[f64]) -> Result<bool> {
    let resid = a.cocycle_residual(alpha, q)?;
    if resid > 1e-6 {
        return Err(Error::Precondition(format!(
            "kernel inclusion assumes a cocycle; residual is {resid:.3e} at the given point"
        )));
    }
    let l = section_tangent(a, alpha, q)?;
    let x = DualPoint::new(q.to_vec(), alpha.value(a, q)?);
    let lam = lambda_matrix(a, &x)?;
    let kernel = numeric::nullspace(&lam, RANK_CUTOFF_DUAL);
    for eta in &kernel {
        for gamma in 0..l.ncols() {
            let col = l.column(gamma);
            let dot: f64 = eta.dot(&col.clone_owned());
            if dot.abs() > 1e-8 * col.norm().max(1.0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
