//! Time integration of the Hamiltonian and Lagrangian flows, Hamilton-Jacobi
//! residuals, and the equivalence harness that compares Hamiltonian lifts
//! with projected base dynamics.

use crate::algebroid::{Section1Form, SkewAlgebroid};
use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::poisson::{self, DualPoint, ScalarOnDual};
use std::fmt::Write as _;

/// A point of the bundle itself: base coordinates plus frame velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPoint {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl VelocityPoint {
    pub fn new(q: Vec<f64>, v: Vec<f64>) -> Self {
        VelocityPoint { q, v }
    }
}

/// Mechanical data on an algebroid whose frame is orthonormal for the
/// kinetic metric: the Lagrangian is half the squared frame velocity minus
/// `potential`, and the associated Hamiltonian is half the squared momentum
/// plus `potential`.
#[derive(Debug, Clone)]
pub struct MechanicalSystem<'a> {
    algebroid: &'a SkewAlgebroid,
    potential: Option<Expr>,
}

impl<'a> MechanicalSystem<'a> {
    pub fn new(algebroid: &'a SkewAlgebroid, potential: Option<Expr>) -> Result<Self> {
        if let Some(v) = &potential {
            for name in v.free_vars() {
                let ok = algebroid.base_coords().contains(&name)
                    || algebroid.params().get(&name).is_some();
                if !ok {
                    return Err(Error::model(format!(
                        "potential references unknown variable `{name}`"
                    )));
                }
            }
        }
        Ok(MechanicalSystem { algebroid, potential })
    }

    pub fn algebroid(&self) -> &'a SkewAlgebroid {
        self.algebroid
    }

    pub fn potential(&self) -> Option<&Expr> {
        self.potential.as_ref()
    }

    /// The dual-side Hamiltonian: half the squared momenta plus the
    /// potential. The frame orthonormality convention makes the Legendre map
    /// the identity on components.
    pub fn hamiltonian(&self) -> Result<ScalarOnDual> {
        use expr::build::{add, mul, pow};
        let n = self.algebroid.rank();
        let mut kin = Expr::Num(0.0);
        for alpha in 0..n {
            kin = add(
                kin,
                pow(Expr::Var(poisson::fiber_name(alpha)), Expr::Num(2.0)),
            );
        }
        let mut h = mul(Expr::Num(0.5), kin);
        if let Some(v) = &self.potential {
            h = add(h, v.clone());
        }
        ScalarOnDual::new(self.algebroid, h)
    }

    /// Energy of a velocity point: half the squared frame velocity plus the
    /// potential.
    pub fn energy(&self, x: &VelocityPoint) -> Result<f64> {
        let b = self.algebroid.binding_for(&x.q)?;
        let mut e = 0.5 * x.v.iter().map(|v| v * v).sum::<f64>();
        if let Some(v) = &self.potential {
            e += v.eval(&b)?;
        }
        Ok(e)
    }
}

// ---------------------------------------------------------------------------
// Trajectories

/// How the state rows of a [`Trajectory`] are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateLayout {
    /// (q^1..q^m, p_1..p_n)
    Dual { base: usize },
    /// (q^1..q^m, v^1..v^n)
    Velocity { base: usize },
    /// No interpretation attached.
    Flat,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub layout: StateLayout,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial row")
    }

    fn with_layout(mut self, layout: StateLayout) -> Trajectory {
        self.layout = layout;
        self
    }

    /// CSV with header `t,q1..qm,s1..sn` where `s` is `p` or `v` depending
    /// on the layout, and rows printed with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let width = self.states.first().map(|s| s.len()).unwrap_or(0);
        let mut header = String::from("t");
        match self.layout {
            StateLayout::Dual { base } => {
                for i in 0..base {
                    let _ = write!(header, ",q{}", i + 1);
                }
                for alpha in 0..width.saturating_sub(base) {
                    let _ = write!(header, ",p{}", alpha + 1);
                }
            }
            StateLayout::Velocity { base } => {
                for i in 0..base {
                    let _ = write!(header, ",q{}", i + 1);
                }
                for alpha in 0..width.saturating_sub(base) {
                    let _ = write!(header, ",v{}", alpha + 1);
                }
            }
            StateLayout::Flat => {
                for k in 0..width {
                    let _ = write!(header, ",x{}", k + 1);
                }
            }
        }
        let mut out = header;
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.states) {
            let _ = write!(out, "{t:.16e}");
            for v in row {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// The integrator

fn rk4_step(
    rhs: &mut dyn FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    t: f64,
    x: &mut [f64],
    h: f64,
) -> Result<()> {
    let d = x.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];

    rhs(t, x, &mut k1)?;
    for i in 0..d {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    rhs(t + 0.5 * h, &tmp, &mut k2)?;
    for i in 0..d {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    rhs(t + 0.5 * h, &tmp, &mut k3)?;
    for i in 0..d {
        tmp[i] = x[i] + h * k3[i];
    }
    rhs(t + h, &tmp, &mut k4)?;
    for i in 0..d {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

/// Classical fixed-step fourth-order Runge-Kutta. The grid is t0 + k*dt with
/// one shortened final step landing exactly on t_end. The state is checked
/// for finiteness after every step; failures report the time reached.
pub fn rk4_integrate(
    rhs: &mut dyn FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    x0: &[f64],
    t_span: (f64, f64),
    dt: f64,
) -> Result<Trajectory> {
    let (t0, t1) = t_span;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::model(format!("step size {dt} must be positive and finite")));
    }
    if !t0.is_finite() || !t1.is_finite() || t1 < t0 {
        return Err(Error::model(format!("bad time span [{t0}, {t1}]")));
    }
    let total = t1 - t0;
    let n_full = (total / dt + 1e-12).floor() as usize;

    let mut times = Vec::with_capacity(n_full + 2);
    let mut states = Vec::with_capacity(n_full + 2);
    let mut x = x0.to_vec();
    times.push(t0);
    states.push(x.clone());

    let wrap = |e: Error, t: f64| match e {
        Error::Integration { .. } => e,
        other => Error::Integration { t, message: other.to_string() },
    };

    for k in 0..n_full {
        let t = t0 + k as f64 * dt;
        rk4_step(rhs, t, &mut x, dt).map_err(|e| wrap(e, t))?;
        let t_next = t0 + (k + 1) as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t: t_next,
                message: "state became non-finite".to_string(),
            });
        }
        times.push(t_next);
        states.push(x.clone());
    }
    let t_reached = t0 + n_full as f64 * dt;
    let remainder = t1 - t_reached;
    if remainder > 1e-12 * total.max(dt) {
        rk4_step(rhs, t_reached, &mut x, remainder).map_err(|e| wrap(e, t_reached))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t: t1,
                message: "state became non-finite".to_string(),
            });
        }
        times.push(t1);
        states.push(x.clone());
    } else if let Some(last) = times.last_mut() {
        // grid arithmetic can land a hair off; the final row is t_end
        *last = t1;
    }
    Ok(Trajectory { times, states, layout: StateLayout::Flat })
}

// ---------------------------------------------------------------------------
// Flows

/// Integrates the Hamiltonian vector field on the dual bundle from `x0`.
pub fn hamilton_flow(
    a: &SkewAlgebroid,
    h: &ScalarOnDual,
    x0: &DualPoint,
    t_span: (f64, f64),
    dt: f64,
) -> Result<Trajectory> {
    let m = a.base_dim();
    let n = a.rank();
    if x0.q.len() != m || x0.p.len() != n {
        return Err(Error::shape(format!(
            "initial dual point has shape ({}, {}), expected ({m}, {n})",
            x0.q.len(),
            x0.p.len()
        )));
    }
    let mut state = x0.q.clone();
    state.extend_from_slice(&x0.p);
    let mut rhs = |_t: f64, s: &[f64], out: &mut [f64]| -> Result<()> {
        let x = DualPoint::new(s[..m].to_vec(), s[m..].to_vec());
        a.check_chart(&x.q)?;
        let vf = poisson::hamiltonian_vf(a, h, &x)?;
        out.copy_from_slice(&vf);
        Ok(())
    };
    Ok(rk4_integrate(&mut rhs, &state, t_span, dt)?.with_layout(StateLayout::Dual { base: m }))
}

fn lagrangian_rhs(sys: &MechanicalSystem, s: &[f64], out: &mut [f64]) -> Result<()> {
    let a = sys.algebroid();
    let m = a.base_dim();
    let n = a.rank();
    let q = &s[..m];
    let v = &s[m..];
    a.check_chart(q)?;
    let mut b = a.binding_for(q)?;
    let rho = a.anchor_matrix_with(&b)?;
    let c = a.structure_at(&b)?;
    for i in 0..m {
        let mut dq = 0.0;
        for bb in 0..n {
            dq += rho[(i, bb)] * v[bb];
        }
        out[i] = dq;
    }
    let grad_v = match sys.potential() {
        Some(vp) => a.grad_base(vp, &mut b, q)?,
        None => vec![0.0; m],
    };
    for e in 0..n {
        let mut dv = 0.0;
        for bb in 0..n {
            for cc in 0..n {
                dv -= c.get(e, bb, cc) * v[bb] * v[cc];
            }
        }
        for j in 0..m {
            dv -= rho[(j, e)] * grad_v[j];
        }
        out[m + e] = dv;
    }
    Ok(())
}

fn integrate_lagrangian(
    sys: &MechanicalSystem,
    x0: &VelocityPoint,
    t_span: (f64, f64),
    dt: f64,
) -> Result<Trajectory> {
    let a = sys.algebroid();
    let m = a.base_dim();
    let n = a.rank();
    if x0.q.len() != m || x0.v.len() != n {
        return Err(Error::shape(format!(
            "initial velocity point has shape ({}, {}), expected ({m}, {n})",
            x0.q.len(),
            x0.v.len()
        )));
    }
    let mut state = x0.q.clone();
    state.extend_from_slice(&x0.v);
    let mut rhs =
        |_t: f64, s: &[f64], out: &mut [f64]| -> Result<()> { lagrangian_rhs(sys, s, out) };
    Ok(rk4_integrate(&mut rhs, &state, t_span, dt)?.with_layout(StateLayout::Velocity { base: m }))
}

/// Euler-Lagrange flow of a mechanical system on the full algebroid:
///
/// ```text
/// dq^i = rho^i_B v^B
/// dv^E = -C^C_{EB} v^B v^C - rho^j_E dV/dq^j
/// ```
///
/// The quadratic term is the full geodesic spray: in an orthonormal frame
/// the connection coefficients contract to the structure functions.
pub fn geodesic_el_flow(
    sys: &MechanicalSystem,
    x0: &VelocityPoint,
    t_span: (f64, f64),
    dt: f64,
) -> Result<Trajectory> {
    integrate_lagrangian(sys, x0, t_span, dt)
}

/// Lagrange-d'Alembert flow on a constrained bundle. The equations coincide
/// with the Euler-Lagrange ones written in a frame of the constraint
/// subbundle; the distinction is how the model was built.
pub fn nonholonomic_flow(
    sys: &MechanicalSystem,
    x0: &VelocityPoint,
    t_span: (f64, f64),
    dt: f64,
) -> Result<Trajectory> {
    integrate_lagrangian(sys, x0, t_span, dt)
}

/// Max drift of a dual-side scalar along a dual-layout trajectory, relative
/// to its initial value.
pub fn scalar_drift(a: &SkewAlgebroid, s: &ScalarOnDual, traj: &Trajectory) -> Result<f64> {
    let StateLayout::Dual { base } = traj.layout else {
        return Err(Error::shape("scalar drift needs a dual-layout trajectory".to_string()));
    };
    let mut first = None;
    let mut worst: f64 = 0.0;
    for row in &traj.states {
        let x = DualPoint::new(row[..base].to_vec(), row[base..].to_vec());
        let v = s.eval(a, &x)?;
        match first {
            None => first = Some(v),
            Some(v0) => worst = worst.max((v - v0).abs()),
        }
    }
    Ok(worst)
}

/// Max drift of the mechanical energy along a velocity-layout trajectory.
pub fn energy_drift(sys: &MechanicalSystem, traj: &Trajectory) -> Result<f64> {
    let StateLayout::Velocity { base } = traj.layout else {
        return Err(Error::shape("energy drift needs a velocity-layout trajectory".to_string()));
    };
    let mut first = None;
    let mut worst: f64 = 0.0;
    for row in &traj.states {
        let x = VelocityPoint::new(row[..base].to_vec(), row[base..].to_vec());
        let v = sys.energy(&x)?;
        match first {
            None => first = Some(v),
            Some(v0) => worst = worst.max((v - v0).abs()),
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Hamilton-Jacobi

/// Residual of the Hamilton-Jacobi equation for the section `alpha`:
/// component gamma is
///
/// ```text
/// rho^i_gamma (dh/dq^i + (dalpha_nu/dq^i)(dh/dp_nu)) at p = alpha(q)
/// ```
///
/// and vanishes for all gamma iff d(h centered on the section) does.
pub fn hj_residual(
    a: &SkewAlgebroid,
    h: &ScalarOnDual,
    alpha: &Section1Form,
    q: &[f64],
) -> Result<Vec<f64>> {
    hj_residual_fn(a, h, &|qq| alpha.value(a, qq), q)
}

/// [`hj_residual`] for a section only available as a pointwise evaluator;
/// the section Jacobian is taken by central differences.
pub fn hj_residual_fn(
    a: &SkewAlgebroid,
    h: &ScalarOnDual,
    section: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    q: &[f64],
) -> Result<Vec<f64>> {
    let m = a.base_dim();
    let n = a.rank();
    let aval = section(q)?;
    if aval.len() != n {
        return Err(Error::shape(format!(
            "section evaluator returned {} components, bundle rank is {n}",
            aval.len()
        )));
    }
    let x = DualPoint::new(q.to_vec(), aval);
    let mut bd = poisson::dual_binding(a, &x)?;
    // gradient of h over (q, p) at the lifted point
    let off = a.coord_offset();
    let mut grad_h = vec![0.0; m + n];
    for k in 0..(m + n) {
        let slot = off + k;
        let v = bd.get_at(slot);
        let hstep = crate::numeric::fd_step(v);
        bd.set_at(slot, v + hstep);
        let fp = h.expr().eval(&bd)?;
        bd.set_at(slot, v - hstep);
        let fm = h.expr().eval(&bd)?;
        bd.set_at(slot, v);
        grad_h[k] = (fp - fm) / (2.0 * hstep);
    }
    // Jacobian of the section components over q
    let mut dalpha = vec![vec![0.0; m]; n];
    for i in 0..m {
        let hstep = crate::numeric::fd_step(q[i]);
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[i] += hstep;
        qm[i] -= hstep;
        let fp = section(&qp)?;
        let fm = section(&qm)?;
        for nu in 0..n {
            dalpha[nu][i] = (fp[nu] - fm[nu]) / (2.0 * hstep);
        }
    }
    let rho = a.anchor_matrix(q)?;
    let mut out = vec![0.0; n];
    for gamma in 0..n {
        let mut acc = 0.0;
        for i in 0..m {
            let mut inner = grad_h[i];
            for nu in 0..n {
                inner += dalpha[nu][i] * grad_h[m + nu];
            }
            acc += rho[(i, gamma)] * inner;
        }
        out[gamma] = acc;
    }
    Ok(out)
}

/// Base projection of the Hamiltonian field along the section:
/// `rho^i_gamma dh/dp_gamma` evaluated at p = alpha(q).
pub fn projected_vf(
    a: &SkewAlgebroid,
    h: &ScalarOnDual,
    alpha: &Section1Form,
    q: &[f64],
) -> Result<Vec<f64>> {
    let m = a.base_dim();
    let n = a.rank();
    let x = DualPoint::new(q.to_vec(), alpha.value(a, q)?);
    let vf = poisson::hamiltonian_vf(a, h, &x)?;
    let _ = n;
    Ok(vf[..m].to_vec())
}

#[derive(Debug, Clone, Copy)]
pub struct HarnessReport {
    /// Sup over the grid of the sup-norm gap between the Hamilton flow
    /// started on the section and the pointwise lift of the base flow.
    pub max_lift_defect: f64,
    /// Sup over the base curve of the Hamilton-Jacobi residual components.
    pub max_hj_residual: f64,
    /// Sup over the base curve of the cocycle residual of the section;
    /// reported for context, large values mean the equivalence hypotheses
    /// do not apply.
    pub max_cocycle_residual: f64,
}

/// Integrates the projected dynamics from `q0` and the Hamiltonian dynamics
/// from the lifted point on the same grid, and reports how far the Hamilton
/// flow drifts from the lift of the base flow. For a closed section solving
/// the Hamilton-Jacobi equation both curves agree; for a violating section
/// both the defect and the residual come out large.
pub fn lift_equivalence_harness(
    a: &SkewAlgebroid,
    h: &ScalarOnDual,
    alpha: &Section1Form,
    q0: &[f64],
    t_span: (f64, f64),
    dt: f64,
) -> Result<HarnessReport> {
    let m = a.base_dim();
    let mut base_rhs = |_t: f64, s: &[f64], out: &mut [f64]| -> Result<()> {
        a.check_chart(s)?;
        out.copy_from_slice(&projected_vf(a, h, alpha, s)?);
        Ok(())
    };
    let base = rk4_integrate(&mut base_rhs, q0, t_span, dt)?;

    let x0 = DualPoint::new(q0.to_vec(), alpha.value(a, q0)?);
    let lifted = hamilton_flow(a, h, &x0, t_span, dt)?;

    let mut max_lift_defect: f64 = 0.0;
    let mut max_hj_residual: f64 = 0.0;
    let mut max_cocycle_residual: f64 = 0.0;
    for (c_row, z_row) in base.states.iter().zip(&lifted.states) {
        let aval = alpha.value(a, c_row)?;
        for i in 0..m {
            max_lift_defect = max_lift_defect.max((z_row[i] - c_row[i]).abs());
        }
        for (nu, av) in aval.iter().enumerate() {
            max_lift_defect = max_lift_defect.max((z_row[m + nu] - av).abs());
        }
        for r in hj_residual(a, h, alpha, c_row)? {
            max_hj_residual = max_hj_residual.max(r.abs());
        }
        max_cocycle_residual = max_cocycle_residual.max(a.cocycle_residual(alpha, c_row)?);
    }
    Ok(HarnessReport { max_lift_defect, max_hj_residual, max_cocycle_residual })
}

// ---------------------------------------------------------------------------
// Closed-form reference solution

/// Physical constants of the reduced snakeboard model.
#[derive(Debug, Clone, Copy)]
pub struct SnakeboardParams {
    pub m: f64,
    pub r: f64,
    pub j0: f64,
    pub j1: f64,
}

impl SnakeboardParams {
    fn f(&self, phi: f64) -> f64 {
        self.j0 - self.j0 * self.j0 * phi.sin().powi(2) / (self.m * self.r * self.r)
    }
}

/// Closed-form integral curves of the projected snakeboard dynamics for the
/// cocycle family with constants (C0, C1, C2) and phase constants (C3, C4):
/// returns (phi, psi, momenta) at time `t`.
///
/// For C0 != 0:
///
/// ```text
/// phi(t) = C0 t + C3
/// psi(t) = C1 t - (C2/C0) log[sqrt(2)(sqrt(J0) cos phi + sqrt(m r^2 - J0 sin^2 phi))] + C4
/// ```
///
/// and for C0 = 0 the psi formula degenerates to a line whose slope adds the
/// stationary-phi drift term.
pub fn closed_form_snakeboard(
    p: &SnakeboardParams,
    c: &[f64; 5],
    t: f64,
) -> Result<(f64, f64, [f64; 3])> {
    if !(p.m > 0.0 && p.r > 0.0 && p.j0 > 0.0 && p.j1 > 0.0) {
        return Err(Error::model("snakeboard parameters must be positive".to_string()));
    }
    let [c0, c1, c2, c3, c4] = *c;
    let phi = c0 * t + c3;
    let disc = p.m * p.r * p.r - p.j0 * phi.sin().powi(2);
    if disc < 0.0 {
        return Err(Error::Domain(format!(
            "m r^2 - J0 sin^2(phi) = {disc} < 0 at phi = {phi}"
        )));
    }
    let psi = if c0.abs() > 1e-12 {
        let g = 2.0f64.sqrt() * (p.j0.sqrt() * phi.cos() + disc.sqrt());
        if g <= 0.0 {
            return Err(Error::Domain(format!("log argument {g} <= 0 at phi = {phi}")));
        }
        c1 * t - (c2 / c0) * g.ln() + c4
    } else {
        let disc0 = p.m * p.r * p.r - p.j0 * c3.sin().powi(2);
        c1 * t + p.j0.sqrt() * c2 * t * c3.sin() / disc0.sqrt() + c4
    };
    let f = p.f(phi);
    if f < 0.0 {
        return Err(Error::Domain(format!("f(phi) = {f} < 0 at phi = {phi}")));
    }
    let sf = f.sqrt();
    let v1 = (2.0 * p.j1).sqrt() * c0;
    let v2 = c1 * sf + p.j0 * c2 * phi.sin() / (p.r * p.m.sqrt());
    let v3 = p.j0 * c1 * phi.sin() / (p.r * p.m.sqrt()) - c2 * sf;
    Ok((phi, psi, [v1, v2, v3]))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{VarBinding, parse};
    use crate::test_fixtures::{beanie, snakeboard, tq_r2};

    #[test]
    fn rk4_reproduces_exponential_decay() {
        let mut rhs = |_t: f64, x: &[f64], out: &mut [f64]| {
            out[0] = -x[0];
            Ok(())
        };
        let traj = rk4_integrate(&mut rhs, &[1.0], (0.0, 1.0), 1e-3).unwrap();
        assert_eq!(traj.times.len(), 1001);
        assert_eq!(*traj.times.last().unwrap(), 1.0);
        let x1 = traj.final_state()[0];
        assert!((x1 - (-1.0f64).exp()).abs() < 1e-10, "{x1}");
    }

    #[test]
    fn rk4_keeps_constants_constant() {
        let mut rhs = |_t: f64, _x: &[f64], out: &mut [f64]| {
            out[0] = 0.0;
            out[1] = 0.0;
            Ok(())
        };
        let traj = rk4_integrate(&mut rhs, &[2.5, -1.0], (0.0, 2.0), 0.1).unwrap();
        for row in &traj.states {
            assert_eq!(row, &vec![2.5, -1.0]);
        }
    }

    #[test]
    fn rk4_shortens_the_final_step() {
        let mut rhs = |_t: f64, _x: &[f64], out: &mut [f64]| {
            out[0] = 1.0;
            Ok(())
        };
        let traj = rk4_integrate(&mut rhs, &[0.0], (0.0, 0.55), 0.1).unwrap();
        assert_eq!(traj.times.len(), 7);
        assert_eq!(*traj.times.last().unwrap(), 0.55);
        assert!((traj.final_state()[0] - 0.55).abs() < 1e-14);
    }

    #[test]
    fn rk4_reports_the_time_of_failure() {
        let mut rhs = |t: f64, _x: &[f64], out: &mut [f64]| {
            out[0] = if t < 0.5 { 1.0 } else { f64::NAN };
            Ok(())
        };
        match rk4_integrate(&mut rhs, &[0.0], (0.0, 1.0), 1e-2) {
            Err(Error::Integration { t, .. }) => {
                assert!((t - 0.5).abs() < 0.02, "cited t = {t}");
            }
            other => panic!("expected integration error, got {other:?}"),
        }
    }

    #[test]
    fn free_particle_moves_on_straight_lines() {
        let a = tq_r2();
        let h = ScalarOnDual::parse_for(&a, "0.5*(p1^2+p2^2)").unwrap();
        let x0 = DualPoint::new(vec![0.0, 1.0], vec![0.5, -0.25]);
        let traj = hamilton_flow(&a, &h, &x0, (0.0, 2.0), 1e-2).unwrap();
        let end = traj.final_state();
        assert!((end[0] - 1.0).abs() < 1e-10);
        assert!((end[1] - 0.5).abs() < 1e-10);
        assert!((end[2] - 0.5).abs() < 1e-12);
        assert!((end[3] + 0.25).abs() < 1e-12);
        assert_eq!(traj.layout, StateLayout::Dual { base: 2 });
    }

    #[test]
    fn beanie_angle_obeys_the_reduced_second_order_equation() {
        let a = beanie();
        let sys = MechanicalSystem::new(&a, Some(parse("0.1*(1-cos(psi))").unwrap())).unwrap();
        let dt = 1e-3;
        let x0 = VelocityPoint::new(vec![0.4], vec![0.3, 0.0, 0.0, 0.2]);
        let traj = geodesic_el_flow(&sys, &x0, (0.0, 0.2), dt).unwrap();
        // second difference of psi at an interior grid point
        let k = 100;
        let psi = |j: usize| traj.states[j][0];
        let acc = (psi(k + 1) - 2.0 * psi(k) + psi(k - 1)) / (dt * dt);
        // I1 = I2 = 1: psi'' = -2 dV/dpsi = -0.2 sin(psi)
        let want = -2.0 * 0.1 * psi(k).sin();
        assert!((acc - want).abs() < 1e-6, "{acc} vs {want}");
    }

    #[test]
    fn quadratic_term_matches_symmetrized_connection_coefficients() {
        let a = snakeboard(0.1875);
        let q = [0.7, -0.3];
        let b = a.binding_for(&q).unwrap();
        let c = a.structure_at(&b).unwrap();
        let n = a.rank();
        let v = [0.9, -1.4, 0.6];
        for e in 0..n {
            let mut direct = 0.0;
            let mut symmetrized = 0.0;
            for bb in 0..n {
                for cc in 0..n {
                    direct -= c.get(e, bb, cc) * v[bb] * v[cc];
                    let gamma = 0.5
                        * (c.get(e, bb, cc) + c.get(e, cc, bb) + c.get(bb, cc, e));
                    symmetrized -= gamma * v[bb] * v[cc];
                }
            }
            assert!(
                (direct - symmetrized).abs() < 1e-9,
                "component {e}: {direct} vs {symmetrized}"
            );
        }
    }

    #[test]
    fn snakeboard_rhs_matches_printed_vector_field() {
        let a = snakeboard(0.1875);
        let sys = MechanicalSystem::new(&a, None).unwrap();
        let x0 = VelocityPoint::new(vec![0.3, 0.0], vec![1.0, 1.0, 1.0]);
        let mut out = vec![0.0; 5];
        let mut s = x0.q.clone();
        s.extend_from_slice(&x0.v);
        lagrangian_rhs(&sys, &s, &mut out).unwrap();

        let b = a.binding_for(&x0.q).unwrap();
        let g0 = -a.structure_value(0, 1, 2, &b).unwrap();
        let f = 0.5 - 0.25 * (0.3f64).sin().powi(2);
        let want = [
            1.0 / (2.0f64 * 0.1875).sqrt(),
            1.0 / f.sqrt(),
            0.0,
            -g0 * 1.0 * 1.0,
            g0 * 1.0 * 1.0,
        ];
        for k in 0..5 {
            assert!((out[k] - want[k]).abs() < 1e-12, "slot {k}: {} vs {}", out[k], want[k]);
        }
    }

    #[test]
    fn kinetic_energy_is_conserved_without_potential() {
        let a = snakeboard(0.1875);
        let sys = MechanicalSystem::new(&a, None).unwrap();
        let x0 = VelocityPoint::new(vec![0.3, 0.0], vec![1.0, 1.0, 1.0]);
        let traj = nonholonomic_flow(&sys, &x0, (0.0, 1.0), 1e-3).unwrap();
        let drift = energy_drift(&sys, &traj).unwrap();
        assert!(drift <= 1e-8 * (1.0 + 1.5), "drift {drift}");
    }

    #[test]
    fn hamilton_energy_is_conserved_with_potential() {
        let a = beanie();
        let sys = MechanicalSystem::new(&a, Some(parse("0.1*(1-cos(psi))").unwrap())).unwrap();
        let h = sys.hamiltonian().unwrap();
        let x0 = DualPoint::new(vec![0.4], vec![0.3, -0.2, 0.5, 0.2]);
        let traj = hamilton_flow(&a, &h, &x0, (0.0, 1.0), 1e-3).unwrap();
        let drift = scalar_drift(&a, &h, &traj).unwrap();
        assert!(drift <= 1e-8, "drift {drift}");
    }

    #[test]
    fn hamilton_and_lagrange_flows_agree_in_an_orthonormal_frame() {
        let a = beanie();
        let sys = MechanicalSystem::new(&a, Some(parse("0.1*(1-cos(psi))").unwrap())).unwrap();
        let h = sys.hamiltonian().unwrap();
        let q0 = vec![0.4];
        let w0 = vec![0.3, -0.2, 0.5, 0.2];
        let th = hamilton_flow(&a, &h, &DualPoint::new(q0.clone(), w0.clone()), (0.0, 1.0), 1e-3)
            .unwrap();
        let tl = geodesic_el_flow(&sys, &VelocityPoint::new(q0, w0), (0.0, 1.0), 1e-3).unwrap();
        for (rh, rl) in th.states.iter().zip(&tl.states) {
            for k in 0..rh.len() {
                assert!((rh[k] - rl[k]).abs() < 1e-9, "state slot {k}");
            }
        }
    }

    fn snakeboard_family(a: &SkewAlgebroid, c: [f64; 3]) -> Section1Form {
        let consts = VarBinding::from_pairs([("C0", c[0]), ("C1", c[1]), ("C2", c[2])]).unwrap();
        let f = "(J0-J0^2*sin(phi)^2/(m*r^2))";
        Section1Form::new(
            a,
            vec![
                parse("sqrt(2*J1)*C0").unwrap(),
                parse(&format!("C1*sqrt({f})+(J0*C2/(r*sqrt(m)))*sin(phi)")).unwrap(),
                parse(&format!("(J0*C1/(r*sqrt(m)))*sin(phi)-C2*sqrt({f})")).unwrap(),
            ],
            consts,
        )
        .unwrap()
    }

    #[test]
    fn snakeboard_family_solves_hamilton_jacobi() {
        let a = snakeboard(0.1875);
        let sys = MechanicalSystem::new(&a, None).unwrap();
        let h = sys.hamiltonian().unwrap();
        let alpha = snakeboard_family(&a, [1.0, 0.5, 0.2]);
        for q in [[0.3, 0.0], [-0.8, 1.2], [1.1, -2.0]] {
            assert!(a.cocycle_residual(&alpha, &q).unwrap() < 1e-8);
            for r in hj_residual(&a, &h, &alpha, &q).unwrap() {
                assert!(r.abs() < 1e-7, "{r}");
            }
        }
    }

    #[test]
    fn projected_vf_matches_printed_components() {
        let a = snakeboard(0.25);
        let sys = MechanicalSystem::new(&a, None).unwrap();
        let h = sys.hamiltonian().unwrap();
        let alpha = snakeboard_family(&a, [1.0, 0.0, 1.0]);
        let vf = projected_vf(&a, &h, &alpha, &[0.0, 0.7]).unwrap();
        assert!((vf[0] - 1.0).abs() < 1e-9, "{vf:?}");
        assert!(vf[1].abs() < 1e-9, "{vf:?}");
    }

    #[test]
    fn pure_potential_hamiltonian_projects_to_zero() {
        let a = snakeboard(0.1875);
        let h = ScalarOnDual::parse_for(&a, "cos(phi)+psi^2").unwrap();
        let alpha = snakeboard_family(&a, [1.0, 0.5, 0.2]);
        let vf = projected_vf(&a, &h, &alpha, &[0.4, -0.1]).unwrap();
        assert!(vf.iter().all(|v| v.abs() < 1e-9), "{vf:?}");
    }

    #[test]
    fn harness_confirms_the_equivalence_both_ways() {
        let a = snakeboard(0.1875);
        let sys = MechanicalSystem::new(&a, None).unwrap();
        let h = sys.hamiltonian().unwrap();
        let alpha = snakeboard_family(&a, [1.0, 0.5, 0.2]);
        let rep = lift_equivalence_harness(&a, &h, &alpha, &[0.3, 0.0], (0.0, 1.0), 1e-3).unwrap();
        assert!(rep.max_lift_defect <= 1e-6, "{rep:?}");
        assert!(rep.max_hj_residual <= 1e-7, "{rep:?}");
        assert!(rep.max_cocycle_residual <= 1e-7, "{rep:?}");

        let bad = alpha.scaled_component(2, 1.1).unwrap();
        let rep = lift_equivalence_harness(&a, &h, &bad, &[0.3, 0.0], (0.0, 1.0), 1e-3).unwrap();
        assert!(rep.max_lift_defect > 1e-3, "{rep:?}");
        assert!(rep.max_hj_residual > 1e-3, "{rep:?}");
    }

    #[test]
    fn harness_is_trivial_for_constant_hamiltonians() {
        let a = snakeboard(0.1875);
        let h = ScalarOnDual::parse_for(&a, "2.5").unwrap();
        let alpha = snakeboard_family(&a, [1.0, 0.5, 0.2]);
        let rep = lift_equivalence_harness(&a, &h, &alpha, &[0.3, 0.0], (0.0, 0.5), 1e-2).unwrap();
        assert_eq!(rep.max_lift_defect, 0.0);
        assert!(rep.max_hj_residual < 1e-12);
    }

    #[test]
    fn closed_form_matches_integrated_dynamics() {
        let p = SnakeboardParams { m: 1.0, r: 1.0, j0: 0.5, j1: 0.1875 };
        let c = [1.0, 0.5, 0.2, 0.3, 0.0];

        // t = 0 reproduces the phase constants
        let (phi0, psi0, _) = closed_form_snakeboard(&p, &c, 0.0).unwrap();
        assert!((phi0 - 0.3).abs() < 1e-15);
        let g = 2.0f64.sqrt()
            * (p.j0.sqrt() * 0.3f64.cos() + (1.0 - 0.5 * 0.3f64.sin().powi(2)).sqrt());
        assert!((psi0 - (0.0 - 0.2 * g.ln())).abs() < 1e-12);

        // derivative of the analytic psi equals the projected field
        let a = snakeboard(p.j1);
        let sys = MechanicalSystem::new(&a, None).unwrap();
        let h = sys.hamiltonian().unwrap();
        let alpha = snakeboard_family(&a, [c[0], c[1], c[2]]);
        for t in [0.0, 0.7, 1.9] {
            let dt = 1e-5;
            let (_, psi_p, _) = closed_form_snakeboard(&p, &c, t + dt).unwrap();
            let (_, psi_m, _) = closed_form_snakeboard(&p, &c, t - dt).unwrap();
            let (phi, psi, _) = closed_form_snakeboard(&p, &c, t).unwrap();
            let vf = projected_vf(&a, &h, &alpha, &[phi, psi]).unwrap();
            let dpsi = (psi_p - psi_m) / (2.0 * dt);
            assert!((dpsi - vf[1]).abs() < 1e-6, "t={t}: {dpsi} vs {}", vf[1]);
        }
    }

    #[test]
    fn closed_form_stationary_branch_is_linear() {
        let p = SnakeboardParams { m: 1.0, r: 1.0, j0: 0.5, j1: 0.1875 };
        let c = [0.0, 0.4, 0.2, 0.6, 1.0];
        let (phi1, psi1, v1) = closed_form_snakeboard(&p, &c, 1.0).unwrap();
        let (phi2, psi2, v2) = closed_form_snakeboard(&p, &c, 2.0).unwrap();
        assert_eq!(phi1, 0.6);
        assert_eq!(phi2, 0.6);
        let slope = 0.4
            + p.j0.sqrt() * 0.2 * 0.6f64.sin() / (1.0 - 0.5 * 0.6f64.sin().powi(2)).sqrt();
        assert!((psi2 - psi1 - slope).abs() < 1e-12);
        assert_eq!(v1, v2);
    }

    #[test]
    fn csv_layout_and_precision() {
        let traj = Trajectory {
            times: vec![0.0, 0.5],
            states: vec![vec![0.3, 1.0, 2.0], vec![0.25, -1.0, 0.125]],
            layout: StateLayout::Dual { base: 1 },
        };
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,q1,p1,p2");
        let row = lines.next().unwrap();
        assert!(row.starts_with("0.0000000000000000e0,"));
        assert!(row.contains("2.9999999999999999e-1"));
        // deterministic output
        assert_eq!(csv, traj.to_csv());

        let vel = Trajectory {
            times: vec![0.0],
            states: vec![vec![1.0, 2.0, 3.0]],
            layout: StateLayout::Velocity { base: 2 },
        };
        assert!(vel.to_csv().starts_with("t,q1,q2,v1\n"));
    }
}
