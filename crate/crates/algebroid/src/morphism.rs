//! Vector bundle morphisms between dual bundles: pullback of sections,
//! linear almost Poisson and Hamiltonian morphism checks, and transfer of
//! Hamilton-Jacobi solutions from a reduced model back to its source.

use crate::algebroid::{Section1Form, SkewAlgebroid};
use crate::dynamics;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::numeric::{self, RANK_CUTOFF_DUAL};
use crate::poisson::{DualPoint, ScalarOnDual};
use nalgebra::{DMatrix, DVector};

/// Morphism data between a source bundle over Q and a target bundle over
/// Q-bar. The base map has one expression per target coordinate; the fiber
/// map is a rank_target x rank_source matrix of expressions, all written in
/// source base coordinates (the defining pairing only ever evaluates the
/// fiber map at source points). Row a-bar, column alpha.
#[derive(Debug, Clone)]
pub struct BundleMorphism<'a> {
    source: &'a SkewAlgebroid,
    target: &'a SkewAlgebroid,
    base_map: Vec<Expr>,
    fiber_map: Vec<Vec<Expr>>,
    fiberwise_injective: bool,
}

impl<'a> BundleMorphism<'a> {
    pub fn new(
        source: &'a SkewAlgebroid,
        target: &'a SkewAlgebroid,
        base_map: Vec<Expr>,
        fiber_map: Vec<Vec<Expr>>,
        fiberwise_injective: bool,
    ) -> Result<Self> {
        if base_map.len() != target.base_dim() {
            return Err(Error::shape(format!(
                "base map has {} components, target base dimension is {}",
                base_map.len(),
                target.base_dim()
            )));
        }
        if fiber_map.len() != target.rank()
            || fiber_map.iter().any(|row| row.len() != source.rank())
        {
            return Err(Error::shape(format!(
                "fiber map must be {} x {}",
                target.rank(),
                source.rank()
            )));
        }
        let known = |v: &str| {
            source.base_coords().iter().any(|c| c == v) || source.params().get(v).is_some()
        };
        for e in base_map.iter().chain(fiber_map.iter().flatten()) {
            for v in e.free_vars() {
                if !known(&v) {
                    return Err(Error::model(format!(
                        "morphism expression references `{v}`, which is not a source \
                         coordinate or parameter"
                    )));
                }
            }
        }
        Ok(BundleMorphism { source, target, base_map, fiber_map, fiberwise_injective })
    }

    pub fn source(&self) -> &'a SkewAlgebroid {
        self.source
    }

    pub fn target(&self) -> &'a SkewAlgebroid {
        self.target
    }

    pub fn fiberwise_injective(&self) -> bool {
        self.fiberwise_injective
    }

    pub fn base_map(&self) -> &[Expr] {
        &self.base_map
    }

    pub fn fiber_map(&self) -> &[Vec<Expr>] {
        &self.fiber_map
    }

    /// F(q): image of a source base point.
    pub fn base_value(&self, q: &[f64]) -> Result<Vec<f64>> {
        let b = self.source.binding_for(q)?;
        self.base_map.iter().map(|e| e.eval(&b)).collect()
    }

    /// F-tilde(q) as a rank_target x rank_source matrix.
    pub fn fiber_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let b = self.source.binding_for(q)?;
        let nt = self.target.rank();
        let ns = self.source.rank();
        let mut out = DMatrix::zeros(nt, ns);
        for (abar, row) in self.fiber_map.iter().enumerate() {
            for (alpha, e) in row.iter().enumerate() {
                out[(abar, alpha)] = e.eval(&b)?;
            }
        }
        Ok(out)
    }

    /// Forward image of a source dual point: (F(q), F-tilde(q) p).
    pub fn push_dual(&self, x: &DualPoint) -> Result<DualPoint> {
        let qbar = self.base_value(&x.q)?;
        let ft = self.fiber_matrix(&x.q)?;
        let pbar = &ft * DVector::from_column_slice(&x.p);
        Ok(DualPoint::new(qbar, pbar.iter().copied().collect()))
    }
}

/// Pullback of a target section with coefficient expressions `xbar` (written
/// in target coordinates): component alpha at `q` is
/// sum over a-bar of Ftilde_{a-bar, alpha}(q) * xbar_{a-bar}(F(q)),
/// the transpose action forced by the duality pairing.
pub fn pullback_section(m: &BundleMorphism, xbar: &[Expr], q: &[f64]) -> Result<Vec<f64>> {
    if xbar.len() != m.target().rank() {
        return Err(Error::shape(format!(
            "target section has {} coefficients, target rank is {}",
            xbar.len(),
            m.target().rank()
        )));
    }
    let qbar = m.base_value(q)?;
    let bbar = m.target().binding_for(&qbar)?;
    let coeffs: Vec<f64> = xbar.iter().map(|e| e.eval(&bbar)).collect::<Result<_>>()?;
    let ft = m.fiber_matrix(q)?;
    let mut out = vec![0.0; m.source().rank()];
    for (alpha, o) in out.iter_mut().enumerate() {
        for (abar, c) in coeffs.iter().enumerate() {
            *o += ft[(abar, alpha)] * c;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct LapReport {
    pub max_bracket_defect: f64,
    pub max_anchor_defect: f64,
}

impl LapReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_bracket_defect <= tol && self.max_anchor_defect <= tol
    }
}

/// Checks the two linear-almost-Poisson morphism conditions over a grid of
/// source base points: the pulled-back frame sections must bracket to the
/// pullback of the target frame brackets, and the base differential of F
/// must intertwine the anchors. Both defects are sup norms over the grid
/// and all target frame pairs.
pub fn check_lap_morphism(m: &BundleMorphism, grid: &[Vec<f64>]) -> Result<LapReport> {
    if grid.is_empty() {
        return Err(Error::Precondition(
            "morphism check needs at least one grid point".to_string(),
        ));
    }
    let src = m.source();
    let tgt = m.target();
    let ms = src.base_dim();
    let mt = tgt.base_dim();
    let ns = src.rank();
    let nt = tgt.rank();

    let mut max_bracket: f64 = 0.0;
    let mut max_anchor: f64 = 0.0;

    for q in grid {
        let mut b = src.binding_for(q)?;
        let rho = src.anchor_matrix_with(&b)?;
        let c = src.structure_at(&b)?;
        let ft = m.fiber_matrix(q)?;
        let qbar = m.base_value(q)?;
        let bbar = tgt.binding_for(&qbar)?;
        let cbar = tgt.structure_at(&bbar)?;
        let rho_bar = tgt.anchor_matrix(&qbar)?;

        // gradients of the fiber-map entries: dU[abar][gamma][i]
        let mut du = vec![vec![vec![0.0; ms]; ns]; nt];
        for (abar, row) in m.fiber_map.iter().enumerate() {
            for (gamma, e) in row.iter().enumerate() {
                du[abar][gamma] = src.grad_base(e, &mut b, q)?;
            }
        }
        // anchored fields of the pulled-back frame sections: rho(U_abar)
        let mut rho_u = vec![vec![0.0; ms]; nt];
        for abar in 0..nt {
            for i in 0..ms {
                for gamma in 0..ns {
                    rho_u[abar][i] += rho[(i, gamma)] * ft[(abar, gamma)];
                }
            }
        }

        for abar in 0..nt {
            for bbar_idx in (abar + 1)..nt {
                for gamma in 0..ns {
                    // bracket of the two pulled-back coefficient sections
                    let mut lhs = 0.0;
                    for alpha in 0..ns {
                        for beta in 0..ns {
                            lhs += ft[(abar, alpha)]
                                * ft[(bbar_idx, beta)]
                                * c.get(alpha, beta, gamma);
                        }
                    }
                    for i in 0..ms {
                        lhs += rho_u[abar][i] * du[bbar_idx][gamma][i]
                            - rho_u[bbar_idx][i] * du[abar][gamma][i];
                    }
                    // pullback of the target frame bracket
                    let mut rhs = 0.0;
                    for cbar_idx in 0..nt {
                        rhs += ft[(cbar_idx, gamma)] * cbar.get(abar, bbar_idx, cbar_idx);
                    }
                    max_bracket = max_bracket.max((lhs - rhs).abs());
                }
            }
        }

        // base differential of F by central differences
        let mut jf = vec![vec![0.0; ms]; mt];
        for j in 0..ms {
            let h = numeric::fd_step(q[j]);
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[j] += h;
            qm[j] -= h;
            let fp = m.base_value(&qp)?;
            let fm = m.base_value(&qm)?;
            for (ibar, row) in jf.iter_mut().enumerate() {
                row[j] = (fp[ibar] - fm[ibar]) / (2.0 * h);
            }
        }
        for abar in 0..nt {
            for ibar in 0..mt {
                let mut lhs = 0.0;
                for j in 0..ms {
                    lhs += jf[ibar][j] * rho_u[abar][j];
                }
                max_anchor = max_anchor.max((lhs - rho_bar[(ibar, abar)]).abs());
            }
        }
    }
    Ok(LapReport { max_bracket_defect: max_bracket, max_anchor_defect: max_anchor })
}

/// Sup over the dual grid of |h(x) - hbar(push(x))|, gated on the morphism
/// first passing the linear-almost-Poisson check (tolerance 1e-6) at the
/// grid's base points.
pub fn check_hamiltonian_morphism(
    m: &BundleMorphism,
    h: &ScalarOnDual,
    hbar: &ScalarOnDual,
    grid: &[DualPoint],
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Precondition(
            "morphism check needs at least one grid point".to_string(),
        ));
    }
    let base: Vec<Vec<f64>> = grid.iter().map(|x| x.q.clone()).collect();
    let lap = check_lap_morphism(m, &base)?;
    if !lap.passes(1e-6) {
        return Err(Error::Precondition(format!(
            "not a linear almost Poisson morphism: bracket defect {:.3e}, anchor defect {:.3e}",
            lap.max_bracket_defect, lap.max_anchor_defect
        )));
    }
    let mut worst: f64 = 0.0;
    for x in grid {
        let hv = h.eval(m.source(), x)?;
        let hbv = hbar.eval(m.target(), &m.push_dual(x)?)?;
        worst = worst.max((hv - hbv).abs());
    }
    Ok(worst)
}

/// A source section defined implicitly by the relation
/// Ftilde(q) alpha(q) = alpha-bar(F(q)), solved pointwise by least squares.
#[derive(Debug, Clone)]
pub struct TransferredSection<'m, 'a> {
    morphism: &'m BundleMorphism<'a>,
    alpha_bar: Section1Form,
}

impl TransferredSection<'_, '_> {
    pub fn value(&self, q: &[f64]) -> Result<Vec<f64>> {
        let m = self.morphism;
        let ns = m.source().rank();
        let ft = m.fiber_matrix(q)?;
        let sv_max = ft.singular_values().max();
        let rank = numeric::rank(&ft, RANK_CUTOFF_DUAL);
        if rank < ns {
            return Err(Error::Precondition(format!(
                "fiber map has rank {rank} < {ns} at the requested point; \
                 the transfer relation has no unique solution there"
            )));
        }
        let qbar = m.base_value(q)?;
        let bbar = self.alpha_bar.value(m.target(), &qbar)?;
        let rhs = DVector::from_column_slice(&bbar);
        let svd = ft.clone().svd(true, true);
        let sol = svd
            .solve(&rhs, 1e-13 * sv_max.max(1.0))
            .map_err(|e| Error::Inconsistency(format!("least-squares solve failed: {e}")))?;
        let residual = (&ft * &sol - &rhs).amax();
        if residual > 1e-8 {
            return Err(Error::Precondition(format!(
                "target section leaves the image of the fiber map: \
                 containment residual {residual:.3e} at the requested point"
            )));
        }
        Ok(sol.iter().copied().collect())
    }
}

/// Residual summary of a completed transfer over a grid of source points.
#[derive(Debug, Clone, Copy)]
pub struct TransferReport {
    pub max_source_cocycle: f64,
    pub max_target_cocycle: f64,
    pub max_source_hj: f64,
    pub max_target_hj: f64,
    /// Sup of |Ftilde(q) alpha(q) - alpha-bar(F(q))| over the grid.
    pub max_roundtrip: f64,
    /// Sup of |h(alpha(q)) - h(alpha(q0))|: the strongest transfer variant
    /// keeps the Hamiltonian constant on the section image.
    pub h_constancy_deviation: f64,
}

/// Solves the fiberwise relation for a source section matching `alpha_bar`
/// and evaluates the Hamilton-Jacobi evidence on both sides. The morphism
/// must be flagged fiberwise injective; each grid point additionally checks
/// that the target section stays inside the image of the fiber map.
pub fn transfer_hj<'m, 'a>(
    m: &'m BundleMorphism<'a>,
    alpha_bar: &Section1Form,
    h: &ScalarOnDual,
    hbar: &ScalarOnDual,
    grid: &[Vec<f64>],
) -> Result<(TransferredSection<'m, 'a>, TransferReport)> {
    if !m.fiberwise_injective() {
        return Err(Error::Precondition(
            "transfer needs a fiberwise injective morphism (flag not set)".to_string(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::Precondition(
            "transfer needs at least one grid point".to_string(),
        ));
    }
    let section = TransferredSection { morphism: m, alpha_bar: alpha_bar.clone() };
    let eval = |q: &[f64]| section.value(q);

    let mut rep = TransferReport {
        max_source_cocycle: 0.0,
        max_target_cocycle: 0.0,
        max_source_hj: 0.0,
        max_target_hj: 0.0,
        max_roundtrip: 0.0,
        h_constancy_deviation: 0.0,
    };
    let mut h0 = None;
    for q in grid {
        let aval = section.value(q)?;
        let qbar = m.base_value(q)?;
        let ft = m.fiber_matrix(q)?;
        let bbar = alpha_bar.value(m.target(), &qbar)?;
        let back = &ft * DVector::from_column_slice(&aval);
        for (lhs, rhs) in back.iter().zip(&bbar) {
            rep.max_roundtrip = rep.max_roundtrip.max((lhs - rhs).abs());
        }
        rep.max_source_cocycle = rep
            .max_source_cocycle
            .max(m.source().cocycle_residual_fn(&eval, q)?);
        rep.max_target_cocycle =
            rep.max_target_cocycle.max(m.target().cocycle_residual(alpha_bar, &qbar)?);
        for r in dynamics::hj_residual_fn(m.source(), h, &eval, q)? {
            rep.max_source_hj = rep.max_source_hj.max(r.abs());
        }
        for r in dynamics::hj_residual(m.target(), hbar, alpha_bar, &qbar)? {
            rep.max_target_hj = rep.max_target_hj.max(r.abs());
        }
        let hv = h.eval(m.source(), &DualPoint::new(q.clone(), aval))?;
        match h0 {
            None => h0 = Some(hv),
            Some(v0) => {
                rep.h_constancy_deviation = rep.h_constancy_deviation.max((hv - v0).abs())
            }
        }
    }
    Ok((section, rep))
}
