//! Iterated brackets of the anchored frame fields: rank growth of the
//! bracket-generated distribution, complete-nonholonomy verdicts, and random
//! orbit sampling with constancy checks for closed functions.

use crate::algebroid::SkewAlgebroid;
use crate::dynamics;
use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::numeric::{self, RANK_CUTOFF_BRACKET};
use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

/// A vector field on the base chart, carried symbolically so that iterated
/// brackets stay exact: nested finite differences lose about one noise order
/// per bracket depth, which would swamp the rank cutoff by depth two.
#[derive(Debug, Clone)]
pub struct VectorField {
    comps: Vec<Expr>,
    pub label: String,
    /// 0 for anchored frame fields, k for fields produced at bracket depth k.
    pub generation: usize,
}

impl VectorField {
    pub fn new(comps: Vec<Expr>, label: impl Into<String>) -> Self {
        VectorField { comps, label: label.into(), generation: 0 }
    }

    /// The anchored frame fields rho(X_1)..rho(X_n), labelled X1..Xn.
    pub fn anchor_fields(a: &SkewAlgebroid) -> Vec<VectorField> {
        a.anchor_exprs()
            .iter()
            .enumerate()
            .map(|(alpha, comps)| VectorField {
                comps: comps.clone(),
                label: format!("X{}", alpha + 1),
                generation: 0,
            })
            .collect()
    }

    pub fn components(&self) -> &[Expr] {
        &self.comps
    }

    pub fn eval(&self, a: &SkewAlgebroid, q: &[f64]) -> Result<Vec<f64>> {
        let b = a.binding_for(q)?;
        self.comps.iter().map(|e| e.eval(&b)).collect()
    }

    /// Exact commutator [self, other] with components
    /// sum_j (V^j dW^i/dq^j - W^j dV^i/dq^j).
    pub fn symbolic_bracket(&self, other: &VectorField, coords: &[String]) -> VectorField {
        use expr::build::{add, mul, sub};
        let m = coords.len();
        let mut comps = Vec::with_capacity(m);
        for i in 0..m {
            let mut acc = Expr::Num(0.0);
            for (j, qj) in coords.iter().enumerate().take(m) {
                let dw = other.comps[i].derivative(qj);
                let dv = self.comps[i].derivative(qj);
                acc = add(
                    acc,
                    sub(mul(self.comps[j].clone(), dw), mul(other.comps[j].clone(), dv)),
                );
            }
            comps.push(acc);
        }
        VectorField {
            comps,
            label: format!("[{},{}]", self.label, other.label),
            generation: self.generation.max(other.generation) + 1,
        }
    }
}

/// Commutator value [V,W](q) with the Jacobians taken by central
/// differences. The closure analysis uses exact brackets instead; this is
/// the expression-free entry point for externally supplied fields.
pub fn lie_bracket(
    a: &SkewAlgebroid,
    v: &VectorField,
    w: &VectorField,
    q: &[f64],
) -> Result<Vec<f64>> {
    let m = a.base_dim();
    let jacobian = |f: &VectorField| -> Result<Vec<Vec<f64>>> {
        let mut jac = vec![vec![0.0; m]; m];
        for j in 0..m {
            let h = numeric::fd_step(q[j]);
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[j] += h;
            qm[j] -= h;
            let fp = f.eval(a, &qp)?;
            let fm = f.eval(a, &qm)?;
            for i in 0..m {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok(jac)
    };
    let vq = v.eval(a, q)?;
    let wq = w.eval(a, q)?;
    let jv = jacobian(v)?;
    let jw = jacobian(w)?;
    let mut out = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            out[i] += vq[j] * jw[i][j] - wq[j] * jv[i][j];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    CompletelyNonholonomic,
    RankDeficient,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::CompletelyNonholonomic => write!(f, "completely_nonholonomic"),
            Verdict::RankDeficient => write!(f, "rank_deficient"),
        }
    }
}

/// Closure analysis at a single base point.
#[derive(Debug, Clone)]
pub struct PointReport {
    pub q: Vec<f64>,
    /// Rank of the accumulated field set after each sweep; index 0 is the
    /// anchor rank. Nondecreasing and bounded by the base dimension.
    pub rank_by_depth: Vec<usize>,
    pub stabilized_rank: usize,
    /// Labels of the bracket fields that increased the rank.
    pub witnesses: Vec<String>,
}

/// The whole-sample verdict with its per-point evidence.
#[derive(Debug, Clone)]
pub struct NonholonomyReport {
    pub base_dim: usize,
    pub rows: Vec<PointReport>,
    pub verdict: Verdict,
}

fn rank_of(cols: &[Vec<f64>], m: usize) -> usize {
    if cols.is_empty() {
        return 0;
    }
    let mat = DMatrix::from_fn(m, cols.len(), |i, j| cols[j][i]);
    numeric::rank(&mat, RANK_CUTOFF_BRACKET)
}

/// Grows the bracket-generated distribution at `q`: starting from the
/// anchored frame fields, each sweep brackets the fields found in the
/// previous sweep against everything kept so far, appending a field exactly
/// when it increases the numeric rank at `q`. Stops on a sweep with no
/// growth, on full rank, or at `max_depth` (defaults to twice the base
/// dimension).
pub fn bracket_closure_rank(
    a: &SkewAlgebroid,
    q: &[f64],
    max_depth: Option<usize>,
) -> Result<PointReport> {
    let m = a.base_dim();
    let max_depth = max_depth.unwrap_or(2 * m);
    if max_depth < 1 {
        return Err(Error::Precondition("max_depth must be at least 1".to_string()));
    }
    a.check_chart(q)?;
    let coords = a.base_coords().to_vec();

    let mut fields = VectorField::anchor_fields(a);
    let mut values: Vec<Vec<f64>> =
        fields.iter().map(|f| f.eval(a, q)).collect::<Result<_>>()?;
    let mut rank = rank_of(&values, m);
    let mut rank_by_depth = vec![rank];
    let mut witnesses = Vec::new();

    for depth in 1..=max_depth {
        if rank == m {
            break;
        }
        let new_idx: Vec<usize> = (0..fields.len())
            .filter(|&k| fields[k].generation == depth - 1)
            .collect();
        if new_idx.is_empty() {
            break;
        }
        let mut grew = false;
        for &ni in &new_idx {
            for fi in 0..fields.len() {
                if fi == ni {
                    continue;
                }
                // new x new pairs once each
                if fields[fi].generation == depth - 1 && fi > ni {
                    continue;
                }
                let cand = fields[fi].symbolic_bracket(&fields[ni], &coords);
                let val = cand.eval(a, q)?;
                values.push(val);
                let r = rank_of(&values, m);
                if r > rank {
                    rank = r;
                    witnesses.push(cand.label.clone());
                    fields.push(cand);
                    grew = true;
                    if rank == m {
                        break;
                    }
                } else {
                    values.pop();
                }
            }
            if rank == m {
                break;
            }
        }
        rank_by_depth.push(rank);
        if !grew {
            break;
        }
    }

    Ok(PointReport { q: q.to_vec(), rank_by_depth, stabilized_rank: rank, witnesses })
}

/// Runs the closure analysis at every sample point. The verdict is
/// completely nonholonomic exactly when every point stabilizes at full base
/// rank.
pub fn verdict(
    a: &SkewAlgebroid,
    sample_points: &[Vec<f64>],
    max_depth: Option<usize>,
) -> Result<NonholonomyReport> {
    if sample_points.is_empty() {
        return Err(Error::Precondition(
            "nonholonomy verdict needs at least one sample point".to_string(),
        ));
    }
    let m = a.base_dim();
    let mut rows = Vec::with_capacity(sample_points.len());
    for q in sample_points {
        rows.push(bracket_closure_rank(a, q, max_depth)?);
    }
    let verdict = if rows.iter().all(|r| r.stabilized_rank == m) {
        Verdict::CompletelyNonholonomic
    } else {
        Verdict::RankDeficient
    };
    Ok(NonholonomyReport { base_dim: m, rows, verdict })
}

fn csv_quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

impl NonholonomyReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<40} {:<16} {:<10} witnesses", "point", "ranks", "stabilized");
        for row in &self.rows {
            let pt = row
                .q
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(", ");
            let ranks = row
                .rank_by_depth
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            let wit =
                if row.witnesses.is_empty() { "-".to_string() } else { row.witnesses.join(" ") };
            let _ = writeln!(
                out,
                "{:<40} {:<16} {:<10} {}",
                format!("({pt})"),
                ranks,
                row.stabilized_rank,
                wit
            );
        }
        let _ = writeln!(out, "verdict: {} (base dimension {})", self.verdict, self.base_dim);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("point,rank_sequence,stabilized_rank,witnesses\n");
        for row in &self.rows {
            let pt = row
                .q
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(";");
            let ranks = row
                .rank_by_depth
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join("|");
            let wit = csv_quote(&row.witnesses.join("|"));
            let _ = writeln!(out, "{pt},{ranks},{},{wit}", row.stabilized_rank);
        }
        out
    }
}

/// Knobs for the random orbit walk.
#[derive(Debug, Clone, Copy)]
pub struct OrbitParams {
    pub n_steps: usize,
    pub step_time: f64,
    pub seed: u64,
}

/// Composes short-time flows of randomly chosen anchored frame fields (with
/// random sign), returning the visited points starting with `q0`. Each leg
/// integrates with sixteen internal rk4 substeps; the walk is deterministic
/// for a fixed seed.
pub fn sample_orbit(
    a: &SkewAlgebroid,
    q0: &[f64],
    params: &OrbitParams,
) -> Result<Vec<Vec<f64>>> {
    if params.n_steps == 0 {
        return Err(Error::Precondition("orbit sampling needs at least one step".to_string()));
    }
    if !(params.step_time > 0.0) || !params.step_time.is_finite() {
        return Err(Error::model(format!(
            "orbit leg time {} must be positive and finite",
            params.step_time
        )));
    }
    a.check_chart(q0)?;
    let fields = VectorField::anchor_fields(a);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut points = Vec::with_capacity(params.n_steps + 1);
    let mut q = q0.to_vec();
    points.push(q.clone());
    let dt = params.step_time / 16.0;
    for _ in 0..params.n_steps {
        let field = &fields[rng.random_range(0..fields.len())];
        let sign = if rng.random_range(0..2u32) == 0 { 1.0 } else { -1.0 };
        let mut rhs = |_t: f64, s: &[f64], out: &mut [f64]| -> Result<()> {
            a.check_chart(s)?;
            let v = field.eval(a, s)?;
            for (o, vi) in out.iter_mut().zip(v) {
                *o = sign * vi;
            }
            Ok(())
        };
        let leg = dynamics::rk4_integrate(&mut rhs, &q, (0.0, params.step_time), dt)?;
        q = leg.final_state().to_vec();
        points.push(q.clone());
    }
    Ok(points)
}

/// Max |f(q) - f(q0)| over a sampled orbit, after checking that the frame
/// differential of `f` vanishes (sup at most 1e-6) at every visited point;
/// functions failing that are not expected to be constant and the check is
/// refused rather than reported as a large deviation.
pub fn constancy_on_orbit(
    a: &SkewAlgebroid,
    f: &Expr,
    q0: &[f64],
    params: &OrbitParams,
) -> Result<f64> {
    let points = sample_orbit(a, q0, params)?;
    let mut f0 = None;
    let mut worst: f64 = 0.0;
    for (k, q) in points.iter().enumerate() {
        let d = a.d_function(f, q)?;
        let sup = d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if sup > 1e-6 {
            return Err(Error::Precondition(format!(
                "frame differential of the function has sup-norm {sup:.3e} at orbit sample {k}; \
                 constancy along orbits only applies to functions it annihilates"
            )));
        }
        let b = a.binding_for(q)?;
        let v = f.eval(&b)?;
        match f0 {
            None => f0 = Some(v),
            Some(v0) => worst = worst.max((v - v0).abs()),
        }
    }
    Ok(worst)
}
