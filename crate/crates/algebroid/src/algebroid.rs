//! Skew-symmetric algebroids over a coordinate chart: a pointwise frame for
//! an abstract bundle, an anchor mapping frame sections to base vector
//! fields, and antisymmetric structure functions. No Jacobi identity is
//! assumed anywhere; the failure of the induced differential to square to
//! zero is measured, not forbidden.

use crate::error::{Error, Result};
use crate::expr::{self, Expr, VarBinding};
use crate::numeric;
use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Points closer than this to a declared nonvanishing locus are treated as
/// outside the chart.
pub const EXCLUDED_EPS: f64 = 1e-9;

/// Margin used when drawing random sample points; wider than
/// [`EXCLUDED_EPS`] so finite differences at accepted points stay clear of
/// the locus.
const SAMPLE_MARGIN: f64 = 1e-3;

const RESERVED_NAMES: [&str; 8] = ["pi", "sin", "cos", "tan", "sqrt", "exp", "log", "abs"];

fn validate_name(kind: &str, name: &str) -> Result<()> {
    let mut chars = name.chars();
    let head_ok = chars
        .next()
        .map(|c| c.is_ascii_alphabetic() || c == '_')
        .unwrap_or(false);
    if !head_ok || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(Error::model(format!("{kind} `{name}` is not a valid identifier")));
    }
    if RESERVED_NAMES.contains(&name) {
        return Err(Error::model(format!("{kind} `{name}` shadows a builtin name")));
    }
    Ok(())
}

/// Chart metadata: hard coordinate bounds, expressions that must stay away
/// from zero, and a soft box used only for random sampling.
#[derive(Debug, Clone)]
pub struct ChartDomain {
    pub bounds: Vec<Option<(f64, f64)>>,
    pub nonvanishing: Vec<Expr>,
    pub sample_box: Vec<(f64, f64)>,
}

impl ChartDomain {
    pub fn unrestricted(m: usize) -> Self {
        ChartDomain {
            bounds: vec![None; m],
            nonvanishing: Vec::new(),
            sample_box: vec![(-1.0, 1.0); m],
        }
    }
}

/// One structure function in canonical position `alpha < beta` (0-based).
#[derive(Debug, Clone)]
pub struct StructureFn {
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    pub expr: Expr,
}

/// Structure functions evaluated at a point, with both orientations filled.
#[derive(Debug, Clone)]
pub struct StructureAt {
    n: usize,
    vals: Vec<f64>,
}

impl StructureAt {
    pub fn get(&self, alpha: usize, beta: usize, gamma: usize) -> f64 {
        self.vals[(alpha * self.n + beta) * self.n + gamma]
    }
}

#[derive(Debug, Clone)]
pub struct AlgebroidData {
    pub name: String,
    pub base_coords: Vec<String>,
    pub frame: Vec<String>,
    /// `anchor[alpha][i]` is the i-th base component of the anchor image of
    /// the alpha-th frame field.
    pub anchor: Vec<Vec<Expr>>,
    /// Entries `(alpha, beta, gamma, expr)`, 0-based, any orientation.
    pub structure: Vec<(usize, usize, usize, Expr)>,
    pub params: Vec<(String, f64)>,
    pub chart: Option<ChartDomain>,
    pub lie_algebroid: bool,
}

#[derive(Debug, Clone)]
pub struct SkewAlgebroid {
    name: String,
    base_coords: Vec<String>,
    frame: Vec<String>,
    anchor: Vec<Vec<Expr>>,
    structure: Vec<StructureFn>,
    params: VarBinding,
    chart: ChartDomain,
    lie_algebroid: bool,
}

impl SkewAlgebroid {
    pub fn new(data: AlgebroidData) -> Result<Self> {
        let m = data.base_coords.len();
        let n = data.frame.len();
        if m == 0 || n == 0 {
            return Err(Error::model("base dimension and frame rank must be positive"));
        }
        for c in &data.base_coords {
            validate_name("coordinate", c)?;
        }
        for f in &data.frame {
            validate_name("frame label", f)?;
        }
        for (p, _) in &data.params {
            validate_name("parameter", p)?;
        }
        let mut seen: Vec<&str> = Vec::new();
        for name in data
            .base_coords
            .iter()
            .chain(data.params.iter().map(|(p, _)| p))
        {
            if seen.contains(&name.as_str()) {
                return Err(Error::model(format!(
                    "name `{name}` is used more than once across coordinates and parameters"
                )));
            }
            seen.push(name);
        }

        if data.anchor.len() != n {
            return Err(Error::shape(format!(
                "anchor has {} rows, expected one per frame field ({n})",
                data.anchor.len()
            )));
        }
        for (alpha, row) in data.anchor.iter().enumerate() {
            if row.len() != m {
                return Err(Error::shape(format!(
                    "anchor row {} has {} components, expected {m}",
                    alpha + 1,
                    row.len()
                )));
            }
        }

        let params = VarBinding::from_pairs(data.params)?;
        let known = |name: &String| {
            data.base_coords.contains(name) || params.get(name).is_some()
        };
        for (alpha, row) in data.anchor.iter().enumerate() {
            for (i, e) in row.iter().enumerate() {
                for v in e.free_vars() {
                    if !known(&v) {
                        return Err(Error::model(format!(
                            "anchor[{}][{}] references unknown variable `{v}`",
                            alpha + 1,
                            i + 1
                        )));
                    }
                }
            }
        }

        // canonicalize structure entries to alpha < beta, flipping sign
        let mut structure: Vec<StructureFn> = Vec::new();
        let mut duplicates: Vec<(usize, Expr)> = Vec::new();
        for (alpha, beta, gamma, e) in data.structure {
            if alpha >= n || beta >= n || gamma >= n {
                return Err(Error::model(format!(
                    "structure entry C^{}_{{{} {}}} is out of range for rank {n}",
                    gamma + 1,
                    alpha + 1,
                    beta + 1
                )));
            }
            if alpha == beta {
                return Err(Error::model(format!(
                    "structure entry C^{}_{{{} {}}} must have distinct lower indices",
                    gamma + 1,
                    alpha + 1,
                    beta + 1
                )));
            }
            for v in e.free_vars() {
                if !known(&v) {
                    return Err(Error::model(format!(
                        "structure entry C^{}_{{{} {}}} references unknown variable `{v}`",
                        gamma + 1,
                        alpha + 1,
                        beta + 1
                    )));
                }
            }
            let (a, b, e) = if alpha < beta {
                (alpha, beta, e)
            } else {
                (beta, alpha, expr::build::neg(e))
            };
            match structure
                .iter()
                .position(|s| s.alpha == a && s.beta == b && s.gamma == gamma)
            {
                Some(idx) => duplicates.push((idx, e)),
                None => structure.push(StructureFn { alpha: a, beta: b, gamma, expr: e }),
            }
        }

        let chart = match data.chart {
            Some(c) => {
                if c.bounds.len() != m || c.sample_box.len() != m {
                    return Err(Error::shape(
                        "chart domain arrays must match the base dimension".to_string(),
                    ));
                }
                for e in &c.nonvanishing {
                    for v in e.free_vars() {
                        if !known(&v) {
                            return Err(Error::model(format!(
                                "nonvanishing expression references unknown variable `{v}`"
                            )));
                        }
                    }
                }
                c
            }
            None => ChartDomain::unrestricted(m),
        };

        let a = SkewAlgebroid {
            name: data.name,
            base_coords: data.base_coords,
            frame: data.frame,
            anchor: data.anchor,
            structure,
            params,
            chart,
            lie_algebroid: data.lie_algebroid,
        };

        // a pair like C^g_{ab} and C^g_{ba} must be numeric negatives; after
        // canonicalization both sit in the same slot and must agree there
        if !duplicates.is_empty() {
            let points = a.sample_points(20, 0xA16B)?;
            for (idx, dup) in &duplicates {
                let s = &a.structure[*idx];
                for q in &points {
                    let b = a.binding_for(q)?;
                    let v1 = s.expr.eval(&b)?;
                    let v2 = dup.eval(&b)?;
                    if (v1 - v2).abs() > 1e-9 * v1.abs().max(v2.abs()).max(1.0) {
                        return Err(Error::model(format!(
                            "structure functions violate antisymmetry: C^{}_{{{} {}}} given twice with values {v1} and {v2}",
                            s.gamma + 1,
                            s.alpha + 1,
                            s.beta + 1
                        )));
                    }
                }
            }
        }

        Ok(a)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Dimension of the base chart.
    pub fn base_dim(&self) -> usize {
        self.base_coords.len()
    }

    /// Rank of the bundle (number of frame fields).
    pub fn rank(&self) -> usize {
        self.frame.len()
    }

    pub fn base_coords(&self) -> &[String] {
        &self.base_coords
    }

    pub fn frame_names(&self) -> &[String] {
        &self.frame
    }

    pub fn params(&self) -> &VarBinding {
        &self.params
    }

    pub fn chart(&self) -> &ChartDomain {
        &self.chart
    }

    pub fn is_lie_algebroid_flagged(&self) -> bool {
        self.lie_algebroid
    }

    pub fn structure_entries(&self) -> &[StructureFn] {
        &self.structure
    }

    pub fn anchor_exprs(&self) -> &[Vec<Expr>] {
        &self.anchor
    }

    /// Binding layout is parameters first, then base coordinates; callers
    /// that rebind coordinates in a loop can use [`Self::coord_offset`].
    pub fn binding_for(&self, q: &[f64]) -> Result<VarBinding> {
        if q.len() != self.base_dim() {
            return Err(Error::shape(format!(
                "point has {} coordinates, chart has {}",
                q.len(),
                self.base_dim()
            )));
        }
        let mut b = self.params.clone();
        for (name, value) in self.base_coords.iter().zip(q) {
            b.set(name, *value);
        }
        Ok(b)
    }

    pub fn coord_offset(&self) -> usize {
        self.params.len()
    }

    /// Hard chart membership: bounds and nonvanishing loci.
    pub fn check_chart(&self, q: &[f64]) -> Result<()> {
        let b = self.binding_for(q)?;
        for (i, bound) in self.chart.bounds.iter().enumerate() {
            if let Some((lo, hi)) = bound {
                if q[i] < *lo || q[i] > *hi {
                    return Err(Error::Domain(format!(
                        "coordinate {} = {} leaves the chart box [{lo}, {hi}]",
                        self.base_coords[i], q[i]
                    )));
                }
            }
        }
        for e in &self.chart.nonvanishing {
            let v = e.eval(&b)?;
            if v.abs() <= EXCLUDED_EPS {
                return Err(Error::Domain(format!(
                    "excluded locus reached: |{e}| = {} at the current point",
                    v.abs()
                )));
            }
        }
        Ok(())
    }

    /// Anchor matrix at `q`, shaped base_dim x rank; column alpha is the
    /// base vector field the alpha-th frame section anchors to.
    pub fn anchor_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let b = self.binding_for(q)?;
        self.anchor_matrix_with(&b)
    }

    pub(crate) fn anchor_matrix_with(&self, b: &VarBinding) -> Result<DMatrix<f64>> {
        let m = self.base_dim();
        let n = self.rank();
        let mut out = DMatrix::zeros(m, n);
        for alpha in 0..n {
            for i in 0..m {
                out[(i, alpha)] = self.anchor[alpha][i].eval(b)?;
            }
        }
        Ok(out)
    }

    /// All structure function values at the point bound in `b`.
    pub fn structure_at(&self, b: &VarBinding) -> Result<StructureAt> {
        let n = self.rank();
        let mut vals = vec![0.0; n * n * n];
        for s in &self.structure {
            let v = s.expr.eval(b)?;
            vals[(s.alpha * n + s.beta) * n + s.gamma] = v;
            vals[(s.beta * n + s.alpha) * n + s.gamma] = -v;
        }
        Ok(StructureAt { n, vals })
    }

    /// Single structure function value, any index orientation.
    pub fn structure_value(&self, alpha: usize, beta: usize, gamma: usize, b: &VarBinding) -> Result<f64> {
        if alpha == beta {
            return Ok(0.0);
        }
        let (a0, b0, sign) = if alpha < beta { (alpha, beta, 1.0) } else { (beta, alpha, -1.0) };
        for s in &self.structure {
            if s.alpha == a0 && s.beta == b0 && s.gamma == gamma {
                return Ok(sign * s.expr.eval(b)?);
            }
        }
        Ok(0.0)
    }

    /// Gradient of `f` with respect to the base coordinates by central
    /// differences, reusing one binding. Extra variables bound after the
    /// coordinates (section constants, fiber values) are untouched.
    pub(crate) fn grad_base(&self, f: &Expr, b: &mut VarBinding, q: &[f64]) -> Result<Vec<f64>> {
        let off = self.coord_offset();
        let mut out = Vec::with_capacity(q.len());
        for (i, &x) in q.iter().enumerate() {
            let h = numeric::fd_step(x);
            b.set_at(off + i, x + h);
            let fp = f.eval(b)?;
            b.set_at(off + i, x - h);
            let fm = f.eval(b)?;
            b.set_at(off + i, x);
            out.push((fp - fm) / (2.0 * h));
        }
        Ok(out)
    }

    /// Almost-differential of a base function, evaluated on the frame:
    /// component gamma is the anchor image of the gamma-th frame field
    /// applied to `f`.
    pub fn d_function(&self, f: &Expr, q: &[f64]) -> Result<Vec<f64>> {
        let mut b = self.binding_for(q)?;
        let grad = self.grad_base(f, &mut b, q)?;
        let rho = self.anchor_matrix_with(&b)?;
        let n = self.rank();
        let mut out = vec![0.0; n];
        for gamma in 0..n {
            let mut acc = 0.0;
            for i in 0..q.len() {
                acc += rho[(i, gamma)] * grad[i];
            }
            out[gamma] = acc;
        }
        Ok(out)
    }

    /// Random chart points from the sampling box, rejecting the vicinity of
    /// excluded loci. Deterministic for a fixed seed.
    pub fn sample_points(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.base_dim();
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        let cap = 100 * count.max(1);
        while out.len() < count {
            attempts += 1;
            if attempts > cap {
                return Err(Error::model(format!(
                    "rejected {attempts} candidate points while sampling chart of `{}`; \
                     the sampling box may sit on an excluded locus",
                    self.name
                )));
            }
            let q: Vec<f64> = (0..m)
                .map(|i| {
                    let (lo, hi) = self.chart.sample_box[i];
                    rng.random_range(lo..=hi)
                })
                .collect();
            let b = self.binding_for(&q)?;
            let mut ok = true;
            for e in &self.chart.nonvanishing {
                if e.eval(&b)?.abs() <= SAMPLE_MARGIN {
                    ok = false;
                    break;
                }
            }
            if ok {
                out.push(q);
            }
        }
        Ok(out)
    }

    /// Drops the frame fields with index >= `d`, keeping only the structure
    /// functions whose indices all stay below `d`. For an ambient algebroid
    /// whose leading frame fields span a constraint subbundle orthonormally,
    /// this is exactly the constrained (projected) algebroid.
    pub fn restrict_constrained(&self, d: usize) -> Result<SkewAlgebroid> {
        if d == 0 || d > self.rank() {
            return Err(Error::model(format!(
                "cannot restrict rank {} bundle to its first {d} frame fields",
                self.rank()
            )));
        }
        Ok(SkewAlgebroid {
            name: format!("{}_restricted_{d}", self.name),
            base_coords: self.base_coords.clone(),
            frame: self.frame[..d].to_vec(),
            anchor: self.anchor[..d].to_vec(),
            structure: self
                .structure
                .iter()
                .filter(|s| s.alpha < d && s.beta < d && s.gamma < d)
                .cloned()
                .collect(),
            params: self.params.clone(),
            chart: self.chart.clone(),
            lie_algebroid: false,
        })
    }
}

// ---------------------------------------------------------------------------
// Sections of the dual bundle

/// A 1-form section of the dual bundle, written in the dual frame. Family
/// constants (for parametrized section families) are carried as a private
/// binding appended after coordinates.
#[derive(Debug, Clone)]
pub struct Section1Form {
    components: Vec<Expr>,
    consts: VarBinding,
}

impl Section1Form {
    pub fn new(a: &SkewAlgebroid, components: Vec<Expr>, consts: VarBinding) -> Result<Self> {
        if components.len() != a.rank() {
            return Err(Error::shape(format!(
                "section has {} components, bundle rank is {}",
                components.len(),
                a.rank()
            )));
        }
        for (name, _) in consts.iter() {
            validate_name("section constant", name)?;
            if a.base_coords.iter().any(|c| c == name) || a.params.get(name).is_some() {
                return Err(Error::model(format!(
                    "section constant `{name}` collides with a coordinate or parameter"
                )));
            }
        }
        for (idx, e) in components.iter().enumerate() {
            for v in e.free_vars() {
                let ok = a.base_coords.contains(&v)
                    || a.params.get(&v).is_some()
                    || consts.get(&v).is_some();
                if !ok {
                    return Err(Error::model(format!(
                        "section component {} references unknown variable `{v}`",
                        idx + 1
                    )));
                }
            }
        }
        Ok(Section1Form { components, consts })
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn consts(&self) -> &VarBinding {
        &self.consts
    }

    /// Binding with parameters, coordinates, then section constants.
    pub fn binding_for(&self, a: &SkewAlgebroid, q: &[f64]) -> Result<VarBinding> {
        let mut b = a.binding_for(q)?;
        for (name, value) in self.consts.iter() {
            b.set(name, value);
        }
        Ok(b)
    }

    pub fn value(&self, a: &SkewAlgebroid, q: &[f64]) -> Result<Vec<f64>> {
        let b = self.binding_for(a, q)?;
        self.components.iter().map(|e| e.eval(&b)).collect()
    }

    /// Scales component `idx` by `factor`; used for perturbation controls.
    pub fn scaled_component(&self, idx: usize, factor: f64) -> Result<Section1Form> {
        if idx >= self.components.len() {
            return Err(Error::shape(format!(
                "no component {} in a rank-{} section",
                idx + 1,
                self.components.len()
            )));
        }
        let mut components = self.components.clone();
        components[idx] = expr::build::mul(Expr::Num(factor), components[idx].clone());
        Ok(Section1Form { components, consts: self.consts.clone() })
    }
}

impl SkewAlgebroid {
    /// Exterior-style derivative of a dual section evaluated on frame pairs:
    /// entry (gamma, nu) applies the anchored gamma field to component nu,
    /// subtracts the mirrored term, and subtracts the structure pairing.
    /// A section is closed (a cocycle) when this vanishes.
    pub fn d_oneform(&self, alpha: &Section1Form, q: &[f64]) -> Result<DMatrix<f64>> {
        let mut b = alpha.binding_for(self, q)?;
        let rho = self.anchor_matrix_with(&b)?;
        let c = self.structure_at(&b)?;
        let aval: Vec<f64> = alpha
            .components
            .iter()
            .map(|e| e.eval(&b))
            .collect::<Result<_>>()?;
        let mut grads = Vec::with_capacity(self.rank());
        for e in &alpha.components {
            grads.push(self.grad_base(e, &mut b, q)?);
        }
        Ok(self.d_oneform_combine(&rho, &c, &aval, &grads))
    }

    /// Same differential for a section only available as a pointwise
    /// evaluator, with the component Jacobian taken by central differences.
    pub fn d_oneform_fn(
        &self,
        section: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
        q: &[f64],
    ) -> Result<DMatrix<f64>> {
        let n = self.rank();
        let m = self.base_dim();
        let b = self.binding_for(q)?;
        let rho = self.anchor_matrix_with(&b)?;
        let c = self.structure_at(&b)?;
        let aval = section(q)?;
        if aval.len() != n {
            return Err(Error::shape(format!(
                "section evaluator returned {} components, bundle rank is {n}",
                aval.len()
            )));
        }
        let mut grads = vec![vec![0.0; m]; n];
        for i in 0..m {
            let h = numeric::fd_step(q[i]);
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[i] += h;
            qm[i] -= h;
            let fp = section(&qp)?;
            let fm = section(&qm)?;
            for nu in 0..n {
                grads[nu][i] = (fp[nu] - fm[nu]) / (2.0 * h);
            }
        }
        Ok(self.d_oneform_combine(&rho, &c, &aval, &grads))
    }

    fn d_oneform_combine(
        &self,
        rho: &DMatrix<f64>,
        c: &StructureAt,
        aval: &[f64],
        grads: &[Vec<f64>],
    ) -> DMatrix<f64> {
        let n = self.rank();
        let mut out = DMatrix::zeros(n, n);
        for gamma in 0..n {
            for nu in (gamma + 1)..n {
                let mut v = 0.0;
                for i in 0..self.base_dim() {
                    v += rho[(i, gamma)] * grads[nu][i] - rho[(i, nu)] * grads[gamma][i];
                }
                for delta in 0..n {
                    v -= c.get(gamma, nu, delta) * aval[delta];
                }
                out[(gamma, nu)] = v;
                out[(nu, gamma)] = -v;
            }
        }
        out
    }

    /// Max absolute entry of [`Self::d_oneform`]; zero means cocycle.
    pub fn cocycle_residual(&self, alpha: &Section1Form, q: &[f64]) -> Result<f64> {
        Ok(self.d_oneform(alpha, q)?.amax())
    }

    /// [`Self::cocycle_residual`] for an evaluator-backed section.
    pub fn cocycle_residual_fn(
        &self,
        section: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
        q: &[f64],
    ) -> Result<f64> {
        Ok(self.d_oneform_fn(section, q)?.amax())
    }
}

// ---------------------------------------------------------------------------
// Higher-degree forms

/// Alternating k-form on the bundle with expression components over strictly
/// increasing frame index tuples (0-based). Missing tuples are zero.
#[derive(Debug, Clone)]
pub struct KForm {
    degree: usize,
    components: Vec<(Vec<usize>, Expr)>,
    consts: VarBinding,
}

/// A k-form evaluated at a base point.
#[derive(Debug, Clone)]
pub struct KFormValue {
    pub degree: usize,
    pub entries: Vec<(Vec<usize>, f64)>,
}

impl KFormValue {
    /// Value on an arbitrary index tuple, signed by the sorting permutation.
    pub fn get(&self, indices: &[usize]) -> f64 {
        match sort_with_sign(indices) {
            None => 0.0,
            Some((sorted, sign)) => self
                .entries
                .iter()
                .find(|(t, _)| *t == sorted)
                .map(|(_, v)| sign * v)
                .unwrap_or(0.0),
        }
    }
}

/// Sorts an index tuple, returning the permutation sign; `None` for repeats.
fn sort_with_sign(indices: &[usize]) -> Option<(Vec<usize>, f64)> {
    let mut v = indices.to_vec();
    let mut sign = 1.0;
    // insertion sort, counting swaps
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    for w in v.windows(2) {
        if w[0] == w[1] {
            return None;
        }
    }
    Some((v, sign))
}

impl KForm {
    pub fn new(
        a: &SkewAlgebroid,
        degree: usize,
        components: Vec<(Vec<usize>, Expr)>,
        consts: VarBinding,
    ) -> Result<Self> {
        if degree == 0 || degree > a.rank() {
            return Err(Error::shape(format!(
                "degree {degree} form on a rank-{} bundle",
                a.rank()
            )));
        }
        for (tuple, e) in &components {
            if tuple.len() != degree {
                return Err(Error::shape(format!(
                    "component tuple {tuple:?} does not have degree {degree}"
                )));
            }
            if tuple.windows(2).any(|w| w[0] >= w[1]) || tuple.iter().any(|&i| i >= a.rank()) {
                return Err(Error::shape(format!(
                    "component tuple {tuple:?} must be strictly increasing within the frame"
                )));
            }
            if components.iter().filter(|(t, _)| t == tuple).count() > 1 {
                return Err(Error::model(format!("duplicate component tuple {tuple:?}")));
            }
            for v in e.free_vars() {
                let ok = a.base_coords.contains(&v)
                    || a.params.get(&v).is_some()
                    || consts.get(&v).is_some();
                if !ok {
                    return Err(Error::model(format!(
                        "form component {tuple:?} references unknown variable `{v}`"
                    )));
                }
            }
        }
        Ok(KForm { degree, components, consts })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn from_section(a: &SkewAlgebroid, s: &Section1Form) -> Result<KForm> {
        let components = s
            .components()
            .iter()
            .enumerate()
            .filter(|(_, e)| **e != Expr::Num(0.0))
            .map(|(i, e)| (vec![i], e.clone()))
            .collect();
        KForm::new(a, 1, components, s.consts().clone())
    }

    fn binding_for(&self, a: &SkewAlgebroid, q: &[f64]) -> Result<VarBinding> {
        let mut b = a.binding_for(q)?;
        for (name, value) in self.consts.iter() {
            b.set(name, value);
        }
        Ok(b)
    }

    pub fn value_at(&self, a: &SkewAlgebroid, q: &[f64]) -> Result<KFormValue> {
        let b = self.binding_for(a, q)?;
        let entries = self
            .components
            .iter()
            .map(|(t, e)| Ok((t.clone(), e.eval(&b)?)))
            .collect::<Result<_>>()?;
        Ok(KFormValue { degree: self.degree, entries })
    }

    /// Signed component on an arbitrary tuple as (stored tuple index, sign),
    /// or `None` when the component is absent or the tuple has repeats.
    fn component_slot(&self, indices: &[usize]) -> Option<(usize, f64)> {
        let (sorted, sign) = sort_with_sign(indices)?;
        self.components
            .iter()
            .position(|(t, _)| *t == sorted)
            .map(|idx| (idx, sign))
    }
}

impl SkewAlgebroid {
    /// Almost-differential of a k-form, evaluated on all strictly increasing
    /// (k+1)-tuples of frame fields. First the alternating sum of anchored
    /// directional derivatives of the contracted components, then the
    /// structure-function pairing over index pairs.
    pub fn d_kform(&self, omega: &KForm, q: &[f64]) -> Result<KFormValue> {
        let n = self.rank();
        let k = omega.degree;
        let mut b = omega.binding_for(self, q)?;
        let rho = self.anchor_matrix_with(&b)?;
        let c = self.structure_at(&b)?;

        // cache gradients and values of stored components
        let mut comp_vals = Vec::with_capacity(omega.components.len());
        let mut comp_grads = Vec::with_capacity(omega.components.len());
        for (_, e) in &omega.components {
            comp_vals.push(e.eval(&b)?);
            comp_grads.push(self.grad_base(e, &mut b, q)?);
        }

        let mut entries = Vec::new();
        for tuple in increasing_tuples(n, k + 1) {
            let mut total = 0.0;
            // anchored derivative terms
            for (j, &idx_j) in tuple.iter().enumerate() {
                let rest: Vec<usize> = tuple
                    .iter()
                    .enumerate()
                    .filter(|(l, _)| *l != j)
                    .map(|(_, &v)| v)
                    .collect();
                if let Some((slot, sign)) = omega.component_slot(&rest) {
                    let mut dir = 0.0;
                    for i in 0..self.base_dim() {
                        dir += rho[(i, idx_j)] * comp_grads[slot][i];
                    }
                    let parity = if j % 2 == 0 { 1.0 } else { -1.0 };
                    total += parity * sign * dir;
                }
            }
            // structure-function terms
            for j in 0..tuple.len() {
                for l in (j + 1)..tuple.len() {
                    let rest: Vec<usize> = tuple
                        .iter()
                        .enumerate()
                        .filter(|(p, _)| *p != j && *p != l)
                        .map(|(_, &v)| v)
                        .collect();
                    let parity = if (j + l) % 2 == 0 { 1.0 } else { -1.0 };
                    for delta in 0..n {
                        let cv = c.get(tuple[j], tuple[l], delta);
                        if cv == 0.0 {
                            continue;
                        }
                        let mut with_delta = vec![delta];
                        with_delta.extend_from_slice(&rest);
                        if let Some((slot, sign)) = omega.component_slot(&with_delta) {
                            total += parity * cv * sign * comp_vals[slot];
                        }
                    }
                }
            }
            entries.push((tuple, total));
        }
        Ok(KFormValue { degree: k + 1, entries })
    }
}

/// All strictly increasing `k`-tuples drawn from `0..n`, lexicographic.
pub(crate) fn increasing_tuples(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // advance
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] + 1 <= n - (k - i) {
                cur[i] += 1;
                for j in (i + 1)..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Curvature

impl SkewAlgebroid {
    /// Failure of the almost-differential to square to zero on a function,
    /// as the antisymmetric matrix of values on frame pairs. Computed along
    /// two independent routes (d applied twice with exact expression
    /// derivatives, and the anchored-commutator form); they must agree to
    /// within 1e-5 relative or the call fails.
    pub fn curvature_of_function(&self, f: &Expr, q: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.rank();
        let m = self.base_dim();
        let b = self.binding_for(q)?;
        let rho = self.anchor_matrix_with(&b)?;
        let c = self.structure_at(&b)?;

        // exact partials of f and of the anchor entries
        let df: Vec<Expr> = self.base_coords.iter().map(|v| f.derivative(v)).collect();
        let df_vals: Vec<f64> = df.iter().map(|e| e.eval(&b)).collect::<Result<_>>()?;
        let mut d2f = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                d2f[i * m + j] = df[j].derivative(&self.base_coords[i]).eval(&b)?;
            }
        }
        let mut drho = vec![0.0; n * m * m]; // drho[(nu*m + j)*m + i] = d rho^j_nu / d q^i
        for nu in 0..n {
            for j in 0..m {
                for i in 0..m {
                    drho[(nu * m + j) * m + i] =
                        self.anchor[nu][j].derivative(&self.base_coords[i]).eval(&b)?;
                }
            }
        }

        let mut route_a = DMatrix::zeros(n, n);
        let mut route_b = DMatrix::zeros(n, n);
        for gamma in 0..n {
            for nu in (gamma + 1)..n {
                // route (a): d applied to the 1-form d f
                let mut va = 0.0;
                for i in 0..m {
                    let mut d_nu_i = 0.0; // d/dq^i of (df)(X_nu)
                    let mut d_gamma_i = 0.0;
                    for j in 0..m {
                        d_nu_i += drho[(nu * m + j) * m + i] * df_vals[j]
                            + rho[(j, nu)] * d2f[i * m + j];
                        d_gamma_i += drho[(gamma * m + j) * m + i] * df_vals[j]
                            + rho[(j, gamma)] * d2f[i * m + j];
                    }
                    va += rho[(i, gamma)] * d_nu_i - rho[(i, nu)] * d_gamma_i;
                }
                for delta in 0..n {
                    let cv = c.get(gamma, nu, delta);
                    if cv != 0.0 {
                        let mut dfx = 0.0;
                        for j in 0..m {
                            dfx += rho[(j, delta)] * df_vals[j];
                        }
                        va -= cv * dfx;
                    }
                }

                // route (b): commutator of the anchored fields minus the
                // anchored bracket, applied to f
                let mut vb = 0.0;
                for j in 0..m {
                    let mut comm_j = 0.0;
                    for i in 0..m {
                        comm_j += rho[(i, gamma)] * drho[(nu * m + j) * m + i]
                            - rho[(i, nu)] * drho[(gamma * m + j) * m + i];
                    }
                    let mut br_j = 0.0;
                    for delta in 0..n {
                        br_j += c.get(gamma, nu, delta) * rho[(j, delta)];
                    }
                    vb += (comm_j - br_j) * df_vals[j];
                }

                let tol = 1e-5 * va.abs().max(vb.abs()).max(1.0);
                if (va - vb).abs() > tol {
                    return Err(Error::Inconsistency(format!(
                        "curvature routes disagree on pair ({}, {}): {va} vs {vb}",
                        gamma + 1,
                        nu + 1
                    )));
                }
                route_a[(gamma, nu)] = va;
                route_a[(nu, gamma)] = -va;
                route_b[(gamma, nu)] = vb;
                route_b[(nu, gamma)] = -vb;
            }
        }
        Ok(route_a)
    }
}

// ---------------------------------------------------------------------------
// Structure extraction from a bracket oracle

/// Coordinate functions on the dual bundle: a base coordinate or a fiber
/// (momentum) coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordFn {
    Base(usize),
    Fiber(usize),
}

/// Recovers anchor and structure values at `q` from a bracket oracle on
/// coordinate functions, checking that the bracket is linear in the fiber.
/// Returns the anchor (base_dim x rank) and the flat structure tensor with
/// layout `[(alpha * n + beta) * n + gamma]`.
pub fn extract_structure(
    bracket: &mut dyn FnMut(&CoordFn, &CoordFn, &[f64], &[f64]) -> Result<f64>,
    m: usize,
    n: usize,
    q: &[f64],
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let zero = vec![0.0; n];

    // base-base block must vanish
    for i in 0..m {
        for j in 0..m {
            let v = bracket(&CoordFn::Base(i), &CoordFn::Base(j), q, &zero)?;
            if v.abs() > 1e-6 {
                return Err(Error::Precondition(format!(
                    "bracket of base coordinates {} and {} is {v}, not zero",
                    i + 1,
                    j + 1
                )));
            }
        }
    }

    let mut anchor = DMatrix::zeros(m, n);
    for j in 0..m {
        for alpha in 0..n {
            let v0 = bracket(&CoordFn::Base(j), &CoordFn::Fiber(alpha), q, &zero)?;
            // fiber-independence of the base-fiber block
            let mut p = zero.clone();
            p[(j + alpha) % n] = 1.0;
            let v1 = bracket(&CoordFn::Base(j), &CoordFn::Fiber(alpha), q, &p)?;
            if (v1 - v0).abs() > 1e-6 * v0.abs().max(1.0) {
                return Err(Error::Precondition(format!(
                    "base-fiber bracket ({}, {}) varies along the fiber: {v0} vs {v1}",
                    j + 1,
                    alpha + 1
                )));
            }
            anchor[(j, alpha)] = v0;
        }
    }

    let mut structure = vec![0.0; n * n * n];
    for alpha in 0..n {
        for beta in (alpha + 1)..n {
            for gamma in 0..n {
                let mut p = zero.clone();
                p[gamma] = 1.0;
                let v1 = bracket(&CoordFn::Fiber(alpha), &CoordFn::Fiber(beta), q, &p)?;
                p[gamma] = 2.0;
                let v2 = bracket(&CoordFn::Fiber(alpha), &CoordFn::Fiber(beta), q, &p)?;
                if (v2 - 2.0 * v1).abs() > 1e-6 * v1.abs().max(1.0) {
                    return Err(Error::Precondition(format!(
                        "fiber-fiber bracket ({}, {}) is not linear along fiber direction {}",
                        alpha + 1,
                        beta + 1,
                        gamma + 1
                    )));
                }
                let c = -v1;
                structure[(alpha * n + beta) * n + gamma] = c;
                structure[(beta * n + alpha) * n + gamma] = -c;
            }
        }
    }
    Ok((anchor, structure))
}

// ---------------------------------------------------------------------------
