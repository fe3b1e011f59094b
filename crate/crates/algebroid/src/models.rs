//! JSON model files and the bundled example catalog.
//!
//! A model file describes one algebroid plus its optional mechanical data:
//! parameters with default values, a potential, named section families with
//! free constants, named scalar functions, a kinetic metric certifying that
//! the frame is orthonormal, and a reduction morphism onto another model.
//! Every expression is a string in the shared grammar (see [`crate::expr`]).
//!
//! Loading is strict. Beyond shape and scope validation, two semantic gates
//! run on every load: a metric, when declared, must make the anchored frame
//! orthonormal at sampled chart points, and a model flagged `lie_algebroid`
//! must have a vanishing bracket Jacobiator at sampled dual points. A file
//! that fails either gate is rejected, not loaded with a warning.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebroid::{
    AlgebroidData, ChartDomain, CoordFn, Section1Form, SkewAlgebroid,
};
use crate::dynamics::MechanicalSystem;
use crate::error::{Error, Result};
use crate::expr::{parse, Expr, VarBinding};
use crate::morphism::BundleMorphism;
use crate::poisson::{jacobiator, DualPoint, ScalarOnDual};

/// Longest chain of morphism targets a single load will follow.
const MAX_MORPHISM_DEPTH: usize = 4;
const METRIC_POINTS: usize = 20;
const ORTHONORMAL_TOL: f64 = 1e-9;
const JACOBI_POINTS: usize = 5;
const JACOBI_TOL: f64 = 1e-3;
const METRIC_SEED: u64 = 0x90DE;
const JACOBI_SEED: u64 = 0x1ACB;

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureEntry {
    /// Lower indices, 1-based; `expr` is the value of `C^gamma_{alpha beta}`.
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    pub expr: String,
}

/// Chart block: `box` holds hard per-coordinate bounds, `nonvanishing` lists
/// expressions that must stay away from zero, and `sample_box` restricts
/// random sampling only. Coordinates absent from `box` are unbounded; absent
/// from `sample_box`, sampling falls back to the hard bounds or to [-1, 1].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    #[serde(default, rename = "box", skip_serializing_if = "BTreeMap::is_empty")]
    pub bounds: BTreeMap<String, (f64, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nonvanishing: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sample_box: BTreeMap<String, (f64, f64)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    #[serde(default)]
    pub lie_algebroid: bool,
    /// Marks models whose dynamics have a tagged closed-form solution in
    /// [`crate::dynamics`], so tools can offer an exact cross-check.
    #[serde(default, skip_serializing_if = "is_false")]
    pub closed_form_reference: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionEntry {
    /// Free family constants with their default values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, f64>,
    pub components: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphismEntry {
    /// Target model: a bundled name or a path, resolved like any other load.
    pub target: String,
    pub base_map: Vec<String>,
    /// Rows indexed by the target frame, columns by the source frame.
    pub fiber_map: Vec<Vec<String>>,
    #[serde(default)]
    pub fiberwise_injective: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "metadata_empty")]
    pub metadata: Metadata,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, f64>,
    pub base_coordinates: Vec<String>,
    pub frame: Vec<String>,
    /// `anchor[alpha][i]`: i-th base component of the alpha-th frame field.
    pub anchor: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub structure: Vec<StructureEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart_domain: Option<ChartSpec>,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sections: BTreeMap<String, SectionEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub functions: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub morphism: Option<MorphismEntry>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn metadata_empty(m: &Metadata) -> bool {
    m.source.is_empty()
}

// ---------------------------------------------------------------------------
// Bundled catalog

const BUNDLED: &[(&str, &str)] = &[
    ("standard_tq_r2", include_str!("../models/standard_tq_r2.model")),
    ("r2_counterexample", include_str!("../models/r2_counterexample.model")),
    ("beanie_reduced", include_str!("../models/beanie_reduced.model")),
    ("beanie_full", include_str!("../models/beanie_full.model")),
    ("carriage", include_str!("../models/carriage.model")),
    ("snakeboard_reduced", include_str!("../models/snakeboard_reduced.model")),
];

const ALIASES: &[(&str, &str)] = &[
    ("snakeboard", "snakeboard_reduced"),
    ("beanie", "beanie_reduced"),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

/// One catalog row, parsed from the file headers without running the load
/// gates.
#[derive(Debug, Clone)]
pub struct ModelSummary {
    pub name: String,
    pub base_dim: usize,
    pub rank: usize,
    pub lie_algebroid: bool,
    pub source: String,
}

pub fn bundled_catalog() -> Result<Vec<ModelSummary>> {
    BUNDLED
        .iter()
        .map(|(name, text)| {
            let f: ModelFile = serde_json::from_str(text)
                .map_err(|e| Error::model(format!("bundled model `{name}`: {e}")))?;
            Ok(ModelSummary {
                name: (*name).to_string(),
                base_dim: f.base_coordinates.len(),
                rank: f.frame.len(),
                lie_algebroid: f.flags.lie_algebroid,
                source: f.metadata.source,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Loaded form

#[derive(Debug, Clone)]
pub struct SectionFamily {
    /// Default values of the free family constants.
    pub constants: BTreeMap<String, f64>,
    pub components: Vec<Expr>,
}

#[derive(Debug)]
pub struct MorphismData {
    /// The spec string the target was resolved from, kept for serialization.
    pub target_spec: String,
    pub target: Box<LoadedModel>,
    pub base_map: Vec<Expr>,
    pub fiber_map: Vec<Vec<Expr>>,
    pub fiberwise_injective: bool,
}

#[derive(Debug)]
pub struct LoadedModel {
    pub algebroid: SkewAlgebroid,
    pub potential: Option<Expr>,
    pub sections: BTreeMap<String, SectionFamily>,
    pub functions: BTreeMap<String, Expr>,
    pub metric: Option<Vec<Vec<Expr>>>,
    pub morphism: Option<MorphismData>,
    pub closed_form_reference: bool,
    pub source_note: String,
}

impl LoadedModel {
    pub fn name(&self) -> &str {
        self.algebroid.name()
    }

    pub fn system(&self) -> Result<MechanicalSystem<'_>> {
        MechanicalSystem::new(&self.algebroid, self.potential.clone())
    }

    /// Instantiates a section family, overriding any of its free constants.
    pub fn section(&self, name: &str, consts: &[(String, f64)]) -> Result<Section1Form> {
        let fam = self.sections.get(name).ok_or_else(|| {
            Error::model(format!(
                "model `{}` has no section family `{name}`; available: {}",
                self.name(),
                name_list(self.sections.keys())
            ))
        })?;
        let mut bound = fam.constants.clone();
        for (k, v) in consts {
            match bound.get_mut(k) {
                Some(slot) => *slot = *v,
                None => {
                    return Err(Error::model(format!(
                        "section family `{name}` has no constant `{k}`; available: {}",
                        name_list(fam.constants.keys())
                    )));
                }
            }
        }
        let binding = VarBinding::from_pairs(bound)?;
        Section1Form::new(&self.algebroid, fam.components.clone(), binding)
    }

    pub fn function(&self, name: &str) -> Result<&Expr> {
        self.functions.get(name).ok_or_else(|| {
            Error::model(format!(
                "model `{}` has no function `{name}`; available: {}",
                self.name(),
                name_list(self.functions.keys())
            ))
        })
    }

    /// Builds the declared reduction morphism, borrowing both algebroids.
    pub fn bundle_morphism(&self) -> Result<(BundleMorphism<'_>, &LoadedModel)> {
        let md = self.morphism.as_ref().ok_or_else(|| {
            Error::model(format!("model `{}` declares no morphism block", self.name()))
        })?;
        let bm = BundleMorphism::new(
            &self.algebroid,
            &md.target.algebroid,
            md.base_map.clone(),
            md.fiber_map.clone(),
            md.fiberwise_injective,
        )?;
        Ok((bm, &md.target))
    }

    /// Canonical JSON for the loaded state: parameter overrides are baked in
    /// and expressions are printed from their parsed trees, so a reload
    /// reproduces this model exactly.
    pub fn serialize(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_file())
            .map_err(|e| Error::model(format!("serializing model `{}`: {e}", self.name())))
    }

    fn to_file(&self) -> ModelFile {
        let a = &self.algebroid;
        let coords = a.base_coords();
        let chart = a.chart();

        let mut bounds = BTreeMap::new();
        for (i, b) in chart.bounds.iter().enumerate() {
            if let Some((lo, hi)) = b {
                bounds.insert(coords[i].clone(), (*lo, *hi));
            }
        }
        // the sample box is omitted when it carries no information beyond
        // the hard bounds and the [-1, 1] fallback
        let default_box = chart.sample_box.iter().enumerate().all(|(i, &(lo, hi))| {
            match chart.bounds[i] {
                Some(hb) => (lo, hi) == hb,
                None => (lo, hi) == (-1.0, 1.0),
            }
        });
        let mut sample_box = BTreeMap::new();
        if !default_box {
            for (i, &(lo, hi)) in chart.sample_box.iter().enumerate() {
                sample_box.insert(coords[i].clone(), (lo, hi));
            }
        }
        let chart_domain = if bounds.is_empty()
            && chart.nonvanishing.is_empty()
            && sample_box.is_empty()
        {
            None
        } else {
            Some(ChartSpec {
                bounds,
                nonvanishing: chart.nonvanishing.iter().map(|e| e.to_string()).collect(),
                sample_box,
            })
        };

        ModelFile {
            name: a.name().to_string(),
            metadata: Metadata { source: self.source_note.clone() },
            parameters: a.params().iter().map(|(k, v)| (k.to_string(), v)).collect(),
            base_coordinates: coords.to_vec(),
            frame: a.frame_names().to_vec(),
            anchor: a
                .anchor_exprs()
                .iter()
                .map(|row| row.iter().map(|e| e.to_string()).collect())
                .collect(),
            structure: a
                .structure_entries()
                .iter()
                .map(|s| StructureEntry {
                    alpha: s.alpha + 1,
                    beta: s.beta + 1,
                    gamma: s.gamma + 1,
                    expr: s.expr.to_string(),
                })
                .collect(),
            chart_domain,
            flags: Flags {
                lie_algebroid: a.is_lie_algebroid_flagged(),
                closed_form_reference: self.closed_form_reference,
            },
            potential: self.potential.as_ref().map(|e| e.to_string()),
            sections: self
                .sections
                .iter()
                .map(|(k, fam)| {
                    (
                        k.clone(),
                        SectionEntry {
                            constants: fam.constants.clone(),
                            components: fam.components.iter().map(|e| e.to_string()).collect(),
                        },
                    )
                })
                .collect(),
            functions: self
                .functions
                .iter()
                .map(|(k, e)| (k.clone(), e.to_string()))
                .collect(),
            metric: self.metric.as_ref().map(|g| {
                g.iter()
                    .map(|row| row.iter().map(|e| e.to_string()).collect())
                    .collect()
            }),
            morphism: self.morphism.as_ref().map(|md| MorphismEntry {
                target: md.target_spec.clone(),
                base_map: md.base_map.iter().map(|e| e.to_string()).collect(),
                fiber_map: md
                    .fiber_map
                    .iter()
                    .map(|row| row.iter().map(|e| e.to_string()).collect())
                    .collect(),
                fiberwise_injective: md.fiberwise_injective,
            }),
        }
    }
}

fn name_list<'a>(names: impl Iterator<Item = &'a String>) -> String {
    let v: Vec<&str> = names.map(|s| s.as_str()).collect();
    if v.is_empty() {
        "(none)".to_string()
    } else {
        v.join(", ")
    }
}

// ---------------------------------------------------------------------------
// Loading

/// Loads a model by bundled name, alias, or filesystem path.
pub fn load(spec: &str) -> Result<LoadedModel> {
    load_with_overrides(spec, &[])
}

/// Loads a model with parameter overrides. Overrides whose names also occur
/// in a morphism target are forwarded to it, so both sides of a reduction
/// stay at consistent parameter values.
pub fn load_with_overrides(spec: &str, overrides: &[(String, f64)]) -> Result<LoadedModel> {
    let (text, origin) = resolve(spec)?;
    parse_text(&text, &origin, overrides)
}

/// Loads a model from JSON text directly.
pub fn load_str(text: &str) -> Result<LoadedModel> {
    parse_text(text, "(inline)", &[])
}

fn parse_text(text: &str, origin: &str, overrides: &[(String, f64)]) -> Result<LoadedModel> {
    let file: ModelFile = serde_json::from_str(text)
        .map_err(|e| Error::model(format!("model `{origin}`: {e}")))?;
    build(file, overrides, 0)
}

/// Resolution order: an existing file path wins; otherwise the name (minus
/// any `.model` suffix, after aliasing) is searched in `ALGEBROID_MODEL_PATH`
/// directories and then in the bundled catalog.
fn resolve(spec: &str) -> Result<(String, String)> {
    let p = Path::new(spec);
    if p.is_file() {
        return Ok((std::fs::read_to_string(p)?, spec.to_string()));
    }
    if spec.contains('/') {
        return Err(Error::model(format!("model file `{spec}` not found")));
    }
    let name = spec.strip_suffix(".model").unwrap_or(spec);
    let name = ALIASES
        .iter()
        .find(|(a, _)| *a == name)
        .map(|(_, t)| *t)
        .unwrap_or(name);
    if let Ok(path_var) = std::env::var("ALGEBROID_MODEL_PATH") {
        for dir in path_var.split(':').filter(|d| !d.is_empty()) {
            let cand = Path::new(dir).join(format!("{name}.model"));
            if cand.is_file() {
                return Ok((std::fs::read_to_string(&cand)?, cand.display().to_string()));
            }
        }
    }
    if let Some((_, text)) = BUNDLED.iter().find(|(b, _)| *b == name) {
        return Ok(((*text).to_string(), name.to_string()));
    }
    Err(Error::model(format!(
        "unknown model `{spec}`; bundled models: {}",
        bundled_names().join(", ")
    )))
}

fn parse_ctx(src: &str, what: &str, model: &str) -> Result<Expr> {
    parse(src).map_err(|e| Error::model(format!("model `{model}`, {what}: {e}")))
}

fn check_scope(a: &SkewAlgebroid, e: &Expr, what: &str, model: &str) -> Result<()> {
    for v in e.free_vars() {
        if !a.base_coords().contains(&v) && a.params().get(&v).is_none() {
            return Err(Error::model(format!(
                "model `{model}`, {what}: unknown variable `{v}`"
            )));
        }
    }
    Ok(())
}

fn chart_from_spec(spec: &ChartSpec, coords: &[String], model: &str) -> Result<ChartDomain> {
    let m = coords.len();
    let idx = |name: &str| -> Result<usize> {
        coords.iter().position(|c| c == name).ok_or_else(|| {
            Error::model(format!(
                "model `{model}`: chart domain names unknown coordinate `{name}`"
            ))
        })
    };
    let mut bounds = vec![None; m];
    for (name, &(lo, hi)) in &spec.bounds {
        if !(lo < hi) {
            return Err(Error::model(format!(
                "model `{model}`: chart box for `{name}` has empty interior"
            )));
        }
        bounds[idx(name)?] = Some((lo, hi));
    }
    let mut sample_box: Vec<(f64, f64)> =
        (0..m).map(|i| bounds[i].unwrap_or((-1.0, 1.0))).collect();
    for (name, &(lo, hi)) in &spec.sample_box {
        if !(lo < hi) {
            return Err(Error::model(format!(
                "model `{model}`: sample box for `{name}` has empty interior"
            )));
        }
        sample_box[idx(name)?] = (lo, hi);
    }
    let nonvanishing = spec
        .nonvanishing
        .iter()
        .enumerate()
        .map(|(i, s)| parse_ctx(s, &format!("nonvanishing[{}]", i + 1), model))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChartDomain { bounds, nonvanishing, sample_box })
}

fn build(mut file: ModelFile, overrides: &[(String, f64)], depth: usize) -> Result<LoadedModel> {
    if depth > MAX_MORPHISM_DEPTH {
        return Err(Error::model(format!(
            "model `{}`: morphism target chain deeper than {MAX_MORPHISM_DEPTH}",
            file.name
        )));
    }
    let model = file.name.clone();
    for (k, v) in overrides {
        match file.parameters.get_mut(k) {
            Some(slot) => *slot = *v,
            None => {
                return Err(Error::model(format!(
                    "model `{model}` has no parameter `{k}`; declared: {}",
                    name_list(file.parameters.keys())
                )));
            }
        }
    }

    let n = file.frame.len();
    let anchor = file
        .anchor
        .iter()
        .enumerate()
        .map(|(alpha, row)| {
            row.iter()
                .enumerate()
                .map(|(i, src)| {
                    parse_ctx(src, &format!("anchor[{}][{}]", alpha + 1, i + 1), &model)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut structure = Vec::with_capacity(file.structure.len());
    for ent in &file.structure {
        for (label, v) in [("alpha", ent.alpha), ("beta", ent.beta), ("gamma", ent.gamma)] {
            if v == 0 || v > n {
                return Err(Error::model(format!(
                    "model `{model}`: structure index {label}={v} out of range 1..={n}"
                )));
            }
        }
        let what = format!("structure C^{}_{{{} {}}}", ent.gamma, ent.alpha, ent.beta);
        let e = parse_ctx(&ent.expr, &what, &model)?;
        structure.push((ent.alpha - 1, ent.beta - 1, ent.gamma - 1, e));
    }

    let chart = file
        .chart_domain
        .as_ref()
        .map(|cs| chart_from_spec(cs, &file.base_coordinates, &model))
        .transpose()?;

    let algebroid = SkewAlgebroid::new(AlgebroidData {
        name: model.clone(),
        base_coords: file.base_coordinates.clone(),
        frame: file.frame.clone(),
        anchor,
        structure,
        params: file.parameters.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        chart,
        lie_algebroid: file.flags.lie_algebroid,
    })?;

    let potential = match &file.potential {
        Some(src) => {
            let e = parse_ctx(src, "potential", &model)?;
            check_scope(&algebroid, &e, "potential", &model)?;
            Some(e)
        }
        None => None,
    };

    let mut functions = BTreeMap::new();
    for (fname, src) in &file.functions {
        let what = format!("function `{fname}`");
        let e = parse_ctx(src, &what, &model)?;
        check_scope(&algebroid, &e, &what, &model)?;
        functions.insert(fname.clone(), e);
    }

    let mut sections = BTreeMap::new();
    for (sname, entry) in &file.sections {
        if entry.components.len() != algebroid.rank() {
            return Err(Error::shape(format!(
                "model `{model}`, section `{sname}`: {} components for a rank-{} bundle",
                entry.components.len(),
                algebroid.rank()
            )));
        }
        let comps = entry
            .components
            .iter()
            .enumerate()
            .map(|(i, src)| {
                parse_ctx(src, &format!("section `{sname}` component {}", i + 1), &model)
            })
            .collect::<Result<Vec<_>>>()?;
        let consts = VarBinding::from_pairs(entry.constants.clone())?;
        // the constructor validates free variables against coords, params,
        // and the family constants
        Section1Form::new(&algebroid, comps.clone(), consts)
            .map_err(|e| Error::model(format!("model `{model}`, section `{sname}`: {e}")))?;
        sections.insert(
            sname.clone(),
            SectionFamily { constants: entry.constants.clone(), components: comps },
        );
    }

    let metric = match &file.metric {
        Some(rows) => {
            let m = algebroid.base_dim();
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(Error::shape(format!(
                    "model `{model}`: metric must be {m}x{m}"
                )));
            }
            let mut g = Vec::with_capacity(m);
            for (i, row) in rows.iter().enumerate() {
                let mut out = Vec::with_capacity(m);
                for (j, src) in row.iter().enumerate() {
                    let what = format!("metric[{}][{}]", i + 1, j + 1);
                    let e = parse_ctx(src, &what, &model)?;
                    check_scope(&algebroid, &e, &what, &model)?;
                    out.push(e);
                }
                g.push(out);
            }
            check_orthonormal(&algebroid, &g)?;
            Some(g)
        }
        None => None,
    };

    if file.flags.lie_algebroid {
        check_jacobi_spot(&algebroid)?;
    }

    let morphism = match &file.morphism {
        Some(entry) => Some(build_morphism_data(&algebroid, entry, overrides, depth, &model)?),
        None => None,
    };

    Ok(LoadedModel {
        algebroid,
        potential,
        sections,
        functions,
        metric,
        morphism,
        closed_form_reference: file.flags.closed_form_reference,
        source_note: file.metadata.source.clone(),
    })
}

fn build_morphism_data(
    source: &SkewAlgebroid,
    entry: &MorphismEntry,
    overrides: &[(String, f64)],
    depth: usize,
    model: &str,
) -> Result<MorphismData> {
    let (text, origin) = resolve(&entry.target)?;
    let tfile: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::model(format!("model `{origin}`: {e}")))?;
    let forwarded: Vec<(String, f64)> = overrides
        .iter()
        .filter(|(k, _)| tfile.parameters.contains_key(k))
        .cloned()
        .collect();
    let target = Box::new(build(tfile, &forwarded, depth + 1)?);

    let base_map = entry
        .base_map
        .iter()
        .enumerate()
        .map(|(i, src)| {
            parse_ctx(src, &format!("morphism base map component {}", i + 1), model)
        })
        .collect::<Result<Vec<_>>>()?;
    let fiber_map = entry
        .fiber_map
        .iter()
        .enumerate()
        .map(|(r, row)| {
            row.iter()
                .enumerate()
                .map(|(c, src)| {
                    parse_ctx(src, &format!("morphism fiber map [{}][{}]", r + 1, c + 1), model)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    // shape and scope checks live in the morphism constructor
    BundleMorphism::new(
        source,
        &target.algebroid,
        base_map.clone(),
        fiber_map.clone(),
        entry.fiberwise_injective,
    )
    .map_err(|e| Error::model(format!("model `{model}`, morphism block: {e}")))?;

    Ok(MorphismData {
        target_spec: entry.target.clone(),
        target,
        base_map,
        fiber_map,
        fiberwise_injective: entry.fiberwise_injective,
    })
}

fn format_point(a: &SkewAlgebroid, q: &[f64]) -> String {
    a.base_coords()
        .iter()
        .zip(q)
        .map(|(c, v)| format!("{c}={v:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn check_orthonormal(a: &SkewAlgebroid, g: &[Vec<Expr>]) -> Result<()> {
    let m = a.base_dim();
    let n = a.rank();
    for q in a.sample_points(METRIC_POINTS, METRIC_SEED)? {
        let b = a.binding_for(&q)?;
        let mut gm = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                gm[(i, j)] = g[i][j].eval(&b)?;
            }
        }
        for i in 0..m {
            for j in (i + 1)..m {
                let (x, y) = (gm[(i, j)], gm[(j, i)]);
                if (x - y).abs() > 1e-12 * x.abs().max(y.abs()).max(1.0) {
                    return Err(Error::model(format!(
                        "model `{}`: declared metric is not symmetric at {} \
                         (g[{}][{}]={x}, g[{}][{}]={y})",
                        a.name(),
                        format_point(a, &q),
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1
                    )));
                }
            }
        }
        let rho = a.anchor_matrix(&q)?;
        let gram = rho.transpose() * &gm * &rho;
        for al in 0..n {
            for be in 0..n {
                let want = if al == be { 1.0 } else { 0.0 };
                let got = gram[(al, be)];
                if (got - want).abs() > ORTHONORMAL_TOL {
                    return Err(Error::model(format!(
                        "model `{}`: frame is not orthonormal for the declared metric: \
                         g({}, {}) = {got:.6} at {}",
                        a.name(),
                        a.frame_names()[al],
                        a.frame_names()[be],
                        format_point(a, &q)
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Spot check behind the `lie_algebroid` flag: the bracket Jacobiator must
/// vanish on momentum triples and on mixed coordinate-momentum triples at
/// sampled dual points. Cheap, and catches a mislabeled model immediately.
fn check_jacobi_spot(a: &SkewAlgebroid) -> Result<()> {
    let m = a.base_dim();
    let n = a.rank();
    if n < 2 {
        return Ok(());
    }
    let points = a.sample_points(JACOBI_POINTS, JACOBI_SEED)?;
    let mut rng = ChaCha8Rng::seed_from_u64(JACOBI_SEED ^ 0xFF);
    for (k, q) in points.iter().enumerate() {
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let x = DualPoint::new(q.clone(), p);
        let mut triples: Vec<[ScalarOnDual; 3]> = Vec::new();
        if n >= 3 {
            triples.push([
                ScalarOnDual::coordinate(a, CoordFn::Fiber(k % n)),
                ScalarOnDual::coordinate(a, CoordFn::Fiber((k + 1) % n)),
                ScalarOnDual::coordinate(a, CoordFn::Fiber((k + 2) % n)),
            ]);
        }
        triples.push([
            ScalarOnDual::coordinate(a, CoordFn::Base(k % m)),
            ScalarOnDual::coordinate(a, CoordFn::Fiber(k % n)),
            ScalarOnDual::coordinate(a, CoordFn::Fiber((k + 1) % n)),
        ]);
        for t in &triples {
            let j = jacobiator(a, &t[0], &t[1], &t[2], &x)?;
            if j.abs() > JACOBI_TOL {
                return Err(Error::model(format!(
                    "model `{}` is flagged lie_algebroid but its bracket has \
                     Jacobi defect {j:.3e} at {}",
                    a.name(),
                    format_point(a, q)
                )));
            }
        }
    }
    Ok(())
}
