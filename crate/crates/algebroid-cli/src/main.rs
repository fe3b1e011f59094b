//! Batch front end for the algebroid library: flows, Hamilton-Jacobi checks,
//! nonholonomy analysis, morphism verification, and bracket tables, each as a
//! subcommand with CSV or text output.
//!
//! Exit codes are uniform across subcommands: 0 all checks passed, 1 a check
//! ran but exceeded its tolerance, 2 bad input (arguments, expressions,
//! models), 3 the numerics failed (integration blow-up, domain error,
//! internal inconsistency).

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use algebroid::dynamics::{
    energy_drift, geodesic_el_flow, hamilton_flow, hj_residual, nonholonomic_flow, scalar_drift,
    lift_equivalence_harness, VelocityPoint,
};
use algebroid::models;
use algebroid::morphism::{
    check_hamiltonian_morphism, check_lap_morphism, transfer_hj, BundleMorphism,
};
use algebroid::nonholonomy;
use algebroid::poisson::{fiber_name, lambda_matrix, DualPoint, ScalarOnDual};
use algebroid::{parse, Error, Expr, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mechanics on skew-symmetric algebroids: simulate Hamiltonian and
/// nonholonomic flows, verify Hamilton-Jacobi section families, analyze
/// bracket-generation ranks, and check reduction morphisms. Models are
/// referenced by bundled name or file path; `ALGEBROID_MODEL_PATH` adds
/// colon-separated search directories.
#[derive(Parser)]
#[command(name = "algebroid", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate a flow and emit the trajectory as CSV
    Simulate(SimulateArgs),
    /// Verify a section family against the Hamilton-Jacobi equations
    Check(CheckArgs),
    /// Rank growth of the bracket-generated distribution at sample points
    Analyze(AnalyzeArgs),
    /// Verify the model's reduction morphism; optionally transfer a section
    Morphism(MorphismArgs),
    /// Print the coordinate-function bracket matrix at a dual point
    BracketTable(BracketTableArgs),
    /// List the bundled models
    Models,
}

#[derive(Clone, Copy, ValueEnum)]
enum Flow {
    /// Hamilton equations on the dual bundle
    Hamilton,
    /// Euler-Lagrange equations of the mechanical system
    Lagrange,
    /// Lagrange-d'Alembert equations on the constraint frame
    Nonholonomic,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model name or path
    #[arg(long)]
    model: String,
    #[arg(long, value_enum)]
    flow: Flow,
    /// Hamiltonian in base coordinates and p1..pn; hamilton flow only
    /// (default: the model's kinetic-plus-potential Hamiltonian)
    #[arg(long)]
    h: Option<String>,
    /// Initial state, e.g. "phi=0.3,psi=0,v1=1" (unlisted entries are 0)
    #[arg(long)]
    x0: String,
    /// Final time
    #[arg(long, default_value_t = 5.0)]
    t: f64,
    /// Step size
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Parameter overrides, e.g. "m=2,r=0.5"
    #[arg(long = "param")]
    param: Option<String>,
    /// Write the CSV here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    model: String,
    /// Section family name from the model
    #[arg(long)]
    section: String,
    /// Section constants, e.g. "C0=1,C1=0.5,C2=0.2"
    #[arg(long = "const")]
    consts: Option<String>,
    /// Post-hoc component scalings, e.g. "alpha3*=1.1"
    #[arg(long)]
    perturb: Option<String>,
    /// Pass/fail threshold for all three reported sups
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Random base points for the residual sups
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start point for the trajectory harness, e.g. "phi=0.3,psi=0"
    /// (default: the first sample point)
    #[arg(long)]
    q0: Option<String>,
    /// Harness integration time
    #[arg(long, default_value_t = 5.0)]
    t: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long = "param")]
    param: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    model: String,
    /// Random sample points on the base
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Explicit points "x=1,y=0;x=2,y=1" instead of sampling
    #[arg(long)]
    points: Option<String>,
    /// Cap on the bracket-generation depth
    #[arg(long)]
    max_depth: Option<usize>,
    /// Also write the per-point table as CSV here
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "param")]
    param: Option<String>,
}

#[derive(Args)]
struct MorphismArgs {
    #[arg(long)]
    model: String,
    /// Base-grid sample count
    #[arg(long, default_value_t = 30)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Target-side section family to transfer back across the morphism
    #[arg(long)]
    section: Option<String>,
    #[arg(long = "const")]
    consts: Option<String>,
    /// Check the identity morphism of the source instead of the model's
    #[arg(long)]
    self_test: bool,
    /// Scale the fiber map by 1.1 first; the checks must then fail
    #[arg(long)]
    negative_control: bool,
    #[arg(long = "param")]
    param: Option<String>,
}

#[derive(Args)]
struct BracketTableArgs {
    #[arg(long)]
    model: String,
    /// Base point, e.g. "phi=0.4,psi=0.7" (unlisted coordinates are 0)
    #[arg(long)]
    at: String,
    /// Momenta, e.g. "p1=0.1,p2=-0.2" (default all 0)
    #[arg(long)]
    p: Option<String>,
    #[arg(long = "param")]
    param: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        // a closed-stdout reader (e.g. `head`) is not an error
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::from(0),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}

/// `println!` panics when stdout is a closed pipe; every subcommand writes
/// through this instead so the error reaches the BrokenPipe arm above.
fn emit(args: std::fmt::Arguments) -> Result<()> {
    std::io::stdout().lock().write_fmt(args)?;
    Ok(())
}

macro_rules! outln {
    () => { emit(format_args!("\n"))? };
    ($($arg:tt)*) => {{
        emit(format_args!($($arg)*))?;
        emit(format_args!("\n"))?;
    }};
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Integration { .. } | Error::Domain(_) | Error::Inconsistency(_) => 3,
        _ => 2,
    }
}

fn run(cmd: Cmd) -> Result<u8> {
    match cmd {
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Morphism(a) => cmd_morphism(a),
        Cmd::BracketTable(a) => cmd_bracket_table(a),
        Cmd::Models => cmd_models(),
    }
}

// ---------------------------------------------------------------------------
// Argument parsing helpers

fn parse_pairs(s: &str) -> Result<Vec<(String, f64)>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| Error::model(format!("expected `name=value`, got `{t}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::model(format!("`{}` is not a number", v.trim())))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn overrides(param: &Option<String>) -> Result<Vec<(String, f64)>> {
    param.as_deref().map(parse_pairs).transpose().map(Option::unwrap_or_default)
}

/// Fills a state vector from named pairs; names not listed default to zero.
fn assemble(pairs: &[(String, f64)], names: &[String]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; names.len()];
    let mut seen = vec![false; names.len()];
    for (k, v) in pairs {
        let idx = names.iter().position(|n| n == k).ok_or_else(|| {
            Error::model(format!("unknown state entry `{k}`; expected one of {}", names.join(", ")))
        })?;
        if seen[idx] {
            return Err(Error::model(format!("duplicate state entry `{k}`")));
        }
        seen[idx] = true;
        out[idx] = *v;
    }
    Ok(out)
}

fn state_names(base: &[String], fiber_prefixed: impl Fn(usize) -> String, n: usize) -> Vec<String> {
    let mut names = base.to_vec();
    names.extend((0..n).map(fiber_prefixed));
    names
}

/// "alpha3*=1.1,alpha1*=0.9" -> [(2, 1.1), (0, 0.9)]
fn parse_perturb(s: &str) -> Result<Vec<(usize, f64)>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let bad = || Error::model(format!("expected `alphaK*=factor`, got `{t}`"));
            let (lhs, rhs) = t.split_once("*=").ok_or_else(bad)?;
            let k: usize =
                lhs.trim().strip_prefix("alpha").and_then(|d| d.parse().ok()).ok_or_else(bad)?;
            if k == 0 {
                return Err(Error::model("section components are numbered from alpha1"));
            }
            let f: f64 = rhs.trim().parse().map_err(|_| bad())?;
            Ok((k - 1, f))
        })
        .collect()
}

fn positive(value: f64, flag: &str) -> Result<()> {
    if value > 0.0 { Ok(()) } else { Err(Error::model(format!("{flag} must be positive"))) }
}

// ---------------------------------------------------------------------------
// simulate

fn cmd_simulate(a: SimulateArgs) -> Result<u8> {
    positive(a.dt, "--dt")?;
    let model = models::load_with_overrides(&a.model, &overrides(&a.param)?)?;
    let alg = &model.algebroid;
    let m = alg.base_dim();
    let n = alg.rank();
    let pairs = parse_pairs(&a.x0)?;
    let span = (0.0, a.t);

    let (traj, label, drift) = match a.flow {
        Flow::Hamilton => {
            let names = state_names(alg.base_coords(), fiber_name, n);
            let st = assemble(&pairs, &names)?;
            let x0 = DualPoint::new(st[..m].to_vec(), st[m..].to_vec());
            let h = match &a.h {
                Some(src) => ScalarOnDual::parse_for(alg, src)?,
                None => model.system()?.hamiltonian()?,
            };
            let traj = hamilton_flow(alg, &h, &x0, span, a.dt)?;
            let drift = scalar_drift(alg, &h, &traj)?;
            (traj, "hamiltonian drift", drift)
        }
        Flow::Lagrange | Flow::Nonholonomic => {
            if a.h.is_some() {
                return Err(Error::model("--h only applies to --flow hamilton"));
            }
            let names = state_names(alg.base_coords(), |k| format!("v{}", k + 1), n);
            let st = assemble(&pairs, &names)?;
            let x0 = VelocityPoint::new(st[..m].to_vec(), st[m..].to_vec());
            let sys = model.system()?;
            let traj = match a.flow {
                Flow::Lagrange => geodesic_el_flow(&sys, &x0, span, a.dt)?,
                _ => nonholonomic_flow(&sys, &x0, span, a.dt)?,
            };
            let drift = energy_drift(&sys, &traj)?;
            (traj, "energy drift", drift)
        }
    };

    match &a.out {
        Some(p) => traj.write_csv(std::fs::File::create(p)?)?,
        None => std::io::stdout().write_all(traj.to_csv().as_bytes())?,
    }
    eprintln!("{label}: {drift:.3e} over {} steps", traj.len().saturating_sub(1));
    Ok(0)
}

// ---------------------------------------------------------------------------
// check

fn cmd_check(a: CheckArgs) -> Result<u8> {
    positive(a.dt, "--dt")?;
    if a.samples == 0 {
        return Err(Error::model("--samples must be at least 1"));
    }
    let model = models::load_with_overrides(&a.model, &overrides(&a.param)?)?;
    let alg = &model.algebroid;
    let consts = overrides(&a.consts)?;
    let mut alpha = model.section(&a.section, &consts)?;
    if let Some(p) = &a.perturb {
        for (idx, factor) in parse_perturb(p)? {
            alpha = alpha.scaled_component(idx, factor)?;
        }
    }
    let h = model.system()?.hamiltonian()?;

    let pts = alg.sample_points(a.samples, a.seed)?;
    let mut max_cocycle: f64 = 0.0;
    let mut max_hj: f64 = 0.0;
    for q in &pts {
        max_cocycle = max_cocycle.max(alg.cocycle_residual(&alpha, q)?);
        for r in hj_residual(alg, &h, &alpha, q)? {
            max_hj = max_hj.max(r.abs());
        }
    }

    let q0 = match &a.q0 {
        Some(s) => assemble(&parse_pairs(s)?, alg.base_coords())?,
        None => pts[0].clone(),
    };
    let rep = lift_equivalence_harness(alg, &h, &alpha, &q0, (0.0, a.t), a.dt)?;

    outln!("max cocycle residual: {max_cocycle:.3e}");
    outln!("max HJ residual:      {max_hj:.3e}");
    outln!("harness lift defect:  {:.3e}", rep.max_lift_defect);
    let pass = max_cocycle <= a.tol && max_hj <= a.tol && rep.max_lift_defect <= a.tol;
    outln!("result: {} (tolerance {:.1e})", if pass { "PASS" } else { "FAIL" }, a.tol);
    Ok(if pass { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// analyze

fn cmd_analyze(a: AnalyzeArgs) -> Result<u8> {
    if a.samples == 0 {
        return Err(Error::model("--samples must be at least 1"));
    }
    let model = models::load_with_overrides(&a.model, &overrides(&a.param)?)?;
    let alg = &model.algebroid;
    let pts: Vec<Vec<f64>> = match &a.points {
        Some(s) => s
            .split(';')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(|c| assemble(&parse_pairs(c)?, alg.base_coords()))
            .collect::<Result<_>>()?,
        None => alg.sample_points(a.samples, a.seed)?,
    };
    let rep = nonholonomy::verdict(alg, &pts, a.max_depth)?;
    emit(format_args!("{}", rep.to_table()))?;
    if let Some(p) = &a.out {
        std::fs::write(p, rep.to_csv())?;
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// morphism

fn cmd_morphism(a: MorphismArgs) -> Result<u8> {
    if a.grid == 0 {
        return Err(Error::model("--grid must be at least 1"));
    }
    let model = models::load_with_overrides(&a.model, &overrides(&a.param)?)?;

    if a.self_test {
        let src = &model.algebroid;
        let n = src.rank();
        let base_map: Vec<Expr> =
            src.base_coords().iter().map(|c| parse(c)).collect::<Result<_>>()?;
        let fiber: Vec<Vec<Expr>> = (0..n)
            .map(|r| (0..n).map(|c| parse(if r == c { "1" } else { "0" })).collect())
            .collect::<Result<_>>()?;
        let mor = BundleMorphism::new(src, src, base_map, fiber, true)?;
        let grid = src.sample_points(a.grid, a.seed)?;
        let lap = check_lap_morphism(&mor, &grid)?;
        outln!("bracket defect:     {:.3e}", lap.max_bracket_defect);
        outln!("anchor defect:      {:.3e}", lap.max_anchor_defect);
        let pass = lap.passes(a.tol);
        outln!("result: {} (tolerance {:.1e})", if pass { "PASS" } else { "FAIL" }, a.tol);
        return Ok(if pass { 0 } else { 1 });
    }

    let (mor, target) = model.bundle_morphism()?;
    let mor = if a.negative_control {
        let scaled: Vec<Vec<Expr>> = mor
            .fiber_map()
            .iter()
            .map(|row| {
                row.iter().map(|e| parse(&format!("(1.1)*({e})"))).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        BundleMorphism::new(
            mor.source(),
            mor.target(),
            mor.base_map().to_vec(),
            scaled,
            mor.fiberwise_injective(),
        )?
    } else {
        mor
    };

    let grid = mor.source().sample_points(a.grid, a.seed)?;
    let lap = check_lap_morphism(&mor, &grid)?;
    outln!("bracket defect:     {:.3e}", lap.max_bracket_defect);
    outln!("anchor defect:      {:.3e}", lap.max_anchor_defect);
    let mut worst = lap.max_bracket_defect.max(lap.max_anchor_defect);

    // the Hamiltonian and transfer checks gate on the bracket check, so only
    // run them once it has passed
    if lap.passes(1e-6) {
        let h = model.system()?.hamiltonian()?;
        let hbar = target.system()?.hamiltonian()?;
        let n = mor.source().rank();
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let dual: Vec<DualPoint> = grid
            .iter()
            .map(|q| {
                DualPoint::new(q.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            })
            .collect();
        let hgap = check_hamiltonian_morphism(&mor, &h, &hbar, &dual)?;
        outln!("hamiltonian defect: {hgap:.3e}");
        worst = worst.max(hgap);

        if let Some(name) = &a.section {
            let alpha_bar = target.section(name, &overrides(&a.consts)?)?;
            let (_, rep) = transfer_hj(&mor, &alpha_bar, &h, &hbar, &grid)?;
            outln!("transfer roundtrip: {:.3e}", rep.max_roundtrip);
            outln!("source HJ residual: {:.3e}", rep.max_source_hj);
            outln!("target HJ residual: {:.3e}", rep.max_target_hj);
            worst = worst.max(rep.max_roundtrip);
        }
    } else {
        outln!("hamiltonian and transfer checks skipped: bracket check failed");
    }

    let pass = worst <= a.tol;
    outln!("result: {} (tolerance {:.1e})", if pass { "PASS" } else { "FAIL" }, a.tol);
    Ok(if pass { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// bracket-table

fn cmd_bracket_table(a: BracketTableArgs) -> Result<u8> {
    let model = models::load_with_overrides(&a.model, &overrides(&a.param)?)?;
    let alg = &model.algebroid;
    let n = alg.rank();
    let q = assemble(&parse_pairs(&a.at)?, alg.base_coords())?;
    let pnames: Vec<String> = (0..n).map(fiber_name).collect();
    let pv = match &a.p {
        Some(s) => assemble(&parse_pairs(s)?, &pnames)?,
        None => vec![0.0; n],
    };
    let x = DualPoint::new(q, pv);
    let lam = lambda_matrix(alg, &x)?;

    let labels: Vec<&str> = alg
        .base_coords()
        .iter()
        .map(String::as_str)
        .chain(pnames.iter().map(String::as_str))
        .collect();
    let width = labels.iter().map(|l| l.len()).max().unwrap_or(2).max(12);
    emit(format_args!("{:>width$}", ""))?;
    for l in &labels {
        emit(format_args!(" {l:>width$}"))?;
    }
    outln!();
    for (r, l) in labels.iter().enumerate() {
        emit(format_args!("{l:>width$}"))?;
        for c in 0..labels.len() {
            emit(format_args!(" {:>width$.6}", lam[(r, c)]))?;
        }
        outln!();
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// models

fn cmd_models() -> Result<u8> {
    let cat = models::bundled_catalog()?;
    outln!("{:<22} {:>4} {:>4}  {}", "name", "dim", "rank", "bracket");
    for s in cat {
        outln!(
            "{:<22} {:>4} {:>4}  {}",
            s.name,
            s.base_dim,
            s.rank,
            if s.lie_algebroid { "lie" } else { "skew" }
        );
    }
    Ok(0)
}
