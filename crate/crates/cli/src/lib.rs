//! Command line front end: instance ingestion, command dispatch, seeded
//! generation, report and plot-data emission.
//!
//! Exit codes: 0 success, 1 verify found violated relations, 2 parse or IO
//! errors (and usage mistakes), 3 a density was not equivalent where
//! equivalence is required.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use robustmax_core::diagram::{
    ensemble_verify, evaluate_diagram, DiagramConfig, DiagramReport, EnsembleReport, QUANTITY_NAMES,
};
use robustmax_core::improve::improve;
use robustmax_core::instance::{generate_instance, GenConfig};
use robustmax_core::payoff::cost;
use robustmax_core::solve::{maximize_robust_concave, ConcaveObjective};
use robustmax_core::utility::{concavify, Curve, UtilityCurve};
use robustmax_core::Error as CoreError;

pub mod doc;

pub use doc::{
    CurveDoc, EnsembleDoc, ImproveDoc, InstanceDoc, Num, PayoffDoc, ReportDoc, SolveDoc,
};

/// States a brute-force payoff oracle will still enumerate.
const ORACLE_MAX_STATES: usize = 6;
/// Knots per capped curve a brute-force payoff oracle will still enumerate;
/// capping can add one knot to the raw curve.
const ORACLE_MAX_KNOTS: usize = 8;

#[derive(Parser, Debug)]
#[command(name = "robustmax", version, about = "Robust non-concave utility maximization on finite scenario spaces", long_about = None)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Concavify the instance's utility: envelope JSON to stdout, plot CSV
    /// (header x,U,Uc) to the output path.
    Concavify {
        input: PathBuf,
        output: PathBuf,
        /// Uniform sample count added to the knots of both curves.
        #[arg(long, default_value_t = 256)]
        samples: usize,
    },
    /// Improve a randomized payoff under one family extreme; writes the
    /// improved payoff and the full plan audit as JSON.
    Improve {
        input: PathBuf,
        /// Payoff document to improve.
        #[arg(long)]
        payoff: PathBuf,
        /// Index of the conditioning extreme within the family.
        #[arg(long, default_value_t = 0)]
        density: usize,
        #[arg(long)]
        output: PathBuf,
        /// Condition per bound group instead of globally.
        #[arg(long)]
        conditional: bool,
    },
    /// Solve the robust concavified problem and report value, certified
    /// gap, optimal payoff, and minimizing mixture.
    Solve {
        input: PathBuf,
        /// Impose the per-state bounds w.
        #[arg(long)]
        constrained: bool,
        /// Write the result as JSON here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check all eight diagram quantities and their relations on one
    /// instance, or aggregate over a seeded ensemble.
    Verify {
        /// Instance file; omit when running --ensemble.
        input: Option<PathBuf>,
        #[arg(long)]
        constrained: bool,
        /// Verify this many generated instances instead of a file.
        #[arg(long)]
        ensemble: Option<usize>,
        /// First seed of the ensemble; consumed consecutively.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Equality tolerance; overrides ROBUSTMAX_TOLERANCE and the
        /// built-in default.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Write the machine-readable report as JSON here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a seeded instance file; equal seeds and flags give
    /// byte-identical files.
    Generate {
        output: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Exact state count (default: seeded draw from 2..=4).
        #[arg(long)]
        states: Option<usize>,
        /// Exact extreme count (default: seeded draw from 2..=3).
        #[arg(long)]
        extremes: Option<usize>,
        /// Exact count of upward jumps; 0 gives a concave utility
        /// (default: seeded draw from 1..=3).
        #[arg(long)]
        kinks: Option<usize>,
        /// Let the budget land in the trivial regime sometimes.
        #[arg(long)]
        allow_trivial: bool,
        /// Reject sizes the brute-force oracles cannot enumerate.
        #[arg(long)]
        oracle_safe: bool,
    },
}

#[derive(Debug)]
pub enum CliError {
    Io(PathBuf, std::io::Error),
    /// Path plus a message that includes the line/column location.
    Parse(PathBuf, String),
    Core(CoreError),
    Usage(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(path, e) => write!(f, "{}: {e}", path.display()),
            CliError::Parse(path, msg) => write!(f, "{}: {msg}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(CoreError::NotEquivalent(_)) => 3,
            _ => 2,
        }
    }
}

/// Runs one parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Concavify {
            input,
            output,
            samples,
        } => cmd_concavify(&input, &output, samples),
        Command::Improve {
            input,
            payoff,
            density,
            output,
            conditional,
        } => cmd_improve(&input, &payoff, density, &output, conditional),
        Command::Solve {
            input,
            constrained,
            output,
        } => cmd_solve(&input, constrained, output.as_deref()),
        Command::Verify {
            input,
            constrained,
            ensemble,
            seed,
            tolerance,
            output,
        } => cmd_verify(
            input.as_deref(),
            constrained,
            ensemble,
            seed,
            tolerance,
            output.as_deref(),
        ),
        Command::Generate {
            output,
            seed,
            states,
            extremes,
            kinks,
            allow_trivial,
            oracle_safe,
        } => cmd_generate(
            &output,
            seed,
            states,
            extremes,
            kinks,
            allow_trivial,
            oracle_safe,
        ),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn parse_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(path.to_path_buf(), e.to_string()))
}

/// Pretty JSON with a trailing newline, the byte-stable emission format.
pub fn to_json(value: &impl Serialize) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    text
}

fn load_instance(path: &Path) -> Result<(InstanceDoc, robustmax_core::Instance), CliError> {
    let doc: InstanceDoc = parse_json(path)?;
    let instance = doc.to_instance()?;
    Ok((doc, instance))
}

/// CSV of (x, U(x), U_c(x)) rows over the knots of both curves plus a
/// uniform grid; both curves are piecewise linear between consecutive rows.
pub fn concavify_csv(curve: &UtilityCurve, samples: usize) -> String {
    let envelope = concavify(curve);
    let end = curve.domain_end();
    let mut grid: Vec<f64> = curve
        .knots()
        .iter()
        .chain(envelope.knots())
        .copied()
        .collect();
    for k in 0..=samples.max(1) {
        grid.push(end * k as f64 / samples.max(1) as f64);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut out = String::from("x,U,Uc\n");
    for &x in &grid {
        let u = curve.evaluate(x).expect("grid stays in the domain");
        let uc = envelope.evaluate(x).expect("grid stays in the domain");
        out.push_str(&format!("{x},{u},{uc}\n"));
    }
    out
}

fn cmd_concavify(input: &Path, output: &Path, samples: usize) -> Result<i32, CliError> {
    let (_, instance) = load_instance(input)?;
    let envelope = concavify(&instance.curve);
    write_text(output, &concavify_csv(&instance.curve, samples))?;
    print!("{}", to_json(&CurveDoc::from_curve(&envelope.as_utility())));
    Ok(0)
}

fn cmd_improve(
    input: &Path,
    payoff_path: &Path,
    density: usize,
    output: &Path,
    conditional: bool,
) -> Result<i32, CliError> {
    let (_, instance) = load_instance(input)?;
    let payoff_doc: PayoffDoc = parse_json(payoff_path)?;
    let payoff = payoff_doc.to_payoff(&instance.space)?;
    let extremes = instance.family.extremes();
    let q = extremes.get(density).ok_or_else(|| {
        CliError::Usage(format!(
            "density index {density} out of range: the family has {} extremes",
            extremes.len()
        ))
    })?;
    let (star, plan) = improve(
        &payoff,
        &instance.space,
        q,
        &instance.pricing,
        &instance.curve,
        conditional,
    )?;
    write_text(output, &to_json(&ImproveDoc::from_plan(&star, &plan)))?;
    println!(
        "improved {} slot(s) in {} class(es): cost {} -> {} (reversed {}), chain deviation {:.3e}",
        plan.slots.len(),
        plan.classes.len(),
        plan.cost_before,
        plan.cost_after,
        plan.cost_reversed,
        plan.chain.max_deviation(),
    );
    Ok(0)
}

fn cmd_solve(input: &Path, constrained: bool, output: Option<&Path>) -> Result<i32, CliError> {
    let (_, instance) = load_instance(input)?;
    let objective = ConcaveObjective::new(&instance.curve, &instance.space, constrained)?;
    let result = maximize_robust_concave(
        &instance.space,
        &instance.family,
        &instance.pricing,
        &objective,
        instance.x,
    )?;
    let price = result
        .payoff
        .as_ref()
        .map(|p| cost(p, &instance.space, &instance.pricing));
    println!(
        "value {} (certified gap {:.3e}) via {}",
        result.value, result.gap, result.method
    );
    if let Some(p) = price {
        println!("payoff cost {} against budget {}", p, instance.x);
    }
    if let Some(path) = output {
        write_text(
            path,
            &to_json(&SolveDoc::from_result(
                &result,
                constrained,
                instance.x,
                price,
            )),
        )?;
    }
    Ok(0)
}

/// Flag beats environment beats built-in default.
fn resolve_tolerance(flag: Option<f64>) -> Result<f64, CliError> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var("ROBUSTMAX_TOLERANCE") {
        Ok(text) => text.trim().parse().map_err(|_| {
            CliError::Usage(format!(
                "ROBUSTMAX_TOLERANCE must be a number, got {text:?}"
            ))
        }),
        Err(_) => Ok(robustmax_core::diagram::EQUALITY_TOL),
    }
}

fn print_report(report: &DiagramReport) {
    println!(
        "diagram: x = {}, constrained = {}",
        report.x, report.constrained
    );
    if report.trivial_regime {
        println!("trivial regime: the bound W is affordable, X* = W, all corners coincide");
    }
    println!();
    println!("  {:<13} {:>18} {:>11}  method", "quantity", "value", "gap");
    for q in &report.quantities {
        println!(
            "  {:<13} {:>18.12} {:>11.3e}  {}",
            q.name, q.value, q.gap, q.method
        );
    }
    println!();
    println!(
        "  {:<5} {:<28} {:>13} {:>13}  verdict",
        "", "relation", "slack", "allowance"
    );
    for r in &report.relations {
        let rel = format!(
            "{} {} {}",
            QUANTITY_NAMES[r.lhs],
            if r.equality { "=" } else { "<=" },
            QUANTITY_NAMES[r.rhs]
        );
        println!(
            "  {:<5} {:<28} {:>13.3e} {:>13.3e}  {}",
            r.name,
            rel,
            r.slack,
            r.allowance,
            doc::verdict_name(r.verdict)
        );
    }
}

fn print_ensemble(report: &EnsembleReport, seed: u64, constrained: bool) {
    println!(
        "ensemble: {} seeds from {}, constrained = {}",
        report.count, seed, constrained
    );
    println!(
        "  evaluated {}, trivial {}, violations {}, inconclusive {}",
        report.evaluated, report.trivial, report.violations, report.inconclusive
    );
    println!(
        "  max equality slack {:.3e}, max inequality excess {:.3e}",
        report.max_equality_slack, report.max_inequality_excess
    );
    if let (Some(total), Some(slowest)) = (report.elapsed_micros, report.max_instance_micros) {
        println!(
            "  elapsed {:.2}s, slowest instance {:.1}ms",
            total as f64 / 1e6,
            slowest as f64 / 1e3
        );
    }
    for (seed, relation) in &report.failures {
        println!("  violated: seed {seed} relation {relation}");
    }
}

fn cmd_verify(
    input: Option<&Path>,
    constrained: bool,
    ensemble: Option<usize>,
    seed: u64,
    tolerance: Option<f64>,
    output: Option<&Path>,
) -> Result<i32, CliError> {
    let config = DiagramConfig {
        equality_tolerance: resolve_tolerance(tolerance)?,
        ..DiagramConfig::default()
    };
    match (input, ensemble) {
        (Some(_), Some(_)) => Err(CliError::Usage(
            "pass an instance file or --ensemble, not both".into(),
        )),
        (None, None) => Err(CliError::Usage(
            "pass an instance file or --ensemble N".into(),
        )),
        (Some(path), None) => {
            let (_, instance) = load_instance(path)?;
            let report = evaluate_diagram(&instance, constrained, &config)?;
            print_report(&report);
            if let Some(out) = output {
                write_text(out, &to_json(&ReportDoc::from_report(&report)))?;
            }
            Ok(if report.violations() > 0 { 1 } else { 0 })
        }
        (None, Some(count)) => {
            let gen = GenConfig {
                allow_trivial: constrained,
                ..GenConfig::default()
            };
            let report = ensemble_verify(&gen, &config, seed, count, constrained)?;
            print_ensemble(&report, seed, constrained);
            if let Some(out) = output {
                write_text(
                    out,
                    &to_json(&EnsembleDoc::from_report(&report, constrained, seed)),
                )?;
            }
            Ok(if report.violations > 0 { 1 } else { 0 })
        }
    }
}

fn cmd_generate(
    output: &Path,
    seed: u64,
    states: Option<usize>,
    extremes: Option<usize>,
    kinks: Option<usize>,
    allow_trivial: bool,
    oracle_safe: bool,
) -> Result<i32, CliError> {
    let defaults = GenConfig::default();
    let pin = |v: Option<usize>, d: (usize, usize)| v.map(|v| (v, v)).unwrap_or(d);
    let gen = GenConfig {
        states: pin(states, defaults.states),
        extremes: pin(extremes, defaults.extremes),
        kinks: pin(kinks, defaults.kinks),
        allow_trivial,
    };
    if gen.states.0 < 1 || gen.extremes.0 < 1 {
        return Err(CliError::Usage(
            "--states and --extremes must be at least 1".into(),
        ));
    }
    let instance = generate_instance(&gen, seed)?;
    if oracle_safe {
        let knots = instance.curve.knots().len();
        if instance.space.n() > ORACLE_MAX_STATES || knots + 1 > ORACLE_MAX_KNOTS {
            return Err(CliError::Usage(format!(
                "--oracle-safe rejects this draw: {} states and {} knots exceed {} states / {} capped knots",
                instance.space.n(),
                knots,
                ORACLE_MAX_STATES,
                ORACLE_MAX_KNOTS,
            )));
        }
    }
    write_text(
        output,
        &to_json(&InstanceDoc::from_instance(&instance, Some(seed))),
    )?;
    Ok(0)
}
