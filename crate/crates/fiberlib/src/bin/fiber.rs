//! Command-line front end: JSON in, JSON out, deterministic given flags and
//! seed. Exit codes: 0 success, 1 a law or tolerance failed, 2 bad input.

use clap::{Parser, Subcommand};
use fiberlib::checks::{run_suite, Fault};
use fiberlib::embedding::{embed_fiber, EmbedParams};
use fiberlib::error::FiberError;
use fiberlib::lifting::{lift_function, make_lifting};
use fiberlib::linalg;
use fiberlib::measure::{
    pr_phi_function, pullback_function, pushforward, AtomSpace, FunctionClass, Measure, PointMap,
};
use fiberlib::modules::ModulePresentation;
use fiberlib::norms::FiberNorm;
use fiberlib::scalar::Scalar;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "fiber",
    version,
    about = "Normed modules over finite measure spaces: representation as Banach bundles, \
             lifting, fiberwise averaging, and invariant suites"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Represent a presented module as a Banach bundle with a defect report.
    Represent {
        /// Presentation file (measure, generator count, fiber norms).
        #[arg(long)]
        input: PathBuf,
        /// Ambient binary depth; the ambient space has 2^depth coordinates.
        #[arg(long, default_value_t = 10)]
        depth: usize,
        /// Functional-net resolution per fiber.
        #[arg(long, default_value_t = 64)]
        net: usize,
        /// Acceptable defect; FIBERLIB_TOL overrides the default.
        #[arg(long)]
        tol: Option<f64>,
        /// Bundle output file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report output file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run seeded law suites and report violations.
    Check {
        /// Suite: all, measure, lifting, norms, modules, embedding, bundle.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Random instances per law.
        #[arg(long, default_value_t = 200)]
        cases: usize,
        /// Inject a known defect (triangle-violation) to exercise reporting.
        #[arg(long)]
        inject: Option<String>,
        /// Summary output file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average a function along the fibers of a map.
    Prphi {
        /// Map file: a measure plus an atom assignment.
        #[arg(long, required_unless_present = "grow")]
        map: Option<PathBuf>,
        /// Function file over the source measure.
        #[arg(long = "fn", required_unless_present = "grow")]
        func: Option<PathBuf>,
        /// Run the growing-truncation demo instead: at truncation k the
        /// averaged simple function has value exactly k, so the operator
        /// admits no continuous extension past bounded functions.
        #[arg(long)]
        grow: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Precompose a function on the target with a map.
    Pullback {
        #[arg(long)]
        map: PathBuf,
        /// Function file over the pushforward measure.
        #[arg(long = "fn")]
        func: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lift an a.e. class to an everywhere-defined function.
    Lift {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long = "fn")]
        func: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed a single fiber norm with a certified defect.
    Embed {
        /// Fiber norm file.
        #[arg(long)]
        fiber: PathBuf,
        #[arg(long, default_value_t = 10)]
        depth: usize,
        #[arg(long, default_value_t = 64)]
        net: usize,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// 1: a verified property or tolerance failed. 2: the input is unusable.
fn exit_code_for(e: &FiberError) -> u8 {
    match e {
        FiberError::UnsatisfiableParams(_) | FiberError::ContractionViolated { .. } => 1,
        _ => 2,
    }
}

fn default_tol() -> f64 {
    std::env::var("FIBERLIB_TOL")
        .ok()
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|t| *t > 0.0)
        .unwrap_or(1e-6)
}

fn read_json(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{} is not valid JSON: {e}", path.display())))
}

fn write_output(path: Option<&Path>, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    match path {
        Some(p) => std::fs::write(p, text + "\n")
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

enum CliError {
    Input(String),
    Lib(FiberError),
    Failed(String),
}

impl From<FiberError> for CliError {
    fn from(e: FiberError) -> Self {
        CliError::Lib(e)
    }
}

/// Map file: `{"measure": {...}, "assign": {"x": "y"}}`.
fn read_map(path: &Path) -> Result<(Arc<Measure>, PointMap), CliError> {
    let v = read_json(path)?;
    let m = Measure::from_json(
        v.get("measure")
            .ok_or_else(|| CliError::Input(format!("{}: missing 'measure'", path.display())))?,
    )?;
    let phi = PointMap::from_json(&v, m.space())?;
    Ok((m, phi))
}

fn read_function(path: &Path, m: &Arc<Measure>) -> Result<FunctionClass, CliError> {
    Ok(FunctionClass::from_json(&read_json(path)?, m)?)
}

fn cmd_represent(
    input: &Path,
    depth: usize,
    net: usize,
    tol: f64,
    out: Option<&Path>,
    report: Option<&Path>,
) -> Result<(), CliError> {
    let pres = ModulePresentation::from_json(&read_json(input)?)?;
    let params = EmbedParams {
        depth,
        resolution: net,
        tol,
    };
    let rep = fiberlib::bundle::represent_module(&pres, &params)?;
    write_output(out, &rep.bundle.to_json())?;
    let report_json = rep.report.to_json();
    match report {
        Some(p) => {
            write_output(Some(p), &report_json)?;
            println!("max_defect {}", rep.report.max_defect);
        }
        None => println!("max_defect {}", rep.report.max_defect),
    }
    if rep.report.max_defect <= tol {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "defect {} exceeds tolerance {tol}",
            rep.report.max_defect
        )))
    }
}

fn cmd_check(
    suite: &str,
    seed: u64,
    cases: usize,
    inject: Option<&str>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let fault = match inject {
        None => Fault::None,
        Some("triangle-violation") => Fault::TriangleViolation,
        Some(other) => {
            return Err(CliError::Input(format!("unknown fault '{other}'")));
        }
    };
    let summary = run_suite(suite, seed, cases, fault)?;
    for law in &summary.laws {
        if law.pass() {
            println!("ok   {} ({} cases)", law.law, law.cases);
        } else {
            println!(
                "FAIL {} ({} of {} cases, max error {:.3e})",
                law.law, law.failures, law.cases, law.max_error
            );
            if let Some(dump) = &law.first_failure {
                println!("     failing instance {dump}");
            }
        }
    }
    if let Some(p) = out {
        write_output(Some(p), &summary.to_json())?;
    }
    if summary.all_pass() {
        println!("suite {} passed (seed {seed})", summary.suite);
        Ok(())
    } else {
        Err(CliError::Failed(format!("suite {} has violations", summary.suite)))
    }
}

/// Measure with masses 2^-1 .. 2^-k on named atoms plus a remainder atom, a
/// collapse-to-a-point map, and the simple function taking value 2^i at the
/// i-th atom. The fiber average is exactly k.
fn growing_fixture(k: u32) -> (Arc<Measure>, PointMap, FunctionClass) {
    let mut names: Vec<String> = (1..=k).map(|i| i.to_string()).collect();
    names.push("rest".to_string());
    let space = AtomSpace::new(names).expect("nonempty");
    let mut mass: Vec<Scalar> = (1..=k).map(|i| Scalar::ratio(1, 1i64 << i)).collect();
    mass.push(Scalar::ratio(1, 1i64 << k));
    let m = Measure::new(space.clone(), mass).expect("positive");
    let target = AtomSpace::new(["0"]).expect("singleton");
    let phi = PointMap::new(space, target, vec![0; k as usize + 1]).expect("total");
    let mut values: Vec<Scalar> = (1..=k).map(|i| Scalar::from_int(1i64 << i)).collect();
    values.push(Scalar::zero());
    let f = FunctionClass::new(m.clone(), values).expect("sized");
    (m, phi, f)
}

fn cmd_prphi(
    map: Option<&Path>,
    func: Option<&Path>,
    grow: Option<u32>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if let Some(n) = grow {
        if n == 0 || n > 62 {
            return Err(CliError::Input("grow must be between 1 and 62".into()));
        }
        for k in 1..=n {
            let (m, phi, f) = growing_fixture(k);
            let avg = pr_phi_function(&f, &phi, &m)?;
            let value = &avg.values()[0];
            println!("Pr_phi(f_{k}) = {value}");
            if value != &Scalar::from_int(k as i64) {
                return Err(CliError::Failed(format!(
                    "expected exactly {k}, computed {value}"
                )));
            }
        }
        println!("the averages grow without bound while f_k converges pointwise;");
        println!("no continuous extension beyond bounded functions exists");
        return Ok(());
    }
    let (m, phi) = read_map(map.expect("clap enforces map without grow"))?;
    let f = read_function(func.expect("clap enforces fn without grow"), &m)?;
    let avg = pr_phi_function(&f, &phi, &m)?;
    write_output(out, &avg.to_json())
}

fn cmd_pullback(map: &Path, func: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let (m, phi) = read_map(map)?;
    let m_y = pushforward(&phi, &m)?;
    let g = read_function(func, &m_y)?;
    let pulled = pullback_function(&g, &phi, &m)?;
    write_output(out, &pulled.to_json())
}

fn cmd_lift(measure: &Path, func: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let m = Measure::from_json(&read_json(measure)?)?;
    let f = read_function(func, &m)?;
    let l = make_lifting(&m, None)?;
    let lifted = lift_function(&l, &f)?;
    write_output(out, &lifted.to_json())
}

fn cmd_embed(
    fiber: &Path,
    depth: usize,
    net: usize,
    tol: f64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let n = FiberNorm::from_json(&read_json(fiber)?)?;
    let params = EmbedParams {
        depth,
        resolution: net,
        tol,
    };
    let emb = embed_fiber(&n, &linalg::identity(n.dim()), &params)?;
    let result = serde_json::json!({
        "depth": depth,
        "dim": n.dim(),
        "rank": n.rank(),
        "net_size": emb.net().duals.len(),
        "epsilon": emb.epsilon,
        "exact": emb.net().exact,
    });
    write_output(out, &result)?;
    println!("defect {}", emb.epsilon);
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Represent {
            input,
            depth,
            net,
            tol,
            out,
            report,
        } => cmd_represent(
            &input,
            depth,
            net,
            tol.unwrap_or_else(default_tol),
            out.as_deref(),
            report.as_deref(),
        ),
        Command::Check {
            suite,
            seed,
            cases,
            inject,
            out,
        } => cmd_check(&suite, seed, cases, inject.as_deref(), out.as_deref()),
        Command::Prphi {
            map,
            func,
            grow,
            out,
        } => cmd_prphi(map.as_deref(), func.as_deref(), grow, out.as_deref()),
        Command::Pullback { map, func, out } => cmd_pullback(&map, &func, out.as_deref()),
        Command::Lift { measure, func, out } => cmd_lift(&measure, &func, out.as_deref()),
        Command::Embed {
            fiber,
            depth,
            net,
            tol,
            out,
        } => cmd_embed(&fiber, depth, net, tol.unwrap_or_else(default_tol), out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
