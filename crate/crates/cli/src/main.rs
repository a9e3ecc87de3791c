use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fptlab::experiments::{
    cmd_coeff, cmd_reproduce, cmd_sharpness, cmd_solve, default_start, write_repro_csv,
    write_sharpness_csv, Command, ExperimentConfig,
};
use fptlab::operators::{orbit_dump, write_orbit_csv};
use fptlab::solver::{write_trace_csv, Mode};
use fptlab::{BodySpec, CoefficientReport, FptError, OperatorSpec, SolveStatus};

#[derive(Parser)]
#[command(name = "fptlab", version, about = "Fixed points of affine maps on L1-type convex sets")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Table of the reference constants with pass/fail per row.
    Reproduce {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the solver on one operator and body.
    Solve(SolveArgs),
    /// Theorem gate and solver status along a grid of t values for the shift on C_t.
    Sharpness {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<f64>>,
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Coefficient reports for one body.
    Coeff(SolveArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OpName {
    Identity,
    Doubling,
    Retraction,
    RetractionCompose,
    Cyclic,
    CtShift,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetName {
    DensitySimplex,
    ConeHull,
    Ct,
    Ball,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Proof,
    Practical,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    op: Option<OpName>,
    #[arg(long)]
    set: Option<SetName>,
    /// Parameter of `ct` and `ct_shift`.
    #[arg(long)]
    t: Option<f64>,
    /// Parameter of `cone_hull`.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<ModeArg>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Cesàro orbit dump of the start point, `--orbit-len` means long.
    #[arg(long)]
    orbit: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    orbit_len: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Config or argument problem, or an estimator failure.
const EXIT_ERROR: u8 = 2;
/// A check failed or no fixed point was found.
const EXIT_FAIL: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn load(path: Option<&PathBuf>, command: Command) -> fptlab::Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_json(&fs::read_to_string(p)?)?,
        None => ExperimentConfig::new(command),
    };
    cfg.command = command;
    Ok(cfg)
}

/// CLI flag, then environment, then file.
fn finalize(cfg: &mut ExperimentConfig, seed: Option<u64>) -> fptlab::Result<()> {
    cfg.apply_env()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(())
}

fn emit(path: Option<&PathBuf>, write: impl FnOnce(&mut dyn Write) -> fptlab::Result<()>) -> fptlab::Result<()> {
    match path {
        Some(p) => {
            let mut f = std::io::BufWriter::new(fs::File::create(p)?);
            write(&mut f)?;
            f.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    Ok(())
}

fn dispatch(cmd: Cmd) -> fptlab::Result<bool> {
    match cmd {
        Cmd::Reproduce { config, out, seed } => {
            let mut cfg = load(config.as_ref(), Command::Reproduce)?;
            finalize(&mut cfg, seed)?;
            let rows = cmd_reproduce(&cfg)?;
            emit(out.as_ref().or(cfg.outputs.out.as_ref().map(PathBuf::from).as_ref()), |w| {
                write_repro_csv(w, &rows)
            })?;
            for r in rows.iter().filter(|r| !r.pass) {
                eprintln!("failed: {} (gap {})", r.quantity, r.gap);
            }
            Ok(rows.iter().all(|r| r.pass))
        }
        Cmd::Sharpness { config, t_grid, m, out, seed } => {
            let mut cfg = load(config.as_ref(), Command::Sharpness)?;
            finalize(&mut cfg, seed)?;
            if let Some(g) = t_grid {
                cfg.t_grid = g;
            }
            if let Some(m) = m {
                cfg.m = m;
            }
            let rows = cmd_sharpness(&cfg)?;
            emit(out.as_ref().or(cfg.outputs.out.as_ref().map(PathBuf::from).as_ref()), |w| {
                write_sharpness_csv(w, &rows)
            })?;
            Ok(rows.iter().all(|r| r.pass))
        }
        Cmd::Solve(args) => {
            let cfg = solve_config(&args, Command::Solve)?;
            let outcome = cmd_solve(&cfg)?;
            let out = args.out.clone().or(cfg.outputs.out.as_ref().map(PathBuf::from));
            let json = outcome.to_json()?;
            emit(out.as_ref(), |w| Ok(writeln!(w, "{json}")?))?;
            if let Some(p) = args.trace.clone().or(cfg.outputs.trace.as_ref().map(PathBuf::from)) {
                emit(Some(&p), |w| write_trace_csv(w, &outcome.trace))?;
            }
            if let Some(p) = &args.orbit {
                let body = cfg.body.as_ref().expect("checked by cmd_solve").build(cfg.level)?;
                let op = cfg.operator.as_ref().expect("checked by cmd_solve").build()?;
                let x0 = default_start(body.as_ref(), cfg.seed);
                let limit = outcome.limit.as_ref().or(
                    (outcome.status == SolveStatus::FixedPoint).then_some(&outcome.point),
                );
                let rows = orbit_dump(op.as_ref(), &x0, args.orbit_len, limit)?;
                emit(Some(p), |w| write_orbit_csv(w, &rows))?;
            }
            Ok(outcome.status == SolveStatus::FixedPoint)
        }
        Cmd::Coeff(args) => {
            let cfg = solve_config(&args, Command::Coeff)?;
            let reports = cmd_coeff(&cfg)?;
            let out = args.out.clone().or(cfg.outputs.out.as_ref().map(PathBuf::from));
            emit(out.as_ref(), |w| CoefficientReport::write_csv(&reports, w))?;
            Ok(true)
        }
    }
}

fn solve_config(args: &SolveArgs, command: Command) -> fptlab::Result<ExperimentConfig> {
    let mut cfg = load(args.config.as_ref(), command)?;
    finalize(&mut cfg, args.seed)?;
    if let Some(l) = args.level {
        cfg.level = l;
    }
    if let Some(m) = args.m {
        cfg.m = m;
    }
    if let Some(tol) = args.tol {
        cfg.tol = tol;
    }
    if let Some(k) = args.max_outer {
        cfg.solver.max_outer = k;
    }
    if let Some(b) = args.budget {
        cfg.solver.budget = b;
    }
    if let Some(mode) = args.mode {
        cfg.mode = match mode {
            ModeArg::Proof => Mode::Proof,
            ModeArg::Practical => Mode::Practical,
        };
    }
    let need_t = |what: &str| {
        args.t.ok_or_else(|| FptError::InvalidArgument(format!("{what} needs --t")))
    };
    if let Some(set) = args.set {
        cfg.body = Some(match set {
            SetName::DensitySimplex => BodySpec::DensitySimplex {},
            SetName::ConeHull => BodySpec::ConeHull {
                a: args.a.ok_or_else(|| FptError::InvalidArgument("cone_hull needs --a".into()))?,
            },
            SetName::Ct => BodySpec::Ct { t: need_t("ct")?, m: cfg.m },
            SetName::Ball => BodySpec::Ball {},
        });
    }
    if let Some(op) = args.op {
        cfg.operator = Some(match op {
            OpName::Identity => OperatorSpec::Identity {},
            OpName::Doubling => OperatorSpec::Doubling {},
            OpName::Retraction => OperatorSpec::Retraction {},
            OpName::RetractionCompose => OperatorSpec::RetractionCompose {},
            OpName::Cyclic => OperatorSpec::Cyclic {},
            OpName::CtShift => OperatorSpec::CtShift { t: need_t("ct_shift")? },
        });
    }
    Ok(cfg)
}
