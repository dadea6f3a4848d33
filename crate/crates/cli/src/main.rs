use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jumpfolio::reports::{self, portfolio_csv, value_curve_csv, value_table_csv};
use jumpfolio::residual::{residual_grid, tensor_grid};
use jumpfolio::{CandidateKind, Error, ExpansionCandidate, ExpansionMode, RunConfig};

#[derive(Parser)]
#[command(name = "jumpfolio", version, about = "Small-time value expansions for jump-driven portfolio problems")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; artifacts go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark, expansion and reference values at `run.times`, scaled by x^2.
    ValueTable,
    /// Values on an even wealth grid at one time.
    ValueCurve {
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 0.5)]
        x_lo: f64,
        #[arg(long, default_value_t = 5.0)]
        x_hi: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
    /// Close-to-optimal portfolio from the backward scheme.
    Portfolio {
        #[arg(long)]
        t: f64,
        #[arg(long)]
        x: Option<f64>,
        #[arg(long)]
        y: Option<f64>,
    },
    /// Runs the backward scheme and writes every knot.
    Scheme,
    /// Monte Carlo error-order sweep and residual signs.
    McVerify,
    /// Residual of one candidate on the verify grid.
    Residual {
        #[arg(long, value_enum, default_value_t = Kind::Hat)]
        kind: Kind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Hat,
    Super,
    Sub,
}

enum Failure {
    Error(Error),
    Criterion,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn emit(out: Option<&Path>, name: &str, body: &str) -> Result<(), Error> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let path = cli.config.ok_or_else(|| Error::Validation("--config is required".into()))?;
    let cfg = RunConfig::load(path)?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::ValueTable => {
            let rows = reports::value_table(&cfg)?;
            emit(out, "value_table.csv", &value_table_csv(&rows)?)?;
        }
        Command::ValueCurve { t, x_lo, x_hi, points } => {
            let rows = reports::value_curve(&cfg, t, x_lo, x_hi, points)?;
            emit(out, "value_curve.csv", &value_curve_csv(&rows)?)?;
        }
        Command::Portfolio { t, x, y } => {
            let r = reports::portfolio_record(&cfg, t, x.unwrap_or(cfg.run.x), y.unwrap_or(cfg.run.y))?;
            eprintln!("portfolio {} (knot {} at t = {})", r.portfolio, r.knot, r.knot_time);
            emit(out, "portfolio.csv", &portfolio_csv(&r)?)?;
        }
        Command::Scheme => {
            let v = cfg.expansion()?;
            let s = cfg.scheme_state(&v)?;
            emit(out, "scheme.csv", &s.to_csv()?)?;
        }
        Command::McVerify => {
            let r = reports::verify(&cfg, cli.seed)?;
            for c in &r.checks {
                eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if out.is_some() {
                emit(out, "sweep.csv", &r.sweep_csv()?)?;
                emit(out, "residual_super.csv", &r.super_residual.to_csv()?)?;
                emit(out, "residual_sub.csv", &r.sub_residual.to_csv()?)?;
            }
            emit(out, "verify.csv", &r.checks_csv()?)?;
            if !r.passed() {
                return Err(Failure::Criterion);
            }
        }
        Command::Residual { kind } => {
            let mut v = cfg.expansion()?;
            let vs = cfg.verify.clone().unwrap_or_default();
            let kind = match kind {
                Kind::Hat => CandidateKind::Hat,
                Kind::Super => CandidateKind::Super,
                Kind::Sub => CandidateKind::Sub,
            };
            if kind != CandidateKind::Hat {
                v.compute_envelope(&[cfg.run.y], &cfg.envelope.unwrap_or_default())?;
            }
            let grid = tensor_grid(v.horizon(), &vs.residual_deltas, &vs.residual_xs, &[cfg.run.y]);
            let c = ExpansionCandidate::new(&v, kind, ExpansionMode::FullIntegral)?;
            let r = residual_grid(&c, &grid, v.market(), v.levy());
            emit(out, "residual.csv", &r.to_csv()?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Criterion) => ExitCode::from(2),
    }
}
