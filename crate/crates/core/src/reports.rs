//! Tabular artifacts built from a run configuration.

use serde::Serialize;

use crate::config::{PolicySource, RunConfig};
use crate::error::{Error, Result};
use crate::expansion::{ExpansionMode, ValueExpansion};
use crate::levy::Amplitude;
use crate::market::ScalarField;
use crate::residual::{residual_grid, tensor_grid, CandidateKind, ExpansionCandidate, ResidualReport, SignClass};
use crate::scheme::SurfaceMode;
use crate::sim::{error_order_sweep, ExpansionPolicy, SweepReport};

/// Benchmark, expansion and no-jump reference at one time, scaled by `x^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueRow {
    pub t: f64,
    pub horizon: f64,
    pub benchmark: f64,
    pub hat: f64,
    pub reference: f64,
    pub err_hat: f64,
    pub err_reference: f64,
}

fn io(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

/// Checks the pieces the closed-form benchmark comparison relies on.
fn check_table_compatible(cfg: &RunConfig) -> Result<()> {
    cfg.require(&["utility", "market", "benchmark"])?;
    let mut problems = vec![];
    if !matches!(cfg.utility.and_then(|u| u.single_power()), Some((c, a)) if c == 1.0 && a == 3.0) {
        problems.push("utility must be power-mixture with c1 = 1, c2 = 0, alpha = 3");
    }
    if let Some(m) = &cfg.market {
        if !matches!(m.lambda, ScalarField::ConstantSquared { .. } | ScalarField::Constant { .. }) {
            problems.push("market.lambda must be constant");
        }
    }
    if let Some(l) = &cfg.levy {
        if !matches!(l.gamma1, Amplitude::GammaDensityMatched | Amplitude::IgDensityMatched) {
            problems.push("levy.gamma1 must be density-matched");
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::validation(problems.join("; ")))
    }
}

fn value_row(cfg: &RunConfig, v: &ValueExpansion, t: f64, x: f64) -> Result<ValueRow> {
    let bench = cfg.benchmark(v)?;
    let y = cfg.run.y;
    let s = x * x;
    let benchmark = bench.value(v.utility(), t, x, y)? * s;
    let hat = v.value_hat(t, x, y, cfg.run.expansion_mode)? * s;
    let reference = v.value_reference_no_jumps(t, x, y)? * s;
    Ok(ValueRow {
        t,
        horizon: v.horizon(),
        benchmark,
        hat,
        reference,
        err_hat: (benchmark - hat).abs(),
        err_reference: (benchmark - reference).abs(),
    })
}

/// One row per time in `run.times`, at wealth `run.x`.
pub fn value_table(cfg: &RunConfig) -> Result<Vec<ValueRow>> {
    check_table_compatible(cfg)?;
    if cfg.run.times.is_empty() {
        return Err(Error::validation("missing config keys: run.times"));
    }
    let v = cfg.expansion()?;
    cfg.run.times.iter().map(|&t| value_row(cfg, &v, t, cfg.run.x)).collect()
}

pub fn value_table_csv(rows: &[ValueRow]) -> Result<String> {
    csv_string(
        &["t", "T", "benchmark_x2", "hat_x2", "reference_x2", "err_hat_x2", "err_reference_x2"],
        rows.iter().map(|r| {
            vec![
                r.t.to_string(),
                r.horizon.to_string(),
                f6(r.benchmark),
                f6(r.hat),
                f6(r.reference),
                f6(r.err_hat),
                f6(r.err_reference),
            ]
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub x: f64,
    pub benchmark: f64,
    pub hat: f64,
    pub reference: f64,
}

/// Unscaled values on `n` evenly spaced wealth points in `[x_lo, x_hi]`.
pub fn value_curve(cfg: &RunConfig, t: f64, x_lo: f64, x_hi: f64, n: usize) -> Result<Vec<CurveRow>> {
    if !(x_lo > 0.0 && x_hi > x_lo) || n == 0 {
        return Err(Error::validation(format!(
            "wealth range needs 0 < x_lo < x_hi and at least one point, got [{x_lo}, {x_hi}] with {n}"
        )));
    }
    check_table_compatible(cfg)?;
    let v = cfg.expansion()?;
    let bench = cfg.benchmark(&v)?;
    let y = cfg.run.y;
    (0..n)
        .map(|i| {
            let x = if n == 1 { x_lo } else { x_lo + (x_hi - x_lo) * i as f64 / (n - 1) as f64 };
            Ok(CurveRow {
                x,
                benchmark: bench.value(v.utility(), t, x, y)?,
                hat: v.value_hat(t, x, y, cfg.run.expansion_mode)?,
                reference: v.value_reference_no_jumps(t, x, y)?,
            })
        })
        .collect()
}

pub fn value_curve_csv(rows: &[CurveRow]) -> Result<String> {
    csv_string(
        &["x", "benchmark", "hat", "reference"],
        rows.iter().map(|r| vec![r.x.to_string(), r.benchmark.to_string(), r.hat.to_string(), r.reference.to_string()]),
    )
}

/// Portfolio from the scheme with the knot it was read from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PortfolioRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub portfolio: f64,
    pub knot: usize,
    pub knot_time: f64,
    pub surface: SurfaceMode,
    pub n_steps: usize,
}

pub fn portfolio_record(cfg: &RunConfig, t: f64, x: f64, y: f64) -> Result<PortfolioRecord> {
    let v = cfg.expansion()?;
    let s = cfg.scheme_state(&v)?;
    let knot = s.grid().right_knot(t)?;
    Ok(PortfolioRecord {
        t,
        x,
        y,
        portfolio: s.close_to_optimal_portfolio(t, x, y)?,
        knot,
        knot_time: s.grid().knots()[knot],
        surface: s.settings().surface,
        n_steps: s.grid().n(),
    })
}

pub fn portfolio_csv(r: &PortfolioRecord) -> Result<String> {
    let surface = match r.surface {
        SurfaceMode::GeneralSurface => "general-surface",
        SurfaceMode::PowerClosed => "power-closed",
    };
    csv_string(
        &["t", "x", "y", "portfolio", "knot", "knot_time", "surface", "n_steps"],
        [vec![
            r.t.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.portfolio.to_string(),
            r.knot.to_string(),
            r.knot_time.to_string(),
            surface.to_string(),
            r.n_steps.to_string(),
        ]],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub sweep: SweepReport,
    pub super_residual: ResidualReport,
    pub sub_residual: ResidualReport,
    pub hat_residual: ResidualReport,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn checks_csv(&self) -> Result<String> {
        csv_string(
            &["check", "passed", "detail"],
            self.checks.iter().map(|c| vec![c.name.clone(), c.passed.to_string(), c.detail.clone()]),
        )
    }

    pub fn sweep_csv(&self) -> Result<String> {
        csv_string(
            &["delta", "mc_mean", "std_error", "target", "gap"],
            self.sweep.points.iter().map(|p| {
                vec![
                    p.delta.to_string(),
                    p.mc_mean.to_string(),
                    p.std_error.to_string(),
                    p.target.to_string(),
                    p.gap.to_string(),
                ]
            }),
        )
    }
}

/// Within three standard errors at every horizon.
fn gaps_within_noise(s: &SweepReport) -> bool {
    s.points.iter().all(|p| p.gap <= 3.0 * p.std_error)
}

fn sign_check(name: &str, r: &ResidualReport, class: SignClass) -> Check {
    Check {
        name: name.into(),
        passed: r.all(class),
        detail: format!(
            "{} negative, {} positive, {} indeterminate, {} errors of {}",
            r.negative,
            r.positive,
            r.indeterminate,
            r.errors,
            r.points.len()
        ),
    }
}

/// Monte Carlo error-order sweep plus residual signs of the expansion and
/// its envelopes. Both use the full jump integral.
pub fn verify(cfg: &RunConfig, seed: Option<u64>) -> Result<VerifyReport> {
    cfg.require(&["utility", "market", "sim"])?;
    let settings = cfg.verify.clone().unwrap_or_default();
    if settings.horizons.is_empty() {
        return Err(Error::validation("verify.horizons is empty"));
    }
    let sim = cfg.sim_config(seed)?;
    let mode = ExpansionMode::FullIntegral;
    let mut v = cfg.expansion()?;
    let (x0, y0) = (cfg.run.x, cfg.run.y);

    let sweep = match settings.policy {
        PolicySource::Scheme => {
            let s = cfg.scheme_state(&v)?;
            error_order_sweep(&v, &s, mode, &settings.horizons, x0, y0, &sim)?
        }
        PolicySource::Expansion => {
            let p = ExpansionPolicy { expansion: &v, mode };
            error_order_sweep(&v, &p, mode, &settings.horizons, x0, y0, &sim)?
        }
    };

    v.compute_envelope(&[y0], &cfg.envelope.unwrap_or_default())?;
    let grid = tensor_grid(v.horizon(), &settings.residual_deltas, &settings.residual_xs, &[y0]);
    let residuals = |kind| -> Result<ResidualReport> {
        let c = ExpansionCandidate::new(&v, kind, mode)?;
        Ok(residual_grid(&c, &grid, v.market(), v.levy()))
    };
    let super_residual = residuals(CandidateKind::Super)?;
    let sub_residual = residuals(CandidateKind::Sub)?;
    let hat_residual = residuals(CandidateKind::Hat)?;

    let order = match sweep.slope {
        Some(s) => Check {
            name: "error-order".into(),
            passed: s >= settings.min_slope || gaps_within_noise(&sweep),
            detail: format!(
                "weighted slope {s:.4} (unweighted {:.4}), minimum {}, all gaps within 3 SE: {}",
                sweep.unweighted_slope.unwrap_or(f64::NAN),
                settings.min_slope,
                gaps_within_noise(&sweep)
            ),
        },
        None => Check {
            name: "error-order".into(),
            passed: gaps_within_noise(&sweep),
            detail: format!("single horizon, gap {:.3e}", sweep.points[0].gap),
        },
    };
    let checks = vec![
        order,
        sign_check("super-solution-negative", &super_residual, SignClass::Negative),
        sign_check("sub-solution-positive", &sub_residual, SignClass::Positive),
        Check {
            name: "expansion-residual-finite".into(),
            passed: hat_residual.errors == 0 && hat_residual.max_abs().is_finite(),
            detail: format!("max |residual| {:.3e}", hat_residual.max_abs()),
        },
    ];
    Ok(VerifyReport {
        sweep,
        super_residual,
        sub_residual,
        hat_residual,
        checks,
    })
}
