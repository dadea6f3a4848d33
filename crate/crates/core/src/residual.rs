//! Hamiltonian and HJB residual `V_t + H(V)` for candidate value functions.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expansion::{portfolio_foc, ExpansionMode, ValueExpansion};
use crate::levy::LevySpec;
use crate::market::MarketSpec;

/// Spatial partials of a candidate value function.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SpacePartials {
    pub x: f64,
    pub xx: f64,
    pub y: f64,
    pub yy: f64,
    pub xy: f64,
}

/// A smooth candidate for the value function.
pub trait CandidateValue: Sync {
    fn horizon(&self) -> f64;

    fn value(&self, t: f64, x: f64, y: f64) -> Result<f64>;

    fn partials(&self, t: f64, x: f64, y: f64) -> Result<SpacePartials>;

    /// Defaults to a central difference with step `1e-6 T`, one-sided at the ends.
    fn time_derivative(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        let h = 1e-6 * self.horizon();
        let (lo, hi) = ((t - h).max(0.0), (t + h).min(self.horizon()));
        Ok((self.value(hi, x, y)? - self.value(lo, x, y)?) / (hi - lo))
    }
}

/// Which member of the expansion family a candidate represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CandidateKind {
    /// `U_T + (T - t) U1`.
    Hat,
    /// Hat plus `(T - t)^2 u2bar f`.
    Super,
    /// Hat minus `(T - t)^2 u2bar f`.
    Sub,
}

/// An expansion-based candidate with analytic time and space derivatives.
pub struct ExpansionCandidate<'a> {
    pub expansion: &'a ValueExpansion,
    pub kind: CandidateKind,
    pub mode: ExpansionMode,
}

impl<'a> ExpansionCandidate<'a> {
    pub fn new(expansion: &'a ValueExpansion, kind: CandidateKind, mode: ExpansionMode) -> Result<Self> {
        if kind != CandidateKind::Hat && expansion.envelope().is_none() {
            return Err(Error::validation("envelope candidates need a computed envelope"));
        }
        Ok(ExpansionCandidate {
            expansion,
            kind,
            mode,
        })
    }

    fn envelope_sign(&self) -> f64 {
        match self.kind {
            CandidateKind::Hat => 0.0,
            CandidateKind::Super => 1.0,
            CandidateKind::Sub => -1.0,
        }
    }

    fn u2bar(&self) -> f64 {
        self.expansion.envelope().map_or(0.0, |e| e.u2bar)
    }

    fn delta(&self, t: f64) -> Result<f64> {
        let h = self.expansion.horizon();
        if (0.0..=h).contains(&t) {
            Ok(h - t)
        } else {
            Err(Error::domain(format!("time {t} outside [0, {h}]")))
        }
    }
}

/// `f, f', f''` of the growth envelope.
fn growth_jet(e: &ValueExpansion, x: f64) -> [f64; 3] {
    match *e.utility() {
        crate::UtilitySpec::Logarithmic => [1.0, 0.0, 0.0],
        crate::UtilitySpec::PowerMixture { alpha, beta, .. } => {
            let term = |p: f64| {
                let q = 1.0 - p;
                let v = x.powf(q);
                [v, q * v / x, q * (q - 1.0) * v / (x * x)]
            };
            let (a, b) = (term(alpha), term(beta));
            [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
        }
    }
}

impl CandidateValue for ExpansionCandidate<'_> {
    fn horizon(&self) -> f64 {
        self.expansion.horizon()
    }

    fn value(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        let d = self.delta(t)?;
        let hat = self.expansion.value_hat(t, x, y, self.mode)?;
        let s = self.envelope_sign();
        if s == 0.0 {
            return Ok(hat);
        }
        Ok(hat + s * d * d * self.u2bar() * growth_jet(self.expansion, x)[0])
    }

    fn partials(&self, t: f64, x: f64, y: f64) -> Result<SpacePartials> {
        let d = self.delta(t)?;
        let u = self.expansion.utility();
        let p = self.expansion.u1_partials_mode(x, y, self.mode)?;
        let e = self.envelope_sign() * d * d * self.u2bar();
        let f = growth_jet(self.expansion, x);
        Ok(SpacePartials {
            x: u.derivative(x, 1)? + d * p.x + e * f[1],
            xx: u.derivative(x, 2)? + d * p.xx + e * f[2],
            y: d * p.y,
            yy: d * p.yy,
            xy: d * p.xy,
        })
    }

    fn time_derivative(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        let d = self.delta(t)?;
        let u1 = self.expansion.u1_mode(x, y, self.mode)?;
        let s = self.envelope_sign();
        Ok(-u1 - s * 2.0 * d * self.u2bar() * growth_jet(self.expansion, x)[0])
    }
}

/// Candidate defined by closures, for closed-form test solutions.
pub struct FnCandidate<V, P, D>
where
    V: Fn(f64, f64, f64) -> f64 + Sync,
    P: Fn(f64, f64, f64) -> SpacePartials + Sync,
    D: Fn(f64, f64, f64) -> f64 + Sync,
{
    pub horizon: f64,
    pub value: V,
    pub partials: P,
    pub time_derivative: D,
}

impl<V, P, D> CandidateValue for FnCandidate<V, P, D>
where
    V: Fn(f64, f64, f64) -> f64 + Sync,
    P: Fn(f64, f64, f64) -> SpacePartials + Sync,
    D: Fn(f64, f64, f64) -> f64 + Sync,
{
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn value(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        Ok((self.value)(t, x, y))
    }

    fn partials(&self, t: f64, x: f64, y: f64) -> Result<SpacePartials> {
        Ok((self.partials)(t, x, y))
    }

    fn time_derivative(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        Ok((self.time_derivative)(t, x, y))
    }
}

/// Pieces of the Hamiltonian at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HamiltonianParts {
    pub pi: f64,
    pub value: f64,
    pub hamiltonian: f64,
    /// Diffusive bracket plus the jump term linearised in the portfolio,
    /// which the first-order-condition portfolio maximises.
    pub bracket: f64,
}

/// `H(V)` at `(t, x, y)` with the first-order-condition portfolio.
pub fn hamiltonian<C: CandidateValue + ?Sized>(
    c: &C,
    t: f64,
    x: f64,
    y: f64,
    mk: &MarketSpec,
    lv: &LevySpec,
) -> Result<f64> {
    Ok(hamiltonian_parts(c, t, x, y, mk, lv)?.hamiltonian)
}

pub fn hamiltonian_parts<C: CandidateValue + ?Sized>(
    c: &C,
    t: f64,
    x: f64,
    y: f64,
    mk: &MarketSpec,
    lv: &LevySpec,
) -> Result<HamiltonianParts> {
    hamiltonian_parts_mode(c, t, x, y, mk, lv, ExpansionMode::FullIntegral)
}

/// As [`hamiltonian_parts`]; `FirstOrderTaylor` drops the compensated jump
/// integral, which vanishes to first order in the amplitudes.
pub fn hamiltonian_parts_mode<C: CandidateValue + ?Sized>(
    c: &C,
    t: f64,
    x: f64,
    y: f64,
    mk: &MarketSpec,
    lv: &LevySpec,
    mode: ExpansionMode,
) -> Result<HamiltonianParts> {
    let co = mk.eval(y)?;
    let p = c.partials(t, x, y)?;
    let moment = jump_moment_at(lv, t)?;
    let pi = portfolio_foc(&co, p.x, p.xx, p.xy, moment).ok_or(Error::NonConcave { t, x, y })?;
    let v = c.value(t, x, y)?;
    let sp = co.sigma * pi;
    let diffusive = co.lambda * sp * p.x
        + co.b * p.y
        + 0.5 * sp * sp * p.xx
        + co.rho * co.a * sp * p.xy
        + 0.5 * co.a * co.a * p.yy;
    let jumps = if mode == ExpansionMode::FirstOrderTaylor
        || (lv.wealth_jumps_absent() && lv.factor_jumps_absent())
    {
        0.0
    } else {
        lv.rule().try_integrate(|z| {
            let g1 = lv.gamma1_at(t, z);
            let g2 = lv.gamma2(z);
            let xs = x + sp * g1;
            if !(xs > 0.0) {
                return Err(Error::domain(format!(
                    "post-jump wealth {xs} is not positive at x = {x}, zeta = {z}"
                )));
            }
            Ok(c.value(t, xs, y + g2)? - v - sp * g1 * p.x - g2 * p.y)
        })?
    };
    let bracket = portfolio_bracket(&co, p, sp, moment);
    Ok(HamiltonianParts {
        pi,
        value: v,
        hamiltonian: diffusive + jumps,
        bracket,
    })
}

/// Portfolio-dependent part of the Hamiltonian with the jump term linearised.
fn portfolio_bracket(co: &crate::CoefficientBundle, p: SpacePartials, sp: f64, moment: f64) -> f64 {
    co.lambda * sp * p.x + 0.5 * sp * sp * p.xx + co.rho * co.a * sp * p.xy - sp * p.x * moment
}

pub(crate) fn jump_moment_at(lv: &LevySpec, t: f64) -> Result<f64> {
    let i = lv.first_moment()?;
    if lv.config().gamma1_1 == crate::levy::Amplitude::Zero {
        return Ok(i);
    }
    Ok(i + (lv.horizon() - t) * lv.levy_integral(|z| lv.gamma1_1(z))?)
}

/// Checks that scaling the optimal portfolio by `1 +- rel` never raises the
/// portfolio bracket. Returns the largest observed increase.
pub fn maximality_violation<C: CandidateValue + ?Sized>(
    c: &C,
    t: f64,
    x: f64,
    y: f64,
    mk: &MarketSpec,
    lv: &LevySpec,
    rel: f64,
) -> Result<f64> {
    let co = mk.eval(y)?;
    let p = c.partials(t, x, y)?;
    let moment = jump_moment_at(lv, t)?;
    let pi = portfolio_foc(&co, p.x, p.xx, p.xy, moment).ok_or(Error::NonConcave { t, x, y })?;
    let best = portfolio_bracket(&co, p, co.sigma * pi, moment);
    let mut worst = f64::NEG_INFINITY;
    for s in [1.0 - rel, 1.0 + rel] {
        let b = portfolio_bracket(&co, p, co.sigma * pi * s, moment);
        worst = worst.max(b - best);
    }
    Ok(worst)
}

/// `V_t + H(V)` at one point.
pub fn residual<C: CandidateValue + ?Sized>(
    c: &C,
    t: f64,
    x: f64,
    y: f64,
    mk: &MarketSpec,
    lv: &LevySpec,
) -> Result<(f64, f64)> {
    let h = hamiltonian_parts(c, t, x, y, mk, lv)?;
    Ok((c.time_derivative(t, x, y)? + h.hamiltonian, h.value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignClass {
    Positive,
    Negative,
    Indeterminate,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub residual: f64,
    pub classification: SignClass,
    #[serde(skip)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub points: Vec<ResidualPoint>,
    pub positive: usize,
    pub negative: usize,
    pub indeterminate: usize,
    /// Points whose evaluation failed; recorded rather than aborting.
    pub errors: usize,
}

impl ResidualReport {
    pub fn all(&self, class: SignClass) -> bool {
        !self.points.is_empty() && self.points.iter().all(|p| p.classification == class)
    }

    pub fn max_abs(&self) -> f64 {
        self.points
            .iter()
            .filter(|p| p.classification != SignClass::Error)
            .map(|p| p.residual.abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, x, y, residual, classification`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        for p in &self.points {
            w.serialize(p).map_err(|e| Error::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Noise floor for sign classification.
pub fn noise_floor(value: f64) -> f64 {
    1e-10 * (1.0 + value.abs())
}

/// Residual at every grid point, evaluated in parallel and reported in grid order.
pub fn residual_grid<C: CandidateValue + ?Sized>(
    c: &C,
    grid: &[(f64, f64, f64)],
    mk: &MarketSpec,
    lv: &LevySpec,
) -> ResidualReport {
    let points: Vec<ResidualPoint> = grid
        .par_iter()
        .map(|&(t, x, y)| match residual(c, t, x, y, mk, lv) {
            Ok((r, v)) => {
                let floor = noise_floor(v);
                let classification = if r > floor {
                    SignClass::Positive
                } else if r < -floor {
                    SignClass::Negative
                } else {
                    SignClass::Indeterminate
                };
                ResidualPoint {
                    t,
                    x,
                    y,
                    residual: r,
                    classification,
                    error: None,
                }
            }
            Err(e) => ResidualPoint {
                t,
                x,
                y,
                residual: f64::NAN,
                classification: SignClass::Error,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let count = |k: SignClass| points.iter().filter(|p| p.classification == k).count();
    ResidualReport {
        positive: count(SignClass::Positive),
        negative: count(SignClass::Negative),
        indeterminate: count(SignClass::Indeterminate),
        errors: count(SignClass::Error),
        points,
    }
}

/// Tensor grid over time-to-horizon values, wealth and factor.
pub fn tensor_grid(horizon: f64, deltas: &[f64], xs: &[f64], ys: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut g = Vec::with_capacity(deltas.len() * xs.len() * ys.len());
    for &d in deltas {
        for &x in xs {
            for &y in ys {
                g.push((horizon - d, x, y));
            }
        }
    }
    g
}

/// Largest time-to-horizon `eps` in `[delta_lo, delta_hi]` such that every
/// point with time-to-horizon in `[delta_lo, eps]` (sampled on `n_delta`
/// log-spaced values) has the expected sign. Bisection in `ln eps`.
#[allow(clippy::too_many_arguments)]
pub fn find_epsilon<C: CandidateValue + ?Sized>(
    c: &C,
    expected: SignClass,
    xs: &[f64],
    ys: &[f64],
    mk: &MarketSpec,
    lv: &LevySpec,
    delta_lo: f64,
    delta_hi: f64,
    iters: usize,
) -> Option<f64> {
    let n_delta = 6;
    let uniform = |eps: f64| {
        let deltas = crate::expansion::log_grid(delta_lo, eps, n_delta);
        residual_grid(c, &tensor_grid(c.horizon(), &deltas, xs, ys), mk, lv).all(expected)
    };
    if !uniform(delta_lo) {
        return None;
    }
    if uniform(delta_hi) {
        return Some(delta_hi);
    }
    let (mut lo, mut hi) = (delta_lo.ln(), delta_hi.ln());
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if uniform(mid.exp()) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo.exp())
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.abs().ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
