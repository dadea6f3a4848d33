//! Euler Monte Carlo for wealth and factor with compensated jumps.
//!
//! Jumps with mark above `small_jump_cut` form a compound Poisson process
//! drawn from a tabulated inverse CDF; the compensated contribution of the
//! marks below the cut has mean zero and is dropped.

use std::io::{Read, Write};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::{portfolio_foc, ExpansionMode, ValueExpansion};
use crate::levy::LevySpec;
use crate::market::MarketSpec;
use crate::scheme::SchemeState;
use crate::utility::UtilitySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Marks at or below this value are compensated rather than simulated.
    pub small_jump_cut: f64,
    /// Pairs of paths with mirrored Gaussian increments and shared jumps.
    pub antithetic: bool,
    /// Exponents for which the admissibility integrals are accumulated.
    pub admissibility_r: Vec<f64>,
    /// Times at which wealth samples are retained.
    pub snapshot_times: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: 100_000,
            n_steps: 100,
            seed: 1,
            small_jump_cut: 1e-3,
            antithetic: true,
            admissibility_r: vec![],
            snapshot_times: vec![],
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(Error::spec("n_paths and n_steps must be positive"));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(Error::spec("antithetic sampling needs an even path count"));
        }
        if !(self.small_jump_cut > 0.0) {
            return Err(Error::spec("small_jump_cut must be positive"));
        }
        if self.admissibility_r.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::spec("admissibility exponents must be positive"));
        }
        Ok(())
    }
}

/// Feedback portfolio: amount held in the risky asset.
pub trait Policy: Sync {
    fn portfolio(&self, t: f64, x: f64, y: f64) -> Result<f64>;
}

/// Policy given by a plain function.
pub struct FnPolicy<F: Fn(f64, f64, f64) -> f64 + Sync>(pub F);

impl<F: Fn(f64, f64, f64) -> f64 + Sync> Policy for FnPolicy<F> {
    fn portfolio(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        Ok((self.0)(t, x, y))
    }
}

impl Policy for SchemeState {
    fn portfolio(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        self.close_to_optimal_portfolio(t, x, y)
    }
}

/// First-order-condition portfolio of the expansion at the running time.
pub struct ExpansionPolicy<'a> {
    pub expansion: &'a ValueExpansion,
    pub mode: ExpansionMode,
}

impl Policy for ExpansionPolicy<'_> {
    fn portfolio(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        let v = self.expansion;
        let d = v.horizon() - t;
        let u = v.utility();
        let p = v.u1_partials_mode(x, y, self.mode)?;
        let vx = u.derivative(x, 1)? + d * p.x;
        let vxx = u.derivative(x, 2)? + d * p.xx;
        let c = v.market().eval(y)?;
        portfolio_foc(&c, vx, vxx, d * p.xy, v.moment_at(t)).ok_or(Error::NonConcave { t, x, y })
    }
}

/// Tabulated law of the marks above the cut.
#[derive(Debug, Clone)]
struct JumpLaw {
    ln_z: Vec<f64>,
    /// Cumulative mass from the cut up to each node.
    cum: Vec<f64>,
    intensity: f64,
    /// `int_{z > cut} gamma1 dnu` and the same for the time-correction amplitude.
    comp1: f64,
    comp1_1: f64,
    comp2: f64,
}

impl JumpLaw {
    const NODES: usize = 8192;

    fn new(lv: &LevySpec, cut: f64) -> Result<Self> {
        let hi = lv.effective_upper();
        if !(hi > cut) {
            return Err(Error::spec(format!("small_jump_cut {cut} is above the support edge {hi}")));
        }
        let (a, b) = (cut.ln(), hi.ln());
        let n = Self::NODES;
        let ln_z: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
        let h = (b - a) / n as f64;
        // Trapezoid in ln z on the density times z.
        let dens: Vec<f64> = ln_z.iter().map(|&s| lv.density(s.exp()) * s.exp()).collect();
        let mut cum = vec![0.0; n + 1];
        let (mut c1, mut c11, mut c2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            cum[i + 1] = cum[i] + 0.5 * h * (dens[i] + dens[i + 1]);
            for (acc, f) in [
                (&mut c1, &(|z: f64| lv.gamma1(z)) as &dyn Fn(f64) -> f64),
                (&mut c11, &|z: f64| lv.gamma1_1(z)),
                (&mut c2, &|z: f64| lv.gamma2(z)),
            ] {
                let (z0, z1) = (ln_z[i].exp(), ln_z[i + 1].exp());
                *acc += 0.5 * h * (dens[i] * f(z0) + dens[i + 1] * f(z1));
            }
        }
        if !cum.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFiniteIntegrand { zeta: cut });
        }
        Ok(JumpLaw {
            intensity: cum[n],
            ln_z,
            cum,
            comp1: c1,
            comp1_1: c11,
            comp2: c2,
        })
    }

    /// Mark for a uniform draw `u` in `[0, 1)`.
    fn sample(&self, u: f64) -> f64 {
        let target = u * self.intensity;
        let i = (self.cum.partition_point(|&c| c <= target).max(1) - 1).min(self.cum.len() - 2);
        let span = self.cum[i + 1] - self.cum[i];
        let w = if span > 0.0 { (target - self.cum[i]) / span } else { 0.0 };
        (self.ln_z[i] + w * (self.ln_z[i + 1] - self.ln_z[i])).exp()
    }
}

/// Samples and diagnostics of a simulation run. With antithetic sampling,
/// paths `2i` and `2i + 1` form a pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathBundle {
    pub t0: f64,
    pub horizon: f64,
    pub n_steps: usize,
    pub antithetic: bool,
    pub terminal_x: Vec<f64>,
    pub terminal_y: Vec<f64>,
    pub min_wealth: Vec<f64>,
    /// Paths on which wealth left `(0, inf)`; such paths are frozen.
    pub flagged: Vec<bool>,
    pub violations: usize,
    pub admissibility_r: Vec<f64>,
    /// Per path, per exponent: the three admissibility integrals.
    pub admissibility: Vec<Vec<[f64; 3]>>,
    pub snapshot_times: Vec<f64>,
    /// Per snapshot time, wealth on every path.
    pub snapshots: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct PathOut {
    x: f64,
    y: f64,
    min_x: f64,
    flagged: bool,
    adm: Vec<[f64; 3]>,
    snaps: Vec<f64>,
}

struct Ctx<'a, P: Policy + ?Sized> {
    mk: &'a MarketSpec,
    lv: &'a LevySpec,
    policy: &'a P,
    law: Option<JumpLaw>,
    t0: f64,
    x0: f64,
    y0: f64,
    horizon: f64,
    cfg: &'a SimConfig,
    snap_steps: Vec<usize>,
}

/// Per-step admissibility increments at wealth `x` with exposure `sp`.
fn admissibility_increments(lv: &LevySpec, t: f64, x: f64, sp: f64, r: f64) -> [f64; 3] {
    let diff = sp * sp / x.powf(2.0 * r);
    if lv.wealth_jumps_absent() || sp == 0.0 {
        return [diff, 0.0, 0.0];
    }
    let rule = lv.rule();
    let (mut ln_part, mut pow_part) = (0.0, 0.0);
    for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
        let xs = x + sp * lv.gamma1_at(t, z);
        if !(xs > 0.0) {
            return [diff, f64::INFINITY, f64::INFINITY];
        }
        ln_part += w * (xs.ln() - x.ln()).powi(2);
        if r != 1.0 {
            pow_part += w * (xs.powf(1.0 - r) - x.powf(1.0 - r)).powi(2);
        }
    }
    [diff, ln_part, pow_part]
}

impl<P: Policy + ?Sized> Ctx<'_, P> {
    fn run_pair(&self, index: u64) -> Result<Vec<PathOut>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index);
        let copies = if self.cfg.antithetic { 2 } else { 1 };
        let n = self.cfg.n_steps;
        let dt = (self.horizon - self.t0) / n as f64;
        let sq = dt.sqrt();
        let nr = self.cfg.admissibility_r.len();
        let mut out: Vec<PathOut> = (0..copies)
            .map(|_| PathOut {
                x: f64::NAN,
                y: f64::NAN,
                min_x: f64::INFINITY,
                flagged: false,
                adm: vec![[0.0; 3]; nr],
                snaps: vec![],
            })
            .collect();
        let mut state: Vec<(f64, f64)> = vec![(self.x0, self.y0); copies];
        for (o, s) in out.iter_mut().zip(&state) {
            o.min_x = s.0;
        }
        let rho = self.mk.rho;
        let rho_c = (1.0 - rho * rho).sqrt();
        let mut marks: Vec<f64> = Vec::new();
        for k in 0..n {
            let t = self.t0 + k as f64 * dt;
            for (o, s) in out.iter_mut().zip(&state) {
                if self.snap_steps.contains(&k) {
                    o.snaps.push(s.0);
                }
            }
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            marks.clear();
            if let Some(law) = &self.law {
                let mean = law.intensity * dt;
                if mean > 0.0 {
                    let count: f64 = Poisson::new(mean)
                        .map_err(|e| Error::spec(format!("jump intensity: {e}")))?
                        .sample(&mut rng);
                    for _ in 0..count as usize {
                        marks.push(law.sample(rng.random::<f64>()));
                    }
                }
            }
            for (c, (o, s)) in out.iter_mut().zip(state.iter_mut()).enumerate() {
                if o.flagged {
                    continue;
                }
                let sign = if c == 0 { 1.0 } else { -1.0 };
                let (x, y) = *s;
                let co = self.mk.eval(y)?;
                let pi = self.policy.portfolio(t, x, y)?;
                let sp = co.sigma * pi;
                let dw1 = sign * sq * z1;
                let dw2 = sign * sq * z2;
                for (i, &r) in self.cfg.admissibility_r.iter().enumerate() {
                    let inc = admissibility_increments(self.lv, t, x, sp, r);
                    for j in 0..3 {
                        o.adm[i][j] += inc[j] * dt;
                    }
                }
                let (comp1, comp2) = match &self.law {
                    Some(l) => (l.comp1 + (self.horizon - t) * l.comp1_1, l.comp2),
                    None => (0.0, 0.0),
                };
                let mut xn = x + sp * (co.lambda * dt + dw1 - comp1 * dt);
                let mut yn = y + co.b * dt + co.a * (rho * dw1 + rho_c * dw2) - comp2 * dt;
                for &z in &marks {
                    xn += sp * self.lv.gamma1_at(t, z);
                    yn += self.lv.gamma2(z);
                }
                *s = (xn, yn);
                if !(xn > 0.0 && xn.is_finite()) {
                    o.flagged = true;
                }
                o.min_x = o.min_x.min(xn);
            }
        }
        for (o, s) in out.iter_mut().zip(&state) {
            if self.snap_steps.contains(&n) {
                o.snaps.push(s.0);
            }
            o.x = s.0;
            o.y = s.1;
        }
        Ok(out)
    }
}

/// Simulates wealth and factor from `(t0, x0, y0)` to `horizon` under `policy`.
#[allow(clippy::too_many_arguments)]
pub fn simulate<P: Policy + ?Sized>(
    mk: &MarketSpec,
    lv: &LevySpec,
    policy: &P,
    t0: f64,
    x0: f64,
    y0: f64,
    horizon: f64,
    cfg: &SimConfig,
) -> Result<PathBundle> {
    cfg.validate()?;
    if !(t0 < horizon) || !(t0 >= 0.0) {
        return Err(Error::domain(format!("start time {t0} must lie in [0, {horizon})")));
    }
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::domain(format!("initial wealth {x0} is not positive")));
    }
    let jumps = !(lv.wealth_jumps_absent() && lv.factor_jumps_absent());
    let law = if jumps { Some(JumpLaw::new(lv, cfg.small_jump_cut)?) } else { None };
    let dt = (horizon - t0) / cfg.n_steps as f64;
    let snap_steps: Vec<usize> = cfg
        .snapshot_times
        .iter()
        .map(|&t| (((t - t0) / dt).round().max(0.0) as usize).min(cfg.n_steps))
        .collect();
    let ctx = Ctx {
        mk,
        lv,
        policy,
        law,
        t0,
        x0,
        y0,
        horizon,
        cfg,
        snap_steps,
    };
    let groups = if cfg.antithetic { cfg.n_paths / 2 } else { cfg.n_paths };
    let outs: Vec<Vec<PathOut>> = (0..groups as u64)
        .into_par_iter()
        .map(|i| ctx.run_pair(i))
        .collect::<Result<_>>()?;
    let paths: Vec<PathOut> = outs.into_iter().flatten().collect();
    let snapshots = (0..cfg.snapshot_times.len())
        .map(|j| {
            // Snapshots are recorded in step order; map back to the requested order.
            let mut order: Vec<usize> = (0..cfg.snapshot_times.len()).collect();
            order.sort_by_key(|&i| ctx.snap_steps[i]);
            let rank = order.iter().position(|&i| i == j).unwrap_or(j);
            paths.iter().map(|p| p.snaps.get(rank).copied().unwrap_or(f64::NAN)).collect()
        })
        .collect();
    Ok(PathBundle {
        t0,
        horizon,
        n_steps: cfg.n_steps,
        antithetic: cfg.antithetic,
        terminal_x: paths.iter().map(|p| p.x).collect(),
        terminal_y: paths.iter().map(|p| p.y).collect(),
        min_wealth: paths.iter().map(|p| p.min_x).collect(),
        violations: paths.iter().filter(|p| p.flagged).count(),
        flagged: paths.iter().map(|p| p.flagged).collect(),
        admissibility_r: cfg.admissibility_r.clone(),
        admissibility: paths.into_iter().map(|p| p.adm).collect(),
        snapshot_times: cfg.snapshot_times.clone(),
        snapshots,
    })
}

/// Pairwise summation; the result depends only on the order of `v`.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean and standard error of `f` over the bundle's sampling units (pairs
/// when antithetic). Flagged units are an error unless `censor` drops them.
pub fn unit_mean<F: Fn(usize) -> f64>(b: &PathBundle, f: F, censor: bool) -> Result<(f64, f64)> {
    let per = if b.antithetic { 2 } else { 1 };
    let units = b.flagged.len() / per;
    let mut vals = Vec::with_capacity(units);
    for u in 0..units {
        let idx = u * per..(u + 1) * per;
        if idx.clone().any(|i| b.flagged[i]) {
            if censor {
                continue;
            }
            return Err(Error::Admissibility {
                violations: b.violations,
            });
        }
        vals.push(idx.map(&f).sum::<f64>() / per as f64);
    }
    mean_se(&vals)
}

fn mean_se(vals: &[f64]) -> Result<(f64, f64)> {
    if vals.is_empty() {
        return Err(Error::validation("no admissible samples"));
    }
    let n = vals.len() as f64;
    let mean = pairwise_sum(vals) / n;
    if vals.len() == 1 {
        return Ok((mean, 0.0));
    }
    let dev: Vec<f64> = vals.iter().map(|v| (v - mean).powi(2)).collect();
    Ok((mean, (pairwise_sum(&dev) / (n - 1.0) / n).sqrt()))
}

/// Sample mean and standard error of `U_T(X_T)`.
pub fn estimate_expected_utility(b: &PathBundle, u: &UtilitySpec, censor: bool) -> Result<(f64, f64)> {
    let vals: Vec<f64> = b
        .terminal_x
        .iter()
        .zip(&b.flagged)
        .map(|(&x, &f)| if f { f64::NAN } else { u.value(x).unwrap_or(f64::NAN) })
        .collect();
    unit_mean(b, |i| vals[i], censor)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub r: f64,
    /// `(mean, standard error)` of the three integrals; the power-jump entry
    /// is absent for `r = 1`.
    pub diffusion: (f64, f64),
    pub log_jump: (f64, f64),
    pub power_jump: Option<(f64, f64)>,
    pub positivity_violations: usize,
    pub finite: bool,
    /// Set by [`admissibility_study`]: estimates agree under step doubling.
    pub stable: Option<bool>,
}

/// Admissibility integrals for exponent `r`, which must have been requested
/// in the simulation config. Flagged paths are censored.
pub fn admissibility_report(b: &PathBundle, r: f64) -> Result<AdmissibilityReport> {
    let j = b
        .admissibility_r
        .iter()
        .position(|&v| v == r)
        .ok_or_else(|| Error::validation(format!("exponent {r} was not simulated")))?;
    let est = |k: usize| -> (f64, f64) {
        unit_mean(b, |i| b.admissibility[i][j][k], true).unwrap_or((f64::INFINITY, f64::INFINITY))
    };
    let (d, l, p) = (est(0), est(1), est(2));
    let power_jump = (r != 1.0).then_some(p);
    let finite = b.violations == 0
        && d.0.is_finite()
        && l.0.is_finite()
        && power_jump.is_none_or(|p| p.0.is_finite());
    Ok(AdmissibilityReport {
        r,
        diffusion: d,
        log_jump: l,
        power_jump,
        positivity_violations: b.violations,
        finite,
        stable: None,
    })
}

fn agrees(a: (f64, f64), b: (f64, f64)) -> bool {
    if !(a.0.is_finite() && b.0.is_finite()) {
        return false;
    }
    (a.0 - b.0).abs() <= 0.1 * a.0.abs().max(b.0.abs()) + 4.0 * (a.1 * a.1 + b.1 * b.1).sqrt()
}

/// Runs the simulation at `n_steps` and `2 n_steps` and reports the
/// admissibility integrals with a step-doubling stability flag.
#[allow(clippy::too_many_arguments)]
pub fn admissibility_study<P: Policy + ?Sized>(
    mk: &MarketSpec,
    lv: &LevySpec,
    policy: &P,
    t0: f64,
    x0: f64,
    y0: f64,
    horizon: f64,
    cfg: &SimConfig,
    r: f64,
) -> Result<AdmissibilityReport> {
    let mut c = cfg.clone();
    c.admissibility_r = vec![r];
    let coarse = admissibility_report(&simulate(mk, lv, policy, t0, x0, y0, horizon, &c)?, r)?;
    c.n_steps *= 2;
    let fine = admissibility_report(&simulate(mk, lv, policy, t0, x0, y0, horizon, &c)?, r)?;
    let stable = fine.finite
        && coarse.finite
        && agrees(coarse.diffusion, fine.diffusion)
        && agrees(coarse.log_jump, fine.log_jump)
        && match (coarse.power_jump, fine.power_jump) {
            (Some(a), Some(b)) => agrees(a, b),
            _ => true,
        };
    Ok(AdmissibilityReport {
        stable: Some(stable),
        ..fine
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub mc_mean: f64,
    pub std_error: f64,
    pub target: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Log-log slope of the gap against the horizon, weighted by
    /// `(gap / SE)^2`; absent for fewer than two horizons.
    pub slope: Option<f64>,
    pub unweighted_slope: Option<f64>,
}

/// Weighted least-squares slope of `ln y` on `ln x`.
pub fn weighted_loglog_slope(xs: &[f64], ys: &[f64], ws: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let sw: f64 = ws.iter().sum();
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.abs().ln()).collect();
    let mx = lx.iter().zip(ws).map(|(a, w)| a * w).sum::<f64>() / sw;
    let my = ly.iter().zip(ws).map(|(a, w)| a * w).sum::<f64>() / sw;
    let sxy: f64 = lx.iter().zip(&ly).zip(ws).map(|((a, b), w)| w * (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().zip(ws).map(|(a, w)| w * (a - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// For each time-to-horizon `delta`, simulates under `policy` from
/// `(T - delta, x0, y0)` and compares `E U_T(X_T)` with the expansion.
pub fn error_order_sweep<P: Policy + ?Sized>(
    v: &ValueExpansion,
    policy: &P,
    mode: ExpansionMode,
    horizons: &[f64],
    x0: f64,
    y0: f64,
    cfg: &SimConfig,
) -> Result<SweepReport> {
    if horizons.is_empty() {
        return Err(Error::validation("horizon list is empty"));
    }
    if horizons.windows(2).any(|w| !(w[1] < w[0])) || horizons.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::validation("horizons must be positive and decreasing"));
    }
    let t_end = v.horizon();
    let mut points = Vec::with_capacity(horizons.len());
    for &delta in horizons {
        let t0 = t_end - delta;
        let b = simulate(v.market(), v.levy(), policy, t0, x0, y0, t_end, cfg)?;
        let (mc_mean, std_error) = estimate_expected_utility(&b, v.utility(), false)?;
        let target = v.value_hat(t0, x0, y0, mode)?;
        points.push(SweepPoint {
            delta,
            mc_mean,
            std_error,
            target,
            gap: (mc_mean - target).abs(),
        });
    }
    let ds: Vec<f64> = points.iter().map(|p| p.delta).collect();
    let gs: Vec<f64> = points.iter().map(|p| p.gap).collect();
    let ws: Vec<f64> = points
        .iter()
        .map(|p| if p.std_error > 0.0 { (p.gap / p.std_error).powi(2) } else { 1.0 })
        .collect();
    Ok(SweepReport {
        slope: weighted_loglog_slope(&ds, &gs, &ws),
        unweighted_slope: weighted_loglog_slope(&ds, &gs, &vec![1.0; ds.len()]),
        points,
    })
}

/// One-line summary of a bundle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleSummary {
    pub n_paths: usize,
    pub mean_utility: f64,
    pub std_error: f64,
    pub mean_terminal_wealth: f64,
    pub min_wealth: f64,
    pub violations: usize,
}

impl PathBundle {
    pub fn summary(&self, u: &UtilitySpec) -> BundleSummary {
        let (m, se) = estimate_expected_utility(self, u, true).unwrap_or((f64::NAN, f64::NAN));
        BundleSummary {
            n_paths: self.terminal_x.len(),
            mean_utility: m,
            std_error: se,
            mean_terminal_wealth: pairwise_sum(&self.terminal_x) / self.terminal_x.len() as f64,
            min_wealth: self.min_wealth.iter().copied().fold(f64::INFINITY, f64::min),
            violations: self.violations,
        }
    }

    pub fn summary_csv(&self, u: &UtilitySpec) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.serialize(self.summary(u)).map_err(|e| Error::Io(e.to_string()))?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    /// Terminal wealth as little-endian `f64` after a 16-byte header of an
    /// 8-byte magic and a little-endian `u64` count.
    pub fn write_terminal_dump(&self, mut w: impl Write) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&(self.terminal_x.len() as u64).to_le_bytes())?;
        for x in &self.terminal_x {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
}

pub const DUMP_MAGIC: &[u8; 8] = b"JFWEALTH";

pub fn read_terminal_dump(mut r: impl Read) -> Result<Vec<f64>> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[..8] != DUMP_MAGIC {
        return Err(Error::Io("bad dump header".into()));
    }
    let mut count = [0u8; 8];
    count.copy_from_slice(&head[8..]);
    let n = u64::from_le_bytes(count) as usize;
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap_or([0; 8])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::tests::{gamma_levy, ig_levy};
    use crate::levy::Amplitude;
    use crate::market::ScalarField;

    fn flat_market(lam: f64, sigma: f64, a: f64, b: f64) -> MarketSpec {
        MarketSpec::new(
            ScalarField::constant(lam),
            ScalarField::constant(sigma),
            ScalarField::constant(a),
            ScalarField::constant(b),
            0.3,
        )
        .unwrap()
    }

    fn cfg(n_paths: usize, n_steps: usize, seed: u64) -> SimConfig {
        SimConfig {
            n_paths,
            n_steps,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_policy_keeps_wealth() {
        let mk = flat_market(0.4, 0.2, 0.3, 0.1);
        let b = simulate(&mk, &ig_levy(1.0), &FnPolicy(|_, _, _| 0.0), 0.0, 1.0, 0.0, 1.0, &cfg(200, 20, 3)).unwrap();
        assert!(b.terminal_x.iter().all(|&x| x == 1.0));
        let (m, se) = estimate_expected_utility(&b, &UtilitySpec::Logarithmic, false).unwrap();
        assert_eq!((m, se), (0.0, 0.0));
    }

    #[test]
    fn merton_log_mean() {
        let (lam, sig) = (0.4, 0.25);
        let mk = flat_market(lam, sig, 0.0, 0.0);
        let lv = LevySpec::no_jumps(1.0).unwrap();
        let pol = FnPolicy(move |_, x, _| lam * x / sig);
        let b = simulate(&mk, &lv, &pol, 0.0, 2.0, 0.0, 1.0, &cfg(100_000, 50, 11)).unwrap();
        let (m, se) = estimate_expected_utility(&b, &UtilitySpec::Logarithmic, false).unwrap();
        let want = 2.0f64.ln() + lam * lam / 2.0;
        // Euler bias on ln X is O(dt) and far below the error bar here.
        assert!((m - want).abs() < 3.0 * se, "{m} {want} {se}");
    }

    #[test]
    fn compensated_factor_jumps_are_mean_zero() {
        let mut c = gamma_levy(1.0).config().clone();
        c.gamma2 = Amplitude::Proportional { scale: 0.5 };
        let lv = LevySpec::new(c, 1.0).unwrap();
        let mk = flat_market(0.3, 0.2, 0.2, 0.0);
        let mut sc = cfg(100_000, 20, 5);
        sc.antithetic = false;
        let b = simulate(&mk, &lv, &FnPolicy(|_, _, _| 0.0), 0.0, 1.0, 0.7, 1.0, &sc).unwrap();
        let n = b.terminal_y.len() as f64;
        let d: Vec<f64> = b.terminal_y.iter().map(|y| y - 0.7).collect();
        let (m, se) = mean_se(&d).unwrap();
        assert!(m.abs() < 3.0 * se, "{m} {se} {n}");
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let mk = flat_market(0.43, 0.19, 0.3, 0.0);
        let lv = ig_levy(2.0);
        let pol = FnPolicy(|_, x, _| -0.9 * x);
        let a = simulate(&mk, &lv, &pol, 1.5, 1.0, 1.0, 2.0, &cfg(2000, 10, 9)).unwrap();
        let b = simulate(&mk, &lv, &pol, 1.5, 1.0, 1.0, 2.0, &cfg(2000, 10, 9)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&mk, &lv, &pol, 1.5, 1.0, 1.0, 2.0, &cfg(4000, 10, 9)).unwrap();
        assert_eq!(a.terminal_x[..], c.terminal_x[..2000]);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let d = pool.install(|| simulate(&mk, &lv, &pol, 1.5, 1.0, 1.0, 2.0, &cfg(2000, 10, 9)).unwrap());
        let u = UtilitySpec::power(1.0, 3.0).unwrap();
        assert_eq!(
            estimate_expected_utility(&a, &u, false).unwrap(),
            estimate_expected_utility(&d, &u, false).unwrap()
        );
    }

    #[test]
    fn antithetic_reduces_variance_for_log() {
        let mk = flat_market(0.4, 0.25, 0.0, 0.0);
        let lv = gamma_levy(1.0);
        let pol = FnPolicy(|_, x, _| 0.8 * x);
        let mut plain = cfg(40_000, 20, 2);
        plain.antithetic = false;
        let a = simulate(&mk, &lv, &pol, 0.0, 1.0, 0.0, 1.0, &plain).unwrap();
        let b = simulate(&mk, &lv, &pol, 0.0, 1.0, 0.0, 1.0, &cfg(40_000, 20, 2)).unwrap();
        let se_a = estimate_expected_utility(&a, &UtilitySpec::Logarithmic, false).unwrap().1;
        let se_b = estimate_expected_utility(&b, &UtilitySpec::Logarithmic, false).unwrap().1;
        assert!(se_b <= se_a, "{se_b} {se_a}");
    }

    #[test]
    fn violations_are_flagged_not_clamped() {
        let mk = flat_market(0.4, 0.25, 0.0, 0.0);
        let lv = LevySpec::no_jumps(1.0).unwrap();
        // A fixed short position drives some paths through zero.
        let pol = FnPolicy(|_, _, _| -4.0);
        let mut c = cfg(2000, 50, 4);
        c.antithetic = false;
        let b = simulate(&mk, &lv, &pol, 0.0, 1.0, 0.0, 1.0, &c).unwrap();
        assert!(b.violations < 2000);
        assert!(b.violations > 0);
        assert!(b.min_wealth.iter().any(|&m| m <= 0.0));
        let u = UtilitySpec::Logarithmic;
        assert!(matches!(estimate_expected_utility(&b, &u, false), Err(Error::Admissibility { .. })));
        assert!(estimate_expected_utility(&b, &u, true).is_ok());
    }

    #[test]
    fn admissibility_controls() {
        let (lam, sig) = (0.4, 0.25);
        let mk = flat_market(lam, sig, 0.0, 0.0);
        let lv = LevySpec::no_jumps(1.0).unwrap();
        let mut c = cfg(2000, 40, 8);
        c.admissibility_r = vec![1.0];
        let zero = simulate(&mk, &lv, &FnPolicy(|_, _, _| 0.0), 0.0, 1.0, 0.0, 1.0, &c).unwrap();
        let rep = admissibility_report(&zero, 1.0).unwrap();
        assert_eq!((rep.diffusion.0, rep.log_jump.0), (0.0, 0.0));
        let merton = FnPolicy(move |_, x, _| lam * x / sig);
        let rep = admissibility_study(&mk, &lv, &merton, 0.0, 1.0, 0.0, 1.0, &c, 1.0).unwrap();
        assert!((rep.diffusion.0 - lam * lam).abs() < 1e-12, "{rep:?}");
        assert_eq!(rep.stable, Some(true));
        let explosive = FnPolicy(|_, x, _| 4.0 * x * x);
        let rep = admissibility_study(&mk, &lv, &explosive, 0.0, 1.0, 0.0, 1.0, &c, 1.0).unwrap();
        assert_eq!(rep.stable, Some(false), "{rep:?}");
    }

    #[test]
    fn dump_round_trip() {
        let mk = flat_market(0.4, 0.25, 0.0, 0.0);
        let b = simulate(&mk, &ig_levy(1.0), &FnPolicy(|_, x, _| -0.5 * x), 0.5, 1.0, 0.0, 1.0, &cfg(64, 5, 1)).unwrap();
        let mut buf = vec![];
        b.write_terminal_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * 64);
        assert_eq!(read_terminal_dump(&buf[..]).unwrap(), b.terminal_x);
        assert!(read_terminal_dump(&buf[1..]).is_err());
        let csv = b.summary_csv(&UtilitySpec::Logarithmic).unwrap();
        assert!(csv.starts_with("n_paths,mean_utility,std_error"));
    }

    #[test]
    fn sweep_input_checks_and_single_point() {
        let v = ValueExpansion::new(
            UtilitySpec::Logarithmic,
            flat_market(0.4, 0.25, 0.0, 0.0),
            LevySpec::no_jumps(1.0).unwrap(),
        )
        .unwrap();
        let pol = FnPolicy(|_, x, _| 0.4 * x / 0.25);
        let c = cfg(2000, 10, 1);
        assert!(error_order_sweep(&v, &pol, ExpansionMode::FullIntegral, &[], 1.0, 0.0, &c).is_err());
        assert!(error_order_sweep(&v, &pol, ExpansionMode::FullIntegral, &[0.1, 0.2], 1.0, 0.0, &c).is_err());
        let r = error_order_sweep(&v, &pol, ExpansionMode::FullIntegral, &[0.3], 1.0, 0.0, &c).unwrap();
        assert!(r.slope.is_none());
        assert!(r.points[0].gap < 3.0 * r.points[0].std_error + 1e-12);
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let xs = [0.4, 0.2, 0.1, 0.05];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        assert!((weighted_loglog_slope(&xs, &ys, &[1.0, 2.0, 3.0, 4.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!(weighted_loglog_slope(&xs[..1], &ys[..1], &[1.0]).is_none());
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        assert!((pairwise_sum(&v) - v.iter().sum::<f64>()).abs() < 1e-12);
    }
}
