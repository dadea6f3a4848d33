//! Lévy measures, jump amplitudes and quadrature against the measure.
//!
//! Integrals over `(0, inf)` are split at `z_split`. The lower part is mapped
//! to `u = ln z` and integrated with composite Gauss-Legendre panels starting
//! at `eps0`; the exponential tail uses Gauss-Laguerre at the measure's decay
//! rate. Both measures are infinite-activity, so integrands must vanish near
//! zero fast enough for the lower cut to be harmless.

use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::{FiniteAboveNegOneF64, GaussLaguerre, GaussLegendre};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
const MAX_LEVEL: u32 = 6;
const LOG_PANEL_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Measure {
    /// `kappa z^-1 e^(-theta z) dz`.
    Gamma { kappa: f64, theta: f64 },
    /// `n T (2 pi z^3)^(-1/2) e^(-m^2 z / 2) dz`.
    InverseGaussian { m: f64, n: f64 },
    /// Piecewise-linear density through `points` (pairs `[z, density]`),
    /// zero outside `[points[0].z, points[last].z]`.
    TruncatedCustom {
        points: Vec<[f64; 2]>,
        /// Set when the support reaches zero and every integrand used with
        /// this measure is known to vanish there.
        #[serde(default)]
        vanishing_integrand: bool,
    },
}

/// A jump amplitude as a function of the mark `z`, evaluated at the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Amplitude {
    Zero,
    /// `scale * z`.
    Proportional { scale: f64 },
    /// Amplitude that turns the Gamma measure into the Gamma(T kappa, theta)
    /// probability density, so that its first moment is one.
    GammaDensityMatched,
    /// Amplitude that turns the inverse Gaussian measure into the inverse
    /// Gaussian probability density, so that its first moment is one.
    IgDensityMatched,
    /// Piecewise-linear through `points`, linear to zero below the first
    /// point and flat beyond the last one.
    Table { points: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadScheme {
    GaussLaguerreMapped,
    AdaptiveTruncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub scheme: QuadScheme,
    /// Gauss-Legendre points per log panel; the tail rule uses four times as many.
    pub nodes: usize,
    pub eps0: f64,
    pub zmax: f64,
    pub rel_tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            scheme: QuadScheme::GaussLaguerreMapped,
            nodes: 16,
            eps0: 1e-12,
            zmax: 200.0,
            rel_tol: 1e-8,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.nodes > 64 {
            return Err(Error::spec("quadrature nodes must be in 1..=64"));
        }
        if !(self.eps0 > 0.0 && self.eps0 < self.zmax && self.zmax.is_finite()) {
            return Err(Error::spec("quadrature cuts must satisfy 0 < eps0 < zmax < inf"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::spec("rel_tol must be positive"));
        }
        Ok(())
    }
}

/// Serializable description of the jump structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyConfig {
    pub measure: Measure,
    /// Wealth-equation amplitude.
    pub gamma1: Amplitude,
    /// Factor-equation amplitude.
    pub gamma2: Amplitude,
    /// First time-expansion coefficient of the wealth amplitude.
    #[serde(default = "zero_amplitude")]
    pub gamma1_1: Amplitude,
    /// Price-equation amplitude. Accepted but not used by any computation.
    #[serde(default)]
    pub gamma0: Option<Amplitude>,
    #[serde(default)]
    pub quad: QuadratureConfig,
}

fn zero_amplitude() -> Amplitude {
    Amplitude::Zero
}

/// Fixed quadrature rule against the measure: `sum w_i f(z_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyRule {
    pub nodes: Vec<f64>,
    /// Weights with the measure density folded in.
    pub weights: Vec<f64>,
}

impl LevyRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum w_i f(z_i)`, erroring on a non-finite integrand value.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> Result<f64> {
        let mut s = 0.0;
        for (&z, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(z);
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand { zeta: z });
            }
            s += w * v;
        }
        Ok(s)
    }

    /// Like [`integrate`](Self::integrate) for a fallible integrand.
    pub fn try_integrate(&self, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
        let mut s = 0.0;
        for (&z, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(z)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand { zeta: z });
            }
            s += w * v;
        }
        Ok(s)
    }

    /// Integral and the integral of the absolute value.
    fn integrate_with_scale(&self, f: &impl Fn(f64) -> f64) -> Result<(f64, f64)> {
        let (mut s, mut a) = (0.0, 0.0);
        for (&z, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(z);
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand { zeta: z });
            }
            s += w * v;
            a += (w * v).abs();
        }
        Ok((s, a))
    }
}

/// A validated jump structure at a fixed horizon.
#[derive(Debug, Clone)]
pub struct LevySpec {
    config: LevyConfig,
    horizon: f64,
    gamma_norm: f64,
    rule: Arc<LevyRule>,
    rule_level: u32,
}

impl PartialEq for LevySpec {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.horizon == other.horizon
    }
}

impl LevySpec {
    /// Validates the configuration and builds the fixed rule used by the
    /// expansion: the coarsest refinement level at which the integrals of
    /// `gamma1`, `gamma1^2` and `gamma2^2` have converged.
    pub fn new(config: LevyConfig, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::spec("horizon must be positive"));
        }
        config.quad.validate()?;
        validate_measure(&config.measure)?;
        let gamma_norm = match config.measure {
            Measure::Gamma { kappa, theta } => {
                let s = horizon * kappa;
                // theta^s / (kappa Gamma(s)) computed in logs.
                (s * theta.ln() - kappa.ln() - libm::lgamma(s)).exp()
            }
            _ => 0.0,
        };
        let mut spec = LevySpec {
            config,
            horizon,
            gamma_norm,
            rule: Arc::new(LevyRule {
                nodes: vec![],
                weights: vec![],
            }),
            rule_level: 0,
        };
        for (name, a) in [
            ("gamma1", &spec.config.gamma1),
            ("gamma2", &spec.config.gamma2),
            ("gamma1_1", &spec.config.gamma1_1),
        ] {
            spec.validate_amplitude(name, a)?;
        }
        if let Amplitude::Table { points } = &spec.config.gamma2 {
            if points.iter().any(|p| p[1] <= 0.0) {
                return Err(Error::spec("gamma2 must be positive on the support"));
            }
        }
        if let Amplitude::Proportional { scale } = spec.config.gamma2 {
            if scale <= 0.0 {
                return Err(Error::spec("gamma2 must be positive on the support"));
            }
        }
        let (rule, level) = spec.select_rule()?;
        spec.rule = Arc::new(rule);
        spec.rule_level = level;
        Ok(spec)
    }

    pub fn no_jumps(horizon: f64) -> Result<Self> {
        LevySpec::new(
            LevyConfig {
                measure: Measure::Gamma {
                    kappa: 1.0,
                    theta: 1.0,
                },
                gamma1: Amplitude::Zero,
                gamma2: Amplitude::Zero,
                gamma1_1: Amplitude::Zero,
                gamma0: None,
                quad: QuadratureConfig::default(),
            },
            horizon,
        )
    }

    pub fn config(&self) -> &LevyConfig {
        &self.config
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn measure(&self) -> &Measure {
        &self.config.measure
    }

    /// The cached rule used by the expansion and residual computations.
    pub fn rule(&self) -> &LevyRule {
        &self.rule
    }

    pub fn rule_level(&self) -> u32 {
        self.rule_level
    }

    /// True when the wealth amplitude vanishes identically.
    pub fn wealth_jumps_absent(&self) -> bool {
        self.config.gamma1 == Amplitude::Zero
    }

    pub fn factor_jumps_absent(&self) -> bool {
        self.config.gamma2 == Amplitude::Zero
    }

    pub fn gamma1(&self, z: f64) -> f64 {
        self.amplitude(&self.config.gamma1, z)
    }

    pub fn gamma2(&self, z: f64) -> f64 {
        self.amplitude(&self.config.gamma2, z)
    }

    pub fn gamma1_1(&self, z: f64) -> f64 {
        self.amplitude(&self.config.gamma1_1, z)
    }

    /// Wealth amplitude at time `t` including the first time correction.
    pub fn gamma1_at(&self, t: f64, z: f64) -> f64 {
        let g = self.gamma1(z);
        if self.config.gamma1_1 == Amplitude::Zero {
            g
        } else {
            g + (self.horizon - t) * self.gamma1_1(z)
        }
    }

    pub fn amplitude(&self, a: &Amplitude, z: f64) -> f64 {
        match a {
            Amplitude::Zero => 0.0,
            Amplitude::Proportional { scale } => scale * z,
            Amplitude::GammaDensityMatched => match self.config.measure {
                Measure::Gamma { kappa, .. } => self.gamma_norm * z.powf(self.horizon * kappa),
                _ => f64::NAN,
            },
            Amplitude::IgDensityMatched => match self.config.measure {
                Measure::InverseGaussian { m, n } => {
                    let nt = n * self.horizon;
                    (m * nt - nt * nt / (2.0 * z)).exp()
                }
                _ => f64::NAN,
            },
            Amplitude::Table { points } => table_amplitude(points, z),
        }
    }

    /// Density of the measure at `z` (with respect to `dz`).
    pub fn density(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        match &self.config.measure {
            Measure::Gamma { kappa, theta } => kappa / z * (-theta * z).exp(),
            Measure::InverseGaussian { m, n } => {
                n * self.horizon / (SQRT_2PI * z * z.sqrt()) * (-m * m * z / 2.0).exp()
            }
            Measure::TruncatedCustom { points, .. } => piecewise_linear(points, z).unwrap_or(0.0),
        }
    }

    /// Upper edge of the support (infinite for the named measures).
    pub fn support_upper(&self) -> f64 {
        match &self.config.measure {
            Measure::TruncatedCustom { points, .. } => points[points.len() - 1][0],
            _ => f64::INFINITY,
        }
    }

    /// Point beyond which the remaining measure mass is below `e^-40` of the
    /// tail scale; the support edge for truncated measures.
    pub fn effective_upper(&self) -> f64 {
        match self.tail_rate() {
            Some(r) => 40.0 / r,
            None => self.support_upper(),
        }
    }

    /// Exponential decay rate of the density tail.
    fn tail_rate(&self) -> Option<f64> {
        match self.config.measure {
            Measure::Gamma { theta, .. } => Some(theta),
            Measure::InverseGaussian { m, .. } => Some(m * m / 2.0),
            Measure::TruncatedCustom { .. } => None,
        }
    }

    /// `I = int gamma1 dnu`. Closed form for the density-matched amplitudes.
    pub fn first_moment(&self) -> Result<f64> {
        match (&self.config.measure, &self.config.gamma1) {
            (_, Amplitude::Zero) => Ok(0.0),
            (Measure::Gamma { .. }, Amplitude::GammaDensityMatched)
            | (Measure::InverseGaussian { .. }, Amplitude::IgDensityMatched) => Ok(1.0),
            _ => self.levy_integral(|z| self.gamma1(z)),
        }
    }

    /// `int gamma1^2 dnu`, closed form where available.
    pub fn second_moment(&self) -> Result<f64> {
        match (&self.config.measure, &self.config.gamma1) {
            (_, Amplitude::Zero) => Ok(0.0),
            (Measure::Gamma { kappa, .. }, Amplitude::GammaDensityMatched) => {
                let s = self.horizon * kappa;
                Ok((libm::lgamma(2.0 * s) - 2.0 * libm::lgamma(s)).exp() / kappa)
            }
            (Measure::InverseGaussian { m, n }, Amplitude::IgDensityMatched) => {
                let mnt = m * n * self.horizon;
                Ok(((2.0 - std::f64::consts::SQRT_2) * mnt).exp() / std::f64::consts::SQRT_2)
            }
            _ => self.levy_integral(|z| self.gamma1(z).powi(2)),
        }
    }

    /// Upper bound on the measure-weighted mass of `|gamma1|` discarded
    /// below the lower cut.
    pub fn discarded_mass_bound(&self) -> f64 {
        let e = self.config.quad.eps0;
        match (&self.config.measure, &self.config.gamma1) {
            (_, Amplitude::Zero) => 0.0,
            (Measure::Gamma { kappa, .. }, Amplitude::GammaDensityMatched) => {
                let s = self.horizon * kappa;
                self.gamma_norm * kappa * e.powf(s) / s
            }
            (Measure::InverseGaussian { m, n }, Amplitude::IgDensityMatched) => {
                // gamma1 * density <= e^{mnT} nT (2pi)^{-1/2} z^{-3/2} e^{-(nT)^2/(2z)}, which
                // is increasing on (0, eps0] for small eps0; bound by eps0 times its value there.
                let nt = n * self.horizon;
                e * (m * nt).exp() * nt / (SQRT_2PI * e.powf(1.5)) * (-nt * nt / (2.0 * e)).exp()
            }
            _ => {
                // gamma1 is at most linear near zero for the remaining amplitudes.
                let slope = match &self.config.gamma1 {
                    Amplitude::Proportional { scale } => scale.abs(),
                    Amplitude::Table { points } => (points[0][1] / points[0][0]).abs(),
                    _ => 0.0,
                };
                let dens_max = match &self.config.measure {
                    Measure::Gamma { kappa, .. } => *kappa * e,
                    Measure::InverseGaussian { n, .. } => {
                        2.0 * n * self.horizon / SQRT_2PI * e.sqrt()
                    }
                    Measure::TruncatedCustom { .. } => 0.0,
                };
                slope * dens_max
            }
        }
    }

    /// `int f dnu` to the configured relative tolerance. Refines until two
    /// consecutive estimates agree relative to the integral of `|f|`.
    pub fn levy_integral(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        match self.config.quad.scheme {
            QuadScheme::GaussLaguerreMapped => {
                let tol = self.config.quad.rel_tol;
                let (mut prev, _) = self.build_rule(0)?.integrate_with_scale(&f)?;
                let mut cur = prev;
                for level in 1..=MAX_LEVEL {
                    let (next, scale) = self.build_rule(level)?.integrate_with_scale(&f)?;
                    (prev, cur) = (cur, next);
                    if (cur - prev).abs() <= tol * scale {
                        return Ok(cur);
                    }
                }
                Err(Error::Quadrature {
                    last: cur,
                    previous: prev,
                })
            }
            QuadScheme::AdaptiveTruncated => {
                let hi = self.config.quad.zmax.min(self.support_upper());
                let lo = self.lower_edge();
                adaptive_log(|z| f(z) * self.density(z), lo, hi, self.config.quad.rel_tol)
            }
        }
    }

    /// `int_lo^hi f dnu` on a composite log-mapped rule. `hi` may be infinite.
    pub fn integrate_range(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
        let rule = self.range_rule(lo, hi, 1)?;
        rule.integrate(f)
    }

    /// Rule over `[lo, hi]` at refinement `level`.
    pub fn range_rule(&self, lo: f64, hi: f64, level: u32) -> Result<LevyRule> {
        let lo = lo.max(self.lower_edge());
        let hi = hi.min(self.support_upper());
        if !(lo < hi) {
            return Ok(LevyRule {
                nodes: vec![],
                weights: vec![],
            });
        }
        let (nodes_gl, n_lag) = self.level_sizes(level);
        let mut rule = LevyRule {
            nodes: vec![],
            weights: vec![],
        };
        let split = match self.tail_rate() {
            Some(rate) if hi.is_infinite() => (4.0 / rate).max(lo * 2.0),
            _ => hi,
        };
        self.push_log_panels(&mut rule, lo, split.min(hi), level, nodes_gl);
        if hi.is_infinite() {
            let rate = self.tail_rate().expect("infinite support has a tail rate");
            self.push_laguerre_tail(&mut rule, split, rate, n_lag);
        } else if split < hi {
            self.push_log_panels(&mut rule, split, hi, level, nodes_gl);
        }
        Ok(rule)
    }

    fn lower_edge(&self) -> f64 {
        match &self.config.measure {
            Measure::TruncatedCustom { points, .. } => points[0][0].max(self.config.quad.eps0),
            _ => self.config.quad.eps0,
        }
    }

    fn level_sizes(&self, level: u32) -> (usize, usize) {
        let n = self.config.quad.nodes;
        (n, (4 * n + 16 * level as usize).min(160))
    }

    /// Full-support rule at a refinement level.
    pub fn build_rule(&self, level: u32) -> Result<LevyRule> {
        let hi = match self.config.quad.scheme {
            QuadScheme::GaussLaguerreMapped => f64::INFINITY,
            QuadScheme::AdaptiveTruncated => self.config.quad.zmax,
        };
        self.range_rule(self.lower_edge(), hi, level)
    }

    fn push_log_panels(&self, rule: &mut LevyRule, lo: f64, hi: f64, level: u32, n: usize) {
        if !(lo < hi) {
            return;
        }
        let (u0, u1) = (lo.ln(), hi.ln());
        let panels = (((u1 - u0) / LOG_PANEL_WIDTH).ceil().max(1.0) as usize) << level;
        let h = (u1 - u0) / panels as f64;
        let gl = GaussLegendre::new(NonZeroUsize::new(n).expect("nodes > 0"));
        for p in 0..panels {
            let a = u0 + p as f64 * h;
            for (&x, &w) in gl.nodes().zip(gl.weights()) {
                let u = a + 0.5 * h * (x + 1.0);
                let z = u.exp();
                let wt = 0.5 * h * w * z * self.density(z);
                if wt != 0.0 {
                    rule.nodes.push(z);
                    rule.weights.push(wt);
                }
            }
        }
    }

    fn push_laguerre_tail(&self, rule: &mut LevyRule, start: f64, rate: f64, n: usize) {
        let alpha = FiniteAboveNegOneF64::new(0.0).expect("zero is above -1");
        let gl = GaussLaguerre::new(NonZeroUsize::new(n).expect("nodes > 0"), alpha);
        for (&s, &w) in gl.nodes().zip(gl.weights()) {
            let z = start + s / rate;
            // density(z) = e^{-rate z} * rest(z); the e^{-s} is in the Laguerre weight.
            let rest = self.density(z) * (rate * z).exp();
            let wt = w / rate * (-rate * start).exp() * rest;
            if wt.is_finite() && wt != 0.0 {
                rule.nodes.push(z);
                rule.weights.push(wt);
            }
        }
    }

    fn select_rule(&self) -> Result<(LevyRule, u32)> {
        let tol = self.config.quad.rel_tol;
        let probes: [&dyn Fn(f64) -> f64; 3] = [
            &|z| self.gamma1(z),
            &|z| self.gamma1(z).powi(2),
            &|z| self.gamma2(z).powi(2),
        ];
        let mut prev = self.build_rule(0)?;
        for level in 1..=MAX_LEVEL {
            let cur = self.build_rule(level)?;
            let mut ok = true;
            for f in probes {
                let (a, _) = prev.integrate_with_scale(&f)?;
                let (b, scale) = cur.integrate_with_scale(&f)?;
                if (a - b).abs() > tol * scale {
                    ok = false;
                    if level == MAX_LEVEL {
                        return Err(Error::Quadrature {
                            last: b,
                            previous: a,
                        });
                    }
                }
            }
            if ok {
                return Ok((prev, level - 1));
            }
            prev = cur;
        }
        unreachable!()
    }

    fn validate_amplitude(&self, name: &str, a: &Amplitude) -> Result<()> {
        match (a, &self.config.measure) {
            (Amplitude::GammaDensityMatched, Measure::Gamma { .. })
            | (Amplitude::IgDensityMatched, Measure::InverseGaussian { .. })
            | (Amplitude::Zero, _) => Ok(()),
            (Amplitude::GammaDensityMatched, _) | (Amplitude::IgDensityMatched, _) => Err(
                Error::spec(format!("{name}: density-matched amplitude does not fit the measure")),
            ),
            (Amplitude::Proportional { scale }, _) => {
                if scale.is_finite() {
                    Ok(())
                } else {
                    Err(Error::spec(format!("{name}: scale must be finite")))
                }
            }
            (Amplitude::Table { points }, _) => validate_points(points, name),
        }
    }
}

fn validate_measure(m: &Measure) -> Result<()> {
    match m {
        Measure::Gamma { kappa, theta } => {
            if !(*kappa > 0.0 && *theta > 0.0) {
                return Err(Error::spec("gamma measure needs kappa > 0 and theta > 0"));
            }
        }
        Measure::InverseGaussian { m, n } => {
            if !(*m > 0.0 && *n > 0.0) {
                return Err(Error::spec("inverse Gaussian measure needs m > 0 and n > 0"));
            }
        }
        Measure::TruncatedCustom {
            points,
            vanishing_integrand,
        } => {
            validate_points(points, "custom measure")?;
            if points.iter().any(|p| p[1] < 0.0) {
                return Err(Error::spec("custom density must be non-negative"));
            }
            if points[0][0] <= 0.0 && !vanishing_integrand {
                return Err(Error::spec(
                    "custom measure reaching zero must declare vanishing integrands",
                ));
            }
        }
    }
    Ok(())
}

fn validate_points(points: &[[f64; 2]], name: &str) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::spec(format!("{name}: need at least two points")));
    }
    if points[0][0] < 0.0 {
        return Err(Error::spec(format!("{name}: support must lie in [0, inf)")));
    }
    for w in points.windows(2) {
        if !(w[1][0] > w[0][0]) {
            return Err(Error::spec(format!("{name}: abscissae must increase")));
        }
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::spec(format!("{name}: values must be finite")));
    }
    Ok(())
}

fn piecewise_linear(points: &[[f64; 2]], z: f64) -> Option<f64> {
    let first = points[0];
    let last = points[points.len() - 1];
    if z < first[0] || z > last[0] {
        return None;
    }
    let i = points.partition_point(|p| p[0] <= z).clamp(1, points.len() - 1);
    let (a, b) = (points[i - 1], points[i]);
    let w = (z - a[0]) / (b[0] - a[0]);
    Some(a[1] + w * (b[1] - a[1]))
}

fn table_amplitude(points: &[[f64; 2]], z: f64) -> f64 {
    let first = points[0];
    if z < first[0] {
        return first[1] * z / first[0];
    }
    piecewise_linear(points, z).unwrap_or(points[points.len() - 1][1])
}

// Gauss-Kronrod 7/15 abscissae and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One G7K15 panel: (Kronrod estimate, error estimate, |f| estimate).
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> Result<(f64, f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteIntegrand { zeta: x.exp() })
        }
    };
    let fc = eval(c)?;
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    let mut abs = WGK[7] * fc.abs();
    for j in 0..7 {
        let d = h * XGK[j];
        let (f1, f2) = (eval(c - d)?, eval(c + d)?);
        k += WGK[j] * (f1 + f2);
        abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            g += WG[j / 2] * (f1 + f2);
        }
    }
    Ok((k * h, ((k - g) * h).abs(), abs * h))
}

/// Globally adaptive G7K15 on `[lo, hi]` in `u = ln z`, with `g` the
/// integrand against `dz`.
fn adaptive_log(g: impl Fn(f64) -> f64, lo: f64, hi: f64, rel_tol: f64) -> Result<f64> {
    if !(lo < hi) {
        return Ok(0.0);
    }
    let f = |u: f64| {
        let z = u.exp();
        g(z) * z
    };
    let (u0, u1) = (lo.ln(), hi.ln());
    let n0 = ((u1 - u0) / LOG_PANEL_WIDTH).ceil().max(1.0) as usize;
    let h = (u1 - u0) / n0 as f64;
    // (a, b, value, err, abs)
    let mut panels = Vec::with_capacity(n0);
    for i in 0..n0 {
        let (a, b) = (u0 + i as f64 * h, u0 + (i + 1) as f64 * h);
        let (v, e, s) = gk15(&f, a, b)?;
        panels.push((a, b, v, e, s));
    }
    let mut previous = f64::NAN;
    for _ in 0..4000 {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        let scale: f64 = panels.iter().map(|p| p.4).sum();
        if err <= rel_tol * scale.max(f64::MIN_POSITIVE) || err == 0.0 {
            return Ok(total);
        }
        let (imax, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (a, b, ..) = panels.swap_remove(imax);
        let m = 0.5 * (a + b);
        for (x, y) in [(a, m), (m, b)] {
            let (v, e, s) = gk15(&f, x, y)?;
            panels.push((x, y, v, e, s));
        }
        previous = total;
    }
    let last: f64 = panels.iter().map(|p| p.2).sum();
    Err(Error::Quadrature { last, previous })
}
