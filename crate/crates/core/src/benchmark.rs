//! Closed-form comparison value function for the `-x^-2 / 2` utility with
//! Riccati-type factor coefficients and a first-order jump correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utility::UtilitySpec;

/// Parameters of the comparison model. The six model parameters may be
/// omitted when every queried time has an entry in `exponential_factor`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    /// Risk-aversion parameter of the comparison family.
    pub gamma: Option<f64>,
    pub rho: Option<f64>,
    pub mu: Option<f64>,
    /// Volatility coefficient of the factor in the root equation.
    pub beta_vol: Option<f64>,
    /// Mean-reversion rate of the factor.
    pub alpha_mr: Option<f64>,
    pub m: Option<f64>,
    /// `(t, factor)` pairs overriding the exponential factor at given times.
    #[serde(default)]
    pub exponential_factor: Vec<[f64; 2]>,
    /// First jump moment; defaults to the active Lévy configuration's.
    pub jump_moment: Option<f64>,
}

/// Fully specified model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchmarkParams {
    pub gamma: f64,
    pub rho: f64,
    pub mu: f64,
    pub beta_vol: f64,
    pub alpha_mr: f64,
    pub m: f64,
}

impl BenchmarkParams {
    /// Coefficients `[quadratic, linear, constant]` of the root equation.
    pub fn poly(&self) -> [f64; 3] {
        let BenchmarkParams {
            gamma: g,
            rho,
            mu,
            beta_vol: b,
            ..
        } = *self;
        [
            0.5 * b * b,
            ((1.0 - g) * b * mu * rho - g) / g,
            (g + (1.0 - g) * rho * rho) * (1.0 - g) * mu * mu / (2.0 * g * g),
        ]
    }

    /// `(a_minus, a_plus)` with `a_minus <= 0 < a_plus`.
    pub fn roots(&self) -> Result<(f64, f64)> {
        let [a, b, c] = self.poly();
        if !(a > 0.0) {
            return Err(Error::spec("beta_vol must be nonzero"));
        }
        let disc = b * b - 4.0 * a * c;
        if !(disc >= 0.0) {
            return Err(Error::Discriminant { discriminant: disc });
        }
        // Cancellation-free pair.
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        if !(lo <= 0.0 && hi > 0.0) {
            return Err(Error::RootSign {
                a_minus: lo,
                a_plus: hi,
            });
        }
        Ok((lo, hi))
    }

    /// `gamma / (gamma + (1 - gamma) rho^2)`.
    pub fn exponent_scale(&self) -> f64 {
        self.gamma / (self.gamma + (1.0 - self.gamma) * self.rho * self.rho)
    }

    /// `(A, B)` at time-to-horizon `delta`.
    pub fn coefficients(&self, delta: f64) -> Result<(f64, f64)> {
        let (am, ap) = self.roots()?;
        let q = am / ap;
        let e = (-self.alpha_mr * delta).exp();
        let denom = 1.0 - q * e;
        let a = (1.0 - e) * am / denom;
        let arg = denom / (1.0 - q);
        if !(arg > 0.0) {
            return Err(Error::domain(format!("log argument {arg} is not positive")));
        }
        let b = self.m * (delta * am - 2.0 / (self.beta_vol * self.beta_vol) * arg.ln());
        Ok((a, b))
    }
}

impl BenchmarkSpec {
    pub fn from_params(p: BenchmarkParams) -> Self {
        BenchmarkSpec {
            gamma: Some(p.gamma),
            rho: Some(p.rho),
            mu: Some(p.mu),
            beta_vol: Some(p.beta_vol),
            alpha_mr: Some(p.alpha_mr),
            m: Some(p.m),
            ..Default::default()
        }
    }

    /// Spec that only carries exponential-factor overrides.
    pub fn from_factors(factors: &[(f64, f64)]) -> Self {
        BenchmarkSpec {
            exponential_factor: factors.iter().map(|&(t, f)| [t, f]).collect(),
            ..Default::default()
        }
    }

    /// The model parameters, or a validation error naming the missing keys.
    pub fn params(&self) -> Result<BenchmarkParams> {
        let fields = [
            ("gamma", self.gamma),
            ("rho", self.rho),
            ("mu", self.mu),
            ("beta_vol", self.beta_vol),
            ("alpha_mr", self.alpha_mr),
            ("m", self.m),
        ];
        let missing: Vec<&str> = fields.iter().filter(|f| f.1.is_none()).map(|f| f.0).collect();
        if !missing.is_empty() {
            return Err(Error::validation(format!(
                "benchmark parameters missing: {}",
                missing.join(", ")
            )));
        }
        let p = BenchmarkParams {
            gamma: self.gamma.unwrap_or_default(),
            rho: self.rho.unwrap_or_default(),
            mu: self.mu.unwrap_or_default(),
            beta_vol: self.beta_vol.unwrap_or_default(),
            alpha_mr: self.alpha_mr.unwrap_or_default(),
            m: self.m.unwrap_or_default(),
        };
        if !(p.rho.abs() < 1.0) || !(p.beta_vol > 0.0) || !(p.alpha_mr > 0.0) || p.gamma == 0.0 {
            return Err(Error::spec(format!("invalid benchmark parameters {p:?}")));
        }
        Ok(p)
    }

    fn override_at(&self, t: f64) -> Option<f64> {
        self.exponential_factor
            .iter()
            .find(|p| (p[0] - t).abs() <= 1e-12 * (1.0 + t.abs()))
            .map(|p| p[1])
    }

    /// Exponential factor at time `t` and factor value `y`.
    pub fn exponential_factor(&self, t: f64, horizon: f64, y: f64) -> Result<f64> {
        if let Some(f) = self.override_at(t) {
            return Ok(f);
        }
        if t == horizon {
            return Ok(1.0);
        }
        let p = self.params()?;
        let (a, b) = p.coefficients(horizon - t)?;
        Ok((p.exponent_scale() * (y * a + b)).exp())
    }
}

/// Comparison value function bound to a horizon and jump moment.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub horizon: f64,
    pub jump_moment: f64,
}

impl Benchmark {
    /// `default_moment` is used when the spec does not set `jump_moment`.
    pub fn new(spec: BenchmarkSpec, horizon: f64, default_moment: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::spec("horizon must be positive"));
        }
        if spec.gamma.is_some() || spec.exponential_factor.is_empty() {
            spec.params()?.roots()?;
        }
        Ok(Benchmark {
            jump_moment: spec.jump_moment.unwrap_or(default_moment),
            spec,
            horizon,
        })
    }

    /// Value at `(t, x, y)`; requires the `-x^-2 / 2` utility.
    pub fn value(&self, u: &UtilitySpec, t: f64, x: f64, y: f64) -> Result<f64> {
        match u.single_power() {
            Some((c, a)) if (c - 1.0).abs() < 1e-12 && (a - 3.0).abs() < 1e-12 => {}
            _ => return Err(Error::validation("benchmark needs the -x^-2/2 terminal utility")),
        }
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        if !(x > 0.0) {
            return Err(Error::domain(format!("wealth {x} is not positive")));
        }
        let factor = self.spec.exponential_factor(t, self.horizon, y)?;
        let r2 = u.ratio_terms(x)?.r2;
        let delta = self.horizon - t;
        Ok(-0.5 / (x * x) * factor + 0.5 * delta * self.jump_moment * self.jump_moment * r2)
    }
}
