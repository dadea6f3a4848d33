//! First-order small-horizon expansion of the value function, its
//! second-order error envelope and the portfolios derived from it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::LevySpec;
use crate::market::{CoefficientBundle, MarketSpec};
use crate::utility::{ratios_from, RatioBundle, UtilitySpec};

/// Number of addends the second-order coefficient is split into.
pub const N_TERMS: usize = 10;

/// How the jump integral in the first-order coefficient is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpansionMode {
    /// Exact integral of `U(chi) - U(x) + L R2 gamma1`.
    #[default]
    FullIntegral,
    /// `U(chi)` replaced by its first-order Taylor polynomial, which removes
    /// the integral entirely.
    FirstOrderTaylor,
}

/// First-order coefficient and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct U1Partials {
    pub u1: f64,
    pub x: f64,
    pub xx: f64,
    pub y: f64,
    pub yy: f64,
    pub xy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSettings {
    pub x_lo: f64,
    pub x_hi: f64,
    pub points: usize,
    /// Multiplicative margin applied to the grid supremum.
    pub inflation: f64,
    /// Cap on inner evaluations of the nested jump integral.
    pub inner_budget: usize,
}

impl Default for EnvelopeSettings {
    fn default() -> Self {
        EnvelopeSettings {
            x_lo: 1e-2,
            x_hi: 1e6,
            points: 241,
            inflation: 1.1,
            inner_budget: 1_000_000,
        }
    }
}

impl EnvelopeSettings {
    pub fn grid(&self) -> Vec<f64> {
        log_grid(self.x_lo, self.x_hi, self.points)
    }
}

/// Result of the envelope computation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Envelope {
    pub u2bar: f64,
    pub grid: Vec<f64>,
    pub ys: Vec<f64>,
    /// Per-term supremum of `|u_i| / f` over the grid and the factor values.
    pub term_sup: [f64; N_TERMS],
    pub term_argmax_x: [f64; N_TERMS],
}

/// Output of the power-series convergence diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub l_gamma: f64,
    /// `|L gamma / 3|`, the limit of the term ratios.
    pub ratio_limit: f64,
    pub partial_sums: Vec<f64>,
    /// `|t_{n+1} / t_n|` for consecutive terms.
    pub term_ratios: Vec<f64>,
    /// Geometric rate of the terms after removing the `(n + 1)` factor.
    pub fitted_rate: f64,
    /// `closed_form - partial_sum`, present when the series converges.
    pub remainders: Vec<f64>,
    pub closed_form: Option<f64>,
    pub convergent: bool,
}

#[derive(Debug, Clone)]
pub struct ValueExpansion {
    utility: UtilitySpec,
    market: MarketSpec,
    levy: LevySpec,
    horizon: f64,
    first_moment: f64,
    gamma1_1_moment: f64,
    envelope: Option<Envelope>,
}

/// Everything computed in one pass over the quadrature nodes at `(x, y)`.
#[derive(Debug, Clone, Copy)]
struct Jet {
    p: U1Partials,
    /// `int [U(chi) - U(x)] dnu`.
    int_du: f64,
}

impl ValueExpansion {
    pub fn new(utility: UtilitySpec, market: MarketSpec, levy: LevySpec) -> Result<Self> {
        utility.validate()?;
        market.validate()?;
        let first_moment = levy.first_moment()?;
        let gamma1_1_moment = if levy.config().gamma1_1 == crate::levy::Amplitude::Zero {
            0.0
        } else {
            levy.levy_integral(|z| levy.gamma1_1(z))?
        };
        Ok(ValueExpansion {
            utility,
            market,
            horizon: levy.horizon(),
            levy,
            first_moment,
            gamma1_1_moment,
            envelope: None,
        })
    }

    pub fn utility(&self) -> &UtilitySpec {
        &self.utility
    }

    pub fn market(&self) -> &MarketSpec {
        &self.market
    }

    pub fn levy(&self) -> &LevySpec {
        &self.levy
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `I = int gamma1_T dnu`.
    pub fn first_moment(&self) -> f64 {
        self.first_moment
    }

    pub fn envelope(&self) -> Option<&Envelope> {
        self.envelope.as_ref()
    }

    /// `lambda(y) - I`.
    pub fn l_coef(&self, y: f64) -> Result<f64> {
        Ok(self.market.eval(y)?.lambda - self.first_moment)
    }

    fn check_x(x: f64) -> Result<()> {
        if x.is_finite() && x > 0.0 {
            Ok(())
        } else {
            Err(Error::domain(format!("wealth must be positive and finite, got {x}")))
        }
    }

    fn check_t(&self, t: f64) -> Result<f64> {
        if (0.0..=self.horizon).contains(&t) {
            Ok(self.horizon - t)
        } else {
            Err(Error::domain(format!("time {t} outside [0, {}]", self.horizon)))
        }
    }

    /// Post-jump wealth under the terminal portfolio, `x - L R1 gamma1(z)`.
    pub fn chi_hat(&self, x: f64, y: f64, zeta: f64) -> Result<f64> {
        Self::check_x(x)?;
        let r = self.utility.ratio_terms(x)?;
        Ok(x - self.l_coef(y)? * r.r1 * self.levy.gamma1(zeta))
    }

    pub fn u1(&self, x: f64, y: f64) -> Result<f64> {
        Ok(self.u1_partials(x, y)?.u1)
    }

    pub fn u1_mode(&self, x: f64, y: f64, mode: ExpansionMode) -> Result<f64> {
        Ok(self.u1_partials_mode(x, y, mode)?.u1)
    }

    /// First-order coefficient and partials with the exact jump integral.
    pub fn u1_partials(&self, x: f64, y: f64) -> Result<U1Partials> {
        self.u1_partials_mode(x, y, ExpansionMode::FullIntegral)
    }

    pub fn u1_partials_mode(&self, x: f64, y: f64, mode: ExpansionMode) -> Result<U1Partials> {
        Self::check_x(x)?;
        let c = self.market.eval(y)?;
        match mode {
            ExpansionMode::FullIntegral => Ok(self.jet(x, &c)?.p),
            ExpansionMode::FirstOrderTaylor => Ok(self.taylor_partials(x, &c)),
        }
    }

    fn taylor_partials(&self, x: f64, c: &CoefficientBundle) -> U1Partials {
        let r = self.utility.ratios_unchecked(x);
        let i = self.first_moment;
        let d = 0.5 * (i * i - c.lambda * c.lambda);
        let d_y = -c.lambda * c.lambda_d1;
        let d_yy = -(c.lambda_d1 * c.lambda_d1 + c.lambda * c.lambda_d2);
        U1Partials {
            u1: d * r.r2,
            x: d * r.r2_d1,
            xx: d * r.r2_d2,
            y: d_y * r.r2,
            yy: d_yy * r.r2,
            xy: d_y * r.r2_d1,
        }
    }

    fn jet(&self, x: f64, c: &CoefficientBundle) -> Result<Jet> {
        let d0 = self.utility.all_derivs(x);
        let r = ratios_from(&d0);
        let i = self.first_moment;
        let (lam, l1, l2) = (c.lambda, c.lambda_d1, c.lambda_d2);
        let l = lam - i;
        let d = 0.5 * (i * i - lam * lam);
        let d_y = -lam * l1;
        let d_yy = -(l1 * l1 + lam * l2);

        let mut acc = [0.0f64; 7];
        if !self.levy.wealth_jumps_absent() {
            let rule = self.levy.rule();
            for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
                let g = self.levy.gamma1(z);
                if g == 0.0 {
                    continue;
                }
                let chi = x - l * r.r1 * g;
                if !(chi > 0.0) {
                    return Err(Error::domain(format!(
                        "post-jump wealth {chi} is not positive at x = {x}, zeta = {z}"
                    )));
                }
                let dc = self.utility.all_derivs(chi);
                let s = 1.0 - l * r.r1_d1 * g;
                let terms = [
                    dc[0] - d0[0] + l * r.r2 * g,
                    dc[1] * s - d0[1] + l * r.r2_d1 * g,
                    dc[2] * s * s - dc[1] * l * r.r1_d2 * g - d0[2] + l * r.r2_d2 * g,
                    -l1 * r.r1 * g * dc[1] + l1 * r.r2 * g,
                    -l2 * r.r1 * g * dc[1] + (l1 * r.r1 * g).powi(2) * dc[2] + l2 * r.r2 * g,
                    -l1 * r.r1 * g * dc[2] * s - dc[1] * l1 * r.r1_d1 * g + l1 * r.r2_d1 * g,
                    dc[0] - d0[0],
                ];
                for (a, v) in acc.iter_mut().zip(terms) {
                    if !v.is_finite() {
                        return Err(Error::NonFiniteIntegrand { zeta: z });
                    }
                    *a += w * v;
                }
            }
        }
        Ok(Jet {
            p: U1Partials {
                u1: d * r.r2 + acc[0],
                x: d * r.r2_d1 + acc[1],
                xx: d * r.r2_d2 + acc[2],
                y: d_y * r.r2 + acc[3],
                yy: d_yy * r.r2 + acc[4],
                xy: d_y * r.r2_d1 + acc[5],
            },
            int_du: acc[6],
        })
    }

    /// The ten addends of the second-order coefficient at `(x, y)`.
    pub fn u2_terms(&self, x: f64, y: f64) -> Result<[f64; N_TERMS]> {
        self.u2_terms_budget(x, y, EnvelopeSettings::default().inner_budget)
    }

    pub fn u2_terms_budget(&self, x: f64, y: f64, budget: usize) -> Result<[f64; N_TERMS]> {
        Self::check_x(x)?;
        let c = self.market.eval(y)?;
        let jet = self.jet(x, &c)?;
        let p = jet.p;
        let d0 = self.utility.all_derivs(x);
        let r: RatioBundle = ratios_from(&d0);
        let l = c.lambda - self.first_moment;
        let k = p.xx / d0[2];

        let nested = self.nested_jump_term(x, y, &p, l, &r, budget)?;
        Ok([
            0.5 * c.b * p.y,
            0.25 * c.a * c.a * p.yy,
            0.5 * nested,
            -k * p.u1,
            k * jet.int_du,
            -0.5 * l * r.r1 * c.lambda * p.x,
            -0.5 * l * r.r1 * c.rho * c.a * p.xy,
            0.5 * l * r.r1 * p.x * self.first_moment,
            0.5 * l * r.r1 * d0[1] * self.gamma1_1_moment,
            -0.25 * l * l * k * r.r2,
        ])
    }

    /// `int [U1(chi, y + gamma2) - U1(x, y) - U1_y gamma2] dnu`.
    fn nested_jump_term(
        &self,
        x: f64,
        y: f64,
        p: &U1Partials,
        l: f64,
        r: &RatioBundle,
        budget: usize,
    ) -> Result<f64> {
        if self.levy.wealth_jumps_absent() && self.levy.factor_jumps_absent() {
            return Ok(0.0);
        }
        let rule = self.levy.rule();
        let inner = if self.levy.wealth_jumps_absent() { 0 } else { rule.len() };
        let needed = rule.len() * inner.max(1);
        if needed > budget {
            return Err(Error::Budget { needed, budget });
        }
        let vals: Vec<Result<f64>> = rule
            .nodes
            .par_iter()
            .map(|&z| {
                let g1 = self.levy.gamma1(z);
                let g2 = self.levy.gamma2(z);
                let chi = x - l * r.r1 * g1;
                if !(chi > 0.0) {
                    return Err(Error::domain(format!(
                        "post-jump wealth {chi} is not positive at x = {x}, zeta = {z}"
                    )));
                }
                let c2 = self.market.eval(y + g2)?;
                let shifted = self.jet(chi, &c2)?.p.u1;
                Ok(shifted - p.u1 - p.y * g2)
            })
            .collect();
        let mut s = 0.0;
        for (v, &w) in vals.into_iter().zip(&rule.weights) {
            let v = v?;
            if !v.is_finite() {
                return Err(Error::Envelope { term: 3, x });
            }
            s += w * v;
        }
        Ok(s)
    }

    pub fn u2(&self, x: f64, y: f64) -> Result<f64> {
        Ok(self.u2_terms(x, y)?.iter().sum())
    }

    /// `1 + l * inflation * max_i sup_x |u_i(x, y)| / f(x)` for a single factor value.
    pub fn envelope_constant(&self, y: f64, settings: &EnvelopeSettings) -> Result<f64> {
        Ok(self.envelope_over(&[y], &settings.grid(), settings)?.u2bar)
    }

    /// Computes the envelope over the given factor values and stores it.
    /// The stored constant is the maximum over those values.
    pub fn compute_envelope(&mut self, ys: &[f64], settings: &EnvelopeSettings) -> Result<&Envelope> {
        let env = self.envelope_over(ys, &settings.grid(), settings)?;
        self.envelope = Some(env);
        Ok(self.envelope.as_ref().expect("just stored"))
    }

    pub fn envelope_over(
        &self,
        ys: &[f64],
        grid: &[f64],
        settings: &EnvelopeSettings,
    ) -> Result<Envelope> {
        if grid.is_empty() || ys.is_empty() {
            return Err(Error::validation("envelope grid and factor list must be non-empty"));
        }
        let mut sup = [0.0f64; N_TERMS];
        let mut arg = [grid[0]; N_TERMS];
        for &y in ys {
            let rows: Vec<Result<[f64; N_TERMS]>> = grid
                .par_iter()
                .map(|&x| self.u2_terms_budget(x, y, settings.inner_budget))
                .collect();
            for (&x, row) in grid.iter().zip(rows) {
                let row = row?;
                let f = self.utility.f_unchecked(x);
                for (i, &u) in row.iter().enumerate() {
                    if !u.is_finite() {
                        return Err(Error::Envelope { term: i + 1, x });
                    }
                    let q = u.abs() / f;
                    if q > sup[i] {
                        sup[i] = q;
                        arg[i] = x;
                    }
                }
            }
        }
        let m = sup.iter().cloned().fold(0.0, f64::max);
        Ok(Envelope {
            u2bar: 1.0 + N_TERMS as f64 * settings.inflation * m,
            grid: grid.to_vec(),
            ys: ys.to_vec(),
            term_sup: sup,
            term_argmax_x: arg,
        })
    }

    /// `U_T(x) + (T - t) U1(x, y)`.
    pub fn value_hat(&self, t: f64, x: f64, y: f64, mode: ExpansionMode) -> Result<f64> {
        let delta = self.check_t(t)?;
        let u = self.utility.value(x)?;
        if delta == 0.0 {
            return Ok(u);
        }
        Ok(u + delta * self.u1_mode(x, y, mode)?)
    }

    /// Comparison value without jumps, `U_T - (T - t) (lambda^2 / 2) R2`.
    pub fn value_reference_no_jumps(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        let delta = self.check_t(t)?;
        let u = self.utility.value(x)?;
        let lam = self.market.eval(y)?.lambda;
        let r = self.utility.ratio_terms(x)?;
        Ok(u - delta * 0.5 * lam * lam * r.r2)
    }

    /// Expansion plus or minus `(T - t)^2 u2bar f(x)`; `sign` is `+1` for the
    /// super-solution and `-1` for the sub-solution.
    pub fn value_envelope(&self, t: f64, x: f64, y: f64, mode: ExpansionMode, sign: f64) -> Result<f64> {
        let env = self
            .envelope
            .as_ref()
            .ok_or_else(|| Error::validation("envelope has not been computed"))?;
        let delta = self.check_t(t)?;
        Ok(self.value_hat(t, x, y, mode)? + sign * delta * delta * env.u2bar * self.utility.growth_f(x)?)
    }

    /// Terminal-time portfolio `((I - lambda) / sigma) U'/U''`.
    pub fn optimal_portfolio_t(&self, x: f64, y: f64) -> Result<f64> {
        Self::check_x(x)?;
        let c = self.market.eval(y)?;
        let r = self.utility.ratio_terms(x)?;
        Ok((self.first_moment - c.lambda) / c.sigma * r.r1)
    }

    /// `int gamma1(t, z) dnu` with the first time correction.
    pub fn moment_at(&self, t: f64) -> f64 {
        self.first_moment + (self.horizon - t) * self.gamma1_1_moment
    }

    /// First-order-condition portfolio for a value surface with partials
    /// `(V_x, V_xx, V_xy)`.
    pub fn portfolio_from_value(&self, vx: f64, vxx: f64, vxy: f64, y: f64, t: f64) -> Result<f64> {
        let c = self.market.eval(y)?;
        portfolio_foc(&c, vx, vxx, vxy, self.moment_at(t))
            .ok_or(Error::NonConcave { t, x: f64::NAN, y })
    }

    /// Power-series diagnostic of the Taylor step for the `c x^-2` utility.
    pub fn taylor_remainder_diagnostic(
        &self,
        x: f64,
        y: f64,
        zeta: f64,
        n_max: usize,
    ) -> Result<DiagnosticReport> {
        Self::check_x(x)?;
        let (c, alpha) = self
            .utility
            .single_power()
            .ok_or_else(|| Error::validation("diagnostic needs a single power utility"))?;
        if (alpha - 3.0).abs() > 1e-12 {
            return Err(Error::validation("diagnostic needs the x^-2 utility (alpha = 3)"));
        }
        // U = c/(1 - alpha) x^(1 - alpha) = -c/2 x^-2
        let lg = self.l_coef(y)? * self.levy.gamma1(zeta);
        Ok(taylor_series_diagnostic(-0.5 * c, x, lg, n_max))
    }
}

/// `(-lambda V_x - rho a V_xy) / (sigma V_xx) + V_x / (sigma V_xx) * moment`,
/// or `None` if `V_xx` is not negative.
pub(crate) fn portfolio_foc(c: &CoefficientBundle, vx: f64, vxx: f64, vxy: f64, moment: f64) -> Option<f64> {
    if !(vxx < 0.0) {
        return None;
    }
    let s = c.sigma * vxx;
    Some((-c.lambda * vx - c.rho * c.a * vxy) / s + vx / s * moment)
}

/// Partial sums of `sum (n + 1) r^n c x^-2` with `r = -L gamma / 3`.
pub fn taylor_series_diagnostic(c: f64, x: f64, l_gamma: f64, n_max: usize) -> DiagnosticReport {
    let r = -l_gamma / 3.0;
    let base = c / (x * x);
    let mut partial = Vec::with_capacity(n_max + 1);
    let mut ratios = Vec::with_capacity(n_max);
    let mut s = 0.0;
    let mut prev_term: Option<f64> = None;
    let mut pow = 1.0;
    // (n, ln(|t_n| / (n + 1))) pairs for the rate fit.
    let mut fit = Vec::new();
    for n in 0..=n_max {
        let term = (n as f64 + 1.0) * pow * base;
        s += term;
        partial.push(s);
        if let Some(p) = prev_term {
            if p != 0.0 && term != 0.0 {
                ratios.push((term / p).abs());
            }
        }
        if term != 0.0 && term.is_finite() {
            fit.push((n as f64, (term.abs() / (n as f64 + 1.0)).ln()));
        }
        prev_term = Some(term);
        pow *= r;
        if pow == 0.0 || !pow.is_finite() {
            break;
        }
    }
    let fitted_rate = if fit.len() >= 2 {
        let k = fit.len() as f64;
        let mx = fit.iter().map(|p| p.0).sum::<f64>() / k;
        let my = fit.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = fit.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = fit.iter().map(|p| (p.0 - mx).powi(2)).sum();
        (sxy / sxx).exp()
    } else {
        0.0
    };
    let convergent = r.abs() < 1.0;
    let closed = convergent.then(|| base / ((1.0 - r) * (1.0 - r)));
    let remainders = match closed {
        Some(cf) => partial.iter().map(|p| cf - p).collect(),
        None => vec![],
    };
    DiagnosticReport {
        l_gamma,
        ratio_limit: r.abs(),
        partial_sums: partial,
        term_ratios: ratios,
        fitted_rate,
        remainders,
        closed_form: closed,
        convergent,
    }
}

/// `n` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::levy::{Amplitude, LevyConfig, Measure, QuadratureConfig};
    use crate::market::ScalarField;
    use approx::assert_relative_eq;

    pub const LAMBDA_SQ: f64 = 0.183732;

    pub fn const_market(lambda: f64) -> MarketSpec {
        MarketSpec::new(
            ScalarField::constant(lambda),
            ScalarField::Power {
                coef: 1.0,
                exponent: -0.5,
            },
            ScalarField::constant(0.3),
            ScalarField::constant(0.05),
            0.2,
        )
        .unwrap()
    }

    pub fn tanh_market() -> MarketSpec {
        MarketSpec::new(
            ScalarField::Tanh {
                level: 1.5,
                amplitude: 0.3,
                scale: 2.0,
            },
            ScalarField::constant(0.25),
            ScalarField::constant(0.4),
            ScalarField::Linear {
                intercept: 0.1,
                slope: -0.2,
            },
            -0.3,
        )
        .unwrap()
    }

    pub fn levy(measure: Measure, gamma1: Amplitude, horizon: f64) -> LevySpec {
        LevySpec::new(
            LevyConfig {
                measure,
                gamma1,
                gamma2: Amplitude::Proportional { scale: 0.1 },
                gamma1_1: Amplitude::Zero,
                gamma0: None,
                quad: QuadratureConfig::default(),
            },
            horizon,
        )
        .unwrap()
    }

    pub fn ig_levy(horizon: f64) -> LevySpec {
        levy(
            Measure::InverseGaussian { m: 0.5, n: 0.5 },
            Amplitude::IgDensityMatched,
            horizon,
        )
    }

    pub fn gamma_levy(horizon: f64) -> LevySpec {
        levy(
            Measure::Gamma {
                kappa: 1.0,
                theta: 1.0,
            },
            Amplitude::GammaDensityMatched,
            horizon,
        )
    }

    fn cube() -> UtilitySpec {
        UtilitySpec::power(1.0, 3.0).unwrap()
    }

    fn table_expansion() -> ValueExpansion {
        ValueExpansion::new(cube(), const_market(LAMBDA_SQ.sqrt()), ig_levy(2.0)).unwrap()
    }

    #[test]
    fn chi_hat_examples() {
        let none = ValueExpansion::new(
            UtilitySpec::Logarithmic,
            const_market(0.4),
            LevySpec::no_jumps(2.0).unwrap(),
        )
        .unwrap();
        assert_eq!(none.chi_hat(2.0, 1.0, 0.7).unwrap(), 2.0);
        // Arithmetic with a prescribed amplitude value: U'/U'' = -x for the logarithm.
        let (lam, i, x, g) = (0.4286397, 1.0, 2.0, 0.3);
        let r1 = UtilitySpec::Logarithmic.ratio_terms(x).unwrap().r1;
        assert_relative_eq!(x - (lam - i) * r1 * g, 2.0 + (lam - 1.0) * 2.0 * 0.3, epsilon = 1e-15);
        let r1 = cube().ratio_terms(1.0).unwrap().r1;
        assert_relative_eq!(1.0 - (-0.5713603) * r1 * 1.0, 0.8095466, epsilon = 1e-7);
        // And through the engine with a density-matched amplitude.
        let v = table_expansion();
        let z = 0.8;
        let g = v.levy().gamma1(z);
        let l = LAMBDA_SQ.sqrt() - 1.0;
        assert_relative_eq!(v.chi_hat(1.0, 27.9345, z).unwrap(), 1.0 + l * g / 3.0, epsilon = 1e-14);
        assert!(v.chi_hat(0.0, 0.0, z).is_err());
    }

    #[test]
    fn u1_examples() {
        let lam = 0.4286397;
        let merton = ValueExpansion::new(
            UtilitySpec::Logarithmic,
            const_market(lam),
            LevySpec::no_jumps(2.0).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(merton.u1(3.0, 1.0).unwrap(), lam * lam / 2.0, epsilon = 1e-15);

        let v = table_expansion();
        let u = v.u1_mode(1.0, 27.9345, ExpansionMode::FirstOrderTaylor).unwrap();
        assert_relative_eq!(u, -0.1360447, epsilon = 1e-7);
        let hat = v.value_hat(1.5, 1.0, 27.9345, ExpansionMode::FirstOrderTaylor).unwrap();
        assert_relative_eq!(hat, -0.568022, epsilon = 5e-7);
    }

    #[test]
    fn u1_log_gamma_matches_trapezoid_oracle() {
        let lam = 1.5;
        let v = ValueExpansion::new(UtilitySpec::Logarithmic, const_market(lam), gamma_levy(1.0)).unwrap();
        let got = v.u1(2.0, 1.0).unwrap();
        // For the logarithm, U1 = (lambda^2 - I^2)/2 + int [ln(1 + L g) - L g] dnu, independent of x.
        let l = lam - 1.0;
        let lv = v.levy();
        let f = |z: f64| {
            let g = lv.gamma1(z);
            ((l * g).ln_1p() - l * g) * lv.density(z)
        };
        // Trapezoid in u = ln z on [ln 1e-12, ln 80].
        let (a, b, n) = ((1e-12f64).ln(), 80f64.ln(), 2_000_000usize);
        let h = (b - a) / n as f64;
        let mut s = 0.5 * (f(a.exp()) * a.exp() + f(b.exp()) * b.exp());
        for k in 1..n {
            let z = (a + k as f64 * h).exp();
            s += f(z) * z;
        }
        let oracle = 0.5 * (lam * lam - 1.0) + s * h;
        assert!((got - oracle).abs() < 1e-6 * oracle.abs(), "{got} {oracle}");
    }

    #[test]
    fn partial_examples() {
        let v = table_expansion();
        let p = v.u1_partials(1.3, 27.9345).unwrap();
        assert_eq!((p.y, p.yy, p.xy), (0.0, 0.0, 0.0));

        let merton = ValueExpansion::new(
            UtilitySpec::Logarithmic,
            const_market(0.4),
            LevySpec::no_jumps(2.0).unwrap(),
        )
        .unwrap();
        assert!(merton.u1_partials(2.0, 1.0).unwrap().x.abs() < 1e-15);

        let lam = 0.4286397;
        let nj = ValueExpansion::new(cube(), const_market(lam), LevySpec::no_jumps(2.0).unwrap()).unwrap();
        let p = nj.u1_partials(1.0, 1.0).unwrap();
        assert_relative_eq!(p.xx, -lam * lam / 2.0 * -2.0, epsilon = 1e-12);
        let h = 1e-4;
        let fd = (nj.u1(1.0 + h, 1.0).unwrap() - 2.0 * nj.u1(1.0, 1.0).unwrap() + nj.u1(1.0 - h, 1.0).unwrap())
            / (h * h);
        assert!((fd - p.xx).abs() < 1e-6 * p.xx.abs());
    }

    #[test]
    fn partials_match_finite_differences_with_jumps_and_factor() {
        for lv in [gamma_levy(1.0), ig_levy(2.0)] {
            for u in [UtilitySpec::Logarithmic, cube(), UtilitySpec::power_mixture(1.0, 0.5, 0.5, 2.0).unwrap()] {
                let v = ValueExpansion::new(u, tanh_market(), lv.clone()).unwrap();
                for &(x, y) in &[(0.7, -0.5), (2.0, 0.3), (15.0, 1.2)] {
                    let p = v.u1_partials(x, y).unwrap();
                    let hx = x * 1e-5;
                    let hy = 1e-4;
                    let u1 = |a: f64, b: f64| v.u1(a, b).unwrap();
                    let px = |a: f64, b: f64| v.u1_partials(a, b).unwrap();
                    let checks = [
                        ("x", (u1(x + hx, y) - u1(x - hx, y)) / (2.0 * hx), p.x),
                        ("xx", (px(x + hx, y).x - px(x - hx, y).x) / (2.0 * hx), p.xx),
                        ("y", (u1(x, y + hy) - u1(x, y - hy)) / (2.0 * hy), p.y),
                        ("yy", (px(x, y + hy).y - px(x, y - hy).y) / (2.0 * hy), p.yy),
                        ("xy", (px(x, y + hy).x - px(x, y - hy).x) / (2.0 * hy), p.xy),
                    ];
                    for (name, fd, an) in checks {
                        assert!(
                            (fd - an).abs() <= 1e-6 * an.abs().max(1e-3 * p.u1.abs()),
                            "{u:?} x={x} y={y} {name}: {an} vs {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn u2_no_jump_examples() {
        let lam = 0.4286397;
        let merton = ValueExpansion::new(
            UtilitySpec::Logarithmic,
            const_market(lam),
            LevySpec::no_jumps(2.0).unwrap(),
        )
        .unwrap();
        for t in merton.u2_terms(3.0, 1.0).unwrap() {
            assert!(t.abs() < 1e-15);
        }
        // Single power, no jumps: hand derivation gives -lambda^4 x^-2 / 36.
        let nj = ValueExpansion::new(cube(), const_market(lam), LevySpec::no_jumps(2.0).unwrap()).unwrap();
        for &x in &[0.5, 1.0, 4.0] {
            let got = nj.u2(x, 1.0).unwrap();
            assert_relative_eq!(got, -lam.powi(4) / (36.0 * x * x), max_relative = 1e-12);
            let terms = nj.u2_terms(x, 1.0).unwrap();
            assert_eq!(terms[0], 0.0);
            assert_eq!(terms[1], 0.0);
        }
    }

    #[test]
    fn envelope_examples() {
        let s = EnvelopeSettings::default();
        let merton = ValueExpansion::new(
            UtilitySpec::Logarithmic,
            const_market(0.4),
            LevySpec::no_jumps(2.0).unwrap(),
        )
        .unwrap();
        // Every term vanishes up to rounding.
        assert_relative_eq!(merton.envelope_constant(1.0, &s).unwrap(), 1.0, epsilon = 1e-12);

        let nj = ValueExpansion::new(cube(), const_market(0.4), LevySpec::no_jumps(2.0).unwrap()).unwrap();
        let coarse = nj.envelope_constant(1.0, &s).unwrap();
        let fine = nj
            .envelope_over(&[1.0], &log_grid(s.x_lo, s.x_hi, 2 * s.points - 1), &s)
            .unwrap()
            .u2bar;
        assert!((coarse - fine).abs() < 0.01 * fine);
        // The single power makes every term a constant multiple of f.
        assert_relative_eq!(coarse, 1.0 + 11.0 * 0.4f64.powi(4) / 18.0 / 2.0, max_relative = 1e-12);

        let one = nj.envelope_over(&[1.0], &[3.0], &s).unwrap();
        assert!(one.u2bar >= 1.0 && one.u2bar.is_finite());
    }

    #[test]
    fn envelope_with_jumps_is_finite() {
        let mut v = table_expansion();
        let env = v.compute_envelope(&[27.9345], &EnvelopeSettings::default()).unwrap();
        assert!(env.u2bar > 1.0 && env.u2bar.is_finite());
    }

    #[test]
    fn budget_error() {
        let v = table_expansion();
        let err = v.u2_terms_budget(1.0, 27.9345, 10).unwrap_err();
        assert!(matches!(err, Error::Budget { .. }));
    }

    #[test]
    fn value_hat_and_reference_rows() {
        let v = table_expansion();
        let y = 27.9345;
        let m = ExpansionMode::FirstOrderTaylor;
        assert_eq!(v.value_hat(2.0, 1.7, y, m).unwrap(), cube().value(1.7).unwrap());
        assert_relative_eq!(v.value_hat(1.5, 1.0, y, m).unwrap(), -0.568022, epsilon = 5e-6);
        assert_relative_eq!(v.value_hat(1.9, 1.0, y, m).unwrap(), -0.513605, epsilon = 5e-6);
        assert_relative_eq!(v.value_reference_no_jumps(1.5, 1.0, y).unwrap(), -0.484689, epsilon = 5e-6);
        assert_relative_eq!(v.value_reference_no_jumps(1.9, 1.0, y).unwrap(), -0.496938, epsilon = 5e-6);
        assert_eq!(v.value_reference_no_jumps(2.0, 2.0, y).unwrap(), cube().value(2.0).unwrap());
        assert!(v.value_hat(2.5, 1.0, y, m).is_err());
        assert!(v.value_hat(-0.1, 1.0, y, m).is_err());
    }

    #[test]
    fn merton_consistency() {
        let v = ValueExpansion::new(cube(), const_market(0.35), LevySpec::no_jumps(2.0).unwrap()).unwrap();
        for &t in &[0.0, 0.7, 1.9] {
            for &x in &[0.3, 1.0, 9.0] {
                for &y in &[0.5, 2.0, 10.0] {
                    for m in [ExpansionMode::FullIntegral, ExpansionMode::FirstOrderTaylor] {
                        let a = v.value_hat(t, x, y, m).unwrap();
                        let b = v.value_reference_no_jumps(t, x, y).unwrap();
                        assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0), "{a} {b}");
                    }
                }
            }
        }
    }

    fn taylor_gap_ratio(theta: f64, lambda: f64) -> f64 {
        let lv = levy(Measure::Gamma { kappa: 1.0, theta }, Amplitude::GammaDensityMatched, 1.0);
        let v = ValueExpansion::new(cube(), const_market(lambda), lv).unwrap();
        let full = v.value_hat(0.0, 1.0, 1.0, ExpansionMode::FullIntegral).unwrap();
        let tay = v.value_hat(0.0, 1.0, 1.0, ExpansionMode::FirstOrderTaylor).unwrap();
        let ut = cube().value(1.0).unwrap();
        (full - tay).abs() / (tay - ut).abs()
    }

    #[test]
    fn full_integral_gap_is_rate_invariant_and_shrinks_with_l() {
        // z -> theta z maps the density-matched Gamma amplitude onto itself,
        // so the rate parameter cannot shrink the jump sizes.
        let base = taylor_gap_ratio(5.0, 1.5);
        for theta in [10.0, 20.0] {
            let r = taylor_gap_ratio(theta, 1.5);
            assert!((r - base).abs() < 1e-6 * base, "theta={theta} {r} {base}");
        }
        let mut last = f64::INFINITY;
        for l in [0.4, 0.2, 0.1, 0.05] {
            let r = taylor_gap_ratio(10.0, 1.0 + l);
            assert!(r < last, "L={l} ratio={r}");
            last = r;
        }
    }

    #[test]
    fn power_closure_and_scale_invariance() {
        let v = table_expansion();
        let y = 27.9345;
        for m in [ExpansionMode::FullIntegral, ExpansionMode::FirstOrderTaylor] {
            let r0 = v.value_hat(0.5, 1.0, y, m).unwrap() / cube().value(1.0).unwrap();
            for &x in &log_grid(0.05, 500.0, 9) {
                let r = v.value_hat(0.5, x, y, m).unwrap() / cube().value(x).unwrap();
                assert!((r - r0).abs() < 1e-12, "{r} {r0}");
            }
        }
        let v2 = ValueExpansion::new(UtilitySpec::power(2.0, 3.0).unwrap(), *v.market(), v.levy().clone()).unwrap();
        for &x in &[0.4, 2.0] {
            let a = v.optimal_portfolio_t(x, y).unwrap();
            let b = v2.optimal_portfolio_t(x, y).unwrap();
            assert!((a - b).abs() <= 1e-14 * a.abs());
        }
    }

    #[test]
    fn asymptotic_ratios_settle() {
        let x_samples = [1e2, 1e3, 1e4, 1e5, 1e6];
        for lv in [gamma_levy(1.0), ig_levy(2.0)] {
            for u in [UtilitySpec::Logarithmic, UtilitySpec::power_mixture(1.0, 0.5, 0.5, 2.0).unwrap()] {
                let v = ValueExpansion::new(u, tanh_market(), lv.clone()).unwrap();
                let rows: Vec<[f64; N_TERMS]> =
                    x_samples.iter().map(|&x| v.u2_terms(x, 0.4).unwrap()).collect();
                for i in 0..N_TERMS {
                    let q: Vec<f64> = x_samples
                        .iter()
                        .zip(&rows)
                        .map(|(&x, r)| r[i].abs() / u.growth_f(x).unwrap())
                        .collect();
                    assert!(q.iter().all(|v| v.is_finite()));
                    let (a, b) = (q[3], q[4]);
                    let scale = a.abs().max(b.abs());
                    assert!(scale < 1e-12 || (a - b).abs() < 0.05 * scale, "{u:?} term {} {q:?}", i + 1);
                }
                let u1q: Vec<f64> = x_samples
                    .iter()
                    .map(|&x| v.u1(x, 0.4).unwrap() / u.growth_f(x).unwrap())
                    .collect();
                assert!((u1q[3] - u1q[4]).abs() < 0.05 * u1q[4].abs().max(1e-300));
            }
        }
    }

    #[test]
    fn portfolio_examples() {
        let lam = 0.4286397;
        let merton = ValueExpansion::new(
            UtilitySpec::Logarithmic,
            const_market(lam),
            LevySpec::no_jumps(2.0).unwrap(),
        )
        .unwrap();
        let sigma = 4f64.powf(-0.5);
        assert_relative_eq!(merton.optimal_portfolio_t(3.0, 4.0).unwrap(), lam * 3.0 / sigma, epsilon = 1e-12);

        let v = table_expansion();
        let y = 27.9345;
        let p = v.optimal_portfolio_t(1.0, y).unwrap();
        assert_relative_eq!(p, (1.0 - LAMBDA_SQ.sqrt()) / y.powf(-0.5) * (-1.0 / 3.0), epsilon = 1e-12);
        assert!((p + 1.00661).abs() < 1e-5, "{p}");

        let eq = ValueExpansion::new(cube(), const_market(1.0), ig_levy(2.0)).unwrap();
        assert_eq!(eq.optimal_portfolio_t(2.0, 1.0).unwrap(), 0.0);

        // V = U_T, no jumps: the Merton form.
        let u = cube();
        let (d1, d2) = (u.derivative(2.0, 1).unwrap(), u.derivative(2.0, 2).unwrap());
        let nj = ValueExpansion::new(u, const_market(lam), LevySpec::no_jumps(2.0).unwrap()).unwrap();
        let got = nj.portfolio_from_value(d1, d2, 0.0, 4.0, 1.0).unwrap();
        assert_relative_eq!(got, -lam * d1 / (sigma * d2), epsilon = 1e-12);

        let unit = MarketSpec::new(
            ScalarField::constant(1.0),
            ScalarField::constant(1.0),
            ScalarField::constant(1.0),
            ScalarField::constant(0.0),
            0.0,
        )
        .unwrap();
        let e = ValueExpansion::new(u, unit, ig_levy(2.0)).unwrap();
        assert_eq!(e.portfolio_from_value(1.0, -1.0, 0.0, 0.0, 2.0).unwrap(), 0.0);
        assert!(matches!(e.portfolio_from_value(1.0, 0.0, 0.0, 0.0, 2.0), Err(Error::NonConcave { .. })));

        // The expansion keeps the power form, so the FOC portfolio is the same at t = 1.5.
        let t = 1.5;
        let p = v.u1_partials(1.0, y).unwrap();
        let d = 2.0 - t;
        let vx = u.derivative(1.0, 1).unwrap() + d * p.x;
        let vxx = u.derivative(1.0, 2).unwrap() + d * p.xx;
        let pi = v.portfolio_from_value(vx, vxx, d * p.xy, y, t).unwrap();
        let c = v.market().eval(y).unwrap();
        let expected = (1.0 - c.lambda) / c.sigma * vx / vxx;
        assert_relative_eq!(pi, expected, epsilon = 1e-12);
    }

    #[test]
    fn series_diagnostic() {
        let z = taylor_series_diagnostic(-0.5, 1.0, 0.0, 10);
        assert!(z.partial_sums.iter().all(|&s| s == -0.5));

        let d = taylor_series_diagnostic(-0.5, 1.0, 1.5, 60);
        assert!(d.convergent);
        assert!((d.partial_sums[60] + 0.5 / 2.25).abs() < 1e-8);
        assert!((d.fitted_rate - 0.5).abs() < 1e-12);
        let long = taylor_series_diagnostic(-0.5, 1.0, 1.5, 1000);
        assert!((long.term_ratios.last().unwrap() - 0.5).abs() < 1e-3);

        let bad = taylor_series_diagnostic(-0.5, 1.0, 3.1, 60);
        assert!(!bad.convergent);
        assert!(bad.closed_form.is_none());

        let v = table_expansion();
        let r = v.taylor_remainder_diagnostic(1.0, 27.9345, 0.5, 40).unwrap();
        assert!(r.convergent);
        assert!(ValueExpansion::new(UtilitySpec::Logarithmic, const_market(0.4), ig_levy(2.0))
            .unwrap()
            .taylor_remainder_diagnostic(1.0, 1.0, 0.5, 10)
            .is_err());
    }
}
