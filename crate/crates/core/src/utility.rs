//! Terminal utility families, their closed-form derivatives and the derived
//! ratios used throughout the expansion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Terminal utility. Either `ln x` or a mixture of two power functions
/// `c1 x^(1-alpha)/(1-alpha) + c2 x^(1-beta)/(1-beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UtilitySpec {
    Logarithmic,
    PowerMixture {
        c1: f64,
        c2: f64,
        alpha: f64,
        beta: f64,
    },
}

/// Which growth envelope accompanies a utility family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthEnvelope {
    LogPlusOne,
    PowerSum,
}

/// `U'/U''`, `U'^2/U''` and their first two derivatives in wealth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioBundle {
    pub r1: f64,
    pub r2: f64,
    pub r1_d1: f64,
    pub r1_d2: f64,
    pub r2_d1: f64,
    pub r2_d2: f64,
}

impl UtilitySpec {
    /// Mixture with a single power term, `c x^(1-alpha)/(1-alpha)`.
    pub fn power(c: f64, alpha: f64) -> Result<Self> {
        let u = UtilitySpec::PowerMixture {
            c1: c,
            c2: 0.0,
            alpha,
            beta: alpha,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn power_mixture(c1: f64, c2: f64, alpha: f64, beta: f64) -> Result<Self> {
        let u = UtilitySpec::PowerMixture {
            c1,
            c2,
            alpha,
            beta,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilitySpec::Logarithmic => Ok(()),
            UtilitySpec::PowerMixture {
                c1,
                c2,
                alpha,
                beta,
            } => {
                if !(c1.is_finite() && c2.is_finite()) || c1 < 0.0 || c2 < 0.0 {
                    return Err(Error::spec("mixture weights must be finite and non-negative"));
                }
                if c1 + c2 <= 0.0 {
                    return Err(Error::spec("mixture weights must not both be zero"));
                }
                for (name, p) in [("alpha", alpha), ("beta", beta)] {
                    if !(p.is_finite() && p > 0.0) {
                        return Err(Error::spec(format!("{name} must be positive, got {p}")));
                    }
                    if (p - 1.0).abs() < 1e-12 {
                        return Err(Error::spec(format!("{name} must differ from 1")));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn envelope(&self) -> GrowthEnvelope {
        match self {
            UtilitySpec::Logarithmic => GrowthEnvelope::LogPlusOne,
            UtilitySpec::PowerMixture { .. } => GrowthEnvelope::PowerSum,
        }
    }

    /// `(c, alpha)` when the utility is a single power term.
    pub fn single_power(&self) -> Option<(f64, f64)> {
        match *self {
            UtilitySpec::Logarithmic => None,
            UtilitySpec::PowerMixture {
                c1,
                c2,
                alpha,
                beta,
            } => {
                if c2 == 0.0 {
                    Some((c1, alpha))
                } else if c1 == 0.0 {
                    Some((c2, beta))
                } else if alpha == beta {
                    Some((c1 + c2, alpha))
                } else {
                    None
                }
            }
        }
    }

    /// All derivatives of order 0..=4 at `x`. No domain check.
    pub(crate) fn all_derivs(&self, x: f64) -> [f64; 5] {
        match *self {
            UtilitySpec::Logarithmic => {
                let r = 1.0 / x;
                let r2 = r * r;
                [x.ln(), r, -r2, 2.0 * r2 * r, -6.0 * r2 * r2]
            }
            UtilitySpec::PowerMixture {
                c1,
                c2,
                alpha,
                beta,
            } => {
                let a = power_derivs(c1, alpha, x);
                let b = power_derivs(c2, beta, x);
                [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3], a[4] + b[4]]
            }
        }
    }

    /// The `order`-th derivative of the utility at `x`.
    pub fn derivative(&self, x: f64, order: u8) -> Result<f64> {
        check_x(x)?;
        if order > 4 {
            return Err(Error::UnsupportedOrder(order));
        }
        Ok(self.all_derivs(x)[order as usize])
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        self.derivative(x, 0)
    }

    pub fn ratio_terms(&self, x: f64) -> Result<RatioBundle> {
        check_x(x)?;
        Ok(self.ratios_unchecked(x))
    }

    pub(crate) fn ratios_unchecked(&self, x: f64) -> RatioBundle {
        ratios_from(&self.all_derivs(x))
    }

    pub fn growth_f(&self, x: f64) -> Result<f64> {
        check_x(x)?;
        Ok(self.f_unchecked(x))
    }

    pub fn growth_g(&self, x: f64) -> Result<f64> {
        check_x(x)?;
        Ok(match self {
            UtilitySpec::Logarithmic => x.ln() + 1.0,
            UtilitySpec::PowerMixture { .. } => self.f_unchecked(x),
        })
    }

    pub(crate) fn f_unchecked(&self, x: f64) -> f64 {
        match *self {
            UtilitySpec::Logarithmic => 1.0,
            UtilitySpec::PowerMixture { alpha, beta, .. } => {
                x.powf(1.0 - alpha) + x.powf(1.0 - beta)
            }
        }
    }
}

/// Ratios from a derivative vector `[U, U', U'', U''', U'''']`.
pub(crate) fn ratios_from(d: &[f64; 5]) -> RatioBundle {
    let (u1, u2, u3, u4) = (d[1], d[2], d[3], d[4]);
    let r1 = u1 / u2;
    let r2 = u1 * u1 / u2;
    let u2sq = u2 * u2;
    let r1_d1 = 1.0 - u1 * u3 / u2sq;
    let r1_d2 = -u3 / u2 + 2.0 * u1 * u3 * u3 / (u2sq * u2) - u1 * u4 / u2sq;
    let r2_d1 = 2.0 * u1 - r1 * r1 * u3;
    let r2_d2 =
        2.0 * u2 - 2.0 * r1 * u3 + 2.0 * u1 * u1 * u3 * u3 / (u2sq * u2) - r1 * r1 * u4;
    RatioBundle {
        r1,
        r2,
        r1_d1,
        r1_d2,
        r2_d1,
        r2_d2,
    }
}

fn power_derivs(c: f64, p: f64, x: f64) -> [f64; 5] {
    if c == 0.0 {
        return [0.0; 5];
    }
    let xp = x.powf(-p);
    let r = 1.0 / x;
    let d1 = c * xp;
    let d2 = -p * d1 * r;
    let d3 = -(p + 1.0) * d2 * r;
    let d4 = -(p + 2.0) * d3 * r;
    [d1 * x / (1.0 - p), d1, d2, d3, d4]
}

fn check_x(x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("wealth must be positive and finite, got {x}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cube() -> UtilitySpec {
        UtilitySpec::power(1.0, 3.0).unwrap()
    }

    fn mixtures() -> Vec<UtilitySpec> {
        vec![
            UtilitySpec::Logarithmic,
            cube(),
            UtilitySpec::power_mixture(1.0, 2.0, 0.5, 2.0).unwrap(),
            UtilitySpec::power_mixture(0.3, 1.0, 3.0, 1.5).unwrap(),
        ]
    }

    // Central difference of order `k` derivative, used as an oracle.
    fn fd(g: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (g(x + h) - g(x - h)) / (2.0 * h)
    }

    #[test]
    fn values_at_reference_points() {
        assert_eq!(UtilitySpec::Logarithmic.derivative(1.0, 0).unwrap(), 0.0);
        assert_relative_eq!(cube().derivative(1.0, 0).unwrap(), -0.5);
        assert_relative_eq!(cube().derivative(2.0, 2).unwrap(), -0.1875, epsilon = 1e-15);
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        let u = cube();
        let h = 1e-5;
        let oracle = (u.value(2.0 + h).unwrap() - 2.0 * u.value(2.0).unwrap()
            + u.value(2.0 - h).unwrap())
            / (h * h);
        assert!((oracle - u.derivative(2.0, 2).unwrap()).abs() < 1e-5);
        // First derivative from values is far tighter.
        let d1 = fd(|x| u.value(x).unwrap(), 2.0, h);
        assert!((d1 - u.derivative(2.0, 1).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn every_order_matches_difference_of_previous() {
        for u in mixtures() {
            for &x in &[0.01, 0.7, 3.0, 250.0] {
                for k in 1..=4u8 {
                    let h = x * 1e-5;
                    let oracle = fd(|z| u.derivative(z, k - 1).unwrap(), x, h);
                    let got = u.derivative(x, k).unwrap();
                    assert!(
                        (oracle - got).abs() <= 1e-6 * got.abs(),
                        "{u:?} x={x} k={k}: {got} vs {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(cube().derivative(0.0, 1), Err(Error::Domain(_))));
        assert!(matches!(cube().derivative(-1.0, 1), Err(Error::Domain(_))));
        assert!(matches!(cube().derivative(1.0, 5), Err(Error::UnsupportedOrder(5))));
        assert!(UtilitySpec::ratio_terms(&cube(), 0.0).is_err());
        assert!(UtilitySpec::power_mixture(0.0, 0.0, 2.0, 3.0).is_err());
        assert!(UtilitySpec::power_mixture(1.0, 0.0, 1.0, 3.0).is_err());
        assert!(UtilitySpec::power_mixture(-1.0, 2.0, 2.0, 3.0).is_err());
    }

    #[test]
    fn ratio_reference_values() {
        let r = UtilitySpec::Logarithmic.ratio_terms(5.0).unwrap();
        assert_relative_eq!(r.r1, -5.0);
        assert_relative_eq!(r.r2, -1.0);
        // U'/U'' = -x for the logarithm, so its slope is -1 everywhere.
        let r = UtilitySpec::Logarithmic.ratio_terms(2.0).unwrap();
        assert_relative_eq!(r.r1_d1, -1.0, epsilon = 1e-15);
        let h = 1e-5;
        let oracle = (UtilitySpec::Logarithmic.ratio_terms(2.0 + h).unwrap().r1
            - UtilitySpec::Logarithmic.ratio_terms(2.0 - h).unwrap().r1)
            / (2.0 * h);
        assert!((oracle + 1.0).abs() < 1e-9);
        let r = cube().ratio_terms(1.0).unwrap();
        assert_relative_eq!(r.r2, -1.0 / 3.0, epsilon = 1e-15);
        // Composition of plain derivatives.
        let d1 = cube().derivative(1.0, 1).unwrap();
        let d2 = cube().derivative(1.0, 2).unwrap();
        assert_relative_eq!(r.r2, d1 * d1 / d2);
    }

    #[test]
    fn ratio_derivatives_match_finite_differences_on_grid() {
        for u in mixtures() {
            let mut x = 1e-3;
            while x <= 1e6 {
                let h = x * 1e-6;
                let r = u.ratio_terms(x).unwrap();
                let checks = [
                    (fd(|z| u.ratio_terms(z).unwrap().r1, x, h), r.r1_d1, r.r1 / x),
                    (fd(|z| u.ratio_terms(z).unwrap().r1_d1, x, h), r.r1_d2, r.r1 / (x * x)),
                    (fd(|z| u.ratio_terms(z).unwrap().r2, x, h), r.r2_d1, r.r2 / x),
                    (fd(|z| u.ratio_terms(z).unwrap().r2_d1, x, h), r.r2_d2, r.r2 / (x * x)),
                ];
                for (i, (oracle, got, base)) in checks.into_iter().enumerate() {
                    // Absolute floor covers derivatives that vanish identically.
                    assert!(
                        (oracle - got).abs() <= 1e-6 * got.abs() + 1e-8 * base.abs(),
                        "{u:?} x={x} check {i}: {got} vs {oracle}"
                    );
                }
                assert!(u.derivative(x, 2).unwrap() < 0.0);
                x *= 10f64.powf(0.25);
            }
        }
    }

    #[test]
    fn growth_functions() {
        let e = std::f64::consts::E;
        assert_eq!(UtilitySpec::Logarithmic.growth_f(e).unwrap(), 1.0);
        assert_relative_eq!(UtilitySpec::Logarithmic.growth_g(e).unwrap(), 2.0);
        assert_relative_eq!(cube().growth_f(10.0).unwrap(), 0.02, epsilon = 1e-15);
        let m = UtilitySpec::power_mixture(1.0, 1.0, 0.5, 2.0).unwrap();
        assert_relative_eq!(m.growth_f(4.0).unwrap(), 2.25);
        assert_eq!(m.growth_g(4.0).unwrap(), m.growth_f(4.0).unwrap());
        assert!(m.growth_f(0.0).is_err());
        assert_eq!(m.envelope(), GrowthEnvelope::PowerSum);
    }

    #[test]
    fn large_wealth_limit_of_scaled_r2() {
        let (c1, alpha) = (0.7, 0.5);
        let m = UtilitySpec::power_mixture(c1, 2.0, alpha, 2.0).unwrap();
        let x = 1e6;
        let lim = m.ratio_terms(x).unwrap().r2 / m.growth_f(x).unwrap();
        assert!((lim + c1 / alpha).abs() < 1e-3, "{lim}");
    }

    #[test]
    fn serde_shape() {
        let u: UtilitySpec =
            toml::from_str("family = \"power-mixture\"\nc1 = 1.0\nc2 = 0.0\nalpha = 3.0\nbeta = 3.0")
                .unwrap();
        assert_eq!(u, cube());
        let l: UtilitySpec = toml::from_str("family = \"logarithmic\"").unwrap();
        assert_eq!(l, UtilitySpec::Logarithmic);
    }

    proptest! {
        #[test]
        fn increasing_and_concave(c1 in 0.0f64..3.0, c2 in 0.01f64..3.0,
                                  a in 0.2f64..5.0, b in 0.2f64..5.0, lx in -3.0f64..6.0) {
            prop_assume!((a - 1.0).abs() > 1e-3 && (b - 1.0).abs() > 1e-3);
            let u = UtilitySpec::power_mixture(c1, c2, a, b).unwrap();
            let x = 10f64.powf(lx);
            prop_assert!(u.derivative(x, 1).unwrap() > 0.0);
            prop_assert!(u.derivative(x, 2).unwrap() < 0.0);
            prop_assert!(u.growth_f(x).unwrap() > 0.0);
        }
    }
}
