//! Market coefficient fields as functions of the stochastic factor `y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar function of the factor `y` with closed-form first and second
/// derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScalarField {
    Constant { value: f64 },
    /// Constant given through its square; the positive root is taken.
    ConstantSquared { square: f64 },
    Linear { intercept: f64, slope: f64 },
    /// `coef * y^exponent`, defined for `y > 0`.
    Power { coef: f64, exponent: f64 },
    /// `level + amplitude * tanh(y / scale)`.
    Tanh { level: f64, amplitude: f64, scale: f64 },
}

impl ScalarField {
    pub fn constant(value: f64) -> Self {
        ScalarField::Constant { value }
    }

    /// `[f(y), f'(y), f''(y)]`.
    pub fn eval(&self, y: f64) -> Result<[f64; 3]> {
        if !y.is_finite() {
            return Err(Error::domain(format!("factor value {y} is not finite")));
        }
        Ok(match *self {
            ScalarField::Constant { value } => [value, 0.0, 0.0],
            ScalarField::ConstantSquared { square } => {
                if square < 0.0 {
                    return Err(Error::domain(format!("negative square {square}")));
                }
                [square.sqrt(), 0.0, 0.0]
            }
            ScalarField::Linear { intercept, slope } => [intercept + slope * y, slope, 0.0],
            ScalarField::Power { coef, exponent } => {
                if y <= 0.0 {
                    return Err(Error::domain(format!(
                        "power field needs a positive factor, got {y}"
                    )));
                }
                let v = coef * y.powf(exponent);
                [v, exponent * v / y, exponent * (exponent - 1.0) * v / (y * y)]
            }
            ScalarField::Tanh {
                level,
                amplitude,
                scale,
            } => {
                let th = (y / scale).tanh();
                let sech2 = 1.0 - th * th;
                [
                    level + amplitude * th,
                    amplitude * sech2 / scale,
                    -2.0 * amplitude * th * sech2 / (scale * scale),
                ]
            }
        })
    }

    pub fn value(&self, y: f64) -> Result<f64> {
        Ok(self.eval(y)?[0])
    }

    /// True when the field does not depend on `y`.
    pub fn is_constant(&self) -> bool {
        match *self {
            ScalarField::Constant { .. } | ScalarField::ConstantSquared { .. } => true,
            ScalarField::Linear { slope, .. } => slope == 0.0,
            ScalarField::Power { coef, exponent } => coef == 0.0 || exponent == 0.0,
            ScalarField::Tanh { amplitude, .. } => amplitude == 0.0,
        }
    }
}

/// Coefficients of the wealth and factor dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    /// Market price of risk.
    pub lambda: ScalarField,
    pub sigma: ScalarField,
    /// Factor volatility.
    pub a: ScalarField,
    /// Factor drift.
    pub b: ScalarField,
    pub rho: f64,
    /// Recorded for completeness; the market price of risk already folds it in.
    #[serde(default)]
    pub interest_rate: f64,
}

/// Market coefficients evaluated at one factor value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientBundle {
    pub lambda: f64,
    pub lambda_d1: f64,
    pub lambda_d2: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
    pub rho: f64,
}

impl CoefficientBundle {
    /// Drift of the risky asset, `lambda * sigma + R`.
    pub fn mu(&self, interest_rate: f64) -> f64 {
        self.lambda * self.sigma + interest_rate
    }
}

impl MarketSpec {
    pub fn new(
        lambda: ScalarField,
        sigma: ScalarField,
        a: ScalarField,
        b: ScalarField,
        rho: f64,
    ) -> Result<Self> {
        let m = MarketSpec {
            lambda,
            sigma,
            a,
            b,
            rho,
            interest_rate: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::spec(format!("correlation must satisfy |rho| < 1, got {}", self.rho)));
        }
        if let ScalarField::Tanh { scale, .. } = self.lambda {
            if scale == 0.0 {
                return Err(Error::spec("tanh field scale must be nonzero"));
            }
        }
        Ok(())
    }

    pub fn eval(&self, y: f64) -> Result<CoefficientBundle> {
        let l = self.lambda.eval(y)?;
        let sigma = self.sigma.value(y)?;
        let a = self.a.value(y)?;
        let b = self.b.value(y)?;
        if !(sigma > 0.0) {
            return Err(Error::domain(format!("sigma({y}) = {sigma} is not positive")));
        }
        if !(a >= 0.0) {
            return Err(Error::domain(format!("a({y}) = {a} is negative")));
        }
        Ok(CoefficientBundle {
            lambda: l[0],
            lambda_d1: l[1],
            lambda_d2: l[2],
            sigma,
            a,
            b,
            rho: self.rho,
        })
    }

    /// Positivity and boundedness checks on an evaluation grid of factor values.
    /// `a` must be strictly positive unless `allow_degenerate_factor` is set,
    /// which admits a frozen factor (`a = 0`).
    pub fn check_grid(&self, ys: &[f64], allow_degenerate_factor: bool) -> Result<()> {
        for &y in ys {
            let c = self.eval(y)?;
            let vals = [c.lambda, c.lambda_d1, c.lambda_d2, c.sigma, c.a, c.b];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("non-finite coefficient at y = {y}")));
            }
            if !allow_degenerate_factor && !(c.a > 0.0 && (1.0 / c.a).is_finite()) {
                return Err(Error::domain(format!("factor volatility not positive at y = {y}")));
            }
        }
        Ok(())
    }

    /// True when the market price of risk does not depend on the factor.
    pub fn lambda_is_constant(&self) -> bool {
        self.lambda.is_constant()
    }
}
