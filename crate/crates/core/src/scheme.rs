//! Backward time stepping of the first-order expansion over `[0, T]` and the
//! close-to-optimal portfolio read off the stepped surfaces.
//!
//! A knot surface is stored as `q = (V - U_T) / R2` with `R2 = U'^2 / U''`,
//! which is exactly constant in wealth for power and log utilities, so
//! extrapolation past the wealth grid stays well behaved.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::{log_grid, portfolio_foc, ExpansionMode, ValueExpansion};
use crate::levy::LevySpec;
use crate::market::MarketSpec;
use crate::residual::{hamiltonian_parts_mode, jump_moment_at, CandidateValue, SpacePartials};
use crate::utility::UtilitySpec;

/// Strictly increasing time knots from `0` to the horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::spec("time grid needs at least two knots"));
        }
        if knots[0] != 0.0 {
            return Err(Error::spec("time grid must start at 0"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || !knots.iter().all(|t| t.is_finite()) {
            return Err(Error::spec("time knots must be finite and strictly increasing"));
        }
        Ok(TimeGrid { knots })
    }

    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if n == 0 || !(horizon > 0.0) {
            return Err(Error::spec("uniform grid needs n >= 1 and a positive horizon"));
        }
        let mut knots: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
        knots[n] = horizon;
        TimeGrid::new(knots)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of steps.
    pub fn n(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.knots[self.n()]
    }

    /// Smallest knot index `k` with `t_k >= t`.
    pub fn right_knot(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * self.horizon();
        if !(t >= -tol && t <= self.horizon() + tol) {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.horizon())));
        }
        Ok(self.knots.partition_point(|&k| k < t - tol))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceMode {
    /// Tabulated surface on a wealth-factor grid.
    #[default]
    GeneralSurface,
    /// One scalar per knot; single power utility with a factor-free price of risk.
    PowerClosed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeSettings {
    pub n_steps: usize,
    pub surface: SurfaceMode,
    pub jump_mode: ExpansionMode,
    pub x_lo: f64,
    pub x_hi: f64,
    /// Wealth nodes, log-spaced. The explicit step amplifies grid-scale
    /// noise by roughly `exp(c T / h^2)` in the log spacing `h`, so keep
    /// `h` near 0.5 or wider.
    pub x_points: usize,
    /// Factor grid; a single value freezes the factor direction.
    pub ys: Vec<f64>,
}

impl Default for SchemeSettings {
    fn default() -> Self {
        SchemeSettings {
            n_steps: 20,
            surface: SurfaceMode::GeneralSurface,
            jump_mode: ExpansionMode::FullIntegral,
            x_lo: 1e-3,
            x_hi: 1e3,
            x_points: 25,
            ys: vec![],
        }
    }
}

/// Natural cubic spline with linear extrapolation.
#[derive(Debug, Clone, PartialEq)]
struct Spline {
    s: Vec<f64>,
    v: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    fn new(s: &[f64], v: &[f64]) -> Self {
        let n = s.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second derivatives.
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = s[i] - s[i - 1];
                let h1 = s[i + 1] - s[i];
                let a = h0 / 6.0;
                let b = (h0 + h1) / 3.0;
                let cc = h1 / 6.0;
                let r = (v[i + 1] - v[i]) / h1 - (v[i] - v[i - 1]) / h0;
                let denom = b - a * c[i - 1];
                c[i] = cc / denom;
                d[i] = (r - a * d[i - 1]) / denom;
            }
            for i in (1..n - 1).rev() {
                m[i] = d[i] - c[i] * m[i + 1];
            }
        }
        Spline {
            s: s.to_vec(),
            v: v.to_vec(),
            m,
        }
    }

    /// `(value, first, second)` derivative.
    fn eval(&self, x: f64) -> [f64; 3] {
        let n = self.s.len();
        if n == 1 {
            return [self.v[0], 0.0, 0.0];
        }
        let slope = |i: usize| {
            let h = self.s[i + 1] - self.s[i];
            (self.v[i + 1] - self.v[i]) / h - h * (2.0 * self.m[i] + self.m[i + 1]) / 6.0
        };
        if x <= self.s[0] {
            let d = slope(0);
            return [self.v[0] + d * (x - self.s[0]), d, 0.0];
        }
        if x >= self.s[n - 1] {
            let h = self.s[n - 1] - self.s[n - 2];
            let d = (self.v[n - 1] - self.v[n - 2]) / h + h * (self.m[n - 2] + 2.0 * self.m[n - 1]) / 6.0;
            return [self.v[n - 1] + d * (x - self.s[n - 1]), d, 0.0];
        }
        let i = (self.s.partition_point(|&k| k <= x) - 1).min(n - 2);
        let h = self.s[i + 1] - self.s[i];
        let a = (self.s[i + 1] - x) / h;
        let b = (x - self.s[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let v = a * self.v[i] + b * self.v[i + 1] + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (self.v[i + 1] - self.v[i]) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let dd = a * m0 + b * m1;
        [v, d, dd]
    }
}

/// Per-row splines of `q`, `q_y` and `q_yy` in `ln x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    q: Spline,
    qy: Spline,
    qyy: Spline,
}

/// `q` and its partials in `(s = ln x, y)`.
#[derive(Debug, Clone, Copy, Default)]
struct QJet {
    q: f64,
    s: f64,
    ss: f64,
    y: f64,
    yy: f64,
    sy: f64,
}

/// Value surface at one knot.
#[derive(Debug, Clone, PartialEq)]
pub enum KnotSurface {
    Constant(f64),
    Table {
        s: Vec<f64>,
        ys: Vec<f64>,
        /// `q` values, row-major in `y`.
        values: Vec<Vec<f64>>,
        rows: Vec<Row>,
    },
}

impl KnotSurface {
    fn table(s: Vec<f64>, ys: Vec<f64>, values: Vec<Vec<f64>>) -> Self {
        let ny = ys.len();
        let ns = s.len();
        let mut rows = Vec::with_capacity(ny);
        for j in 0..ny {
            let mut dy = vec![0.0; ns];
            let mut dyy = vec![0.0; ns];
            if ny >= 2 {
                for i in 0..ns {
                    let col = |jj: usize| values[jj][i];
                    let (d1, d2) = nodal_y_derivs(&ys, j, col);
                    dy[i] = d1;
                    dyy[i] = d2;
                }
            }
            rows.push(Row {
                q: Spline::new(&s, &values[j]),
                qy: Spline::new(&s, &dy),
                qyy: Spline::new(&s, &dyy),
            });
        }
        KnotSurface::Table { s, ys, values, rows }
    }

    fn jet(&self, x: f64, y: f64) -> QJet {
        match self {
            KnotSurface::Constant(q) => QJet {
                q: *q,
                ..Default::default()
            },
            KnotSurface::Table { ys, rows, .. } => {
                let s = x.ln();
                let row_jet = |r: &Row| {
                    let q = r.q.eval(s);
                    let qy = r.qy.eval(s);
                    QJet {
                        q: q[0],
                        s: q[1],
                        ss: q[2],
                        y: qy[0],
                        yy: r.qyy.eval(s)[0],
                        sy: qy[1],
                    }
                };
                if ys.len() == 1 {
                    let mut j = row_jet(&rows[0]);
                    (j.y, j.yy, j.sy) = (0.0, 0.0, 0.0);
                    return j;
                }
                let yc = y.clamp(ys[0], ys[ys.len() - 1]);
                let j = (ys.partition_point(|&k| k <= yc).max(1) - 1).min(ys.len() - 2);
                let w = (yc - ys[j]) / (ys[j + 1] - ys[j]);
                let (a, b) = (row_jet(&rows[j]), row_jet(&rows[j + 1]));
                let mix = |p: f64, q: f64| (1.0 - w) * p + w * q;
                QJet {
                    q: mix(a.q, b.q),
                    s: mix(a.s, b.s),
                    ss: mix(a.ss, b.ss),
                    y: mix(a.y, b.y),
                    yy: mix(a.yy, b.yy),
                    sy: mix(a.sy, b.sy),
                }
            }
        }
    }
}

/// Three-point first and second derivatives at node `j` of a possibly uneven grid.
fn nodal_y_derivs(ys: &[f64], j: usize, col: impl Fn(usize) -> f64) -> (f64, f64) {
    let n = ys.len();
    if n == 2 {
        return ((col(1) - col(0)) / (ys[1] - ys[0]), 0.0);
    }
    let c = j.clamp(1, n - 2);
    let (h0, h1) = (ys[c] - ys[c - 1], ys[c + 1] - ys[c]);
    let (f0, f1, f2) = (col(c - 1), col(c), col(c + 1));
    let d2 = 2.0 * (h0 * f2 - (h0 + h1) * f1 + h1 * f0) / (h0 * h1 * (h0 + h1));
    let d1 = if j == c {
        (h0 * h0 * f2 + (h1 * h1 - h0 * h0) * f1 - h1 * h1 * f0) / (h0 * h1 * (h0 + h1))
    } else if j == 0 {
        (f1 - f0) / h0 - d2 * h0 / 2.0
    } else {
        (f2 - f1) / h1 + d2 * h1 / 2.0
    };
    (d1, d2)
}

/// A knot surface viewed as a time-independent candidate value.
struct SurfaceView<'a> {
    u: &'a UtilitySpec,
    q: &'a KnotSurface,
    horizon: f64,
}

impl CandidateValue for SurfaceView<'_> {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn value(&self, _t: f64, x: f64, y: f64) -> Result<f64> {
        let r2 = self.u.ratio_terms(x)?.r2;
        Ok(self.u.value(x)? + r2 * self.q.jet(x, y).q)
    }

    fn partials(&self, _t: f64, x: f64, y: f64) -> Result<SpacePartials> {
        let r = self.u.ratio_terms(x)?;
        let j = self.q.jet(x, y);
        let (qx, qxx, qxy) = (j.s / x, (j.ss - j.s) / (x * x), j.sy / x);
        Ok(SpacePartials {
            x: self.u.derivative(x, 1)? + r.r2_d1 * j.q + r.r2 * qx,
            xx: self.u.derivative(x, 2)? + r.r2_d2 * j.q + 2.0 * r.r2_d1 * qx + r.r2 * qxx,
            y: r.r2 * j.y,
            yy: r.r2 * j.yy,
            xy: r.r2_d1 * j.y + r.r2 * qxy,
        })
    }

    fn time_derivative(&self, _t: f64, _x: f64, _y: f64) -> Result<f64> {
        Ok(0.0)
    }
}

/// All knot surfaces of a completed backward run.
#[derive(Debug, Clone)]
pub struct SchemeState {
    utility: UtilitySpec,
    market: MarketSpec,
    levy: LevySpec,
    grid: TimeGrid,
    settings: SchemeSettings,
    surfaces: Vec<KnotSurface>,
}

/// Iterates the scheme from the horizon down to `0`, storing every knot surface.
pub fn run_scheme(v: &ValueExpansion, grid: &TimeGrid, settings: &SchemeSettings) -> Result<SchemeState> {
    if (grid.horizon() - v.horizon()).abs() > 1e-12 * v.horizon() {
        return Err(Error::spec("time grid must end at the expansion horizon"));
    }
    if settings.ys.is_empty() {
        return Err(Error::spec("scheme needs at least one factor value"));
    }
    if settings.ys.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::spec("scheme factor values must be strictly increasing"));
    }
    let mut st = SchemeState {
        utility: *v.utility(),
        market: *v.market(),
        levy: v.levy().clone(),
        grid: grid.clone(),
        settings: settings.clone(),
        surfaces: vec![],
    };
    let n = grid.n();
    let terminal = match settings.surface {
        SurfaceMode::PowerClosed => {
            if st.utility.single_power().is_none() || !st.market.lambda_is_constant() {
                return Err(Error::spec(
                    "closed power mode needs a single power utility and a constant price of risk",
                ));
            }
            KnotSurface::Constant(0.0)
        }
        SurfaceMode::GeneralSurface => {
            if !(settings.x_lo > 0.0 && settings.x_hi > settings.x_lo && settings.x_points >= 2) {
                return Err(Error::spec("invalid wealth grid"));
            }
            let s: Vec<f64> = log_grid(settings.x_lo, settings.x_hi, settings.x_points)
                .iter()
                .map(|x| x.ln())
                .collect();
            let zeros = vec![vec![0.0; s.len()]; settings.ys.len()];
            KnotSurface::table(s, settings.ys.clone(), zeros)
        }
    };
    let mut rev = vec![terminal];
    for k in (0..n).rev() {
        let next = st.build_knot(rev.last().unwrap_or_else(|| unreachable!()), k)?;
        rev.push(next);
    }
    rev.reverse();
    st.surfaces = rev;
    Ok(st)
}

impl SchemeState {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn settings(&self) -> &SchemeSettings {
        &self.settings
    }

    pub fn surface(&self, k: usize) -> &KnotSurface {
        &self.surfaces[k]
    }

    fn view<'a>(&'a self, q: &'a KnotSurface) -> SurfaceView<'a> {
        SurfaceView {
            u: &self.utility,
            q,
            horizon: self.grid.horizon(),
        }
    }

    /// Stepped value from the surface `right` (at `t_{k+1}`) to time `t`.
    fn step_from(&self, right: &KnotSurface, k: usize, t: f64, x: f64, y: f64) -> Result<f64> {
        let t1 = self.grid.knots[k + 1];
        let view = self.view(right);
        let v = view.value(t1, x, y)?;
        if t == t1 {
            return Ok(v);
        }
        let h = hamiltonian_parts_mode(&view, t1, x, y, &self.market, &self.levy, self.settings.jump_mode)
            .map_err(|e| match e {
                Error::NonConcave { .. } => Error::NonConcave { t: t1, x, y },
                e => e,
            })?;
        Ok(v + (t1 - t) * h.hamiltonian)
    }

    fn build_knot(&self, right: &KnotSurface, k: usize) -> Result<KnotSurface> {
        let t = self.grid.knots[k];
        let to_q = |x: f64, y: f64| -> Result<f64> {
            let v = self.step_from(right, k, t, x, y)?;
            Ok((v - self.utility.value(x)?) / self.utility.ratio_terms(x)?.r2)
        };
        match right {
            KnotSurface::Constant(_) => Ok(KnotSurface::Constant(to_q(1.0, self.settings.ys[0])?)),
            KnotSurface::Table { s, ys, .. } => {
                let values = ys
                    .iter()
                    .map(|&y| s.par_iter().map(|&si| to_q(si.exp(), y)).collect::<Result<Vec<f64>>>())
                    .collect::<Result<Vec<_>>>()?;
                Ok(KnotSurface::table(s.clone(), ys.clone(), values))
            }
        }
    }

    /// Scheme value at any `t` in `[t_k, t_{k+1}]`, stepped off the knot surface
    /// at `t_{k+1}` without interpolation at the evaluation point.
    pub fn step_back(&self, k: usize, t: f64, x: f64, y: f64) -> Result<f64> {
        if k >= self.grid.n() {
            return Err(Error::domain(format!("knot index {k} has no right neighbour")));
        }
        let (t0, t1) = (self.grid.knots[k], self.grid.knots[k + 1]);
        if !(t >= t0 && t <= t1) {
            return Err(Error::domain(format!("time {t} outside [{t0}, {t1}]")));
        }
        self.step_from(&self.surfaces[k + 1], k, t, x, y)
    }

    /// Stored knot surface value at `(t_k, x, y)`.
    pub fn knot_value(&self, k: usize, x: f64, y: f64) -> Result<f64> {
        self.view(&self.surfaces[k]).value(self.grid.knots[k], x, y)
    }

    pub fn knot_partials(&self, k: usize, x: f64, y: f64) -> Result<SpacePartials> {
        self.view(&self.surfaces[k]).partials(self.grid.knots[k], x, y)
    }

    /// Scheme value at `t`: the stored surface at a knot, otherwise one step
    /// back from the right knot.
    pub fn value(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        let k = self.grid.right_knot(t)?;
        if (self.grid.knots[k] - t).abs() <= 1e-12 * self.grid.horizon() {
            return self.knot_value(k, x, y);
        }
        self.step_back(k - 1, t, x, y)
    }

    /// Coefficient `c_k` of `c_k x^(1 - alpha) / (1 - alpha)`, single power only.
    pub fn power_coefficient(&self, k: usize) -> Result<f64> {
        let (c, alpha) = self
            .utility
            .single_power()
            .ok_or_else(|| Error::validation("power coefficient needs a single power utility"))?;
        match self.surfaces[k] {
            KnotSurface::Constant(q) => Ok(c * (1.0 - q * (1.0 - alpha) / alpha)),
            _ => Err(Error::validation("power coefficient needs the closed power mode")),
        }
    }

    fn portfolio_at(&self, t_coef: f64, p: SpacePartials, t: f64, x: f64, y: f64) -> Result<f64> {
        let co = self.market.eval(y)?;
        let moment = jump_moment_at(&self.levy, t_coef)?;
        portfolio_foc(&co, p.x, p.xx, p.xy, moment).ok_or(Error::NonConcave { t, x, y })
    }

    /// First-order-condition portfolio from the knot surface at the right
    /// bracketing knot.
    pub fn close_to_optimal_portfolio(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        let k = self.grid.right_knot(t)?;
        let p = self.knot_partials(k, x, y)?;
        self.portfolio_at(self.grid.knots[k], p, t, x, y)
    }

    /// Portfolio from difference partials of the freshly stepped surface at `t`.
    pub fn stepped_portfolio(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        let k = self.grid.right_knot(t)?;
        if k == 0 || (self.grid.knots[k] - t).abs() <= 1e-12 * self.grid.horizon() {
            return self.close_to_optimal_portfolio(t, x, y);
        }
        let f = |x: f64, y: f64| self.step_back(k - 1, t, x, y);
        let hx = 1e-4 * x;
        let (vp, v0, vm) = (f(x + hx, y)?, f(x, y)?, f(x - hx, y)?);
        let mut p = SpacePartials {
            x: (vp - vm) / (2.0 * hx),
            xx: (vp - 2.0 * v0 + vm) / (hx * hx),
            ..Default::default()
        };
        if self.settings.ys.len() > 1 {
            let hy = 1e-4 * (1.0 + y.abs());
            p.xy = (f(x + hx, y + hy)? - f(x - hx, y + hy)? - f(x + hx, y - hy)? + f(x - hx, y - hy)?)
                / (4.0 * hx * hy);
        }
        self.portfolio_at(t, p, t, x, y)
    }

    /// Largest `|knot-anchored - stepped|` portfolio gap over the given points.
    pub fn portfolio_divergence(&self, ts: &[f64], xs: &[f64], ys: &[f64]) -> Result<f64> {
        let mut worst = 0.0f64;
        for &t in ts {
            for &x in xs {
                for &y in ys {
                    let a = self.close_to_optimal_portfolio(t, x, y)?;
                    let b = self.stepped_portfolio(t, x, y)?;
                    worst = worst.max((a - b).abs());
                }
            }
        }
        Ok(worst)
    }

    /// Per-knot table: `t,c` in the closed power mode, `t,x,y,value` otherwise.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        let io = |e: csv::Error| Error::Io(e.to_string());
        match self.settings.surface {
            SurfaceMode::PowerClosed => {
                w.write_record(["t", "c"]).map_err(io)?;
                for k in 0..=self.grid.n() {
                    let c = self.power_coefficient(k)?;
                    w.write_record([self.grid.knots[k].to_string(), c.to_string()])
                        .map_err(io)?;
                }
            }
            SurfaceMode::GeneralSurface => {
                w.write_record(["t", "x", "y", "value"]).map_err(io)?;
                for k in 0..=self.grid.n() {
                    if let KnotSurface::Table { s, ys, .. } = &self.surfaces[k] {
                        for &y in ys {
                            for &si in s {
                                let x = si.exp();
                                let v = self.knot_value(k, x, y)?;
                                w.write_record([
                                    self.grid.knots[k].to_string(),
                                    x.to_string(),
                                    y.to_string(),
                                    v.to_string(),
                                ])
                                .map_err(io)?;
                            }
                        }
                    }
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Grid-refinement diagnostics for the scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementReport {
    pub steps: Vec<usize>,
    /// Max gap between consecutive resolutions over the knots they share.
    pub knot_gaps: Vec<f64>,
    /// `log2` of consecutive knot-gap ratios.
    pub global_order: Option<f64>,
    /// One step of size `h` against two of size `h / 2` from the horizon.
    pub local_gaps: Vec<f64>,
    pub local_order: Option<f64>,
}

/// Runs the scheme at each resolution in `steps` (each doubling the last) and
/// compares shared knots at the given evaluation points.
pub fn refinement_study(
    v: &ValueExpansion,
    settings: &SchemeSettings,
    steps: &[usize],
    xs: &[f64],
    ys: &[f64],
) -> Result<RefinementReport> {
    if steps.len() < 2 || steps.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(Error::validation("refinement needs at least two doubling resolutions"));
    }
    let horizon = v.horizon();
    let states = steps
        .iter()
        .map(|&n| run_scheme(v, &TimeGrid::uniform(horizon, n)?, settings))
        .collect::<Result<Vec<_>>>()?;
    let mut knot_gaps = vec![];
    let mut local_gaps = vec![];
    for (i, pair) in states.windows(2).enumerate() {
        let (coarse, fine) = (&pair[0], &pair[1]);
        let mut gap = 0.0f64;
        for k in 0..=steps[i] {
            for &x in xs {
                for &y in ys {
                    let a = coarse.knot_value(k, x, y)?;
                    let b = fine.knot_value(2 * k, x, y)?;
                    gap = gap.max((a - b).abs());
                }
            }
        }
        knot_gaps.push(gap);
    }
    for (&n, st) in steps.iter().zip(&states) {
        // First coarse knot below the horizon, reached in one step.
        let mut gap = 0.0f64;
        let two = run_scheme(v, &TimeGrid::uniform(horizon, 2 * n)?, settings)?;
        for &x in xs {
            for &y in ys {
                gap = gap.max((st.knot_value(n - 1, x, y)? - two.knot_value(2 * n - 2, x, y)?).abs());
            }
        }
        local_gaps.push(gap);
    }
    let order = |g: &[f64]| {
        (g.len() >= 2).then(|| {
            let r: Vec<f64> = g.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
            r.iter().sum::<f64>() / r.len() as f64
        })
    };
    Ok(RefinementReport {
        steps: steps.to_vec(),
        global_order: order(&knot_gaps),
        local_order: order(&local_gaps),
        knot_gaps,
        local_gaps,
    })
}
