//! Small-horizon value-function expansions for a stochastic-volatility
//! market with jumps, the close-to-optimal portfolio built from them, and a
//! jump-diffusion Monte Carlo engine used to verify both.

pub mod benchmark;
pub mod config;
pub mod error;
pub mod expansion;
pub mod levy;
pub mod reports;
pub mod market;
pub mod residual;
pub mod scheme;
pub mod sim;
pub mod utility;

pub use error::{Error, Result};
pub use utility::{GrowthEnvelope, RatioBundle, UtilitySpec};
pub use levy::{Amplitude, LevyConfig, LevyRule, LevySpec, Measure, QuadScheme, QuadratureConfig};
pub use market::{CoefficientBundle, MarketSpec, ScalarField};
pub use expansion::{Envelope, EnvelopeSettings, ExpansionMode, U1Partials, ValueExpansion};
pub use residual::{CandidateKind, CandidateValue, ExpansionCandidate, ResidualReport, SignClass};
pub use benchmark::{Benchmark, BenchmarkParams, BenchmarkSpec};
pub use scheme::{run_scheme, SchemeSettings, SchemeState, SurfaceMode, TimeGrid};
pub use sim::{simulate, ExpansionPolicy, FnPolicy, PathBundle, Policy, SimConfig};
pub use config::{PolicySource, RunConfig, RunSection, VerifySettings};
pub use reports::{value_curve, value_table, verify, Check, CurveRow, PortfolioRecord, ValueRow, VerifyReport};
