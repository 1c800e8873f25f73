//! Stochastic factorial estimation of causal effects.
//!
//! Every pair of individuals is read as a noisy factorial treatment. A
//! position per individual is fitted so that pair geometry reproduces
//! outcome differences, and per-factor effects are read off coordinate gaps
//! between treated and control means.

pub mod baselines;
pub mod benchmark;
pub mod data;
pub mod effects;
pub mod error;
pub mod optimizer;
pub mod pairwise;
pub mod persist;
pub mod simulation;

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use baselines::{ate_diff_means, ate_mahalanobis, ate_ols, ate_ps, fit_propensity, EstimateReport, PsMode};
pub use benchmark::{run_benchmark, BenchmarkConfig, Method};
pub use data::{denormalize_effect, unity_normalize, Column, ColumnKind, Dataset, NormalizedData};
pub use effects::{ate, column_cosine, ite, select_variables, AteResult, EffectMode, EffectOptions};
pub use error::{Result, SfeError};
pub use optimizer::{fit, EffectSpace, FitConfig};
pub use persist::{load_space, save_space};
pub use simulation::{oracle_ate, simulate, DgpConfig, DgpKind, SimulatedPopulation};
