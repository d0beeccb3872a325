//! Numerical laboratory for Mandelbrot multiplicative cascades.
//!
//! The crate computes exact and sampled moments of weighted sums over rooted
//! trees, `Θ(X, α) = Σ_v α(v) Π_{u ⪯ v} X(u)`, of which the cascade total mass
//! `Y_n` is the level-`n` special case, together with the `q → q/2` weight
//! reduction, two-sided moment bounds and growth-rate verdicts.

pub mod analysis;
pub mod error;
pub mod exact_moments;
pub mod monte_carlo;
pub mod numeric;
pub mod oracle;
pub mod reduction;
pub mod suites;
pub mod tree;
pub mod weight_model;

pub use error::{CascadeError, Result};
pub use numeric::{DiscreteLaw, RationalLaw, Scalar};
pub use tree::{expand_profile, level_sizes, LevelProfile, SparseTree, SparseWeights, TreeWeight};
pub use weight_model::{
    critical_two_point, find_critical_exponent, is_totally_critical,
    verify_strict_subcritical_interior, CriticalExponent, CriticalityReport, Regime,
    StructureFunction, WeightDistribution,
};
pub use reduction::{evaluate_bounds, reduce, reduction_pipeline, BoundsReport, PipelineOutcome, ReductionOutput};
pub use oracle::{exact_moment_by_enumeration, EnumeratedSpace, MartingaleDecomposition};
pub use exact_moments::{
    cascade_moments, growth_series, subcritical_fixed_point, theta_moments, Domain, MomentTable,
    MomentVector, ThetaMoments,
};
pub use monte_carlo::{estimate_moment, sample_yn, McConfig, McEstimate};
pub use analysis::{fit_growth, theorem_report, CheckSpec, Engine, FitMode, GrowthFit, RegimeLabel, Verdict};
pub use suites::{run_bundle, run_suite, BundleConfig, BundleReport, SuiteReport, SuiteSpec};
