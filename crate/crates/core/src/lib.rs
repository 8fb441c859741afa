//! Regularized kernel Fisher discriminant analysis (KFDA) two-sample test.
//!
//! Typical use: build a [`GramBundle`] from a [`TwoSample`] and a
//! [`KernelSpec`], then call [`run_kfda_test`] with a [`TestConfig`].

pub mod calibration;
pub mod error;
pub mod gram;
pub mod kernel;
pub mod power;
pub mod rng;
pub mod statistic;

pub use calibration::{
    kfda_sweep, mixture_quantile, normal_cdf, normal_quantile, resample_critical_value, run_kfda_test,
    run_mmd_test, CalibrationMethod, CalibrationResult, KfdaTest, MixtureSpec, NullDistribution, TestConfig,
};
pub use error::{Error, Result};
pub use gram::{build_bundle, d_r, GramBundle, SpectralSummary, TwoSample};
pub use kernel::{bernoulli_polynomial, eval_kernel, gram, median_heuristic, GramMatrix, KernelSpec, Points};
pub use power::{
    decaying_gamma_theoretical_power, directional_shift, empirical_power_curve, fixed_gamma_theoretical_power,
    fourier_basis, roc_curve, sample_alternative, AlternativeModel, Contamination, Generator, PowerPoint,
    RocPoint, Scenario, ShiftVector, StudyConfig,
};
pub use statistic::{
    hotelling_oracle, kfda_from_bundle, kfda_statistic, mmd_statistic, population_chi2_identity, Chi2Identity,
    GammaSchedule, StatisticRequest, TestStatisticValue,
};
