//! Goodness-of-fit testing for Gaussian dependence based on the 20/60/20
//! conditional-covariance rule.

pub mod conditional_moments;
pub mod constants;
pub mod copulas;
pub mod error;
pub mod monte_carlo;
pub mod pipeline;
pub mod rng;
pub mod special;
pub mod test_statistics;

pub use benchmark_tests::{BenchKind, ScaledResiduals};
pub use conditional_moments::{CondMoments, LoadingFactor, OrderedSample, QuantileSplit};
pub use constants::{compute_constants, split_constants, SplitConstants};
pub use copulas::{BivariateSample, CopulaSpec};
pub use error::{Error, Result};
pub use test_statistics::{RejectionSide, StatKind, UnconditionalMoments};
pub use monte_carlo::{NullDistribution, PowerCell, Statistic, Threshold};
pub use pipeline::{AnalysisOptions, AnalysisReport, BandMatrices, NullCache, PairReport, PricePanel, ReturnPanel};
