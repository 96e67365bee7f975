//! Collective and point anomaly detection for univariate and multivariate
//! time series.
//!
//! The crate bundles four detector families behind a common set of types:
//!
//! - [`capa_uv`] / [`scapa_uv`]: univariate collective-and-point anomaly
//!   detection via penalised-saving dynamic programming, offline or
//!   replayed per epoch.
//! - [`capa_mv`] / [`scapa_mv`]: the subset-multivariate extension with
//!   cross-component lags and order-statistic penalty pooling.
//! - [`pass`]: window scanning with higher-criticism p-value pooling and
//!   greedy disjoint segment extraction.
//! - [`bard`]: Bayesian filtering over epidemic segment structure with
//!   posterior sampling.
//!
//! Synthetic benchmark data comes from [`datagen::simulate`], and robust
//! preprocessing lives in [`transforms`].

pub mod bard;
pub mod capa_mv;
pub mod capa_uv;
pub mod datagen;
pub mod error;
pub mod pass;
pub mod penalties;
pub mod transforms;
pub mod types;

pub use bard::{bard_filter, bard_sampler, BardConfig, BardPriors, FilterOutput, PosteriorSummary};
pub use capa_mv::{capa_mv, scapa_mv, SequentialMvResult};
pub use capa_uv::{capa_uv, scapa_uv, SequentialUvResult};
pub use datagen::{simulate, SimSpec};
pub use error::{Error, Result};
pub use pass::{higher_criticism, pass, PassConfig, PassResult, PassSegment};
pub use penalties::{
    default_penalties_mv, default_penalties_uv, inflated_penalties_mv, inflated_penalties_uv,
    PenaltySchedule,
};
pub use transforms::{
    ac_corrected, robust_ar1, robustscale, sequential_robustscale, Ar1Estimate, RobustScaleParams,
};
pub use types::{
    AnomalySet, CollectiveAnomaly, ComponentRecord, CostType, DetectorConfig, PenaltyChoice,
    PointAnomaly, TimeSeriesMatrix, TransformKind,
};
