//! Shared domain types: the input matrix, detection results, and detector
//! configuration.
//!
//! All indices in user-facing output are 1-based; internal code is 0-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalties::PenaltySchedule;

/// An n x p matrix of observations, rows in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesMatrix {
    values: Vec<f64>, // row-major, n * p
    n: usize,
    p: usize,
    variate_names: Option<Vec<String>>,
}

impl TimeSeriesMatrix {
    /// Build from row-major values. Rejects empty or non-finite input.
    pub fn new(values: Vec<f64>, n: usize, p: usize) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {n} x {p}"
            )));
        }
        if values.len() != n * p {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for a {n} x {p} matrix, got {}",
                n * p,
                values.len()
            )));
        }
        for (idx, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    row: idx / p + 1,
                    column: idx % p + 1,
                });
            }
        }
        Ok(Self { values, n, p, variate_names: None })
    }

    /// Univariate series.
    pub fn from_vec(x: Vec<f64>) -> Result<Self> {
        let n = x.len();
        Self::new(x, n, 1)
    }

    /// Build from columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidArgument("no columns supplied".into()));
        }
        let n = columns[0].len();
        let p = columns.len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidArgument("columns have unequal lengths".into()));
        }
        let mut values = vec![0.0; n * p];
        for (j, col) in columns.iter().enumerate() {
            for (t, v) in col.iter().enumerate() {
                values[t * p + j] = *v;
            }
        }
        Self::new(values, n, p)
    }

    pub fn with_variate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(Error::InvalidArgument(format!(
                "expected {} variate names, got {}",
                self.p,
                names.len()
            )));
        }
        self.variate_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn variate_names(&self) -> Option<&[String]> {
        self.variate_names.as_deref()
    }

    /// Value at 0-based (time, variate).
    #[inline]
    pub fn value(&self, t: usize, i: usize) -> f64 {
        self.values[t * self.p + i]
    }

    /// Copy of column `i` (0-based).
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n).map(|t| self.value(t, i)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Replace column `i` with new values of the same length.
    pub(crate) fn set_column(&mut self, i: usize, col: &[f64]) {
        debug_assert_eq!(col.len(), self.n);
        for (t, v) in col.iter().enumerate() {
            self.values[t * self.p + i] = *v;
        }
    }
}

/// Cost model for segment savings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CostType {
    /// Anomalous mean against an N(0,1) background.
    Mean,
    /// Anomalous mean and/or variance.
    #[default]
    MeanVar,
}

/// Preprocessing applied to each column before detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// Centre by the median and scale by the consistency-adjusted MAD.
    #[default]
    RobustScale,
    /// Median/IQR scaling with an AR(1) shrink factor; mean type only.
    AcCorrected,
    /// Running median/MAD using only data observed so far.
    Sequential,
    /// Use the data as-is.
    None,
}

impl TransformKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "robustscale" => Ok(Self::RobustScale),
            "ac_corrected" => Ok(Self::AcCorrected),
            "sequential" => Ok(Self::Sequential),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidArgument(format!("unknown transform '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::RobustScale => "robustscale",
            Self::AcCorrected => "ac_corrected",
            Self::Sequential => "sequential",
            Self::None => "none",
        }
    }
}

/// Penalty selection: library defaults or a user-supplied schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyChoice {
    #[default]
    Default,
    Custom(PenaltySchedule),
}

/// Configuration shared by the CAPA-family detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub cost_type: CostType,
    /// Minimum collective anomaly length; at least 2 so that point
    /// anomalies stay distinguishable.
    pub min_seg_len: usize,
    /// Maximum collective anomaly length; `None` means the data length.
    pub max_seg_len: Option<usize>,
    /// Maximum start/end lag (multivariate only).
    pub max_lag: usize,
    pub transform: TransformKind,
    pub penalties: PenaltyChoice,
    /// Candidate pruning in the dynamic program.
    pub prune: bool,
    /// For the meanvar point saving the point penalty already appears
    /// inside the saving; set this to skip subtracting it a second time
    /// in the objective.
    pub embedded_point_penalty_only: bool,
    /// Lags are only exercised with the mean cost; set this to allow
    /// `max_lag > 0` together with `CostType::MeanVar`.
    pub allow_meanvar_lags: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            cost_type: CostType::MeanVar,
            min_seg_len: 10,
            max_seg_len: None,
            max_lag: 0,
            transform: TransformKind::RobustScale,
            penalties: PenaltyChoice::Default,
            prune: true,
            embedded_point_penalty_only: false,
            allow_meanvar_lags: false,
        }
    }
}

impl DetectorConfig {
    /// Offline detection with the given cost model.
    pub fn offline(cost_type: CostType) -> Self {
        Self { cost_type, ..Self::default() }
    }

    /// Sequential detection: same settings but an online transform.
    pub fn sequential(cost_type: CostType) -> Self {
        Self { cost_type, transform: TransformKind::Sequential, ..Self::default() }
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.min_seg_len < 2 {
            return Err(Error::InvalidArgument(format!(
                "min_seg_len must be at least 2, got {}",
                self.min_seg_len
            )));
        }
        if let Some(m) = self.max_seg_len {
            if m < self.min_seg_len {
                return Err(Error::InvalidArgument(format!(
                    "max_seg_len {} is below min_seg_len {}",
                    m, self.min_seg_len
                )));
            }
        }
        if n < self.min_seg_len {
            return Err(Error::InvalidArgument(format!(
                "series of length {n} is shorter than min_seg_len {}",
                self.min_seg_len
            )));
        }
        if p == 1 && self.max_lag > 0 {
            return Err(Error::InvalidArgument("max_lag must be 0 for univariate data".into()));
        }
        if self.cost_type == CostType::MeanVar && self.max_lag > 0 && !self.allow_meanvar_lags {
            return Err(Error::InvalidArgument(
                "max_lag > 0 with the meanvar cost requires allow_meanvar_lags".into(),
            ));
        }
        if self.cost_type == CostType::MeanVar && self.transform == TransformKind::AcCorrected {
            return Err(Error::InvalidArgument(
                "the ac_corrected transform is only valid when looking for mean anomalies".into(),
            ));
        }
        Ok(())
    }

    /// Effective maximum segment length for a series of length `n`.
    pub fn effective_max_seg_len(&self, n: usize) -> usize {
        self.max_seg_len.unwrap_or(n).min(n)
    }
}

/// Per-variate record inside a collective anomaly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    /// 1-based variate index.
    pub variate: usize,
    pub start_lag: usize,
    pub end_lag: usize,
    /// Squared mean of the lag-adjusted window on the transformed scale.
    pub mean_change: f64,
    /// Maximum-likelihood variance of the window (meanvar cost only).
    pub variance_change: Option<f64>,
    /// The component's saving; for the mean cost this equals the
    /// effective length times `mean_change`.
    pub test_statistic: f64,
    /// Mean of the same window on the raw data scale.
    pub raw_mean: f64,
    /// Set when the segment variance hit the numerical floor.
    #[serde(default)]
    pub variance_floored: bool,
}

/// A detected collective anomaly: 1-based inclusive [start, end] plus the
/// affected components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectiveAnomaly {
    pub start: usize,
    pub end: usize,
    pub components: Vec<ComponentRecord>,
}

/// A detected point anomaly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAnomaly {
    /// 1-based time index.
    pub location: usize,
    /// 1-based variate index.
    pub variate: usize,
    /// Point saving of the transformed observation.
    pub strength: f64,
}

/// Full result of a CAPA-family run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySet {
    pub collective: Vec<CollectiveAnomaly>,
    pub points: Vec<PointAnomaly>,
    pub n: usize,
    pub p: usize,
    pub config_echo: DetectorConfig,
}

impl AnomalySet {
    pub(crate) fn new(
        mut collective: Vec<CollectiveAnomaly>,
        mut points: Vec<PointAnomaly>,
        n: usize,
        p: usize,
        config_echo: DetectorConfig,
    ) -> Self {
        collective.sort_by_key(|c| c.start);
        points.sort_by(|a, b| (a.location, a.variate).cmp(&(b.location, b.variate)));
        Self { collective, points, n, p, config_echo }
    }

    pub fn is_empty(&self) -> bool {
        self.collective.is_empty() && self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rejects_non_finite() {
        let err = TimeSeriesMatrix::new(vec![1.0, f64::NAN, 3.0, 4.0], 2, 2).unwrap_err();
        assert_eq!(err, Error::NonFiniteValue { row: 1, column: 2 });
    }

    #[test]
    fn matrix_rejects_empty() {
        assert!(TimeSeriesMatrix::new(vec![], 0, 1).is_err());
        assert!(TimeSeriesMatrix::from_vec(vec![]).is_err());
    }

    #[test]
    fn column_round_trip() {
        let m =
            TimeSeriesMatrix::from_columns(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(m.n(), 3);
        assert_eq!(m.p(), 2);
        assert_eq!(m.column(1), vec![4.0, 5.0, 6.0]);
        assert_eq!(m.value(2, 0), 3.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = DetectorConfig::default();
        cfg.min_seg_len = 1;
        assert!(cfg.validate(100, 1).is_err());

        let mut cfg = DetectorConfig::default();
        cfg.max_lag = 3;
        assert!(cfg.validate(100, 1).is_err());
        // meanvar with lags needs the explicit override
        assert!(cfg.validate(100, 4).is_err());
        cfg.allow_meanvar_lags = true;
        assert!(cfg.validate(100, 4).is_ok());

        let cfg = DetectorConfig::offline(CostType::Mean);
        assert!(cfg.validate(5, 1).is_err()); // shorter than min_seg_len
        assert!(cfg.validate(10, 1).is_ok());
    }
}
