//! Synthetic data generation for examples, tests, and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::types::TimeSeriesMatrix;

/// Specification of a planted-anomaly dataset: an n x p standard-normal
/// matrix with mean shifts of size `mu` added over the planted windows.
/// Anomaly j covers rows `starts[j] ..= starts[j] + duration - 1`
/// (1-based) and the first `ceil(proportions[j] * p)` variates.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub n: usize,
    pub p: usize,
    pub mu: f64,
    pub starts: Vec<usize>,
    pub duration: usize,
    pub proportions: Vec<f64>,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(
        n: usize,
        p: usize,
        mu: f64,
        starts: Vec<usize>,
        duration: usize,
        proportions: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let spec = Self { n, p, mu, starts, duration, proportions, seed };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidArgument("n and p must be positive".into()));
        }
        if self.starts.len() != self.proportions.len() {
            return Err(Error::InvalidArgument(
                "starts and proportions must have the same length".into(),
            ));
        }
        if !self.starts.is_empty() && self.duration == 0 {
            return Err(Error::InvalidArgument("duration must be positive".into()));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidArgument("mu must be finite".into()));
        }
        for (j, &s) in self.starts.iter().enumerate() {
            if s == 0 || s + self.duration - 1 > self.n {
                return Err(Error::InvalidArgument(format!(
                    "anomaly {} at rows {s}..{} leaves the series 1..{}",
                    j + 1,
                    s + self.duration - 1,
                    self.n
                )));
            }
            if j + 1 < self.starts.len() && self.starts[j + 1] < s + self.duration {
                return Err(Error::InvalidArgument(format!(
                    "anomalies {} and {} overlap",
                    j + 1,
                    j + 2
                )));
            }
        }
        for &q in &self.proportions {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "proportions must lie in (0, 1], got {q}"
                )));
            }
        }
        Ok(())
    }

    /// Number of affected variates of anomaly `j` (ceil of proportion * p).
    pub fn affected_variates(&self, j: usize) -> usize {
        ((self.proportions[j] * self.p as f64).ceil() as usize).max(1)
    }
}

/// Generate the matrix described by `spec`. Columns are generated from
/// independent seeded streams, so the output is deterministic in the seed
/// and independent of evaluation order.
pub fn simulate(spec: &SimSpec) -> Result<TimeSeriesMatrix> {
    spec.validate()?;
    let mut master = ChaCha12Rng::seed_from_u64(spec.seed);
    let col_seeds: Vec<u64> = (0..spec.p).map(|_| master.gen()).collect();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(spec.p);
    for (j, &cs) in col_seeds.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(cs);
        let mut col: Vec<f64> = (0..spec.n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for (a, &s) in spec.starts.iter().enumerate() {
            if j < spec.affected_variates(a) {
                for v in col.iter_mut().skip(s - 1).take(spec.duration) {
                    *v += spec.mu;
                }
            }
        }
        columns.push(col);
    }
    TimeSeriesMatrix::from_columns(&columns)
}
