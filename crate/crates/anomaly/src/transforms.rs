//! Robust standardisation and autocorrelation correction.
//!
//! Detection assumes typical data of mean 0 and variance 1, so every
//! detector runs one of these transforms first. Each operates on a single
//! column; multivariate input is handled column by column.

use crate::error::{Error, Result};
use crate::types::{TimeSeriesMatrix, TransformKind};

/// Scale factor making the MAD consistent for the Gaussian standard
/// deviation.
pub const MAD_CONSISTENCY: f64 = 1.4826;
/// IQR of the standard Gaussian; dividing the IQR by this gives a
/// consistent scale estimate.
pub const IQR_CONSISTENCY: f64 = 1.349;

/// Location/scale/autocorrelation estimates behind a transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustScaleParams {
    /// Median.
    pub mu_hat: f64,
    /// Consistency-adjusted scale estimate (> 0).
    pub sigma_hat: f64,
    /// AR(1) estimate; 0 for plain scaling.
    pub rho_hat: f64,
}

/// Robust AR(1) estimate plus a degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Estimate {
    pub rho: f64,
    /// Set when the series had no usable spread and 0 was returned.
    pub degenerate: bool,
}

fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

fn median_of_sorted(s: &[f64]) -> f64 {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Median of a slice.
pub fn median(x: &[f64]) -> f64 {
    median_of_sorted(&sorted_copy(x))
}

/// Raw median absolute deviation (no consistency factor).
pub fn mad_raw(x: &[f64]) -> f64 {
    let m = median(x);
    let dev: Vec<f64> = x.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Linear-interpolation quantile (R type 7).
fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let n = s.len();
    if n == 1 {
        return s[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < n {
        s[lo] + frac * (s[lo + 1] - s[lo])
    } else {
        s[n - 1]
    }
}

/// Centre by the median and scale by the consistency-adjusted MAD.
pub fn robustscale(x: &[f64]) -> Result<(Vec<f64>, RobustScaleParams)> {
    robustscale_for_variate(x, 1)
}

fn robustscale_for_variate(x: &[f64], variate: usize) -> Result<(Vec<f64>, RobustScaleParams)> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument("robustscale needs at least 2 observations".into()));
    }
    let m = median(x);
    let mad = mad_raw(x);
    if mad <= 0.0 {
        return Err(Error::DegenerateScale { variate });
    }
    let sigma = MAD_CONSISTENCY * mad;
    let out = x.iter().map(|v| (v - m) / sigma).collect();
    Ok((out, RobustScaleParams { mu_hat: m, sigma_hat: sigma, rho_hat: 0.0 }))
}

/// Average ranks with ties shared.
fn ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Robust lag-1 autocorrelation: Spearman correlation of the lag-1 pairs
/// mapped to a Pearson equivalent via 2 sin(pi rho_s / 6), clamped to
/// [-0.999, 0.999].
pub fn robust_ar1(x: &[f64]) -> Result<Ar1Estimate> {
    if x.len() < 3 {
        return Err(Error::InvalidArgument("robust_ar1 needs at least 3 observations".into()));
    }
    let lead: Vec<f64> = x[..x.len() - 1].to_vec();
    let lag: Vec<f64> = x[1..].to_vec();
    let ra = ranks(&lead);
    let rb = ranks(&lag);
    match pearson(&ra, &rb) {
        None => Ok(Ar1Estimate { rho: 0.0, degenerate: true }),
        Some(rho_s) => {
            let rho = 2.0 * (std::f64::consts::PI * rho_s / 6.0).sin();
            Ok(Ar1Estimate { rho: rho.clamp(-0.999, 0.999), degenerate: false })
        }
    }
}

/// Median/IQR scaling with the AR(1) shrink factor
/// sqrt((1 - rho) / (1 + rho)). Only valid when hunting mean anomalies.
pub fn ac_corrected(x: &[f64]) -> Result<(Vec<f64>, RobustScaleParams)> {
    ac_corrected_for_variate(x, 1)
}

fn ac_corrected_for_variate(x: &[f64], variate: usize) -> Result<(Vec<f64>, RobustScaleParams)> {
    if x.len() < 3 {
        return Err(Error::InvalidArgument("ac_corrected needs at least 3 observations".into()));
    }
    let s = sorted_copy(x);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    if iqr <= 0.0 {
        return Err(Error::DegenerateScale { variate });
    }
    let m = median_of_sorted(&s);
    let sigma = iqr / IQR_CONSISTENCY;
    let est = robust_ar1(x)?;
    let rho = est.rho;
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidEstimate(format!("autocorrelation estimate {rho} out of range")));
    }
    let factor = ((1.0 - rho) / (1.0 + rho)).sqrt();
    let out = x.iter().map(|v| factor * (v - m) / sigma).collect();
    Ok((out, RobustScaleParams { mu_hat: m, sigma_hat: sigma, rho_hat: rho }))
}

// ---------------------------------------------------------------------------
// Sequential scaling: running median/MAD over the prefix seen so far
// ---------------------------------------------------------------------------

/// Fenwick tree over compressed value ranks supporting k-th order
/// statistics of the running prefix.
struct PrefixOrderStats {
    grid: Vec<f64>,
    tree: Vec<usize>,
    count: usize,
}

impl PrefixOrderStats {
    fn new(all_values: &[f64]) -> Self {
        let mut grid = all_values.to_vec();
        grid.sort_by(|a, b| a.total_cmp(b));
        grid.dedup();
        let len = grid.len();
        Self { grid, tree: vec![0; len + 1], count: 0 }
    }

    fn insert(&mut self, v: f64) {
        let mut i = self.grid.partition_point(|g| *g < v) + 1;
        while i <= self.grid.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
        self.count += 1;
    }

    /// Number of inserted values <= v.
    fn rank(&self, v: f64) -> usize {
        let mut i = self.grid.partition_point(|g| *g <= v);
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    /// k-th smallest inserted value (1-based k).
    fn select(&self, k: usize) -> f64 {
        debug_assert!(k >= 1 && k <= self.count);
        let mut pos = 0;
        let mut remaining = k;
        let mut step = self.tree.len().next_power_of_two() / 2;
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] < remaining {
                remaining -= self.tree[next];
                pos = next;
            }
            step /= 2;
        }
        self.grid[pos]
    }

    fn running_median(&self) -> f64 {
        let t = self.count;
        if t % 2 == 1 {
            self.select(t / 2 + 1)
        } else {
            0.5 * (self.select(t / 2) + self.select(t / 2 + 1))
        }
    }

    /// Count of inserted values within [m - r, m + r].
    fn count_within(&self, m: f64, r: f64) -> usize {
        let hi = self.rank(m + r);
        let lo_exclusive = {
            // rank of values < m - r
            let v = m - r;
            let mut i = self.grid.partition_point(|g| *g < v);
            let mut s = 0;
            while i > 0 {
                s += self.tree[i];
                i -= i & i.wrapping_neg();
            }
            s
        };
        hi - lo_exclusive
    }

    /// Exact k-th smallest of |x - m| over the inserted prefix.
    fn kth_distance(&self, m: f64, k: usize) -> f64 {
        debug_assert!(k >= 1 && k <= self.count);
        let mut lo = 0.0;
        let mut hi = (self.grid[self.grid.len() - 1] - m).abs().max((self.grid[0] - m).abs());
        if self.count_within(m, 0.0) >= k {
            return 0.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_within(m, mid) >= k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // Snap to the smallest realisable distance in (lo, hi]: candidate
        // distances come from grid values near m - hi and m + hi.
        let mut best = hi;
        let mut found = false;
        let lo_band_start = self.grid.partition_point(|g| *g < m - hi);
        let lo_band_end = self.grid.partition_point(|g| *g <= m - lo);
        for g in &self.grid[lo_band_start..lo_band_end] {
            let d = (m - g).abs();
            if d > lo && self.count_within(m, d) >= k && (!found || d < best) {
                best = d;
                found = true;
            }
        }
        let hi_band_start = self.grid.partition_point(|g| *g < m + lo);
        let hi_band_end = self.grid.partition_point(|g| *g <= m + hi);
        for g in &self.grid[hi_band_start..hi_band_end] {
            let d = (g - m).abs();
            if d > lo && self.count_within(m, d) >= k && (!found || d < best) {
                best = d;
                found = true;
            }
        }
        if found {
            best
        } else {
            hi
        }
    }

    fn running_mad(&self, m: f64) -> f64 {
        let t = self.count;
        if t % 2 == 1 {
            self.kth_distance(m, t / 2 + 1)
        } else {
            0.5 * (self.kth_distance(m, t / 2) + self.kth_distance(m, t / 2 + 1))
        }
    }
}

/// Online analogue of [`robustscale`]: the output at time t is scaled with
/// the running median and MAD of `x[..=t]`. The first `burn_in` outputs
/// reuse the estimates available at the end of the burn-in. A degenerate
/// running MAD carries the last valid scale forward (or 1 before any
/// valid scale exists).
pub fn sequential_robustscale(x: &[f64], burn_in: usize) -> Result<Vec<f64>> {
    if burn_in < 2 {
        return Err(Error::InvalidArgument("burn_in must be at least 2".into()));
    }
    let n = x.len();
    if n < burn_in {
        return Err(Error::InvalidArgument(format!(
            "series of length {n} is shorter than burn_in {burn_in}"
        )));
    }
    let mut stats = PrefixOrderStats::new(x);
    let mut medians = vec![0.0; n];
    let mut sigmas = vec![0.0; n];
    let mut last_valid_sigma: Option<f64> = None;
    for t in 0..n {
        stats.insert(x[t]);
        let m = stats.running_median();
        let mad = stats.running_mad(m);
        let sigma = if mad > 0.0 {
            let s = MAD_CONSISTENCY * mad;
            last_valid_sigma = Some(s);
            s
        } else {
            last_valid_sigma.unwrap_or(1.0)
        };
        medians[t] = m;
        sigmas[t] = sigma;
    }
    let mut out = vec![0.0; n];
    for t in 0..n {
        let est = t.max(burn_in - 1);
        out[t] = (x[t] - medians[est]) / sigmas[est];
    }
    Ok(out)
}

/// Apply a transform column by column. Returns the transformed matrix and
/// the per-column parameters.
pub fn apply_transform(
    kind: TransformKind,
    x: &TimeSeriesMatrix,
    burn_in: usize,
) -> Result<(TimeSeriesMatrix, Vec<RobustScaleParams>)> {
    let mut out = x.clone();
    let mut params = Vec::with_capacity(x.p());
    for i in 0..x.p() {
        let col = x.column(i);
        match kind {
            TransformKind::None => {
                params.push(RobustScaleParams { mu_hat: 0.0, sigma_hat: 1.0, rho_hat: 0.0 });
            }
            TransformKind::RobustScale => {
                let (scaled, ps) = robustscale_for_variate(&col, i + 1)?;
                out.set_column(i, &scaled);
                params.push(ps);
            }
            TransformKind::AcCorrected => {
                let (scaled, ps) = ac_corrected_for_variate(&col, i + 1)?;
                out.set_column(i, &scaled);
                params.push(ps);
            }
            TransformKind::Sequential => {
                let scaled = sequential_robustscale(&col, burn_in)?;
                out.set_column(i, &scaled);
                params.push(RobustScaleParams { mu_hat: 0.0, sigma_hat: 1.0, rho_hat: 0.0 });
            }
        }
    }
    Ok((out, params))
}
