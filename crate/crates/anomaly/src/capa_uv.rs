//! Univariate collective and point anomaly detection.
//!
//! Maximises the penalised saving of a segmentation into typical points,
//! point anomalies, and collective anomalies via optimal partitioning:
//!
//! B(t) = max{ B(t-1),
//!             B(t-1) + S'(x_t) - beta_tilde,
//!             max_l B(t-l) + S(t-l+1, t) - beta(l) }
//!
//! The candidate-start set can be pruned without changing the result; the
//! margin accounts for the penalty structure and the point-anomaly escape
//! route of short future windows.

use crate::error::{Error, Result};
use crate::penalties::{default_penalties_uv, PenaltySchedule};
use crate::transforms::apply_transform;
use crate::types::{
    AnomalySet, CollectiveAnomaly, ComponentRecord, CostType, DetectorConfig, PenaltyChoice,
    PointAnomaly, TimeSeriesMatrix,
};

/// Lower bound for the within-segment MLE variance inside the meanvar
/// saving; keeps near-constant segments detectable instead of singular.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Default burn-in for the sequential transform (matches the default
/// minimum segment length).
pub const SEQUENTIAL_BURN_IN: usize = 10;

/// Prefix sums answering segment saving queries in O(1).
#[derive(Debug, Clone)]
pub struct SavingCost {
    prefix_sums: Vec<f64>,
    prefix_sq_sums: Vec<f64>,
}

impl SavingCost {
    pub fn new(x: &[f64]) -> Self {
        let n = x.len();
        let mut prefix_sums = vec![0.0; n + 1];
        let mut prefix_sq_sums = vec![0.0; n + 1];
        for (t, v) in x.iter().enumerate() {
            prefix_sums[t + 1] = prefix_sums[t] + v;
            prefix_sq_sums[t + 1] = prefix_sq_sums[t] + v * v;
        }
        Self { prefix_sums, prefix_sq_sums }
    }

    /// Sum over the 0-based inclusive segment [s, e].
    #[inline]
    pub fn seg_sum(&self, s: usize, e: usize) -> f64 {
        self.prefix_sums[e + 1] - self.prefix_sums[s]
    }

    #[inline]
    pub fn seg_sq_sum(&self, s: usize, e: usize) -> f64 {
        self.prefix_sq_sums[e + 1] - self.prefix_sq_sums[s]
    }

    #[inline]
    pub fn seg_mean(&self, s: usize, e: usize) -> f64 {
        self.seg_sum(s, e) / (e - s + 1) as f64
    }

    /// MLE variance of the segment (not floored).
    #[inline]
    pub fn seg_var(&self, s: usize, e: usize) -> f64 {
        let len = (e - s + 1) as f64;
        let sum = self.seg_sum(s, e);
        ((self.seg_sq_sum(s, e) - sum * sum / len) / len).max(0.0)
    }

    /// Mean-anomaly saving: (e - s + 1) * mean^2.
    #[inline]
    pub fn saving_mean(&self, s: usize, e: usize) -> f64 {
        let len = (e - s + 1) as f64;
        let sum = self.seg_sum(s, e);
        sum * sum / len
    }

    /// Mean/variance saving with the floored variance; the flag records
    /// whether the floor was hit.
    #[inline]
    pub fn saving_meanvar(&self, s: usize, e: usize) -> (f64, bool) {
        let len = (e - s + 1) as f64;
        let var = self.seg_var(s, e);
        let floored = var < VARIANCE_FLOOR;
        let v = var.max(VARIANCE_FLOOR);
        (self.seg_sq_sum(s, e) - len * (1.0 + v.ln()), floored)
    }

    /// Saving under the given cost type (floor flag dropped).
    #[inline]
    pub fn saving(&self, cost_type: CostType, s: usize, e: usize) -> f64 {
        match cost_type {
            CostType::Mean => self.saving_mean(s, e),
            CostType::MeanVar => self.saving_meanvar(s, e).0,
        }
    }
}

/// Point-anomaly saving of a single transformed observation.
#[inline]
pub fn point_saving(x: f64, beta_tilde: f64, cost_type: CostType) -> f64 {
    match cost_type {
        CostType::Mean => x * x,
        CostType::MeanVar => x * x - 1.0 - ((-beta_tilde).exp() + x * x).ln(),
    }
}

/// Backpointer of the dynamic program at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Choice {
    Typical,
    Point,
    /// 0-based index of the segment start.
    Collective { start: usize },
}

#[derive(Debug)]
pub(crate) struct DpTables {
    pub best: Vec<f64>,
    pub choice: Vec<Choice>,
}

/// Penalty subtracted from the point saving in the objective. For the
/// meanvar cost the point penalty already appears inside the saving, so
/// `embedded_only` skips the second subtraction.
#[inline]
fn point_penalty_sub(cfg: &DetectorConfig, beta_tilde: f64) -> f64 {
    if cfg.cost_type == CostType::MeanVar && cfg.embedded_point_penalty_only {
        0.0
    } else {
        beta_tilde
    }
}

/// Margin below which a candidate start can never again become optimal.
fn prune_margin(xs: &[f64], cfg: &DetectorConfig, sched: &PenaltySchedule) -> f64 {
    let beta_min = sched.beta.iter().cloned().fold(f64::INFINITY, f64::min);
    // tightest decrease of the penalty when a segment gets longer
    let m_a = if sched.beta.len() == 1 {
        0.0
    } else {
        let mut running_max = sched.beta[0];
        let mut min_inc = f64::INFINITY;
        for b in &sched.beta[1..] {
            min_inc = min_inc.min(b - running_max);
            running_max = running_max.max(*b);
        }
        min_inc.min(0.0)
    };
    let pen_sub = point_penalty_sub(cfg, sched.beta_tilde);
    let zeta = match cfg.cost_type {
        CostType::Mean => pen_sub,
        CostType::MeanVar => {
            let c_floor = -1.0 - VARIANCE_FLOOR.ln();
            let max_sq = xs.iter().fold(0.0f64, |m, v| m.max(v * v));
            let kappa = 1.0 + ((-sched.beta_tilde).exp() + max_sq).ln() + pen_sub;
            c_floor + kappa
        }
    };
    let m_b = beta_min - (cfg.min_seg_len as f64 - 1.0) * zeta;
    m_a.min(m_b)
}

/// Forward pass of the optimal-partitioning recursion over one series.
pub(crate) fn run_dp_uv(xs: &[f64], cfg: &DetectorConfig, sched: &PenaltySchedule) -> DpTables {
    let n = xs.len();
    let max_len = cfg.effective_max_seg_len(n);
    let cost = SavingCost::new(xs);
    let pen_sub = point_penalty_sub(cfg, sched.beta_tilde);
    let margin = if cfg.prune { prune_margin(xs, cfg, sched) } else { 0.0 };

    let mut best = vec![0.0; n + 1];
    let mut choice = vec![Choice::Typical; n + 1];
    // candidate previous indices tau (segment start is tau + 1), ascending
    let mut cands: Vec<usize> = Vec::new();

    for t in 1..=n {
        if t >= cfg.min_seg_len {
            cands.push(t - cfg.min_seg_len);
        }
        // drop candidates whose segment would exceed the maximum length
        while !cands.is_empty() && t - cands[0] > max_len {
            cands.remove(0);
        }

        let mut best_val = best[t - 1];
        let mut ch = Choice::Typical;

        let ps = point_saving(xs[t - 1], sched.beta_tilde, cfg.cost_type);
        let point_val = best[t - 1] + ps - pen_sub;
        if point_val > best_val {
            best_val = point_val;
            ch = Choice::Point;
        }

        // latest start first so ties resolve to the shortest anomaly
        for &tau in cands.iter().rev() {
            let len = t - tau;
            let val = best[tau] + cost.saving(cfg.cost_type, tau, t - 1)
                - sched.beta_for_length(len, cfg.min_seg_len);
            if val > best_val {
                best_val = val;
                ch = Choice::Collective { start: tau };
            }
        }

        best[t] = best_val;
        choice[t] = ch;

        if cfg.prune {
            let threshold = best[t] + margin;
            cands.retain(|&tau| best[tau] + cost.saving(cfg.cost_type, tau, t - 1) >= threshold);
        }
    }

    DpTables { best, choice }
}

fn component_for_segment(
    cost: &SavingCost,
    raw: &SavingCost,
    cost_type: CostType,
    s: usize,
    e: usize,
) -> ComponentRecord {
    let mean = cost.seg_mean(s, e);
    let (test_statistic, variance_change, variance_floored) = match cost_type {
        CostType::Mean => (cost.saving_mean(s, e), None, false),
        CostType::MeanVar => {
            let (sv, fl) = cost.saving_meanvar(s, e);
            (sv, Some(cost.seg_var(s, e).max(VARIANCE_FLOOR)), fl)
        }
    };
    ComponentRecord {
        variate: 1,
        start_lag: 0,
        end_lag: 0,
        mean_change: mean * mean,
        variance_change,
        test_statistic,
        raw_mean: raw.seg_mean(s, e),
        variance_floored,
    }
}

/// Reconstruct the anomaly set by backtracking from `epoch` observations.
fn backtrack_uv(
    tables: &DpTables,
    xs: &[f64],
    raw: &[f64],
    cfg: &DetectorConfig,
    sched: &PenaltySchedule,
    epoch: usize,
    p: usize,
) -> AnomalySet {
    let cost = SavingCost::new(xs);
    let raw_cost = SavingCost::new(raw);
    let mut collective = Vec::new();
    let mut points = Vec::new();
    let mut t = epoch;
    while t > 0 {
        match tables.choice[t] {
            Choice::Typical => t -= 1,
            Choice::Point => {
                points.push(PointAnomaly {
                    location: t,
                    variate: 1,
                    strength: point_saving(xs[t - 1], sched.beta_tilde, cfg.cost_type),
                });
                t -= 1;
            }
            Choice::Collective { start } => {
                collective.push(CollectiveAnomaly {
                    start: start + 1,
                    end: t,
                    components: vec![component_for_segment(
                        &cost,
                        &raw_cost,
                        cfg.cost_type,
                        start,
                        t - 1,
                    )],
                });
                t = start;
            }
        }
    }
    AnomalySet::new(collective, points, xs.len(), p, cfg.clone())
}

fn resolve_penalties_uv(cfg: &DetectorConfig, n: usize) -> Result<PenaltySchedule> {
    let sched = match &cfg.penalties {
        PenaltyChoice::Default => default_penalties_uv(n, cfg.cost_type)?,
        PenaltyChoice::Custom(s) => {
            if s.beta.is_empty() {
                return Err(Error::InvalidArgument(
                    "univariate detection needs a collective penalty (beta)".into(),
                ));
            }
            s.clone()
        }
    };
    sched.validate_for_range(cfg.min_seg_len, cfg.effective_max_seg_len(n))?;
    Ok(sched)
}

/// Result of a sequential run: the forward pass is stored once and the
/// output at any epoch is reconstructed on demand.
#[derive(Debug)]
pub struct SequentialUvResult {
    transformed: Vec<f64>,
    raw: Vec<f64>,
    config: DetectorConfig,
    schedule: PenaltySchedule,
    tables: DpTables,
}

impl SequentialUvResult {
    /// Anomaly set the online algorithm would have reported after
    /// observing `epoch` points (1-based, `epoch <= n`).
    pub fn anomaly_set_at(&self, epoch: usize) -> Result<AnomalySet> {
        if epoch == 0 || epoch > self.raw.len() {
            return Err(Error::InvalidArgument(format!(
                "epoch must lie in [1, {}], got {epoch}",
                self.raw.len()
            )));
        }
        let mut cfg = self.config.clone();
        cfg.penalties = PenaltyChoice::Custom(self.schedule.clone());
        Ok(backtrack_uv(&self.tables, &self.transformed, &self.raw, &cfg, &self.schedule, epoch, 1))
    }

    pub fn n(&self) -> usize {
        self.raw.len()
    }

    /// Final anomaly set (epoch = n).
    pub fn final_set(&self) -> AnomalySet {
        self.anomaly_set_at(self.raw.len()).expect("n is a valid epoch")
    }

    /// Optimal penalised saving at each prefix length.
    pub fn best_savings(&self) -> &[f64] {
        &self.tables.best
    }
}

/// Sequential univariate detection: one forward pass over the whole
/// series, replayable at any epoch. Pass a config built with
/// [`DetectorConfig::sequential`] for the online transform.
pub fn scapa_uv(x: &TimeSeriesMatrix, config: &DetectorConfig) -> Result<SequentialUvResult> {
    if x.p() != 1 {
        return Err(Error::InvalidArgument(format!(
            "univariate detection needs p = 1, got p = {}",
            x.p()
        )));
    }
    config.validate(x.n(), x.p())?;
    let sched = resolve_penalties_uv(config, x.n())?;
    let (txm, _) = apply_transform(config.transform, x, SEQUENTIAL_BURN_IN)?;
    let xs = txm.column(0);
    let tables = run_dp_uv(&xs, config, &sched);
    Ok(SequentialUvResult {
        transformed: xs,
        raw: x.column(0),
        config: config.clone(),
        schedule: sched,
        tables,
    })
}

/// Offline univariate detection: the penalised-saving optimum over the
/// full series.
pub fn capa_uv(x: &TimeSeriesMatrix, config: &DetectorConfig) -> Result<AnomalySet> {
    let run = scapa_uv(x, config)?;
    Ok(run.final_set())
}
