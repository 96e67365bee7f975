//! Subset-multivariate collective and point anomaly detection.
//!
//! For a candidate outer window the per-component savings are maximised
//! over start/end lags, sorted, and pooled against decreasing marginal
//! penalties:
//!
//! S(s,e) = max_k sum_{i<=k} ( S_(i)(s,e) - beta_i )
//!
//! The same optimal-partitioning recursion as the univariate detector
//! then runs over pooled savings, with the point option flagging each
//! variate whose point saving clears the point penalty.

use crate::capa_uv::{point_saving, Choice, SavingCost, SEQUENTIAL_BURN_IN};
use crate::error::{Error, Result};
use crate::penalties::{default_penalties_mv, PenaltySchedule};
use crate::transforms::apply_transform;
use crate::types::{
    AnomalySet, CollectiveAnomaly, ComponentRecord, CostType, DetectorConfig, PenaltyChoice,
    PointAnomaly, TimeSeriesMatrix,
};

/// Pooled penalised saving of one outer window.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSaving {
    /// Maximum over k of the cumulative penalised order-statistic savings.
    pub total: f64,
    /// Number of components attaining the maximum.
    pub k_star: usize,
    /// The `k_star` contributing components, strongest first.
    pub per_component: Vec<ComponentSaving>,
}

/// One component's lag-optimised saving inside an outer window.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSaving {
    /// 0-based variate index.
    pub variate: usize,
    pub start_lag: usize,
    pub end_lag: usize,
    pub saving: f64,
}

/// Maximise the saving of variate `i` over admissible lags (d, f) within
/// the 0-based outer window [s, e]. Admissible pairs keep the inner
/// window at least `min_seg_len` long; ties prefer the smallest start
/// lag, then the smallest end lag.
pub(crate) fn component_lagged_saving(
    cost: &SavingCost,
    cost_type: CostType,
    s: usize,
    e: usize,
    max_lag: usize,
    min_seg_len: usize,
) -> Option<ComponentSaving> {
    let len = e - s + 1;
    if len < min_seg_len {
        return None;
    }
    let slack = len - min_seg_len;
    let mut best = f64::NEG_INFINITY;
    let mut best_d = 0;
    let mut best_f = 0;
    for d in 0..=max_lag.min(slack) {
        for f in 0..=max_lag.min(slack - d) {
            let sv = cost.saving(cost_type, s + d, e - f);
            if sv > best {
                best = sv;
                best_d = d;
                best_f = f;
            }
        }
    }
    Some(ComponentSaving { variate: 0, start_lag: best_d, end_lag: best_f, saving: best })
}

/// Pooled order-statistic saving of the outer window [s, e] (0-based).
pub fn pooled_saving(
    costs: &[SavingCost],
    cost_type: CostType,
    s: usize,
    e: usize,
    max_lag: usize,
    min_seg_len: usize,
    marginal_beta: &[f64],
) -> Result<PooledSaving> {
    let p = costs.len();
    debug_assert_eq!(marginal_beta.len(), p);
    let mut savings: Vec<ComponentSaving> = Vec::with_capacity(p);
    for (i, cost) in costs.iter().enumerate() {
        let mut cs = component_lagged_saving(cost, cost_type, s, e, max_lag, min_seg_len)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "window of length {} is shorter than min_seg_len {min_seg_len}",
                    e - s + 1
                ))
            })?;
        cs.variate = i;
        savings.push(cs);
    }
    savings.sort_by(|a, b| b.saving.total_cmp(&a.saving).then(a.variate.cmp(&b.variate)));
    let mut best_total = f64::NEG_INFINITY;
    let mut k_star = 0;
    let mut cum = 0.0;
    for (k, cs) in savings.iter().enumerate() {
        cum += cs.saving - marginal_beta[k];
        if cum > best_total {
            best_total = cum;
            k_star = k + 1;
        }
    }
    savings.truncate(k_star);
    Ok(PooledSaving { total: best_total, k_star, per_component: savings })
}

/// Total of the window's pooled saving only (hot path of the DP).
fn pooled_total(
    costs: &[SavingCost],
    cost_type: CostType,
    s: usize,
    e: usize,
    max_lag: usize,
    min_seg_len: usize,
    marginal_beta: &[f64],
    buf: &mut Vec<f64>,
) -> f64 {
    buf.clear();
    for cost in costs {
        let cs = component_lagged_saving(cost, cost_type, s, e, max_lag, min_seg_len)
            .expect("DP windows satisfy min_seg_len");
        buf.push(cs.saving);
    }
    buf.sort_by(|a, b| b.total_cmp(a));
    let mut best_total = f64::NEG_INFINITY;
    let mut cum = 0.0;
    for (k, sv) in buf.iter().enumerate() {
        cum += sv - marginal_beta[k];
        if cum > best_total {
            best_total = cum;
        }
    }
    best_total
}

fn resolve_penalties_mv(cfg: &DetectorConfig, n: usize, p: usize) -> Result<PenaltySchedule> {
    let sched = match &cfg.penalties {
        PenaltyChoice::Default => default_penalties_mv(n, p, cfg.max_lag, cfg.cost_type)?,
        PenaltyChoice::Custom(s) => s.clone(),
    };
    match &sched.marginal_beta {
        None => Err(Error::InvalidArgument(
            "multivariate detection needs marginal penalties".into(),
        )),
        Some(m) if m.len() != p => Err(Error::InvalidArgument(format!(
            "expected {p} marginal penalties, got {}",
            m.len()
        ))),
        Some(_) => Ok(sched),
    }
}

struct MvTables {
    best: Vec<f64>,
    choice: Vec<Choice>,
}

fn run_dp_mv(
    txm: &TimeSeriesMatrix,
    costs: &[SavingCost],
    cfg: &DetectorConfig,
    sched: &PenaltySchedule,
) -> MvTables {
    let n = txm.n();
    let p = txm.p();
    let max_len = cfg.effective_max_seg_len(n);
    let marginal = sched.marginal_beta.as_ref().expect("validated");
    let mut best = vec![0.0; n + 1];
    let mut choice = vec![Choice::Typical; n + 1];
    let mut buf: Vec<f64> = Vec::with_capacity(p);

    for t in 1..=n {
        let mut best_val = best[t - 1];
        let mut ch = Choice::Typical;

        let mut point_sum = 0.0;
        for i in 0..p {
            let ps = point_saving(txm.value(t - 1, i), sched.beta_tilde, cfg.cost_type)
                - sched.beta_tilde;
            if ps > 0.0 {
                point_sum += ps;
            }
        }
        if point_sum > 0.0 && best[t - 1] + point_sum > best_val {
            best_val = best[t - 1] + point_sum;
            ch = Choice::Point;
        }

        let lo = t.saturating_sub(max_len);
        // latest start first so ties resolve to the shortest anomaly
        for tau in (lo..=(t - cfg.min_seg_len.min(t))).rev() {
            if t - tau < cfg.min_seg_len {
                continue;
            }
            let total = pooled_total(
                costs,
                cfg.cost_type,
                tau,
                t - 1,
                cfg.max_lag,
                cfg.min_seg_len,
                marginal,
                &mut buf,
            );
            let val = best[tau] + total;
            if val > best_val {
                best_val = val;
                ch = Choice::Collective { start: tau };
            }
        }

        best[t] = best_val;
        choice[t] = ch;
    }
    MvTables { best, choice }
}

fn mv_component_record(
    cs: &ComponentSaving,
    costs: &[SavingCost],
    raw_costs: &[SavingCost],
    cost_type: CostType,
    s: usize,
    e: usize,
) -> ComponentRecord {
    let inner_s = s + cs.start_lag;
    let inner_e = e - cs.end_lag;
    let cost = &costs[cs.variate];
    let mean = cost.seg_mean(inner_s, inner_e);
    let (variance_change, variance_floored) = match cost_type {
        CostType::Mean => (None, false),
        CostType::MeanVar => {
            let (_, fl) = cost.saving_meanvar(inner_s, inner_e);
            (Some(cost.seg_var(inner_s, inner_e).max(crate::capa_uv::VARIANCE_FLOOR)), fl)
        }
    };
    ComponentRecord {
        variate: cs.variate + 1,
        start_lag: cs.start_lag,
        end_lag: cs.end_lag,
        mean_change: mean * mean,
        variance_change,
        test_statistic: cs.saving,
        raw_mean: raw_costs[cs.variate].seg_mean(inner_s, inner_e),
        variance_floored,
    }
}

fn backtrack_mv(
    tables: &MvTables,
    txm: &TimeSeriesMatrix,
    costs: &[SavingCost],
    raw_costs: &[SavingCost],
    cfg: &DetectorConfig,
    sched: &PenaltySchedule,
    epoch: usize,
) -> Result<AnomalySet> {
    let marginal = sched.marginal_beta.as_ref().expect("validated");
    let mut collective = Vec::new();
    let mut points = Vec::new();
    let mut t = epoch;
    while t > 0 {
        match tables.choice[t] {
            Choice::Typical => t -= 1,
            Choice::Point => {
                for i in 0..txm.p() {
                    let strength =
                        point_saving(txm.value(t - 1, i), sched.beta_tilde, cfg.cost_type);
                    if strength - sched.beta_tilde > 0.0 {
                        points.push(PointAnomaly { location: t, variate: i + 1, strength });
                    }
                }
                t -= 1;
            }
            Choice::Collective { start } => {
                let pooled = pooled_saving(
                    costs,
                    cfg.cost_type,
                    start,
                    t - 1,
                    cfg.max_lag,
                    cfg.min_seg_len,
                    marginal,
                )?;
                let mut components: Vec<ComponentRecord> = pooled
                    .per_component
                    .iter()
                    .map(|cs| mv_component_record(cs, costs, raw_costs, cfg.cost_type, start, t - 1))
                    .collect();
                components.sort_by_key(|c| c.variate);
                collective.push(CollectiveAnomaly { start: start + 1, end: t, components });
                t = start;
            }
        }
    }
    Ok(AnomalySet::new(collective, points, txm.n(), txm.p(), cfg.clone()))
}

/// Result of a sequential multivariate run, replayable at any epoch.
#[derive(Debug)]
pub struct SequentialMvResult {
    transformed: TimeSeriesMatrix,
    costs: Vec<SavingCost>,
    raw_costs: Vec<SavingCost>,
    config: DetectorConfig,
    schedule: PenaltySchedule,
    tables: MvTables,
}

impl std::fmt::Debug for MvTables {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MvTables").field("len", &self.best.len()).finish()
    }
}

impl SequentialMvResult {
    /// Anomaly set the online algorithm would have reported after
    /// observing `epoch` points (1-based).
    pub fn anomaly_set_at(&self, epoch: usize) -> Result<AnomalySet> {
        if epoch == 0 || epoch > self.transformed.n() {
            return Err(Error::InvalidArgument(format!(
                "epoch must lie in [1, {}], got {epoch}",
                self.transformed.n()
            )));
        }
        let mut cfg = self.config.clone();
        cfg.penalties = PenaltyChoice::Custom(self.schedule.clone());
        backtrack_mv(
            &self.tables,
            &self.transformed,
            &self.costs,
            &self.raw_costs,
            &cfg,
            &self.schedule,
            epoch,
        )
    }

    pub fn final_set(&self) -> Result<AnomalySet> {
        self.anomaly_set_at(self.transformed.n())
    }

    pub fn best_savings(&self) -> &[f64] {
        &self.tables.best
    }
}

/// Sequential subset-multivariate detection with one stored forward pass.
pub fn scapa_mv(x: &TimeSeriesMatrix, config: &DetectorConfig) -> Result<SequentialMvResult> {
    config.validate(x.n(), x.p())?;
    let sched = resolve_penalties_mv(config, x.n(), x.p())?;
    let (txm, _) = apply_transform(config.transform, x, SEQUENTIAL_BURN_IN)?;
    let costs: Vec<SavingCost> = (0..txm.p()).map(|i| SavingCost::new(&txm.column(i))).collect();
    let raw_costs: Vec<SavingCost> = (0..x.p()).map(|i| SavingCost::new(&x.column(i))).collect();
    let tables = run_dp_mv(&txm, &costs, config, &sched);
    Ok(SequentialMvResult {
        transformed: txm,
        costs,
        raw_costs,
        config: config.clone(),
        schedule: sched,
        tables,
    })
}

/// Offline subset-multivariate detection.
pub fn capa_mv(x: &TimeSeriesMatrix, config: &DetectorConfig) -> Result<AnomalySet> {
    let run = scapa_mv(x, config)?;
    run.final_set()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capa_uv::capa_uv;
    use crate::datagen::{simulate, SimSpec};
    use crate::types::TransformKind;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn lagged_saving_degenerate_cases() {
        let x = [0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let cost = SavingCost::new(&x);
        // w = 0: whole window, no lags
        let cs = component_lagged_saving(&cost, CostType::Mean, 0, 5, 0, 2).unwrap();
        assert_eq!((cs.start_lag, cs.end_lag), (0, 0));
        assert!((cs.saving - cost.saving_mean(0, 5)).abs() < 1e-12);
        // constant-zero window: saving 0, lags (0,0) by tie-break
        let zeros = SavingCost::new(&[0.0; 12]);
        let cs = component_lagged_saving(&zeros, CostType::Mean, 0, 11, 3, 2).unwrap();
        assert_eq!((cs.start_lag, cs.end_lag, cs.saving), (0, 0, 0.0));
        // window shorter than min_seg_len is rejected
        assert!(component_lagged_saving(&cost, CostType::Mean, 0, 1, 0, 3).is_none());
    }

    #[test]
    fn lagged_saving_finds_offset_anomaly() {
        // anomaly occupies exactly (s + 10, e): expect start lag 10, end lag 0
        let mut x = vec![0.0; 60];
        for v in x.iter_mut().skip(20).take(40) {
            *v = 3.0;
        }
        let cost = SavingCost::new(&x);
        let cs = component_lagged_saving(&cost, CostType::Mean, 10, 59, 20, 10).unwrap();
        assert_eq!((cs.start_lag, cs.end_lag), (10, 0));
    }

    #[test]
    fn pooled_saving_examples() {
        // hand-built savings (10, 4, 1) with beta (3,3,3): k* = 2, total = 8
        // single-point windows give savings x^2: (10, 4, 1)
        let cols = [
            vec![10f64.sqrt(), 0.0, 0.0, 0.0],
            vec![2.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
        ];
        let costs: Vec<SavingCost> = cols.iter().map(|c| SavingCost::new(c)).collect();
        let pooled =
            pooled_saving(&costs, CostType::Mean, 0, 0, 0, 1, &[3.0, 3.0, 3.0]).unwrap();
        assert_eq!(pooled.k_star, 2);
        assert!((pooled.total - 8.0).abs() < 1e-12);

        // p = 1 reduces to S1 - beta1
        let pooled = pooled_saving(&costs[..1], CostType::Mean, 0, 0, 0, 1, &[3.0]).unwrap();
        assert!((pooled.total - 7.0).abs() < 1e-12);

        // all savings zero with positive penalties: total <= 0
        let zero = vec![SavingCost::new(&[0.0; 5]); 3];
        let pooled = pooled_saving(&zero, CostType::Mean, 0, 4, 0, 2, &[3.0, 2.0, 1.0]).unwrap();
        assert!(pooled.total <= 0.0);
    }

    #[test]
    fn pooled_saving_monotone_in_penalties() {
        let mut rng = StdRng::seed_from_u64(5);
        let cols: Vec<Vec<f64>> =
            (0..4).map(|_| (0..30).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let costs: Vec<SavingCost> = cols.iter().map(|c| SavingCost::new(c)).collect();
        let lo = pooled_saving(&costs, CostType::Mean, 3, 20, 2, 5, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        let hi = pooled_saving(&costs, CostType::Mean, 3, 20, 2, 5, &[2.0, 1.5, 1.0, 1.0]).unwrap();
        assert!(hi.total <= lo.total);
    }

    fn mv_mean_config() -> DetectorConfig {
        DetectorConfig {
            cost_type: CostType::Mean,
            min_seg_len: 2,
            ..DetectorConfig::default()
        }
    }

    #[test]
    fn recovers_simulated_anomalies() {
        let spec =
            SimSpec::new(500, 40, 2.0, vec![100, 200, 300], 15, vec![0.2, 0.3, 0.4], 11).unwrap();
        let data = simulate(&spec).unwrap();
        let res = capa_mv(&data, &mv_mean_config()).unwrap();
        assert_eq!(res.collective.len(), 3, "{:?}", res.collective);
        for (c, start) in res.collective.iter().zip([100, 200, 300]) {
            assert!((c.start as i64 - start as i64).abs() <= 3, "start {}", c.start);
            assert!((c.end as i64 - (start + 14) as i64).abs() <= 3, "end {}", c.end);
        }
    }

    #[test]
    fn p1_reduces_to_univariate() {
        let mut rng = StdRng::seed_from_u64(21);
        let mut x: Vec<f64> = (0..400).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for v in x.iter_mut().skip(100).take(30) {
            *v += 3.0;
        }
        x[300] = 9.0;
        let m = TimeSeriesMatrix::from_vec(x).unwrap();
        let sched = PenaltySchedule {
            beta: vec![20.0],
            beta_tilde: 18.0,
            marginal_beta: Some(vec![20.0]),
        };
        let mut cfg = DetectorConfig::offline(CostType::Mean);
        cfg.penalties = PenaltyChoice::Custom(sched);
        let uv = capa_uv(&m, &cfg).unwrap();
        let mv = capa_mv(&m, &cfg).unwrap();
        assert_eq!(uv.collective, mv.collective);
        assert_eq!(uv.points, mv.points);
    }

    #[test]
    fn permutation_equivariance() {
        let spec = SimSpec::new(200, 6, 2.5, vec![80], 12, vec![0.5], 9).unwrap();
        let data = simulate(&spec).unwrap();
        let res = capa_mv(&data, &mv_mean_config()).unwrap();

        // swap columns 0 and 5
        let perm: Vec<usize> = vec![5, 1, 2, 3, 4, 0];
        let cols: Vec<Vec<f64>> = perm.iter().map(|&j| data.column(j)).collect();
        let permuted = TimeSeriesMatrix::from_columns(&cols).unwrap();
        let res_p = capa_mv(&permuted, &mv_mean_config()).unwrap();

        assert_eq!(res.collective.len(), res_p.collective.len());
        for (a, b) in res.collective.iter().zip(&res_p.collective) {
            assert_eq!((a.start, a.end), (b.start, b.end));
            let mut va: Vec<usize> = a.components.iter().map(|c| c.variate).collect();
            // map original variate ids through the permutation
            let mut vb: Vec<usize> =
                b.components.iter().map(|c| perm[c.variate - 1] + 1).collect();
            va.sort_unstable();
            vb.sort_unstable();
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn lag_symmetry_under_time_reversal() {
        let mut rng = StdRng::seed_from_u64(33);
        let mut cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        for v in cols[0].iter_mut().skip(80).take(40) {
            *v += 3.0;
        }
        for v in cols[1].iter_mut().skip(90).take(30) {
            *v += 3.0;
        }
        let fwd = TimeSeriesMatrix::from_columns(&cols).unwrap();
        let rev_cols: Vec<Vec<f64>> =
            cols.iter().map(|c| c.iter().rev().cloned().collect()).collect();
        let rev = TimeSeriesMatrix::from_columns(&rev_cols).unwrap();
        let mut cfg = mv_mean_config();
        cfg.max_lag = 15;
        cfg.min_seg_len = 10;
        cfg.transform = TransformKind::None;
        let a = capa_mv(&fwd, &cfg).unwrap();
        let b = capa_mv(&rev, &cfg).unwrap();
        assert_eq!(a.collective.len(), b.collective.len());
        let n = 200;
        for (ca, cb) in a.collective.iter().zip(b.collective.iter().rev()) {
            assert_eq!(ca.start, n + 1 - cb.end);
            assert_eq!(ca.end, n + 1 - cb.start);
            for (x, y) in ca.components.iter().zip(&cb.components) {
                assert_eq!(x.variate, y.variate);
                assert_eq!(x.start_lag, y.end_lag);
                assert_eq!(x.end_lag, y.start_lag);
                assert!((x.test_statistic - y.test_statistic).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn epoch_replay_matches_offline() {
        let spec = SimSpec::new(300, 8, 2.0, vec![150], 20, vec![0.5], 2).unwrap();
        let data = simulate(&spec).unwrap();
        let mut cfg = mv_mean_config();
        cfg.transform = TransformKind::None;
        let run = scapa_mv(&data, &cfg).unwrap();
        let offline = capa_mv(&data, &cfg).unwrap();
        assert_eq!(run.anomaly_set_at(300).unwrap(), offline);
        let early = run.anomaly_set_at(100).unwrap();
        assert!(early.collective.is_empty());
    }
}
