//! Offline metric suite: bias, Gaussian NLL, Pearson correlations, the
//! debias-correlation table, per-bucket distribution-fit curves, engagement
//! efficiency ratios, and the bucket-table staleness experiment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bucket::Bucketing;
use crate::dataset::Dataset;
use crate::error::{CoreError, Result};
use crate::mbd::{train_branch_frozen, BranchTrainConfig, MbdBranch};
use crate::ranker::{RankerModel, TargetKind};
use crate::signals::{
    naive_correction, nts, rps, vvp95_indicator, BucketTable, CorrectionForm, RPS_SIGMA_FLOOR,
};

/// A metric value that is never silently zero: undefined results carry the
/// reason and every defined value records its sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MetricValue {
    Value { value: f64, n: usize },
    Undefined { reason: String },
}

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value { value, .. } => Some(*value),
            MetricValue::Undefined { .. } => None,
        }
    }

    pub fn expect_value(&self, what: &str) -> f64 {
        match self {
            MetricValue::Value { value, .. } => *value,
            MetricValue::Undefined { reason } => {
                panic!("metric {what} is undefined: {reason}")
            }
        }
    }
}

/// Report provenance: which dataset, models, and seed produced the numbers.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_id: String,
    pub model_ids: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn line(&self) -> String {
        format!(
            "config_hash={} seed={} dataset={} models={}",
            self.config_hash,
            self.seed,
            self.dataset_id,
            self.model_ids.join("+")
        )
    }
}

/// Named scalars plus per-bucket series with shared provenance.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub provenance: Option<Provenance>,
    pub scalars: BTreeMap<String, MetricValue>,
    pub series: BTreeMap<String, Vec<(String, MetricValue)>>,
}

// ---- scalar metrics -------------------------------------------------------

/// mean(a - b), a measure of systematic drift between two aligned series.
pub fn bias(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CoreError::ShapeMismatch {
            context: "bias".into(),
            expected: format!("two equal-length series (>= 1), got {}", a.len()),
            actual: format!("{}", b.len()),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64)
}

/// Mean Gaussian negative log-likelihood
/// (p - mu)^2 / (2 sigma^2) + 0.5 ln(sigma^2).
pub fn gaussian_nll(p: &[f64], mu: &[f64], variance: &[f64]) -> Result<f64> {
    if p.len() != mu.len() || p.len() != variance.len() || p.is_empty() {
        return Err(CoreError::ShapeMismatch {
            context: "gaussian_nll".into(),
            expected: "three equal-length non-empty series".into(),
            actual: format!("{}/{}/{}", p.len(), mu.len(), variance.len()),
        });
    }
    if variance.iter().any(|v| !(*v > 0.0)) {
        return Err(CoreError::InvalidConfig(
            "gaussian_nll requires strictly positive variances".into(),
        ));
    }
    let total: f64 = p
        .iter()
        .zip(mu)
        .zip(variance)
        .map(|((p, m), v)| (p - m) * (p - m) / (2.0 * v) + 0.5 * v.ln())
        .sum();
    Ok(total / p.len() as f64)
}

/// Pearson correlation; degenerate inputs come back as an undefined flag.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<MetricValue> {
    if a.len() != b.len() {
        return Err(CoreError::ShapeMismatch {
            context: "pearson".into(),
            expected: format!("series of length {}", a.len()),
            actual: format!("length {}", b.len()),
        });
    }
    if a.len() < 2 {
        return Ok(MetricValue::Undefined {
            reason: format!("needs >= 2 samples, got {}", a.len()),
        });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(MetricValue::Undefined {
            reason: "zero-variance series".into(),
        });
    }
    Ok(MetricValue::Value {
        value: cov / (va.sqrt() * vb.sqrt()),
        n: a.len(),
    })
}

// ---- signal-quality table (estimation fidelity) ----------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalQualityRow {
    pub task: String,
    /// mean(y - p): ranking-model bias in label space.
    pub bias_ranker: MetricValue,
    /// mean(p - mu): branch bias in model space.
    pub bias_branch: MetricValue,
    pub nll_cluster: MetricValue,
    pub nll_branch: MetricValue,
    /// trend alignment pearson(p, mu) across examples.
    pub rho_trend: MetricValue,
    /// uncertainty alignment: per-fine-bucket branch sigma vs empirical
    /// sigma of p, correlated across buckets.
    pub rho_uncertainty: MetricValue,
}

/// Coarse cluster baseline: per-bucket mean/variance over the attribute.
/// For regression tasks the clustered series is the transformed label; for
/// binary tasks it is the ranker's logit (individual binary labels have no
/// finite logit), which makes the baseline the bucketized-counting analogue
/// in the branch's own space.
fn cluster_stats(
    attr: &[f64],
    series: &[f64],
    buckets: usize,
    lo: f64,
    hi: f64,
) -> Result<BucketTable> {
    let edges = Bucketing::log_spaced(lo, hi, buckets)?.edges;
    crate::signals::build_bucket_table("cluster", attr, series, edges, 0)
}

/// `uncertainty_branch` supplies the sigma series for the alignment metric;
/// a cohort-level context (the clustering attribute alone) makes it
/// comparable with the per-bucket empirical spread. Defaults to `branch`.
#[allow(clippy::too_many_arguments)]
pub fn signal_quality(
    dataset: &Dataset,
    idx: &[usize],
    ranker: &RankerModel,
    branch: &MbdBranch,
    uncertainty_branch: Option<&MbdBranch>,
    task_name: &str,
    cluster_buckets: usize,
    fine_edges: &[f64],
    min_bucket_count: usize,
) -> Result<SignalQualityRow> {
    let task_idx = ranker.task_index(task_name)?;
    let task = &ranker.tasks[task_idx];
    let dur_col = dataset.schema.index_of("i_duration")?;

    let mut durations = Vec::with_capacity(idx.len());
    let mut p_model = Vec::with_capacity(idx.len());
    let mut label_for_bias = Vec::with_capacity(idx.len());
    let mut pred_for_bias = Vec::with_capacity(idx.len());
    let mut cluster_series = Vec::with_capacity(idx.len());
    let mut mu = Vec::with_capacity(idx.len());
    let mut var = Vec::with_capacity(idx.len());
    let mut unc_sigma = Vec::with_capacity(idx.len());
    for &i in idx {
        let interaction = &dataset.interactions[i];
        let preds = ranker.predict(&interaction.features)?;
        let pm = match task.kind {
            TargetKind::Regression => preds[task_idx].value,
            TargetKind::Binary => preds[task_idx].logit.expect("binary exposes logit"),
        };
        let est = branch.estimate_full(&interaction.features)?;
        let unc_est = match uncertainty_branch {
            Some(b) => b.estimate_full(&interaction.features)?,
            None => est.clone(),
        };
        durations.push(interaction.features[dur_col]);
        p_model.push(pm);
        mu.push(est.mean);
        var.push(est.variance);
        unc_sigma.push(unc_est.sigma());
        match task.kind {
            TargetKind::Regression => {
                let y = task.transformed_label(dataset, interaction)?;
                label_for_bias.push(y);
                pred_for_bias.push(pm);
                cluster_series.push(y);
            }
            TargetKind::Binary => {
                label_for_bias.push(dataset.raw_label(task_name, interaction)?);
                pred_for_bias.push(preds[task_idx].value);
                cluster_series.push(pm);
            }
        }
    }

    let cluster = cluster_stats(
        &durations,
        &cluster_series,
        cluster_buckets,
        2.0,
        600.0,
    )?;
    let mut cluster_mu = Vec::with_capacity(idx.len());
    let mut cluster_var = Vec::with_capacity(idx.len());
    for &d in &durations {
        let s = cluster.stats_for(d)?;
        cluster_mu.push(s.mean);
        cluster_var.push(s.variance.max(1e-12));
    }

    let nll_cluster = gaussian_nll(&p_model, &cluster_mu, &cluster_var)?;
    let nll_branch = gaussian_nll(&p_model, &mu, &var)?;
    let n = idx.len();

    // Per-fine-bucket uncertainty alignment: branch sigma averaged per
    // bucket vs the empirical spread of the clustered series (transformed
    // labels for regression, ranker logits for binary).
    let fine = Bucketing::new(fine_edges.to_vec())?;
    let mut by_bucket: Vec<Vec<usize>> = vec![Vec::new(); fine.num_buckets()];
    for (row, &d) in durations.iter().enumerate() {
        by_bucket[fine.index_of(d)].push(row);
    }
    let mut sigma_branch_series = Vec::new();
    let mut sigma_emp_series = Vec::new();
    for rows in &by_bucket {
        if rows.len() < min_bucket_count {
            continue;
        }
        let m = rows.len() as f64;
        let mean_c = rows.iter().map(|&r| cluster_series[r]).sum::<f64>() / m;
        let var_c = rows
            .iter()
            .map(|&r| (cluster_series[r] - mean_c).powi(2))
            .sum::<f64>()
            / m;
        let mean_sigma = rows.iter().map(|&r| unc_sigma[r]).sum::<f64>() / m;
        sigma_emp_series.push(var_c.sqrt());
        sigma_branch_series.push(mean_sigma);
    }

    Ok(SignalQualityRow {
        task: task_name.to_string(),
        bias_ranker: MetricValue::Value {
            value: bias(&label_for_bias, &pred_for_bias)?,
            n,
        },
        bias_branch: MetricValue::Value {
            value: bias(&p_model, &mu)?,
            n,
        },
        nll_cluster: MetricValue::Value { value: nll_cluster, n },
        nll_branch: MetricValue::Value { value: nll_branch, n },
        rho_trend: pearson(&p_model, &mu)?,
        rho_uncertainty: pearson(&sigma_branch_series, &sigma_emp_series)?,
    })
}

// ---- debias correlation table ----------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub task: String,
    pub signal: String,
    pub rho: MetricValue,
}

pub struct DebiasCorrelationInputs<'a> {
    pub dataset: &'a Dataset,
    pub idx: &'a [usize],
    pub ranker: &'a RankerModel,
    pub watch_branch: &'a MbdBranch,
    pub loop_branch: Option<&'a MbdBranch>,
    /// Per-duration-bucket label statistics (seconds space) for the VVP95
    /// threshold baseline.
    pub vvp_table: &'a BucketTable,
    /// Per-item average watch seconds (the `7-day average` analogue).
    pub item_avg_watch: &'a BTreeMap<u64, f64>,
    pub nts_sharpness: f64,
}

/// Correlation of each ranking signal with the duration attribute,
/// one row per (task, signal).
pub fn debias_correlation_report(inp: &DebiasCorrelationInputs) -> Result<Vec<CorrelationRow>> {
    let ds = inp.dataset;
    let dur_col = ds.schema.index_of("i_duration")?;
    let watch_idx = inp.ranker.task_index("watch_time")?;
    let loop_idx = inp.ranker.task_index("loop").ok();

    let mut duration = Vec::with_capacity(inp.idx.len());
    let mut y_raw = Vec::with_capacity(inp.idx.len());
    let mut y_log = Vec::with_capacity(inp.idx.len());
    let mut p_watch = Vec::with_capacity(inp.idx.len());
    let mut vvp = Vec::with_capacity(inp.idx.len());
    let mut vvp_nts = Vec::with_capacity(inp.idx.len());
    let mut rps_watch = Vec::with_capacity(inp.idx.len());
    let mut y_loop = Vec::new();
    let mut p_loop = Vec::new();
    let mut rps_loop = Vec::new();

    for &i in inp.idx {
        let interaction = &ds.interactions[i];
        let d = interaction.features[dur_col];
        let preds = inp.ranker.predict(&interaction.features)?;
        let p_log = preds[watch_idx].value;
        let pred_seconds = p_log.exp_m1().max(0.0);

        duration.push(d);
        y_raw.push(interaction.watch_time_seconds);
        y_log.push(interaction.watch_time_seconds.ln_1p());
        p_watch.push(p_log);

        let indicator = vvp95_indicator(pred_seconds, inp.vvp_table, d)?;
        vvp.push(indicator);
        let avg = inp
            .item_avg_watch
            .get(&interaction.item_id)
            .copied()
            .unwrap_or(0.0);
        // Personalized skip proxy: the loop head's complement when a loop
        // task exists (no dedicated skip task at desk scale), otherwise
        // 1 - predicted completion.
        let pskip = match loop_idx {
            Some(t) => (1.0 - preds[t].value).clamp(0.0, 1.0),
            None => (1.0 - (pred_seconds / d).min(1.0)).clamp(0.0, 1.0),
        };
        let weight = nts(pred_seconds, pskip, avg, inp.nts_sharpness)?;
        vvp_nts.push(indicator * weight);

        let est = inp.watch_branch.estimate_full(&interaction.features)?;
        rps_watch.push(rps(p_log, &est, RPS_SIGMA_FLOOR)?);

        if let (Some(t), Some(branch)) = (loop_idx, inp.loop_branch) {
            y_loop.push(interaction.looped as f64);
            p_loop.push(preds[t].value);
            let logit = preds[t].logit.expect("binary exposes logit");
            let est = branch.estimate_full(&interaction.features)?;
            rps_loop.push(rps(logit, &est, RPS_SIGMA_FLOOR)?);
        }
    }

    let mut rows = vec![
        CorrelationRow {
            task: "watch_time".into(),
            signal: "y".into(),
            rho: pearson(&y_raw, &duration)?,
        },
        CorrelationRow {
            task: "watch_time".into(),
            signal: "log_y".into(),
            rho: pearson(&y_log, &duration)?,
        },
        CorrelationRow {
            task: "watch_time".into(),
            signal: "p".into(),
            rho: pearson(&p_watch, &duration)?,
        },
        CorrelationRow {
            task: "watch_time".into(),
            signal: "vvp95".into(),
            rho: pearson(&vvp, &duration)?,
        },
        CorrelationRow {
            task: "watch_time".into(),
            signal: "vvp95_nts".into(),
            rho: pearson(&vvp_nts, &duration)?,
        },
        CorrelationRow {
            task: "watch_time".into(),
            signal: "rps".into(),
            rho: pearson(&rps_watch, &duration)?,
        },
    ];
    if !p_loop.is_empty() {
        rows.push(CorrelationRow {
            task: "loop".into(),
            signal: "y".into(),
            rho: pearson(&y_loop, &duration)?,
        });
        rows.push(CorrelationRow {
            task: "loop".into(),
            signal: "p".into(),
            rho: pearson(&p_loop, &duration)?,
        });
        rows.push(CorrelationRow {
            task: "loop".into(),
            signal: "rps".into(),
            rho: pearson(&rps_loop, &duration)?,
        });
    }
    Ok(rows)
}

// ---- per-bucket distribution fit --------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketFitRow {
    pub bucket: String,
    pub count: usize,
    pub mean_p: Option<f64>,
    pub var_p: Option<f64>,
    pub mean_mu: Option<f64>,
    pub mean_var_branch: Option<f64>,
}

/// Aligned per-bucket curves: empirical mean/variance of the detached
/// predictions vs the branch's mean/variance estimates.
pub fn distribution_fit_by_bucket(
    dataset: &Dataset,
    idx: &[usize],
    ranker: &RankerModel,
    branch: &MbdBranch,
    task_name: &str,
    edges: &[f64],
) -> Result<Vec<BucketFitRow>> {
    let task_idx = ranker.task_index(task_name)?;
    let task = &ranker.tasks[task_idx];
    let dur_col = dataset.schema.index_of("i_duration")?;
    let bucketing = Bucketing::new(edges.to_vec())?;
    let mut per_bucket: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); bucketing.num_buckets()];
    for &i in idx {
        let interaction = &dataset.interactions[i];
        let preds = ranker.predict(&interaction.features)?;
        let p = match task.kind {
            TargetKind::Regression => preds[task_idx].value,
            TargetKind::Binary => preds[task_idx].logit.expect("binary exposes logit"),
        };
        let est = branch.estimate_full(&interaction.features)?;
        let k = bucketing.index_of(interaction.features[dur_col]);
        per_bucket[k].push((p, est.mean, est.variance));
    }
    Ok(per_bucket
        .into_iter()
        .enumerate()
        .map(|(k, rows)| {
            if rows.is_empty() {
                return BucketFitRow {
                    bucket: bucketing.label(k),
                    count: 0,
                    mean_p: None,
                    var_p: None,
                    mean_mu: None,
                    mean_var_branch: None,
                };
            }
            let n = rows.len() as f64;
            let mean_p = rows.iter().map(|r| r.0).sum::<f64>() / n;
            let var_p = rows.iter().map(|r| (r.0 - mean_p).powi(2)).sum::<f64>() / n;
            let mean_mu = rows.iter().map(|r| r.1).sum::<f64>() / n;
            let mean_var = rows.iter().map(|r| r.2).sum::<f64>() / n;
            BucketFitRow {
                bucket: bucketing.label(k),
                count: rows.len(),
                mean_p: Some(mean_p),
                var_p: Some(var_p),
                mean_mu: Some(mean_mu),
                mean_var_branch: Some(mean_var),
            }
        })
        .collect())
}

// ---- engagement efficiency ---------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketTraffic {
    pub bucket: String,
    pub views: f64,
    pub watch_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub bucket: String,
    pub pct_wt: MetricValue,
    pub pct_vv: MetricValue,
    pub ratio: MetricValue,
}

/// Efficiency ratio %dWT / %dVV from already-computed percentage shifts.
pub fn efficiency_ratio_from_shifts(pct_wt: f64, pct_vv: f64) -> MetricValue {
    if pct_vv == 0.0 {
        MetricValue::Undefined {
            reason: "zero view shift".into(),
        }
    } else {
        MetricValue::Value {
            value: pct_wt / pct_vv * 100.0,
            n: 1,
        }
    }
}

/// Per-bucket percentage shifts between control and treatment traffic and
/// their efficiency ratio.
pub fn efficiency_analysis(
    control: &[BucketTraffic],
    treatment: &[BucketTraffic],
) -> Result<Vec<EfficiencyRow>> {
    if control.len() != treatment.len() {
        return Err(CoreError::ShapeMismatch {
            context: "efficiency_analysis".into(),
            expected: format!("{} buckets", control.len()),
            actual: format!("{} buckets", treatment.len()),
        });
    }
    Ok(control
        .iter()
        .zip(treatment)
        .map(|(c, t)| {
            if !(c.views > 0.0) || !(c.watch_seconds > 0.0) {
                return EfficiencyRow {
                    bucket: c.bucket.clone(),
                    pct_wt: MetricValue::Undefined {
                        reason: "zero control traffic".into(),
                    },
                    pct_vv: MetricValue::Undefined {
                        reason: "zero control traffic".into(),
                    },
                    ratio: MetricValue::Undefined {
                        reason: "zero control traffic".into(),
                    },
                };
            }
            let pct_wt = (t.watch_seconds - c.watch_seconds) / c.watch_seconds * 100.0;
            let pct_vv = (t.views - c.views) / c.views * 100.0;
            EfficiencyRow {
                bucket: c.bucket.clone(),
                pct_wt: MetricValue::Value { value: pct_wt, n: 1 },
                pct_vv: MetricValue::Value { value: pct_vv, n: 1 },
                ratio: efficiency_ratio_from_shifts(pct_wt, pct_vv),
            }
        })
        .collect())
}

// ---- staleness experiment ------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StalenessRow {
    pub time_index: u32,
    pub count: usize,
    pub frozen_mean_z: MetricValue,
    pub branch_mean_z: MetricValue,
}

pub struct StalenessConfig {
    pub bucket_edges: Vec<f64>,
    /// the branch trains on the latest `window` indices (>= 1)
    pub window: usize,
    /// settles the fresh branch on index 0 (large learning rate)
    pub warmup: BranchTrainConfig,
    /// per-index refresh (small learning rate keeps the tracker from
    /// wandering at its noise equilibrium)
    pub refresh: BranchTrainConfig,
}

/// Frozen bucket-table z-scores vs an incrementally retrained branch on a
/// drifting stream. The table is built once from index-0 data; the branch
/// (ground-truth label targets) continues training on each index's window
/// before that index is scored, mirroring a continuously updated model. One
/// optimizer persists across indices.
pub fn staleness_experiment(
    dataset: &Dataset,
    ranker: &RankerModel,
    branch: &mut MbdBranch,
    cfg: &StalenessConfig,
) -> Result<Vec<StalenessRow>> {
    let dur_col = dataset.schema.index_of("i_duration")?;
    let max_t = dataset
        .interactions
        .iter()
        .map(|i| i.time_index)
        .max()
        .ok_or_else(|| CoreError::InvalidConfig("empty dataset".into()))?;
    let mut by_index: Vec<Vec<usize>> = vec![Vec::new(); max_t as usize + 1];
    for (row, i) in dataset.interactions.iter().enumerate() {
        by_index[i.time_index as usize].push(row);
    }

    let snapshot_rows = &by_index[0];
    if snapshot_rows.is_empty() {
        return Err(CoreError::InvalidConfig(
            "staleness experiment needs data at index 0 for the snapshot".into(),
        ));
    }
    let attrs: Vec<f64> = snapshot_rows
        .iter()
        .map(|&r| dataset.interactions[r].features[dur_col])
        .collect();
    let labels: Vec<f64> = snapshot_rows
        .iter()
        .map(|&r| dataset.interactions[r].watch_time_seconds.ln_1p())
        .collect();
    let frozen = crate::signals::build_bucket_table(
        "i_duration",
        &attrs,
        &labels,
        cfg.bucket_edges.clone(),
        0,
    )?;

    let mut optimizer =
        crate::Optimizer::new(cfg.warmup.algorithm, cfg.warmup.learning_rate);
    let mut rows = Vec::with_capacity(by_index.len());
    for (t, idx_t) in by_index.iter().enumerate() {
        if idx_t.is_empty() {
            rows.push(StalenessRow {
                time_index: t as u32,
                count: 0,
                frozen_mean_z: MetricValue::Undefined {
                    reason: "no data at this index".into(),
                },
                branch_mean_z: MetricValue::Undefined {
                    reason: "no data at this index".into(),
                },
            });
            continue;
        }
        let window_lo = t.saturating_sub(cfg.window.max(1) - 1);
        let window_idx: Vec<usize> = (window_lo..=t)
            .flat_map(|w| by_index[w].iter().copied())
            .collect();
        if t == 0 {
            // settle the fresh branch, then drop to the refresh rate so the
            // first scored index sits at the fine-scale noise level
            optimizer.set_learning_rate(cfg.warmup.learning_rate);
            train_branch_frozen(branch, ranker, dataset, &window_idx, &cfg.warmup, &mut optimizer)?;
        }
        let mut train_cfg = cfg.refresh.clone();
        optimizer.set_learning_rate(train_cfg.learning_rate);
        train_cfg.shuffle_seed = train_cfg.shuffle_seed ^ (t as u64);
        train_branch_frozen(branch, ranker, dataset, &window_idx, &train_cfg, &mut optimizer)?;

        let mut frozen_zs = Vec::with_capacity(idx_t.len());
        let mut branch_zs = Vec::with_capacity(idx_t.len());
        for &r in idx_t {
            let interaction = &dataset.interactions[r];
            let d = interaction.features[dur_col];
            let y = interaction.watch_time_seconds.ln_1p();
            frozen_zs.push(naive_correction(y, &frozen, d, CorrectionForm::Z)?);
            let est = branch.estimate_full(&interaction.features)?;
            branch_zs.push(rps(y, &est, RPS_SIGMA_FLOOR)?);
        }
        let n = idx_t.len();
        rows.push(StalenessRow {
            time_index: t as u32,
            count: n,
            frozen_mean_z: MetricValue::Value {
                value: frozen_zs.iter().sum::<f64>() / n as f64,
                n,
            },
            branch_mean_z: MetricValue::Value {
                value: branch_zs.iter().sum::<f64>() / n as f64,
                n,
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_cases() {
        assert_eq!(bias(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(bias(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 1.5);
        assert!(bias(&[1.0], &[1.0, 2.0]).is_err());
        assert!(bias(&[], &[]).is_err());
    }

    #[test]
    fn gaussian_nll_cases() {
        // p = mu, sigma^2 = 1 -> 0
        assert_eq!(gaussian_nll(&[2.0, -1.0], &[2.0, -1.0], &[1.0, 1.0]).unwrap(), 0.0);
        // unit residual, unit variance -> 0.5
        assert_eq!(gaussian_nll(&[1.0], &[0.0], &[1.0]).unwrap(), 0.5);
        assert!(gaussian_nll(&[1.0], &[0.0], &[0.0]).is_err());
        assert!(gaussian_nll(&[1.0], &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn nll_minimized_at_mean_squared_residual() {
        let p = [1.0, 3.0, -2.0, 0.5];
        let mu = [0.0, 1.0, 0.0, 0.0];
        let msr = p
            .iter()
            .zip(&mu)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64;
        let at = |v: f64| gaussian_nll(&p, &mu, &vec![v; p.len()]).unwrap();
        let best = at(msr);
        for factor in [0.2, 0.5, 0.9, 1.1, 2.0, 5.0] {
            assert!(at(msr * factor) > best, "NLL lower at {factor} * msr");
        }
    }

    #[test]
    fn pearson_cases() {
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((r.expect_value("rho") - 1.0).abs() < 1e-12);
        let a = [1.0, -0.5, 3.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let r = pearson(&a, &neg).unwrap();
        assert!((r.expect_value("rho") + 1.0).abs() < 1e-12);
        let r = pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(r, MetricValue::Undefined { .. }));
        assert!(pearson(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_affine_invariance() {
        let a = [0.3, -1.2, 2.2, 0.9, -0.4];
        let b = [1.0, 0.2, -0.7, 2.2, 1.4];
        let base = pearson(&a, &b).unwrap().expect_value("rho");
        for (scale, shift) in [(2.0, 3.0), (0.25, -7.0), (10.0, 0.0)] {
            let a2: Vec<f64> = a.iter().map(|v| v * scale + shift).collect();
            let r = pearson(&a2, &b).unwrap().expect_value("rho");
            assert!((r - base).abs() < 1e-12);
        }
    }

    #[test]
    fn efficiency_example_pairs() {
        // pruning bucket: (-0.64, -0.83) -> 77%
        let r = efficiency_ratio_from_shifts(-0.64, -0.83).expect_value("ratio");
        assert_eq!(r.round(), 77.0);
        // promoted bucket: (0.73, 0.13) -> 562%
        let r = efficiency_ratio_from_shifts(0.73, 0.13).expect_value("ratio");
        assert_eq!(r.round(), 562.0);
        // zero view shift -> undefined
        assert!(matches!(
            efficiency_ratio_from_shifts(0.5, 0.0),
            MetricValue::Undefined { .. }
        ));
    }

    #[test]
    fn efficiency_analysis_from_traffic() {
        let control = vec![BucketTraffic {
            bucket: "b0".into(),
            views: 1000.0,
            watch_seconds: 50_000.0,
        }];
        let treatment = vec![BucketTraffic {
            bucket: "b0".into(),
            views: 991.7,
            watch_seconds: 49_680.0,
        }];
        let rows = efficiency_analysis(&control, &treatment).unwrap();
        let wt = rows[0].pct_wt.expect_value("wt");
        let vv = rows[0].pct_vv.expect_value("vv");
        assert!((wt - -0.64).abs() < 1e-9);
        assert!((vv - -0.83).abs() < 1e-9);
        assert_eq!(rows[0].ratio.expect_value("ratio").round(), 77.0);
    }

    #[test]
    fn zero_control_flagged() {
        let control = vec![BucketTraffic {
            bucket: "b0".into(),
            views: 0.0,
            watch_seconds: 0.0,
        }];
        let treatment = control.clone();
        let rows = efficiency_analysis(&control, &treatment).unwrap();
        assert!(matches!(rows[0].ratio, MetricValue::Undefined { .. }));
    }
}
