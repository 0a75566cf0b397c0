//! Debiased signal construction and value-model integration.
//!
//! The relative preference score standardizes a point prediction against its
//! contextual distribution, RPS = (p - mu) / sigma, optionally compounded
//! with the Gaussian CDF into a percentile. Three integration strategies
//! fold it into the value-model score; bucketized counting tables provide
//! the heuristic baselines (mean / z correction, per-bucket p95 thresholds,
//! normalized-time-spent reweighting).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bucket::Bucketing;
use crate::dataset::format_float;
use crate::error::{CoreError, Result};
use crate::mbd::DistributionEstimate;
use crate::scalar::sigmoid;
use crate::special::normal_cdf;

/// Division floor for sigma in RPS construction.
pub const RPS_SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    None,
    AdditiveBoost,
    HardFilter,
    MultiplicativeReweight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReweightForm {
    PowerRatio,
    Sigmoid,
}

/// Per-task weights plus the RPS integration strategy and thresholds.
/// `tau_high`/`tau_low` are in RPS (z) units: the significance band
/// `mu + alpha sigma` becomes the z threshold `alpha` after normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmPolicy {
    pub weights: Vec<(String, f64)>,
    pub strategy: Strategy,
    pub tau_high: f64,
    pub tau_low: f64,
    pub boost_weight: f64,
    pub reweight_alpha: f64,
    pub reweight_form: ReweightForm,
    pub sigma_floor: f64,
}

impl VmPolicy {
    pub fn defaults(weights: Vec<(String, f64)>, strategy: Strategy) -> Self {
        VmPolicy {
            weights,
            strategy,
            tau_high: 1.5,
            tau_low: -1.5,
            boost_weight: 1.0,
            reweight_alpha: 1.0,
            reweight_form: ReweightForm::Sigmoid,
            sigma_floor: RPS_SIGMA_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|(_, w)| !w.is_finite()) {
            return Err(CoreError::InvalidConfig("non-finite task weight".into()));
        }
        if !(1.0..=3.0).contains(&self.tau_high) {
            return Err(CoreError::InvalidConfig(format!(
                "tau_high = {} outside the significance band [1.0, 3.0]",
                self.tau_high
            )));
        }
        if !(-3.0..=-1.0).contains(&self.tau_low) {
            return Err(CoreError::InvalidConfig(format!(
                "tau_low = {} outside [-3.0, -1.0]",
                self.tau_low
            )));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(CoreError::InvalidConfig("sigma_floor must be positive".into()));
        }
        if self.boost_weight < 0.0 {
            return Err(CoreError::InvalidConfig("boost_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Relative preference score (p - mu) / max(sigma, floor). Prediction and
/// estimate must live in the same space (log1p or logit).
pub fn rps(p: f64, est: &DistributionEstimate, sigma_floor: f64) -> Result<f64> {
    if !p.is_finite() || !est.mean.is_finite() || !est.variance.is_finite() {
        return Err(CoreError::NonFinite("rps inputs".into()));
    }
    Ok((p - est.mean) / est.sigma().max(sigma_floor))
}

/// Gaussian percentile of an RPS value.
pub fn percentile(rps: f64) -> f64 {
    normal_cdf(rps)
}

/// Linear value-model aggregation S = sum_t w_t yhat_t.
pub fn vm_score(predictions: &[f64], weights: &[f64]) -> Result<f64> {
    if predictions.len() != weights.len() {
        return Err(CoreError::ShapeMismatch {
            context: "vm_score".into(),
            expected: format!("{} weights", predictions.len()),
            actual: format!("{} weights", weights.len()),
        });
    }
    Ok(predictions.iter().zip(weights).map(|(y, w)| y * w).sum())
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOutcome {
    pub score: f64,
    /// Set when the power-ratio form was requested but mu <= 0 forced the
    /// sigmoid fallback.
    pub power_fallback: bool,
}

/// Fold an RPS into the final score per the policy strategy. `p` and `mu`
/// are consulted only by the power-ratio reweight form.
pub fn integrate(
    s_final: f64,
    rps: f64,
    p: f64,
    mu: f64,
    policy: &VmPolicy,
) -> IntegrateOutcome {
    match policy.strategy {
        Strategy::None => IntegrateOutcome { score: s_final, power_fallback: false },
        Strategy::AdditiveBoost => IntegrateOutcome {
            score: s_final + policy.boost_weight * (rps - policy.tau_high).max(0.0),
            power_fallback: false,
        },
        Strategy::HardFilter => IntegrateOutcome {
            score: if rps >= policy.tau_low { s_final } else { 0.0 },
            power_fallback: false,
        },
        Strategy::MultiplicativeReweight => {
            let (factor, fallback) = match policy.reweight_form {
                ReweightForm::Sigmoid => (sigmoid(rps), false),
                ReweightForm::PowerRatio => {
                    if mu > 0.0 && p > 0.0 {
                        ((p / mu).powf(policy.reweight_alpha), false)
                    } else {
                        // Power ratio is undefined for non-positive values in
                        // the working space (e.g. logit space); fall back.
                        (sigmoid(rps), true)
                    }
                }
            };
            IntegrateOutcome {
                score: s_final * factor,
                power_fallback: fallback,
            }
        }
    }
}

// ---- bucketized counting -------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub count: usize,
    pub mean: f64,
    /// Population variance, matching the method-of-moments target.
    pub variance: f64,
    /// Nearest-rank 95th percentile.
    pub p95: f64,
}

/// Offline per-bucket statistics of a value series over a bias attribute.
/// Buckets that saw no data carry `None` and any correction against them is
/// a sparsity error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketTable {
    pub attribute: String,
    pub bucketing: Bucketing,
    pub buckets: Vec<Option<BucketStats>>,
    pub snapshot_index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionForm {
    Mean,
    Z,
}

/// Nearest-rank percentile: the ceil(q n)-th smallest value.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Build the table from aligned attribute/value series.
pub fn build_bucket_table(
    attribute: &str,
    attr_values: &[f64],
    values: &[f64],
    edges: Vec<f64>,
    snapshot_index: u32,
) -> Result<BucketTable> {
    if attr_values.len() != values.len() {
        return Err(CoreError::ShapeMismatch {
            context: "build_bucket_table".into(),
            expected: format!("{} values", attr_values.len()),
            actual: format!("{} values", values.len()),
        });
    }
    let bucketing = Bucketing::new(edges)?;
    let k = bucketing.num_buckets();
    let mut per_bucket: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (a, v) in attr_values.iter().zip(values) {
        per_bucket[bucketing.index_of(*a)].push(*v);
    }
    let buckets = per_bucket
        .into_iter()
        .map(|mut vals| {
            if vals.is_empty() {
                return None;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let variance = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            vals.sort_by(|a, b| a.total_cmp(b));
            let p95 = nearest_rank(&vals, 0.95);
            Some(BucketStats {
                count: vals.len(),
                mean,
                variance,
                p95,
            })
        })
        .collect();
    Ok(BucketTable {
        attribute: attribute.to_string(),
        bucketing,
        buckets,
        snapshot_index,
    })
}

impl BucketTable {
    pub fn stats_for(&self, attr_value: f64) -> Result<&BucketStats> {
        let k = self.bucketing.index_of(attr_value);
        self.buckets[k]
            .as_ref()
            .ok_or_else(|| CoreError::SparseBucket(self.bucketing.label(k)))
    }

    pub fn stats_at(&self, bucket: usize) -> Result<&BucketStats> {
        self.buckets
            .get(bucket)
            .and_then(|b| b.as_ref())
            .ok_or_else(|| {
                CoreError::SparseBucket(if bucket < self.bucketing.num_buckets() {
                    self.bucketing.label(bucket)
                } else {
                    format!("index {bucket}")
                })
            })
    }

    /// Delimiter-separated snapshot: one row per bucket with edges, count,
    /// mean, variance, p95, snapshot index; empty stats for empty buckets.
    pub fn write_csv(&self, path: &Path, provenance: &str) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "# provenance: {provenance}")?;
        writeln!(f, "attribute,bucket_lo,bucket_hi,count,mean,variance,p95,snapshot_index")?;
        for (k, stats) in self.buckets.iter().enumerate() {
            let lo = format_float(self.bucketing.edges[k]);
            let hi = format_float(self.bucketing.edges[k + 1]);
            match stats {
                Some(s) => writeln!(
                    f,
                    "{},{},{},{},{},{},{},{}",
                    self.attribute,
                    lo,
                    hi,
                    s.count,
                    format_float(s.mean),
                    format_float(s.variance),
                    format_float(s.p95),
                    self.snapshot_index
                )?,
                None => writeln!(
                    f,
                    "{},{},{},0,,,,{}",
                    self.attribute, lo, hi, self.snapshot_index
                )?,
            }
        }
        Ok(())
    }
}

/// Bucketized-counting correction: yhat - mu_k, or (yhat - mu_k) / sigma_k.
pub fn naive_correction(
    y_hat: f64,
    table: &BucketTable,
    attr_value: f64,
    form: CorrectionForm,
) -> Result<f64> {
    let stats = table.stats_for(attr_value)?;
    Ok(match form {
        CorrectionForm::Mean => y_hat - stats.mean,
        CorrectionForm::Z => {
            (y_hat - stats.mean) / stats.variance.sqrt().max(RPS_SIGMA_FLOOR)
        }
    })
}

/// Per-bucket p95 threshold indicator: 1 when the value clears the bucket's
/// static 95th-percentile threshold.
pub fn vvp95_indicator(value: f64, table: &BucketTable, attr_value: f64) -> Result<f64> {
    let stats = table.stats_for(attr_value)?;
    Ok(if value >= stats.p95 { 1.0 } else { 0.0 })
}

/// Normalized time spent: sigmoid(c (pred_ts (1 - pskip) - avg7d)).
pub fn nts(pred_ts: f64, pskip: f64, avg7d: f64, c: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pskip) {
        return Err(CoreError::InvalidConfig(format!(
            "pskip = {pskip} outside [0,1]"
        )));
    }
    if !(c > 0.0) {
        return Err(CoreError::InvalidConfig("nts sharpness c must be > 0".into()));
    }
    Ok(sigmoid(c * (pred_ts * (1.0 - pskip) - avg7d)))
}
