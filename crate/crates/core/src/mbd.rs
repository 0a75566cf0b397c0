//! The moments branch: contextual mean and variance of the ranker's
//! predictions over a bias feature set, learned by decoupled method-of-moments
//! losses behind stop-gradients, with optional pinball-loss quantile heads and
//! logit-space projection for sparse binary tasks.

use serde::{Deserialize, Serialize};

use crate::bucket::Bucketing;
use crate::dataset::Dataset;
use crate::error::{CoreError, Result};
use crate::numerics::{Activation, Algorithm, Checkpoint, Mlp, MlpSpec, NodeId};
use crate::ranker::{RankerModel, TargetKind};
use crate::schema::{FeatureSchema, Normalization};
use crate::{Optimizer, ParamStore, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A named subset of feature columns defining the debiasing context.
/// Entries may be column names or schema group names (e.g. `user_full`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasFeatureSet {
    pub name: String,
    pub columns: Vec<String>,
}

impl BiasFeatureSet {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        BiasFeatureSet {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn resolve(&self, schema: &FeatureSchema) -> Result<Vec<usize>> {
        if self.columns.is_empty() {
            return Err(CoreError::InvalidConfig(format!(
                "bias feature set `{}` is empty",
                self.name
            )));
        }
        let indices = schema.resolve(&self.columns)?;
        let mut seen = indices.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != indices.len() {
            return Err(CoreError::InvalidConfig(format!(
                "bias feature set `{}` repeats a column",
                self.name
            )));
        }
        Ok(indices)
    }
}

/// Project a full feature vector onto the set's columns, in declared order.
pub fn project(schema: &FeatureSchema, set: &BiasFeatureSet, x: &[f64]) -> Result<Vec<f64>> {
    schema.check_width(x)?;
    let indices = set.resolve(schema)?;
    Ok(indices.into_iter().map(|i| x[i]).collect())
}

/// How example features become the branch input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ContextProjection {
    /// Normalized values of the selected columns.
    Columns { set: BiasFeatureSet },
    /// One-hot of a bucketed attribute (the granular-bucket equivalence
    /// setup: with linear heads the branch reduces to per-bucket counting).
    BucketOneHot { column: String, edges: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Default: fit the ranker's (detached) prediction.
    RankerPrediction,
    /// Ablation / staleness mode: fit the transformed ground-truth label.
    GroundTruthLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarySpace {
    Probability,
    /// Default for binary tasks: learn moments of ln(p / (1 - p)).
    Logit,
}

pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbdBranchConfig {
    pub name: String,
    pub task: String,
    pub projection: ContextProjection,
    /// Hidden widths of the branch trunk; empty means the heads read the
    /// projected context directly (linear heads).
    pub trunk_hidden: Vec<usize>,
    pub quantile_levels: Vec<f64>,
    pub target_mode: TargetMode,
    pub binary_space: BinarySpace,
    pub init_seed: u64,
    pub sigma_floor: f64,
}

impl MbdBranchConfig {
    pub fn defaults(name: &str, task: &str, projection: ContextProjection) -> Self {
        MbdBranchConfig {
            name: name.into(),
            task: task.into(),
            projection,
            trunk_hidden: vec![32, 32],
            quantile_levels: vec![],
            target_mode: TargetMode::RankerPrediction,
            binary_space: BinarySpace::Logit,
            init_seed: 0,
            sigma_floor: SIGMA_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum ResolvedProjection {
    Columns {
        names: Vec<String>,
        indices: Vec<usize>,
        norms: Vec<Normalization>,
    },
    BucketOneHot {
        column_index: usize,
        bucketing: Bucketing,
    },
}

impl ResolvedProjection {
    fn input_dim(&self) -> usize {
        match self {
            ResolvedProjection::Columns { indices, .. } => indices.len(),
            ResolvedProjection::BucketOneHot { bucketing, .. } => bucketing.num_buckets(),
        }
    }
}

/// (mu, sigma^2, optional quantiles) in the branch's model space.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionEstimate {
    pub mean: f64,
    pub variance: f64,
    /// (tau, q_tau) sorted by tau. Independent heads do not guarantee
    /// monotone quantiles; see [`DistributionEstimate::quantile_crossings`].
    pub quantiles: Vec<(f64, f64)>,
}

impl DistributionEstimate {
    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Number of adjacent quantile pairs that violate monotonicity in tau.
    pub fn quantile_crossings(&self) -> usize {
        self.quantiles.windows(2).filter(|w| w[1].1 < w[0].1).count()
    }
}

pub struct MbdBranch {
    pub config: MbdBranchConfig,
    pub store: ParamStore,
    context: ResolvedProjection,
    trunk: Option<Mlp>,
    mean_head: Mlp,
    var_head: Mlp,
    quantile_heads: Vec<Mlp>,
}

/// Tape nodes for one branch forward pass.
pub struct BranchNodes {
    pub mean: NodeId,
    /// sigma^2 after exp and flooring.
    pub variance: NodeId,
    pub quantiles: Vec<NodeId>,
}

impl MbdBranch {
    /// Build a branch against a schema. If the schema carries normalization
    /// constants (a trained ranker's schema), column projections reuse them;
    /// branch parameters always live in their own store, disjoint from the
    /// ranker's.
    pub fn new(config: MbdBranchConfig, schema: &FeatureSchema) -> Result<Self> {
        for &tau in &config.quantile_levels {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(CoreError::InvalidConfig(format!(
                    "quantile level {tau} outside (0,1)"
                )));
            }
        }
        if !(config.sigma_floor > 0.0) {
            return Err(CoreError::InvalidConfig("sigma_floor must be positive".into()));
        }
        let context = match &config.projection {
            ContextProjection::Columns { set } => {
                let indices = set.resolve(schema)?;
                let norms = match &schema.normalization {
                    Some(all) => indices.iter().map(|&i| all[i]).collect(),
                    None => vec![Normalization { mean: 0.0, std: 1.0 }; indices.len()],
                };
                let names = indices
                    .iter()
                    .map(|&i| schema.columns[i].name.clone())
                    .collect();
                ResolvedProjection::Columns { names, indices, norms }
            }
            ContextProjection::BucketOneHot { column, edges } => ResolvedProjection::BucketOneHot {
                column_index: schema.index_of(column)?,
                bucketing: Bucketing::new(edges.clone())?,
            },
        };

        let mut store = ParamStore::new();
        let input_dim = context.input_dim();
        let (trunk, head_in) = if config.trunk_hidden.is_empty() {
            (None, input_dim)
        } else {
            let mut widths = vec![input_dim];
            widths.extend(&config.trunk_hidden);
            let spec = MlpSpec::new(widths.clone(), Activation::Identity, config.init_seed)?;
            (
                Some(Mlp::init(spec, &mut store, "trunk")?),
                *widths.last().unwrap(),
            )
        };
        let mean_head = Mlp::init(
            MlpSpec::new(vec![head_in, 1], Activation::Identity, config.init_seed ^ 1)?,
            &mut store,
            "mean",
        )?;
        let var_head = Mlp::init(
            MlpSpec::new(vec![head_in, 1], Activation::Identity, config.init_seed ^ 2)?,
            &mut store,
            "var",
        )?;
        let mut quantile_heads = Vec::new();
        for (j, _) in config.quantile_levels.iter().enumerate() {
            quantile_heads.push(Mlp::init(
                MlpSpec::new(
                    vec![head_in, 1],
                    Activation::Identity,
                    config.init_seed ^ (100 + j as u64),
                )?,
                &mut store,
                &format!("quantile.{j}"),
            )?);
        }
        Ok(MbdBranch {
            config,
            store,
            context,
            trunk,
            mean_head,
            var_head,
            quantile_heads,
        })
    }

    /// Branch input from a full raw feature vector.
    pub fn context_vector(&self, x_raw: &[f64]) -> Result<Vec<f64>> {
        match &self.context {
            ResolvedProjection::Columns { indices, norms, .. } => {
                if indices.iter().any(|&i| i >= x_raw.len()) {
                    return Err(CoreError::ShapeMismatch {
                        context: "branch projection".into(),
                        expected: format!("feature vector spanning {indices:?}"),
                        actual: format!("{} values", x_raw.len()),
                    });
                }
                Ok(indices
                    .iter()
                    .zip(norms)
                    .map(|(&i, n)| (x_raw[i] - n.mean) / n.std)
                    .collect())
            }
            ResolvedProjection::BucketOneHot { column_index, bucketing } => {
                if *column_index >= x_raw.len() {
                    return Err(CoreError::ShapeMismatch {
                        context: "branch projection".into(),
                        expected: format!("feature vector with column {column_index}"),
                        actual: format!("{} values", x_raw.len()),
                    });
                }
                Ok(bucketing.one_hot(x_raw[*column_index]))
            }
        }
    }

    fn infer_head_input(&self, ctx: &[f64]) -> Result<Vec<f64>> {
        match &self.trunk {
            Some(trunk) => Ok(trunk.infer(&self.store, ctx)?.0),
            None => Ok(ctx.to_vec()),
        }
    }

    /// Distribution estimate for a context vector in the projection's own
    /// space: raw projected columns for column contexts, a one-hot for
    /// bucket contexts. Pure function of the trained parameters.
    pub fn estimate_context_space(&self, ctx: &[f64]) -> Result<DistributionEstimate> {
        let h = self.infer_head_input(ctx)?;
        let mean = self.mean_head.infer(&self.store, &h)?.0[0];
        let raw = self.var_head.infer(&self.store, &h)?.0[0];
        let variance = raw.exp().max(self.config.sigma_floor);
        let mut quantiles: Vec<(f64, f64)> = self
            .config
            .quantile_levels
            .iter()
            .zip(&self.quantile_heads)
            .map(|(&tau, head)| Ok((tau, head.infer(&self.store, &h)?.0[0])))
            .collect::<Result<_>>()?;
        quantiles.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(DistributionEstimate { mean, variance, quantiles })
    }

    /// Estimate from projected raw values (column contexts normalize
    /// internally; bucket contexts expect the attribute's raw value bucketed
    /// by the caller via the one-hot embedding).
    pub fn estimate(&self, x_prime_raw: &[f64]) -> Result<DistributionEstimate> {
        match &self.context {
            ResolvedProjection::Columns { norms, .. } => {
                if x_prime_raw.len() != norms.len() {
                    return Err(CoreError::ShapeMismatch {
                        context: "branch estimate".into(),
                        expected: format!("{} projected values", norms.len()),
                        actual: format!("{} values", x_prime_raw.len()),
                    });
                }
                let ctx: Vec<f64> = x_prime_raw
                    .iter()
                    .zip(norms)
                    .map(|(v, n)| (v - n.mean) / n.std)
                    .collect();
                self.estimate_context_space(&ctx)
            }
            ResolvedProjection::BucketOneHot { .. } => self.estimate_context_space(x_prime_raw),
        }
    }

    /// Estimate straight from a full raw feature vector.
    pub fn estimate_full(&self, x_raw: &[f64]) -> Result<DistributionEstimate> {
        let ctx = self.context_vector(x_raw)?;
        self.estimate_context_space(&ctx)
    }

    /// Record the branch on a tape for one context vector.
    pub fn forward(&self, tape: &mut Tape, ctx: &[f64]) -> Result<BranchNodes> {
        let x = tape.constant(ctx);
        let h = match &self.trunk {
            Some(trunk) => trunk.forward(tape, &self.store, x)?.output,
            None => x,
        };
        let mean = self.mean_head.forward(tape, &self.store, h)?.output;
        let raw = self.var_head.forward(tape, &self.store, h)?.output;
        let exp = tape.exp(raw);
        let variance = tape.max_const(exp, self.config.sigma_floor);
        let quantiles = self
            .quantile_heads
            .iter()
            .map(|head| Ok(head.forward(tape, &self.store, h)?.output))
            .collect::<Result<Vec<_>>>()?;
        Ok(BranchNodes { mean, variance, quantiles })
    }

    /// Space tag for downstream signal construction: the space the branch's
    /// moments live in for a task of the given kind.
    pub fn space_label(&self, kind: TargetKind) -> &'static str {
        match kind {
            TargetKind::Regression => "log1p",
            TargetKind::Binary => match self.config.binary_space {
                BinarySpace::Logit => "logit",
                BinarySpace::Probability => "probability",
            },
        }
    }

    pub fn to_checkpoint(&self, seed: u64, kind: TargetKind) -> Result<(Checkpoint, BranchMeta)> {
        Ok((
            Checkpoint::from_store(&self.store, seed)?,
            BranchMeta {
                config: self.config.clone(),
                context: self.context.clone(),
                space: self.space_label(kind).to_string(),
            },
        ))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, meta: BranchMeta) -> Result<Self> {
        let store: ParamStore = ckpt.into_store()?;
        let config = meta.config;
        let input_dim = meta.context.input_dim();
        let (trunk, head_in) = if config.trunk_hidden.is_empty() {
            (None, input_dim)
        } else {
            let mut widths = vec![input_dim];
            widths.extend(&config.trunk_hidden);
            let spec = MlpSpec::new(widths.clone(), Activation::Identity, config.init_seed)?;
            (
                Some(Mlp::attach(spec, &store, "trunk")?),
                *widths.last().unwrap(),
            )
        };
        let mean_head = Mlp::attach(
            MlpSpec::new(vec![head_in, 1], Activation::Identity, config.init_seed ^ 1)?,
            &store,
            "mean",
        )?;
        let var_head = Mlp::attach(
            MlpSpec::new(vec![head_in, 1], Activation::Identity, config.init_seed ^ 2)?,
            &store,
            "var",
        )?;
        let mut quantile_heads = Vec::new();
        for (j, _) in config.quantile_levels.iter().enumerate() {
            quantile_heads.push(Mlp::attach(
                MlpSpec::new(
                    vec![head_in, 1],
                    Activation::Identity,
                    config.init_seed ^ (100 + j as u64),
                )?,
                &store,
                &format!("quantile.{j}"),
            )?);
        }
        Ok(MbdBranch {
            config,
            store,
            context: meta.context,
            trunk,
            mean_head,
            var_head,
            quantile_heads,
        })
    }

}

/// Self-describing branch sidecar: config, resolved projection, space tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchMeta {
    pub config: MbdBranchConfig,
    context: ResolvedProjection,
    pub space: String,
}

// ---- method-of-moments losses ------------------------------------------------

/// Mean estimation loss (sg[p] - mu)^2, elementwise. The stop-gradient is
/// applied here, so gradient flows only into the branch side regardless of
/// what `p` is wired to.
pub fn mean_loss(tape: &mut Tape, p: NodeId, mu: NodeId) -> NodeId {
    let p_sg = tape.stop_grad(p);
    let diff = tape.sub(p_sg, mu);
    tape.square(diff)
}

/// Variance estimation loss (sigma^2 - sg[(p - sg[mu])^2])^2, elementwise.
/// Both stop-gradients of the defining equation are materialized: the inner
/// one detaches the current-step mean, the outer one freezes the squared
/// residual target.
pub fn variance_loss(tape: &mut Tape, p: NodeId, mu: NodeId, variance: NodeId) -> NodeId {
    let p_sg = tape.stop_grad(p);
    let mu_sg = tape.stop_grad(mu);
    let resid = tape.sub(p_sg, mu_sg);
    let resid_sq = tape.square(resid);
    let target = tape.stop_grad(resid_sq);
    let diff = tape.sub(variance, target);
    tape.square(diff)
}

/// Pinball loss [tau - I(p < q)](p - q) against the detached prediction.
pub fn pinball_loss(tape: &mut Tape, p: NodeId, q: NodeId, tau: f64) -> Result<NodeId> {
    let p_sg = tape.stop_grad(p);
    tape.pinball(p_sg, q, tau)
}

/// Logit-space projection of a probability, with the working clamp to
/// [1e-6, 1 - 1e-6]. Inputs outside [0, 1] are rejected.
pub fn logit_target(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CoreError::InvalidConfig(format!(
            "probability {p} outside [0,1]"
        )));
    }
    let clamped = p.clamp(1e-6, 1.0 - 1e-6);
    Ok((clamped / (1.0 - clamped)).ln())
}

// ---- training ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Targets are precomputed from the frozen ranker; only the branch is on
    /// the tape.
    FrozenRanker,
    /// The ranker runs on the same tape. Its own supervised loss is added
    /// only when `ranker_loss` is set; either way the branch losses reach it
    /// exclusively through stop-gradients.
    Joint { ranker_loss: bool },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchTrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub algorithm: Algorithm,
    pub shuffle_seed: u64,
}

impl Default for BranchTrainConfig {
    fn default() -> Self {
        BranchTrainConfig {
            learning_rate: 5e-3,
            steps: 2000,
            batch_size: 256,
            algorithm: Algorithm::adam_default(),
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BranchTrainSummary {
    pub steps_run: usize,
    pub final_total_loss: f64,
    pub skipped_non_finite: usize,
}

/// Target for one example in the branch's model space.
fn branch_target(
    branch: &MbdBranch,
    ranker: &RankerModel,
    dataset: &Dataset,
    row: usize,
    task_idx: usize,
) -> Result<f64> {
    let interaction = &dataset.interactions[row];
    let task = &ranker.tasks[task_idx];
    match branch.config.target_mode {
        TargetMode::RankerPrediction => {
            let preds = ranker.predict(&interaction.features)?;
            let p = &preds[task_idx];
            Ok(match task.kind {
                TargetKind::Regression => p.value,
                TargetKind::Binary => match branch.config.binary_space {
                    BinarySpace::Logit => p.logit.expect("binary predictions expose a logit"),
                    BinarySpace::Probability => p.value,
                },
            })
        }
        TargetMode::GroundTruthLabel => {
            let label = task.transformed_label(dataset, interaction)?;
            match (task.kind, branch.config.binary_space) {
                (TargetKind::Binary, BinarySpace::Logit) => Err(CoreError::InvalidConfig(
                    "ground-truth targets for a binary task cannot be projected to logit space; \
                     use binary_space = probability"
                        .into(),
                )),
                _ => Ok(label),
            }
        }
    }
}

fn check_target_space(branch: &MbdBranch, ranker: &RankerModel, task_idx: usize) -> Result<()> {
    if matches!(
        (branch.config.target_mode, ranker.tasks[task_idx].kind, branch.config.binary_space),
        (TargetMode::GroundTruthLabel, TargetKind::Binary, BinarySpace::Logit)
    ) {
        return Err(CoreError::InvalidConfig(
            "ground-truth targets for a binary task cannot be projected to logit space".into(),
        ));
    }
    Ok(())
}

/// Frozen-ranker training with caller-owned optimizer state, so incremental
/// runs (the staleness experiment) keep their moments across calls. Targets
/// are precomputed once from the (immutable) ranker or the labels.
pub fn train_branch_frozen(
    branch: &mut MbdBranch,
    ranker: &RankerModel,
    dataset: &Dataset,
    idx: &[usize],
    cfg: &BranchTrainConfig,
    optimizer: &mut Optimizer,
) -> Result<BranchTrainSummary> {
    if idx.is_empty() {
        return Err(CoreError::InvalidConfig("empty branch training set".into()));
    }
    let task_idx = ranker.task_index(&branch.config.task)?;
    check_target_space(branch, ranker, task_idx)?;

    let contexts: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| branch.context_vector(&dataset.interactions[i].features))
        .collect::<Result<_>>()?;
    let targets: Vec<f64> = idx
        .iter()
        .map(|&i| branch_target(branch, ranker, dataset, i, task_idx))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..idx.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    order.shuffle(&mut rng);
    let batch = cfg.batch_size.max(1);
    let mut cursor = 0usize;
    let mut skipped = 0usize;
    let mut final_total = f64::NAN;
    let mut steps_run = 0usize;

    while steps_run < cfg.steps {
        if cursor + batch > order.len() {
            cursor = 0;
            order.shuffle(&mut rng);
        }
        let hi = (cursor + batch).min(order.len());
        let rows = &order[cursor..hi];
        cursor = hi % order.len().max(1);

        let mut tape = Tape::new();
        let mut mean_parts = Vec::with_capacity(rows.len());
        let mut var_parts = Vec::with_capacity(rows.len());
        let mut quantile_parts: Vec<Vec<NodeId>> =
            vec![Vec::with_capacity(rows.len()); branch.config.quantile_levels.len()];
        for &k in rows {
            if !targets[k].is_finite() {
                skipped += 1;
                continue;
            }
            let p = tape.constant(&[targets[k]]);
            let nodes = branch.forward(&mut tape, &contexts[k])?;
            mean_parts.push(mean_loss(&mut tape, p, nodes.mean));
            var_parts.push(variance_loss(&mut tape, p, nodes.mean, nodes.variance));
            for (j, &tau) in branch.config.quantile_levels.iter().enumerate() {
                quantile_parts[j].push(pinball_loss(&mut tape, p, nodes.quantiles[j], tau)?);
            }
        }
        if mean_parts.is_empty() {
            steps_run += 1;
            continue;
        }
        let stacked_mean = tape.concat(&mean_parts);
        let mut total = tape.mean(stacked_mean);
        let stacked_var = tape.concat(&var_parts);
        let var_mean = tape.mean(stacked_var);
        total = tape.add(total, var_mean);
        for parts in &quantile_parts {
            let stacked = tape.concat(parts);
            let m = tape.mean(stacked);
            total = tape.add(total, m);
        }
        final_total = tape.scalar(total);
        if !final_total.is_finite() {
            return Err(CoreError::NonFinite("branch training loss".into()));
        }
        tape.backward_scalar(total, &mut [&mut branch.store])?;
        optimizer.step(&mut branch.store)?;
        branch.store.zero_grads();
        steps_run += 1;
    }
    Ok(BranchTrainSummary {
        steps_run,
        final_total_loss: final_total,
        skipped_non_finite: skipped,
    })
}

/// Train the branch. Ranker parameters receive exactly zero gradient from
/// the branch losses; in joint mode with `ranker_loss` the ranker trains on
/// its own supervised loss in the same loop. `steps` counts optimizer steps;
/// batches cycle through a seeded shuffle of `idx`.
pub fn train_branch(
    branch: &mut MbdBranch,
    ranker: &mut RankerModel,
    dataset: &Dataset,
    idx: &[usize],
    mode: TrainMode,
    cfg: &BranchTrainConfig,
) -> Result<BranchTrainSummary> {
    if let TrainMode::FrozenRanker = mode {
        let mut optimizer = Optimizer::new(cfg.algorithm, cfg.learning_rate);
        return train_branch_frozen(branch, ranker, dataset, idx, cfg, &mut optimizer);
    }
    if idx.is_empty() {
        return Err(CoreError::InvalidConfig("empty branch training set".into()));
    }
    let task_idx = ranker.task_index(&branch.config.task)?;
    check_target_space(branch, ranker, task_idx)?;

    let contexts: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| branch.context_vector(&dataset.interactions[i].features))
        .collect::<Result<_>>()?;
    // Label targets are precomputed; prediction targets run on the tape.
    let frozen_targets: Option<Vec<f64>> = match branch.config.target_mode {
        TargetMode::GroundTruthLabel => Some(
            idx.iter()
                .map(|&i| branch_target(branch, ranker, dataset, i, task_idx))
                .collect::<Result<_>>()?,
        ),
        TargetMode::RankerPrediction => None,
    };
    let normalized: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| ranker.schema.normalize(&dataset.interactions[i].features))
        .collect::<Result<_>>()?;
    let add_ranker_loss = matches!(mode, TrainMode::Joint { ranker_loss: true });
    let labels: Vec<Vec<f64>> = if add_ranker_loss {
        ranker
            .tasks
            .iter()
            .map(|t| {
                idx.iter()
                    .map(|&i| t.transformed_label(dataset, &dataset.interactions[i]))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut branch_opt = Optimizer::new(cfg.algorithm, cfg.learning_rate);
    let mut ranker_opt = Optimizer::new(cfg.algorithm, cfg.learning_rate);
    let mut order: Vec<usize> = (0..idx.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    order.shuffle(&mut rng);
    let mut skipped = 0usize;
    let mut steps_run = 0usize;
    let mut cursor = 0usize;
    let mut final_total = f64::NAN;
    let batch = cfg.batch_size.max(1);

    while steps_run < cfg.steps {
        if cursor + batch > order.len() {
            cursor = 0;
            order.shuffle(&mut rng);
            if batch > order.len() {
                // tiny datasets: one batch is the whole set
            }
        }
        let hi = (cursor + batch).min(order.len());
        let rows = &order[cursor..hi];
        cursor = hi % order.len().max(1);

        let mut tape = Tape::new();
        let mut mean_parts = Vec::with_capacity(rows.len());
        let mut var_parts = Vec::with_capacity(rows.len());
        let mut quantile_parts: Vec<Vec<NodeId>> =
            vec![Vec::with_capacity(rows.len()); branch.config.quantile_levels.len()];
        let mut ranker_parts: Vec<Vec<NodeId>> = vec![Vec::new(); ranker.tasks.len()];

        for &k in rows {
            // Target node: ranker-on-tape for prediction targets, constant
            // for label targets. Non-finite targets are skipped and counted.
            let p = match &frozen_targets {
                None => {
                    let f = ranker.forward_task(&mut tape, &normalized[k], task_idx)?;
                    match (ranker.tasks[task_idx].kind, branch.config.binary_space) {
                        (TargetKind::Binary, BinarySpace::Logit) => f.preactivation,
                        (TargetKind::Binary, BinarySpace::Probability) => f.output,
                        (TargetKind::Regression, _) => f.output,
                    }
                }
                Some(targets) => {
                    let t = targets[k];
                    if !t.is_finite() {
                        skipped += 1;
                        continue;
                    }
                    tape.constant(&[t])
                }
            };
            if !tape.value(p)[0].is_finite() {
                skipped += 1;
                continue;
            }

            let nodes = branch.forward(&mut tape, &contexts[k])?;
            mean_parts.push(mean_loss(&mut tape, p, nodes.mean));
            var_parts.push(variance_loss(&mut tape, p, nodes.mean, nodes.variance));
            for (j, &tau) in branch.config.quantile_levels.iter().enumerate() {
                quantile_parts[j].push(pinball_loss(&mut tape, p, nodes.quantiles[j], tau)?);
            }

            if add_ranker_loss {
                for (t, task) in ranker.tasks.iter().enumerate() {
                    let f = ranker.forward_task(&mut tape, &normalized[k], t)?;
                    let y = labels[t][k];
                    let loss = match task.loss {
                        crate::ranker::LossKind::SquaredError => {
                            let target = tape.constant(&[y]);
                            let diff = tape.sub(f.output, target);
                            tape.square(diff)
                        }
                        crate::ranker::LossKind::BinaryCrossEntropy => {
                            tape.bce_with_logits(f.preactivation, &[y])
                        }
                    };
                    ranker_parts[t].push(loss);
                }
            }
        }
        if mean_parts.is_empty() {
            steps_run += 1;
            continue;
        }

        let stacked_mean = tape.concat(&mean_parts);
        let mut total = tape.mean(stacked_mean);
        let stacked_var = tape.concat(&var_parts);
        let var_mean = tape.mean(stacked_var);
        total = tape.add(total, var_mean);
        for parts in &quantile_parts {
            let stacked = tape.concat(parts);
            let m = tape.mean(stacked);
            total = tape.add(total, m);
        }
        if add_ranker_loss {
            for parts in &ranker_parts {
                if parts.is_empty() {
                    continue;
                }
                let stacked = tape.concat(parts);
                let m = tape.mean(stacked);
                total = tape.add(total, m);
            }
        }

        final_total = tape.scalar(total);
        if !final_total.is_finite() {
            return Err(CoreError::NonFinite("branch training loss".into()));
        }
        tape.backward_scalar(total, &mut [&mut branch.store, &mut ranker.store])?;
        branch_opt.step(&mut branch.store)?;
        branch.store.zero_grads();
        ranker_opt.step(&mut ranker.store)?;
        ranker.store.zero_grads();
        steps_run += 1;
    }

    Ok(BranchTrainSummary {
        steps_run,
        final_total_loss: final_total,
        skipped_non_finite: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnKind, ColumnSpec};
    use std::collections::BTreeMap;

    fn schema3() -> FeatureSchema {
        let mut groups = BTreeMap::new();
        groups.insert("pair".to_string(), vec!["a".to_string(), "b".to_string()]);
        FeatureSchema::new(
            vec![
                ColumnSpec { name: "a".into(), kind: ColumnKind::Continuous },
                ColumnSpec { name: "b".into(), kind: ColumnKind::Continuous },
                ColumnSpec { name: "c".into(), kind: ColumnKind::Continuous },
            ],
            groups,
        )
        .unwrap()
    }

    #[test]
    fn project_full_set_is_identity() {
        let schema = schema3();
        let set = BiasFeatureSet::new("all", &["a", "b", "c"]);
        let x = vec![1.0, 2.0, 3.0];
        assert_eq!(project(&schema, &set, &x).unwrap(), x);
    }

    #[test]
    fn project_singleton() {
        let schema = schema3();
        let set = BiasFeatureSet::new("len", &["b"]);
        assert_eq!(project(&schema, &set, &[1.0, 2.0, 3.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn project_unknown_column_names_it() {
        let schema = schema3();
        let set = BiasFeatureSet::new("bad", &["item_color"]);
        let err = project(&schema, &set, &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(err.to_string().contains("item_color"));
    }

    #[test]
    fn duplicate_columns_rejected() {
        let schema = schema3();
        let set = BiasFeatureSet::new("dup", &["a", "pair"]);
        assert!(set.resolve(&schema).is_err());
    }

    #[test]
    fn mean_loss_values_and_gradients() {
        // p = 2, mu = 0 => loss 4, dloss/dmu = -4, upstream of p gets zero.
        let mut p_store = ParamStore::new();
        let p_id = p_store.register("p", &[1], vec![2.0]).unwrap();
        let mut mu_store = ParamStore::new();
        let mu_id = mu_store.register("mu", &[1], vec![0.0]).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&p_store, p_id);
        let mu = tape.param(&mu_store, mu_id);
        let loss = mean_loss(&mut tape, p, mu);
        assert_eq!(tape.scalar(loss), 4.0);
        tape.backward_scalar(loss, &mut [&mut p_store, &mut mu_store])
            .unwrap();
        assert_eq!(mu_store.grads(mu_id), &[-4.0]);
        assert_eq!(p_store.grads(p_id), &[0.0]);
    }

    #[test]
    fn mean_loss_zero_at_exact_fit() {
        let mut tape = Tape::new();
        let p = tape.constant(&[1.5]);
        let mu = tape.constant(&[1.5]);
        let loss = mean_loss(&mut tape, p, mu);
        assert_eq!(tape.scalar(loss), 0.0);
    }

    #[test]
    fn variance_loss_values_and_gradients() {
        // p = 3, mu = 1, sigma^2 = 0 => target 4, loss 16, d/dsigma^2 = -8,
        // d/dmu = 0 exactly.
        let mut store = ParamStore::new();
        let mu_id = store.register("mu", &[1], vec![1.0]).unwrap();
        let var_id = store.register("var", &[1], vec![0.0]).unwrap();
        let mut tape = Tape::new();
        let p = tape.constant(&[3.0]);
        let mu = tape.param(&store, mu_id);
        let var = tape.param(&store, var_id);
        let loss = variance_loss(&mut tape, p, mu, var);
        assert_eq!(tape.scalar(loss), 16.0);
        tape.backward_scalar(loss, &mut [&mut store]).unwrap();
        assert_eq!(store.grads(var_id), &[-8.0]);
        assert_eq!(store.grads(mu_id), &[0.0]);
    }

    #[test]
    fn variance_loss_zero_at_exact_fit() {
        let mut tape = Tape::new();
        let p = tape.constant(&[3.0]);
        let mu = tape.constant(&[1.0]);
        let var = tape.constant(&[4.0]); // (p - mu)^2
        let loss = variance_loss(&mut tape, p, mu, var);
        assert_eq!(tape.scalar(loss), 0.0);
    }

    #[test]
    fn pinball_unit_cases() {
        let mut tape = Tape::new();
        // tau = 0.5, p = 4, q = 2 -> 1.0
        let p = tape.constant(&[4.0]);
        let q = tape.constant(&[2.0]);
        let l = pinball_loss(&mut tape, p, q, 0.5).unwrap();
        assert_eq!(tape.scalar(l), 1.0);
        // tau = 0.9, p = 10, q = 8 -> 1.8
        let p = tape.constant(&[10.0]);
        let q = tape.constant(&[8.0]);
        let l = pinball_loss(&mut tape, p, q, 0.9).unwrap();
        assert!((tape.scalar(l) - 1.8).abs() < 1e-12);
        // tau = 0.9, p = 8, q = 10 -> 0.2
        let p = tape.constant(&[8.0]);
        let q = tape.constant(&[10.0]);
        let l = pinball_loss(&mut tape, p, q, 0.9).unwrap();
        assert!((tape.scalar(l) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn pinball_rejects_bad_levels() {
        let mut tape = Tape::new();
        let p = tape.constant(&[1.0]);
        let q = tape.constant(&[1.0]);
        assert!(pinball_loss(&mut tape, p, q, 1.0).is_err());
        assert!(pinball_loss(&mut tape, p, q, -0.1).is_err());
    }

    #[test]
    fn logit_target_cases() {
        assert_eq!(logit_target(0.5).unwrap(), 0.0);
        assert!((logit_target(0.01).unwrap() - (-4.5951)).abs() < 1e-4);
        assert!(logit_target(-0.1).is_err());
        assert!(logit_target(1.5).is_err());
        // clamped at the working range rather than diverging
        assert!(logit_target(0.0).unwrap().is_finite());
        assert!(logit_target(1.0).unwrap().is_finite());
    }

    #[test]
    fn logit_sigmoid_round_trip() {
        for i in 0..=60 {
            let p = 1e-6 + (1.0 - 2e-6) * (i as f64) / 60.0;
            let z = logit_target(p).unwrap();
            let back = crate::scalar::sigmoid(z);
            assert!(
                (back - p).abs() < 1e-9,
                "round trip failed at p = {p}: got {back}"
            );
        }
    }

    #[test]
    fn untrained_zero_weight_branch_is_constant() {
        let schema = schema3();
        let cfg = MbdBranchConfig {
            trunk_hidden: vec![],
            ..MbdBranchConfig::defaults(
                "t",
                "watch_time",
                ContextProjection::Columns {
                    set: BiasFeatureSet::new("ctx", &["a", "b"]),
                },
            )
        };
        let mut branch = MbdBranch::new(cfg, &schema).unwrap();
        let ids: Vec<_> = branch.store.param_ids().collect();
        for id in ids {
            let name = branch.store.name_of(id).to_string();
            for v in branch.store.values_mut(id) {
                *v = 0.0;
            }
            if name == "mean.l0.b" {
                branch.store.values_mut(id)[0] = 0.75;
            }
            if name == "var.l0.b" {
                branch.store.values_mut(id)[0] = -2.0;
            }
        }
        for x in [[0.0, 0.0, 0.0], [3.0, -1.0, 9.0]] {
            let est = branch.estimate_full(&x).unwrap();
            assert_eq!(est.mean, 0.75);
            assert!((est.variance - (-2.0f64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn variance_respects_floor() {
        let schema = schema3();
        let cfg = MbdBranchConfig {
            trunk_hidden: vec![],
            ..MbdBranchConfig::defaults(
                "t",
                "watch_time",
                ContextProjection::Columns {
                    set: BiasFeatureSet::new("ctx", &["a"]),
                },
            )
        };
        let mut branch = MbdBranch::new(cfg, &schema).unwrap();
        let ids: Vec<_> = branch.store.param_ids().collect();
        for id in ids {
            let name = branch.store.name_of(id).to_string();
            for v in branch.store.values_mut(id) {
                *v = 0.0;
            }
            if name == "var.l0.b" {
                branch.store.values_mut(id)[0] = -100.0; // exp -> ~0
            }
        }
        let est = branch.estimate_full(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(est.variance, SIGMA_FLOOR);
    }

    #[test]
    fn quantile_crossings_counted() {
        let est = DistributionEstimate {
            mean: 0.0,
            variance: 1.0,
            quantiles: vec![(0.1, 0.5), (0.5, 0.4), (0.9, 0.6)],
        };
        assert_eq!(est.quantile_crossings(), 1);
    }

    #[test]
    fn bucket_projection_one_hot() {
        let schema = schema3();
        let cfg = MbdBranchConfig {
            trunk_hidden: vec![],
            ..MbdBranchConfig::defaults(
                "t",
                "watch_time",
                ContextProjection::BucketOneHot {
                    column: "c".into(),
                    edges: vec![0.0, 1.0, 2.0],
                },
            )
        };
        let branch = MbdBranch::new(cfg, &schema).unwrap();
        assert_eq!(branch.context_vector(&[9.0, 9.0, 1.5]).unwrap(), vec![0.0, 1.0]);
    }
}
