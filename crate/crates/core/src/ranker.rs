//! Multi-task point-estimation ranker: a shared MLP trunk over the full
//! feature vector with one head per engagement task.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Interaction};
use crate::error::{CoreError, Result};
use crate::numerics::{Activation, Algorithm, Checkpoint, Mlp, MlpSpec};
use crate::schema::FeatureSchema;
use crate::{Optimizer, ParamStore, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Regression,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTransform {
    Identity,
    Log1p,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TargetKind,
    pub transform: LabelTransform,
    pub loss: LossKind,
}

impl TaskSpec {
    pub fn regression(name: &str, transform: LabelTransform) -> Self {
        TaskSpec {
            name: name.into(),
            kind: TargetKind::Regression,
            transform,
            loss: LossKind::SquaredError,
        }
    }

    pub fn binary(name: &str) -> Self {
        TaskSpec {
            name: name.into(),
            kind: TargetKind::Binary,
            transform: LabelTransform::Identity,
            loss: LossKind::BinaryCrossEntropy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            TargetKind::Binary => {
                self.loss == LossKind::BinaryCrossEntropy && self.transform == LabelTransform::Identity
            }
            TargetKind::Regression => self.loss == LossKind::SquaredError,
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidConfig(format!(
                "task `{}`: binary tasks pair with binary cross-entropy and identity transform; \
                 regression with squared error",
                self.name
            )))
        }
    }

    /// Label in model space (the space the head is trained in).
    pub fn transformed_label(&self, dataset: &Dataset, i: &Interaction) -> Result<f64> {
        let raw = dataset.raw_label(&self.name, i)?;
        Ok(match self.transform {
            LabelTransform::Identity => raw,
            LabelTransform::Log1p => raw.ln_1p(),
        })
    }

    fn head_activation(&self) -> Activation {
        match self.kind {
            TargetKind::Regression => Activation::Identity,
            TargetKind::Binary => Activation::Sigmoid,
        }
    }
}

/// The default task set planted by the synthetic environment.
pub fn default_tasks() -> Vec<TaskSpec> {
    vec![
        TaskSpec::regression("watch_time", LabelTransform::Log1p),
        TaskSpec::binary("like"),
        TaskSpec::binary("loop"),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerArch {
    /// Hidden widths of the shared trunk.
    pub trunk_hidden: Vec<usize>,
    /// Hidden widths of every task head.
    pub head_hidden: Vec<usize>,
    pub init_seed: u64,
}

impl Default for RankerArch {
    fn default() -> Self {
        RankerArch {
            trunk_hidden: vec![64, 64],
            head_hidden: vec![32],
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankerTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub algorithm: Algorithm,
    pub shuffle_seed: u64,
}

impl Default for RankerTrainConfig {
    fn default() -> Self {
        RankerTrainConfig {
            learning_rate: 1e-3,
            epochs: 3,
            batch_size: 256,
            algorithm: Algorithm::adam_default(),
            shuffle_seed: 0,
        }
    }
}

/// Prediction for one task. Binary heads carry the probability in `value`
/// and expose the raw logit; regression heads report the transformed-space
/// value directly.
#[derive(Debug, Clone)]
pub struct TaskPrediction {
    pub task: String,
    pub value: f64,
    pub logit: Option<f64>,
}

pub struct RankerModel {
    pub schema: FeatureSchema,
    pub tasks: Vec<TaskSpec>,
    pub arch: RankerArch,
    pub store: ParamStore,
    trunk: Mlp,
    heads: Vec<Mlp>,
}

impl RankerModel {
    pub fn new(schema: FeatureSchema, tasks: Vec<TaskSpec>, arch: RankerArch) -> Result<Self> {
        if tasks.is_empty() {
            return Err(CoreError::InvalidConfig("ranker needs at least one task".into()));
        }
        for t in &tasks {
            t.validate()?;
        }
        let mut names: Vec<&str> = tasks.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != tasks.len() {
            return Err(CoreError::InvalidConfig("duplicate task names".into()));
        }

        let mut store = ParamStore::new();
        let mut trunk_widths = vec![schema.width()];
        trunk_widths.extend(&arch.trunk_hidden);
        let trunk_spec = MlpSpec::new(trunk_widths.clone(), Activation::Identity, arch.init_seed)?;
        let trunk = Mlp::init(trunk_spec, &mut store, "trunk")?;
        let trunk_out = *trunk_widths.last().unwrap();

        let mut heads = Vec::new();
        for (i, task) in tasks.iter().enumerate() {
            let mut widths = vec![trunk_out];
            widths.extend(&arch.head_hidden);
            widths.push(1);
            let spec = MlpSpec::new(widths, task.head_activation(), arch.init_seed ^ (i as u64 + 1))?;
            heads.push(Mlp::init(spec, &mut store, &format!("head.{}", task.name))?);
        }
        Ok(RankerModel {
            schema,
            tasks,
            arch,
            store,
            trunk,
            heads,
        })
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| CoreError::InvalidConfig(format!("unknown task `{name}`")))
    }

    /// Per-task predictions for a raw feature vector.
    pub fn predict(&self, x_raw: &[f64]) -> Result<Vec<TaskPrediction>> {
        let x = self.schema.normalize(x_raw)?;
        let (h, _) = self.trunk.infer(&self.store, &x)?;
        let mut out = Vec::with_capacity(self.tasks.len());
        for (task, head) in self.tasks.iter().zip(&self.heads) {
            let (value, pre) = head.infer(&self.store, &h)?;
            out.push(match task.kind {
                TargetKind::Regression => TaskPrediction {
                    task: task.name.clone(),
                    value: value[0],
                    logit: None,
                },
                TargetKind::Binary => TaskPrediction {
                    task: task.name.clone(),
                    value: value[0],
                    logit: Some(pre[0]),
                },
            });
        }
        Ok(out)
    }

    /// Prediction for one task in its model space: transformed value for
    /// regression, raw logit for binary.
    pub fn predict_model_space(&self, x_raw: &[f64], task_idx: usize) -> Result<f64> {
        let preds = self.predict(x_raw)?;
        let task = &self.tasks[task_idx];
        let p = &preds[task_idx];
        Ok(match task.kind {
            TargetKind::Regression => p.value,
            TargetKind::Binary => p.logit.expect("binary predictions expose a logit"),
        })
    }

    /// Record trunk + one head on a tape; returns (output, preactivation).
    pub fn forward_task(
        &self,
        tape: &mut Tape,
        x_normalized: &[f64],
        task_idx: usize,
    ) -> Result<crate::numerics::ForwardNodes> {
        let x = tape.constant(x_normalized);
        let trunk_out = self.trunk.forward(tape, &self.store, x)?;
        self.heads[task_idx].forward(tape, &self.store, trunk_out.output)
    }

    /// Mean training loss per epoch.
    pub fn train(
        &mut self,
        dataset: &Dataset,
        train_idx: &[usize],
        cfg: &RankerTrainConfig,
    ) -> Result<Vec<f64>> {
        if train_idx.is_empty() {
            return Err(CoreError::InvalidConfig("empty training set".into()));
        }
        // Fit normalization on the training subset, freeze it in the schema.
        self.schema.fit_normalization(
            train_idx
                .iter()
                .map(|&i| dataset.interactions[i].features.as_slice()),
        );

        let normalized: Vec<Vec<f64>> = train_idx
            .iter()
            .map(|&i| self.schema.normalize(&dataset.interactions[i].features))
            .collect::<Result<_>>()?;
        let labels: Vec<Vec<f64>> = self
            .tasks
            .iter()
            .map(|t| {
                train_idx
                    .iter()
                    .map(|&i| t.transformed_label(dataset, &dataset.interactions[i]))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;

        let mut optimizer = Optimizer::new(cfg.algorithm, cfg.learning_rate);
        let mut order: Vec<usize> = (0..train_idx.len()).collect();
        let mut trace = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);

            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for (batch_no, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
                let mut tape = Tape::new();
                let mut per_task: Vec<Vec<crate::numerics::NodeId>> =
                    vec![Vec::with_capacity(chunk.len()); self.tasks.len()];
                for &row in chunk {
                    let x = tape.constant(&normalized[row]);
                    let trunk_out = self.trunk.forward(&mut tape, &self.store, x)?;
                    for (t, head) in self.heads.iter().enumerate() {
                        let f = head.forward(&mut tape, &self.store, trunk_out.output)?;
                        let y = labels[t][row];
                        let loss = match self.tasks[t].loss {
                            LossKind::SquaredError => {
                                let target = tape.constant(&[y]);
                                let diff = tape.sub(f.output, target);
                                tape.square(diff)
                            }
                            LossKind::BinaryCrossEntropy => {
                                tape.bce_with_logits(f.preactivation, &[y])
                            }
                        };
                        per_task[t].push(loss);
                    }
                }
                let mut total = None;
                for losses in &per_task {
                    let stacked = tape.concat(losses);
                    let mean = tape.mean(stacked);
                    total = Some(match total {
                        None => mean,
                        Some(acc) => tape.add(acc, mean),
                    });
                }
                let total = total.expect("at least one task");
                let batch_loss = tape.scalar(total);
                if !batch_loss.is_finite() {
                    return Err(CoreError::TrainDiverged { epoch, batch: batch_no });
                }
                tape.backward_scalar(total, &mut [&mut self.store])?;
                optimizer.step(&mut self.store)?;
                self.store.zero_grads();
                epoch_loss += batch_loss;
                batches += 1;
            }
            trace.push(epoch_loss / batches.max(1) as f64);
        }
        Ok(trace)
    }

    pub fn to_checkpoint(&self, seed: u64) -> Result<(Checkpoint, RankerMeta)> {
        Ok((
            Checkpoint::from_store(&self.store, seed)?,
            RankerMeta {
                schema: self.schema.clone(),
                tasks: self.tasks.clone(),
                arch: self.arch.clone(),
            },
        ))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, meta: RankerMeta) -> Result<Self> {
        let store: ParamStore = ckpt.into_store()?;
        let mut trunk_widths = vec![meta.schema.width()];
        trunk_widths.extend(&meta.arch.trunk_hidden);
        let trunk_out = *trunk_widths.last().unwrap();
        let trunk = Mlp::attach(
            MlpSpec::new(trunk_widths, Activation::Identity, meta.arch.init_seed)?,
            &store,
            "trunk",
        )?;
        let mut heads = Vec::new();
        for (i, task) in meta.tasks.iter().enumerate() {
            let mut widths = vec![trunk_out];
            widths.extend(&meta.arch.head_hidden);
            widths.push(1);
            let spec = MlpSpec::new(
                widths,
                task.head_activation(),
                meta.arch.init_seed ^ (i as u64 + 1),
            )?;
            heads.push(Mlp::attach(spec, &store, &format!("head.{}", task.name))?);
        }
        Ok(RankerModel {
            schema: meta.schema,
            tasks: meta.tasks,
            arch: meta.arch,
            store,
            trunk,
            heads,
        })
    }
}

/// Sidecar describing feature order, normalization constants, tasks, and
/// architecture — everything needed to rebind a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankerMeta {
    pub schema: FeatureSchema,
    pub tasks: Vec<TaskSpec>,
    pub arch: RankerArch,
}
