//! Dense feed-forward networks over the tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numerics::autodiff::{NodeId, Tape};
use crate::numerics::params::{ParamId, ParamStore};
use crate::scalar::{sigmoid, Scalar};

/// Output nonlinearity. Hidden layers are always ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
}

/// Architecture + init seed. `widths` lists every layer width including the
/// input, so `[1, 2, 1]` is a 1-2-1 network with one hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub output_activation: Activation,
    pub init_seed: u64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, output_activation: Activation, init_seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(CoreError::InvalidConfig(
                "an MLP needs at least one layer (two width entries)".into(),
            ));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(CoreError::InvalidConfig("all layer widths must be >= 1".into()));
        }
        Ok(MlpSpec {
            widths,
            output_activation,
            init_seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    w: ParamId,
    b: ParamId,
}

/// An MLP whose parameters live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<LayerIds>,
}

/// Forward result exposing the pre-activation of the output layer, so binary
/// heads can hand out the raw logit alongside the probability.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub output: NodeId,
    pub preactivation: NodeId,
}

impl Mlp {
    /// Register freshly initialized parameters under `prefix` in `store`.
    /// Weights use fan-in-scaled normal init (std = sqrt(2 / fan_in)); biases
    /// draw from N(0, 0.01^2) so ReLU preactivations never sit exactly on the
    /// kink. Identical spec + seed gives bit-identical parameters.
    pub fn init<S: Scalar>(spec: MlpSpec, store: &mut ParamStore<S>, prefix: &str) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let mut layers = Vec::new();
        for l in 0..spec.widths.len() - 1 {
            let fan_in = spec.widths[l];
            let fan_out = spec.widths[l + 1];
            let std = (2.0 / fan_in as f64).sqrt();
            let mut w = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in * fan_out {
                let z: f64 = StandardNormal.sample(&mut rng);
                w.push(S::from_f64_lossy(z * std));
            }
            let mut b = Vec::with_capacity(fan_out);
            for _ in 0..fan_out {
                let z: f64 = StandardNormal.sample(&mut rng);
                b.push(S::from_f64_lossy(z * 0.01));
            }
            let wid = store.register(&format!("{prefix}.l{l}.w"), &[fan_out, fan_in], w)?;
            let bid = store.register(&format!("{prefix}.l{l}.b"), &[fan_out], b)?;
            layers.push(LayerIds { w: wid, b: bid });
        }
        Ok(Mlp { spec, layers })
    }

    /// Rebind to parameters already present in `store` (e.g. after loading a
    /// checkpoint).
    pub fn attach<S: Scalar>(spec: MlpSpec, store: &ParamStore<S>, prefix: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for l in 0..spec.widths.len() - 1 {
            let w = store
                .id_of(&format!("{prefix}.l{l}.w"))
                .ok_or_else(|| CoreError::Checkpoint(format!("missing parameter {prefix}.l{l}.w")))?;
            let b = store
                .id_of(&format!("{prefix}.l{l}.b"))
                .ok_or_else(|| CoreError::Checkpoint(format!("missing parameter {prefix}.l{l}.b")))?;
            layers.push(LayerIds { w, b });
        }
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.spec.input_dim() {
            return Err(CoreError::ShapeMismatch {
                context: "mlp forward".into(),
                expected: format!("input of length {}", self.spec.input_dim()),
                actual: format!("length {len}"),
            });
        }
        Ok(())
    }

    /// Record a forward pass on the tape.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        input: NodeId,
    ) -> Result<ForwardNodes> {
        self.check_input(tape.value(input).len())?;
        let mut h = input;
        for (l, ids) in self.layers.iter().enumerate() {
            let w = tape.param(store, ids.w);
            let b = tape.param(store, ids.b);
            let z = tape.affine(w, b, h)?;
            let last = l + 1 == self.layers.len();
            h = if last {
                return Ok(match self.spec.output_activation {
                    Activation::Identity => ForwardNodes {
                        output: z,
                        preactivation: z,
                    },
                    Activation::Sigmoid => ForwardNodes {
                        output: tape.sigmoid(z),
                        preactivation: z,
                    },
                });
            } else {
                tape.relu(z)
            };
        }
        unreachable!("spec guarantees at least one layer");
    }

    /// Tape-free evaluation; returns (output, output-layer preactivation).
    pub fn infer<S: Scalar>(&self, store: &ParamStore<S>, input: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        self.check_input(input.len())?;
        let mut h = input.to_vec();
        for (l, ids) in self.layers.iter().enumerate() {
            let w = store.values(ids.w);
            let b = store.values(ids.b);
            let rows = b.len();
            let cols = h.len();
            let mut z = Vec::with_capacity(rows);
            for i in 0..rows {
                let row = &w[i * cols..(i + 1) * cols];
                let mut acc = b[i];
                for (wij, xj) in row.iter().zip(h.iter()) {
                    acc = acc + *wij * *xj;
                }
                z.push(acc);
            }
            let last = l + 1 == self.layers.len();
            if last {
                let out = match self.spec.output_activation {
                    Activation::Identity => z.clone(),
                    Activation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
                };
                return Ok((out, z));
            }
            h = z.into_iter().map(|v| v.max(S::zero())).collect();
        }
        unreachable!("spec guarantees at least one layer");
    }
}
