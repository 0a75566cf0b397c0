//! Reverse-mode differentiation over a per-batch tape.
//!
//! The tape records vector-valued nodes in construction order (which is a
//! topological order by construction: an operation can only reference nodes
//! that already exist). `backward` seeds an upstream gradient at a root node,
//! replays the tape in reverse, and accumulates parameter gradients into the
//! owning [`ParamStore`]s. Tapes are cheap and meant to be discarded after
//! the backward pass; nothing persists across batches.
//!
//! The stop-gradient operator passes values through unchanged and contributes
//! exactly zero derivative to everything upstream of it.

use std::collections::HashMap;

use crate::error::{CoreError, Result};
use crate::numerics::params::{ParamId, ParamStore};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

#[derive(Debug, Clone)]
enum Expr<S> {
    Constant,
    /// Leaf snapshot of a parameter tensor; gradient routing goes through
    /// `Tape::param_nodes`.
    Param,
    /// out = W x + b, with W row-major `[rows, cols]`.
    Affine {
        w: NodeId,
        b: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    /// out_i = max(x_i, k); gradient passes through when x_i >= k.
    MaxConst(NodeId, S),
    Sum(NodeId),
    Mean(NodeId),
    Concat(Vec<NodeId>),
    StopGrad(#[allow(dead_code)] NodeId),
    /// Per-element binary cross-entropy from logits against fixed targets.
    BceLogits { logits: NodeId, targets: Vec<S> },
    /// Per-element pinball loss (tau - I(t < q)) * (t - q).
    Pinball { target: NodeId, quantile: NodeId, tau: S },
}

#[derive(Debug)]
struct Node<S> {
    value: Vec<S>,
    grad: Vec<S>,
    expr: Expr<S>,
}

/// Recorded computation for one batch.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    param_nodes: HashMap<(u64, u32), NodeId>,
    store_versions: HashMap<u64, u64>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            store_versions: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[S] {
        &self.nodes[id.0 as usize].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> S {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "scalar() on a node of length {}", v.len());
        v[0]
    }

    /// Gradient computed by the most recent backward pass.
    pub fn grad(&self, id: NodeId) -> &[S] {
        &self.nodes[id.0 as usize].grad
    }

    fn push(&mut self, value: Vec<S>, expr: Expr<S>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            grad: vec![S::zero(); value.len()],
            value,
            expr,
        });
        id
    }

    pub fn constant(&mut self, values: &[S]) -> NodeId {
        self.push(values.to_vec(), Expr::Constant)
    }

    pub fn constant_scalar(&mut self, v: S) -> NodeId {
        self.constant(&[v])
    }

    /// Register a parameter tensor as a leaf, snapshotting its current values.
    /// Repeated registrations of the same parameter on one tape share a node.
    pub fn param(&mut self, store: &ParamStore<S>, pid: ParamId) -> NodeId {
        let key = (store.token(), pid.0);
        if let Some(&id) = self.param_nodes.get(&key) {
            return id;
        }
        self.store_versions.insert(store.token(), store.version());
        let id = self.push(store.values(pid).to_vec(), Expr::Param);
        self.param_nodes.insert(key, id);
        id
    }

    fn len_of(&self, id: NodeId) -> usize {
        self.nodes[id.0 as usize].value.len()
    }

    fn check_same_len(&self, op: &str, a: NodeId, b: NodeId) {
        assert_eq!(
            self.len_of(a),
            self.len_of(b),
            "{op}: operand lengths differ ({} vs {})",
            self.len_of(a),
            self.len_of(b)
        );
    }

    /// out = W x + b. `w` must hold `rows * cols` values, `x` must have
    /// length `cols`, `b` length `rows`.
    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let rows = self.len_of(b);
        let cols = self.len_of(x);
        if self.len_of(w) != rows * cols {
            return Err(CoreError::ShapeMismatch {
                context: "affine".into(),
                expected: format!("weight of {rows}x{cols} = {} values", rows * cols),
                actual: format!("{} values", self.len_of(w)),
            });
        }
        let wv = &self.nodes[w.0 as usize].value;
        let xv = &self.nodes[x.0 as usize].value;
        let bv = &self.nodes[b.0 as usize].value;
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = &wv[i * cols..(i + 1) * cols];
            let mut acc = bv[i];
            for (wij, xj) in row.iter().zip(xv.iter()) {
                acc = acc + *wij * *xj;
            }
            out.push(acc);
        }
        Ok(self.push(out, Expr::Affine { w, b, x, rows, cols }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0 as usize]
            .value
            .iter()
            .map(|&v| v.max(S::zero()))
            .collect();
        self.push(out, Expr::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0 as usize]
            .value
            .iter()
            .map(|&v| sigmoid(v))
            .collect();
        self.push(out, Expr::Sigmoid(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0 as usize].value.iter().map(|&v| v.exp()).collect();
        self.push(out, Expr::Exp(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_same_len("add", a, b);
        let out = self.zip(a, b, |x, y| x + y);
        self.push(out, Expr::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_same_len("sub", a, b);
        let out = self.zip(a, b, |x, y| x - y);
        self.push(out, Expr::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_same_len("mul", a, b);
        let out = self.zip(a, b, |x, y| x * y);
        self.push(out, Expr::Mul(a, b))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.mul(x, x)
    }

    pub fn scale(&mut self, x: NodeId, k: S) -> NodeId {
        let out = self.nodes[x.0 as usize].value.iter().map(|&v| v * k).collect();
        self.push(out, Expr::Scale(x, k))
    }

    pub fn max_const(&mut self, x: NodeId, k: S) -> NodeId {
        let out = self.nodes[x.0 as usize].value.iter().map(|&v| v.max(k)).collect();
        self.push(out, Expr::MaxConst(x, k))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.nodes[x.0 as usize]
            .value
            .iter()
            .fold(S::zero(), |acc, &v| acc + v);
        self.push(vec![total], Expr::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.len_of(x);
        assert!(n > 0, "mean of an empty node");
        let total = self.nodes[x.0 as usize]
            .value
            .iter()
            .fold(S::zero(), |acc, &v| acc + v);
        let m = total / S::from_f64_lossy(n as f64);
        self.push(vec![m], Expr::Mean(x))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero nodes");
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(&self.nodes[p.0 as usize].value);
        }
        self.push(out, Expr::Concat(parts.to_vec()))
    }

    /// Value-preserving, gradient-blocking.
    pub fn stop_grad(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0 as usize].value.clone();
        self.push(out, Expr::StopGrad(x))
    }

    /// Per-element BCE computed stably from logits: softplus(z) - y*z.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[S]) -> NodeId {
        assert_eq!(
            self.len_of(logits),
            targets.len(),
            "bce_with_logits: logits/targets length mismatch"
        );
        let out = self.nodes[logits.0 as usize]
            .value
            .iter()
            .zip(targets)
            .map(|(&z, &y)| softplus(z) - y * z)
            .collect();
        self.push(
            out,
            Expr::BceLogits {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// Per-element pinball loss (tau - I(t < q))(t - q). The target side is
    /// typically behind a stop-gradient; at t == q the derivative wrt q is
    /// taken from the t >= q branch.
    pub fn pinball(&mut self, target: NodeId, quantile: NodeId, tau: S) -> Result<NodeId> {
        if !(tau > S::zero() && tau < S::one()) {
            return Err(CoreError::InvalidConfig(format!(
                "pinball level must lie in (0,1), got {tau}"
            )));
        }
        self.check_same_len("pinball", target, quantile);
        let tv = &self.nodes[target.0 as usize].value;
        let qv = &self.nodes[quantile.0 as usize].value;
        let out = tv
            .iter()
            .zip(qv.iter())
            .map(|(&t, &q)| {
                let ind = if t < q { S::one() } else { S::zero() };
                (tau - ind) * (t - q)
            })
            .collect();
        Ok(self.push(out, Expr::Pinball { target, quantile, tau }))
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(S, S) -> S) -> Vec<S> {
        self.nodes[a.0 as usize]
            .value
            .iter()
            .zip(self.nodes[b.0 as usize].value.iter())
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    /// Seed `upstream` at `root`, replay the tape in reverse, and accumulate
    /// parameter gradients into any of `stores` whose parameters appear on
    /// the tape. Node gradients are reset first, so calling backward twice
    /// accumulates store gradients twice.
    pub fn backward(
        &mut self,
        root: NodeId,
        upstream: &[S],
        stores: &mut [&mut ParamStore<S>],
    ) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(CoreError::InvalidBackward(
                "no forward computation recorded on this tape".into(),
            ));
        }
        if (root.0 as usize) >= self.nodes.len() {
            return Err(CoreError::InvalidBackward(format!(
                "root node {} not on tape",
                root.0
            )));
        }
        if upstream.len() != self.len_of(root) {
            return Err(CoreError::ShapeMismatch {
                context: "backward upstream gradient".into(),
                expected: format!("length {}", self.len_of(root)),
                actual: format!("length {}", upstream.len()),
            });
        }
        for (&token, &version) in &self.store_versions {
            if let Some(store) = stores.iter().find(|s| s.token() == token) {
                if store.version() != version {
                    return Err(CoreError::StaleTape(format!(
                        "store {token} advanced from version {version} to {}",
                        store.version()
                    )));
                }
            }
        }

        for node in &mut self.nodes {
            for g in &mut node.grad {
                *g = S::zero();
            }
        }
        for (slot, &g) in self.nodes[root.0 as usize].grad.iter_mut().zip(upstream) {
            *slot = g;
        }

        for i in (0..=root.0 as usize).rev() {
            let grad = self.nodes[i].grad.clone();
            if grad.iter().all(|g| *g == S::zero()) {
                continue;
            }
            let expr = self.nodes[i].expr.clone();
            match expr {
                Expr::Constant | Expr::Param => {}
                Expr::Affine { w, b, x, rows, cols } => {
                    let xv = self.nodes[x.0 as usize].value.clone();
                    let wv = self.nodes[w.0 as usize].value.clone();
                    {
                        let gw = &mut self.nodes[w.0 as usize].grad;
                        for r in 0..rows {
                            let gr = grad[r];
                            for c in 0..cols {
                                gw[r * cols + c] = gw[r * cols + c] + gr * xv[c];
                            }
                        }
                    }
                    {
                        let gb = &mut self.nodes[b.0 as usize].grad;
                        for r in 0..rows {
                            gb[r] = gb[r] + grad[r];
                        }
                    }
                    {
                        let gx = &mut self.nodes[x.0 as usize].grad;
                        for c in 0..cols {
                            let mut acc = S::zero();
                            for r in 0..rows {
                                acc = acc + grad[r] * wv[r * cols + c];
                            }
                            gx[c] = gx[c] + acc;
                        }
                    }
                }
                Expr::Relu(x) => {
                    let xv = self.nodes[x.0 as usize].value.clone();
                    let gx = &mut self.nodes[x.0 as usize].grad;
                    for (k, g) in grad.iter().enumerate() {
                        if xv[k] > S::zero() {
                            gx[k] = gx[k] + *g;
                        }
                    }
                }
                Expr::Sigmoid(x) => {
                    let yv = self.nodes[i].value.clone();
                    let gx = &mut self.nodes[x.0 as usize].grad;
                    for (k, g) in grad.iter().enumerate() {
                        gx[k] = gx[k] + *g * yv[k] * (S::one() - yv[k]);
                    }
                }
                Expr::Exp(x) => {
                    let yv = self.nodes[i].value.clone();
                    let gx = &mut self.nodes[x.0 as usize].grad;
                    for (k, g) in grad.iter().enumerate() {
                        gx[k] = gx[k] + *g * yv[k];
                    }
                }
                Expr::Add(a, b) => {
                    for (k, g) in grad.iter().enumerate() {
                        let ga = &mut self.nodes[a.0 as usize].grad;
                        ga[k] = ga[k] + *g;
                    }
                    for (k, g) in grad.iter().enumerate() {
                        let gb = &mut self.nodes[b.0 as usize].grad;
                        gb[k] = gb[k] + *g;
                    }
                }
                Expr::Sub(a, b) => {
                    for (k, g) in grad.iter().enumerate() {
                        let ga = &mut self.nodes[a.0 as usize].grad;
                        ga[k] = ga[k] + *g;
                    }
                    for (k, g) in grad.iter().enumerate() {
                        let gb = &mut self.nodes[b.0 as usize].grad;
                        gb[k] = gb[k] - *g;
                    }
                }
                Expr::Mul(a, b) => {
                    let av = self.nodes[a.0 as usize].value.clone();
                    let bv = self.nodes[b.0 as usize].value.clone();
                    for (k, g) in grad.iter().enumerate() {
                        let ga = &mut self.nodes[a.0 as usize].grad;
                        ga[k] = ga[k] + *g * bv[k];
                    }
                    for (k, g) in grad.iter().enumerate() {
                        let gb = &mut self.nodes[b.0 as usize].grad;
                        gb[k] = gb[k] + *g * av[k];
                    }
                }
                Expr::Scale(x, k) => {
                    let gx = &mut self.nodes[x.0 as usize].grad;
                    for (j, g) in grad.iter().enumerate() {
                        gx[j] = gx[j] + *g * k;
                    }
                }
                Expr::MaxConst(x, k) => {
                    let xv = self.nodes[x.0 as usize].value.clone();
                    let gx = &mut self.nodes[x.0 as usize].grad;
                    for (j, g) in grad.iter().enumerate() {
                        if xv[j] >= k {
                            gx[j] = gx[j] + *g;
                        }
                    }
                }
                Expr::Sum(x) => {
                    let g = grad[0];
                    let gx = &mut self.nodes[x.0 as usize].grad;
                    for slot in gx.iter_mut() {
                        *slot = *slot + g;
                    }
                }
                Expr::Mean(x) => {
                    let n = self.len_of(x);
                    let g = grad[0] / S::from_f64_lossy(n as f64);
                    let gx = &mut self.nodes[x.0 as usize].grad;
                    for slot in gx.iter_mut() {
                        *slot = *slot + g;
                    }
                }
                Expr::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.len_of(p);
                        let gp = &mut self.nodes[p.0 as usize].grad;
                        for j in 0..n {
                            gp[j] = gp[j] + grad[offset + j];
                        }
                        offset += n;
                    }
                }
                Expr::StopGrad(_) => {}
                Expr::BceLogits { logits, targets } => {
                    let zv = self.nodes[logits.0 as usize].value.clone();
                    let gz = &mut self.nodes[logits.0 as usize].grad;
                    for (k, g) in grad.iter().enumerate() {
                        gz[k] = gz[k] + *g * (sigmoid(zv[k]) - targets[k]);
                    }
                }
                Expr::Pinball { target, quantile, tau } => {
                    let tv = self.nodes[target.0 as usize].value.clone();
                    let qv = self.nodes[quantile.0 as usize].value.clone();
                    for (k, g) in grad.iter().enumerate() {
                        let ind = if tv[k] < qv[k] { S::one() } else { S::zero() };
                        let slope = tau - ind;
                        {
                            let gq = &mut self.nodes[quantile.0 as usize].grad;
                            gq[k] = gq[k] - *g * slope;
                        }
                        let gt = &mut self.nodes[target.0 as usize].grad;
                        gt[k] = gt[k] + *g * slope;
                    }
                }
            }
        }

        for (&(token, pid), &node) in &self.param_nodes {
            if let Some(store) = stores.iter_mut().find(|s| s.token() == token) {
                let grad = self.nodes[node.0 as usize].grad.clone();
                store.accumulate_grad(ParamId(pid), &grad);
            }
        }
        Ok(())
    }

    /// Backward from a scalar root with upstream gradient 1.
    pub fn backward_scalar(
        &mut self,
        root: NodeId,
        stores: &mut [&mut ParamStore<S>],
    ) -> Result<()> {
        self.backward(root, &[S::one()], stores)
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, values: Vec<f64>) -> (ParamStore<f64>, ParamId) {
        let mut store = ParamStore::new();
        let shape = vec![values.len()];
        let id = store.register(name, &shape, values).unwrap();
        (store, id)
    }

    #[test]
    fn square_gradient_at_three() {
        let (mut store, x) = store_with("x", vec![3.0]);
        let mut tape = Tape::new();
        let xn = tape.param(&store, x);
        let loss = tape.square(xn);
        tape.backward_scalar(loss, &mut [&mut store]).unwrap();
        assert_eq!(store.grads(x), &[6.0]);
    }

    #[test]
    fn two_backwards_double_exactly() {
        let (mut store, x) = store_with("x", vec![3.0]);
        let mut tape = Tape::new();
        let xn = tape.param(&store, x);
        let loss = tape.square(xn);
        tape.backward_scalar(loss, &mut [&mut store]).unwrap();
        tape.backward_scalar(loss, &mut [&mut store]).unwrap();
        assert_eq!(store.grads(x), &[12.0]);
    }

    #[test]
    fn stop_grad_blocks_upstream() {
        // loss = (sg[a] - b)^2 with a = 2, b = 1 => dL/da = 0, dL/db = -2.
        let mut store = ParamStore::new();
        let a = store.register("a", &[1], vec![2.0]).unwrap();
        let b = store.register("b", &[1], vec![1.0]).unwrap();
        let mut tape = Tape::new();
        let an = tape.param(&store, a);
        let bn = tape.param(&store, b);
        let a_sg = tape.stop_grad(an);
        let diff = tape.sub(a_sg, bn);
        let loss = tape.square(diff);
        assert_eq!(tape.scalar(loss), 1.0);
        tape.backward_scalar(loss, &mut [&mut store]).unwrap();
        assert_eq!(store.grads(a), &[0.0]);
        assert_eq!(store.grads(b), &[-2.0]);
    }

    #[test]
    fn nested_stop_grad_blocks_everything() {
        // loss = sg[(a - sg[b])^2] with a = 3, b = 1 => value 4, all grads 0.
        let mut store = ParamStore::new();
        let a = store.register("a", &[1], vec![3.0]).unwrap();
        let b = store.register("b", &[1], vec![1.0]).unwrap();
        let mut tape = Tape::new();
        let an = tape.param(&store, a);
        let bn = tape.param(&store, b);
        let b_sg = tape.stop_grad(bn);
        let diff = tape.sub(an, b_sg);
        let sq = tape.square(diff);
        let loss = tape.stop_grad(sq);
        assert_eq!(tape.scalar(loss), 4.0);
        tape.backward_scalar(loss, &mut [&mut store]).unwrap();
        assert_eq!(store.grads(a), &[0.0]);
        assert_eq!(store.grads(b), &[0.0]);
    }

    #[test]
    fn stop_grad_preserves_value() {
        let mut tape: Tape<f64> = Tape::new();
        let c = tape.constant(&[3.5]);
        let sg = tape.stop_grad(c);
        assert_eq!(tape.value(sg), &[3.5]);
    }

    #[test]
    fn backward_without_forward_rejected() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut tape: Tape<f64> = Tape::new();
        let err = tape.backward(NodeId(0), &[1.0], &mut [&mut store]);
        assert!(matches!(err, Err(CoreError::InvalidBackward(_))));
    }

    #[test]
    fn stale_store_rejected() {
        let (mut store, x) = store_with("x", vec![3.0]);
        let mut tape = Tape::new();
        let xn = tape.param(&store, x);
        let loss = tape.square(xn);
        store.values_mut(x)[0] = 10.0;
        let err = tape.backward_scalar(loss, &mut [&mut store]);
        assert!(matches!(err, Err(CoreError::StaleTape(_))));
    }

    #[test]
    fn affine_shape_mismatch_rejected() {
        let mut tape: Tape<f64> = Tape::new();
        let w = tape.constant(&[1.0, 2.0, 3.0]); // not 2x2
        let b = tape.constant(&[0.0, 0.0]);
        let x = tape.constant(&[1.0, 1.0]);
        assert!(tape.affine(w, b, x).is_err());
    }

    #[test]
    fn mean_and_concat_gradients() {
        let (mut store, x) = store_with("x", vec![1.0, 2.0, 3.0]);
        let mut tape = Tape::new();
        let xn = tape.param(&store, x);
        let sq = tape.square(xn);
        let parts = tape.concat(&[sq, xn]);
        let m = tape.mean(parts);
        // mean over [x^2 (3 values), x (3 values)] => d/dx_i = (2 x_i + 1)/6
        tape.backward_scalar(m, &mut [&mut store]).unwrap();
        let g = store.grads(x);
        for (i, &xi) in [1.0, 2.0, 3.0].iter().enumerate() {
            assert!((g[i] - (2.0 * xi + 1.0) / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bce_logits_matches_analytic() {
        let (mut store, z) = store_with("z", vec![0.7]);
        let mut tape = Tape::new();
        let zn = tape.param(&store, z);
        let loss = tape.bce_with_logits(zn, &[1.0]);
        let m = tape.mean(loss);
        tape.backward_scalar(m, &mut [&mut store]).unwrap();
        let p = 1.0 / (1.0 + (-0.7f64).exp());
        assert!((tape.scalar(m) + p.ln()).abs() < 1e-12);
        assert!((store.grads(z)[0] - (p - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn pinball_rejects_bad_tau() {
        let mut tape: Tape<f64> = Tape::new();
        let t = tape.constant(&[1.0]);
        let q = tape.constant(&[0.5]);
        assert!(tape.pinball(t, q, 0.0).is_err());
        assert!(tape.pinball(t, q, 1.0).is_err());
    }

    #[test]
    fn works_in_f32() {
        let mut store: ParamStore<f32> = ParamStore::new();
        let x = store.register("x", &[1], vec![3.0f32]).unwrap();
        let mut tape: Tape<f32> = Tape::new();
        let xn = tape.param(&store, x);
        let loss = tape.square(xn);
        tape.backward_scalar(loss, &mut [&mut store]).unwrap();
        assert_eq!(store.grads(x), &[6.0f32]);
    }
}
