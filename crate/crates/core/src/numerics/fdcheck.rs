//! Central finite-difference validation of tape gradients.
//!
//! The oracle evaluates the loss twice per parameter coordinate through the
//! forward (value) path only, so it stays independent of the backward pass it
//! checks.

use crate::error::Result;
use crate::numerics::autodiff::{NodeId, Tape};
use crate::numerics::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
}

/// Compare analytic gradients of a scalar loss against central finite
/// differences with step `h`. `build` must record the same loss every call.
/// Relative error uses `max(|analytic|, |fd|, 1e-6)` as denominator so dead
/// paths with true zero gradient do not divide by zero.
pub fn finite_difference_check<S, F>(
    store: &mut ParamStore<S>,
    h: f64,
    build: F,
) -> Result<FdReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &ParamStore<S>) -> Result<NodeId>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let root = build(&mut tape, store)?;
    tape.backward_scalar(root, &mut [&mut *store])?;
    let analytic: Vec<(usize, Vec<S>)> = store
        .param_ids()
        .map(|id| (id.0 as usize, store.grads(id).to_vec()))
        .collect();

    let eval = |store: &ParamStore<S>| -> Result<f64> {
        let mut tape = Tape::new();
        let root = build(&mut tape, store)?;
        Ok(tape.scalar(root).to_f64_lossy())
    };

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let ids: Vec<_> = store.param_ids().collect();
    for (slot, id) in ids.iter().enumerate() {
        let n = store.values(*id).len();
        for k in 0..n {
            let original = store.values(*id)[k];
            store.values_mut(*id)[k] = original + S::from_f64_lossy(h);
            let plus = eval(store)?;
            store.values_mut(*id)[k] = original - S::from_f64_lossy(h);
            let minus = eval(store)?;
            store.values_mut(*id)[k] = original;

            let fd = (plus - minus) / (2.0 * h);
            let a = analytic[slot].1[k].to_f64_lossy();
            let denom = a.abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max((a - fd).abs() / denom);
            checked += 1;
        }
    }
    store.zero_grads();
    Ok(FdReport {
        max_rel_error: max_rel,
        coordinates_checked: checked,
    })
}
