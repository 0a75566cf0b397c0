//! Method-of-moments branch vs brute-force oracles: least-squares minimizers,
//! bucketized-counting equivalence, and stop-gradient isolation on a live
//! ranker.

use mbd_core::dataset::Dataset;
use mbd_core::mbd::{
    mean_loss, train_branch, variance_loss, BranchTrainConfig, ContextProjection, MbdBranch,
    MbdBranchConfig, TargetMode, TrainMode,
};
use mbd_core::numerics::Algorithm;
use mbd_core::ranker::{LabelTransform, RankerArch, RankerModel, RankerTrainConfig, TaskSpec};
use mbd_core::synthenv::{feature_schema, generate, GeneratorConfig};
use mbd_core::{ParamStore, Tape};

fn desk_dataset(seed: u64, n: usize) -> Dataset {
    let mut cfg = GeneratorConfig::default_desk(seed);
    cfg.num_interactions = n;
    generate(&cfg).unwrap()
}

fn quick_ranker(ds: &Dataset, epochs: usize) -> RankerModel {
    let mut ranker = RankerModel::new(
        ds.schema.clone(),
        mbd_core::ranker::default_tasks(),
        RankerArch {
            trunk_hidden: vec![32],
            head_hidden: vec![16],
            init_seed: 7,
        },
    )
    .unwrap();
    let idx: Vec<usize> = (0..ds.len()).collect();
    ranker
        .train(ds, &idx, &RankerTrainConfig {
            learning_rate: 2e-3,
            epochs,
            batch_size: 256,
            algorithm: Algorithm::adam_default(),
            shuffle_seed: 1,
        })
        .unwrap();
    ranker
}

/// Least-squares minimizer of the mean loss over a batch with identical
/// context: the batch mean. Targets {1, 2, 3} converge to mu* = 2.
#[test]
fn constant_context_mean_converges_to_batch_mean() {
    let mut store = ParamStore::new();
    let mu_id = store.register("mu", &[1], vec![0.0]).unwrap();
    for _ in 0..200 {
        let mut tape = Tape::new();
        let mu = tape.param(&store, mu_id);
        let mut parts = Vec::new();
        for &t in &[1.0, 2.0, 3.0] {
            let p = tape.constant(&[t]);
            parts.push(mean_loss(&mut tape, p, mu));
        }
        let stacked = tape.concat(&parts);
        let loss = tape.mean(stacked);
        tape.backward_scalar(loss, &mut [&mut store]).unwrap();
        let g = store.grads(mu_id)[0];
        let v = store.values_mut(mu_id);
        v[0] -= 0.4 * g;
        store.zero_grads();
    }
    assert!((store.values(mu_id)[0] - 2.0).abs() < 1e-9);
}

/// Least-squares minimizer of the variance loss with squared residuals
/// {0, 4}: the batch mean of squared residuals, 2.
#[test]
fn constant_context_variance_converges_to_residual_mean() {
    let mut store = ParamStore::new();
    let var_id = store.register("var", &[1], vec![0.0]).unwrap();
    for _ in 0..200 {
        let mut tape = Tape::new();
        let var = tape.param(&store, var_id);
        let mut parts = Vec::new();
        for &(p, mu) in &[(1.0, 1.0), (3.0, 1.0)] {
            let pn = tape.constant(&[p]);
            let mun = tape.constant(&[mu]);
            parts.push(variance_loss(&mut tape, pn, mun, var));
        }
        let stacked = tape.concat(&parts);
        let loss = tape.mean(stacked);
        tape.backward_scalar(loss, &mut [&mut store]).unwrap();
        let g = store.grads(var_id)[0];
        store.values_mut(var_id)[0] -= 0.2 * g;
        store.zero_grads();
    }
    assert!((store.values(var_id)[0] - 2.0).abs() < 1e-9);
}

/// Granular-bucket equivalence: with a one-hot bucket context and linear
/// heads, the converged branch reproduces per-bucket counting statistics of
/// the detached predictions.
#[test]
fn bucket_onehot_branch_matches_per_bucket_counting() {
    let ds = desk_dataset(101, 12_000);
    let mut ranker = quick_ranker(&ds, 1);

    let edges: Vec<f64> = mbd_core::bucket::Bucketing::log_spaced(2.0, 600.0, 6)
        .unwrap()
        .edges;
    let mut branch = MbdBranch::new(
        MbdBranchConfig {
            trunk_hidden: vec![],
            ..MbdBranchConfig::defaults(
                "bucket_eq",
                "watch_time",
                ContextProjection::BucketOneHot {
                    column: "i_duration".into(),
                    edges: edges.clone(),
                },
            )
        },
        &ranker.schema,
    )
    .unwrap();

    let idx: Vec<usize> = (0..ds.len()).collect();
    for (lr, steps) in [(2e-2, 3000), (2e-3, 1500)] {
        train_branch(
            &mut branch,
            &mut ranker,
            &ds,
            &idx,
            TrainMode::FrozenRanker,
            &BranchTrainConfig {
                learning_rate: lr,
                steps,
                batch_size: 2048,
                algorithm: Algorithm::adam_default(),
                shuffle_seed: 3,
            },
        )
        .unwrap();
    }

    // Independent counting oracle over the same detached predictions.
    let bucketing = mbd_core::bucket::Bucketing::new(edges).unwrap();
    let dur_col = ds.schema.index_of("i_duration").unwrap();
    let mut sums = vec![0.0; bucketing.num_buckets()];
    let mut counts = vec![0usize; bucketing.num_buckets()];
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); bucketing.num_buckets()];
    for i in &ds.interactions {
        let p = ranker.predict(&i.features).unwrap()[0].value;
        let k = bucketing.index_of(i.features[dur_col]);
        sums[k] += p;
        counts[k] += 1;
        values[k].push(p);
    }

    let mut checked = 0;
    for k in 0..bucketing.num_buckets() {
        if counts[k] < 500 {
            continue;
        }
        let mean = sums[k] / counts[k] as f64;
        let var = values[k].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / counts[k] as f64;
        let mut onehot = vec![0.0; bucketing.num_buckets()];
        onehot[k] = 1.0;
        let est = branch.estimate(&onehot).unwrap();
        assert!(
            (est.mean - mean).abs() < 1e-2,
            "bucket {k}: mu {:.4} vs counting mean {:.4}",
            est.mean,
            mean
        );
        assert!(
            (est.variance - var).abs() / var < 0.05,
            "bucket {k}: sigma^2 {:.5} vs counting variance {:.5}",
            est.variance,
            var
        );
        checked += 1;
    }
    assert!(checked >= 4, "only {checked} buckets had enough data");
}

/// Branch losses reach the live ranker only through stop-gradients: the
/// accumulated ranker gradients are exactly zero after a joint-tape backward.
#[test]
fn branch_losses_leak_zero_gradient_into_ranker() {
    let ds = desk_dataset(103, 400);
    let mut ranker = quick_ranker(&ds, 1);
    let branch = MbdBranch::new(
        MbdBranchConfig::defaults(
            "leak",
            "watch_time",
            ContextProjection::Columns {
                set: mbd_core::mbd::BiasFeatureSet::new(
                    "ctx",
                    &["user_full", "item_length"],
                ),
            },
        ),
        &ranker.schema,
    )
    .unwrap();
    let mut branch_store_owner = branch; // mutable store access below

    let mut tape = Tape::new();
    let mut parts = Vec::new();
    for i in ds.interactions.iter().take(64) {
        let xn = ranker.schema.normalize(&i.features).unwrap();
        let f = ranker.forward_task(&mut tape, &xn, 0).unwrap();
        let ctx = branch_store_owner.context_vector(&i.features).unwrap();
        let nodes = branch_store_owner.forward(&mut tape, &ctx).unwrap();
        parts.push(mean_loss(&mut tape, f.output, nodes.mean));
        parts.push(variance_loss(&mut tape, f.output, nodes.mean, nodes.variance));
    }
    let stacked = tape.concat(&parts);
    let loss = tape.mean(stacked);
    tape.backward_scalar(loss, &mut [&mut ranker.store, &mut branch_store_owner.store])
        .unwrap();
    assert!(
        ranker.store.grads_are_zero(),
        "ranker received nonzero gradient through the branch losses"
    );
    assert!(
        !branch_store_owner.store.grads_are_zero(),
        "branch received no gradient at all"
    );
}

/// Joint mode with the ranker's own loss disabled: ranker parameters are
/// bit-identical after branch training.
#[test]
fn joint_training_without_ranker_loss_freezes_ranker_bits() {
    let ds = desk_dataset(107, 2_000);
    let mut ranker = quick_ranker(&ds, 1);
    let before = ranker.store.value_bits();
    let mut branch = MbdBranch::new(
        MbdBranchConfig::defaults(
            "iso",
            "watch_time",
            ContextProjection::Columns {
                set: mbd_core::mbd::BiasFeatureSet::new("ctx", &["item_length"]),
            },
        ),
        &ranker.schema,
    )
    .unwrap();
    let idx: Vec<usize> = (0..ds.len()).collect();
    train_branch(
        &mut branch,
        &mut ranker,
        &ds,
        &idx,
        TrainMode::Joint { ranker_loss: false },
        &BranchTrainConfig {
            steps: 100,
            batch_size: 64,
            ..BranchTrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(ranker.store.value_bits(), before);
}

/// The tau = 0.5 pinball head recovers the batch median.
#[test]
fn median_quantile_head_matches_batch_median() {
    // Skewed targets with known median 3.0 under an identity transform.
    let schema = feature_schema(2).unwrap();
    let raw: Vec<f64> = vec![1.0, 2.0, 3.0, 9.0, 30.0];
    let interactions: Vec<_> = raw
        .iter()
        .enumerate()
        .map(|(i, &w)| mbd_core::dataset::Interaction {
            user_id: i as u64,
            item_id: i as u64,
            features: vec![0.0; schema.width()],
            watch_time_seconds: w,
            like: 0,
            looped: 0,
            time_index: 0,
        })
        .collect();
    let ds = Dataset { schema: schema.clone(), interactions };
    let mut ranker = RankerModel::new(
        schema,
        vec![TaskSpec::regression("watch_time", LabelTransform::Identity)],
        RankerArch {
            trunk_hidden: vec![4],
            head_hidden: vec![],
            init_seed: 5,
        },
    )
    .unwrap();

    let mut branch = MbdBranch::new(
        MbdBranchConfig {
            trunk_hidden: vec![],
            quantile_levels: vec![0.5],
            target_mode: TargetMode::GroundTruthLabel,
            ..MbdBranchConfig::defaults(
                "median",
                "watch_time",
                ContextProjection::BucketOneHot {
                    column: "i_duration".into(),
                    edges: vec![-1.0, 1.0],
                },
            )
        },
        &ranker.schema,
    )
    .unwrap();
    let idx: Vec<usize> = (0..ds.len()).collect();
    for (lr, steps) in [(5e-2, 3000), (5e-3, 2000)] {
        train_branch(
            &mut branch,
            &mut ranker,
            &ds,
            &idx,
            TrainMode::FrozenRanker,
            &BranchTrainConfig {
                learning_rate: lr,
                steps,
                batch_size: 5,
                algorithm: Algorithm::adam_default(),
                shuffle_seed: 2,
            },
        )
        .unwrap();
    }
    let est = branch.estimate(&[1.0]).unwrap();
    let q50 = est.quantiles[0].1;
    assert!(
        (q50 - 3.0).abs() / 3.0 < 0.02,
        "median head {q50:.4} not within 2% of 3.0"
    );
}
