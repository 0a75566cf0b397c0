//! Development probe: measures the planted-bias pattern end to end.
//! Run: cargo run --release -p mbd-core --example probe

use std::collections::BTreeMap;

use mbd_core::bucket::Bucketing;
use mbd_core::eval::{
    debias_correlation_report, pearson, signal_quality, staleness_experiment,
    DebiasCorrelationInputs, StalenessConfig,
};
use mbd_core::mbd::{
    train_branch, BiasFeatureSet, BranchTrainConfig, ContextProjection, MbdBranch,
    MbdBranchConfig, TargetMode, TrainMode,
};
use mbd_core::numerics::Algorithm;
use mbd_core::ranker::{default_tasks, RankerArch, RankerModel, RankerTrainConfig};
use mbd_core::signals::build_bucket_table;
use mbd_core::synthenv::{generate, DriftSchedule, GeneratorConfig};

fn main() {
    let t0 = std::time::Instant::now();
    let mut cfg = GeneratorConfig::default_desk(7);
    cfg.num_interactions = 60_000;
    let ds = generate(&cfg).unwrap();
    println!("[{:6.1?}] generated {} interactions", t0.elapsed(), ds.len());

    let dur_col = ds.schema.index_of("i_duration").unwrap();
    let durations: Vec<f64> = ds.interactions.iter().map(|i| i.features[dur_col]).collect();
    let y_raw: Vec<f64> = ds.interactions.iter().map(|i| i.watch_time_seconds).collect();
    let y_log: Vec<f64> = y_raw.iter().map(|v| v.ln_1p()).collect();
    let loops: Vec<f64> = ds.interactions.iter().map(|i| i.looped as f64).collect();
    let likes: Vec<f64> = ds.interactions.iter().map(|i| i.like as f64).collect();
    println!(
        "rho(y,dur) = {:.3}  rho(log y,dur) = {:.3}  rho(loop,dur) = {:.3}  like rate = {:.4}  loop rate = {:.4}",
        pearson(&y_raw, &durations).unwrap().expect_value("a"),
        pearson(&y_log, &durations).unwrap().expect_value("b"),
        pearson(&loops, &durations).unwrap().expect_value("c"),
        likes.iter().sum::<f64>() / likes.len() as f64,
        loops.iter().sum::<f64>() / loops.len() as f64,
    );

    let (train_idx, holdout_idx) = ds.split_holdout(0.2);
    let mut ranker = RankerModel::new(ds.schema.clone(), default_tasks(), RankerArch::default()).unwrap();
    let trace = ranker
        .train(&ds, &train_idx, &RankerTrainConfig::default())
        .unwrap();
    println!("[{:6.1?}] ranker loss trace {:?}", t0.elapsed(), trace);

    // fitted schema now lives in ranker.schema
    let mut p_watch = Vec::new();
    let mut p_loop = Vec::new();
    let mut p_like = Vec::new();
    let mut hold_dur = Vec::new();
    for &i in &holdout_idx {
        let preds = ranker.predict(&ds.interactions[i].features).unwrap();
        p_watch.push(preds[0].value);
        p_like.push(preds[1].value);
        p_loop.push(preds[2].value);
        hold_dur.push(ds.interactions[i].features[dur_col]);
    }
    let hold_ylog: Vec<f64> = holdout_idx
        .iter()
        .map(|&i| ds.interactions[i].watch_time_seconds.ln_1p())
        .collect();
    println!(
        "holdout: rho(p_watch,dur) = {:.3}  rho(p_loop,dur) = {:.3}  ranker bias = {:.4}  like rate pred mean = {:.4}",
        pearson(&p_watch, &hold_dur).unwrap().expect_value("a"),
        pearson(&p_loop, &hold_dur).unwrap().expect_value("b"),
        hold_ylog
            .iter()
            .zip(&p_watch)
            .map(|(y, p)| p - y)
            .sum::<f64>()
            / hold_ylog.len() as f64,
        p_like.iter().sum::<f64>() / p_like.len() as f64,
    );

    // branches
    let mut watch_branch = MbdBranch::new(
        MbdBranchConfig {
            init_seed: 20,
            ..MbdBranchConfig::defaults(
                "duration_debias",
                "watch_time",
                ContextProjection::Columns {
                    set: BiasFeatureSet::new("ctx", &["user_full", "item_length"]),
                },
            )
        },
        &ranker.schema,
    )
    .unwrap();
    let train_two_phase = |branch: &mut MbdBranch, ranker: &mut RankerModel, seed: u64| {
        for (lr, steps, batch) in [(3e-3, 6000, 256), (3e-4, 1500, 1024), (1e-4, 600, 4096)] {
            let cfg = BranchTrainConfig {
                learning_rate: lr,
                steps,
                batch_size: batch,
                algorithm: Algorithm::adam_default(),
                shuffle_seed: seed,
            };
            let s = train_branch(branch, ranker, &ds, &train_idx, TrainMode::FrozenRanker, &cfg).unwrap();
            println!("  phase lr={lr} batch={batch}: final loss {:.4}", s.final_total_loss);
        }
    };
    train_two_phase(&mut watch_branch, &mut ranker, 5);
    println!("[{:6.1?}] watch branch trained", t0.elapsed());

    let mut loop_branch = MbdBranch::new(
        MbdBranchConfig {
            init_seed: 21,
            ..MbdBranchConfig::defaults(
                "loop_duration_debias",
                "loop",
                ContextProjection::Columns {
                    set: BiasFeatureSet::new("ctx", &["user_full", "item_length"]),
                },
            )
        },
        &ranker.schema,
    )
    .unwrap();
    train_two_phase(&mut loop_branch, &mut ranker, 6);
    println!("[{:6.1?}] loop branch trained", t0.elapsed());

    // vvp table from train labels
    let edges = Bucketing::log_spaced(2.0, 600.0, 10).unwrap().edges;
    let train_durs: Vec<f64> = train_idx.iter().map(|&i| ds.interactions[i].features[dur_col]).collect();
    let train_watch: Vec<f64> = train_idx.iter().map(|&i| ds.interactions[i].watch_time_seconds).collect();
    let vvp_table = build_bucket_table("i_duration", &train_durs, &train_watch, edges.clone(), 0).unwrap();
    let mut item_avg: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for &i in &train_idx {
        let e = item_avg.entry(ds.interactions[i].item_id).or_insert((0.0, 0));
        e.0 += ds.interactions[i].watch_time_seconds;
        e.1 += 1;
    }
    let item_avg: BTreeMap<u64, f64> = item_avg.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();

    let rows = debias_correlation_report(&DebiasCorrelationInputs {
        dataset: &ds,
        idx: &holdout_idx,
        ranker: &ranker,
        watch_branch: &watch_branch,
        loop_branch: Some(&loop_branch),
        vvp_table: &vvp_table,
        item_avg_watch: &item_avg,
        nts_sharpness: 0.05,
    })
    .unwrap();
    for r in &rows {
        println!(
            "corr {} / {}: {}",
            r.task,
            r.signal,
            r.rho
                .value()
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "undefined".into())
        );
    }

    // cohort-level branch over duration alone, for uncertainty alignment
    let mut cohort_branch = MbdBranch::new(
        MbdBranchConfig {
            init_seed: 30,
            ..MbdBranchConfig::defaults(
                "duration_cohort",
                "watch_time",
                ContextProjection::Columns {
                    set: BiasFeatureSet::new("ctx", &["item_length"]),
                },
            )
        },
        &ranker.schema,
    )
    .unwrap();
    train_two_phase(&mut cohort_branch, &mut ranker, 8);
    println!("[{:6.1?}] cohort branch trained", t0.elapsed());

    // table 1
    for (task, branch) in [("watch_time", &watch_branch)] {
        let row = signal_quality(&ds, &holdout_idx, &ranker, branch, Some(&cohort_branch), task, 3, &edges, 200).unwrap();
        println!(
            "quality {task}: bias_ranker {:?} bias_branch {:?} nll_cluster {:?} nll_branch {:?} trend {:?} unc {:?}",
            row.bias_ranker.value(), row.bias_branch.value(), row.nll_cluster.value(),
            row.nll_branch.value(), row.rho_trend.value(), row.rho_uncertainty.value()
        );
    }

    // like branch in logit space for NLL comparison
    let mut like_branch = MbdBranch::new(
        MbdBranchConfig {
            init_seed: 22,
            ..MbdBranchConfig::defaults(
                "like_logit",
                "like",
                ContextProjection::Columns {
                    set: BiasFeatureSet::new("ctx", &["user_full", "item_length"]),
                },
            )
        },
        &ranker.schema,
    )
    .unwrap();
    train_two_phase(&mut like_branch, &mut ranker, 7);
    let row = signal_quality(&ds, &holdout_idx, &ranker, &like_branch, None, "like", 3, &edges, 200).unwrap();
    println!(
        "quality like(logit): bias_ranker {:?} bias_branch {:?} nll_cluster {:?} nll_branch {:?} trend {:?} unc {:?}",
        row.bias_ranker.value(), row.bias_branch.value(), row.nll_cluster.value(),
        row.nll_branch.value(), row.rho_trend.value(), row.rho_uncertainty.value()
    );

    // per-bucket sigma curves for the watch branch
    {
        let fine = Bucketing::new(edges.clone()).unwrap();
        let mut bucket_rows: Vec<Vec<usize>> = vec![Vec::new(); fine.num_buckets()];
        for (pos, &i) in holdout_idx.iter().enumerate() {
            bucket_rows[fine.index_of(ds.interactions[i].features[dur_col])].push(pos);
        }
        println!("bucket | n | sigma_label | sigma_p | sigma_branch");
        for (k, rows) in bucket_rows.iter().enumerate() {
            if rows.len() < 50 { continue; }
            let n = rows.len() as f64;
            let ys: Vec<f64> = rows.iter().map(|&r| hold_ylog[r]).collect();
            let ps: Vec<f64> = rows.iter().map(|&r| p_watch[r]).collect();
            let my = ys.iter().sum::<f64>() / n;
            let sy = (ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / n).sqrt();
            let mp = ps.iter().sum::<f64>() / n;
            let sp = (ps.iter().map(|v| (v - mp) * (v - mp)).sum::<f64>() / n).sqrt();
            let sb = rows.iter().map(|&r| {
                let i = holdout_idx[r];
                watch_branch.estimate_full(&ds.interactions[i].features).unwrap().sigma()
            }).sum::<f64>() / n;
            println!("{:5} | {:5} | {:.4} | {:.4} | {:.4}", k, rows.len(), sy, sp, sb);
        }
        // pskip = 0 NTS variant
        let mut vvp_nts0 = Vec::new();
        let mut durs2 = Vec::new();
        for &i in &holdout_idx {
            let interaction = &ds.interactions[i];
            let d = interaction.features[dur_col];
            let preds = ranker.predict(&interaction.features).unwrap();
            let pred_seconds = preds[0].value.exp_m1().max(0.0);
            let indicator = mbd_core::signals::vvp95_indicator(pred_seconds, &vvp_table, d).unwrap();
            let avg = item_avg.get(&interaction.item_id).copied().unwrap_or(0.0);
            let w = mbd_core::signals::nts(pred_seconds, 0.0, avg, 0.05).unwrap();
            vvp_nts0.push(indicator * w);
            durs2.push(d);
        }
        println!("corr vvp95_nts (pskip=0): {:.4}",
            pearson(&vvp_nts0, &durs2).unwrap().expect_value("x"));
    }

    // sigma spread for criterion 9
    let mut sigmas_logit = Vec::new();
    for &i in &holdout_idx {
        let est = like_branch.estimate_full(&ds.interactions[i].features).unwrap();
        sigmas_logit.push(est.sigma());
    }
    let m = sigmas_logit.iter().sum::<f64>() / sigmas_logit.len() as f64;
    let sd = (sigmas_logit.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / sigmas_logit.len() as f64).sqrt();
    println!("like logit sigma: mean {m:.4}, cv {:.4}", sd / m);

    // staleness
    let mut drift_cfg = GeneratorConfig::default_desk(77);
    drift_cfg.num_interactions = 180_000;
    drift_cfg.drift = DriftSchedule::linear(1.0, 0.8, 30);
    let drift_ds = generate(&drift_cfg).unwrap();
    let mut st_ranker = RankerModel::new(drift_ds.schema.clone(), default_tasks(), RankerArch::default()).unwrap();
    // normalization must exist for the branch contexts
    st_ranker.schema.fit_normalization(drift_ds.interactions.iter().map(|i| i.features.as_slice()));
    let mut st_branch = MbdBranch::new(
        MbdBranchConfig {
            init_seed: 23,
            target_mode: TargetMode::GroundTruthLabel,
            ..MbdBranchConfig::defaults(
                "staleness",
                "watch_time",
                ContextProjection::Columns {
                    set: BiasFeatureSet::new("ctx", &["user_full", "item_length"]),
                },
            )
        },
        &st_ranker.schema,
    )
    .unwrap();
    let rows = staleness_experiment(
        &drift_ds,
        &st_ranker,
        &mut st_branch,
        &StalenessConfig {
            bucket_edges: edges.clone(),
            window: 2,
            warmup: BranchTrainConfig {
                learning_rate: 3e-3,
                steps: 3000,
                batch_size: 1024,
                ..BranchTrainConfig::default()
            },
            refresh: BranchTrainConfig {
                learning_rate: 1e-4,
                steps: 600,
                batch_size: 2048,
                ..BranchTrainConfig::default()
            },
        },
    )
    .unwrap();
    for r in rows.iter() {
        println!(
            "staleness t={:2}: frozen {:+.4}  branch {:+.4}  (n={})",
            r.time_index,
            r.frozen_mean_z.value().unwrap_or(f64::NAN),
            r.branch_mean_z.value().unwrap_or(f64::NAN),
            r.count
        );
    }
    println!("[{:6.1?}] done", t0.elapsed());
}
