//! Brute-force conditional moments of the generative process.
//!
//! A context assigns values to feature columns (the variables of a bias
//! feature set). The oracle redraws everything the context leaves free from
//! the population priors, overriding the fixed variables, and Monte-Carlo
//! estimates the mean and variance of any per-interaction quantity.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Interaction;
use crate::error::{CoreError, Result};
use crate::synthenv::config::GeneratorConfig;
use crate::synthenv::generate::draw_labels;
use crate::synthenv::population::{
    feature_schema, features_of, sample_item, sample_user, Format, ItemProfile, Region,
    UserProfile,
};

const ORACLE_STREAM_BASE: u64 = 1 << 40;

/// Assignment of bias-feature-set variables plus the evaluation time index.
#[derive(Debug, Clone, Default)]
pub struct OracleContext {
    pub fixed: BTreeMap<String, f64>,
    pub time_index: u32,
}

impl OracleContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fix(mut self, column: &str, value: f64) -> Self {
        self.fixed.insert(column.to_string(), value);
        self
    }

    pub fn at_time(mut self, t: u32) -> Self {
        self.time_index = t;
        self
    }

    /// Fix every user column to this profile's values.
    pub fn fix_user(mut self, user: &UserProfile) -> Self {
        for (i, t) in user.taste.iter().enumerate() {
            self.fixed.insert(format!("u_taste_{i}"), *t);
        }
        self.fixed.insert("u_patience".into(), user.patience);
        self.fixed.insert("u_activity".into(), user.activity);
        self.fixed.insert("u_like_threshold".into(), user.like_threshold);
        self.fixed.insert(
            "u_region_a".into(),
            if user.region == Region::A { 1.0 } else { 0.0 },
        );
        self.fixed.insert(
            "u_region_b".into(),
            if user.region == Region::B { 1.0 } else { 0.0 },
        );
        self
    }

    /// Fix every item column to this profile's values.
    pub fn fix_item(mut self, item: &ItemProfile) -> Self {
        for (i, t) in item.topic.iter().enumerate() {
            self.fixed.insert(format!("i_topic_{i}"), *t);
        }
        self.fixed.insert("i_duration".into(), item.duration_seconds);
        self.fixed
            .insert("i_log_duration".into(), item.duration_seconds.ln());
        self.fixed.insert("i_quality".into(), item.quality);
        self.fixed.insert(
            "i_format_photo".into(),
            if item.format == Format::Photo { 1.0 } else { 0.0 },
        );
        self.fixed.insert(
            "i_format_video".into(),
            if item.format == Format::Video { 1.0 } else { 0.0 },
        );
        self.fixed
            .insert("i_log1p_views".into(), (item.views as f64).ln_1p());
        self
    }

    fn validate(&self, cfg: &GeneratorConfig) -> Result<()> {
        let schema = feature_schema(cfg.latent_dim)?;
        for name in self.fixed.keys() {
            schema.index_of(name)?;
        }
        if self.time_index as usize >= cfg.drift.len() {
            return Err(CoreError::InconsistentContext(format!(
                "time index {} outside drift schedule of length {}",
                self.time_index,
                cfg.drift.len()
            )));
        }
        Ok(())
    }
}

fn indicator_pair(
    fixed: &BTreeMap<String, f64>,
    pos: &str,
    neg: &str,
) -> Result<Option<bool>> {
    let a = fixed.get(pos).map(|v| *v >= 0.5);
    let b = fixed.get(neg).map(|v| *v >= 0.5);
    match (a, b) {
        (None, None) => Ok(None),
        (Some(x), None) => Ok(Some(x)),
        (None, Some(y)) => Ok(Some(!y)),
        (Some(x), Some(y)) => {
            if x == y {
                Err(CoreError::InconsistentContext(format!(
                    "{pos} and {neg} are both {}",
                    if x { "set" } else { "clear" }
                )))
            } else {
                Ok(Some(x))
            }
        }
    }
}

/// One draw from the generative process with the context's variables fixed.
pub fn sample_conditioned<R: Rng>(
    cfg: &GeneratorConfig,
    ctx: &OracleContext,
    rng: &mut R,
) -> Result<Interaction> {
    let mut user = sample_user(cfg, u64::MAX, rng);
    let mut item = sample_item(cfg, u64::MAX, rng);

    for (i, slot) in user.taste.iter_mut().enumerate() {
        if let Some(v) = ctx.fixed.get(&format!("u_taste_{i}")) {
            *slot = *v;
        }
    }
    if let Some(v) = ctx.fixed.get("u_patience") {
        user.patience = *v;
    }
    if let Some(v) = ctx.fixed.get("u_activity") {
        user.activity = *v;
    }
    if let Some(v) = ctx.fixed.get("u_like_threshold") {
        user.like_threshold = *v;
    }
    if let Some(is_a) = indicator_pair(&ctx.fixed, "u_region_a", "u_region_b")? {
        user.region = if is_a { Region::A } else { Region::B };
    }

    for (i, slot) in item.topic.iter_mut().enumerate() {
        if let Some(v) = ctx.fixed.get(&format!("i_topic_{i}")) {
            *slot = *v;
        }
    }
    if let Some(v) = ctx.fixed.get("i_quality") {
        item.quality = *v;
    }
    if let Some(v) = ctx.fixed.get("i_log1p_views") {
        item.views = v.exp_m1().round().max(0.0) as u64;
    }

    let fixed_duration = match (ctx.fixed.get("i_duration"), ctx.fixed.get("i_log_duration")) {
        (None, None) => None,
        (Some(d), None) => Some(*d),
        (None, Some(l)) => Some(l.exp()),
        (Some(d), Some(l)) => {
            let from_log = l.exp();
            if (from_log - d).abs() > 1e-6 * d.abs().max(1.0) {
                return Err(CoreError::InconsistentContext(format!(
                    "i_duration = {d} conflicts with i_log_duration = {l}"
                )));
            }
            Some(*d)
        }
    };
    let fixed_format = indicator_pair(&ctx.fixed, "i_format_photo", "i_format_video")?
        .map(|is_photo| if is_photo { Format::Photo } else { Format::Video });

    match (fixed_duration, fixed_format) {
        (Some(d), Some(Format::Photo)) => {
            if (d - cfg.photo_display_seconds).abs() > 1e-9 {
                return Err(CoreError::InconsistentContext(format!(
                    "photos always have display length {}, context fixes duration {d}",
                    cfg.photo_display_seconds
                )));
            }
            item.format = Format::Photo;
            item.duration_seconds = cfg.photo_display_seconds;
        }
        (Some(d), Some(Format::Video)) => {
            item.format = Format::Video;
            item.duration_seconds = d;
        }
        (Some(d), None) => {
            // A fixed duration away from the photo display length implies a
            // video; exactly at the display length the sampled format stands.
            if (d - cfg.photo_display_seconds).abs() > 1e-9 {
                item.format = Format::Video;
            }
            item.duration_seconds = d;
        }
        (None, Some(f)) => {
            let sampled = item.format;
            item.format = f;
            match f {
                Format::Photo => item.duration_seconds = cfg.photo_display_seconds,
                Format::Video => {
                    if sampled == Format::Photo {
                        // sampled draw was a photo at display length; redraw
                        // a video duration from the prior
                        let u = rng.random_range(
                            cfg.duration_min_seconds.ln()..cfg.duration_max_seconds.ln(),
                        );
                        item.duration_seconds = u.exp();
                    }
                }
            }
        }
        (None, None) => {}
    }

    let labels = draw_labels(cfg, &user, &item, ctx.time_index, rng);
    Ok(Interaction {
        user_id: user.id,
        item_id: item.id,
        features: features_of(&user, &item),
        watch_time_seconds: labels.watch_time_seconds,
        like: labels.like,
        looped: labels.looped,
        time_index: ctx.time_index,
    })
}

/// Monte Carlo moment estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct MomentEstimate {
    pub mean: f64,
    /// Population variance of the sampled quantity.
    pub variance: f64,
    /// Standard error of the mean.
    pub std_error: f64,
    pub samples: usize,
}

/// Estimate E[f] and Var[f] of a per-interaction quantity under the context.
/// Seeded and deterministic; sample `i` uses its own ChaCha stream.
pub fn conditional_moments<F>(
    cfg: &GeneratorConfig,
    ctx: &OracleContext,
    n_mc: usize,
    seed: u64,
    f: F,
) -> Result<MomentEstimate>
where
    F: Fn(&Interaction) -> f64,
{
    if n_mc == 0 {
        return Err(CoreError::InvalidConfig("n_mc must be >= 1".into()));
    }
    cfg.validate()?;
    ctx.validate(cfg)?;
    let template = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_mc);
    for i in 0..n_mc {
        let mut rng = template.clone();
        rng.set_stream(ORACLE_STREAM_BASE + i as u64);
        let interaction = sample_conditioned(cfg, ctx, &mut rng)?;
        values.push(f(&interaction));
    }
    if values.iter().all(|v| *v == values[0]) {
        // Degenerate draw: identical samples have exactly zero variance; the
        // summation path would otherwise leak rounding noise into it.
        return Ok(MomentEstimate {
            mean: values[0],
            variance: 0.0,
            std_error: 0.0,
            samples: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let variance = ss / n;
    let std_error = if values.len() > 1 {
        (ss / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        f64::INFINITY
    };
    Ok(MomentEstimate {
        mean,
        variance,
        std_error,
        samples: values.len(),
    })
}

/// Conditional mean/variance of a raw task label given the context.
pub fn oracle_conditional_stats(
    cfg: &GeneratorConfig,
    ctx: &OracleContext,
    task: &str,
    n_mc: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    match task {
        "watch_time" => conditional_moments(cfg, ctx, n_mc, seed, |i| i.watch_time_seconds),
        "like" => conditional_moments(cfg, ctx, n_mc, seed, |i| i.like as f64),
        "loop" => conditional_moments(cfg, ctx, n_mc, seed, |i| i.looped as f64),
        other => Err(CoreError::InvalidConfig(format!("unknown task `{other}`"))),
    }
}
