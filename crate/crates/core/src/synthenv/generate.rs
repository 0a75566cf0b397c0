//! Dataset generation under the pinned generative process.
//!
//! Determinism: the user and item populations come from fixed ChaCha
//! streams of the config seed; interaction `i` draws from its own stream, so
//! disjoint index ranges can be generated on different shards and
//! concatenated in index order without changing a single byte.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Dataset, Interaction};
use crate::error::{CoreError, Result};
use crate::scalar::sigmoid;
use crate::synthenv::config::GeneratorConfig;
use crate::synthenv::population::{
    affinity, feature_schema, features_of, sample_item, sample_user, Format, ItemProfile,
    UserProfile,
};

const USER_STREAM: u64 = 1;
const ITEM_STREAM: u64 = 2;
const INTERACTION_STREAM_BASE: u64 = 1 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sample_population(cfg: &GeneratorConfig) -> (Vec<UserProfile>, Vec<ItemProfile>) {
    let mut user_rng = stream_rng(cfg.seed, USER_STREAM);
    let users = (0..cfg.num_users)
        .map(|id| sample_user(cfg, id as u64, &mut user_rng))
        .collect();
    let mut item_rng = stream_rng(cfg.seed, ITEM_STREAM);
    let items = (0..cfg.num_items)
        .map(|id| sample_item(cfg, id as u64, &mut item_rng))
        .collect();
    (users, items)
}

/// Cold-start noise multiplier: thin interaction history inflates label noise.
pub fn cold_noise_multiplier(cfg: &GeneratorConfig, views: u64) -> f64 {
    1.0 + cfg.cold_start_noise_boost / (1.0 + views as f64 / cfg.cold_start_views_scale)
}

#[derive(Debug, Clone, Copy)]
pub struct Labels {
    pub watch_time_seconds: f64,
    pub like: u8,
    pub looped: u8,
}

/// Draw labels for a (user, item, t) triple. This is the single definition of
/// the generative process; the conditional oracle reuses it.
pub fn draw_labels<R: Rng>(
    cfg: &GeneratorConfig,
    user: &UserProfile,
    item: &ItemProfile,
    time_index: u32,
    rng: &mut R,
) -> Labels {
    let a = affinity(user, item);
    let noise_std = cfg.watch_noise_scale * cold_noise_multiplier(cfg, item.views);
    let eps: f64 = {
        let z: f64 = StandardNormal.sample(rng);
        z * noise_std
    };
    let completion =
        sigmoid(cfg.affinity_sharpness * (a + user.patience) + eps).clamp(0.0, 1.0);
    let drift = cfg.drift.multipliers[time_index as usize];
    let watch = (completion * item.duration_seconds * drift)
        .min(cfg.max_loops_cap * item.duration_seconds);

    let looped = match item.format {
        Format::Photo => 0,
        Format::Video => {
            let p = sigmoid(
                cfg.loop_affinity_gain * a
                    - cfg.loop_duration_penalty * item.duration_seconds.ln(),
            );
            u8::from(rng.random_range(0.0..1.0) < p)
        }
    };

    let format_offset = match item.format {
        Format::Photo => cfg.like_photo_offset,
        Format::Video => cfg.like_video_offset,
    };
    let p_like = sigmoid(
        cfg.like_affinity_gain * a + user.like_threshold + format_offset + cfg.like_base_offset,
    );
    let like = u8::from(rng.random_range(0.0..1.0) < p_like);

    Labels {
        watch_time_seconds: watch,
        like,
        looped,
    }
}

/// Generate interactions `start..end` of the configured dataset.
pub fn generate_range(cfg: &GeneratorConfig, start: usize, end: usize) -> Result<Vec<Interaction>> {
    cfg.validate()?;
    let (users, items) = sample_population(cfg);
    // Exposure is activity-weighted: cumulative activity mass over users.
    let mut cum = Vec::with_capacity(users.len());
    let mut total = 0.0;
    for u in &users {
        total += u.activity.max(1e-9);
        cum.push(total);
    }
    let template = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(end.saturating_sub(start));
    for i in start..end {
        let mut rng = template.clone();
        rng.set_stream(INTERACTION_STREAM_BASE + i as u64);
        let mass = rng.random_range(0.0..total);
        let uid = cum.partition_point(|&c| c <= mass).min(users.len() - 1);
        let vid = rng.random_range(0..items.len());
        let t = rng.random_range(0..cfg.drift.len()) as u32;
        let user = &users[uid];
        let item = &items[vid];
        let labels = draw_labels(cfg, user, item, t, &mut rng);
        out.push(Interaction {
            user_id: user.id,
            item_id: item.id,
            features: features_of(user, item),
            watch_time_seconds: labels.watch_time_seconds,
            like: labels.like,
            looped: labels.looped,
            time_index: t,
        });
    }
    Ok(out)
}

/// Generate the full configured dataset.
pub fn generate(cfg: &GeneratorConfig) -> Result<Dataset> {
    let schema = feature_schema(cfg.latent_dim)?;
    let interactions = generate_range(cfg, 0, cfg.num_interactions)?;
    Ok(Dataset { schema, interactions })
}

/// Rescale watch-time labels by a per-index multiplier. The schedule must
/// cover every timestamp index present; watch time stays capped at
/// `max_loops_cap` times the item duration.
pub fn apply_drift(
    dataset: &mut Dataset,
    schedule: &crate::synthenv::config::DriftSchedule,
    max_loops_cap: f64,
) -> Result<()> {
    schedule.validate()?;
    let dur_col = dataset.schema.index_of("i_duration")?;
    for (row, i) in dataset.interactions.iter().enumerate() {
        if i.time_index as usize >= schedule.len() {
            return Err(CoreError::MalformedRow {
                row,
                reason: format!(
                    "timestamp index {} not covered by drift schedule of length {}",
                    i.time_index,
                    schedule.len()
                ),
            });
        }
    }
    for i in &mut dataset.interactions {
        let m = schedule.multipliers[i.time_index as usize];
        let cap = max_loops_cap * i.features[dur_col];
        i.watch_time_seconds = (i.watch_time_seconds * m).min(cap);
    }
    Ok(())
}
