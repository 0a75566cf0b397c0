//! User and item populations, their priors, and the feature layout.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::scalar::sigmoid;
use crate::schema::{ColumnKind, ColumnSpec, FeatureSchema};
use crate::synthenv::config::GeneratorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Photo,
    Video,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub id: u64,
    pub taste: Vec<f64>,
    pub patience: f64,
    pub activity: f64,
    pub region: Region,
    pub like_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemProfile {
    pub id: u64,
    pub topic: Vec<f64>,
    pub duration_seconds: f64,
    pub quality: f64,
    pub format: Format,
    pub views: u64,
}

pub fn sample_user<R: Rng>(cfg: &GeneratorConfig, id: u64, rng: &mut R) -> UserProfile {
    let k = cfg.latent_dim;
    // Taste entries scale with 1/sqrt(k) so taste . topic has unit variance.
    let taste_std = 1.0 / (k as f64).sqrt();
    let taste = (0..k)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * taste_std
        })
        .collect();
    let patience: f64 = {
        let z: f64 = StandardNormal.sample(rng);
        z * cfg.patience_std
    };
    let activity: f64 = rng.random_range(0.0..1.0);
    let region = if rng.random_range(0.0..1.0) < 0.5 { Region::A } else { Region::B };
    let like_threshold: f64 = {
        let z: f64 = StandardNormal.sample(rng);
        z * cfg.like_threshold_std
    };
    UserProfile {
        id,
        taste,
        patience,
        activity,
        region,
        like_threshold,
    }
}

pub fn sample_item<R: Rng>(cfg: &GeneratorConfig, id: u64, rng: &mut R) -> ItemProfile {
    let k = cfg.latent_dim;
    let topic = (0..k)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z
        })
        .collect();
    let format = if rng.random_range(0.0..1.0) < cfg.photo_fraction {
        Format::Photo
    } else {
        Format::Video
    };
    let duration_seconds = match format {
        Format::Photo => cfg.photo_display_seconds,
        Format::Video => {
            let u = rng.random_range(cfg.duration_min_seconds.ln()..cfg.duration_max_seconds.ln());
            u.exp()
        }
    };
    let quality: f64 = StandardNormal.sample(rng);
    let views = {
        let z: f64 = StandardNormal.sample(rng);
        (cfg.views_log_mean + z * cfg.views_log_std).exp().floor().max(0.0) as u64
    };
    ItemProfile {
        id,
        topic,
        duration_seconds,
        quality,
        format,
        views,
    }
}

/// Hidden affinity: the latent preference never exposed as a feature.
pub fn affinity(user: &UserProfile, item: &ItemProfile) -> f64 {
    let dot: f64 = user.taste.iter().zip(&item.topic).map(|(t, p)| t * p).sum();
    sigmoid(item.quality + dot)
}

/// Feature layout for latent dimension `k`; see [`feature_schema`].
pub fn features_of(user: &UserProfile, item: &ItemProfile) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * user.taste.len() + 11);
    x.extend_from_slice(&user.taste);
    x.push(user.patience);
    x.push(user.activity);
    x.push(user.like_threshold);
    x.push(if user.region == Region::A { 1.0 } else { 0.0 });
    x.push(if user.region == Region::B { 1.0 } else { 0.0 });
    x.extend_from_slice(&item.topic);
    x.push(item.duration_seconds);
    x.push(item.duration_seconds.ln());
    x.push(item.quality);
    x.push(if item.format == Format::Photo { 1.0 } else { 0.0 });
    x.push(if item.format == Format::Video { 1.0 } else { 0.0 });
    x.push((item.views as f64).ln_1p());
    x
}

/// The full feature schema: user taste/patience/activity/threshold/region,
/// item topic/duration/log-duration/quality/format/log-views. The hidden
/// affinity (taste . topic) is deliberately not a column.
pub fn feature_schema(latent_dim: usize) -> Result<FeatureSchema> {
    let mut columns = Vec::new();
    let mut user_cols = Vec::new();
    let mut item_cols = Vec::new();
    for i in 0..latent_dim {
        columns.push(ColumnSpec {
            name: format!("u_taste_{i}"),
            kind: ColumnKind::Continuous,
        });
        user_cols.push(format!("u_taste_{i}"));
    }
    for name in ["u_patience", "u_activity", "u_like_threshold"] {
        columns.push(ColumnSpec { name: name.into(), kind: ColumnKind::Continuous });
        user_cols.push(name.into());
    }
    for name in ["u_region_a", "u_region_b"] {
        columns.push(ColumnSpec { name: name.into(), kind: ColumnKind::Indicator });
        user_cols.push(name.into());
    }
    for i in 0..latent_dim {
        columns.push(ColumnSpec {
            name: format!("i_topic_{i}"),
            kind: ColumnKind::Continuous,
        });
        item_cols.push(format!("i_topic_{i}"));
    }
    for (name, kind) in [
        ("i_duration", ColumnKind::Continuous),
        ("i_log_duration", ColumnKind::Continuous),
        ("i_quality", ColumnKind::Continuous),
        ("i_format_photo", ColumnKind::Indicator),
        ("i_format_video", ColumnKind::Indicator),
        ("i_log1p_views", ColumnKind::Continuous),
    ] {
        columns.push(ColumnSpec { name: name.into(), kind });
        item_cols.push(name.into());
    }

    let mut groups = BTreeMap::new();
    groups.insert("user_full".to_string(), user_cols);
    groups.insert("item_full".to_string(), item_cols);
    groups.insert(
        "user_region".to_string(),
        vec!["u_region_a".into(), "u_region_b".into()],
    );
    groups.insert("item_length".to_string(), vec!["i_log_duration".into()]);
    groups.insert("item_views".to_string(), vec!["i_log1p_views".into()]);
    FeatureSchema::new(columns, groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schema_matches_feature_vector_layout() {
        let cfg = GeneratorConfig::default_desk(3);
        let schema = feature_schema(cfg.latent_dim).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let user = sample_user(&cfg, 0, &mut rng);
        let item = sample_item(&cfg, 0, &mut rng);
        let x = features_of(&user, &item);
        assert_eq!(x.len(), schema.width());

        let dur = x[schema.index_of("i_duration").unwrap()];
        assert!((x[schema.index_of("i_log_duration").unwrap()] - dur.ln()).abs() < 1e-12);
        let photo = x[schema.index_of("i_format_photo").unwrap()];
        let video = x[schema.index_of("i_format_video").unwrap()];
        assert_eq!(photo + video, 1.0);
        let a = x[schema.index_of("u_region_a").unwrap()];
        let b = x[schema.index_of("u_region_b").unwrap()];
        assert_eq!(a + b, 1.0);
    }

    #[test]
    fn photos_have_display_length() {
        let mut cfg = GeneratorConfig::default_desk(5);
        cfg.photo_fraction = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for id in 0..20 {
            let item = sample_item(&cfg, id, &mut rng);
            assert_eq!(item.format, Format::Photo);
            assert_eq!(item.duration_seconds, cfg.photo_display_seconds);
        }
    }

    #[test]
    fn video_durations_within_bounds() {
        let mut cfg = GeneratorConfig::default_desk(5);
        cfg.photo_fraction = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for id in 0..200 {
            let item = sample_item(&cfg, id, &mut rng);
            assert!(item.duration_seconds >= cfg.duration_min_seconds);
            assert!(item.duration_seconds <= cfg.duration_max_seconds);
        }
    }

    #[test]
    fn group_expansion_covers_all_columns() {
        let schema = feature_schema(4).unwrap();
        let user = schema.resolve(&["user_full".into()]).unwrap();
        let item = schema.resolve(&["item_full".into()]).unwrap();
        assert_eq!(user.len() + item.len(), schema.width());
        let len = schema.resolve(&["item_length".into()]).unwrap();
        assert_eq!(len.len(), 1);
    }
}
