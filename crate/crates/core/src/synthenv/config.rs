//! Generator configuration. Every field is explicit — the config file plus
//! the code version pins every output byte.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Global watch-time multiplier per timestamp index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSchedule {
    pub multipliers: Vec<f64>,
}

impl DriftSchedule {
    pub fn flat(indices: usize) -> Self {
        DriftSchedule {
            multipliers: vec![1.0; indices.max(1)],
        }
    }

    /// Linear ramp from `from` to `to` across `indices` steps.
    pub fn linear(from: f64, to: f64, indices: usize) -> Self {
        let n = indices.max(1);
        let multipliers = (0..n)
            .map(|i| {
                if n == 1 {
                    from
                } else {
                    from + (to - from) * (i as f64) / ((n - 1) as f64)
                }
            })
            .collect();
        DriftSchedule { multipliers }
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.multipliers.is_empty() {
            return Err(CoreError::InvalidConfig(
                "drift schedule needs at least one index".into(),
            ));
        }
        if self.multipliers.iter().any(|m| !(*m > 0.0)) {
            return Err(CoreError::InvalidConfig(
                "drift multipliers must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The pinned generative world model.
///
/// Per interaction: affinity `a = sigmoid(quality + taste . topic)`;
/// completion `c = clamp01(sigmoid(kappa (a + patience) + eps))` with
/// `eps ~ N(0, (tau_noise * cold_mult)^2)` and
/// `cold_mult = 1 + cold_start_noise_boost / (1 + views / cold_start_views_scale)`;
/// `watch = min(c * duration * drift[t], max_loops_cap * duration)`;
/// `P(loop) = sigmoid(loop_affinity_gain * a - loop_duration_penalty * ln duration)`
/// (photos never loop);
/// `P(like) = sigmoid(like_affinity_gain * a + like_threshold + format offset + like_base_offset)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub latent_dim: usize,
    /// kappa: completion sharpness on (affinity + patience).
    pub affinity_sharpness: f64,
    /// tau_noise: base std of the completion noise.
    pub watch_noise_scale: f64,
    pub patience_std: f64,
    pub like_threshold_std: f64,
    pub duration_min_seconds: f64,
    pub duration_max_seconds: f64,
    pub photo_fraction: f64,
    pub photo_display_seconds: f64,
    pub loop_affinity_gain: f64,
    pub loop_duration_penalty: f64,
    pub like_affinity_gain: f64,
    pub like_base_offset: f64,
    pub like_photo_offset: f64,
    pub like_video_offset: f64,
    pub views_log_mean: f64,
    pub views_log_std: f64,
    pub cold_start_noise_boost: f64,
    pub cold_start_views_scale: f64,
    pub max_loops_cap: f64,
    pub drift: DriftSchedule,
}

impl GeneratorConfig {
    /// Desk-scale defaults with every planted bias active.
    pub fn default_desk(seed: u64) -> Self {
        GeneratorConfig {
            seed,
            num_users: 400,
            num_items: 600,
            num_interactions: 100_000,
            latent_dim: 4,
            affinity_sharpness: 2.5,
            watch_noise_scale: 0.7,
            patience_std: 0.5,
            like_threshold_std: 1.0,
            duration_min_seconds: 2.0,
            duration_max_seconds: 600.0,
            photo_fraction: 0.25,
            photo_display_seconds: 5.0,
            loop_affinity_gain: 2.0,
            loop_duration_penalty: 0.8,
            like_affinity_gain: 2.5,
            like_base_offset: -5.5,
            like_photo_offset: 0.3,
            like_video_offset: 0.0,
            views_log_mean: 6.0,
            views_log_std: 2.5,
            cold_start_noise_boost: 2.0,
            cold_start_views_scale: 100.0,
            max_loops_cap: 3.0,
            drift: DriftSchedule::flat(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_users", self.num_users as f64),
            ("num_items", self.num_items as f64),
            ("num_interactions", self.num_interactions as f64),
            ("latent_dim", self.latent_dim as f64),
            ("affinity_sharpness", self.affinity_sharpness),
            ("duration_min_seconds", self.duration_min_seconds),
            ("duration_max_seconds", self.duration_max_seconds),
            ("photo_display_seconds", self.photo_display_seconds),
            ("max_loops_cap", self.max_loops_cap),
            ("cold_start_views_scale", self.cold_start_views_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(CoreError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        let non_negative = [
            ("watch_noise_scale", self.watch_noise_scale),
            ("patience_std", self.patience_std),
            ("like_threshold_std", self.like_threshold_std),
            ("views_log_std", self.views_log_std),
            ("cold_start_noise_boost", self.cold_start_noise_boost),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) {
                return Err(CoreError::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.photo_fraction) {
            return Err(CoreError::InvalidConfig("photo_fraction must lie in [0,1]".into()));
        }
        if self.duration_min_seconds >= self.duration_max_seconds {
            return Err(CoreError::InvalidConfig(
                "duration_min_seconds must be below duration_max_seconds".into(),
            ));
        }
        self.drift.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        GeneratorConfig::default_desk(1).validate().unwrap();
    }

    #[test]
    fn non_positive_population_rejected() {
        let mut cfg = GeneratorConfig::default_desk(1);
        cfg.num_users = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn drift_must_be_positive() {
        let mut cfg = GeneratorConfig::default_desk(1);
        cfg.drift = DriftSchedule { multipliers: vec![1.0, 0.0] };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn linear_ramp_endpoints() {
        let d = DriftSchedule::linear(1.0, 0.8, 30);
        assert!((d.multipliers[0] - 1.0).abs() < 1e-12);
        assert!((d.multipliers[29] - 0.8).abs() < 1e-12);
        assert!(d.multipliers.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = GeneratorConfig::default_desk(9);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: GeneratorConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_field_rejected() {
        let mut v: serde_json::Value =
            serde_json::to_value(GeneratorConfig::default_desk(1)).unwrap();
        v["bogus_field"] = serde_json::json!(1);
        assert!(serde_json::from_value::<GeneratorConfig>(v).is_err());
    }
}
