//! Pipeline configuration, ablation flags, and class-name tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AstraError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Visual,
    Audio,
}

/// One input stream declaration: what kind it is and the feature width of
/// its rows. Token counts per clip are derived (`T` rows for visual streams,
/// `floor(T / T_a)` for the audio stream).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub kind: StreamKind,
    pub feature_dim: usize,
}

/// All numeric knobs of the pipeline. Field defaults follow the reference
/// operating point: 50 s clips, 512-wide model, 17 classes, focal loss with
/// gamma 1, Gaussian displacement loss with alpha 0.3 and weight 100 on the
/// classification term.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Clip length `T` in whole seconds.
    pub clip_seconds: usize,
    /// Common token width `d` after projection.
    pub model_dim: usize,
    /// Audio token span `T_a` in seconds.
    pub audio_token_seconds: f64,
    /// Output anchors per clip-second; `L_out = anchors_per_second * T`.
    pub anchors_per_second: usize,
    /// Encoder depth `n_e`.
    pub encoder_layers: usize,
    /// Decoder depth `n_d`.
    pub decoder_layers: usize,
    /// Attention heads `h`.
    pub attention_heads: usize,
    /// PFFN widening factor `alpha`.
    pub ffn_widening: usize,
    /// Dropout probability `p`.
    pub dropout: f64,
    /// Number of action classes `C` (the grid has one extra background column).
    pub num_classes: usize,
    /// Classification radius `r_c` in seconds.
    pub radius_classification: f64,
    /// Displacement radius `r_d` in seconds.
    pub radius_displacement: f64,
    /// Focal exponent `gamma`; 0 recovers plain binary cross-entropy.
    pub focal_gamma: f64,
    /// Gaussian-loss balance `alpha_L` between residual and log-variance terms.
    pub nll_alpha: f64,
    /// Classification-loss weight `w_c`.
    pub classification_weight: f64,
    /// Mixup Beta parameters `(alpha_m, beta_m)`.
    pub mixup_alpha: f64,
    pub mixup_beta: f64,
    /// Temporal dropout probability per second `p_td`.
    pub temporal_dropout_prob: f64,
    /// Temporal switch probability per second-pair `p_ts`.
    pub temporal_switch_prob: f64,
    pub base_lr: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    /// Soft-NMS window in seconds for classes without an override.
    pub nms_window_default_s: f64,
    /// Per-class Soft-NMS window overrides.
    pub nms_window_overrides: BTreeMap<usize, f64>,
    /// Soft-NMS Gaussian decay scale.
    pub nms_sigma_decay: f64,
    /// Minimum score for an anchor to become a detection candidate.
    pub score_floor: f64,
    /// Input streams; at most one audio stream.
    pub streams: Vec<StreamConfig>,
    /// Channel widths of the three audio-embedder conv layers.
    pub audio_conv_channels: [usize; 3],
    /// Fraction of timelines held out for validation during training.
    pub val_fraction: f64,
    /// Validation cadence in epochs (1 = every epoch).
    pub eval_every_epochs: usize,
    /// Random training clips drawn per timeline per epoch.
    pub clips_per_timeline: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            clip_seconds: 50,
            model_dim: 512,
            audio_token_seconds: 0.96,
            anchors_per_second: 2,
            encoder_layers: 3,
            decoder_layers: 3,
            attention_heads: 8,
            ffn_widening: 4,
            dropout: 0.4,
            num_classes: 17,
            radius_classification: 2.0,
            radius_displacement: 3.0,
            focal_gamma: 1.0,
            nll_alpha: 0.3,
            classification_weight: 100.0,
            mixup_alpha: 1.0,
            mixup_beta: 0.6,
            temporal_dropout_prob: 0.5,
            temporal_switch_prob: 0.3,
            base_lr: 5e-5,
            epochs: 50,
            warmup_epochs: 3,
            batch_size: 32,
            grad_clip_norm: Some(1.0),
            nms_window_default_s: 8.0,
            nms_window_overrides: BTreeMap::new(),
            nms_sigma_decay: 0.5,
            score_floor: 0.01,
            streams: default_streams(),
            audio_conv_channels: [8, 16, 16],
            val_fraction: 0.1,
            eval_every_epochs: 1,
            clips_per_timeline: 4,
        }
    }
}

fn default_streams() -> Vec<StreamConfig> {
    let mut streams = vec![
        StreamConfig { kind: StreamKind::Visual, feature_dim: 512 };
        5
    ];
    streams.push(StreamConfig { kind: StreamKind::Audio, feature_dim: 64 });
    streams
}

impl PipelineConfig {
    /// Output temporal dimension `L_out`.
    pub fn output_len(&self) -> usize {
        self.anchors_per_second * self.clip_seconds
    }

    /// Audio token count per clip, `floor(T / T_a)`.
    pub fn audio_tokens(&self) -> usize {
        (self.clip_seconds as f64 / self.audio_token_seconds).floor() as usize
    }

    pub fn tokens_for(&self, kind: StreamKind) -> usize {
        match kind {
            StreamKind::Visual => self.clip_seconds,
            StreamKind::Audio => self.audio_tokens(),
        }
    }

    pub fn seconds_per_token(&self, kind: StreamKind) -> f64 {
        match kind {
            StreamKind::Visual => 1.0,
            StreamKind::Audio => self.audio_token_seconds,
        }
    }

    pub fn nms_window(&self, class_id: usize) -> f64 {
        self.nms_window_overrides
            .get(&class_id)
            .copied()
            .unwrap_or(self.nms_window_default_s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_seconds == 0 || self.output_len() == 0 {
            return Err(AstraError::config("clip_seconds and anchors_per_second must be positive"));
        }
        if self.radius_classification <= 0.0 || self.radius_displacement < self.radius_classification {
            return Err(AstraError::config("radii must satisfy r_d >= r_c > 0"));
        }
        if self.focal_gamma < 0.0 {
            return Err(AstraError::config("focal_gamma must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.nll_alpha) {
            return Err(AstraError::config("nll_alpha must lie in [0, 1]"));
        }
        for p in [self.dropout, self.temporal_dropout_prob, self.temporal_switch_prob, self.val_fraction] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AstraError::config("probabilities must lie in [0, 1]"));
            }
        }
        if self.audio_token_seconds <= 0.0 {
            return Err(AstraError::config("audio_token_seconds must be positive"));
        }
        if self.streams.is_empty() {
            return Err(AstraError::config("at least one input stream is required"));
        }
        let audio_count = self.streams.iter().filter(|s| s.kind == StreamKind::Audio).count();
        if audio_count > 1 {
            return Err(AstraError::config("at most one audio stream is supported"));
        }
        if self.model_dim % self.attention_heads != 0 {
            return Err(AstraError::config("model_dim must be divisible by attention_heads"));
        }
        if audio_count == 1 {
            let d_a = self.streams.iter().find(|s| s.kind == StreamKind::Audio).unwrap().feature_dim;
            // Three valid k=3 convolutions need at least 7 input positions.
            if d_a < 7 {
                return Err(AstraError::config("audio feature_dim must be at least 7"));
            }
        }
        Ok(())
    }
}

/// Ablation toggles. Strategy fields name entries of the corresponding
/// registries; the remaining fields override numeric config values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub use_audio: bool,
    pub use_focal: bool,
    /// Mixup strategy name: "none" | "plain" | "balanced".
    pub mixup: String,
    /// Displacement objective name: "gaussian" | "mse".
    pub displacement: String,
    /// Encoder attention layout name: "hierarchical" | "global".
    pub encoder: String,
    /// Output anchors per second (1 or 2).
    pub anchors_per_second: usize,
    pub r_c_override: Option<f64>,
    pub r_d_override: Option<f64>,
    pub mixup_alpha_override: Option<f64>,
    pub mixup_beta_override: Option<f64>,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_audio: true,
            use_focal: true,
            mixup: "balanced".to_string(),
            displacement: "gaussian".to_string(),
            encoder: "hierarchical".to_string(),
            anchors_per_second: 2,
            r_c_override: None,
            r_d_override: None,
            mixup_alpha_override: None,
            mixup_beta_override: None,
        }
    }
}

/// A config file as consumed by `train` and `ablate`: pipeline knobs plus
/// ablation flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    pub flags: AblationFlags,
}

impl ExperimentConfig {
    /// Folds the flags into a concrete `PipelineConfig`: drops the audio
    /// stream when disabled, zeroes gamma when focal weighting is off, and
    /// applies anchor/radius/mixup overrides.
    pub fn resolved(&self) -> PipelineConfig {
        let mut cfg = self.pipeline.clone();
        let flags = &self.flags;
        if !flags.use_audio {
            cfg.streams.retain(|s| s.kind != StreamKind::Audio);
        }
        if !flags.use_focal {
            cfg.focal_gamma = 0.0;
        }
        cfg.anchors_per_second = flags.anchors_per_second;
        if let Some(r_c) = flags.r_c_override {
            cfg.radius_classification = r_c;
        }
        if let Some(r_d) = flags.r_d_override {
            cfg.radius_displacement = r_d;
        }
        if let Some(a) = flags.mixup_alpha_override {
            cfg.mixup_alpha = a;
        }
        if let Some(b) = flags.mixup_beta_override {
            cfg.mixup_beta = b;
        }
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AstraError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| AstraError::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| AstraError::io(path, e))
    }
}

/// The 17 default action class names, most frequent first.
pub const DEFAULT_CLASS_NAMES: [&str; 17] = [
    "Ball out of play",
    "Throw-in",
    "Foul",
    "Indirect free-kick",
    "Clearance",
    "Shot on target",
    "Shot off target",
    "Corner",
    "Substitution",
    "Kick-off",
    "Direct free-kick",
    "Offside",
    "Yellow card",
    "Goal",
    "Penalty",
    "Red card",
    "Yellow->red card",
];

/// Builds the id -> name table for `num_classes` classes. The first 17 use
/// the default names; beyond that (or for synthetic class counts) names are
/// generated.
pub fn class_names(num_classes: usize) -> BTreeMap<usize, String> {
    (0..num_classes)
        .map(|id| {
            let name = DEFAULT_CLASS_NAMES
                .get(id)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("class_{id:02}"));
            (id, name)
        })
        .collect()
}

pub fn write_class_names(path: &Path, num_classes: usize) -> Result<()> {
    let table: BTreeMap<String, String> = class_names(num_classes)
        .into_iter()
        .map(|(id, name)| (id.to_string(), name))
        .collect();
    let text = serde_json::to_string_pretty(&table).expect("class table serializes");
    std::fs::write(path, text).map_err(|e| AstraError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_matches_reference_point() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.output_len(), 100);
        assert_eq!(cfg.audio_tokens(), 52);
        assert_eq!(cfg.streams.len(), 6);
        assert_eq!(cfg.num_classes, 17);
    }

    #[test]
    fn flags_resolve_into_config() {
        let mut exp = ExperimentConfig::default();
        exp.flags.use_audio = false;
        exp.flags.use_focal = false;
        exp.flags.anchors_per_second = 1;
        exp.flags.r_c_override = Some(3.0);
        exp.flags.r_d_override = Some(6.0);
        let cfg = exp.resolved();
        assert_eq!(cfg.streams.len(), 5);
        assert_eq!(cfg.focal_gamma, 0.0);
        assert_eq!(cfg.output_len(), 50);
        assert_eq!(cfg.radius_classification, 3.0);
        assert_eq!(cfg.radius_displacement, 6.0);
    }

    #[test]
    fn nms_window_override_table() {
        let mut cfg = PipelineConfig::default();
        cfg.nms_window_overrides.insert(13, 14.0);
        assert_eq!(cfg.nms_window(13), 14.0);
        assert_eq!(cfg.nms_window(0), 8.0);
    }

    #[test]
    fn class_table_covers_defaults_and_generated() {
        let t = class_names(19);
        assert_eq!(t[&0], "Ball out of play");
        assert_eq!(t[&16], "Yellow->red card");
        assert_eq!(t[&18], "class_18");
    }
}
