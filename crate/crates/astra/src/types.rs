//! Shared data model: annotations, streams, clips, target/prediction grids,
//! detections.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, StreamKind};
use crate::error::{AstraError, Result};

/// One annotated action: class, timestamp in seconds from timeline start,
/// and whether the action is visible on screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAction {
    pub class_id: usize,
    pub time_s: f64,
    pub visible: bool,
}

/// All annotations of one timeline, sorted by time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchAnnotations {
    pub timeline_id: String,
    pub duration_s: f64,
    pub actions: Vec<GroundTruthAction>,
}

impl MatchAnnotations {
    /// Validates invariants and sorts actions by time.
    pub fn normalized(mut self, num_classes: usize) -> Result<Self> {
        for a in &self.actions {
            if a.class_id >= num_classes {
                return Err(AstraError::contract(format!(
                    "action class {} out of range for C={num_classes}",
                    a.class_id
                )));
            }
            if !(0.0..=self.duration_s).contains(&a.time_s) {
                return Err(AstraError::contract(format!(
                    "action time {} outside [0, {}]",
                    a.time_s, self.duration_s
                )));
            }
        }
        self.actions
            .sort_by(|a, b| a.time_s.partial_cmp(&b.time_s).unwrap());
        Ok(self)
    }
}

/// Static description of one stream's geometry within a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub stream_id: usize,
    pub kind: StreamKind,
    pub feature_dim: usize,
    pub tokens_per_clip: usize,
    pub seconds_per_token: f64,
}

impl StreamSpec {
    pub fn from_config(cfg: &PipelineConfig, stream_id: usize) -> Self {
        let sc = &cfg.streams[stream_id];
        StreamSpec {
            stream_id,
            kind: sc.kind,
            feature_dim: sc.feature_dim,
            tokens_per_clip: cfg.tokens_for(sc.kind),
            seconds_per_token: cfg.seconds_per_token(sc.kind),
        }
    }
}

/// One stream's feature rows for a clip window, plus the clip-local center
/// time of every row (used for segment assignment and augmentations).
#[derive(Debug, Clone)]
pub struct EmbeddingStream {
    pub spec: StreamSpec,
    pub features: Array2<f64>,
    pub clip_times: Vec<f64>,
}

impl EmbeddingStream {
    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.features.dim();
        if rows != self.spec.tokens_per_clip || cols != self.spec.feature_dim {
            return Err(AstraError::contract(format!(
                "stream {} shape {rows}x{cols} does not match spec {}x{}",
                self.spec.stream_id, self.spec.tokens_per_clip, self.spec.feature_dim
            )));
        }
        if self.clip_times.len() != rows {
            return Err(AstraError::contract("clip_times length mismatch".to_string()));
        }
        if !self.features.iter().all(|v| v.is_finite()) {
            return Err(AstraError::contract("non-finite feature entry".to_string()));
        }
        Ok(())
    }
}

/// A model input: all streams of one clip window, with training targets and
/// the in-window actions when produced by the training iterator.
#[derive(Debug, Clone)]
pub struct ClipSample {
    pub timeline_id: String,
    pub start_s: f64,
    pub streams: Vec<EmbeddingStream>,
    pub targets: Option<TargetGrid>,
    /// Actions whose time falls within the clip window plus the displacement
    /// radius margin, in absolute seconds. Empty in eval mode.
    pub actions: Vec<GroundTruthAction>,
}

/// Supervision grid: per-(anchor, class) classification targets, displacement
/// targets with a validity mask, and per-entry displacement loss weights
/// (all 1 until mixup blends two clips).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    pub scores: Array2<f64>,
    pub displacements: Array2<f64>,
    pub displacement_mask: Array2<bool>,
    pub displacement_weights: Array2<f64>,
}

impl TargetGrid {
    pub fn empty(l_out: usize, num_classes: usize) -> Self {
        let cols = num_classes + 1;
        let mut scores = Array2::zeros((l_out, cols));
        scores.column_mut(num_classes).fill(1.0);
        TargetGrid {
            scores,
            displacements: Array2::zeros((l_out, cols)),
            displacement_mask: Array2::from_elem((l_out, cols), false),
            displacement_weights: Array2::zeros((l_out, cols)),
        }
    }

    pub fn supervised_count(&self) -> usize {
        self.displacement_mask.iter().filter(|&&m| m).count()
    }
}

/// Model output grid: scores in (0,1), displacement means in seconds, and
/// displacement variances in squared seconds (strictly positive).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    pub scores: Array2<f64>,
    pub means: Array2<f64>,
    pub variances: Array2<f64>,
}

/// A final spotted action: class, absolute time, confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub time_s: f64,
    pub confidence: f64,
}
