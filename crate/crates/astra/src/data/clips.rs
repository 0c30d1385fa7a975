//! Dataset handle and clip iteration: random training clips with attached
//! targets, deterministic half-overlapping eval windows.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anchors::build_targets;
use crate::config::PipelineConfig;
use crate::data::manifest::{load_embeddings, TimelineSource};
use crate::data::synthetic::JitterSidecar;
use crate::error::{AstraError, Result};
use crate::types::{ClipSample, MatchAnnotations};

/// A loaded dataset directory: embedding sources, annotations, and the
/// optional jitter sidecar.
pub struct Dataset {
    pub sources: Vec<TimelineSource>,
    pub annotations: BTreeMap<String, MatchAnnotations>,
    pub jitter: Option<JitterSidecar>,
    pub class_names: Option<BTreeMap<usize, String>>,
}

impl Dataset {
    pub fn load(dir: &Path, num_classes: usize) -> Result<Self> {
        let sources = load_embeddings(&dir.join("manifest.json"))?;
        let mut annotations = BTreeMap::new();
        let ann_dir = dir.join("annotations");
        if ann_dir.is_dir() {
            for source in &sources {
                let path = ann_dir.join(format!("{}.json", source.timeline_id));
                if path.is_file() {
                    let text = std::fs::read_to_string(&path).map_err(|e| AstraError::io(&path, e))?;
                    let ann: MatchAnnotations =
                        serde_json::from_str(&text).map_err(|e| AstraError::json(&path, e))?;
                    annotations.insert(source.timeline_id.clone(), ann.normalized(num_classes)?);
                }
            }
        }
        let jitter_path = dir.join("jitter.json");
        let jitter = if jitter_path.is_file() {
            let text = std::fs::read_to_string(&jitter_path).map_err(|e| AstraError::io(&jitter_path, e))?;
            Some(serde_json::from_str(&text).map_err(|e| AstraError::json(&jitter_path, e))?)
        } else {
            None
        };
        let names_path = dir.join("class_names.json");
        let class_names = if names_path.is_file() {
            let text = std::fs::read_to_string(&names_path).map_err(|e| AstraError::io(&names_path, e))?;
            let raw: BTreeMap<String, String> =
                serde_json::from_str(&text).map_err(|e| AstraError::json(&names_path, e))?;
            Some(
                raw.into_iter()
                    .filter_map(|(k, v)| k.parse::<usize>().ok().map(|id| (id, v)))
                    .collect(),
            )
        } else {
            None
        };
        Ok(Dataset { sources, annotations, jitter, class_names })
    }

    pub fn source(&self, timeline_id: &str) -> Option<&TimelineSource> {
        self.sources.iter().find(|s| s.timeline_id == timeline_id)
    }

    pub fn timeline_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sources.iter().map(|s| s.timeline_id.clone()).collect();
        ids.sort();
        ids
    }

    /// Deterministic train/validation split over sorted timeline ids.
    pub fn split(&self, val_fraction: f64) -> (Vec<String>, Vec<String>) {
        let ids = self.timeline_ids();
        let val_count = ((ids.len() as f64) * val_fraction).round() as usize;
        let val_count = val_count.min(ids.len().saturating_sub(1));
        let split_at = ids.len() - val_count;
        let (train, val) = ids.split_at(split_at);
        (train.to_vec(), val.to_vec())
    }

    /// Builds the clip sample for `[start_s, start_s + T)`. With
    /// `with_targets`, attaches the supervision grid and the actions within
    /// the window plus the displacement-radius margin.
    pub fn clip(&self, timeline_id: &str, start_s: f64, cfg: &PipelineConfig, with_targets: bool) -> Result<ClipSample> {
        let source = self
            .source(timeline_id)
            .ok_or_else(|| AstraError::contract(format!("unknown timeline {timeline_id}")))?;
        let streams = source.window(start_s, cfg)?;
        let (targets, actions) = if with_targets {
            let ann = self.annotations.get(timeline_id).ok_or_else(|| {
                AstraError::contract(format!("no annotations for {timeline_id}"))
            })?;
            let margin = cfg.radius_displacement;
            let t = cfg.clip_seconds as f64;
            let actions: Vec<_> = ann
                .actions
                .iter()
                .filter(|a| a.time_s >= start_s - margin && a.time_s <= start_s + t + margin)
                .copied()
                .collect();
            (Some(build_targets(ann, start_s, cfg)), actions)
        } else {
            (None, Vec::new())
        };
        Ok(ClipSample {
            timeline_id: timeline_id.to_string(),
            start_s,
            streams,
            targets,
            actions,
        })
    }
}

/// Deterministic eval window starts: stride `T/2` from zero, plus a final
/// window flush with the timeline end when the stride does not land there.
/// Timelines shorter than `T` get a single padded window at zero.
pub fn eval_window_starts(duration_s: f64, cfg: &PipelineConfig) -> Vec<f64> {
    let t = cfg.clip_seconds as f64;
    if duration_s <= t {
        return vec![0.0];
    }
    let stride = t / 2.0;
    let last = duration_s - t;
    let mut starts = Vec::new();
    let mut k = 0usize;
    loop {
        let s = k as f64 * stride;
        if s > last + 1e-9 {
            break;
        }
        starts.push(s);
        k += 1;
    }
    if let Some(&tail) = starts.last() {
        if tail < last - 1e-9 {
            starts.push(last);
        }
    }
    starts
}

/// Uniformly random integral clip starts for one epoch: `clips_per_timeline`
/// per timeline, shuffled across timelines. Reproducible from the rng.
pub fn train_clip_starts(
    timeline_ids: &[String],
    durations: &BTreeMap<String, f64>,
    cfg: &PipelineConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<(String, f64)> {
    let t = cfg.clip_seconds as f64;
    let mut picks = Vec::new();
    for id in timeline_ids {
        let duration = durations[id];
        let max_start = (duration - t).max(0.0).floor() as u64;
        for _ in 0..cfg.clips_per_timeline {
            let start = if max_start == 0 { 0 } else { rng.gen_range(0..=max_start) };
            picks.push((id.clone(), start as f64));
        }
    }
    // Fisher-Yates with the caller's rng keeps epochs reproducible.
    for i in (1..picks.len()).rev() {
        let j = rng.gen_range(0..=i);
        picks.swap(i, j);
    }
    picks
}
