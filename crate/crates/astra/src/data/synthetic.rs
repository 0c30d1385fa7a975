//! Synthetic long-tail multimodal dataset generator.
//!
//! Every action plants a class-specific feature bump. Visible actions
//! imprint on the visual streams and the audio stream; non-visible actions
//! imprint on the audio stream only, so removing audio has a knowable causal
//! effect on them. Annotated times are the true bump centers plus per-class
//! Gaussian jitter; the injected offsets are recorded in a sidecar so
//! uncertainty estimates can be checked against known noise levels.
//!
//! Class bump patterns are derived from fixed per-(stream, class) seeds, not
//! from the dataset seed, so datasets generated with different seeds share
//! the same class signatures (a model trained on one transfers to another).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{write_class_names, StreamConfig, StreamKind};
use crate::data::manifest::{payload_file_name, write_payload, DatasetManifest, EmbeddingManifest, StreamEntry};
use crate::error::{AstraError, Result};
use crate::types::{GroundTruthAction, MatchAnnotations};

/// Table of occurrence counts the default class weights are proportional to.
const DEFAULT_CLASS_COUNTS: [f64; 17] = [
    31810.0, 18918.0, 11674.0, 10521.0, 7896.0, 5820.0, 5256.0, 4836.0, 2839.0, 2566.0, 2200.0,
    2098.0, 2047.0, 1703.0, 173.0, 55.0, 46.0,
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_timelines: usize,
    pub duration_s: f64,
    /// Relative class frequencies, length C.
    pub class_frequency: Vec<f64>,
    /// Probability that an action of each class is non-visible.
    pub non_visible_prob: Vec<f64>,
    /// Std of the Gaussian annotation jitter per class, seconds.
    pub label_jitter_std: Vec<f64>,
    pub streams: Vec<StreamConfig>,
    pub audio_token_seconds: f64,
    /// Std of the background feature noise.
    pub noise_std: f64,
    /// Peak bump magnitude along the class pattern direction.
    pub bump_amplitude: f64,
    /// Bump support half-width in seconds.
    pub bump_halfwidth_s: f64,
    /// Minimum gap between consecutive actions, seconds.
    pub min_gap_s: f64,
    /// Mean of the exponential extra gap, seconds.
    pub mean_extra_gap_s: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let mut streams = vec![StreamConfig { kind: StreamKind::Visual, feature_dim: 16 }; 2];
        streams.push(StreamConfig { kind: StreamKind::Audio, feature_dim: 16 });
        SyntheticSpec {
            num_timelines: 20,
            duration_s: 300.0,
            class_frequency: DEFAULT_CLASS_COUNTS.to_vec(),
            non_visible_prob: vec![0.2; 17],
            label_jitter_std: vec![0.3; 17],
            streams,
            audio_token_seconds: 0.96,
            noise_std: 0.08,
            bump_amplitude: 1.0,
            bump_halfwidth_s: 2.0,
            min_gap_s: 5.0,
            mean_extra_gap_s: 4.0,
            seed: 17,
        }
    }
}

impl SyntheticSpec {
    pub fn num_classes(&self) -> usize {
        self.class_frequency.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_timelines == 0 || self.duration_s <= 0.0 {
            return Err(AstraError::config("need at least one timeline with positive duration"));
        }
        if self.class_frequency.is_empty() || self.class_frequency.iter().all(|&w| w <= 0.0) {
            return Err(AstraError::config("class_frequency needs at least one positive weight"));
        }
        if self.class_frequency.iter().any(|&w| w < 0.0) {
            return Err(AstraError::config("class frequencies must be non-negative"));
        }
        if self.non_visible_prob.len() != self.num_classes()
            || self.label_jitter_std.len() != self.num_classes()
        {
            return Err(AstraError::config(
                "non_visible_prob and label_jitter_std must have one entry per class",
            ));
        }
        if self.non_visible_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(AstraError::config("non_visible_prob entries must lie in [0, 1]"));
        }
        if self.label_jitter_std.iter().any(|&s| s < 0.0) {
            return Err(AstraError::config("label_jitter_std entries must be non-negative"));
        }
        if self.noise_std < 0.0 || self.bump_amplitude < 0.0 || self.bump_halfwidth_s <= 0.0 {
            return Err(AstraError::config("noise/bump parameters must be non-negative"));
        }
        if self.min_gap_s <= 0.0 {
            return Err(AstraError::config("min_gap_s must be positive"));
        }
        Ok(())
    }
}

/// One planted action before annotation jitter.
#[derive(Debug, Clone, Copy)]
pub struct PlantedAction {
    pub class_id: usize,
    pub true_time_s: f64,
    pub annotated_time_s: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JitterRecord {
    pub action_index: usize,
    pub true_time_s: f64,
    pub annotated_time_s: f64,
}

pub type JitterSidecar = BTreeMap<String, Vec<JitterRecord>>;

fn mix_seed(parts: &[u64]) -> u64 {
    // FNV-1a over the little-endian part bytes; stable across platforms.
    let mut h: u64 = 0xcbf29ce484222325;
    for part in parts {
        for b in part.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Class signature direction for one stream. Fixed across datasets.
pub fn class_pattern(stream_id: usize, class_id: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[0x7a77, stream_id as u64, class_id as u64]));
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Samples the planted actions of one timeline.
pub fn sample_actions(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<PlantedAction> {
    let total: f64 = spec.class_frequency.iter().sum();
    let extra_gap = Exp::new(1.0 / spec.mean_extra_gap_s.max(1e-9)).expect("positive rate");
    let margin = spec.bump_halfwidth_s + 1.0;
    let mut actions = Vec::new();
    let mut t = margin + extra_gap.sample(rng);
    while t < spec.duration_s - margin {
        // Categorical draw proportional to the class weights.
        let mut pick = rng.gen_range(0.0..total);
        let mut class_id = 0;
        for (c, &w) in spec.class_frequency.iter().enumerate() {
            if pick < w {
                class_id = c;
                break;
            }
            pick -= w;
        }
        let visible = rng.gen_range(0.0..1.0) >= spec.non_visible_prob[class_id];
        let jitter_std = spec.label_jitter_std[class_id];
        let jitter = if jitter_std > 0.0 {
            Normal::new(0.0, jitter_std).unwrap().sample(rng)
        } else {
            0.0
        };
        let annotated = (t + jitter).clamp(0.0, spec.duration_s);
        actions.push(PlantedAction {
            class_id,
            true_time_s: t,
            annotated_time_s: annotated,
            visible,
        });
        t += spec.min_gap_s + extra_gap.sample(rng);
    }
    actions
}

/// Renders the feature rows of one stream with bumps at the true action
/// times. Visible actions imprint on every stream; non-visible actions only
/// on the audio stream.
fn render_stream(
    spec: &SyntheticSpec,
    stream_id: usize,
    actions: &[PlantedAction],
    rng: &mut ChaCha8Rng,
) -> Array2<f32> {
    let sc = &spec.streams[stream_id];
    let spt = match sc.kind {
        StreamKind::Visual => 1.0,
        StreamKind::Audio => spec.audio_token_seconds,
    };
    let row_count = (spec.duration_s / spt).ceil() as usize;
    let mut rows = Array2::<f64>::zeros((row_count, sc.feature_dim));
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).unwrap();
        rows.mapv_inplace(|_| noise.sample(rng));
    }
    let patterns: Vec<Vec<f64>> = (0..spec.num_classes())
        .map(|c| class_pattern(stream_id, c, sc.feature_dim))
        .collect();
    for action in actions {
        if !action.visible && sc.kind != StreamKind::Audio {
            continue;
        }
        let pattern = &patterns[action.class_id];
        let lo = ((action.true_time_s - spec.bump_halfwidth_s) / spt).floor().max(0.0) as usize;
        let hi = (((action.true_time_s + spec.bump_halfwidth_s) / spt).ceil() as usize).min(row_count);
        for row in lo..hi {
            let center = (row as f64 + 0.5) * spt;
            let offset = (center - action.true_time_s).abs();
            let envelope = (1.0 - offset / spec.bump_halfwidth_s).max(0.0);
            if envelope <= 0.0 {
                continue;
            }
            let scale = spec.bump_amplitude * envelope;
            for (j, p) in pattern.iter().enumerate() {
                rows[[row, j]] += scale * p;
            }
        }
    }
    rows.mapv(|v| v as f32)
}

/// Everything `generate_synthetic` writes, kept in memory for tests.
pub struct GeneratedDataset {
    pub manifest: DatasetManifest,
    pub annotations: Vec<MatchAnnotations>,
    pub jitter: JitterSidecar,
}

pub fn timeline_id(index: usize) -> String {
    format!("timeline_{index:04}")
}

/// Generates the dataset in memory and writes it to `out_dir`:
/// `manifest.json`, stream payloads, `annotations/<id>.json`, `jitter.json`,
/// and `class_names.json`. Fully reproducible from `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<GeneratedDataset> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| AstraError::io(out_dir, e))?;
    let ann_dir = out_dir.join("annotations");
    std::fs::create_dir_all(&ann_dir).map_err(|e| AstraError::io(&ann_dir, e))?;

    let mut manifest = DatasetManifest { timelines: Vec::new() };
    let mut annotations = Vec::new();
    let mut jitter: JitterSidecar = BTreeMap::new();

    for index in 0..spec.num_timelines {
        let id = timeline_id(index);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 0x11ee, index as u64]));
        let actions = sample_actions(spec, &mut rng);

        let mut entries = Vec::new();
        for stream_id in 0..spec.streams.len() {
            let sc = &spec.streams[stream_id];
            let rows = render_stream(spec, stream_id, &actions, &mut rng);
            let payload = payload_file_name(&id, stream_id);
            write_payload(&out_dir.join(&payload), &rows)?;
            entries.push(StreamEntry {
                stream_id,
                kind: sc.kind,
                feature_dim: sc.feature_dim,
                seconds_per_token: match sc.kind {
                    StreamKind::Visual => 1.0,
                    StreamKind::Audio => spec.audio_token_seconds,
                },
                payload_path: payload.to_string_lossy().into_owned(),
                row_count: rows.nrows(),
            });
        }
        manifest.timelines.push(EmbeddingManifest {
            timeline_id: id.clone(),
            duration_s: spec.duration_s,
            streams: entries,
        });

        let ann = MatchAnnotations {
            timeline_id: id.clone(),
            duration_s: spec.duration_s,
            actions: actions
                .iter()
                .map(|a| GroundTruthAction {
                    class_id: a.class_id,
                    time_s: a.annotated_time_s,
                    visible: a.visible,
                })
                .collect(),
        }
        .normalized(spec.num_classes())?;
        let ann_path = ann_dir.join(format!("{id}.json"));
        let text = serde_json::to_string_pretty(&ann).expect("annotations serialize");
        std::fs::write(&ann_path, text).map_err(|e| AstraError::io(&ann_path, e))?;
        annotations.push(ann);

        jitter.insert(
            id,
            actions
                .iter()
                .enumerate()
                .map(|(action_index, a)| JitterRecord {
                    action_index,
                    true_time_s: a.true_time_s,
                    annotated_time_s: a.annotated_time_s,
                })
                .collect(),
        );
    }

    manifest.save(&out_dir.join("manifest.json"))?;
    let jitter_path = out_dir.join("jitter.json");
    let text = serde_json::to_string_pretty(&jitter).expect("jitter serializes");
    std::fs::write(&jitter_path, text).map_err(|e| AstraError::io(&jitter_path, e))?;
    write_class_names(&out_dir.join("class_names.json"), spec.num_classes())?;

    Ok(GeneratedDataset { manifest, annotations, jitter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::load_embeddings;
    use tempfile::TempDir;

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            num_timelines: 2,
            duration_s: 120.0,
            class_frequency: vec![3.0, 2.0, 1.0],
            non_visible_prob: vec![0.0, 0.5, 1.0],
            label_jitter_std: vec![0.0, 0.2, 0.4],
            min_gap_s: 4.0,
            mean_extra_gap_s: 2.0,
            seed: 99,
            ..Default::default()
        }
    }

    fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                    out.insert(rel, std::fs::read(&path).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn identical_seeds_give_byte_identical_outputs() {
        let spec = tiny_spec();
        let d1 = TempDir::new().unwrap();
        let d2 = TempDir::new().unwrap();
        generate_synthetic(&spec, d1.path()).unwrap();
        generate_synthetic(&spec, d2.path()).unwrap();
        assert_eq!(dir_bytes(d1.path()), dir_bytes(d2.path()));

        let mut other = spec;
        other.seed = 100;
        let d3 = TempDir::new().unwrap();
        generate_synthetic(&other, d3.path()).unwrap();
        assert_ne!(dir_bytes(d1.path()), dir_bytes(d3.path()));
    }

    #[test]
    fn generated_payloads_reload_bit_exactly() {
        let spec = tiny_spec();
        let dir = TempDir::new().unwrap();
        generate_synthetic(&spec, dir.path()).unwrap();
        let sources = load_embeddings(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(sources.len(), 2);
        // Loading twice yields identical sources.
        let again = load_embeddings(&dir.path().join("manifest.json")).unwrap();
        for (a, b) in sources.iter().zip(&again) {
            assert_eq!(a.timeline_id, b.timeline_id);
        }
    }

    #[test]
    fn noiseless_zero_jitter_annotations_sit_on_bump_centers() {
        let mut spec = tiny_spec();
        spec.noise_std = 0.0;
        spec.label_jitter_std = vec![0.0; 3];
        let dir = TempDir::new().unwrap();
        let ds = generate_synthetic(&spec, dir.path()).unwrap();
        let sidecar = &ds.jitter[&timeline_id(0)];
        assert!(!sidecar.is_empty());
        for rec in sidecar {
            assert_eq!(rec.true_time_s, rec.annotated_time_s);
        }
    }

    #[test]
    fn jitter_empirical_std_matches_spec() {
        let spec = SyntheticSpec {
            num_timelines: 30,
            duration_s: 200.0,
            class_frequency: vec![1.0],
            non_visible_prob: vec![0.0],
            label_jitter_std: vec![1.5],
            min_gap_s: 4.0,
            mean_extra_gap_s: 1.0,
            noise_std: 0.0,
            seed: 5,
            ..Default::default()
        };
        let mut offsets = Vec::new();
        for index in 0..spec.num_timelines {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 0x11ee, index as u64]));
            for a in sample_actions(&spec, &mut rng) {
                // Clamping at the timeline edges would bias the sample.
                if a.true_time_s > 10.0 && a.true_time_s < 190.0 {
                    offsets.push(a.annotated_time_s - a.true_time_s);
                }
            }
        }
        assert!(offsets.len() >= 500, "only {} samples", offsets.len());
        let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
        let var = offsets.iter().map(|o| (o - mean) * (o - mean)).sum::<f64>()
            / (offsets.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std - 1.5).abs() < 0.15, "empirical std {std}");
    }

    #[test]
    fn class_histogram_matches_weights_chi_square() {
        let spec = SyntheticSpec {
            num_timelines: 60,
            duration_s: 400.0,
            class_frequency: vec![8.0, 4.0, 2.0, 1.0, 0.5],
            non_visible_prob: vec![0.1; 5],
            label_jitter_std: vec![0.0; 5],
            min_gap_s: 1.0,
            mean_extra_gap_s: 0.5,
            seed: 7,
            ..Default::default()
        };
        let mut counts = vec![0usize; 5];
        let mut total = 0usize;
        for index in 0..spec.num_timelines {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 0x11ee, index as u64]));
            for a in sample_actions(&spec, &mut rng) {
                counts[a.class_id] += 1;
                total += 1;
            }
        }
        assert!(total >= 10_000, "only {total} actions sampled");
        let weight_sum: f64 = spec.class_frequency.iter().sum();
        let chi2: f64 = counts
            .iter()
            .zip(&spec.class_frequency)
            .map(|(&obs, &w)| {
                let expected = total as f64 * w / weight_sum;
                (obs as f64 - expected).powi(2) / expected
            })
            .sum();
        // Critical value of chi-square with 4 degrees of freedom at the 1% level.
        assert!(chi2 < 13.277, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn non_visible_actions_leave_visual_streams_untouched() {
        let mut spec = tiny_spec();
        spec.noise_std = 0.0;
        spec.non_visible_prob = vec![1.0; 3]; // every action non-visible
        let dir = TempDir::new().unwrap();
        let ds = generate_synthetic(&spec, dir.path()).unwrap();
        assert!(ds.annotations.iter().any(|a| !a.actions.is_empty()));
        let sources = load_embeddings(&dir.path().join("manifest.json")).unwrap();
        for source in &sources {
            for entry in source.stream_entries() {
                let payload = crate::data::manifest::read_payload(
                    &dir.path().join(&entry.payload_path),
                    entry.row_count,
                    entry.feature_dim,
                )
                .unwrap();
                match entry.kind {
                    StreamKind::Visual => {
                        assert!(payload.iter().all(|&v| v == 0.0), "visual imprint found");
                    }
                    StreamKind::Audio => {
                        assert!(payload.iter().any(|&v| v != 0.0), "audio imprint missing");
                    }
                }
            }
        }
    }

    #[test]
    fn patterns_are_stable_across_datasets_and_distinct_across_classes() {
        let a = class_pattern(0, 1, 16);
        let b = class_pattern(0, 1, 16);
        assert_eq!(a, b);
        let c = class_pattern(0, 2, 16);
        assert_ne!(a, c);
        let d = class_pattern(1, 1, 16);
        assert_ne!(a, d);
    }
}
