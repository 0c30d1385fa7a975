//! Embedding manifests and raw payload IO.
//!
//! Payloads are raw little-endian IEEE-754 32-bit floats, row-major
//! (`row_count x feature_dim`), one file per stream per timeline. The JSON
//! manifest declares the layout; loading verifies byte sizes against it.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, StreamKind};
use crate::error::{AstraError, Result};
use crate::types::{EmbeddingStream, StreamSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamEntry {
    pub stream_id: usize,
    pub kind: StreamKind,
    pub feature_dim: usize,
    pub seconds_per_token: f64,
    pub payload_path: String,
    pub row_count: usize,
}

/// Declares one timeline's streams and where their payloads live.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub timeline_id: String,
    pub duration_s: f64,
    pub streams: Vec<StreamEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub timelines: Vec<EmbeddingManifest>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AstraError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| AstraError::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| AstraError::io(path, e))
    }
}

pub fn write_payload(path: &Path, rows: &Array2<f32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(rows.len() * 4);
    for v in rows.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| AstraError::io(path, e))
}

pub fn read_payload(path: &Path, row_count: usize, feature_dim: usize) -> Result<Array2<f32>> {
    let bytes = std::fs::read(path).map_err(|e| AstraError::io(path, e))?;
    let expected = row_count * feature_dim * 4;
    if bytes.len() != expected {
        return Err(AstraError::CorruptManifest(format!(
            "{}: payload is {} bytes, manifest declares {}",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    let mut data = Vec::with_capacity(row_count * feature_dim);
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(Array2::from_shape_vec((row_count, feature_dim), data).unwrap())
}

/// One timeline's streams held in memory, serving clip windows on demand.
#[derive(Debug, Clone)]
pub struct TimelineSource {
    pub timeline_id: String,
    pub duration_s: f64,
    streams: Vec<(StreamEntry, Array2<f32>)>,
}

impl TimelineSource {
    pub fn load(manifest: &EmbeddingManifest, root: &Path) -> Result<Self> {
        let mut streams = Vec::with_capacity(manifest.streams.len());
        for entry in &manifest.streams {
            let covered = entry.row_count as f64 * entry.seconds_per_token;
            if covered + entry.seconds_per_token < manifest.duration_s {
                return Err(AstraError::CorruptManifest(format!(
                    "{}: stream {} rows cover {covered:.2}s of a {:.2}s timeline",
                    manifest.timeline_id, entry.stream_id, manifest.duration_s
                )));
            }
            let payload = read_payload(&root.join(&entry.payload_path), entry.row_count, entry.feature_dim)?;
            streams.push((entry.clone(), payload));
        }
        Ok(TimelineSource {
            timeline_id: manifest.timeline_id.clone(),
            duration_s: manifest.duration_s,
            streams,
        })
    }

    pub fn stream_entries(&self) -> impl Iterator<Item = &StreamEntry> {
        self.streams.iter().map(|(e, _)| e)
    }

    /// Extracts the window `[start_s, start_s + T)` for every stream the
    /// config declares. Rows past the timeline end are zero-padded; repeated
    /// requests return identical arrays.
    pub fn window(&self, start_s: f64, cfg: &PipelineConfig) -> Result<Vec<EmbeddingStream>> {
        if start_s < 0.0 || start_s > self.duration_s {
            return Err(AstraError::WindowRange(format!(
                "window start {start_s} outside [0, {}] for {}",
                self.duration_s, self.timeline_id
            )));
        }
        if self.streams.len() != cfg.streams.len() {
            return Err(AstraError::config(format!(
                "{}: manifest has {} streams, config declares {}",
                self.timeline_id,
                self.streams.len(),
                cfg.streams.len()
            )));
        }
        let mut out = Vec::with_capacity(self.streams.len());
        for (stream_id, (entry, payload)) in self.streams.iter().enumerate() {
            let sc = &cfg.streams[stream_id];
            if entry.kind != sc.kind || entry.feature_dim != sc.feature_dim {
                return Err(AstraError::config(format!(
                    "{}: stream {stream_id} is {:?}/{} but config declares {:?}/{}",
                    self.timeline_id, entry.kind, entry.feature_dim, sc.kind, sc.feature_dim
                )));
            }
            let spec = StreamSpec::from_config(cfg, stream_id);
            let spt = spec.seconds_per_token;
            let first = (start_s / spt + 1e-9).floor() as usize;
            let mut features = Array2::zeros((spec.tokens_per_clip, spec.feature_dim));
            let mut clip_times = Vec::with_capacity(spec.tokens_per_clip);
            for i in 0..spec.tokens_per_clip {
                let row = first + i;
                clip_times.push((row as f64 + 0.5) * spt - start_s);
                if row < entry.row_count {
                    for (j, v) in payload.row(row).iter().enumerate() {
                        features[[i, j]] = *v as f64;
                    }
                }
            }
            out.push(EmbeddingStream { spec, features, clip_times });
        }
        Ok(out)
    }
}

/// Loads every timeline source declared in a dataset manifest.
pub fn load_embeddings(manifest_path: &Path) -> Result<Vec<TimelineSource>> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    manifest
        .timelines
        .iter()
        .map(|m| TimelineSource::load(m, root))
        .collect()
}

pub fn payload_file_name(timeline_id: &str, stream_id: usize) -> PathBuf {
    PathBuf::from(format!("{timeline_id}_stream{stream_id}.f32"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::StreamConfig;
    use tempfile::TempDir;

    fn write_timeline(dir: &Path, duration_s: f64, cfg: &PipelineConfig) -> EmbeddingManifest {
        let mut streams = Vec::new();
        for (stream_id, sc) in cfg.streams.iter().enumerate() {
            let spt = cfg.seconds_per_token(sc.kind);
            let row_count = (duration_s / spt).ceil() as usize;
            let rows = Array2::from_shape_fn((row_count, sc.feature_dim), |(i, j)| {
                (i * 100 + j) as f32 * 0.5
            });
            let payload = payload_file_name("t0", stream_id);
            write_payload(&dir.join(&payload), &rows).unwrap();
            streams.push(StreamEntry {
                stream_id,
                kind: sc.kind,
                feature_dim: sc.feature_dim,
                seconds_per_token: spt,
                payload_path: payload.to_string_lossy().into_owned(),
                row_count,
            });
        }
        EmbeddingManifest { timeline_id: "t0".into(), duration_s, streams }
    }

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            streams: vec![
                StreamConfig { kind: StreamKind::Visual, feature_dim: 8 },
                StreamConfig { kind: StreamKind::Audio, feature_dim: 8 },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn window_row_counts_match_stream_geometry() {
        let dir = TempDir::new().unwrap();
        let cfg = small_cfg();
        let manifest = write_timeline(dir.path(), 2700.0, &cfg);
        let source = TimelineSource::load(&manifest, dir.path()).unwrap();

        let streams = source.window(0.0, &cfg).unwrap();
        assert_eq!(streams[0].features.nrows(), 50);
        assert_eq!(streams[1].features.nrows(), 52); // floor(50 / 0.96)

        // Identical requests yield identical arrays.
        let again = source.window(0.0, &cfg).unwrap();
        assert_eq!(streams[0].features, again[0].features);
    }

    #[test]
    fn edge_window_zero_pads_past_timeline_end() {
        let dir = TempDir::new().unwrap();
        let cfg = small_cfg();
        let manifest = write_timeline(dir.path(), 2700.0, &cfg);
        let source = TimelineSource::load(&manifest, dir.path()).unwrap();

        let streams = source.window(2690.0, &cfg).unwrap();
        let visual = &streams[0];
        for i in 0..visual.features.nrows() {
            let row_time = 2690.0 + i as f64;
            let all_zero = visual.features.row(i).iter().all(|&v| v == 0.0);
            assert_eq!(all_zero, row_time >= 2700.0, "row {i}");
        }
        assert!(source.window(2701.0, &cfg).is_err());
        assert!(source.window(-1.0, &cfg).is_err());
    }

    #[test]
    fn payload_size_mismatch_is_corrupt_manifest() {
        let dir = TempDir::new().unwrap();
        let cfg = small_cfg();
        let mut manifest = write_timeline(dir.path(), 100.0, &cfg);
        manifest.streams[0].row_count += 3;
        let err = TimelineSource::load(&manifest, dir.path()).unwrap_err();
        assert!(matches!(err, AstraError::CorruptManifest(_)));
    }

    #[test]
    fn payload_round_trips_bit_exactly() {
        let dir = TempDir::new().unwrap();
        let rows = Array2::from_shape_fn((7, 5), |(i, j)| (i as f32 * 0.1 + j as f32).sin());
        let path = dir.path().join("p.f32");
        write_payload(&path, &rows).unwrap();
        let back = read_payload(&path, 7, 5).unwrap();
        assert_eq!(rows, back);
    }
}
