//! Anchor placement and target encoding: converts ground-truth actions into
//! per-(anchor, class) supervision grids.

use ndarray::Array2;

use crate::config::PipelineConfig;
use crate::error::{AstraError, Result};
use crate::types::{GroundTruthAction, MatchAnnotations, PredictionGrid, TargetGrid};

/// Clip-local time of anchor `t`: anchors sit at the centers of `L_out`
/// equal cells over the `T` seconds.
pub fn anchor_time(t: usize, cfg: &PipelineConfig) -> Result<f64> {
    let l_out = cfg.output_len();
    if t >= l_out {
        return Err(AstraError::contract(format!(
            "anchor index {t} out of range for L_out={l_out}"
        )));
    }
    Ok((t as f64 + 0.5) * cfg.clip_seconds as f64 / l_out as f64)
}

/// Nearest action of one class to `time`, ties broken toward the earlier
/// action. `times` must be sorted ascending.
fn nearest_action(times: &[f64], time: f64) -> Option<f64> {
    if times.is_empty() {
        return None;
    }
    let idx = times.partition_point(|&t| t < time);
    let after = times.get(idx).copied();
    let before = if idx > 0 { Some(times[idx - 1]) } else { None };
    match (before, after) {
        (Some(b), Some(a)) => {
            // Equidistant pair resolves to the earlier action.
            if (time - b) <= (a - time) {
                Some(b)
            } else {
                Some(a)
            }
        }
        (Some(b), None) => Some(b),
        (None, Some(a)) => Some(a),
        (None, None) => None,
    }
}

/// Builds the supervision grid for the clip `[clip_start_s, clip_start_s + T)`.
///
/// For every anchor `t` and class `c`: the score is 1 iff some action of
/// class `c` lies within `r_c` seconds of the anchor; the displacement is
/// `action_time - anchor_time` toward the nearest action within `r_d`. The
/// background column is the complement of the action columns and carries no
/// displacement supervision.
pub fn build_targets(
    annotations: &MatchAnnotations,
    clip_start_s: f64,
    cfg: &PipelineConfig,
) -> TargetGrid {
    build_targets_from_actions(&annotations.actions, clip_start_s, cfg)
}

/// Same as [`build_targets`] but over a plain action list (used by the
/// time-permuting augmentations, which rebuild targets from permuted actions).
pub fn build_targets_from_actions(
    actions: &[GroundTruthAction],
    clip_start_s: f64,
    cfg: &PipelineConfig,
) -> TargetGrid {
    let l_out = cfg.output_len();
    let c = cfg.num_classes;
    let mut grid = TargetGrid::empty(l_out, c);

    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); c];
    for a in actions {
        per_class[a.class_id].push(a.time_s);
    }
    for times in &mut per_class {
        times.sort_by(|x, y| x.partial_cmp(y).unwrap());
    }

    for t in 0..l_out {
        let tau_abs = clip_start_s + anchor_time(t, cfg).expect("t < L_out");
        let mut any_action = false;
        for (class_id, times) in per_class.iter().enumerate() {
            let Some(nearest) = nearest_action(times, tau_abs) else {
                continue;
            };
            let delta = nearest - tau_abs;
            if delta.abs() <= cfg.radius_classification {
                grid.scores[[t, class_id]] = 1.0;
                any_action = true;
            }
            if delta.abs() <= cfg.radius_displacement {
                grid.displacements[[t, class_id]] = delta;
                grid.displacement_mask[[t, class_id]] = true;
                grid.displacement_weights[[t, class_id]] = 1.0;
            }
        }
        grid.scores[[t, c]] = if any_action { 0.0 } else { 1.0 };
    }
    grid
}

/// One detected invariant violation, locating the offending entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GridViolation {
    pub what: String,
    pub row: usize,
    pub col: usize,
}

impl std::fmt::Display for GridViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}] {}", self.row, self.col, self.what)
    }
}

pub enum GridRef<'a> {
    Target(&'a TargetGrid),
    Prediction(&'a PredictionGrid),
}

/// Checks all grid invariants and returns every violation found.
pub fn validate_grid(grid: GridRef<'_>, cfg: &PipelineConfig) -> Vec<GridViolation> {
    let mut out = Vec::new();
    let l_out = cfg.output_len();
    let cols = cfg.num_classes + 1;
    let mut check_shape = |m: &Array2<f64>, name: &str| {
        if m.dim() != (l_out, cols) {
            out.push(GridViolation {
                what: format!("{name} shape {:?} != ({l_out}, {cols})", m.dim()),
                row: 0,
                col: 0,
            });
            false
        } else {
            true
        }
    };
    match grid {
        GridRef::Target(t) => {
            let ok = check_shape(&t.scores, "scores")
                && check_shape(&t.displacements, "displacements")
                && check_shape(&t.displacement_weights, "displacement_weights");
            if !ok || t.displacement_mask.dim() != (l_out, cols) {
                return out;
            }
            for ((row, col), &s) in t.scores.indexed_iter() {
                if !(0.0..=1.0).contains(&s) {
                    out.push(GridViolation { what: format!("score {s} outside [0, 1]"), row, col });
                }
            }
            for ((row, col), &m) in t.displacement_mask.indexed_iter() {
                if m && col == cfg.num_classes {
                    out.push(GridViolation {
                        what: "background column carries displacement supervision".into(),
                        row,
                        col,
                    });
                }
                if m && t.displacements[[row, col]].abs() > cfg.radius_displacement {
                    out.push(GridViolation {
                        what: format!(
                            "displacement {} exceeds radius {}",
                            t.displacements[[row, col]],
                            cfg.radius_displacement
                        ),
                        row,
                        col,
                    });
                }
            }
        }
        GridRef::Prediction(p) => {
            let ok = check_shape(&p.scores, "scores")
                && check_shape(&p.means, "means")
                && check_shape(&p.variances, "variances");
            if !ok {
                return out;
            }
            for ((row, col), &s) in p.scores.indexed_iter() {
                if !(s > 0.0 && s < 1.0) {
                    out.push(GridViolation { what: format!("score {s} outside (0, 1)"), row, col });
                }
            }
            for ((row, col), &v) in p.variances.indexed_iter() {
                if !(v > 0.0) {
                    out.push(GridViolation { what: "non-positive variance".into(), row, col });
                }
            }
            for ((row, col), &v) in p.means.indexed_iter() {
                if !v.is_finite() {
                    out.push(GridViolation { what: "non-finite mean".into(), row, col });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::GroundTruthAction;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn cfg_t50_l100() -> PipelineConfig {
        PipelineConfig { clip_seconds: 50, anchors_per_second: 2, num_classes: 17, ..Default::default() }
    }

    #[test]
    fn anchor_time_examples() {
        let cfg = cfg_t50_l100();
        assert_eq!(anchor_time(0, &cfg).unwrap(), 0.25);
        assert_eq!(anchor_time(99, &cfg).unwrap(), 49.75);
        let cfg50 = PipelineConfig { anchors_per_second: 1, ..cfg };
        assert_eq!(anchor_time(0, &cfg50).unwrap(), 0.5);
    }

    #[test]
    fn anchor_time_is_strictly_increasing_and_interior() {
        let cfg = cfg_t50_l100();
        let mut prev = 0.0;
        for t in 0..cfg.output_len() {
            let tau = anchor_time(t, &cfg).unwrap();
            assert!(tau > prev && tau < cfg.clip_seconds as f64);
            prev = tau;
        }
        assert!(anchor_time(100, &cfg).is_err());
    }

    fn single_action(class_id: usize, time_s: f64) -> MatchAnnotations {
        MatchAnnotations {
            timeline_id: "t".into(),
            duration_s: 1000.0,
            actions: vec![GroundTruthAction { class_id, time_s, visible: true }],
        }
    }

    #[test]
    fn radius_window_sets_scores() {
        let cfg = cfg_t50_l100();
        let grid = build_targets(&single_action(3, 10.0), 0.0, &cfg);
        for t in 0..cfg.output_len() {
            let tau = anchor_time(t, &cfg).unwrap();
            let expect = (tau - 10.0).abs() <= 2.0;
            assert_eq!(grid.scores[[t, 3]] == 1.0, expect, "tau={tau}");
            assert_eq!(grid.scores[[t, 17]] == 0.0, expect);
        }
    }

    #[test]
    fn empty_window_is_background_only() {
        let cfg = cfg_t50_l100();
        let ann = MatchAnnotations { timeline_id: "t".into(), duration_s: 100.0, actions: vec![] };
        let grid = build_targets(&ann, 0.0, &cfg);
        for t in 0..cfg.output_len() {
            assert_eq!(grid.scores[[t, 17]], 1.0);
            for c in 0..17 {
                assert_eq!(grid.scores[[t, c]], 0.0);
            }
        }
        assert_eq!(grid.supervised_count(), 0);
    }

    #[test]
    fn displacement_sign_points_at_action() {
        let cfg = cfg_t50_l100();
        let grid = build_targets(&single_action(0, 10.0), 0.0, &cfg);
        // anchor 18 sits at 9.25, anchor 19 at 9.75.
        let t = 19;
        let tau = anchor_time(t, &cfg).unwrap();
        assert_eq!(tau, 9.75);
        assert!(grid.displacement_mask[[t, 0]]);
        assert!((grid.displacements[[t, 0]] - 0.25).abs() < 1e-12);
        // Refinement lands exactly on the action.
        assert_eq!(tau + grid.displacements[[t, 0]], 10.0);
    }

    #[test]
    fn equidistant_tie_prefers_earlier_action() {
        let cfg = cfg_t50_l100();
        let ann = MatchAnnotations {
            timeline_id: "t".into(),
            duration_s: 100.0,
            actions: vec![
                GroundTruthAction { class_id: 0, time_s: 9.25, visible: true },
                GroundTruthAction { class_id: 0, time_s: 10.25, visible: true },
            ],
        };
        let grid = build_targets(&ann, 0.0, &cfg);
        // anchor 19 at 9.75 is exactly 0.5 from both actions.
        assert!((grid.displacements[[19, 0]] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn dense_anchors_cover_every_action() {
        let cfg = cfg_t50_l100();
        for k in 0..200 {
            let time = 0.25 + 49.0 * (k as f64 / 199.0);
            let grid = build_targets(&single_action(1, time), 0.0, &cfg);
            let hits: usize = (0..cfg.output_len()).filter(|&t| grid.scores[[t, 1]] == 1.0).count();
            assert!(hits >= 1, "no anchor hit for action at {time}");
        }
    }

    #[test]
    fn validate_grid_flags_boundary_cases() {
        let cfg = cfg_t50_l100();
        let grid = build_targets(&single_action(3, 10.0), 0.0, &cfg);
        assert!(validate_grid(GridRef::Target(&grid), &cfg).is_empty());

        let mut bad = grid.clone();
        bad.displacements[[20, 3]] = 5.0;
        bad.displacement_mask[[20, 3]] = true;
        let violations = validate_grid(GridRef::Target(&bad), &cfg);
        assert!(violations.iter().any(|v| v.what.contains("exceeds radius")));

        let l_out = cfg.output_len();
        let pred = PredictionGrid {
            scores: Array2::from_elem((l_out, 18), 0.5),
            means: Array2::zeros((l_out, 18)),
            variances: {
                let mut v = Array2::from_elem((l_out, 18), 1.0);
                v[[0, 0]] = 0.0;
                v
            },
        };
        let violations = validate_grid(GridRef::Prediction(&pred), &cfg);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].what.contains("non-positive variance"));
    }

    proptest! {
        // Shifting all actions and the clip start by the same offset leaves
        // the grid unchanged (scores and masks exactly, displacements to
        // floating-point noise).
        #[test]
        fn target_construction_is_translation_equivariant(
            times in proptest::collection::vec(0.0f64..500.0, 0..8),
            classes in proptest::collection::vec(0usize..17, 8),
            start in 0.0f64..400.0,
            shift in 0.0f64..1000.0,
        ) {
            let cfg = cfg_t50_l100();
            let actions: Vec<GroundTruthAction> = times
                .iter()
                .zip(&classes)
                .map(|(&time_s, &class_id)| GroundTruthAction { class_id, time_s, visible: true })
                .collect();
            let shifted: Vec<GroundTruthAction> = actions
                .iter()
                .map(|a| GroundTruthAction { time_s: a.time_s + shift, ..*a })
                .collect();
            let base = build_targets_from_actions(&actions, start, &cfg);
            let moved = build_targets_from_actions(&shifted, start + shift, &cfg);
            prop_assert_eq!(&base.scores, &moved.scores);
            prop_assert_eq!(&base.displacement_mask, &moved.displacement_mask);
            for (a, b) in base.displacements.iter().zip(moved.displacements.iter()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        // Wherever the mask is set, |d| <= r_d and the refined anchor lands
        // exactly on a ground-truth time.
        #[test]
        fn masked_displacements_land_on_actions(
            times in proptest::collection::vec(0.0f64..100.0, 1..6),
            start in 0.0f64..50.0,
        ) {
            let cfg = cfg_t50_l100();
            let actions: Vec<GroundTruthAction> = times
                .iter()
                .map(|&time_s| GroundTruthAction { class_id: 0, time_s, visible: true })
                .collect();
            let grid = build_targets_from_actions(&actions, start, &cfg);
            for t in 0..cfg.output_len() {
                if grid.displacement_mask[[t, 0]] {
                    let d = grid.displacements[[t, 0]];
                    prop_assert!(d.abs() <= cfg.radius_displacement);
                    let refined = start + anchor_time(t, &cfg).unwrap() + d;
                    prop_assert!(times.iter().any(|&x| (x - refined).abs() < 1e-9));
                }
            }
        }

        // Background column is the complement of the action columns.
        #[test]
        fn background_complements_actions(
            times in proptest::collection::vec(0.0f64..100.0, 0..6),
            classes in proptest::collection::vec(0usize..17, 6),
        ) {
            let cfg = cfg_t50_l100();
            let actions: Vec<GroundTruthAction> = times
                .iter()
                .zip(&classes)
                .map(|(&time_s, &class_id)| GroundTruthAction { class_id, time_s, visible: true })
                .collect();
            let grid = build_targets_from_actions(&actions, 0.0, &cfg);
            for t in 0..cfg.output_len() {
                let max_action = (0..17).map(|c| grid.scores[[t, c]]).fold(0.0, f64::max);
                prop_assert_eq!(grid.scores[[t, 17]], 1.0 - max_action);
            }
        }
    }
}
