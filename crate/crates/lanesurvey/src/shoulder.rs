//! Aggregates per-frame lane observations by road segment and decides which
//! segments have a usable paved shoulder.
//!
//! Frames are grouped per stretch of road (way id plus the two bracketing
//! intersection nodes). Frames near an intersection are excluded to allow
//! for routine tapering of shoulders, then the group must clear detection
//! fraction, width and stability thresholds before the stretch is mapped.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::geodesy::{distance_m, GeoPoint};
use crate::layer::RouteLayer;
use crate::matching::{SegmentKey, SpatialIndex};
use crate::vision::LaneObservation;

#[derive(Debug, Error)]
pub enum ShoulderError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone)]
pub struct ShoulderConfig {
    /// Minimum fraction of eligible frames with both boundaries found.
    pub min_detect_fraction: f64,
    /// Minimum mean width at the upper reference row, pixels.
    pub min_mean_width_px: f64,
    /// Maximum standard deviation of the boundary intersection point, in
    /// each of x and y, pixels.
    pub max_stddev_px: f64,
    /// Frames closer than this to a bracketing intersection are excluded.
    pub intersection_exclusion_m: f64,
    /// Groups with fewer eligible frames report insufficient data instead
    /// of a confident negative.
    pub min_frames: usize,
}

impl Default for ShoulderConfig {
    fn default() -> Self {
        Self {
            min_detect_fraction: 0.80,
            min_mean_width_px: 75.0,
            max_stddev_px: 50.0,
            intersection_exclusion_m: 30.0,
            min_frames: 5,
        }
    }
}

/// Statistics for one stretch of road between intersections.
#[derive(Debug, Clone)]
pub struct SegmentStats {
    pub key: SegmentKey,
    pub road_name: String,
    /// Eligible frames (outside the intersection exclusion).
    pub frames_total: usize,
    /// Eligible frames where both shoulder boundaries were found.
    pub frames_detected: usize,
    pub detect_fraction: f64,
    pub mean_width_px: Option<f64>,
    pub stddev_ix_px: Option<f64>,
    pub stddev_iy_px: Option<f64>,
    pub excluded_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShoulderCall {
    Shoulder,
    NoShoulder,
    InsufficientData,
}

impl ShoulderCall {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShoulderCall::Shoulder => "shoulder",
            ShoulderCall::NoShoulder => "no_shoulder",
            ShoulderCall::InsufficientData => "insufficient_data",
        }
    }
}

/// Where each input frame ended up, for the per-frame summary file.
#[derive(Debug, Clone)]
pub struct FrameAssignment {
    pub segment: Option<(i64, Option<i64>, Option<i64>)>,
    pub excluded: bool,
    pub diagnostic: Option<String>,
}

#[derive(Debug)]
pub struct Aggregation {
    pub stats: Vec<SegmentStats>,
    pub frames: Vec<FrameAssignment>,
    pub diagnostics: Vec<String>,
}

/// Groups observations by segment key and computes the group statistics.
///
/// Width and stability statistics run over frames with both boundaries;
/// the detection fraction runs over all eligible frames. Standard
/// deviations are population form, defined from a single frame up.
pub fn aggregate(
    observations: &[(GeoPoint, LaneObservation)],
    index: &SpatialIndex,
    cfg: &ShoulderConfig,
) -> Aggregation {
    struct Group {
        key: SegmentKey,
        widths: Vec<f64>,
        intersections: Vec<(f64, f64)>,
        total: usize,
        detected: usize,
        excluded: usize,
    }
    let mut groups: BTreeMap<(i64, Option<i64>, Option<i64>), Group> = BTreeMap::new();
    let mut frames = Vec::with_capacity(observations.len());
    let mut diagnostics = Vec::new();

    for (point, obs) in observations {
        let key = match index.segment_key(*point) {
            Ok(key) => key,
            Err(e) => {
                diagnostics.push(format!("{}: {e}", obs.frame));
                frames.push(FrameAssignment {
                    segment: None,
                    excluded: false,
                    diagnostic: Some(e.to_string()),
                });
                continue;
            }
        };
        let network = index.network();
        let near_intersection = [key.a, key.b].iter().any(|end| {
            end.and_then(|(_, node)| network.point(node))
                .map(|p| distance_m(*point, p) < cfg.intersection_exclusion_m)
                .unwrap_or(false)
        });
        let group = groups.entry(key.group_key()).or_insert_with(|| Group {
            key: key.clone(),
            widths: Vec::new(),
            intersections: Vec::new(),
            total: 0,
            detected: 0,
            excluded: 0,
        });
        frames.push(FrameAssignment {
            segment: Some(key.group_key()),
            excluded: near_intersection,
            diagnostic: None,
        });
        if near_intersection {
            group.excluded += 1;
            continue;
        }
        group.total += 1;
        let both = obs.left_own.is_some() && obs.shoulder_left.is_some();
        if both {
            group.detected += 1;
            if let Some(w) = obs.width_at_upper_row_px {
                group.widths.push(w);
            }
            if let Some(ix) = obs.boundary_intersection {
                group.intersections.push(ix);
            }
        }
    }

    let mut stats = Vec::new();
    for (_, group) in groups {
        if group.total == 0 {
            diagnostics.push(format!(
                "segment way {} between {:?} and {:?}: all {} frames inside the intersection exclusion",
                group.key.way_id,
                group.key.a.map(|(_, n)| n),
                group.key.b.map(|(_, n)| n),
                group.excluded
            ));
            continue;
        }
        let road_name = index.network().chains()[group.key.chain].name.clone();
        let mean_width = mean(&group.widths);
        let (sx, sy) = (
            population_stddev(group.intersections.iter().map(|(x, _)| *x)),
            population_stddev(group.intersections.iter().map(|(_, y)| *y)),
        );
        stats.push(SegmentStats {
            key: group.key,
            road_name,
            frames_total: group.total,
            frames_detected: group.detected,
            detect_fraction: group.detected as f64 / group.total as f64,
            mean_width_px: mean_width,
            stddev_ix_px: sx,
            stddev_iy_px: sy,
            excluded_frames: group.excluded,
        });
    }
    Aggregation {
        stats,
        frames,
        diagnostics,
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn population_stddev(values: impl Iterator<Item = f64>) -> Option<f64> {
    let values: Vec<f64> = values.collect();
    if values.is_empty() {
        return None;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt())
}

/// Threshold decision, every comparison inclusive: at least the detection
/// fraction and width floors, at most the stability ceiling in both axes.
pub fn classify(stats: &SegmentStats, cfg: &ShoulderConfig) -> ShoulderCall {
    if stats.frames_total < cfg.min_frames {
        return ShoulderCall::InsufficientData;
    }
    let passes = stats.detect_fraction >= cfg.min_detect_fraction
        && stats.mean_width_px.is_some_and(|w| w >= cfg.min_mean_width_px)
        && stats.stddev_ix_px.is_some_and(|s| s <= cfg.max_stddev_px)
        && stats.stddev_iy_px.is_some_and(|s| s <= cfg.max_stddev_px);
    if passes {
        ShoulderCall::Shoulder
    } else {
        ShoulderCall::NoShoulder
    }
}

/// One polyline per positive segment, spanning the chain path between the
/// bracketing intersections inclusive. Open-ended segments cannot be drawn
/// and are reported instead.
pub fn shoulder_layer(
    stats: &[SegmentStats],
    index: &SpatialIndex,
    cfg: &ShoulderConfig,
) -> (RouteLayer, Vec<String>) {
    let mut layer = RouteLayer::new("shoulder");
    let mut diagnostics = Vec::new();
    for s in stats {
        if classify(s, cfg) != ShoulderCall::Shoulder {
            continue;
        }
        match index.segment_path(&s.key) {
            Some(points) => layer.push(s.road_name.clone(), points),
            None => diagnostics.push(format!(
                "positive segment on way {} is open-ended; not drawn",
                s.key.way_id
            )),
        }
    }
    (layer, diagnostics)
}

/// Writes one row per frame with its observation plus the segment-level
/// statistics columns.
pub fn write_summary(
    observations: &[(GeoPoint, LaneObservation)],
    aggregation: &Aggregation,
    cfg: &ShoulderConfig,
    path: &Path,
) -> Result<(), ShoulderError> {
    let mut by_key: BTreeMap<(i64, Option<i64>, Option<i64>), &SegmentStats> = BTreeMap::new();
    for s in &aggregation.stats {
        by_key.insert(s.key.group_key(), s);
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| ShoulderError::Csv(e.to_string()))?;
    w.write_record([
        "image",
        "lat",
        "lon",
        "way_id",
        "node_a",
        "node_b",
        "excluded",
        "width_px",
        "intersect_x",
        "intersect_y",
        "frames_total",
        "frames_detected",
        "detect_fraction",
        "mean_width_px",
        "stddev_ix_px",
        "stddev_iy_px",
        "call",
    ])
    .map_err(|e| ShoulderError::Csv(e.to_string()))?;
    let fmt_opt = |v: Option<f64>| v.map(|v| format!("{v:.2}")).unwrap_or_default();
    for ((point, obs), frame) in observations.iter().zip(&aggregation.frames) {
        let stats = frame.segment.and_then(|k| by_key.get(&k));
        let (way, a, b) = frame
            .segment
            .map(|(w, a, b)| (w.to_string(), a, b))
            .unwrap_or(("".into(), None, None));
        w.write_record([
            obs.frame.clone(),
            format!("{:.7}", point.lat),
            format!("{:.7}", point.lon),
            way,
            a.map(|n| n.to_string()).unwrap_or_default(),
            b.map(|n| n.to_string()).unwrap_or_default(),
            frame.excluded.to_string(),
            fmt_opt(obs.width_at_upper_row_px),
            fmt_opt(obs.boundary_intersection.map(|(x, _)| x)),
            fmt_opt(obs.boundary_intersection.map(|(_, y)| y)),
            stats.map(|s| s.frames_total.to_string()).unwrap_or_default(),
            stats
                .map(|s| s.frames_detected.to_string())
                .unwrap_or_default(),
            stats
                .map(|s| format!("{:.3}", s.detect_fraction))
                .unwrap_or_default(),
            stats.map(|s| fmt_opt(s.mean_width_px)).unwrap_or_default(),
            stats.map(|s| fmt_opt(s.stddev_ix_px)).unwrap_or_default(),
            stats.map(|s| fmt_opt(s.stddev_iy_px)).unwrap_or_default(),
            stats
                .map(|s| classify(s, cfg).as_str().to_string())
                .unwrap_or_default(),
        ])
        .map_err(|e| ShoulderError::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::SpatialIndex;
    use crate::testutil::grid_network;
    use crate::vision::{LaneObservation, Line2D};

    fn observation(frame: &str, detected: bool, width: f64, ix: (f64, f64)) -> LaneObservation {
        if detected {
            LaneObservation {
                frame: frame.into(),
                left_own: Some(Line2D::x_of_y(-0.5, 400.0)),
                right_own: None,
                shoulder_left: Some(Line2D::x_of_y(-0.8, 300.0)),
                width_at_upper_row_px: Some(width),
                boundary_intersection: Some(ix),
            }
        } else {
            LaneObservation {
                frame: frame.into(),
                ..LaneObservation::default()
            }
        }
    }

    fn stats(fraction_n: (usize, usize), width: f64, sx: f64, sy: f64) -> SegmentStats {
        SegmentStats {
            key: SegmentKey {
                way_id: 10,
                chain: 0,
                a: Some((1, 101)),
                b: Some((2, 102)),
            },
            road_name: "Main Street".into(),
            frames_total: fraction_n.1,
            frames_detected: fraction_n.0,
            detect_fraction: fraction_n.0 as f64 / fraction_n.1 as f64,
            mean_width_px: Some(width),
            stddev_ix_px: Some(sx),
            stddev_iy_px: Some(sy),
            excluded_frames: 0,
        }
    }

    /// Points along Main Street between intersections 101 and 102, offset in
    /// metres south of node 101.
    fn frames_between(
        network: &crate::osm::RoadNetwork,
        offsets_m: &[f64],
        detected: &[bool],
    ) -> Vec<(GeoPoint, LaneObservation)> {
        let a = network.point(101).unwrap();
        offsets_m
            .iter()
            .zip(detected)
            .enumerate()
            .map(|(i, (off, det))| {
                let p = GeoPoint::new(a.lat - off / 111_195.0, a.lon);
                (p, observation(&format!("f{i}"), *det, 90.0, (320.0, 200.0)))
            })
            .collect()
    }

    #[test]
    fn all_frames_near_intersections_exclude_the_segment() {
        let network = grid_network(3, false);
        let index = SpatialIndex::build(&network).unwrap();
        let cfg = ShoulderConfig::default();
        // Block is ~100 m; frames at 5 m and 95 m are both inside the 30 m
        // exclusion of one end or the other.
        let obs = frames_between(&network, &[5.0, 95.0], &[true, true]);
        let agg = aggregate(&obs, &index, &cfg);
        assert!(agg.stats.is_empty());
        assert_eq!(agg.diagnostics.len(), 1);
        assert!(agg.diagnostics[0].contains("exclusion"));
    }

    #[test]
    fn detect_fraction_is_detected_over_total() {
        let network = grid_network(3, false);
        let index = SpatialIndex::build(&network).unwrap();
        let cfg = ShoulderConfig::default();
        let offsets: Vec<f64> = (0..10).map(|i| 35.0 + 3.0 * i as f64).collect();
        let mut detected = vec![true; 10];
        detected[3] = false;
        detected[7] = false;
        let obs = frames_between(&network, &offsets, &detected);
        let agg = aggregate(&obs, &index, &cfg);
        assert_eq!(agg.stats.len(), 1);
        let s = &agg.stats[0];
        assert_eq!(s.frames_total, 10);
        assert_eq!(s.frames_detected, 8);
        assert!((s.detect_fraction - 0.8).abs() < 1e-12);
    }

    #[test]
    fn statistics_match_a_flat_recomputation() {
        let network = grid_network(3, false);
        let index = SpatialIndex::build(&network).unwrap();
        let cfg = ShoulderConfig::default();
        let a = network.point(101).unwrap();
        let mut obs = Vec::new();
        let widths = [80.0, 95.0, 70.0, 110.0];
        let ixs = [(310.0, 180.0), (330.0, 220.0), (305.0, 190.0), (340.0, 210.0)];
        for (i, (w, ix)) in widths.iter().zip(ixs).enumerate() {
            let p = GeoPoint::new(a.lat - (40.0 + 5.0 * i as f64) / 111_195.0, a.lon);
            obs.push((p, observation(&format!("f{i}"), true, *w, ix)));
        }
        let agg = aggregate(&obs, &index, &cfg);
        let s = &agg.stats[0];

        let mean_w: f64 = widths.iter().sum::<f64>() / widths.len() as f64;
        let mean_x: f64 = ixs.iter().map(|(x, _)| x).sum::<f64>() / 4.0;
        let var_x: f64 = ixs.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum::<f64>() / 4.0;
        assert!((s.mean_width_px.unwrap() - mean_w).abs() < 1e-9);
        assert!((s.stddev_ix_px.unwrap() - var_x.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn excluded_frames_never_influence_statistics() {
        let network = grid_network(3, false);
        let index = SpatialIndex::build(&network).unwrap();
        let cfg = ShoulderConfig::default();
        let mut obs = frames_between(&network, &[40.0, 45.0, 50.0, 55.0, 60.0], &[true; 5]);
        let baseline = aggregate(&obs, &index, &cfg);
        // An absurd width right next to the intersection must change nothing.
        let a = network.point(101).unwrap();
        obs.push((
            GeoPoint::new(a.lat - 2.0 / 111_195.0, a.lon),
            observation("poison", true, 100_000.0, (9e9, -9e9)),
        ));
        let poisoned = aggregate(&obs, &index, &cfg);
        let (b, p) = (&baseline.stats[0], &poisoned.stats[0]);
        assert_eq!(b.frames_total, p.frames_total);
        assert_eq!(b.mean_width_px, p.mean_width_px);
        assert_eq!(b.stddev_ix_px, p.stddev_ix_px);
        assert_eq!(p.excluded_frames, 1);
    }

    #[test]
    fn aggregate_ignores_observation_order() {
        let network = grid_network(3, false);
        let index = SpatialIndex::build(&network).unwrap();
        let cfg = ShoulderConfig::default();
        let mut obs = frames_between(&network, &[35.0, 45.0, 55.0, 65.0], &[true, false, true, true]);
        let a = aggregate(&obs, &index, &cfg);
        obs.reverse();
        let b = aggregate(&obs, &index, &cfg);
        assert_eq!(a.stats.len(), b.stats.len());
        assert_eq!(a.stats[0].frames_total, b.stats[0].frames_total);
        assert_eq!(a.stats[0].mean_width_px, b.stats[0].mean_width_px);
    }

    #[test]
    fn thresholds_are_inclusive_exactly_as_worded() {
        let cfg = ShoulderConfig::default();
        // All four statistics exactly at their thresholds pass.
        assert_eq!(classify(&stats((8, 10), 75.0, 50.0, 50.0), &cfg), ShoulderCall::Shoulder);
        assert_eq!(classify(&stats((79, 100), 75.0, 50.0, 50.0), &cfg), ShoulderCall::NoShoulder);
        assert_eq!(classify(&stats((8, 10), 74.9, 50.0, 50.0), &cfg), ShoulderCall::NoShoulder);
        assert_eq!(classify(&stats((8, 10), 75.0, 50.1, 50.0), &cfg), ShoulderCall::NoShoulder);
        assert_eq!(classify(&stats((8, 10), 75.0, 50.0, 50.1), &cfg), ShoulderCall::NoShoulder);
    }

    #[test]
    fn sparse_groups_report_insufficient_data() {
        let cfg = ShoulderConfig::default();
        assert_eq!(
            classify(&stats((3, 4), 100.0, 10.0, 10.0), &cfg),
            ShoulderCall::InsufficientData
        );
    }

    #[test]
    fn classification_is_monotone_in_each_statistic() {
        let cfg = ShoulderConfig::default();
        let base = stats((85, 100), 90.0, 30.0, 30.0);
        assert_eq!(classify(&base, &cfg), ShoulderCall::Shoulder);
        for improve in [
            stats((90, 100), 90.0, 30.0, 30.0),
            stats((85, 100), 120.0, 30.0, 30.0),
            stats((85, 100), 90.0, 10.0, 30.0),
            stats((85, 100), 90.0, 30.0, 5.0),
        ] {
            assert_eq!(classify(&improve, &cfg), ShoulderCall::Shoulder);
        }
    }

    #[test]
    fn positive_segments_draw_between_their_intersections() {
        let network = grid_network(3, false);
        let index = SpatialIndex::build(&network).unwrap();
        let cfg = ShoulderConfig::default();
        let offsets: Vec<f64> = (0..8).map(|i| 35.0 + 4.0 * i as f64).collect();
        let obs = frames_between(&network, &offsets, &[true; 8]);
        let agg = aggregate(&obs, &index, &cfg);
        let (layer, diags) = shoulder_layer(&agg.stats, &index, &cfg);
        assert!(diags.is_empty());
        assert_eq!(layer.lines.len(), 1);
        let line = &layer.lines[0];
        // Chain-walk oracle: the path between nodes 101 and 102 is exactly
        // those two nodes.
        let a = network.point(101).unwrap();
        let b = network.point(102).unwrap();
        assert_eq!(line.points.len(), 2);
        assert_eq!((line.points[0].lat, line.points[0].lon), (a.lat, a.lon));
        assert_eq!((line.points[1].lat, line.points[1].lon), (b.lat, b.lon));
    }

    #[test]
    fn zero_positive_segments_make_an_empty_layer() {
        let network = grid_network(3, false);
        let index = SpatialIndex::build(&network).unwrap();
        let cfg = ShoulderConfig::default();
        let offsets: Vec<f64> = (0..8).map(|i| 35.0 + 4.0 * i as f64).collect();
        let obs = frames_between(&network, &offsets, &[false; 8]);
        let agg = aggregate(&obs, &index, &cfg);
        let (layer, _) = shoulder_layer(&agg.stats, &index, &cfg);
        assert!(layer.is_empty());
    }

    #[test]
    fn summary_file_has_one_row_per_frame() {
        let network = grid_network(3, false);
        let index = SpatialIndex::build(&network).unwrap();
        let cfg = ShoulderConfig::default();
        let obs = frames_between(&network, &[20.0, 40.0, 50.0, 60.0, 70.0, 80.0], &[true; 6]);
        let agg = aggregate(&obs, &index, &cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metadata_with_summary.csv");
        write_summary(&obs, &agg, &cfg, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.lines().nth(1).unwrap().contains("true")); // 20 m frame excluded
    }
}
