//! Sample-point planning: where to capture street imagery in a survey area.
//!
//! Bicycle lane markings cluster around intersections, so the plan emits the
//! intersection point itself plus points walked outward along each road arm,
//! at a fixed interval up to a margin. A second extract with a 200 m grown
//! bounding box supplies intersections whose cross street lies outside the
//! exact survey boundary.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::geodesy::{bearing, distance_m, node_heading, offset_point, GeoPoint, Heading};
use crate::osm::RoadNetwork;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("margin {margin_m} m is not a multiple of interval {interval_m} m")]
    MarginNotMultiple { margin_m: f64, interval_m: f64 },
    #[error("interval must be positive, got {0}")]
    BadInterval(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("batch file: {0}")]
    BadBatch(String),
}

#[derive(Debug, Clone)]
pub struct PlanConfig {
    pub margin_m: f64,
    pub interval_m: f64,
    pub dedupe_radius_m: f64,
    pub fov_deg: f64,
    pub pitch_deg: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            margin_m: 20.0,
            interval_m: 10.0,
            dedupe_radius_m: 5.0,
            fov_deg: 90.0,
            pitch_deg: -20.0,
        }
    }
}

/// One survey location. Four images are captured here, at 0, 90, 180 and 270
/// degrees relative to the road heading, pitched down towards the road.
#[derive(Debug, Clone)]
pub struct SamplePoint {
    pub point: GeoPoint,
    pub way_id: i64,
    /// Anchor intersection node.
    pub node_id: i64,
    /// Signed metres walked along the road arm; positive follows node order.
    pub offset_m: f64,
    pub road_heading: Heading,
    pub fov_deg: f64,
    pub pitch_deg: f64,
}

impl SamplePoint {
    pub fn capture_headings(&self) -> [Heading; 4] {
        [0.0, 90.0, 180.0, 270.0].map(|d| self.road_heading.rotated(d))
    }
}

/// Generates the survey plan.
///
/// Ordering is deterministic (node id, then way id, then offset) and points
/// falling within the dedupe radius of an already-emitted point are dropped.
pub fn plan_samples(
    network: &RoadNetwork,
    margin_network: Option<&RoadNetwork>,
    cfg: &PlanConfig,
) -> Result<Vec<SamplePoint>, PlanError> {
    if cfg.interval_m <= 0.0 {
        return Err(PlanError::BadInterval(cfg.interval_m));
    }
    let steps = cfg.margin_m / cfg.interval_m;
    if (steps - steps.round()).abs() > 1e-9 {
        return Err(PlanError::MarginNotMultiple {
            margin_m: cfg.margin_m,
            interval_m: cfg.interval_m,
        });
    }
    let steps = steps.round() as usize;

    // Intersections of the survey extract, plus margin-extract intersections
    // that sit on a surveyed road.
    let mut anchors = network.intersections().clone();
    if let Some(margin) = margin_network {
        for &node in margin.intersections() {
            if anchors.contains(&node) {
                continue;
            }
            let on_surveyed_road = network
                .memberships(node)
                .iter()
                .any(|(way, _)| network.way(*way).is_some_and(|w| w.is_road));
            if on_surveyed_road {
                anchors.insert(node);
            }
        }
    }

    let mut candidates: Vec<SamplePoint> = Vec::new();
    for &node_id in &anchors {
        let mut members: Vec<(i64, usize)> = network
            .memberships(node_id)
            .iter()
            .copied()
            .filter(|(way, _)| network.way(*way).is_some_and(|w| w.is_road))
            .collect();
        members.sort_unstable();
        let Some(&(first_way, first_idx)) = members.first() else {
            continue;
        };

        // The intersection point itself, headed with the first road through it.
        let way_pts = network.way_points(network.way(first_way).unwrap());
        if let (Some(point), Ok(heading)) =
            (network.point(node_id), node_heading(&way_pts, first_idx))
        {
            candidates.push(SamplePoint {
                point,
                way_id: first_way,
                node_id,
                offset_m: 0.0,
                road_heading: heading,
                fov_deg: cfg.fov_deg,
                pitch_deg: cfg.pitch_deg,
            });
        }

        // Offsets along every arm, walking the way geometry node to node.
        for (way_id, idx) in members {
            let way = network.way(way_id).unwrap();
            let pts = network.way_points(way);
            if pts.len() != way.node_refs.len() {
                continue;
            }
            for forward in [true, false] {
                let arm: Vec<GeoPoint> = if forward {
                    pts[idx..].to_vec()
                } else {
                    pts[..=idx].iter().rev().copied().collect()
                };
                if arm.len() < 2 {
                    continue;
                }
                for k in 1..=steps {
                    let target = k as f64 * cfg.interval_m;
                    let Some((point, heading)) = walk_along(&arm, target) else {
                        break;
                    };
                    candidates.push(SamplePoint {
                        point,
                        way_id,
                        node_id,
                        offset_m: if forward { target } else { -target },
                        road_heading: heading,
                        fov_deg: cfg.fov_deg,
                        pitch_deg: cfg.pitch_deg,
                    });
                }
            }
        }
    }

    candidates.sort_by(|a, b| {
        (a.node_id, a.way_id)
            .cmp(&(b.node_id, b.way_id))
            .then(a.offset_m.total_cmp(&b.offset_m))
    });

    let mut kept: Vec<SamplePoint> = Vec::new();
    'candidates: for cand in candidates {
        for existing in &kept {
            if distance_m(cand.point, existing.point) < cfg.dedupe_radius_m {
                continue 'candidates;
            }
        }
        kept.push(cand);
    }
    Ok(kept)
}

/// Point `target` metres along a polyline, with the travel heading there.
/// `None` when the polyline is shorter than `target`.
fn walk_along(arm: &[GeoPoint], target: f64) -> Option<(GeoPoint, Heading)> {
    let mut covered = 0.0;
    for pair in arm.windows(2) {
        let leg = distance_m(pair[0], pair[1]);
        if leg == 0.0 {
            continue;
        }
        if covered + leg >= target {
            let heading = bearing(pair[0], pair[1]).ok()?;
            return Some((offset_point(pair[0], heading, target - covered), heading));
        }
        covered += leg;
    }
    None
}

/// Writes the batch file: one row per (sample point, capture heading).
pub fn emit_batch(plan: &[SamplePoint], mut out: impl Write) -> Result<usize, PlanError> {
    writeln!(
        out,
        "point_id,lat,lon,heading_deg,fov_deg,pitch_deg,way_id,node_id,offset_m"
    )?;
    let mut rows = 0;
    for (i, sample) in plan.iter().enumerate() {
        for heading in sample.capture_headings() {
            writeln!(
                out,
                "{i},{:.7},{:.7},{:.1},{:.0},{:.0},{},{},{:.1}",
                sample.point.lat,
                sample.point.lon,
                heading.canonical_1dp(),
                sample.fov_deg,
                sample.pitch_deg,
                sample.way_id,
                sample.node_id,
                sample.offset_m
            )?;
            rows += 1;
        }
    }
    Ok(rows)
}

pub fn write_batch(plan: &[SamplePoint], path: &Path) -> Result<usize, PlanError> {
    let file = std::fs::File::create(path)?;
    emit_batch(plan, std::io::BufWriter::new(file))
}

/// One parsed batch row; the per-heading unit the imagery client fetches.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    pub point_id: u64,
    pub point: GeoPoint,
    pub heading: Heading,
    pub fov_deg: f64,
    pub pitch_deg: f64,
    pub way_id: i64,
    pub node_id: i64,
    pub offset_m: f64,
}

/// Like [`read_batch`] but collects malformed rows as diagnostics instead of
/// failing the whole file.
pub fn read_batch_lenient(path: &Path) -> Result<(Vec<BatchRow>, Vec<String>), PlanError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| PlanError::BadBatch(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let parsed = record
            .map_err(|e| format!("row {}: {e}", i + 1))
            .and_then(|r| parse_batch_record(&r).map_err(|m| format!("row {}: {m}", i + 1)));
        match parsed {
            Ok(row) => rows.push(row),
            Err(diag) => diagnostics.push(diag),
        }
    }
    Ok((rows, diagnostics))
}

fn parse_batch_record(record: &csv::StringRecord) -> Result<BatchRow, String> {
    let field = |j: usize| -> Result<&str, String> {
        record.get(j).ok_or_else(|| format!("missing column {j}"))
    };
    let num = |j: usize| -> Result<f64, String> {
        field(j)?
            .trim()
            .parse()
            .map_err(|_| format!("bad number in column {j}"))
    };
    Ok(BatchRow {
        point_id: num(0)? as u64,
        point: GeoPoint::new(num(1)?, num(2)?),
        heading: Heading::new(num(3)?),
        fov_deg: num(4)?,
        pitch_deg: num(5)?,
        way_id: num(6)? as i64,
        node_id: num(7)? as i64,
        offset_m: num(8)?,
    })
}

pub fn read_batch(path: &Path) -> Result<Vec<BatchRow>, PlanError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| PlanError::BadBatch(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| PlanError::BadBatch(format!("row {}: {e}", i + 1)))?;
        let field = |j: usize| -> Result<&str, PlanError> {
            record
                .get(j)
                .ok_or_else(|| PlanError::BadBatch(format!("row {}: missing column {j}", i + 1)))
        };
        let num = |j: usize| -> Result<f64, PlanError> {
            field(j)?
                .parse()
                .map_err(|_| PlanError::BadBatch(format!("row {}: bad number in column {j}", i + 1)))
        };
        rows.push(BatchRow {
            point_id: num(0)? as u64,
            point: GeoPoint::new(num(1)?, num(2)?),
            heading: Heading::new(num(3)?),
            fov_deg: num(4)?,
            pitch_deg: num(5)?,
            way_id: num(6)? as i64,
            node_id: num(7)? as i64,
            offset_m: num(8)?,
        });
    }
    Ok(rows)
}
