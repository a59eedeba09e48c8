//! Nearest-way, nearest-intersection and road-segment resolution for
//! arbitrary geotagged points.
//!
//! The index keeps one bounding box per road way in a coarse grid; a query
//! expands outward from the probe cell and prunes with box distances, then
//! refines candidates with point-to-segment projection in a local
//! equirectangular frame around the probe. Results are identical to a
//! brute-force scan over every way.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::geodesy::{distance_m, GeoPoint, EARTH_RADIUS_M};
use crate::osm::{NamedChain, RoadNetwork};

/// Probes farther than this from every road way are reported unmatched.
pub const DEFAULT_MAX_MATCH_DISTANCE_M: f64 = 100.0;

/// Grid cell edge, metres. Only affects speed, never results.
const CELL_M: f64 = 250.0;

/// Pruning slack absorbing the equirectangular-vs-geodesic discrepancy;
/// generous by orders of magnitude at suburb scale.
const PRUNE_SLACK_M: f64 = 1.0;
const PRUNE_SCALE: f64 = 0.999;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("network has no road ways to index")]
    EmptyNetwork,
    #[error("no road way within {limit_m:.0} m (nearest {nearest_m:.1} m)")]
    Unmatched { limit_m: f64, nearest_m: f64 },
    #[error("way {0} belongs to no named chain")]
    WayNotChained(i64),
    #[error("chain {0:?} has no intersections")]
    ChainWithoutIntersections(String),
}

/// Nearest-way match for one probe point.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub way_id: i64,
    pub distance_to_way_m: f64,
    /// Closest point on the way's polyline.
    pub closest: GeoPoint,
    /// Node indices (in way order) of the segment the probe projects onto.
    pub segment: (usize, usize),
    pub nearest_any_node_id: i64,
    pub nearest_intersection_node_id: Option<i64>,
}

/// The stretch of road a probe falls on: its way plus the bracketing
/// intersection nodes along the chain. At chain ends one side may be absent.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentKey {
    pub way_id: i64,
    pub chain: usize,
    /// (index into the chain node_path, node id), scanning towards the start.
    pub a: Option<(usize, i64)>,
    /// Same, scanning towards the end.
    pub b: Option<(usize, i64)>,
}

impl SegmentKey {
    /// Key for grouping observations by road stretch.
    pub fn group_key(&self) -> (i64, Option<i64>, Option<i64>) {
        (self.way_id, self.a.map(|(_, n)| n), self.b.map(|(_, n)| n))
    }
}

struct WayEntry {
    way_id: i64,
    points: Vec<GeoPoint>,
    node_ids: Vec<i64>,
    bbox: [f64; 4], // min_lat, min_lon, max_lat, max_lon
}

/// (entry index, distance m, segment index, closest point)
type NearestHit = (usize, f64, usize, GeoPoint);

pub struct SpatialIndex<'n> {
    network: &'n RoadNetwork,
    entries: Vec<WayEntry>,
    cells: HashMap<(i32, i32), Vec<usize>>,
    grid_origin: (f64, f64),
    grid_step: (f64, f64), // degrees per cell (lat, lon)
    grid_dims: (i32, i32),
    chain_positions: Vec<HashMap<i64, usize>>,
    max_match_distance_m: f64,
}

impl<'n> SpatialIndex<'n> {
    pub fn build(network: &'n RoadNetwork) -> Result<Self, MatchError> {
        Self::build_with_limit(network, DEFAULT_MAX_MATCH_DISTANCE_M)
    }

    pub fn build_with_limit(
        network: &'n RoadNetwork,
        max_match_distance_m: f64,
    ) -> Result<Self, MatchError> {
        let mut entries = Vec::new();
        for way in network.ways().values() {
            if !way.is_road {
                continue;
            }
            let points = network.way_points(way);
            if points.len() < 2 {
                continue;
            }
            let mut bbox = [f64::MAX, f64::MAX, f64::MIN, f64::MIN];
            for p in &points {
                bbox[0] = bbox[0].min(p.lat);
                bbox[1] = bbox[1].min(p.lon);
                bbox[2] = bbox[2].max(p.lat);
                bbox[3] = bbox[3].max(p.lon);
            }
            entries.push(WayEntry {
                way_id: way.id,
                node_ids: way.node_refs.clone(),
                points,
                bbox,
            });
        }
        if entries.is_empty() {
            return Err(MatchError::EmptyNetwork);
        }

        let min_lat = entries.iter().map(|e| e.bbox[0]).fold(f64::MAX, f64::min);
        let min_lon = entries.iter().map(|e| e.bbox[1]).fold(f64::MAX, f64::min);
        let max_lat = entries.iter().map(|e| e.bbox[2]).fold(f64::MIN, f64::max);
        let max_lon = entries.iter().map(|e| e.bbox[3]).fold(f64::MIN, f64::max);
        let mid_lat = 0.5 * (min_lat + max_lat);
        let metres_per_deg_lat = EARTH_RADIUS_M.to_radians();
        let metres_per_deg_lon = metres_per_deg_lat * mid_lat.to_radians().cos().max(0.01);
        let step_lat = CELL_M / metres_per_deg_lat;
        let step_lon = CELL_M / metres_per_deg_lon;
        let rows = (((max_lat - min_lat) / step_lat).ceil() as i32 + 1).clamp(1, 2048);
        let cols = (((max_lon - min_lon) / step_lon).ceil() as i32 + 1).clamp(1, 2048);

        let mut cells: HashMap<(i32, i32), Vec<usize>> = HashMap::new();
        for (idx, entry) in entries.iter().enumerate() {
            let r0 = (((entry.bbox[0] - min_lat) / step_lat) as i32).clamp(0, rows - 1);
            let r1 = (((entry.bbox[2] - min_lat) / step_lat) as i32).clamp(0, rows - 1);
            let c0 = (((entry.bbox[1] - min_lon) / step_lon) as i32).clamp(0, cols - 1);
            let c1 = (((entry.bbox[3] - min_lon) / step_lon) as i32).clamp(0, cols - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    cells.entry((r, c)).or_default().push(idx);
                }
            }
        }

        let chain_positions = network
            .chains()
            .iter()
            .map(|chain| {
                chain
                    .node_path
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (*n, i))
                    .collect()
            })
            .collect();

        Ok(Self {
            network,
            entries,
            cells,
            grid_origin: (min_lat, min_lon),
            grid_step: (step_lat, step_lon),
            grid_dims: (rows, cols),
            chain_positions,
            max_match_distance_m,
        })
    }

    pub fn network(&self) -> &'n RoadNetwork {
        self.network
    }

    /// Nearest road way to `p`, or `None` when everything is farther than the
    /// match limit. Ties resolve to the smaller way id.
    pub fn match_point(&self, p: GeoPoint) -> Option<MatchResult> {
        let (entry_idx, d, seg, closest) = self.nearest_entry(p)?;
        if d > self.max_match_distance_m {
            return None;
        }
        let entry = &self.entries[entry_idx];
        Some(self.finish_match(p, entry, d, seg, closest))
    }

    fn finish_match(
        &self,
        p: GeoPoint,
        entry: &WayEntry,
        d: f64,
        seg: usize,
        closest: GeoPoint,
    ) -> MatchResult {
        let intersections = self.network.intersections();
        let mut nearest_any: (f64, i64) = (f64::MAX, 0);
        let mut nearest_int: Option<(f64, i64)> = None;
        for (node_id, point) in entry.node_ids.iter().zip(&entry.points) {
            let dn = distance_m(p, *point);
            if dn < nearest_any.0 || (dn == nearest_any.0 && *node_id < nearest_any.1) {
                nearest_any = (dn, *node_id);
            }
            if intersections.contains(node_id)
                && nearest_int.is_none_or(|(best, bid)| dn < best || (dn == best && *node_id < bid))
            {
                nearest_int = Some((dn, *node_id));
            }
        }
        MatchResult {
            way_id: entry.way_id,
            distance_to_way_m: d,
            closest,
            segment: (seg, seg + 1),
            nearest_any_node_id: nearest_any.1,
            nearest_intersection_node_id: nearest_int.map(|(_, n)| n),
        }
    }

    /// The bracketing intersection nodes along the chain containing the
    /// matched way.
    pub fn segment_key(&self, p: GeoPoint) -> Result<SegmentKey, MatchError> {
        let (entry_idx, d, seg, _) = self.nearest_entry(p).ok_or(MatchError::EmptyNetwork)?;
        if d > self.max_match_distance_m {
            return Err(MatchError::Unmatched {
                limit_m: self.max_match_distance_m,
                nearest_m: d,
            });
        }
        let entry = &self.entries[entry_idx];
        let chain_idx = self
            .network
            .chain_of_way(entry.way_id)
            .ok_or(MatchError::WayNotChained(entry.way_id))?;
        let chain = &self.network.chains()[chain_idx];
        let positions = &self.chain_positions[chain_idx];
        let pos0 = positions.get(&entry.node_ids[seg]).copied();
        let pos1 = positions.get(&entry.node_ids[seg + 1]).copied();
        let (lo, hi) = match (pos0, pos1) {
            (Some(a), Some(b)) => (a.min(b), a.max(b)),
            // A loop-closing duplicate was deduplicated out of the path.
            (Some(a), None) | (None, Some(a)) => (a, a),
            (None, None) => return Err(MatchError::WayNotChained(entry.way_id)),
        };
        let intersections = self.network.intersections();
        let a = chain.node_path[..=lo]
            .iter()
            .enumerate()
            .rev()
            .find(|(_, n)| intersections.contains(n))
            .map(|(i, n)| (i, *n));
        let b = chain.node_path[hi..]
            .iter()
            .enumerate()
            .find(|(_, n)| intersections.contains(n))
            .map(|(i, n)| (hi + i, *n));
        if a.is_none() && b.is_none() {
            return Err(MatchError::ChainWithoutIntersections(chain.name.clone()));
        }
        Ok(SegmentKey {
            way_id: entry.way_id,
            chain: chain_idx,
            a,
            b,
        })
    }

    /// Chain sub-path spanned by a segment key, intersection nodes inclusive.
    pub fn segment_path(&self, key: &SegmentKey) -> Option<Vec<GeoPoint>> {
        let (ia, _) = key.a?;
        let (ib, _) = key.b?;
        let chain: &NamedChain = &self.network.chains()[key.chain];
        let pts: Vec<GeoPoint> = chain.node_path[ia..=ib]
            .iter()
            .filter_map(|n| self.network.point(*n))
            .collect();
        (pts.len() >= 2).then_some(pts)
    }

    fn cell_of(&self, p: GeoPoint) -> (i32, i32) {
        let r = ((p.lat - self.grid_origin.0) / self.grid_step.0) as i32;
        let c = ((p.lon - self.grid_origin.1) / self.grid_step.1) as i32;
        (
            r.clamp(0, self.grid_dims.0 - 1),
            c.clamp(0, self.grid_dims.1 - 1),
        )
    }

    fn nearest_entry(&self, p: GeoPoint) -> Option<NearestHit> {
        let frame = LocalFrame::at(p);
        let (rows, cols) = self.grid_dims;
        let (pr, pc) = self.cell_of(p);
        let mut seen: HashSet<usize> = HashSet::new();
        let mut best: Option<NearestHit> = None;

        let max_ring = rows.max(cols);
        for ring in 0..=max_ring {
            let r0 = pr - ring;
            let r1 = pr + ring;
            let c0 = pc - ring;
            let c1 = pc + ring;
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let on_ring = r == r0 || r == r1 || c == c0 || c == c1;
                    if !on_ring || r < 0 || c < 0 || r >= rows || c >= cols {
                        continue;
                    }
                    if let Some(list) = self.cells.get(&(r, c)) {
                        for &idx in list {
                            if !seen.insert(idx) {
                                continue;
                            }
                            let entry = &self.entries[idx];
                            // Cheap reject on the box before touching segments.
                            if let Some((_, bd, _, _)) = best {
                                let box_d = frame.distance_to_bbox(p, entry.bbox);
                                if box_d * PRUNE_SCALE - PRUNE_SLACK_M > bd {
                                    continue;
                                }
                            }
                            let (d, seg, closest) = frame.distance_to_polyline(p, &entry.points);
                            let better = match best {
                                None => true,
                                Some((bi, bd, _, _)) => {
                                    d < bd
                                        || (d == bd && entry.way_id < self.entries[bi].way_id)
                                }
                            };
                            if better {
                                best = Some((idx, d, seg, closest));
                            }
                        }
                    }
                }
            }
            // Everything beyond the scanned rectangle is at least `bound`
            // away (per-axis distance to the unscanned slabs).
            if let Some((_, bd, _, _)) = best {
                let mut bound = f64::MAX;
                let mut any_side_open = false;
                if r0 > 0 {
                    any_side_open = true;
                    bound = bound.min(frame.lat_distance(p, self.grid_origin.0 + r0 as f64 * self.grid_step.0));
                }
                if r1 < rows - 1 {
                    any_side_open = true;
                    bound = bound.min(frame.lat_distance(p, self.grid_origin.0 + (r1 + 1) as f64 * self.grid_step.0));
                }
                if c0 > 0 {
                    any_side_open = true;
                    bound = bound.min(frame.lon_distance(p, self.grid_origin.1 + c0 as f64 * self.grid_step.1));
                }
                if c1 < cols - 1 {
                    any_side_open = true;
                    bound = bound.min(frame.lon_distance(p, self.grid_origin.1 + (c1 + 1) as f64 * self.grid_step.1));
                }
                if !any_side_open || bd < bound * PRUNE_SCALE - PRUNE_SLACK_M {
                    break;
                }
            }
        }
        best
    }
}

/// Equirectangular projection centred on a probe point; accurate to well
/// under 0.1% at the sub-kilometre distances involved in matching.
struct LocalFrame {
    cos_lat: f64,
}

impl LocalFrame {
    fn at(p: GeoPoint) -> Self {
        Self {
            cos_lat: p.lat.to_radians().cos().max(0.01),
        }
    }

    fn to_xy(&self, origin: GeoPoint, p: GeoPoint) -> (f64, f64) {
        let x = (p.lon - origin.lon).to_radians() * self.cos_lat * EARTH_RADIUS_M;
        let y = (p.lat - origin.lat).to_radians() * EARTH_RADIUS_M;
        (x, y)
    }

    fn point_at(&self, origin: GeoPoint, x: f64, y: f64) -> GeoPoint {
        GeoPoint::new(
            origin.lat + (y / EARTH_RADIUS_M).to_degrees(),
            origin.lon + (x / (EARTH_RADIUS_M * self.cos_lat)).to_degrees(),
        )
    }

    fn lat_distance(&self, p: GeoPoint, lat: f64) -> f64 {
        ((lat - p.lat).to_radians() * EARTH_RADIUS_M).abs()
    }

    fn lon_distance(&self, p: GeoPoint, lon: f64) -> f64 {
        ((lon - p.lon).to_radians() * self.cos_lat * EARTH_RADIUS_M).abs()
    }

    fn distance_to_bbox(&self, p: GeoPoint, bbox: [f64; 4]) -> f64 {
        let clamped = GeoPoint::new(p.lat.clamp(bbox[0], bbox[2]), p.lon.clamp(bbox[1], bbox[3]));
        distance_m(p, clamped)
    }

    /// Minimum distance from `p` to the polyline; returns the segment index
    /// and the geographic closest point, with the final distance measured
    /// geodesically.
    fn distance_to_polyline(&self, p: GeoPoint, pts: &[GeoPoint]) -> (f64, usize, GeoPoint) {
        let mut best = (f64::MAX, 0usize, pts[0]);
        for i in 0..pts.len() - 1 {
            let (ax, ay) = self.to_xy(p, pts[i]);
            let (bx, by) = self.to_xy(p, pts[i + 1]);
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 == 0.0 {
                0.0
            } else {
                // Probe is the frame origin (0, 0).
                (-(ax * dx + ay * dy) / len2).clamp(0.0, 1.0)
            };
            let closest = self.point_at(p, ax + t * dx, ay + t * dy);
            let d = distance_m(p, closest);
            if d < best.0 {
                best = (d, i, closest);
            }
        }
        best
    }
}

/// Exhaustive nearest-way scan used as the oracle for index equivalence.
pub fn brute_force_nearest(network: &RoadNetwork, p: GeoPoint) -> Option<(i64, f64)> {
    let frame = LocalFrame::at(p);
    let mut best: Option<(i64, f64)> = None;
    for way in network.ways().values() {
        if !way.is_road {
            continue;
        }
        let pts = network.way_points(way);
        if pts.len() < 2 {
            continue;
        }
        let (d, _, _) = frame.distance_to_polyline(p, &pts);
        let better = match best {
            None => true,
            Some((bid, bd)) => d < bd || (d == bd && way.id < bid),
        };
        if better {
            best = Some((way.id, d));
        }
    }
    best
}
