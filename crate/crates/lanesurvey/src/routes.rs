//! Route inference: detection evidence at intersections becomes lane routes.
//!
//! A bicycle lane is reported along a named road where markings were detected
//! at two or more consecutive intersections of its chain. A configurable
//! number of intersections with missing detections may be bridged before the
//! route is considered interrupted, and a street that merely shares one
//! intersection with a lane-carrying road is never reported.

use std::collections::BTreeSet;

use crate::detector::DetectionRecord;
use crate::geodesy::GeoPoint;
use crate::layer::RouteLayer;
use crate::matching::SpatialIndex;
use crate::osm::RoadNetwork;

/// Per-chain detection evidence: each intersection along the chain, flagged
/// when at least one filtered detection mapped to it.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionEvidence {
    pub chain: usize,
    pub chain_name: String,
    /// (node_path index, node id) per intersection, in path order.
    pub intersections: Vec<(usize, i64)>,
    pub flags: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
pub struct InferenceConfig {
    /// Consecutive missing-detection intersections tolerated inside a route.
    pub max_gap: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { max_gap: 1 }
    }
}

/// Maps detection records onto intersection nodes and flags them per chain.
///
/// Records carrying a node id (image sampling anchored them to an
/// intersection) use it directly; anything else is resolved through the
/// spatial index to the nearest intersection on the nearest way. A detection
/// at an intersection counts for every chain through it; the
/// consecutive-intersection rule suppresses cross-street leakage.
pub fn collect_evidence(
    records: &[DetectionRecord],
    network: &RoadNetwork,
    index: &SpatialIndex,
) -> Vec<IntersectionEvidence> {
    let intersections = network.intersections();
    let mut flagged: BTreeSet<i64> = BTreeSet::new();
    for rec in records {
        let node = match rec.node_id.filter(|n| intersections.contains(n)) {
            Some(node) => Some(node),
            None => index
                .match_point(rec.point)
                .and_then(|m| m.nearest_intersection_node_id),
        };
        if let Some(node) = node {
            flagged.insert(node);
        }
    }

    network
        .chains()
        .iter()
        .enumerate()
        .map(|(chain_idx, chain)| {
            let ints: Vec<(usize, i64)> = chain
                .node_path
                .iter()
                .enumerate()
                .filter(|(_, n)| intersections.contains(n))
                .map(|(i, n)| (i, *n))
                .collect();
            let flags = ints.iter().map(|(_, n)| flagged.contains(n)).collect();
            IntersectionEvidence {
                chain: chain_idx,
                chain_name: chain.name.clone(),
                intersections: ints,
                flags,
            }
        })
        .collect()
}

/// A run of flagged intersections: indices into `evidence.intersections` of
/// the first and last flagged member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub first: usize,
    pub last: usize,
}

/// Maximal runs of flagged intersections where internal gaps never exceed
/// `max_gap`. Runs containing a single flagged intersection emit nothing.
pub fn infer_spans(flags: &[bool], max_gap: usize) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut run_start: Option<usize> = None;
    let mut last_true = 0usize;
    for (i, &flag) in flags.iter().enumerate() {
        if !flag {
            continue;
        }
        match run_start {
            None => {
                run_start = Some(i);
                last_true = i;
            }
            Some(start) => {
                if i - last_true - 1 <= max_gap {
                    last_true = i;
                } else {
                    if last_true > start {
                        spans.push(Span {
                            first: start,
                            last: last_true,
                        });
                    }
                    run_start = Some(i);
                    last_true = i;
                }
            }
        }
    }
    if let Some(start) = run_start {
        if last_true > start {
            spans.push(Span {
                first: start,
                last: last_true,
            });
        }
    }
    spans
}

/// Builds the detected-route layer: one polyline per span, spanning the chain
/// sub-path from the first to the last flagged intersection, intermediate
/// geometry nodes included.
pub fn infer_routes(
    evidence: &[IntersectionEvidence],
    network: &RoadNetwork,
    cfg: &InferenceConfig,
) -> RouteLayer {
    let mut layer = RouteLayer::new("detected");
    for ev in evidence {
        let chain = &network.chains()[ev.chain];
        for span in infer_spans(&ev.flags, cfg.max_gap) {
            let from = ev.intersections[span.first].0;
            let to = ev.intersections[span.last].0;
            let points: Vec<GeoPoint> = chain.node_path[from..=to]
                .iter()
                .filter_map(|n| network.point(*n))
                .collect();
            if points.len() >= 2 {
                layer.push(ev.chain_name.clone(), points);
            }
        }
    }
    layer
}
