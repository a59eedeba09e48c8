//! Four-layer comparison between detected routes and the cycleway tags
//! already present in the map data, measured in metres.
//!
//! Each chain is walked node to node; every inter-node edge is classified by
//! combining the cycleway-tag status of its way with membership in a
//! detected route. Maximal same-class runs become polylines, so the layers
//! partition the walked length exactly.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::geodesy::{distance_m, GeoPoint};
use crate::layer::RouteLayer;
use crate::matching::SpatialIndex;
use crate::osm::RoadNetwork;
use crate::routes::{infer_spans, InferenceConfig, IntersectionEvidence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EdgeClass {
    Both,
    DetectedOnly,
    OsmOnly,
    Neither,
}

/// Agreement and difference layers plus their lengths. The accounting
/// identities hold by construction: detected = both + detected-only and
/// osm = both + osm-only, because every edge lands in exactly one class.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub detected_m: f64,
    pub osm_m: f64,
    pub both_m: f64,
    pub detected_only_m: f64,
    pub osm_only_m: f64,
    pub detected: RouteLayer,
    pub osm: RouteLayer,
    pub both: RouteLayer,
    pub detected_only: RouteLayer,
    pub osm_only: RouteLayer,
}

/// Compares detected evidence against cycleway tags across the whole network.
pub fn compare(
    evidence: &[IntersectionEvidence],
    network: &RoadNetwork,
    cfg: &InferenceConfig,
) -> ComparisonReport {
    compare_inner(evidence, network, cfg, None)
}

/// Same comparison, but cycleway tags only count on chains the camera
/// actually traversed, so unsurveyed roads cannot inflate the osm-only
/// layer.
pub fn restrict_to_surveyed(
    evidence: &[IntersectionEvidence],
    network: &RoadNetwork,
    cfg: &InferenceConfig,
    surveyed: &BTreeSet<usize>,
) -> ComparisonReport {
    compare_inner(evidence, network, cfg, Some(surveyed))
}

/// Chains touched by a set of survey points (camera positions).
pub fn surveyed_chains(points: &[GeoPoint], index: &SpatialIndex) -> BTreeSet<usize> {
    let mut chains = BTreeSet::new();
    for p in points {
        if let Some(m) = index.match_point(*p) {
            if let Some(chain) = index.network().chain_of_way(m.way_id) {
                chains.insert(chain);
            }
        }
    }
    chains
}

fn compare_inner(
    evidence: &[IntersectionEvidence],
    network: &RoadNetwork,
    cfg: &InferenceConfig,
    surveyed: Option<&BTreeSet<usize>>,
) -> ComparisonReport {
    let mut report = ComparisonReport {
        detected_m: 0.0,
        osm_m: 0.0,
        both_m: 0.0,
        detected_only_m: 0.0,
        osm_only_m: 0.0,
        detected: RouteLayer::new("detected"),
        osm: RouteLayer::new("osm"),
        both: RouteLayer::new("both"),
        detected_only: RouteLayer::new("detected_only"),
        osm_only: RouteLayer::new("osm_only"),
    };

    for ev in evidence {
        let chain = &network.chains()[ev.chain];
        let edge_count = chain.edge_ways.len();
        if edge_count == 0 {
            continue;
        }
        // Detected coverage: edges inside inferred spans.
        let mut detected = vec![false; edge_count];
        for span in infer_spans(&ev.flags, cfg.max_gap) {
            let from = ev.intersections[span.first].0;
            let to = ev.intersections[span.last].0;
            for slot in detected.iter_mut().take(to.min(edge_count)).skip(from) {
                *slot = true;
            }
        }
        let osm_counts = surveyed.is_none_or(|set| set.contains(&ev.chain));

        let mut classes = Vec::with_capacity(edge_count);
        for (i, way_id) in chain.edge_ways.iter().enumerate() {
            let osm = osm_counts && network.way(*way_id).is_some_and(|w| w.has_cycleway);
            let class = match (detected[i], osm) {
                (true, true) => EdgeClass::Both,
                (true, false) => EdgeClass::DetectedOnly,
                (false, true) => EdgeClass::OsmOnly,
                (false, false) => EdgeClass::Neither,
            };
            let len = edge_length(network, chain.node_path[i], chain.node_path[i + 1]);
            match class {
                EdgeClass::Both => {
                    report.both_m += len;
                    report.detected_m += len;
                    report.osm_m += len;
                }
                EdgeClass::DetectedOnly => {
                    report.detected_only_m += len;
                    report.detected_m += len;
                }
                EdgeClass::OsmOnly => {
                    report.osm_only_m += len;
                    report.osm_m += len;
                }
                EdgeClass::Neither => {}
            }
            classes.push(class);
        }

        push_runs(&mut report.both, network, chain, &classes, |c| c == EdgeClass::Both);
        push_runs(&mut report.detected_only, network, chain, &classes, |c| {
            c == EdgeClass::DetectedOnly
        });
        push_runs(&mut report.osm_only, network, chain, &classes, |c| {
            c == EdgeClass::OsmOnly
        });
        push_runs(&mut report.detected, network, chain, &classes, |c| {
            matches!(c, EdgeClass::Both | EdgeClass::DetectedOnly)
        });
        push_runs(&mut report.osm, network, chain, &classes, |c| {
            matches!(c, EdgeClass::Both | EdgeClass::OsmOnly)
        });
    }
    report
}

fn edge_length(network: &RoadNetwork, a: i64, b: i64) -> f64 {
    match (network.point(a), network.point(b)) {
        (Some(pa), Some(pb)) => distance_m(pa, pb),
        _ => 0.0,
    }
}

fn push_runs(
    layer: &mut RouteLayer,
    network: &RoadNetwork,
    chain: &crate::osm::NamedChain,
    classes: &[EdgeClass],
    keep: impl Fn(EdgeClass) -> bool,
) {
    let mut run: Vec<GeoPoint> = Vec::new();
    for (i, class) in classes.iter().enumerate() {
        if keep(*class) {
            if run.is_empty() {
                if let Some(p) = network.point(chain.node_path[i]) {
                    run.push(p);
                }
            }
            if let Some(p) = network.point(chain.node_path[i + 1]) {
                run.push(p);
            }
        } else if run.len() >= 2 {
            layer.push(chain.name.clone(), std::mem::take(&mut run));
        } else {
            run.clear();
        }
    }
    if run.len() >= 2 {
        layer.push(chain.name.clone(), run);
    }
}

impl ComparisonReport {
    /// Plain-text table with whole-metre rounding.
    pub fn text_table(&self) -> String {
        format!(
            "route comparison (metres)\n\
             \x20 detected:       {:>8}\n\
             \x20 openstreetmap:  {:>8}\n\
             \x20 both:           {:>8}\n\
             \x20 detected only:  {:>8}\n\
             \x20 osm only:       {:>8}\n",
            self.detected_m.round() as i64,
            self.osm_m.round() as i64,
            self.both_m.round() as i64,
            self.detected_only_m.round() as i64,
            self.osm_only_m.round() as i64,
        )
    }

    /// Machine-readable report; raw doubles retained.
    pub fn to_json(&self) -> Value {
        json!({
            "detected_m": self.detected_m,
            "osm_m": self.osm_m,
            "both_m": self.both_m,
            "detected_only_m": self.detected_only_m,
            "osm_only_m": self.osm_only_m,
            "rounded": {
                "detected_m": self.detected_m.round() as i64,
                "osm_m": self.osm_m.round() as i64,
                "both_m": self.both_m.round() as i64,
                "detected_only_m": self.detected_only_m.round() as i64,
                "osm_only_m": self.osm_only_m.round() as i64,
            }
        })
    }

    /// The two difference layers merged, each feature tagged with its class.
    pub fn diff_geojson(&self) -> Value {
        let mut features = Vec::new();
        for (layer, class) in [(&self.detected_only, "detected_only"), (&self.osm_only, "osm_only")]
        {
            for line in &layer.lines {
                let coords: Vec<Value> =
                    line.points.iter().map(|p| json!([p.lon, p.lat])).collect();
                features.push(json!({
                    "type": "Feature",
                    "properties": { "name": line.name, "class": class },
                    "geometry": { "type": "LineString", "coordinates": coords },
                }));
            }
        }
        json!({ "type": "FeatureCollection", "features": features })
    }

    /// Writes the four layer files plus text and JSON reports into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let write = |name: &str, layer: &RouteLayer| -> std::io::Result<()> {
            layer
                .write_geojson(&dir.join(name))
                .map_err(|e| std::io::Error::other(e.to_string()))
        };
        write("detected.geojson", &self.detected)?;
        write("osm.geojson", &self.osm)?;
        write("both.geojson", &self.both)?;
        fs::write(
            dir.join("diff.geojson"),
            serde_json::to_string_pretty(&self.diff_geojson())?,
        )?;
        fs::write(dir.join("comparison.txt"), self.text_table())?;
        fs::write(
            dir.join("comparison.json"),
            serde_json::to_string_pretty(&self.to_json())?,
        )?;
        Ok(())
    }
}
