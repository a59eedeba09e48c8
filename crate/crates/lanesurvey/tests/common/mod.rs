//! Shared oracles and fixture builders for the integration suites.
//!
//! Everything here is deliberately independent of the library's
//! implementation paths: geodesy goes through 3-vector algebra, graph
//! questions are answered by exhaustive scans, and route spans come from
//! pair enumeration rather than a linear scan.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

// ---------------------------------------------------------------------------
// Spherical-trig oracle on 3-vectors
// ---------------------------------------------------------------------------

pub const ORACLE_RADIUS_M: f64 = 6_371_008.8;

fn to_vec(lat: f64, lon: f64) -> [f64; 3] {
    let (phi, lam) = (lat.to_radians(), lon.to_radians());
    [phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn oracle_distance_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let a = to_vec(lat1, lon1);
    let b = to_vec(lat2, lon2);
    ORACLE_RADIUS_M * norm(cross(a, b)).atan2(dot(a, b))
}

/// Initial bearing via the tangent of the great circle projected on the
/// local east/north basis.
pub fn oracle_bearing_deg(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let a = to_vec(lat1, lon1);
    let b = to_vec(lat2, lon2);
    let (phi, lam) = (lat1.to_radians(), lon1.to_radians());
    let east = [-lam.sin(), lam.cos(), 0.0];
    let north = [
        -phi.sin() * lam.cos(),
        -phi.sin() * lam.sin(),
        phi.cos(),
    ];
    // Component of b orthogonal to a = tangent direction at a.
    let d = dot(a, b);
    let t = [b[0] - d * a[0], b[1] - d * a[1], b[2] - d * a[2]];
    let deg = dot(t, east).atan2(dot(t, north)).to_degrees();
    if deg < 0.0 {
        deg + 360.0
    } else {
        deg
    }
}

/// Destination by rotating the position vector within the great-circle
/// plane defined by the bearing.
pub fn oracle_destination(lat: f64, lon: f64, bearing_deg: f64, distance_m: f64) -> (f64, f64) {
    let a = to_vec(lat, lon);
    let (phi, lam) = (lat.to_radians(), lon.to_radians());
    let east = [-lam.sin(), lam.cos(), 0.0];
    let north = [
        -phi.sin() * lam.cos(),
        -phi.sin() * lam.sin(),
        phi.cos(),
    ];
    let theta = bearing_deg.to_radians();
    let dir = [
        north[0] * theta.cos() + east[0] * theta.sin(),
        north[1] * theta.cos() + east[1] * theta.sin(),
        north[2] * theta.cos() + east[2] * theta.sin(),
    ];
    let delta = distance_m / ORACLE_RADIUS_M;
    let v = [
        a[0] * delta.cos() + dir[0] * delta.sin(),
        a[1] * delta.cos() + dir[1] * delta.sin(),
        a[2] * delta.cos() + dir[2] * delta.sin(),
    ];
    let out_lat = v[2].asin().to_degrees();
    let out_lon = v[1].atan2(v[0]).to_degrees();
    (out_lat, out_lon)
}

// ---------------------------------------------------------------------------
// Fixture building
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FixtureWay {
    pub id: i64,
    pub refs: Vec<i64>,
    pub tags: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default)]
pub struct Fixture {
    pub nodes: Vec<(i64, f64, f64)>,
    pub ways: Vec<FixtureWay>,
}

impl Fixture {
    pub fn way(&mut self, id: i64, refs: &[i64], tags: &[(&str, &str)]) {
        self.ways.push(FixtureWay {
            id,
            refs: refs.to_vec(),
            tags: tags
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        });
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\"?>\n<osm version=\"0.6\">\n");
        for (id, lat, lon) in &self.nodes {
            out.push_str(&format!(
                "  <node id=\"{id}\" lat=\"{lat:.7}\" lon=\"{lon:.7}\"/>\n"
            ));
        }
        for way in &self.ways {
            out.push_str(&format!("  <way id=\"{}\">\n", way.id));
            for r in &way.refs {
                out.push_str(&format!("    <nd ref=\"{r}\"/>\n"));
            }
            for (k, v) in &way.tags {
                out.push_str(&format!("    <tag k=\"{k}\" v=\"{v}\"/>\n"));
            }
            out.push_str("  </way>\n");
        }
        out.push_str("</osm>\n");
        out
    }
}

/// Pseudo-random street network: a jittered grid with named rows/columns,
/// some ways split into segments, some with cycleway tags, plus footways
/// and unnamed service ways for noise.
pub fn random_fixture(seed: u64, rows: usize, cols: usize) -> Fixture {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let mut rng = StdRng::seed_from_u64(seed);
    let mut fixture = Fixture::default();
    let node_id = |r: usize, c: usize| (1000 + r * 100 + c) as i64;
    for r in 0..rows {
        for c in 0..cols {
            let jitter_lat: f64 = rng.random_range(-0.00008..0.00008);
            let jitter_lon: f64 = rng.random_range(-0.00008..0.00008);
            fixture.nodes.push((
                node_id(r, c),
                -38.0 - 0.0009 * r as f64 + jitter_lat,
                145.0 + 0.0011 * c as f64 + jitter_lon,
            ));
        }
    }
    let mut next_way = 10_000i64;
    // Horizontal streets, possibly split into runs of 1..=3 blocks.
    for r in 0..rows {
        let name = format!("Row {r} Street");
        let mut c = 0;
        while c + 1 < cols {
            let len = rng.random_range(1..=3usize).min(cols - 1 - c);
            let refs: Vec<i64> = (c..=c + len).map(|cc| node_id(r, cc)).collect();
            let mut tags = vec![
                ("highway".to_string(), "residential".to_string()),
                ("name".to_string(), name.clone()),
            ];
            if rng.random_range(0..4) == 0 {
                tags.push(("cycleway:left".to_string(), "lane".to_string()));
            }
            fixture.ways.push(FixtureWay {
                id: next_way,
                refs,
                tags,
            });
            next_way += 1;
            c += len;
        }
    }
    // Vertical streets.
    for c in 0..cols {
        let name = format!("Column {c} Avenue");
        let mut r = 0;
        while r + 1 < rows {
            let len = rng.random_range(1..=3usize).min(rows - 1 - r);
            let refs: Vec<i64> = (r..=r + len).map(|rr| node_id(rr, c)).collect();
            let mut tags = vec![
                ("highway".to_string(), "tertiary".to_string()),
                ("name".to_string(), name.clone()),
            ];
            if rng.random_range(0..5) == 0 {
                tags.push(("cycleway".to_string(), "lane".to_string()));
            }
            fixture.ways.push(FixtureWay {
                id: next_way,
                refs,
                tags,
            });
            next_way += 1;
            r += len;
        }
    }
    // Footways and unnamed ways should never create intersections.
    for _ in 0..(rows + cols) / 2 {
        let r = rng.random_range(0..rows - 1);
        let c = rng.random_range(0..cols - 1);
        let diag = [node_id(r, c), node_id(r + 1, c + 1)];
        let footway = rng.random_range(0..2) == 0;
        let tags = if footway {
            vec![
                ("highway".to_string(), "footway".to_string()),
                ("name".to_string(), "Reserve Path".to_string()),
            ]
        } else {
            vec![("highway".to_string(), "service".to_string())]
        };
        fixture.ways.push(FixtureWay {
            id: next_way,
            refs: diag.to_vec(),
            tags,
        });
        next_way += 1;
    }
    fixture
}

// ---------------------------------------------------------------------------
// Brute-force oracles over a fixture
// ---------------------------------------------------------------------------

fn oracle_normalize(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn oracle_is_road(way: &FixtureWay) -> bool {
    way.tags
        .iter()
        .find(|(k, _)| k == "highway")
        .map(|(_, v)| !matches!(v.as_str(), "footway" | "pedestrian" | "steps"))
        .unwrap_or(false)
}

fn oracle_name(way: &FixtureWay) -> Option<String> {
    way.tags
        .iter()
        .find(|(k, _)| k == "name")
        .map(|(_, v)| v.clone())
}

fn oracle_effective_name(way: &FixtureWay) -> Option<String> {
    oracle_name(way).or_else(|| {
        way.tags
            .iter()
            .find(|(k, _)| k == "ref")
            .map(|(_, v)| v.clone())
    })
}

/// All-pairs intersection scan: a node is an intersection iff two road ways
/// with distinct normalized names both contain it.
pub fn oracle_intersections(fixture: &Fixture) -> BTreeSet<i64> {
    let mut out = BTreeSet::new();
    let roads: Vec<&FixtureWay> = fixture.ways.iter().filter(|w| oracle_is_road(w)).collect();
    for i in 0..roads.len() {
        for j in i + 1..roads.len() {
            let (a, b) = (roads[i], roads[j]);
            let (Some(na), Some(nb)) = (oracle_name(a), oracle_name(b)) else {
                continue;
            };
            if oracle_normalize(&na) == oracle_normalize(&nb) {
                continue;
            }
            let refs_b: HashSet<i64> = b.refs.iter().copied().collect();
            for r in &a.refs {
                if refs_b.contains(r) {
                    out.insert(*r);
                }
            }
        }
    }
    out
}

/// Expected chain partition: ways of one name group belong to the same
/// chain iff they connect through endpoints shared by exactly two group
/// members (walks break at terminals and at branch nodes).
pub fn oracle_chain_partition(fixture: &Fixture) -> Vec<BTreeSet<i64>> {
    let mut groups: BTreeMap<String, Vec<&FixtureWay>> = BTreeMap::new();
    for way in fixture.ways.iter().filter(|w| oracle_is_road(w)) {
        if let Some(name) = oracle_effective_name(way) {
            groups.entry(oracle_normalize(&name)).or_default().push(way);
        }
    }
    let mut chains = Vec::new();
    for ways in groups.values() {
        let mut endpoint_count: HashMap<i64, usize> = HashMap::new();
        let mut open: Vec<&&FixtureWay> = Vec::new();
        for way in ways {
            let (first, last) = (way.refs[0], *way.refs.last().unwrap());
            if first == last {
                chains.push(BTreeSet::from([way.id]));
            } else {
                *endpoint_count.entry(first).or_default() += 1;
                *endpoint_count.entry(last).or_default() += 1;
                open.push(way);
            }
        }
        // Union ways across endpoints of degree exactly two.
        let mut parent: HashMap<i64, i64> = open.iter().map(|w| (w.id, w.id)).collect();
        fn find(parent: &mut HashMap<i64, i64>, x: i64) -> i64 {
            let p = parent[&x];
            if p == x {
                x
            } else {
                let root = find(parent, p);
                parent.insert(x, root);
                root
            }
        }
        let mut by_endpoint: HashMap<i64, Vec<i64>> = HashMap::new();
        for way in &open {
            by_endpoint.entry(way.refs[0]).or_default().push(way.id);
            by_endpoint
                .entry(*way.refs.last().unwrap())
                .or_default()
                .push(way.id);
        }
        for (node, members) in &by_endpoint {
            if endpoint_count[node] == 2 && members.len() == 2 {
                let (a, b) = (find(&mut parent, members[0]), find(&mut parent, members[1]));
                parent.insert(a, b);
            }
        }
        let mut components: BTreeMap<i64, BTreeSet<i64>> = BTreeMap::new();
        for way in &open {
            let root = find(&mut parent, way.id);
            components.entry(root).or_default().insert(way.id);
        }
        chains.extend(components.into_values());
    }
    chains
}

/// Recovers one chain's node path by walking its way set from a terminal,
/// independently of the library's walk.
pub fn oracle_chain_path(fixture: &Fixture, chain_ways: &BTreeSet<i64>) -> Vec<i64> {
    let ways: Vec<&FixtureWay> = fixture
        .ways
        .iter()
        .filter(|w| chain_ways.contains(&w.id))
        .collect();
    if ways.len() == 1 {
        let mut path = Vec::new();
        let mut seen = HashSet::new();
        for r in &ways[0].refs {
            if seen.insert(*r) {
                path.push(*r);
            }
        }
        return path;
    }
    let mut endpoint_count: HashMap<i64, Vec<i64>> = HashMap::new();
    for way in &ways {
        endpoint_count.entry(way.refs[0]).or_default().push(way.id);
        endpoint_count
            .entry(*way.refs.last().unwrap())
            .or_default()
            .push(way.id);
    }
    // Start at a terminal endpoint (appears once); for pure cycles pick the
    // smallest endpoint.
    let start = endpoint_count
        .iter()
        .filter(|(_, v)| v.len() == 1)
        .map(|(n, _)| *n)
        .min()
        .unwrap_or_else(|| *endpoint_count.keys().min().unwrap());
    let mut remaining: HashMap<i64, &FixtureWay> = ways.iter().map(|w| (w.id, *w)).collect();
    let mut path: Vec<i64> = Vec::new();
    let mut seen: HashSet<i64> = HashSet::new();
    let mut cursor = start;
    while !remaining.is_empty() {
        let next_id = *endpoint_count
            .get(&cursor)
            .into_iter()
            .flatten()
            .find(|id| remaining.contains_key(id))
            .expect("chain walk got stuck");
        let way = remaining.remove(&next_id).unwrap();
        let refs: Vec<i64> = if way.refs[0] == cursor {
            way.refs.clone()
        } else {
            way.refs.iter().rev().copied().collect()
        };
        cursor = *refs.last().unwrap();
        for r in refs {
            if seen.insert(r) {
                path.push(r);
            }
        }
    }
    path
}

// ---------------------------------------------------------------------------
// Route inference oracle: exhaustive pair enumeration
// ---------------------------------------------------------------------------

/// Spans by enumeration: a flagged pair (i, j) is valid when every run of
/// unflagged positions strictly between them is at most `max_gap` long; the
/// result is the set of maximal valid pairs.
pub fn oracle_spans(flags: &[bool], max_gap: usize) -> Vec<(usize, usize)> {
    let n = flags.len();
    let valid = |i: usize, j: usize| -> bool {
        if !(flags[i] && flags[j]) || i >= j {
            return false;
        }
        let mut run = 0usize;
        for &flag in &flags[i + 1..j] {
            if flag {
                run = 0;
            } else {
                run += 1;
                if run > max_gap {
                    return false;
                }
            }
        }
        true
    };
    let mut spans = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if !valid(i, j) {
                continue;
            }
            let extendable_left = (0..i).any(|i2| valid(i2, j));
            let extendable_right = (j + 1..n).any(|j2| valid(i, j2));
            if !extendable_left && !extendable_right {
                spans.push((i, j));
            }
        }
    }
    spans.sort_unstable();
    spans.dedup();
    spans
}

// ---------------------------------------------------------------------------
// NMEA synthesis
// ---------------------------------------------------------------------------

fn nmea_checksum(body: &str) -> u8 {
    body.bytes().fold(0, |acc, b| acc ^ b)
}

fn to_nmea_coord(value: f64, lat: bool) -> (String, &'static str) {
    let hemi = if lat {
        if value >= 0.0 {
            "N"
        } else {
            "S"
        }
    } else if value >= 0.0 {
        "E"
    } else {
        "W"
    };
    let magnitude = value.abs();
    let degrees = magnitude.floor();
    let minutes = (magnitude - degrees) * 60.0;
    let text = if lat {
        format!("{:02}{:07.4}", degrees as u32, minutes)
    } else {
        format!("{:03}{:07.4}", degrees as u32, minutes)
    };
    (text, hemi)
}

/// One RMC sentence with a valid checksum.
#[allow(clippy::too_many_arguments)]
pub fn rmc_sentence(
    hh: u32,
    mm: u32,
    ss: f64,
    lat: f64,
    lon: f64,
    speed_knots: f64,
    course_deg: f64,
    ddmmyy: &str,
) -> String {
    let (lat_text, ns) = to_nmea_coord(lat, true);
    let (lon_text, ew) = to_nmea_coord(lon, false);
    let body = format!(
        "GPRMC,{hh:02}{mm:02}{ss:06.3},A,{lat_text},{ns},{lon_text},{ew},{speed_knots:.2},{course_deg:.2},{ddmmyy},,,A"
    );
    format!("${body}*{:02X}", nmea_checksum(&body))
}
