//! OpenStreetMap extract parsing and road-network derivation.
//!
//! An extract is loaded into an immutable [`RoadNetwork`]: nodes, ways and a
//! membership index, from which intersection nodes and same-named way chains
//! are derived on demand and cached.

mod xml;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::OnceLock;

pub use xml::{XmlError, XmlEvent, XmlReader};

use crate::geodesy::GeoPoint;
use crate::layer::RouteLayer;

/// Highway values that are never treated as surveyable roads.
const NON_ROAD_HIGHWAY: [&str; 3] = ["footway", "pedestrian", "steps"];

/// A point on the map.
#[derive(Debug, Clone, PartialEq)]
pub struct OsmNode {
    pub id: i64,
    pub lat: f64,
    pub lon: f64,
    pub tags: Vec<(String, String)>,
}

impl OsmNode {
    pub fn point(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }
}

/// A line that can be drawn on the map: an ordered node list plus tags.
#[derive(Debug, Clone, PartialEq)]
pub struct OsmWay {
    pub id: i64,
    pub node_refs: Vec<i64>,
    pub tags: Vec<(String, String)>,
    pub name: Option<String>,
    pub is_road: bool,
    pub has_cycleway: bool,
}

impl OsmWay {
    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Name used for chain grouping: the `name` tag, or `ref` as a fallback
    /// for roads (typically highways) that carry only a route number.
    pub fn effective_name(&self) -> Option<&str> {
        self.name.as_deref().or_else(|| self.tag("ref"))
    }
}

/// A maximal run of same-named adjacent ways reassembled into one logical road.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedChain {
    pub name: String,
    pub way_ids: Vec<i64>,
    /// Ordered, deduplicated node ids spanning all member ways.
    pub node_path: Vec<i64>,
    /// Way id owning each consecutive `node_path` pair; length is
    /// `node_path.len() - 1` except for degenerate loop closures.
    pub edge_ways: Vec<i64>,
}

impl NamedChain {
    /// Indices into `node_path` of the nodes that are intersections.
    pub fn intersection_indices(&self, intersections: &BTreeSet<i64>) -> Vec<usize> {
        self.node_path
            .iter()
            .enumerate()
            .filter(|(_, n)| intersections.contains(n))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    /// A way referenced a node that is not present in the extract.
    DanglingNodeRef { way: i64, node: i64 },
    /// A way was dropped because fewer than two of its nodes resolved.
    UnroutableWay { way: i64 },
    /// A repeated node id; the first definition wins.
    DuplicateNode { node: i64 },
    /// A repeated way id; the first definition wins.
    DuplicateWay { way: i64 },
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnostic::DanglingNodeRef { way, node } => {
                write!(f, "way {way} references missing node {node}")
            }
            Diagnostic::UnroutableWay { way } => {
                write!(f, "way {way} dropped: fewer than two resolvable nodes")
            }
            Diagnostic::DuplicateNode { node } => write!(f, "duplicate node id {node}"),
            Diagnostic::DuplicateWay { way } => write!(f, "duplicate way id {way}"),
        }
    }
}

#[derive(Debug)]
pub struct ParseOutcome {
    pub network: RoadNetwork,
    pub diagnostics: Vec<Diagnostic>,
}

struct ChainSet {
    chains: Vec<NamedChain>,
    way_to_chain: HashMap<i64, usize>,
}

/// A parsed extract. Immutable once built; derived data (intersections,
/// chains) is computed lazily and cached, so sharing across threads is safe.
pub struct RoadNetwork {
    nodes: BTreeMap<i64, OsmNode>,
    ways: BTreeMap<i64, OsmWay>,
    node_memberships: HashMap<i64, Vec<(i64, usize)>>,
    intersections: OnceLock<BTreeSet<i64>>,
    chain_set: OnceLock<ChainSet>,
}

impl std::fmt::Debug for RoadNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RoadNetwork")
            .field("nodes", &self.nodes.len())
            .field("ways", &self.ways.len())
            .finish()
    }
}

/// Case-insensitive, whitespace-collapsed form used whenever two road names
/// are compared.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Parses an OSM XML extract.
///
/// Malformed XML fails with a byte offset. Ways referencing nodes absent from
/// the extract keep their resolvable nodes and report the dangling refs as
/// diagnostics; ways left with fewer than two nodes are dropped.
pub fn parse_extract(xml_bytes: &[u8]) -> Result<ParseOutcome, XmlError> {
    let mut reader = XmlReader::new(xml_bytes);
    let mut nodes: BTreeMap<i64, OsmNode> = BTreeMap::new();
    let mut raw_ways: Vec<(i64, WayChildren)> = Vec::new();
    let mut seen_ways: HashSet<i64> = HashSet::new();
    let mut diagnostics = Vec::new();

    loop {
        match reader.next_event()? {
            XmlEvent::Eof => break,
            XmlEvent::End { .. } => {}
            XmlEvent::Start {
                name,
                attrs,
                self_closing,
            } => match name.as_str() {
                "osm" => {}
                "node" => {
                    let node = parse_node(&attrs, &reader)?;
                    let id = node.id;
                    let mut node = node;
                    if !self_closing {
                        node.tags = collect_tags(&mut reader, "node")?;
                    }
                    if nodes.insert(id, node).is_some() {
                        // Latest definition wins, matching osmium output order.
                        diagnostics.push(Diagnostic::DuplicateNode { node: id });
                    }
                }
                "way" => {
                    let id = required_i64(&attrs, "id", &reader)?;
                    let (refs, tags) = if self_closing {
                        (Vec::new(), Vec::new())
                    } else {
                        collect_way_children(&mut reader)?
                    };
                    if !seen_ways.insert(id) {
                        diagnostics.push(Diagnostic::DuplicateWay { way: id });
                    } else {
                        raw_ways.push((id, (refs, tags)));
                    }
                }
                _ => {
                    if !self_closing {
                        reader.skip_subtree(&name)?;
                    }
                }
            },
        }
    }

    let mut ways = BTreeMap::new();
    for (id, (refs, tags)) in raw_ways {
        let mut resolved = Vec::with_capacity(refs.len());
        for r in refs {
            if nodes.contains_key(&r) {
                resolved.push(r);
            } else {
                diagnostics.push(Diagnostic::DanglingNodeRef { way: id, node: r });
            }
        }
        if resolved.len() < 2 {
            diagnostics.push(Diagnostic::UnroutableWay { way: id });
            continue;
        }
        let name = tags
            .iter()
            .find(|(k, _)| k == "name")
            .map(|(_, v)| v.clone());
        let highway = tags.iter().find(|(k, _)| k == "highway").map(|(_, v)| v);
        let is_road = matches!(highway, Some(v) if !NON_ROAD_HIGHWAY.contains(&v.as_str()));
        let has_cycleway = tags.iter().any(|(k, _)| k.starts_with("cycleway"));
        ways.insert(
            id,
            OsmWay {
                id,
                node_refs: resolved,
                tags,
                name,
                is_road,
                has_cycleway,
            },
        );
    }

    let mut node_memberships: HashMap<i64, Vec<(i64, usize)>> = HashMap::new();
    for way in ways.values() {
        for (idx, node) in way.node_refs.iter().enumerate() {
            node_memberships.entry(*node).or_default().push((way.id, idx));
        }
    }

    Ok(ParseOutcome {
        network: RoadNetwork {
            nodes,
            ways,
            node_memberships,
            intersections: OnceLock::new(),
            chain_set: OnceLock::new(),
        },
        diagnostics,
    })
}

fn attr<'a>(attrs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    attrs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

fn required_i64(attrs: &[(String, String)], key: &str, reader: &XmlReader) -> Result<i64, XmlError> {
    attr(attrs, key)
        .ok_or_else(|| XmlError {
            offset: reader.offset(),
            message: format!("missing attribute {key:?}"),
        })?
        .parse()
        .map_err(|_| XmlError {
            offset: reader.offset(),
            message: format!("attribute {key:?} is not an integer"),
        })
}

fn required_f64(attrs: &[(String, String)], key: &str, reader: &XmlReader) -> Result<f64, XmlError> {
    attr(attrs, key)
        .ok_or_else(|| XmlError {
            offset: reader.offset(),
            message: format!("missing attribute {key:?}"),
        })?
        .parse()
        .map_err(|_| XmlError {
            offset: reader.offset(),
            message: format!("attribute {key:?} is not a number"),
        })
}

fn parse_node(attrs: &[(String, String)], reader: &XmlReader) -> Result<OsmNode, XmlError> {
    Ok(OsmNode {
        id: required_i64(attrs, "id", reader)?,
        lat: required_f64(attrs, "lat", reader)?,
        lon: required_f64(attrs, "lon", reader)?,
        tags: Vec::new(),
    })
}

fn collect_tags(reader: &mut XmlReader, parent: &str) -> Result<Vec<(String, String)>, XmlError> {
    let mut tags = Vec::new();
    loop {
        match reader.next_event()? {
            XmlEvent::Start {
                name,
                attrs,
                self_closing,
            } => {
                if name == "tag" {
                    push_tag(&mut tags, &attrs);
                    if !self_closing {
                        reader.skip_subtree("tag")?;
                    }
                } else if !self_closing {
                    reader.skip_subtree(&name)?;
                }
            }
            XmlEvent::End { name } if name == parent => return Ok(tags),
            XmlEvent::End { .. } => {}
            XmlEvent::Eof => {
                return Err(XmlError {
                    offset: reader.offset(),
                    message: format!("unexpected end of input inside <{parent}>"),
                })
            }
        }
    }
}

type WayChildren = (Vec<i64>, Vec<(String, String)>);

fn collect_way_children(reader: &mut XmlReader) -> Result<WayChildren, XmlError> {
    let mut refs = Vec::new();
    let mut tags = Vec::new();
    loop {
        match reader.next_event()? {
            XmlEvent::Start {
                name,
                attrs,
                self_closing,
            } => {
                match name.as_str() {
                    "nd" => refs.push(required_i64(&attrs, "ref", reader)?),
                    "tag" => push_tag(&mut tags, &attrs),
                    _ => {}
                }
                if !self_closing {
                    reader.skip_subtree(&name)?;
                }
            }
            XmlEvent::End { name } if name == "way" => return Ok((refs, tags)),
            XmlEvent::End { .. } => {}
            XmlEvent::Eof => {
                return Err(XmlError {
                    offset: reader.offset(),
                    message: "unexpected end of input inside <way>".into(),
                })
            }
        }
    }
}

fn push_tag(tags: &mut Vec<(String, String)>, attrs: &[(String, String)]) {
    if let (Some(k), Some(v)) = (attr(attrs, "k"), attr(attrs, "v")) {
        tags.push((k.to_string(), v.to_string()));
    }
}

impl RoadNetwork {
    pub fn nodes(&self) -> &BTreeMap<i64, OsmNode> {
        &self.nodes
    }

    pub fn ways(&self) -> &BTreeMap<i64, OsmWay> {
        &self.ways
    }

    pub fn node(&self, id: i64) -> Option<&OsmNode> {
        self.nodes.get(&id)
    }

    pub fn way(&self, id: i64) -> Option<&OsmWay> {
        self.ways.get(&id)
    }

    pub fn point(&self, node_id: i64) -> Option<GeoPoint> {
        self.nodes.get(&node_id).map(OsmNode::point)
    }

    pub fn memberships(&self, node_id: i64) -> &[(i64, usize)] {
        self.node_memberships
            .get(&node_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn way_points(&self, way: &OsmWay) -> Vec<GeoPoint> {
        way.node_refs
            .iter()
            .filter_map(|n| self.point(*n))
            .collect()
    }

    /// Nodes shared by two or more road ways with distinct (normalized)
    /// names. Unnamed ways contribute no name; a road split into several
    /// same-named ways does not create intersections at the joins.
    pub fn intersections(&self) -> &BTreeSet<i64> {
        self.intersections.get_or_init(|| {
            let mut out = BTreeSet::new();
            for (&node, members) in &self.node_memberships {
                if members.len() < 2 {
                    continue;
                }
                let mut names: HashSet<String> = HashSet::new();
                for (way_id, _) in members {
                    if let Some(way) = self.ways.get(way_id) {
                        if way.is_road {
                            if let Some(name) = &way.name {
                                names.insert(normalize_name(name));
                                if names.len() >= 2 {
                                    break;
                                }
                            }
                        }
                    }
                }
                if names.len() >= 2 {
                    out.insert(node);
                }
            }
            out
        })
    }

    pub fn is_intersection(&self, node_id: i64) -> bool {
        self.intersections().contains(&node_id)
    }

    /// Maximal linear chains of same-named road ways, split at branch nodes
    /// (three or more same-named way endpoints meeting).
    pub fn chains(&self) -> &[NamedChain] {
        &self.chain_set().chains
    }

    pub fn chain_of_way(&self, way_id: i64) -> Option<usize> {
        self.chain_set().way_to_chain.get(&way_id).copied()
    }

    pub fn chain(&self, index: usize) -> &NamedChain {
        &self.chain_set().chains[index]
    }

    fn chain_set(&self) -> &ChainSet {
        self.chain_set.get_or_init(|| self.build_chains())
    }

    fn build_chains(&self) -> ChainSet {
        // Group road ways by normalized effective name.
        let mut groups: BTreeMap<String, Vec<i64>> = BTreeMap::new();
        for way in self.ways.values() {
            if !way.is_road {
                continue;
            }
            if let Some(name) = way.effective_name() {
                groups.entry(normalize_name(name)).or_default().push(way.id);
            }
        }

        let mut chains = Vec::new();
        for ids in groups.values() {
            self.chain_group(ids, &mut chains);
        }
        chains.sort_by(|a, b| {
            (a.name.as_str(), a.way_ids.first()).cmp(&(b.name.as_str(), b.way_ids.first()))
        });
        let mut way_to_chain = HashMap::new();
        for (idx, chain) in chains.iter().enumerate() {
            for way in &chain.way_ids {
                way_to_chain.insert(*way, idx);
            }
        }
        ChainSet {
            chains,
            way_to_chain,
        }
    }

    fn chain_group(&self, way_ids: &[i64], out: &mut Vec<NamedChain>) {
        let mut endpoint_map: HashMap<i64, Vec<i64>> = HashMap::new();
        let mut open_ways = Vec::new();
        let mut visited: HashSet<i64> = HashSet::new();

        for &id in way_ids {
            let way = &self.ways[&id];
            let first = *way.node_refs.first().unwrap();
            let last = *way.node_refs.last().unwrap();
            if first == last {
                // A closed loop chains with nothing; it becomes its own chain.
                visited.insert(id);
                out.push(self.assemble_chain(&[id], first));
            } else {
                endpoint_map.entry(first).or_default().push(id);
                endpoint_map.entry(last).or_default().push(id);
                open_ways.push(id);
            }
        }
        for list in endpoint_map.values_mut() {
            list.sort_unstable();
        }
        let degree = |node: i64| endpoint_map.get(&node).map_or(0, Vec::len);

        let walk = |start_way: i64, start_node: i64, visited: &mut HashSet<i64>| -> Vec<i64> {
            let mut chain = vec![start_way];
            visited.insert(start_way);
            let mut current = start_way;
            let mut exit = other_end(&self.ways[&current], start_node);
            loop {
                if degree(exit) != 2 {
                    break;
                }
                let next = endpoint_map[&exit]
                    .iter()
                    .copied()
                    .find(|w| *w != current && !visited.contains(w));
                let Some(next) = next else { break };
                visited.insert(next);
                chain.push(next);
                exit = other_end(&self.ways[&next], exit);
                current = next;
            }
            chain
        };

        // Pass 1: walks start from terminal or branch endpoints, so chains
        // break exactly at nodes of degree >= 3 within the name group.
        for &id in &open_ways {
            if visited.contains(&id) {
                continue;
            }
            let way = &self.ways[&id];
            let first = *way.node_refs.first().unwrap();
            let last = *way.node_refs.last().unwrap();
            let start = if degree(first) != 2 {
                Some(first)
            } else if degree(last) != 2 {
                Some(last)
            } else {
                None
            };
            if let Some(start_node) = start {
                let chain_ways = walk(id, start_node, &mut visited);
                out.push(self.assemble_chain(&chain_ways, start_node));
            }
        }
        // Pass 2: anything left is a pure cycle of degree-2 joins.
        for &id in &open_ways {
            if visited.contains(&id) {
                continue;
            }
            let start_node = *self.ways[&id].node_refs.first().unwrap();
            let chain_ways = walk(id, start_node, &mut visited);
            out.push(self.assemble_chain(&chain_ways, start_node));
        }
    }

    fn assemble_chain(&self, way_ids: &[i64], start_node: i64) -> NamedChain {
        let mut node_path: Vec<i64> = Vec::new();
        let mut edge_ways: Vec<i64> = Vec::new();
        let mut seen: HashSet<i64> = HashSet::new();
        let mut entry = start_node;
        for &way_id in way_ids {
            let way = &self.ways[&way_id];
            let forward = *way.node_refs.first().unwrap() == entry;
            let refs: Vec<i64> = if forward {
                way.node_refs.clone()
            } else {
                way.node_refs.iter().rev().copied().collect()
            };
            entry = *refs.last().unwrap();
            for (i, node) in refs.iter().enumerate() {
                if node_path.is_empty() {
                    node_path.push(*node);
                    seen.insert(*node);
                    continue;
                }
                if i == 0 {
                    // Shared endpoint with the previous way.
                    continue;
                }
                if seen.insert(*node) {
                    node_path.push(*node);
                    edge_ways.push(way_id);
                }
            }
        }
        let display_name = self.ways[&way_ids[0]]
            .effective_name()
            .unwrap_or("")
            .to_string();
        NamedChain {
            name: display_name,
            way_ids: way_ids.to_vec(),
            node_path,
            edge_ways,
        }
    }

    /// One polyline per maximal run of cycleway-tagged ways along each chain.
    pub fn cycleway_layer(&self) -> RouteLayer {
        let mut layer = RouteLayer::new("osm");
        for chain in self.chains() {
            let mut run: Vec<GeoPoint> = Vec::new();
            for (i, way_id) in chain.edge_ways.iter().enumerate() {
                let tagged = self.ways[way_id].has_cycleway;
                if tagged {
                    if run.is_empty() {
                        if let Some(p) = self.point(chain.node_path[i]) {
                            run.push(p);
                        }
                    }
                    if let Some(p) = self.point(chain.node_path[i + 1]) {
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
        layer
    }

    /// Serializes the retained nodes and ways back to OSM XML. Useful for
    /// exporting fixtures and for round-trip checks.
    pub fn to_osm_xml(&self) -> String {
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\">\n");
        for node in self.nodes.values() {
            if node.tags.is_empty() {
                let _ = writeln!(
                    out,
                    "  <node id=\"{}\" lat=\"{:.7}\" lon=\"{:.7}\"/>",
                    node.id, node.lat, node.lon
                );
            } else {
                let _ = writeln!(
                    out,
                    "  <node id=\"{}\" lat=\"{:.7}\" lon=\"{:.7}\">",
                    node.id, node.lat, node.lon
                );
                for (k, v) in &node.tags {
                    let _ = writeln!(
                        out,
                        "    <tag k=\"{}\" v=\"{}\"/>",
                        xml::escape_attr(k),
                        xml::escape_attr(v)
                    );
                }
                out.push_str("  </node>\n");
            }
        }
        for way in self.ways.values() {
            let _ = writeln!(out, "  <way id=\"{}\">", way.id);
            for r in &way.node_refs {
                let _ = writeln!(out, "    <nd ref=\"{r}\"/>");
            }
            for (k, v) in &way.tags {
                let _ = writeln!(
                    out,
                    "    <tag k=\"{}\" v=\"{}\"/>",
                    xml::escape_attr(k),
                    xml::escape_attr(v)
                );
            }
            out.push_str("  </way>\n");
        }
        out.push_str("</osm>\n");
        out
    }
}

fn other_end(way: &OsmWay, node: i64) -> i64 {
    let first = *way.node_refs.first().unwrap();
    let last = *way.node_refs.last().unwrap();
    if node == first {
        last
    } else {
        first
    }
}
