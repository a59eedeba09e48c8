//! Shared helpers for unit tests: compact network fixtures built through the
//! same XML path production data takes.

use crate::osm::{parse_extract, RoadNetwork};

pub type WaySpec<'a> = (i64, &'a [i64], &'a [(&'a str, &'a str)]);

pub fn osm_xml(nodes: &[(i64, f64, f64)], ways: &[WaySpec]) -> String {
    let mut out = String::from("<?xml version=\"1.0\"?>\n<osm>\n");
    for (id, lat, lon) in nodes {
        out.push_str(&format!(
            "  <node id=\"{id}\" lat=\"{lat:.7}\" lon=\"{lon:.7}\"/>\n"
        ));
    }
    for (id, refs, tags) in ways {
        out.push_str(&format!("  <way id=\"{id}\">\n"));
        for r in refs.iter() {
            out.push_str(&format!("    <nd ref=\"{r}\"/>\n"));
        }
        for (k, v) in tags.iter() {
            out.push_str(&format!("    <tag k=\"{k}\" v=\"{v}\"/>\n"));
        }
        out.push_str("  </way>\n");
    }
    out.push_str("</osm>\n");
    out
}

pub fn build_network(nodes: &[(i64, f64, f64)], ways: &[WaySpec]) -> RoadNetwork {
    parse_extract(osm_xml(nodes, ways).as_bytes())
        .expect("test fixture parses")
        .network
}

/// A main street running south with `crossings` cross streets.
///
/// Main-street nodes are 100, 101, ... spaced about 100 m apart; the cross
/// street at main node `100 + k` uses nodes `900 + 10k` (west) and
/// `901 + 10k` (east) and way id `20 + k`. The main street is a single way
/// (id 10) unless `split_main` asks for one way per block.
pub fn grid_network(crossings: usize, split_main: bool) -> RoadNetwork {
    let mut nodes: Vec<(i64, f64, f64)> = Vec::new();
    let main_len = crossings + 2;
    for i in 0..main_len {
        nodes.push((100 + i as i64, -38.0000 - 0.0009 * i as f64, 145.0000));
    }
    type OwnedWay = (i64, Vec<i64>, Vec<(String, String)>);
    let mut cross_ways: Vec<OwnedWay> = Vec::new();
    for k in 0..crossings {
        let main_node = 100 + (k + 1) as i64;
        let lat = -38.0000 - 0.0009 * (k + 1) as f64;
        let west = 900 + 10 * k as i64;
        let east = 901 + 10 * k as i64;
        nodes.push((west, lat, 144.9989));
        nodes.push((east, lat, 145.0011));
        cross_ways.push((
            20 + k as i64,
            vec![west, main_node, east],
            vec![
                ("highway".to_string(), "residential".to_string()),
                ("name".to_string(), format!("Cross {k} Road")),
            ],
        ));
    }
    let mut ways: Vec<OwnedWay> = Vec::new();
    let main_tags = vec![
        ("highway".to_string(), "residential".to_string()),
        ("name".to_string(), "Main Street".to_string()),
    ];
    if split_main {
        for i in 0..main_len - 1 {
            ways.push((
                10 + 100 * i as i64,
                vec![100 + i as i64, 101 + i as i64],
                main_tags.clone(),
            ));
        }
    } else {
        ways.push((10, (0..main_len).map(|i| 100 + i as i64).collect(), main_tags));
    }
    ways.extend(cross_ways);

    type BorrowedTags<'a> = Vec<(&'a str, &'a str)>;
    let way_refs: Vec<(i64, &[i64], BorrowedTags)> = ways
        .iter()
        .map(|(id, refs, tags)| {
            (
                *id,
                refs.as_slice(),
                tags.iter()
                    .map(|(k, v)| (k.as_str(), v.as_str()))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let borrowed: Vec<WaySpec> = way_refs
        .iter()
        .map(|(id, refs, tags)| (*id, *refs, tags.as_slice()))
        .collect();
    build_network(&nodes, &borrowed)
}
