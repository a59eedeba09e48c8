//! Named polyline layers with geodesic lengths, expressible as GeoJSON.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use thiserror::Error;

use crate::geodesy::{polyline_length_m, GeoPoint};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid geojson: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid geojson: {0}")]
    Shape(String),
}

/// One polyline plus the name of the road (or layer class) it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLine {
    pub name: String,
    pub points: Vec<GeoPoint>,
}

impl LayerLine {
    pub fn length_m(&self) -> f64 {
        polyline_length_m(&self.points)
    }
}

/// A named set of polylines with a total geodesic length in metres.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RouteLayer {
    pub name: String,
    pub lines: Vec<LayerLine>,
}

impl RouteLayer {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            lines: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, points: Vec<GeoPoint>) {
        debug_assert!(points.len() >= 2, "a polyline needs at least two points");
        self.lines.push(LayerLine {
            name: name.into(),
            points,
        });
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn length_m(&self) -> f64 {
        self.lines.iter().map(LayerLine::length_m).sum()
    }

    /// GeoJSON FeatureCollection with one LineString feature per polyline.
    /// Coordinates follow the GeoJSON [lon, lat] order.
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .lines
            .iter()
            .map(|line| {
                let coords: Vec<Value> =
                    line.points.iter().map(|p| json!([p.lon, p.lat])).collect();
                json!({
                    "type": "Feature",
                    "properties": { "name": line.name, "layer": self.name },
                    "geometry": { "type": "LineString", "coordinates": coords },
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }

    pub fn write_geojson(&self, path: &Path) -> Result<(), LayerError> {
        let text = serde_json::to_string_pretty(&self.to_geojson())?;
        fs::write(path, text)?;
        Ok(())
    }

    /// Reads LineString / MultiLineString features from a GeoJSON file.
    /// Used to ingest external overlay datasets; other geometry types are
    /// skipped.
    pub fn read_geojson(path: &Path, layer_name: impl Into<String>) -> Result<Self, LayerError> {
        let text = fs::read_to_string(path)?;
        let root: Value = serde_json::from_str(&text)?;
        let mut layer = RouteLayer::new(layer_name);
        let features = root
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| LayerError::Shape("missing features array".into()))?;
        for feature in features {
            let name = feature
                .pointer("/properties/name")
                .and_then(Value::as_str)
                .unwrap_or("")
                .to_string();
            let Some(geometry) = feature.get("geometry") else {
                continue;
            };
            match geometry.get("type").and_then(Value::as_str) {
                Some("LineString") => {
                    let pts = coords_to_points(geometry.get("coordinates"))?;
                    if pts.len() >= 2 {
                        layer.push(name, pts);
                    }
                }
                Some("MultiLineString") => {
                    let parts = geometry
                        .get("coordinates")
                        .and_then(Value::as_array)
                        .ok_or_else(|| LayerError::Shape("bad MultiLineString".into()))?;
                    for part in parts {
                        let pts = coords_to_points(Some(part))?;
                        if pts.len() >= 2 {
                            layer.push(name.clone(), pts);
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(layer)
    }
}

fn coords_to_points(coords: Option<&Value>) -> Result<Vec<GeoPoint>, LayerError> {
    let arr = coords
        .and_then(Value::as_array)
        .ok_or_else(|| LayerError::Shape("missing coordinates".into()))?;
    let mut pts = Vec::with_capacity(arr.len());
    for pair in arr {
        let pair = pair
            .as_array()
            .filter(|a| a.len() >= 2)
            .ok_or_else(|| LayerError::Shape("coordinate is not a [lon, lat] pair".into()))?;
        let lon = pair[0]
            .as_f64()
            .ok_or_else(|| LayerError::Shape("non-numeric coordinate".into()))?;
        let lat = pair[1]
            .as_f64()
            .ok_or_else(|| LayerError::Shape("non-numeric coordinate".into()))?;
        pts.push(GeoPoint::new(lat, lon));
    }
    Ok(pts)
}
