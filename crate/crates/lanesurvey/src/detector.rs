//! Adapter between the pipeline and an external object detector, plus the
//! filtering that turns raw detections into mappable evidence.
//!
//! The detector runs out of process: it receives a manifest of image paths,
//! an output path and a label map, and writes one CSV row per detection.
//! Keeping inference external means any model (or a stub) can be plugged in.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::Rgb;
use thiserror::Error;

use crate::geodesy::{distance_m, GeoPoint};

/// The class that counts as a bicycle-lane hit. Other classes exist to teach
/// the detector what a marking is not, and never produce hits.
pub const TARGET_CLASS: &str = "BikeLaneMarker";

/// Confidence threshold applied when none is configured.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.55;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("adapter {program:?} exited with {status}: {stderr}")]
    AdapterFailed {
        program: String,
        status: String,
        stderr: String,
    },
    #[error("detection row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("detection row {row}: unknown label {label:?}")]
    UnknownLabel { row: usize, label: String },
    #[error("detection mask: {0}")]
    BadMask(String),
    #[error("image {0:?} failed to load: {1}")]
    BadImage(String, String),
}

/// One detection from the external model, in normalized image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_ref: String,
    pub class_label: String,
    pub confidence: f64,
    /// x_min, y_min, x_max, y_max in [0, 1].
    pub bbox: [f64; 4],
}

impl Detection {
    pub fn centroid(&self) -> (f64, f64) {
        (
            0.5 * (self.bbox[0] + self.bbox[2]),
            0.5 * (self.bbox[1] + self.bbox[3]),
        )
    }
}

/// Image-space polygon restricting which detections count; excludes the car
/// bonnet and the far side of the road.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMask {
    vertices: Vec<(f64, f64)>,
}

impl DetectionMask {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self, DetectorError> {
        if vertices.len() < 3 {
            return Err(DetectorError::BadMask(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        Ok(Self { vertices })
    }

    pub fn full_frame() -> Self {
        Self {
            vertices: vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)],
        }
    }

    /// Left-hand side of the road in front of the bonnet; approximates the
    /// region shown in the survey configuration and is overridable.
    pub fn dashcam_default() -> Self {
        Self {
            vertices: vec![(0.02, 0.45), (0.60, 0.45), (0.60, 0.85), (0.02, 0.85)],
        }
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        point_in_polygon(&self.vertices, x, y)
    }
}

/// Even-odd ray casting; points exactly on an edge count as inside closely
/// enough for mask purposes.
pub(crate) fn point_in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if ((yi > y) != (yj > y)) && (x < (xj - xi) * (y - yi) / (yj - yi) + xi) {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// A detection tied to the ground: where the image was captured, and the way
/// and node the sample came from when known.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub detection: Detection,
    pub point: GeoPoint,
    pub way_id: Option<i64>,
    pub node_id: Option<i64>,
}

/// How to invoke the external detector. The gateway appends three arguments:
/// manifest path, output path, label map path.
#[derive(Debug, Clone)]
pub struct AdapterCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl AdapterCommand {
    pub fn new(program: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
        }
    }
}

/// Loads a label map: one class label per line, blank lines and `#` comments
/// ignored.
pub fn read_label_map(path: &Path) -> Result<Vec<String>, DetectorError> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Runs the adapter over a manifest and parses its detection output.
pub fn run_detector(
    manifest: &Path,
    adapter: &AdapterCommand,
    label_map: &Path,
) -> Result<Vec<Detection>, DetectorError> {
    let labels = read_label_map(label_map)?;
    let out_file = tempfile::NamedTempFile::new()?;
    let output = Command::new(&adapter.program)
        .args(&adapter.args)
        .arg(manifest)
        .arg(out_file.path())
        .arg(label_map)
        .output()
        .map_err(|e| DetectorError::AdapterFailed {
            program: adapter.program.clone(),
            status: "spawn failed".into(),
            stderr: e.to_string(),
        })?;
    if !output.status.success() {
        return Err(DetectorError::AdapterFailed {
            program: adapter.program.clone(),
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
        });
    }
    parse_detection_file(out_file.path(), &labels)
}

/// Parses adapter output: `image_ref,class_label,confidence,x_min,y_min,x_max,y_max`
/// per row, no header. Every row is validated; unknown labels are rejected.
pub fn parse_detection_file(path: &Path, labels: &[String]) -> Result<Vec<Detection>, DetectorError> {
    let text = fs::read_to_string(path)?;
    let mut detections = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(DetectorError::BadRow {
                row,
                message: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let class_label = fields[1].trim().to_string();
        if !labels.iter().any(|l| l == &class_label) {
            return Err(DetectorError::UnknownLabel {
                row,
                label: class_label,
            });
        }
        let mut nums = [0.0f64; 5];
        for (k, field) in fields[2..].iter().enumerate() {
            nums[k] = field.trim().parse().map_err(|_| DetectorError::BadRow {
                row,
                message: format!("field {:?} is not a number", field),
            })?;
        }
        let (confidence, bbox) = (nums[0], [nums[1], nums[2], nums[3], nums[4]]);
        if !(0.0..=1.0).contains(&confidence) {
            return Err(DetectorError::BadRow {
                row,
                message: format!("confidence {confidence} outside [0, 1]"),
            });
        }
        let in_range = bbox.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_range || bbox[0] >= bbox[2] || bbox[1] >= bbox[3] {
            return Err(DetectorError::BadRow {
                row,
                message: format!("bad bbox {bbox:?}"),
            });
        }
        detections.push(Detection {
            image_ref: fields[0].trim().to_string(),
            class_label,
            confidence,
            bbox,
        });
    }
    Ok(detections)
}

/// Keeps target-class detections at or above the confidence threshold.
/// Non-target classes never produce hits.
pub fn apply_threshold(detections: Vec<Detection>, min_conf: f64) -> Vec<Detection> {
    detections
        .into_iter()
        .filter(|d| d.class_label == TARGET_CLASS && d.confidence >= min_conf)
        .collect()
}

/// Keeps detections whose bbox centroid lies inside the mask polygon.
pub fn apply_mask(detections: Vec<Detection>, mask: &DetectionMask) -> Vec<Detection> {
    detections
        .into_iter()
        .filter(|d| {
            let (x, y) = d.centroid();
            mask.contains(x, y)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SupportFilterConfig {
    pub radius_m: f64,
    pub min_separation_m: f64,
    pub required: usize,
}

impl Default for SupportFilterConfig {
    fn default() -> Self {
        Self {
            radius_m: 50.0,
            min_separation_m: 10.0,
            required: 2,
        }
    }
}

/// Spatial support rule: a record survives only when enough further records
/// sit within the radius but at least the minimum separation away. One-off
/// detections with nothing nearby are dropped, and so are bursts from a
/// motionless camera, whose records all fall inside the separation floor.
pub fn support_filter(
    records: Vec<DetectionRecord>,
    cfg: &SupportFilterConfig,
) -> Vec<DetectionRecord> {
    if cfg.required == 0 || cfg.radius_m <= 0.0 {
        return records;
    }
    let keep: Vec<bool> = records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut support = 0;
            for (j, other) in records.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = distance_m(rec.point, other.point);
                if d >= cfg.min_separation_m && d <= cfg.radius_m {
                    support += 1;
                    if support >= cfg.required {
                        return true;
                    }
                }
            }
            false
        })
        .collect();
    records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}

#[derive(Debug, Default, PartialEq)]
pub struct PartitionSummary {
    pub hits: usize,
    pub misses: usize,
    pub log_rows: usize,
}

/// Copies every manifest image into `hits/` (with bounding boxes rendered)
/// or `miss/`, and appends one detection log row per hit.
pub fn partition_outputs(
    records: &[DetectionRecord],
    images: &[(String, PathBuf)],
    hits_dir: &Path,
    miss_dir: &Path,
    log_path: &Path,
) -> Result<PartitionSummary, DetectorError> {
    fs::create_dir_all(hits_dir)?;
    fs::create_dir_all(miss_dir)?;
    let mut by_ref: HashMap<&str, Vec<&DetectionRecord>> = HashMap::new();
    for rec in records {
        by_ref
            .entry(rec.detection.image_ref.as_str())
            .or_default()
            .push(rec);
    }

    let mut log = csv::Writer::from_path(log_path)
        .map_err(|e| DetectorError::BadRow { row: 0, message: e.to_string() })?;
    log.write_record([
        "image_ref", "lat", "lon", "class_label", "confidence", "x_min", "y_min", "x_max",
        "y_max", "way_id", "node_id",
    ])
    .map_err(|e| DetectorError::BadRow { row: 0, message: e.to_string() })?;

    let mut summary = PartitionSummary::default();
    for (image_ref, path) in images {
        let file_name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| image_ref.replace(['/', '\\'], "_"));
        match by_ref.get(image_ref.as_str()) {
            Some(recs) => {
                // Cached bytes are whatever the provider returned; sniff the
                // format from content rather than trusting the extension.
                let mut img = image::ImageReader::open(path)
                    .and_then(|r| r.with_guessed_format())
                    .map_err(|e| DetectorError::BadImage(image_ref.clone(), e.to_string()))?
                    .decode()
                    .map_err(|e| DetectorError::BadImage(image_ref.clone(), e.to_string()))?
                    .to_rgb8();
                for rec in recs {
                    draw_bbox(&mut img, rec.detection.bbox);
                }
                img.save(hits_dir.join(&file_name))
                    .map_err(|e| DetectorError::BadImage(image_ref.clone(), e.to_string()))?;
                summary.hits += 1;
                for rec in recs {
                    let b = rec.detection.bbox;
                    log.write_record([
                        rec.detection.image_ref.clone(),
                        format!("{:.7}", rec.point.lat),
                        format!("{:.7}", rec.point.lon),
                        rec.detection.class_label.clone(),
                        format!("{:.4}", rec.detection.confidence),
                        format!("{:.6}", b[0]),
                        format!("{:.6}", b[1]),
                        format!("{:.6}", b[2]),
                        format!("{:.6}", b[3]),
                        rec.way_id.map(|w| w.to_string()).unwrap_or_default(),
                        rec.node_id.map(|n| n.to_string()).unwrap_or_default(),
                    ])
                    .map_err(|e| DetectorError::BadRow { row: 0, message: e.to_string() })?;
                    summary.log_rows += 1;
                }
            }
            None => {
                fs::copy(path, miss_dir.join(&file_name))?;
                summary.misses += 1;
            }
        }
    }
    log.flush()?;
    Ok(summary)
}

/// Red 2-pixel rectangle at the detection's pixel coordinates
/// (normalized bbox scaled by the image dimensions).
fn draw_bbox(img: &mut image::RgbImage, bbox: [f64; 4]) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x0 = (bbox[0] * w).round() as i64;
    let y0 = (bbox[1] * h).round() as i64;
    let x1 = (bbox[2] * w).round() as i64;
    let y1 = (bbox[3] * h).round() as i64;
    let red = Rgb([255u8, 0, 0]);
    let mut put = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, red);
        }
    };
    for t in 0..2i64 {
        for x in x0..=x1 {
            put(x, y0 + t);
            put(x, y1 - t);
        }
        for y in y0..=y1 {
            put(x0 + t, y);
            put(x1 - t, y);
        }
    }
}

/// Reads a detection log back into records (the filtered log has the same
/// shape).
pub fn read_detection_log(path: &Path) -> Result<Vec<DetectionRecord>, DetectorError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| DetectorError::BadRow { row: 0, message: e.to_string() })?;
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| DetectorError::BadRow {
            row: i + 1,
            message: e.to_string(),
        })?;
        let get = |j: usize| row.get(j).unwrap_or("").trim().to_string();
        let num = |j: usize| -> Result<f64, DetectorError> {
            row.get(j)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| DetectorError::BadRow {
                    row: i + 1,
                    message: format!("bad number in column {j}"),
                })
        };
        let opt_int = |j: usize| -> Option<i64> { row.get(j).and_then(|v| v.trim().parse().ok()) };
        records.push(DetectionRecord {
            detection: Detection {
                image_ref: get(0),
                class_label: get(3),
                confidence: num(4)?,
                bbox: [num(5)?, num(6)?, num(7)?, num(8)?],
            },
            point: GeoPoint::new(num(1)?, num(2)?),
            way_id: opt_int(9),
            node_id: opt_int(10),
        });
    }
    Ok(records)
}

/// Writes records in the detection log format; used for the filtered log.
pub fn write_detection_log(records: &[DetectionRecord], path: &Path) -> Result<(), DetectorError> {
    let mut log = csv::Writer::from_path(path)
        .map_err(|e| DetectorError::BadRow { row: 0, message: e.to_string() })?;
    log.write_record([
        "image_ref", "lat", "lon", "class_label", "confidence", "x_min", "y_min", "x_max",
        "y_max", "way_id", "node_id",
    ])
    .map_err(|e| DetectorError::BadRow { row: 0, message: e.to_string() })?;
    for rec in records {
        let b = rec.detection.bbox;
        log.write_record([
            rec.detection.image_ref.clone(),
            format!("{:.7}", rec.point.lat),
            format!("{:.7}", rec.point.lon),
            rec.detection.class_label.clone(),
            format!("{:.4}", rec.detection.confidence),
            format!("{:.6}", b[0]),
            format!("{:.6}", b[1]),
            format!("{:.6}", b[2]),
            format!("{:.6}", b[3]),
            rec.way_id.map(|w| w.to_string()).unwrap_or_default(),
            rec.node_id.map(|n| n.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| DetectorError::BadRow { row: 0, message: e.to_string() })?;
    }
    log.flush()?;
    Ok(())
}
