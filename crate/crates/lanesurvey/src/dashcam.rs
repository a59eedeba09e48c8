//! Dash-cam ingestion: NMEA 0183 tracks paired with extracted frame
//! sequences, producing geotagged frames.
//!
//! The camera writes one NMEA file per minute of footage with fixes at one
//! second intervals. Video decoding is delegated: frames arrive as an image
//! directory plus a manifest of source frame indices.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDate, NaiveTime};
use thiserror::Error;

use crate::geodesy::{GeoPoint, Heading};

#[derive(Debug, Error)]
pub enum NmeaError {
    #[error("no valid fixes in track")]
    EmptyTrack,
    #[error("no frames to geotag")]
    EmptyManifest,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame manifest: {0}")]
    BadManifest(String),
}

/// One GPS fix from the track.
#[derive(Debug, Clone, PartialEq)]
pub struct NmeaFix {
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: f64,
    pub point: GeoPoint,
    pub heading: Heading,
    pub altitude_m: Option<f64>,
    pub speed_mps: Option<f64>,
}

#[derive(Debug, Default)]
pub struct NmeaParse {
    pub fixes: Vec<NmeaFix>,
    pub diagnostics: Vec<String>,
}

const KNOTS_TO_MPS: f64 = 0.514444;

pub(crate) fn nmea_checksum(body: &str) -> u8 {
    body.bytes().fold(0, |acc, b| acc ^ b)
}

/// Parses RMC (position, heading, speed) and GGA (altitude) sentences.
/// Checksums are validated; invalid or void sentences are skipped with a
/// diagnostic. Fixes come out strictly increasing in time.
pub fn parse_nmea(text: &str) -> Result<NmeaParse, NmeaError> {
    let mut out = NmeaParse::default();
    // Altitude arrives in GGA sentences keyed by time of day.
    let mut altitudes: BTreeMap<i64, f64> = BTreeMap::new();
    struct RawFix {
        tod_ds: i64, // deciseconds since midnight, for GGA pairing
        timestamp: f64,
        point: GeoPoint,
        heading: Option<Heading>,
        speed_mps: Option<f64>,
    }
    let mut raw: Vec<RawFix> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let n = lineno + 1;
        let Some(rest) = line.strip_prefix('$') else {
            out.diagnostics.push(format!("line {n}: missing '$'"));
            continue;
        };
        let Some((body, check)) = rest.rsplit_once('*') else {
            out.diagnostics.push(format!("line {n}: missing checksum"));
            continue;
        };
        let expected = u8::from_str_radix(check.trim(), 16).ok();
        if expected != Some(nmea_checksum(body)) {
            out.diagnostics.push(format!("line {n}: checksum mismatch"));
            continue;
        }
        let fields: Vec<&str> = body.split(',').collect();
        let kind = fields[0];
        if kind.len() < 5 {
            continue;
        }
        match &kind[kind.len() - 3..] {
            "RMC" => {
                if fields.len() < 10 {
                    out.diagnostics.push(format!("line {n}: short RMC sentence"));
                    continue;
                }
                if fields[2] != "A" {
                    out.diagnostics.push(format!("line {n}: fix not valid (status {:?})", fields[2]));
                    continue;
                }
                let (Some(time), Some(date)) = (parse_time(fields[1]), parse_date(fields[9]))
                else {
                    out.diagnostics.push(format!("line {n}: bad RMC time or date"));
                    continue;
                };
                let (Some(lat), Some(lon)) = (
                    parse_coord(fields[3], fields[4], 2),
                    parse_coord(fields[5], fields[6], 3),
                ) else {
                    out.diagnostics.push(format!("line {n}: bad RMC position"));
                    continue;
                };
                let heading = fields[8].parse::<f64>().ok().map(Heading::new);
                let speed_mps = fields[7].parse::<f64>().ok().map(|kn| kn * KNOTS_TO_MPS);
                let (tod_s, frac) = time;
                let timestamp = date
                    .and_time(NaiveTime::from_num_seconds_from_midnight_opt(tod_s, 0).unwrap())
                    .and_utc()
                    .timestamp() as f64
                    + frac;
                raw.push(RawFix {
                    tod_ds: tod_s as i64 * 10 + (frac * 10.0).round() as i64,
                    timestamp,
                    point: GeoPoint::new(lat, lon),
                    heading,
                    speed_mps,
                });
            }
            "GGA" => {
                if fields.len() < 10 {
                    continue;
                }
                if let (Some((tod_s, frac)), Ok(alt)) = (parse_time(fields[1]), fields[9].parse())
                {
                    altitudes.insert(tod_s as i64 * 10 + (frac * 10.0).round() as i64, alt);
                }
            }
            _ => {}
        }
    }

    // Headings may be blank while stationary; fill from neighbours.
    let first_heading = raw.iter().find_map(|f| f.heading);
    let mut last_heading = first_heading;
    let mut prev_ts = f64::NEG_INFINITY;
    for f in raw {
        if f.timestamp <= prev_ts {
            out.diagnostics
                .push(format!("non-increasing timestamp {} skipped", f.timestamp));
            continue;
        }
        prev_ts = f.timestamp;
        if let Some(h) = f.heading {
            last_heading = Some(h);
        }
        out.fixes.push(NmeaFix {
            timestamp: f.timestamp,
            point: f.point,
            heading: last_heading.unwrap_or(Heading::new(0.0)),
            altitude_m: altitudes.get(&f.tod_ds).copied(),
            speed_mps: f.speed_mps,
        });
    }

    if out.fixes.is_empty() {
        return Err(NmeaError::EmptyTrack);
    }
    Ok(out)
}

/// hhmmss.sss -> (whole seconds since midnight, fractional seconds)
fn parse_time(field: &str) -> Option<(u32, f64)> {
    if field.len() < 6 {
        return None;
    }
    let h: u32 = field[0..2].parse().ok()?;
    let m: u32 = field[2..4].parse().ok()?;
    let s: f64 = field[4..].parse().ok()?;
    if h > 23 || m > 59 || s >= 61.0 {
        return None;
    }
    Some((h * 3600 + m * 60 + s as u32, s.fract()))
}

/// ddmmyy per RMC field 9.
fn parse_date(field: &str) -> Option<NaiveDate> {
    if field.len() != 6 {
        return None;
    }
    let d: u32 = field[0..2].parse().ok()?;
    let m: u32 = field[2..4].parse().ok()?;
    let y: i32 = field[4..6].parse().ok()?;
    NaiveDate::from_ymd_opt(2000 + y, m, d)
}

/// ddmm.mmmm / dddmm.mmmm with a hemisphere letter.
fn parse_coord(value: &str, hemisphere: &str, deg_digits: usize) -> Option<f64> {
    if value.len() <= deg_digits {
        return None;
    }
    let deg: f64 = value[..deg_digits].parse().ok()?;
    let minutes: f64 = value[deg_digits..].parse().ok()?;
    let magnitude = deg + minutes / 60.0;
    match hemisphere {
        "N" | "E" => Some(magnitude),
        "S" | "W" => Some(-magnitude),
        _ => None,
    }
}

/// Frame sequence extracted from one footage file.
#[derive(Debug, Clone)]
pub struct FrameManifest {
    pub footage_id: String,
    pub fps_source: f64,
    /// (source frame index, image path)
    pub frames: Vec<(u64, String)>,
}

impl FrameManifest {
    /// Reads `frame_index,relative_path` rows (header optional).
    pub fn read(path: &Path, footage_id: &str, fps_source: f64) -> Result<Self, NmeaError> {
        let text = std::fs::read_to_string(path)?;
        let mut frames = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("frame_index")) {
                continue;
            }
            let (idx, rel) = line
                .split_once(',')
                .ok_or_else(|| NmeaError::BadManifest(format!("line {}: expected 2 fields", i + 1)))?;
            let idx: u64 = idx
                .trim()
                .parse()
                .map_err(|_| NmeaError::BadManifest(format!("line {}: bad frame index", i + 1)))?;
            frames.push((idx, rel.trim().to_string()));
        }
        Ok(Self {
            footage_id: footage_id.to_string(),
            fps_source,
            frames,
        })
    }
}

/// Source frame indices when downsampling, every `floor(src/sampled)`-th
/// frame.
pub fn sampled_frame_indices(total_frames: u64, fps_source: f64, fps_sampled: f64) -> Vec<u64> {
    let stride = (fps_source / fps_sampled).floor().max(1.0) as u64;
    (0..total_frames).step_by(stride as usize).collect()
}

/// A frame with its interpolated capture location.
#[derive(Debug, Clone)]
pub struct GeotaggedFrame {
    pub image_path: String,
    pub point: GeoPoint,
    pub heading: Heading,
    pub timestamp: f64,
}

/// Assigns each frame a location from the two bracketing fixes: linear
/// interpolation for position, circular for heading. Frames outside the fix
/// span clamp to the nearest fix and are reported in the diagnostics.
pub fn geotag_frames(
    manifest: &FrameManifest,
    fixes: &[NmeaFix],
) -> Result<(Vec<GeotaggedFrame>, Vec<String>), NmeaError> {
    if fixes.is_empty() {
        return Err(NmeaError::EmptyTrack);
    }
    if manifest.frames.is_empty() {
        return Err(NmeaError::EmptyManifest);
    }
    let start = fixes[0].timestamp;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut diagnostics = Vec::new();
    for (idx, path) in &manifest.frames {
        let t = start + *idx as f64 / manifest.fps_source;
        let tagged = match fixes.binary_search_by(|f| f.timestamp.total_cmp(&t)) {
            Ok(i) => GeotaggedFrame {
                image_path: path.clone(),
                point: fixes[i].point,
                heading: fixes[i].heading,
                timestamp: t,
            },
            Err(0) => {
                diagnostics.push(format!("{path}: before first fix, clamped"));
                GeotaggedFrame {
                    image_path: path.clone(),
                    point: fixes[0].point,
                    heading: fixes[0].heading,
                    timestamp: t,
                }
            }
            Err(i) if i >= fixes.len() => {
                diagnostics.push(format!("{path}: after last fix, clamped"));
                let last = fixes.last().unwrap();
                GeotaggedFrame {
                    image_path: path.clone(),
                    point: last.point,
                    heading: last.heading,
                    timestamp: t,
                }
            }
            Err(i) => {
                let (a, b) = (&fixes[i - 1], &fixes[i]);
                let u = (t - a.timestamp) / (b.timestamp - a.timestamp);
                GeotaggedFrame {
                    image_path: path.clone(),
                    point: GeoPoint::new(
                        a.point.lat + u * (b.point.lat - a.point.lat),
                        a.point.lon + u * (b.point.lon - a.point.lon),
                    ),
                    heading: interpolate_heading(a.heading, b.heading, u),
                    timestamp: t,
                }
            }
        };
        frames.push(tagged);
    }
    Ok((frames, diagnostics))
}

/// Shortest-arc interpolation; crossing north never detours through south.
fn interpolate_heading(a: Heading, b: Heading, u: f64) -> Heading {
    let delta = (b.degrees() - a.degrees() + 540.0) % 360.0 - 180.0;
    Heading::new(a.degrees() + u * delta)
}

/// Writes geotagged frames as `image,lat,lon,heading_deg,timestamp`.
pub fn write_metadata(frames: &[GeotaggedFrame], path: &Path) -> Result<(), NmeaError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| NmeaError::BadManifest(e.to_string()))?;
    w.write_record(["image", "lat", "lon", "heading_deg", "timestamp"])
        .map_err(|e| NmeaError::BadManifest(e.to_string()))?;
    for f in frames {
        w.write_record([
            f.image_path.clone(),
            format!("{:.7}", f.point.lat),
            format!("{:.7}", f.point.lon),
            format!("{:.2}", f.heading.degrees()),
            format!("{:.3}", f.timestamp),
        ])
        .map_err(|e| NmeaError::BadManifest(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metadata(path: &Path) -> Result<Vec<GeotaggedFrame>, NmeaError> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| NmeaError::BadManifest(e.to_string()))?;
    let mut frames = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| NmeaError::BadManifest(format!("row {}: {e}", i + 1)))?;
        let num = |j: usize| -> Result<f64, NmeaError> {
            row.get(j)
                .unwrap_or("")
                .parse()
                .map_err(|_| NmeaError::BadManifest(format!("row {}: bad number", i + 1)))
        };
        frames.push(GeotaggedFrame {
            image_path: row.get(0).unwrap_or("").to_string(),
            point: GeoPoint::new(num(1)?, num(2)?),
            heading: Heading::new(num(3)?),
            timestamp: num(4)?,
        });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sentence(body: &str) -> String {
        format!("${body}*{:02X}", nmea_checksum(body))
    }

    fn rmc(time: &str, lat: &str, ns: &str, lon: &str, ew: &str, course: &str) -> String {
        sentence(&format!(
            "GPRMC,{time},A,{lat},{ns},{lon},{ew},10.0,{course},121021,,,A"
        ))
    }

    #[test]
    fn rmc_position_matches_hand_conversion() {
        // 3851.2345 S = -(38 + 51.2345/60) = -38.8539083; 14506.7890 E =
        // 145 + 06.7890/60 = 145.1131500.
        let parse = parse_nmea(&rmc("010203.000", "3851.2345", "S", "14506.7890", "E", "45.0")).unwrap();
        assert_eq!(parse.fixes.len(), 1);
        let fix = &parse.fixes[0];
        assert_abs_diff_eq!(fix.point.lat, -38.8539083, epsilon = 1e-6);
        assert_abs_diff_eq!(fix.point.lon, 145.1131500, epsilon = 1e-6);
        assert_abs_diff_eq!(fix.heading.degrees(), 45.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fix.speed_mps.unwrap(), 5.14444, epsilon = 1e-4);
    }

    #[test]
    fn corrupted_checksum_is_skipped_with_diagnostic() {
        let good = rmc("010203.000", "3851.2345", "S", "14506.7890", "E", "45.0");
        let bad = good.replace("*", "9*"); // corrupt the body after summing
        let text = format!("{good}\n{bad}\n");
        let parse = parse_nmea(&text).unwrap();
        assert_eq!(parse.fixes.len(), 1);
        assert_eq!(parse.diagnostics.len(), 1);
        assert!(parse.diagnostics[0].contains("checksum"));
    }

    #[test]
    fn one_minute_file_yields_sixty_fixes() {
        let mut text = String::new();
        for s in 0..60 {
            let lat = format!("3800.{:04}", s * 10);
            text.push_str(&rmc(&format!("0102{s:02}.000"), &lat, "S", "14500.0000", "E", "0.0"));
            text.push('\n');
        }
        let parse = parse_nmea(&text).unwrap();
        assert_eq!(parse.fixes.len(), 60);
        for w in parse.fixes.windows(2) {
            assert!(w[1].timestamp > w[0].timestamp);
        }
    }

    #[test]
    fn gga_altitude_attaches_to_matching_fix() {
        let rmc_line = rmc("010203.000", "3800.0000", "S", "14500.0000", "E", "0.0");
        let gga_body = "GPGGA,010203.000,3800.0000,S,14500.0000,E,1,8,1.0,63.2,M,55.2,M,,";
        let text = format!("{rmc_line}\n{}\n", sentence(gga_body));
        let parse = parse_nmea(&text).unwrap();
        assert_eq!(parse.fixes[0].altitude_m, Some(63.2));
    }

    #[test]
    fn void_fixes_and_empty_tracks_error() {
        let void = sentence("GPRMC,010203.000,V,3800.0000,S,14500.0000,E,,,121021,,,N");
        assert!(matches!(parse_nmea(&void), Err(NmeaError::EmptyTrack)));
    }

    fn straight_track(n: u32) -> Vec<NmeaFix> {
        // Heading north at constant speed, 1 Hz, 0.0001 deg lat per second.
        (0..n)
            .map(|s| NmeaFix {
                timestamp: 1_634_000_000.0 + s as f64,
                point: GeoPoint::new(-38.0 + 0.0001 * s as f64, 145.0),
                heading: Heading::new(0.0),
                altitude_m: None,
                speed_mps: Some(11.1),
            })
            .collect()
    }

    fn manifest_for(indices: &[u64]) -> FrameManifest {
        FrameManifest {
            footage_id: "FILE0001".into(),
            fps_source: 60.0,
            frames: indices.iter().map(|i| (*i, format!("f{i:06}.png"))).collect(),
        }
    }

    #[test]
    fn frame_at_a_fix_time_takes_that_position() {
        let fixes = straight_track(60);
        let manifest = manifest_for(&[60]); // exactly 1 s in
        let (frames, diags) = geotag_frames(&manifest, &fixes).unwrap();
        assert!(diags.is_empty());
        assert_abs_diff_eq!(frames[0].point.lat, fixes[1].point.lat, epsilon = 1e-12);
    }

    #[test]
    fn frame_midway_lands_on_the_midpoint() {
        let fixes = straight_track(60);
        let manifest = manifest_for(&[30]); // 0.5 s in
        let (frames, _) = geotag_frames(&manifest, &fixes).unwrap();
        let expected = 0.5 * (fixes[0].point.lat + fixes[1].point.lat);
        assert_abs_diff_eq!(frames[0].point.lat, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(frames[0].point.lon, 145.0, epsilon = 1e-12);
    }

    #[test]
    fn one_minute_at_five_fps_gives_three_hundred_frames() {
        let fixes = straight_track(61);
        let indices = sampled_frame_indices(3600, 60.0, 5.0);
        assert_eq!(indices.len(), 300);
        let manifest = manifest_for(&indices);
        let (frames, diags) = geotag_frames(&manifest, &fixes).unwrap();
        assert_eq!(frames.len(), 300);
        assert!(diags.is_empty());
        // Sampling every 12th frame of 60 fps footage spaces timestamps 0.2 s.
        for w in frames.windows(2) {
            assert_abs_diff_eq!(w[1].timestamp - w[0].timestamp, 0.2, epsilon = 1e-5);
        }
    }

    #[test]
    fn frames_outside_the_span_clamp_with_diagnostics() {
        let fixes = straight_track(2);
        let manifest = manifest_for(&[0, 600]); // 10 s in, track is 1 s long
        let (frames, diags) = geotag_frames(&manifest, &fixes).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(diags.len(), 1);
        assert_abs_diff_eq!(frames[1].point.lat, fixes[1].point.lat, epsilon = 1e-12);
    }

    #[test]
    fn heading_interpolation_crosses_north_cleanly() {
        let mut fixes = straight_track(2);
        fixes[0].heading = Heading::new(359.0);
        fixes[1].heading = Heading::new(1.0);
        let manifest = manifest_for(&[30]);
        let (frames, _) = geotag_frames(&manifest, &fixes).unwrap();
        let h = frames[0].heading.degrees();
        assert!(!(1.0..=359.0).contains(&h), "heading {h} detoured the long way");
    }

    #[test]
    fn interpolated_points_stay_on_the_segment() {
        let fixes = straight_track(10);
        let indices: Vec<u64> = (0..90).map(|i| i * 6).collect();
        let (frames, _) = geotag_frames(&manifest_for(&indices), &fixes).unwrap();
        for f in &frames {
            // Segment is a meridian at lon 145: interpolation must not leave it.
            assert_abs_diff_eq!(f.point.lon, 145.0, epsilon = 1e-12);
            assert!((-38.0 - 1e-12..=-38.0 + 0.0009 + 1e-12).contains(&f.point.lat));
        }
    }

    #[test]
    fn metadata_round_trips() {
        let fixes = straight_track(60);
        let (frames, _) = geotag_frames(&manifest_for(&[0, 12, 24]), &fixes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metadata.csv");
        write_metadata(&frames, &path).unwrap();
        let back = read_metadata(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].image_path, "f000000.png");
        assert_abs_diff_eq!(back[1].point.lat, frames[1].point.lat, epsilon = 1e-6);
    }
}
