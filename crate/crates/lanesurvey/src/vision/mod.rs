//! Classical per-frame vision: lens undistortion, Canny edges, masked Hough
//! lines, own-lane boundaries and the second-pass paved-shoulder boundary.
//!
//! Frames are processed independently; everything here is pure computation
//! over an 8-bit grayscale raster.

mod canny;
mod hough;
mod undistort;

use std::path::Path;

use thiserror::Error;

pub use canny::{canny, EdgeMap};
pub use hough::{hough_lines, HoughConfig, HoughLine};
pub use undistort::{undistort, DistortionModel};

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("calibration file: {0}")]
    BadCalibration(String),
    #[error("image: {0}")]
    BadImage(String),
}

/// Row-major 8-bit luminance raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0)
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, VisionError> {
        if data.len() != width * height {
            return Err(VisionError::BadImage(format!(
                "raster is {} bytes, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Border pixels replicate outward.
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    /// Draws a band of the line x = m*y + c between two rows; the stroke is
    /// `2*half_width + 1` pixels wide. Used for synthetic scenes and
    /// overlays.
    pub fn draw_line_x_of_y(&mut self, m: f64, c: f64, y0: usize, y1: usize, half_width: usize, value: u8) {
        for y in y0..=y1.min(self.height.saturating_sub(1)) {
            let x = m * y as f64 + c;
            let xi = x.round() as isize;
            for dx in -(half_width as isize)..=(half_width as isize) {
                let px = xi + dx;
                if px >= 0 && (px as usize) < self.width {
                    self.set(px as usize, y, value);
                }
            }
        }
    }

    pub fn read(path: &Path) -> Result<Self, VisionError> {
        let img = image::open(path)
            .map_err(|e| VisionError::BadImage(format!("{}: {e}", path.display())))?
            .to_luma8();
        Self::from_raw(
            img.width() as usize,
            img.height() as usize,
            img.into_raw(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), VisionError> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .ok_or_else(|| VisionError::BadImage("raster size mismatch".into()))?;
        img.save(path)
            .map_err(|e| VisionError::BadImage(format!("{}: {e}", path.display())))
    }
}

/// Which variable the line equation solves for.
///
/// Lane boundaries approach vertical near the camera, so steep lines are
/// carried as x = m*y + c; gentle ones as y = m*x + c.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineForm {
    /// y = slope * x + intercept
    YOfX,
    /// x = slope * y + intercept
    XOfY,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2D {
    pub slope: f64,
    pub intercept: f64,
    pub form: LineForm,
}

impl Line2D {
    pub fn y_of_x(slope: f64, intercept: f64) -> Self {
        Self {
            slope,
            intercept,
            form: LineForm::YOfX,
        }
    }

    pub fn x_of_y(slope: f64, intercept: f64) -> Self {
        Self {
            slope,
            intercept,
            form: LineForm::XOfY,
        }
    }

    /// dy/dx in image coordinates (y grows downward).
    pub fn visual_slope(&self) -> f64 {
        match self.form {
            LineForm::YOfX => self.slope,
            LineForm::XOfY => {
                if self.slope == 0.0 {
                    f64::INFINITY
                } else {
                    1.0 / self.slope
                }
            }
        }
    }

    pub fn x_at_y(&self, y: f64) -> Option<f64> {
        match self.form {
            LineForm::XOfY => Some(self.slope * y + self.intercept),
            LineForm::YOfX => {
                if self.slope == 0.0 {
                    None
                } else {
                    Some((y - self.intercept) / self.slope)
                }
            }
        }
    }

    pub fn y_at_x(&self, x: f64) -> Option<f64> {
        match self.form {
            LineForm::YOfX => Some(self.slope * x + self.intercept),
            LineForm::XOfY => {
                if self.slope == 0.0 {
                    None
                } else {
                    Some((x - self.intercept) / self.slope)
                }
            }
        }
    }

    /// Reparameterizes as x = m*y + c; `None` for horizontal lines.
    pub fn to_x_of_y(&self) -> Option<Line2D> {
        match self.form {
            LineForm::XOfY => Some(*self),
            LineForm::YOfX => {
                if self.slope == 0.0 {
                    None
                } else {
                    Some(Line2D::x_of_y(1.0 / self.slope, -self.intercept / self.slope))
                }
            }
        }
    }
}

/// Everything the per-frame pass produces.
#[derive(Debug, Clone, Default)]
pub struct LaneObservation {
    pub frame: String,
    pub left_own: Option<Line2D>,
    pub right_own: Option<Line2D>,
    pub shoulder_left: Option<Line2D>,
    pub width_at_upper_row_px: Option<f64>,
    pub boundary_intersection: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct VisionConfig {
    pub gaussian_sigma: f64,
    pub canny_low: f32,
    pub canny_high: f32,
    pub hough: HoughConfig,
    /// Lines flatter than this |dy/dx| are horizon or cross-road clutter.
    pub min_abs_slope: f64,
    /// Reference row (fraction of height) where the shoulder width is read.
    pub upper_row_frac: f64,
    /// Row just above the bonnet (fraction of height); lower mask boundary.
    pub bonnet_row_frac: f64,
    /// Forward triangular mask, normalized coordinates. `None` uses the
    /// default triangle in front of the vehicle.
    pub forward_mask: Option<Vec<(f64, f64)>>,
    /// Gap between the own-lane boundary and the shoulder search band, px.
    pub shoulder_gap_px: f64,
    /// Width of the shoulder search band, px.
    pub shoulder_band_px: f64,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            gaussian_sigma: 1.4,
            canny_low: 50.0,
            canny_high: 150.0,
            hough: HoughConfig::default(),
            min_abs_slope: 0.2,
            upper_row_frac: 0.6,
            bonnet_row_frac: 0.88,
            forward_mask: None,
            shoulder_gap_px: 8.0,
            shoulder_band_px: 220.0,
        }
    }
}

impl VisionConfig {
    /// Forward mask in pixels for a given frame size.
    pub fn forward_mask_px(&self, width: usize, height: usize) -> Vec<(f64, f64)> {
        let (w, h) = (width as f64, height as f64);
        match &self.forward_mask {
            Some(poly) => poly.iter().map(|(x, y)| (x * w, y * h)).collect(),
            None => {
                let bonnet = self.bonnet_row_frac * h;
                vec![(0.5 * w, 0.48 * h), (0.95 * w, bonnet), (0.05 * w, bonnet)]
            }
        }
    }

    pub fn upper_row(&self, height: usize) -> f64 {
        self.upper_row_frac * height as f64
    }
}

/// Splits Hough lines by visual slope sign and averages each group
/// (vote-weighted) into one boundary. Lines flatter than the rejection band
/// are discarded. A group with no lines yields an absent boundary.
pub fn detect_own_lane(lines: &[HoughLine], cfg: &VisionConfig) -> (Option<Line2D>, Option<Line2D>) {
    let mut left: Vec<(&HoughLine, Line2D)> = Vec::new();
    let mut right: Vec<(&HoughLine, Line2D)> = Vec::new();
    for hline in lines {
        let vs = hline.line.visual_slope();
        if vs.abs() < cfg.min_abs_slope {
            continue;
        }
        let Some(xofy) = hline.line.to_x_of_y() else {
            continue;
        };
        if vs < 0.0 {
            left.push((hline, xofy));
        } else {
            right.push((hline, xofy));
        }
    }
    (weighted_average(&left), weighted_average(&right))
}

fn weighted_average(group: &[(&HoughLine, Line2D)]) -> Option<Line2D> {
    if group.is_empty() {
        return None;
    }
    let mut total = 0.0;
    let mut m = 0.0;
    let mut c = 0.0;
    for (hline, xofy) in group {
        let w = hline.votes as f64;
        total += w;
        m += w * xofy.slope;
        c += w * xofy.intercept;
    }
    Some(Line2D::x_of_y(m / total, c / total))
}

/// Second Hough pass in a band just left of the own-lane boundary. An absent
/// result is a strong sign there is no clearly defined paved shoulder.
pub fn detect_shoulder(edges: &EdgeMap, left_own: &Line2D, cfg: &VisionConfig) -> Option<Line2D> {
    let left = left_own.to_x_of_y()?;
    let h = edges.height() as f64;
    let y_top = 0.45 * h;
    let y_bottom = cfg.bonnet_row_frac * h;
    let x_top = left.x_at_y(y_top)?;
    let x_bottom = left.x_at_y(y_bottom)?;
    let band = vec![
        (x_top - cfg.shoulder_band_px, y_top),
        (x_top - cfg.shoulder_gap_px, y_top),
        (x_bottom - cfg.shoulder_gap_px, y_bottom),
        (x_bottom - cfg.shoulder_band_px, y_bottom),
    ];
    let lines = hough_lines(edges, Some(&band), &cfg.hough);
    let mut group: Vec<(&HoughLine, Line2D)> = Vec::new();
    for hline in &lines {
        let vs = hline.line.visual_slope();
        if vs < 0.0 && vs.abs() >= cfg.min_abs_slope {
            if let Some(xofy) = hline.line.to_x_of_y() {
                group.push((hline, xofy));
            }
        }
    }
    weighted_average(&group)
}

/// Width between the shoulder and own-lane boundaries at the reference row,
/// and the point where the two lines would intersect. Parallel boundaries
/// have a width but no intersection.
pub fn measure(
    left_own: &Line2D,
    shoulder_left: &Line2D,
    upper_row: f64,
) -> (Option<f64>, Option<(f64, f64)>) {
    let width = match (left_own.x_at_y(upper_row), shoulder_left.x_at_y(upper_row)) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    let intersection = match (left_own.to_x_of_y(), shoulder_left.to_x_of_y()) {
        (Some(a), Some(b)) => {
            let dm = a.slope - b.slope;
            if dm.abs() < 1e-12 {
                None
            } else {
                let y = (b.intercept - a.intercept) / dm;
                Some((a.slope * y + a.intercept, y))
            }
        }
        _ => None,
    };
    (width, intersection)
}

/// Full per-frame pass: optional undistortion, Canny, forward-mask Hough,
/// own-lane boundaries, shoulder pass and measurement.
pub fn analyze_frame(
    frame_ref: &str,
    img: &GrayImage,
    model: Option<&DistortionModel>,
    cfg: &VisionConfig,
) -> LaneObservation {
    let corrected;
    let img = match model {
        Some(model) => {
            corrected = undistort(img, model);
            &corrected
        }
        None => img,
    };
    let edges = canny(img, cfg.gaussian_sigma, cfg.canny_low, cfg.canny_high);
    let mask = cfg.forward_mask_px(img.width(), img.height());
    let lines = hough_lines(&edges, Some(&mask), &cfg.hough);
    let (left_own, right_own) = detect_own_lane(&lines, cfg);
    let shoulder_left = left_own
        .as_ref()
        .and_then(|left| detect_shoulder(&edges, left, cfg));
    let (width, intersection) = match (&left_own, &shoulder_left) {
        (Some(left), Some(shoulder)) => measure(left, shoulder, cfg.upper_row(img.height())),
        _ => (None, None),
    };
    LaneObservation {
        frame: frame_ref.to_string(),
        left_own,
        right_own,
        shoulder_left,
        width_at_upper_row_px: width,
        boundary_intersection: intersection,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hline(line: Line2D, votes: u32) -> HoughLine {
        HoughLine {
            line,
            votes,
            theta_deg: 0.0,
            rho: 0.0,
        }
    }

    #[test]
    fn parallel_vertical_boundaries_have_width_but_no_intersection() {
        let a = Line2D::x_of_y(0.0, 200.0);
        let b = Line2D::x_of_y(0.0, 100.0);
        let (width, ix) = measure(&a, &b, 50.0);
        assert_eq!(width, Some(100.0));
        assert_eq!(ix, None);
    }

    #[test]
    fn intersection_matches_the_algebraic_solution() {
        // x = -0.5y + 300 and x = 0.8y + 40 cross at y = 200, x = 200.
        let a = Line2D::x_of_y(-0.5, 300.0);
        let b = Line2D::x_of_y(0.8, 40.0);
        let (_, ix) = measure(&a, &b, 100.0);
        let (x, y) = ix.unwrap();
        assert!((x - 200.0).abs() < 1e-9);
        assert!((y - 200.0).abs() < 1e-9);
    }

    #[test]
    fn identical_lines_give_zero_width() {
        let a = Line2D::x_of_y(0.3, 120.0);
        let (width, _) = measure(&a, &a, 75.0);
        assert_eq!(width, Some(0.0));
    }

    #[test]
    fn own_lane_partition_follows_visual_slope_sign() {
        // Left boundary runs up-right (dy/dx < 0): x = -m*y + c with m > 0
        // means dx/dy < 0 i.e. dy/dx < 0.
        let left = hline(Line2D::x_of_y(-0.7, 400.0), 100);
        let right = hline(Line2D::x_of_y(0.7, 200.0), 100);
        let cfg = VisionConfig::default();
        let (l, r) = detect_own_lane(&[left, right], &cfg);
        assert!(l.unwrap().slope < 0.0);
        assert!(r.unwrap().slope > 0.0);
    }

    #[test]
    fn missing_group_yields_absent_boundary() {
        let left_only = hline(Line2D::x_of_y(-0.7, 400.0), 10);
        let (l, r) = detect_own_lane(&[left_only], &VisionConfig::default());
        assert!(l.is_some());
        assert!(r.is_none());
    }

    #[test]
    fn near_horizontal_clutter_is_rejected() {
        let cfg = VisionConfig::default();
        let clutter = hline(Line2D::y_of_x(0.1, 50.0), 1000);
        let lane = hline(Line2D::x_of_y(0.7, 200.0), 10);
        let (l, r) = detect_own_lane(&[clutter.clone(), lane], &cfg);
        assert!(l.is_none());
        let r = r.unwrap();
        assert!((r.slope - 0.7).abs() < 1e-9, "clutter shifted the boundary");
        let (l2, r2) = detect_own_lane(&[clutter], &cfg);
        assert!(l2.is_none() && r2.is_none());
    }

    #[test]
    fn averaging_is_vote_weighted() {
        let a = hline(Line2D::x_of_y(0.6, 100.0), 30);
        let b = hline(Line2D::x_of_y(0.8, 200.0), 10);
        let (_, r) = detect_own_lane(&[a, b], &VisionConfig::default());
        let r = r.unwrap();
        assert!((r.slope - 0.65).abs() < 1e-9);
        assert!((r.intercept - 125.0).abs() < 1e-9);
    }

    #[test]
    fn line_form_conversions_agree() {
        let l = Line2D::y_of_x(2.0, -10.0); // y = 2x - 10
        let x = l.to_x_of_y().unwrap(); // x = 0.5y + 5
        assert!((x.slope - 0.5).abs() < 1e-12);
        assert!((x.intercept - 5.0).abs() < 1e-12);
        assert!((l.visual_slope() - x.visual_slope()).abs() < 1e-12);
        assert_eq!(l.x_at_y(0.0), Some(5.0));
    }
}
