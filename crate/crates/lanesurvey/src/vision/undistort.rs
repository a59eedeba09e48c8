//! Lens distortion correction: inverse Brown-Conrady remap with bilinear
//! sampling. Calibration fitting happens elsewhere; the coefficients arrive
//! in a plain key-value file.

use std::path::Path;

use super::{GrayImage, VisionError};

/// Pinhole camera with radial (k1..k3) and tangential (p1, p2) distortion.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
    /// Principal point of the corrected image when it differs from (cx, cy);
    /// shifting it translates the output.
    pub out_center: Option<(f64, f64)>,
}

impl DistortionModel {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            p1: 0.0,
            p2: 0.0,
            out_center: None,
        }
    }

    /// Reads `key = value` lines: fx, fy, cx, cy required; k1, k2, k3, p1,
    /// p2, out_cx, out_cy optional. `#` starts a comment.
    pub fn from_key_value_file(path: &Path) -> Result<Self, VisionError> {
        let text = std::fs::read_to_string(path)?;
        let mut values = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                VisionError::BadCalibration(format!("line {}: expected key = value", i + 1))
            })?;
            let value: f64 = value.trim().parse().map_err(|_| {
                VisionError::BadCalibration(format!("line {}: bad number {:?}", i + 1, value.trim()))
            })?;
            values.insert(key.trim().to_string(), value);
        }
        let require = |key: &str| -> Result<f64, VisionError> {
            values
                .get(key)
                .copied()
                .ok_or_else(|| VisionError::BadCalibration(format!("missing {key}")))
        };
        let optional = |key: &str| values.get(key).copied().unwrap_or(0.0);
        let fx = require("fx")?;
        let fy = require("fy")?;
        if fx <= 0.0 || fy <= 0.0 {
            return Err(VisionError::BadCalibration("focal lengths must be positive".into()));
        }
        let out_center = match (values.get("out_cx"), values.get("out_cy")) {
            (Some(x), Some(y)) => Some((*x, *y)),
            _ => None,
        };
        Ok(Self {
            fx,
            fy,
            cx: require("cx")?,
            cy: require("cy")?,
            k1: optional("k1"),
            k2: optional("k2"),
            k3: optional("k3"),
            p1: optional("p1"),
            p2: optional("p2"),
            out_center,
        })
    }

    /// Forward model: ideal pixel coordinates to distorted pixel coordinates.
    pub fn distort_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        let x = (u - self.cx) / self.fx;
        let y = (v - self.cy) / self.fy;
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2 + self.k3 * r2 * r2 * r2;
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (self.fx * xd + self.cx, self.fy * yd + self.cy)
    }

    fn output_center(&self) -> (f64, f64) {
        self.out_center.unwrap_or((self.cx, self.cy))
    }
}

/// Corrects a frame: each output pixel samples the source at its
/// forward-distorted position, bilinearly. Pixels that map outside the
/// source stay black.
pub fn undistort(img: &GrayImage, model: &DistortionModel) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut out = GrayImage::new(w, h);
    let (ocx, ocy) = model.output_center();
    for v in 0..h {
        for u in 0..w {
            // Normalize against the output centre, distort, project back
            // through the source camera.
            let x = (u as f64 - ocx) / model.fx;
            let y = (v as f64 - ocy) / model.fy;
            let r2 = x * x + y * y;
            let radial = 1.0 + model.k1 * r2 + model.k2 * r2 * r2 + model.k3 * r2 * r2 * r2;
            let xd = x * radial + 2.0 * model.p1 * x * y + model.p2 * (r2 + 2.0 * x * x);
            let yd = y * radial + model.p1 * (r2 + 2.0 * y * y) + 2.0 * model.p2 * x * y;
            let sx = model.fx * xd + model.cx;
            let sy = model.fy * yd + model.cy;
            out.set(u, v, bilinear(img, sx, sy));
        }
    }
    out
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> u8 {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if x < 0.0 || y < 0.0 || x > w - 1.0 || y > h - 1.0 {
        return 0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let p00 = img.get(x0, y0) as f64;
    let p10 = img.get(x1, y0) as f64;
    let p01 = img.get(x0, y1) as f64;
    let p11 = img.get(x1, y1) as f64;
    let value = p00 * (1.0 - fx) * (1.0 - fy)
        + p10 * fx * (1.0 - fy)
        + p01 * (1.0 - fx) * fy
        + p11 * fx * fy;
    value.round().clamp(0.0, 255.0) as u8
}

/// Inverse of the forward distortion by fixed-point iteration; test oracle
/// and synthetic-scene support.
#[cfg(test)]
pub fn undistort_pixel_iterative(model: &DistortionModel, ud: f64, vd: f64) -> (f64, f64) {
    let xd = (ud - model.cx) / model.fx;
    let yd = (vd - model.cy) / model.fy;
    let (mut x, mut y) = (xd, yd);
    for _ in 0..25 {
        let r2 = x * x + y * y;
        let radial = 1.0 + model.k1 * r2 + model.k2 * r2 * r2 + model.k3 * r2 * r2 * r2;
        let dx = 2.0 * model.p1 * x * y + model.p2 * (r2 + 2.0 * x * x);
        let dy = model.p1 * (r2 + 2.0 * y * y) + 2.0 * model.p2 * x * y;
        x = (xd - dx) / radial;
        y = (yd - dy) / radial;
    }
    (model.fx * x + model.cx, model.fy * y + model.cy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy_scene(w: usize, h: usize) -> GrayImage {
        let mut img = GrayImage::new(w, h);
        let mut state = 0x9E3779B97F4A7C15u64;
        for y in 0..h {
            for x in 0..w {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                img.set(x, y, (state >> 56) as u8);
            }
        }
        img
    }

    #[test]
    fn zero_coefficients_are_the_pixel_exact_identity() {
        let img = noisy_scene(120, 90);
        let model = DistortionModel::pinhole(300.0, 300.0, 60.0, 45.0);
        assert_eq!(undistort(&img, &model), img);
    }

    #[test]
    fn shifted_output_center_is_a_pure_translation() {
        let img = noisy_scene(64, 64);
        let mut model = DistortionModel::pinhole(200.0, 200.0, 32.0, 32.0);
        model.out_center = Some((37.0, 29.0)); // shift by (+5, -3)
        let out = undistort(&img, &model);
        for v in 0..64usize {
            for u in 0..64usize {
                let su = u as isize - 5;
                let sv = v as isize + 3;
                let expect = if su >= 0 && sv >= 0 && su < 64 && sv < 64 {
                    img.get(su as usize, sv as usize)
                } else {
                    0
                };
                assert_eq!(out.get(u, v), expect, "at ({u},{v})");
            }
        }
    }

    #[test]
    fn iterative_inverse_round_trips_the_forward_model() {
        let model = DistortionModel {
            k1: -0.18,
            k2: 0.04,
            p1: 0.001,
            p2: -0.0005,
            ..DistortionModel::pinhole(400.0, 400.0, 320.0, 180.0)
        };
        for (u, v) in [(10.0, 10.0), (320.0, 180.0), (600.0, 340.0), (50.0, 300.0)] {
            let (du, dv) = model.distort_pixel(u, v);
            let (bu, bv) = undistort_pixel_iterative(&model, du, dv);
            assert!((bu - u).abs() < 1e-6 && (bv - v).abs() < 1e-6, "({u},{v})");
        }
    }

    #[test]
    fn barrel_distorted_grid_straightens() {
        // Ideal image: vertical lines every 32 px. The distorted image is
        // rendered through the iterative inverse (the independent path),
        // then corrected by undistort; recovered lines must be straight to
        // within a pixel.
        let (w, h) = (256usize, 192usize);
        let mut ideal = GrayImage::filled(w, h, 20);
        for line_x in (32..w).step_by(32) {
            for y in 0..h {
                for dx in 0..2 {
                    ideal.set(line_x + dx, y, 230);
                }
            }
        }
        let model = DistortionModel {
            k1: -0.25,
            ..DistortionModel::pinhole(200.0, 200.0, 128.0, 96.0)
        };
        let mut distorted = GrayImage::new(w, h);
        for v in 0..h {
            for u in 0..w {
                let (su, sv) = undistort_pixel_iterative(&model, u as f64, v as f64);
                distorted.set(u, v, bilinear(&ideal, su, sv));
            }
        }
        let corrected = undistort(&distorted, &model);

        // Line straightness: per-row intensity centroid near each ideal line.
        for line_x in (64..w - 32).step_by(32) {
            let mut deviations = Vec::new();
            for y in (20..h - 20).step_by(4) {
                let mut num = 0.0;
                let mut den = 0.0;
                for x in line_x.saturating_sub(6)..(line_x + 8).min(w) {
                    let lum = corrected.get(x, y).saturating_sub(20) as f64;
                    num += lum * x as f64;
                    den += lum;
                }
                if den > 0.0 {
                    deviations.push(num / den);
                }
            }
            assert!(!deviations.is_empty(), "line at {line_x} vanished");
            let mean: f64 = deviations.iter().sum::<f64>() / deviations.len() as f64;
            for d in &deviations {
                assert!((d - mean).abs() < 1.0, "line {line_x}: centroid {d:.2} vs mean {mean:.2}");
            }
        }
    }

    #[test]
    fn calibration_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.txt");
        std::fs::write(
            &path,
            "# dash camera calibration\nfx = 1234.5\nfy = 1230.0\ncx = 960.0\ncy = 540.0\nk1 = -0.21\nk2 = 0.05\np1 = 0.001\n",
        )
        .unwrap();
        let model = DistortionModel::from_key_value_file(&path).unwrap();
        assert_eq!(model.fx, 1234.5);
        assert_eq!(model.k1, -0.21);
        assert_eq!(model.k3, 0.0);
        assert_eq!(model.out_center, None);
    }

    #[test]
    fn missing_focal_length_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.txt");
        std::fs::write(&path, "cx = 1\ncy = 2\n").unwrap();
        assert!(DistortionModel::from_key_value_file(&path).is_err());
    }
}
