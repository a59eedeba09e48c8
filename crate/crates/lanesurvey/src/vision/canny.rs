//! Canny edge detection: Gaussian smoothing, Sobel gradients, non-maximum
//! suppression and hysteresis thresholding.

use super::GrayImage;

/// Binary edge raster.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl EdgeMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Synthetic edge maps for tests and parameter exploration.
    pub fn from_points(width: usize, height: usize, points: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut data = vec![false; width * height];
        for (x, y) in points {
            if x < width && y < height {
                data[y * width + x] = true;
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        let mut img = GrayImage::new(self.width, self.height);
        for (x, y) in self.pixels() {
            img.set(x, y, 255);
        }
        img
    }
}

/// Thresholds apply to the raw 3x3 Sobel gradient magnitude, the scale the
/// usual 50/150 defaults assume.
pub fn canny(img: &GrayImage, sigma: f64, low: f32, high: f32) -> EdgeMap {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return EdgeMap {
            width: w,
            height: h,
            data: vec![false; w * h],
        };
    }
    let smoothed = gaussian_blur(img, sigma);
    let (mag, dir) = sobel(&smoothed, w, h);
    let thin = non_maximum_suppression(&mag, &dir, w, h);
    hysteresis(&thin, w, h, low, high)
}

fn gaussian_blur(img: &GrayImage, sigma: f64) -> Vec<f32> {
    let (w, h) = (img.width(), img.height());
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let denom = 2.0 * sigma * sigma;
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / denom).exp() as f32);
    }
    let sum: f32 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let mut horizontal = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, coeff) in kernel.iter().enumerate() {
                let sx = x as isize + k as isize - radius;
                acc += coeff * img.get_clamped(sx, y as isize) as f32;
            }
            horizontal[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, coeff) in kernel.iter().enumerate() {
                let sy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += coeff * horizontal[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Gradient direction quantized to four sectors.
#[derive(Clone, Copy, PartialEq)]
enum Sector {
    Horizontal, // gradient along x; edge is vertical
    DiagUp,     // gradient along +x+y
    Vertical,   // gradient along y
    DiagDown,   // gradient along +x-y
}

fn sobel(data: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<Sector>) {
    let mut mag = vec![0.0f32; w * h];
    let mut dir = vec![Sector::Horizontal; w * h];
    let at = |x: isize, y: isize| -> f32 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        data[y * w + x]
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = -at(x - 1, y - 1) + at(x + 1, y - 1) - 2.0 * at(x - 1, y)
                + 2.0 * at(x + 1, y)
                - at(x - 1, y + 1)
                + at(x + 1, y + 1);
            let gy = -at(x - 1, y - 1) - 2.0 * at(x, y - 1) - at(x + 1, y - 1)
                + at(x - 1, y + 1)
                + 2.0 * at(x, y + 1)
                + at(x + 1, y + 1);
            let idx = y as usize * w + x as usize;
            mag[idx] = (gx * gx + gy * gy).sqrt();
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[idx] = if !(22.5..157.5).contains(&angle) {
                Sector::Horizontal
            } else if angle < 67.5 {
                Sector::DiagUp
            } else if angle < 112.5 {
                Sector::Vertical
            } else {
                Sector::DiagDown
            };
        }
    }
    (mag, dir)
}

fn non_maximum_suppression(mag: &[f32], dir: &[Sector], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; w * h];
    let at = |x: isize, y: isize| -> f32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let idx = y as usize * w + x as usize;
            let m = mag[idx];
            if m == 0.0 {
                continue;
            }
            let (na, nb) = match dir[idx] {
                Sector::Horizontal => (at(x - 1, y), at(x + 1, y)),
                Sector::DiagUp => (at(x - 1, y - 1), at(x + 1, y + 1)),
                Sector::Vertical => (at(x, y - 1), at(x, y + 1)),
                Sector::DiagDown => (at(x + 1, y - 1), at(x - 1, y + 1)),
            };
            // Strict on one side so a two-pixel plateau keeps a single ridge.
            if m > na && m >= nb {
                out[idx] = m;
            }
        }
    }
    out
}

fn hysteresis(mag: &[f32], w: usize, h: usize, low: f32, high: f32) -> EdgeMap {
    let mut state = vec![0u8; w * h]; // 0 none, 1 weak, 2 edge
    let mut stack = Vec::new();
    for (idx, &m) in mag.iter().enumerate() {
        if m >= high {
            state[idx] = 2;
            stack.push(idx);
        } else if m >= low {
            state[idx] = 1;
        }
    }
    while let Some(idx) = stack.pop() {
        let (x, y) = ((idx % w) as isize, (idx / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                if state[nidx] == 1 {
                    state[nidx] = 2;
                    stack.push(nidx);
                }
            }
        }
    }
    EdgeMap {
        width: w,
        height: h,
        data: state.into_iter().map(|s| s == 2).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_image_has_no_edges() {
        let img = GrayImage::filled(64, 64, 120);
        assert_eq!(canny(&img, 1.4, 50.0, 150.0).count(), 0);
    }

    #[test]
    fn vertical_step_gives_a_thin_vertical_edge() {
        let mut img = GrayImage::new(64, 64);
        for y in 0..64 {
            for x in 32..64 {
                img.set(x, y, 255);
            }
        }
        let edges = canny(&img, 1.4, 50.0, 150.0);
        assert!(edges.count() > 0);
        let mut columns: Vec<usize> = edges.pixels().map(|(x, _)| x).collect();
        columns.sort_unstable();
        columns.dedup();
        // Single-pixel-wide column, within 1 px of the step at x = 31.5.
        assert!(columns.len() <= 2, "edge spread over columns {columns:?}");
        for x in columns {
            assert!((x as f64 - 31.5).abs() <= 1.0, "column {x}");
        }
        // Interior rows all contain an edge pixel.
        for y in 4..60 {
            assert!((0..64).any(|x| edges.get(x, y)), "row {y} missing");
        }
    }

    #[test]
    fn circle_edges_stay_near_the_ideal_radius() {
        let (w, h, r) = (128usize, 128usize, 40.0f64);
        let mut img = GrayImage::filled(w, h, 30);
        for y in 0..h {
            for x in 0..w {
                let d = ((x as f64 - 64.0).powi(2) + (y as f64 - 64.0).powi(2)).sqrt();
                if d <= r {
                    img.set(x, y, 220);
                }
            }
        }
        let edges = canny(&img, 1.4, 50.0, 150.0);
        assert!(edges.count() > 60);
        for (x, y) in edges.pixels() {
            let d = ((x as f64 - 64.0).powi(2) + (y as f64 - 64.0).powi(2)).sqrt();
            assert!((d - r).abs() <= 1.5, "edge at ({x},{y}) is {d:.2} from centre");
        }
    }

    #[test]
    fn luminance_offset_leaves_the_edge_set_unchanged() {
        let mut scene = GrayImage::filled(96, 96, 60);
        scene.draw_line_x_of_y(0.5, 20.0, 10, 85, 1, 200);
        let mut shifted = scene.clone();
        for y in 0..96 {
            for x in 0..96 {
                shifted.set(x, y, scene.get(x, y) + 10);
            }
        }
        let a = canny(&scene, 1.4, 50.0, 150.0);
        let b = canny(&shifted, 1.4, 50.0, 150.0);
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_images_are_edge_free() {
        let img = GrayImage::filled(2, 2, 255);
        assert_eq!(canny(&img, 1.4, 50.0, 150.0).count(), 0);
    }
}
