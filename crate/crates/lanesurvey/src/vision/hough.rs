//! Standard Hough transform over (theta, rho) with an optional polygon mask
//! restricting which edge pixels vote.

use super::canny::EdgeMap;
use super::{Line2D, LineForm};
use crate::detector::point_in_polygon;

#[derive(Debug, Clone)]
pub struct HoughConfig {
    /// Rho bin size, pixels.
    pub rho_res: f64,
    /// Theta bin size, degrees.
    pub theta_res_deg: f64,
    pub vote_threshold: u32,
    /// Peak suppression window, in bins.
    pub suppression_theta_bins: usize,
    pub suppression_rho_bins: usize,
    pub max_lines: usize,
}

impl Default for HoughConfig {
    fn default() -> Self {
        Self {
            rho_res: 1.0,
            theta_res_deg: 1.0,
            vote_threshold: 50,
            // Tight enough that both edges of a painted stripe survive and
            // average back to its centreline.
            suppression_theta_bins: 2,
            suppression_rho_bins: 2,
            max_lines: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HoughLine {
    pub line: Line2D,
    pub votes: u32,
    pub theta_deg: f64,
    pub rho: f64,
}

/// Votes every masked edge pixel into the accumulator and returns local-max
/// peaks above the threshold, strongest first, converted to slope/intercept
/// form. Near-vertical lines come back as x = m*y + c.
pub fn hough_lines(edges: &EdgeMap, mask: Option<&[(f64, f64)]>, cfg: &HoughConfig) -> Vec<HoughLine> {
    let (w, h) = (edges.width(), edges.height());
    if w == 0 || h == 0 {
        return Vec::new();
    }
    let n_theta = (180.0 / cfg.theta_res_deg).round() as usize;
    let diag = ((w * w + h * h) as f64).sqrt();
    let n_rho = (2.0 * diag / cfg.rho_res).ceil() as usize + 1;
    let rho_offset = diag;

    let mut trig = Vec::with_capacity(n_theta);
    for t in 0..n_theta {
        let theta = (t as f64 * cfg.theta_res_deg).to_radians();
        trig.push((theta.cos(), theta.sin()));
    }

    let mut acc = vec![0u32; n_theta * n_rho];
    for (x, y) in edges.pixels() {
        if let Some(poly) = mask {
            if !point_in_polygon(poly, x as f64, y as f64) {
                continue;
            }
        }
        for (t, (cos_t, sin_t)) in trig.iter().enumerate() {
            let rho = x as f64 * cos_t + y as f64 * sin_t;
            let bin = ((rho + rho_offset) / cfg.rho_res).round() as usize;
            if bin < n_rho {
                acc[t * n_rho + bin] += 1;
            }
        }
    }

    // Candidate peaks, strongest first; ties break on bin order so the
    // result is deterministic.
    let mut candidates: Vec<(u32, usize, usize)> = Vec::new();
    for t in 0..n_theta {
        for r in 0..n_rho {
            let votes = acc[t * n_rho + r];
            if votes >= cfg.vote_threshold {
                candidates.push((votes, t, r));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut accepted: Vec<(u32, usize, usize)> = Vec::new();
    for (votes, t, r) in candidates {
        if accepted.len() >= cfg.max_lines {
            break;
        }
        let suppressed = accepted.iter().any(|&(_, at, ar)| {
            let dt_direct = t.abs_diff(at);
            let dt = dt_direct.min(n_theta - dt_direct);
            if dt > cfg.suppression_theta_bins {
                return false;
            }
            if dt_direct <= cfg.suppression_theta_bins {
                r.abs_diff(ar) <= cfg.suppression_rho_bins
            } else {
                // Wrapped in theta: rho flips sign across the seam.
                let r_flipped = ((n_rho - 1) as isize - ar as isize).unsigned_abs();
                r.abs_diff(r_flipped) <= cfg.suppression_rho_bins
            }
        });
        if !suppressed {
            accepted.push((votes, t, r));
        }
    }

    accepted
        .into_iter()
        .map(|(votes, t, r)| {
            let theta_deg = t as f64 * cfg.theta_res_deg;
            let rho = r as f64 * cfg.rho_res - rho_offset;
            HoughLine {
                line: polar_to_line(theta_deg, rho),
                votes,
                theta_deg,
                rho,
            }
        })
        .collect()
}

/// x cos(theta) + y sin(theta) = rho, re-expressed in whichever slope form
/// keeps the slope finite and below 45 degrees of its axis.
fn polar_to_line(theta_deg: f64, rho: f64) -> Line2D {
    let theta = theta_deg.to_radians();
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    if sin_t.abs() >= std::f64::consts::FRAC_1_SQRT_2 {
        Line2D {
            slope: -cos_t / sin_t,
            intercept: rho / sin_t,
            form: LineForm::YOfX,
        }
    } else {
        Line2D {
            slope: -sin_t / cos_t,
            intercept: rho / cos_t,
            form: LineForm::XOfY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rasterize_y_of_x(w: usize, h: usize, slope: f64, intercept: f64) -> EdgeMap {
        let pts = (0..w).filter_map(|x| {
            let y = (slope * x as f64 + intercept).round();
            (y >= 0.0 && y < h as f64).then_some((x, y as usize))
        });
        EdgeMap::from_points(w, h, pts)
    }

    #[test]
    fn recovers_a_single_line_within_tolerance() {
        // y = 0.5x + 100 over a 400x320 frame.
        let edges = rasterize_y_of_x(400, 320, 0.5, 100.0);
        let cfg = HoughConfig::default();
        let lines = hough_lines(&edges, None, &cfg);
        assert!(!lines.is_empty());
        let best = &lines[0];
        assert_eq!(best.line.form, LineForm::YOfX);
        assert!((best.line.slope - 0.5).abs() <= 0.05, "slope {}", best.line.slope);
        assert!(
            (best.line.intercept - 100.0).abs() <= 3.0,
            "intercept {}",
            best.line.intercept
        );
    }

    #[test]
    fn empty_edge_map_gives_no_lines() {
        let edges = EdgeMap::from_points(100, 100, []);
        assert!(hough_lines(&edges, None, &HoughConfig::default()).is_empty());
    }

    #[test]
    fn recovers_two_crossing_lines() {
        let a = rasterize_y_of_x(300, 300, 0.7, 10.0);
        let b = rasterize_y_of_x(300, 300, -0.6, 250.0);
        let merged = EdgeMap::from_points(300, 300, a.pixels().chain(b.pixels()));
        let lines = hough_lines(&merged, None, &HoughConfig::default());
        assert!(lines.len() >= 2, "got {} lines", lines.len());
        let found_a = lines
            .iter()
            .any(|l| (l.line.visual_slope() - 0.7).abs() < 0.05);
        let found_b = lines
            .iter()
            .any(|l| (l.line.visual_slope() + 0.6).abs() < 0.05);
        assert!(found_a && found_b);
    }

    #[test]
    fn mask_excludes_outside_votes() {
        // Two parallel lines; the mask admits only the left one.
        let a = rasterize_y_of_x(300, 300, 1.2, 0.0);
        let b = rasterize_y_of_x(300, 300, 1.2, -200.0);
        let merged = EdgeMap::from_points(300, 300, a.pixels().chain(b.pixels()));
        let mask = [(0.0, 0.0), (160.0, 0.0), (160.0, 300.0), (0.0, 300.0)];
        let lines = hough_lines(&merged, Some(&mask), &HoughConfig::default());
        assert!(!lines.is_empty());
        for line in &lines {
            // x at y=150 for the left line is 125; the right line is at ~292.
            let x = line.line.x_at_y(150.0).unwrap();
            assert!(x < 200.0, "unmasked line leaked through at x={x}");
        }
    }

    #[test]
    fn vertical_lines_come_back_in_x_of_y_form() {
        let edges = EdgeMap::from_points(200, 200, (0..200).map(|y| (80usize, y)));
        let lines = hough_lines(&edges, None, &HoughConfig::default());
        assert!(!lines.is_empty());
        let best = &lines[0];
        assert_eq!(best.line.form, LineForm::XOfY);
        assert!((best.line.slope).abs() < 0.05);
        assert!((best.line.intercept - 80.0).abs() <= 3.0);
    }

    #[test]
    fn rasterizing_the_recovered_line_covers_the_input() {
        let edges = rasterize_y_of_x(400, 320, 0.5, 100.0);
        let lines = hough_lines(&edges, None, &HoughConfig::default());
        let best = &lines[0];
        let mut covered = 0usize;
        let mut total = 0usize;
        for (x, y) in edges.pixels() {
            total += 1;
            let expect = best.line.y_at_x(x as f64).unwrap();
            if (expect - y as f64).abs() <= 2.0 {
                covered += 1;
            }
        }
        assert!(covered as f64 >= 0.9 * total as f64, "{covered}/{total}");
    }
}
