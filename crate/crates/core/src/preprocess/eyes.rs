use serde::{Deserialize, Serialize};

use super::ncc::{argmax, check_fits, PreparedTemplate};
use crate::error::{Error, Result};
use crate::image::{Grid, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Eye centers in image coordinates, left being the smaller x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyePair {
    pub left: Point,
    pub right: Point,
    pub score_left: f64,
    pub score_right: f64,
}

impl EyePair {
    /// Eye pair from known coordinates (scores set to 1).
    pub fn from_coords(left: (f64, f64), right: (f64, f64)) -> Result<Self> {
        let pair = EyePair {
            left: Point::new(left.0, left.1),
            right: Point::new(right.0, right.1),
            score_left: 1.0,
            score_right: 1.0,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn distance(&self) -> f64 {
        self.left.distance(&self.right)
    }

    pub fn midpoint(&self) -> Point {
        Point::new((self.left.x + self.right.x) / 2.0, (self.left.y + self.right.y) / 2.0)
    }

    /// Tilt of the inter-eye segment, radians.
    pub fn angle(&self) -> f64 {
        (self.right.y - self.left.y).atan2(self.right.x - self.left.x)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.left.x < self.right.x) {
            return Err(Error::DegenerateEyes(format!(
                "left eye x ({:.2}) must be smaller than right eye x ({:.2})",
                self.left.x, self.right.x
            )));
        }
        Ok(())
    }
}

/// Synthetic eye template: a dark disk whose edge fades smoothly into a
/// lighter surround.
pub fn synthetic_eye_template(size: usize) -> Image {
    let size = size.max(5);
    let c = (size as f64 - 1.0) / 2.0;
    let radius = 0.3 * size as f64;
    let soft = 0.08 * size as f64;
    Image::from_fn(size, size, |x, y| {
        let r = (x as f64 - c).hypot(y as f64 - c);
        let disk = 0.5 * (1.0 - ((r - radius) / soft).tanh());
        0.85 - 0.65 * disk
    })
}

/// Template side for an expected eye distance: `round(0.4 · ED)`.
pub fn template_size_for(expected_eye_distance: f64) -> usize {
    ((0.4 * expected_eye_distance).round() as usize).max(5)
}

/// Parabola vertex offset from three samples around a peak, within ±0.5.
fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

struct QuadrantPeak {
    center: Point,
    score: f64,
}

fn search_quadrant(image: &Image, template: &PreparedTemplate, left_side: bool) -> QuadrantPeak {
    let (w, h) = (image.width(), image.height());
    let (tw, th) = (template.width, template.height);
    let cx = (tw - 1) / 2;
    let cy = (th - 1) / 2;
    let mid_x = w / 2;
    let mid_y = h / 2;
    // placements whose template center lies in the upper half, plus one row
    // of slack for the subpixel fit
    let rows = (mid_y.saturating_sub(cy) + 1).min(h - th + 1);
    let cols = w - tw + 1;
    let map = Grid::from_fn(cols, rows, |x, y| template.score_at(image, x, y));
    let keep = |x: usize, y: usize| {
        let (ex, ey) = (x + cx, y + cy);
        ey < mid_y && if left_side { ex < mid_x } else { ex >= mid_x }
    };
    let Some(((bx, by), score)) = argmax(&map, keep) else {
        return QuadrantPeak {
            center: Point::new(f64::NAN, f64::NAN),
            score: f64::NEG_INFINITY,
        };
    };
    let dx = if bx > 0 && bx + 1 < map.width {
        parabolic_offset(map.get(bx - 1, by), score, map.get(bx + 1, by))
    } else {
        0.0
    };
    let dy = if by > 0 && by + 1 < map.height {
        parabolic_offset(map.get(bx, by - 1), score, map.get(bx, by + 1))
    } else {
        0.0
    };
    QuadrantPeak {
        center: Point::new((bx + cx) as f64 + dx, (by + cy) as f64 + dy),
        score,
    }
}

/// Finds the eye centers by NCC template matching: the left eye in the
/// upper-left quadrant and the right eye in the upper-right quadrant, with a
/// 3-point parabolic refinement in x and y around each peak.
pub fn detect_eyes(image: &Image, left_template: &Image, right_template: &Image, min_score: f64) -> Result<EyePair> {
    for t in [left_template, right_template] {
        check_fits(image, t)?;
        if image.height() < 2 * t.height() || image.width() < 2 * t.width() {
            return Err(Error::TemplateTooLarge {
                template_w: t.width(),
                template_h: t.height(),
                image_w: image.width(),
                image_h: image.height(),
            });
        }
    }
    let lt = PreparedTemplate::new(left_template)?;
    let rt = PreparedTemplate::new(right_template)?;
    let left = search_quadrant(image, &lt, true);
    let right = search_quadrant(image, &rt, false);
    if !(left.score >= min_score && right.score >= min_score) {
        return Err(Error::EyesNotFound {
            left: left.score,
            right: right.score,
            threshold: min_score,
        });
    }
    let pair = EyePair {
        left: left.center,
        right: right.center,
        score_left: left.score,
        score_right: right.score,
    };
    pair.validate()?;
    Ok(pair)
}
