use serde::{Deserialize, Serialize};

use super::eyes::{EyePair, Point};
use crate::error::{Error, Result};
use crate::image::Image;

/// Side of the normalized face crop.
pub const NORMALIZED_SIZE: usize = 128;

/// Smallest eye distance the crop accepts.
pub const MIN_EYE_DISTANCE: f64 = 16.0;

/// Crop geometry in units of the eye distance ED: `k1` above the eye line,
/// `k2` below it, `k3` left of the left eye and `k4` right of the right eye.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub ed: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub out_width: usize,
    pub out_height: usize,
    /// Mouth strip: top offset below the eye line and height.
    pub mouth_top_offset: f64,
    pub mouth_height: f64,
}

impl GeometryParams {
    pub fn for_eye_distance(ed: f64) -> Self {
        GeometryParams {
            ed,
            k1: ed,
            k2: 2.0 * ed,
            k3: 1.3 * ed,
            k4: 1.3 * ed,
            out_width: NORMALIZED_SIZE,
            out_height: NORMALIZED_SIZE,
            mouth_top_offset: 0.85 * ed,
            mouth_height: 0.65 * ed,
        }
    }

    /// Crop width `k3 + ED + k4` (3.6·ED).
    pub fn crop_width(&self) -> f64 {
        self.k3 + self.ed + self.k4
    }

    /// Crop height `k1 + k2` (3·ED).
    pub fn crop_height(&self) -> f64 {
        self.k1 + self.k2
    }

    /// Eye positions in the normalized output.
    pub fn canonical_eyes(&self) -> (Point, Point) {
        let sx = self.out_width as f64 / self.crop_width();
        let sy = self.out_height as f64 / self.crop_height();
        let y = self.k1 * sy;
        (Point::new(self.k3 * sx, y), Point::new((self.k3 + self.ed) * sx, y))
    }
}

/// Affine map from output pixel coordinates to source coordinates: rotation
/// about the eye midpoint that levels the eye line, followed by the crop and
/// an anisotropic scale to the output size.
#[derive(Debug, Clone, Copy)]
pub struct CropTransform {
    origin: Point,
    ex: (f64, f64),
    ey: (f64, f64),
    sx: f64,
    sy: f64,
    x_offset: f64,
    y_offset: f64,
    pub params: GeometryParams,
}

impl CropTransform {
    pub fn new(eyes: &EyePair) -> Result<Self> {
        let ed = eyes.distance();
        if !(ed >= MIN_EYE_DISTANCE) {
            return Err(Error::DegenerateEyes(format!(
                "eye distance {ed:.2} px is below {MIN_EYE_DISTANCE} px"
            )));
        }
        let params = GeometryParams::for_eye_distance(ed);
        let (s, c) = eyes.angle().sin_cos();
        Ok(CropTransform {
            origin: eyes.midpoint(),
            ex: (c, s),
            ey: (-s, c),
            sx: params.crop_width() / params.out_width as f64,
            sy: params.crop_height() / params.out_height as f64,
            x_offset: -ed / 2.0 - params.k3,
            y_offset: -params.k1,
            params,
        })
    }

    /// Source position of output pixel `(u, v)`.
    pub fn source(&self, u: f64, v: f64) -> Point {
        let x = self.x_offset + u * self.sx;
        let y = self.y_offset + v * self.sy;
        Point::new(
            self.origin.x + x * self.ex.0 + y * self.ey.0,
            self.origin.y + x * self.ex.1 + y * self.ey.1,
        )
    }

    /// Source-image corners of the crop (top-left, top-right, bottom-right,
    /// bottom-left).
    pub fn corners(&self) -> [Point; 4] {
        let (w, h) = (self.params.out_width as f64, self.params.out_height as f64);
        [self.source(0.0, 0.0), self.source(w, 0.0), self.source(w, h), self.source(0.0, h)]
    }

    /// Source-image corners of the mouth strip.
    pub fn mouth_corners(&self) -> [Point; 4] {
        let p = &self.params;
        let top = (p.k1 + p.mouth_top_offset) / self.sy;
        let bottom = (p.k1 + p.mouth_top_offset + p.mouth_height) / self.sy;
        let w = p.out_width as f64;
        [self.source(0.0, top), self.source(w, top), self.source(w, bottom), self.source(0.0, bottom)]
    }
}

/// Rotates, crops and rescales the face to 128×128 with bilinear sampling
/// and edge replication.
pub fn normalize_geometry(image: &Image, eyes: &EyePair) -> Result<Image> {
    eyes.validate()?;
    let tf = CropTransform::new(eyes)?;
    let p = tf.params;
    Ok(Image::from_fn(p.out_width, p.out_height, |u, v| {
        let s = tf.source(u as f64, v as f64);
        image.sample_bilinear(s.x, s.y)
    }))
}

/// Rotates an image by `angle` radians (counter-clockwise in the displayed
/// image, i.e. with y pointing down) about `center`.
pub fn rotate_image(image: &Image, angle: f64, center: Point) -> Image {
    let (s, c) = angle.sin_cos();
    Image::from_fn(image.width(), image.height(), |x, y| {
        let dx = x as f64 - center.x;
        let dy = y as f64 - center.y;
        // inverse rotation
        let sx = center.x + c * dx + s * dy;
        let sy = center.y - s * dx + c * dy;
        image.sample_bilinear(sx, sy)
    })
}

/// Where `rotate_image` sends the point `p`.
pub fn rotate_point(p: Point, angle: f64, center: Point) -> Point {
    let (s, c) = angle.sin_cos();
    let dx = p.x - center.x;
    let dy = p.y - center.y;
    Point::new(center.x + c * dx - s * dy, center.y + s * dx + c * dy)
}
