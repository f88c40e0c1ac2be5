//! Eye detection, geometric normalization and illumination compensation.

mod eyes;
mod geometry;
mod ncc;
mod retinex;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use eyes::{detect_eyes, synthetic_eye_template, template_size_for, EyePair, Point};
pub use geometry::{
    normalize_geometry, rotate_image, rotate_point, CropTransform, GeometryParams, MIN_EYE_DISTANCE, NORMALIZED_SIZE,
};
pub use ncc::{ncc_match, NccResult};
pub use retinex::{asr_illumination, estimate_illumination, AsrParams};

use crate::error::{Error, Result};
use crate::image::{load_image, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub min_score: f64,
    /// Sets the synthetic template size when no template file is given.
    pub expected_eye_distance: f64,
    pub left_template: Option<PathBuf>,
    pub right_template: Option<PathBuf>,
    pub asr: AsrParams,
    /// Run illumination compensation.
    pub illumination: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_score: 0.3,
            expected_eye_distance: 40.0,
            left_template: None,
            right_template: None,
            asr: AsrParams::default(),
            illumination: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.min_score) {
            return Err(Error::InvalidParams(format!("min_score must lie in [-1, 1], got {}", self.min_score)));
        }
        if !(self.expected_eye_distance > 0.0) {
            return Err(Error::InvalidParams("expected_eye_distance must be positive".into()));
        }
        self.asr.validate()
    }
}

/// Intermediate images of one preprocessing run.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    /// `None` when the input was already normalized.
    pub eyes: Option<EyePair>,
    pub crop: Option<CropTransform>,
    pub normalized: Image,
    pub output: Image,
}

/// Preprocessing with its templates loaded once.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub config: PreprocessConfig,
    left_template: Image,
    right_template: Image,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig) -> Result<Self> {
        config.validate()?;
        let synthetic = || synthetic_eye_template(template_size_for(config.expected_eye_distance));
        let load = |p: &Option<PathBuf>| match p {
            Some(path) => load_image(path),
            None => Ok(synthetic()),
        };
        let left_template = load(&config.left_template)?;
        let right_template = match (&config.right_template, &config.left_template) {
            (None, Some(_)) => left_template.flip_horizontal(),
            _ => load(&config.right_template)?,
        };
        Ok(Preprocessor {
            config,
            left_template,
            right_template,
        })
    }

    pub fn templates(&self) -> (&Image, &Image) {
        (&self.left_template, &self.right_template)
    }

    pub fn detect(&self, image: &Image) -> Result<EyePair> {
        detect_eyes(image, &self.left_template, &self.right_template, self.config.min_score)
    }

    /// Full chain: eyes (detected unless given), geometric crop to 128×128,
    /// then illumination compensation.
    pub fn run(&self, image: &Image, eyes: Option<EyePair>) -> Result<Preprocessed> {
        let eyes = match eyes {
            Some(e) => e,
            None => self.detect(image)?,
        };
        let crop = CropTransform::new(&eyes)?;
        let normalized = normalize_geometry(image, &eyes)?;
        let output = self.illuminate(&normalized)?;
        Ok(Preprocessed {
            eyes: Some(eyes),
            crop: Some(crop),
            normalized,
            output,
        })
    }

    /// Path for images that are already cropped: resize to 128×128 if needed,
    /// then illumination compensation.
    pub fn run_prenormalized(&self, image: &Image) -> Result<Preprocessed> {
        let normalized = if image.width() == NORMALIZED_SIZE && image.height() == NORMALIZED_SIZE {
            image.clone()
        } else {
            image.resize_bilinear(NORMALIZED_SIZE, NORMALIZED_SIZE)
        };
        let output = self.illuminate(&normalized)?;
        Ok(Preprocessed {
            eyes: None,
            crop: None,
            normalized,
            output,
        })
    }

    fn illuminate(&self, image: &Image) -> Result<Image> {
        if self.config.illumination {
            asr_illumination(image, &self.config.asr)
        } else {
            Ok(image.clone())
        }
    }
}

/// Marks the eye centers with small crosses (black on bright pixels, white
/// on dark ones).
pub fn draw_eyes(image: &Image, eyes: &EyePair) -> Image {
    let mut out = image.clone();
    for p in [eyes.left, eyes.right] {
        let (cx, cy) = (p.x.round() as isize, p.y.round() as isize);
        for d in -3isize..=3 {
            for (x, y) in [(cx + d, cy), (cx, cy + d)] {
                set_contrasting(&mut out, x, y);
            }
        }
    }
    out
}

/// Draws a closed polygon through `corners`.
pub fn draw_polygon(image: &Image, corners: &[Point]) -> Image {
    let mut out = image.clone();
    for i in 0..corners.len() {
        let a = corners[i];
        let b = corners[(i + 1) % corners.len()];
        let steps = (a.distance(&b).ceil() as usize).max(1) * 2;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = a.x + t * (b.x - a.x);
            let y = a.y + t * (b.y - a.y);
            set_contrasting(&mut out, x.round() as isize, y.round() as isize);
        }
    }
    out
}

fn set_contrasting(img: &mut Image, x: isize, y: isize) {
    if x < 0 || y < 0 || x as usize >= img.width() || y as usize >= img.height() {
        return;
    }
    let (x, y) = (x as usize, y as usize);
    let v = if img.get(x, y) > 0.5 { 0.0 } else { 1.0 };
    img.set(x, y, v);
}
