use crate::error::{Error, Result};
use crate::image::{Grid, Image, RealGrid};

/// Correlation scores for every placement of a template (indexed by the
/// template's top-left corner) and the best one.
#[derive(Debug, Clone)]
pub struct NccResult {
    pub map: RealGrid,
    pub best: (usize, usize),
    pub score: f64,
}

/// Zero-mean template with its sum of squared deviations.
pub(crate) struct PreparedTemplate {
    pub width: usize,
    pub height: usize,
    centered: Vec<f64>,
    ss: f64,
}

impl PreparedTemplate {
    pub fn new(template: &Image) -> Result<Self> {
        let n = template.data().len() as f64;
        let mean = template.data().iter().sum::<f64>() / n;
        let centered: Vec<f64> = template.data().iter().map(|v| v - mean).collect();
        let ss: f64 = centered.iter().map(|v| v * v).sum();
        if !(ss > degenerate_threshold(template.data().len(), mean)) {
            return Err(Error::DegenerateTemplate);
        }
        Ok(PreparedTemplate {
            width: template.width(),
            height: template.height(),
            centered,
            ss,
        })
    }

    /// Score at top-left placement `(x0, y0)`; flat windows score 0.
    pub fn score_at(&self, image: &Image, x0: usize, y0: usize) -> f64 {
        let n = (self.width * self.height) as f64;
        let mut sum = 0.0;
        for ty in 0..self.height {
            let row = &image.data()[(y0 + ty) * image.width() + x0..][..self.width];
            sum += row.iter().sum::<f64>();
        }
        let mean = sum / n;
        let mut ss_f = 0.0;
        let mut cross = 0.0;
        for ty in 0..self.height {
            let row = &image.data()[(y0 + ty) * image.width() + x0..][..self.width];
            let trow = &self.centered[ty * self.width..][..self.width];
            for (f, t) in row.iter().zip(trow) {
                let d = f - mean;
                ss_f += d * d;
                cross += d * t;
            }
        }
        if ss_f <= degenerate_threshold(self.width * self.height, mean) {
            return 0.0;
        }
        (cross / (ss_f * self.ss).sqrt()).clamp(-1.0, 1.0)
    }
}

fn degenerate_threshold(n: usize, mean: f64) -> f64 {
    1e-20 * n as f64 * (1.0 + mean * mean)
}

/// Normalized cross-correlation
///
/// ```text
/// c = 1/(n−1) · Σ (f − f̄)(t − t̄) / (σ_f σ_t)
/// ```
///
/// with window statistics recomputed at every placement. Windows with zero
/// variance score 0.
pub fn ncc_match(image: &Image, template: &Image) -> Result<NccResult> {
    check_fits(image, template)?;
    let prepared = PreparedTemplate::new(template)?;
    let pw = image.width() - template.width() + 1;
    let ph = image.height() - template.height() + 1;
    let map = Grid::from_fn(pw, ph, |x, y| prepared.score_at(image, x, y));
    let (best, score) = argmax(&map, |_, _| true).expect("non-empty map");
    Ok(NccResult { map, best, score })
}

pub(crate) fn check_fits(image: &Image, template: &Image) -> Result<()> {
    if template.width() > image.width() || template.height() > image.height() {
        return Err(Error::TemplateTooLarge {
            template_w: template.width(),
            template_h: template.height(),
            image_w: image.width(),
            image_h: image.height(),
        });
    }
    Ok(())
}

/// Highest value among cells accepted by `keep`; ties keep the first in
/// row-major order.
pub(crate) fn argmax(map: &RealGrid, keep: impl Fn(usize, usize) -> bool) -> Option<((usize, usize), f64)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for y in 0..map.height {
        for x in 0..map.width {
            if !keep(x, y) {
                continue;
            }
            let v = map.get(x, y);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some(((x, y), v));
            }
        }
    }
    best
}
