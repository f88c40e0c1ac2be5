use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, RealGrid};

/// Adaptive single-scale Retinex controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsrParams {
    pub iterations: usize,
    /// Discontinuity scale τ for the neighbor weights.
    pub tau: f64,
    pub epsilon: f64,
    pub log_domain: bool,
}

impl Default for AsrParams {
    fn default() -> Self {
        AsrParams {
            iterations: 10,
            tau: 0.1,
            epsilon: 1e-3,
            log_domain: true,
        }
    }
}

impl AsrParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParams("ASR iterations must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParams(format!("ASR tau must be positive, got {}", self.tau)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParams(format!("ASR epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Illumination estimate: `iterations` passes of 3×3 smoothing where each
/// neighbor is weighted by `exp(−(ΔI/τ)²)` against the current center value
/// and the weights are renormalized per pixel. Borders replicate.
pub fn estimate_illumination(image: &Image, params: &AsrParams) -> RealGrid {
    let mut cur = image.to_grid();
    let inv_tau2 = 1.0 / (params.tau * params.tau);
    for _ in 0..params.iterations {
        let prev = cur.clone();
        cur = RealGrid::from_fn(prev.width, prev.height, |x, y| {
            let c = prev.get(x, y);
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let v = prev.get_clamped(x as isize + dx, y as isize + dy);
                    let d = v - c;
                    let w = (-d * d * inv_tau2).exp();
                    acc += w * v;
                    wsum += w;
                }
            }
            acc / wsum
        });
    }
    cur
}

/// Reflectance `log(I+ε) − log(L+ε)` (or `I/(L+ε)`), rescaled linearly to
/// [0, 1]. A constant reflectance maps to 0.5.
pub fn asr_illumination(image: &Image, params: &AsrParams) -> Result<Image> {
    params.validate()?;
    let l = estimate_illumination(image, params);
    let eps = params.epsilon;
    let r = RealGrid::from_fn(image.width(), image.height(), |x, y| {
        let i = image.get(x, y);
        let li = l.get(x, y);
        if params.log_domain {
            (i + eps).ln() - (li + eps).ln()
        } else {
            i / (li + eps)
        }
    });
    Ok(Image::from_grid_rescaled(&r))
}
