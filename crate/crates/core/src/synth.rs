//! Synthetic images for tests and demos.

use crate::dataset::SplitMix64;
use crate::image::Image;

/// Bright oval face on a dark background with `template` pasted at the two
/// eye centers.
pub fn synthetic_face(width: usize, height: usize, left: (usize, usize), right: (usize, usize), template: &Image) -> Image {
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let (rx, ry) = (0.39 * width as f64, 0.48 * height as f64);
    let mut img = Image::from_fn(width, height, |x, y| {
        let dx = (x as f64 - cx) / rx;
        let dy = (y as f64 - cy) / ry;
        if dx * dx + dy * dy < 1.0 {
            0.8
        } else {
            0.2
        }
    });
    let half = (template.width() as isize - 1) / 2;
    for (ex, ey) in [left, right] {
        img.paste(template, ex as isize - half, ey as isize - half);
    }
    img
}

/// Uniform random image in [0, 1).
pub fn noise_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = SplitMix64::new(seed);
    let data = (0..width * height).map(|_| rng.next_f64()).collect();
    Image::new(width, height, data).expect("values in [0, 1)")
}

/// A "subject" texture: a sum of oriented gratings whose frequencies,
/// orientations and phases depend on `subject`, with small per-`variant`
/// phase jitter, translation and additive noise.
pub fn subject_image(subject: u64, variant: u64, size: usize) -> Image {
    const GRATINGS: usize = 4;
    let mut srng = SplitMix64::new(0x5EED_0000 ^ subject.wrapping_mul(0x9E37_79B9));
    let gratings: Vec<(f64, f64, f64)> = (0..GRATINGS)
        .map(|_| {
            let freq = 0.08 + 0.25 * srng.next_f64();
            let theta = std::f64::consts::PI * srng.next_f64();
            let phase = std::f64::consts::TAU * srng.next_f64();
            (freq, theta, phase)
        })
        .collect();
    let mut vrng = SplitMix64::new(subject.wrapping_mul(0x1000_0001) ^ variant.wrapping_mul(0xABCD_EF01) ^ 0x77);
    let jitter: Vec<f64> = (0..GRATINGS).map(|_| 0.4 * (vrng.next_f64() - 0.5)).collect();
    let shift = (2.0 * (vrng.next_f64() - 0.5), 2.0 * (vrng.next_f64() - 0.5));
    let noise_seed = vrng.next_u64();
    let mut nrng = SplitMix64::new(noise_seed);
    let noise: Vec<f64> = (0..size * size).map(|_| 0.06 * (nrng.next_f64() - 0.5)).collect();
    Image::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + shift.0, y as f64 + shift.1);
        let s: f64 = gratings
            .iter()
            .zip(&jitter)
            .map(|(&(f, t, p), j)| (f * (px * t.cos() + py * t.sin()) + p + j).sin())
            .sum();
        0.5 + 0.45 * s / GRATINGS as f64 + noise[y * size + x]
    })
}
