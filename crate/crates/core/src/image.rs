//! Grayscale rasters and PGM/PNG/JPEG input.
//!
//! An [`Image`] holds row-major intensities in `[0, 1]`. Intermediate real or
//! complex fields (correlation maps, filter responses) use the unconstrained
//! [`Grid`].

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major 2D field with no value constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::SizeMismatch(format!(
                "grid {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with coordinates clamped to the border (edge replication).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub type RealGrid = Grid<f64>;

/// Single-channel intensity image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("image must be non-empty".into()));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{}x{} image needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidImage(format!("value {bad} outside [0,1]")));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Builds an image from a closure; results are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        let g = Grid::from_fn(width, height, |x, y| {
            let v = f(x, y);
            if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            }
        });
        Image {
            width,
            height,
            data: g.data,
        }
    }

    /// Affinely rescales an arbitrary real grid into `[0, 1]`. A constant grid
    /// maps to 0.5 everywhere.
    pub fn from_grid_rescaled(grid: &RealGrid) -> Self {
        let (lo, hi) = grid
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        let data = if range > 0.0 && range.is_finite() {
            grid.data
                .iter()
                .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
                .collect()
        } else {
            vec![0.5; grid.data.len()]
        };
        Image {
            width: grid.width,
            height: grid.height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    pub fn to_grid(&self) -> RealGrid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear sample at a continuous position; integer coordinates hit
    /// pixel values exactly. Out-of-range positions replicate the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let p00 = self.get_clamped(xi, yi);
        let p10 = self.get_clamped(xi + 1, yi);
        let p01 = self.get_clamped(xi, yi + 1);
        let p11 = self.get_clamped(xi + 1, yi + 1);
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        top + (bottom - top) * fy
    }

    /// Bilinear resize where the output grid spans the source extent.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Image::from_fn(width, height, |x, y| {
            // pixel-center alignment
            let srcx = (x as f64 + 0.5) * sx - 0.5;
            let srcy = (y as f64 + 0.5) * sy - 0.5;
            self.sample_bilinear(srcx, srcy)
        })
    }

    /// Averages `factor`×`factor` blocks. Partial blocks at the right and
    /// bottom edges average the pixels they contain.
    pub fn box_downsample(&self, factor: usize) -> Image {
        let g = box_average(&self.to_grid(), factor);
        Image {
            width: g.width,
            height: g.height,
            data: g.data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Horizontal mirror.
    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Copies `patch` with its top-left corner at `(x0, y0)`; pixels falling
    /// outside are dropped.
    pub fn paste(&mut self, patch: &Image, x0: isize, y0: isize) {
        for py in 0..patch.height {
            for px in 0..patch.width {
                let x = x0 + px as isize;
                let y = y0 + py as isize;
                if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                    self.data[y as usize * self.width + x as usize] = patch.get(px, py);
                }
            }
        }
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }
}

/// Block average over `factor`×`factor` tiles with ceiling output dimensions.
pub fn box_average(grid: &RealGrid, factor: usize) -> RealGrid {
    assert!(factor >= 1);
    if factor == 1 {
        return grid.clone();
    }
    let ow = grid.width.div_ceil(factor);
    let oh = grid.height.div_ceil(factor);
    Grid::from_fn(ow, oh, |bx, by| {
        let x0 = bx * factor;
        let y0 = by * factor;
        let x1 = (x0 + factor).min(grid.width);
        let y1 = (y0 + factor).min(grid.height);
        let mut acc = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                acc += grid.get(x, y);
            }
        }
        acc / ((x1 - x0) * (y1 - y0)) as f64
    })
}

/// Loads a PGM (P5), PNG or JPEG file as a grayscale image. Color images are
/// reduced by the unweighted channel average.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FileNotFound(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.len() >= 2 && &bytes[..2] == b"P5" {
        return decode_pgm(bytes);
    }
    if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        return Err(Error::UnsupportedFormat(format!(
            "netpbm variant P{} (only P5 is supported)",
            bytes[1] as char
        )));
    }
    let format = image::guess_format(bytes)
        .map_err(|_| Error::UnsupportedFormat("unrecognized file signature".into()))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(Error::UnsupportedFormat(format!("{format:?}")));
    }
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::CorruptHeader(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb
        .pixels()
        .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / (3.0 * 255.0))
        .collect();
    Image::new(w, h, data)
}

fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = read_header_int(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::CorruptHeader("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::CorruptHeader(format!("invalid maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::CorruptHeader("missing raster separator".into())),
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bpp;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::CorruptHeader(format!("raster truncated: need {need} bytes")))?;
    let scale = maxval as f64;
    let data = if bpp == 1 {
        raster.iter().map(|&b| (b as f64 / scale).min(1.0)).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / scale).min(1.0))
            .collect()
    };
    Image::new(width, height, data)
}

fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::CorruptHeader("header truncated".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::CorruptHeader("expected an integer field".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CorruptHeader("integer field overflow".into()))
}

/// Encodes an image as 8-bit binary PGM.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn save_pgm(img: &Image, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(img))?;
    Ok(())
}
