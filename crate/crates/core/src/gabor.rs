//! Complex Gabor kernels, the 5×8 bank, correlation and magnitude features.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{box_average, Grid, Image, RealGrid};

/// Parameters of a single Gabor kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    /// Wavelength of the carrier, pixels.
    pub lambda: f64,
    /// Orientation of the carrier normal, radians.
    pub theta: f64,
    /// Phase offset, radians.
    pub psi: f64,
    /// Gaussian envelope sigma, pixels.
    pub sigma: f64,
    /// Spatial aspect ratio.
    pub gamma: f64,
    /// Odd side length of the sampled kernel.
    pub size: usize,
    /// Subtract the complex mean so the kernel has zero DC response.
    pub dc_correct: bool,
}

impl GaborParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda, self.theta, self.psi, self.sigma, self.gamma]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lambda <= 0.0 || self.sigma <= 0.0 || self.gamma <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "lambda, sigma and gamma must be positive and finite: {self:?}"
            )));
        }
        if self.size < 3 || self.size % 2 == 0 {
            return Err(Error::InvalidParams(format!(
                "kernel size must be odd and >= 3, got {}",
                self.size
            )));
        }
        Ok(())
    }
}

/// Square complex kernel sampled at integer offsets around its center pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexKernel {
    pub size: usize,
    /// Row-major; entry `(row, col)` holds offset `(x, y) = (col - h, row - h)`.
    pub data: Vec<Complex64>,
}

impl ComplexKernel {
    pub fn new(size: usize, data: Vec<Complex64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 || data.len() != size * size {
            return Err(Error::InvalidParams(format!(
                "kernel of side {size} with {} entries",
                data.len()
            )));
        }
        Ok(ComplexKernel { size, data })
    }

    pub fn half(&self) -> isize {
        (self.size / 2) as isize
    }

    /// Value at offset `(x, y)` from the center.
    pub fn at(&self, x: isize, y: isize) -> Complex64 {
        let h = self.half();
        self.data[((y + h) as usize) * self.size + (x + h) as usize]
    }

    /// Affinely rescaled real part, for inspection dumps.
    pub fn real_image(&self) -> Image {
        Image::from_grid_rescaled(&Grid {
            width: self.size,
            height: self.size,
            data: self.data.iter().map(|z| z.re).collect(),
        })
    }

    pub fn imag_image(&self) -> Image {
        Image::from_grid_rescaled(&Grid {
            width: self.size,
            height: self.size,
            data: self.data.iter().map(|z| z.im).collect(),
        })
    }
}

/// Samples the complex Gabor function
///
/// ```text
/// g(x, y) = exp(-(x'² + γ² y'²) / (2σ²)) · exp(i (2π x'/λ + ψ))
/// x' =  x cosθ + y sinθ
/// y' = -x sinθ + y cosθ
/// ```
pub fn build_kernel(p: &GaborParams) -> Result<ComplexKernel> {
    p.validate()?;
    let h = (p.size / 2) as isize;
    let (sin_t, cos_t) = p.theta.sin_cos();
    let mut data = Vec::with_capacity(p.size * p.size);
    for y in -h..=h {
        for x in -h..=h {
            let (x, y) = (x as f64, y as f64);
            let xr = x * cos_t + y * sin_t;
            let yr = -x * sin_t + y * cos_t;
            let envelope = (-(xr * xr + p.gamma * p.gamma * yr * yr) / (2.0 * p.sigma * p.sigma)).exp();
            let arg = 2.0 * PI * xr / p.lambda + p.psi;
            data.push(Complex64::new(envelope * arg.cos(), envelope * arg.sin()));
        }
    }
    if p.dc_correct {
        let mean = data.iter().sum::<Complex64>() / data.len() as f64;
        for v in &mut data {
            *v -= mean;
        }
    }
    Ok(ComplexKernel { size: p.size, data })
}

fn default_n_scales() -> usize {
    5
}
fn default_n_orientations() -> usize {
    8
}
fn default_omega_max() -> f64 {
    PI / 2.0
}
fn default_scale_factor() -> f64 {
    std::f64::consts::SQRT_2
}
fn default_gamma() -> f64 {
    0.5
}
fn default_sigma_factor() -> f64 {
    0.56
}
fn default_size_factor() -> f64 {
    2.5
}
fn default_true() -> bool {
    true
}

/// Bank layout: scale `m` has `ω_m = ω_max / scale_factor^m`, `λ_m = 2π/ω_m`
/// and `σ_m = sigma_factor · λ_m`; orientation `n` has `θ_n = nπ/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankParams {
    #[serde(default = "default_n_scales")]
    pub n_scales: usize,
    #[serde(default = "default_n_orientations")]
    pub n_orientations: usize,
    /// Highest radial frequency, radians per pixel.
    #[serde(default = "default_omega_max")]
    pub omega_max: f64,
    #[serde(default = "default_scale_factor")]
    pub scale_factor: f64,
    #[serde(default)]
    pub psi: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// σ = sigma_factor · λ.
    #[serde(default = "default_sigma_factor")]
    pub sigma_factor: f64,
    /// Kernel side = 2·⌈size_factor·σ_max⌉ + 1 unless `kernel_size` is set.
    #[serde(default = "default_size_factor")]
    pub size_factor: f64,
    #[serde(default)]
    pub kernel_size: Option<usize>,
    #[serde(default = "default_true")]
    pub dc_correct: bool,
}

impl Default for BankParams {
    fn default() -> Self {
        BankParams {
            n_scales: default_n_scales(),
            n_orientations: default_n_orientations(),
            omega_max: default_omega_max(),
            scale_factor: default_scale_factor(),
            psi: 0.0,
            gamma: default_gamma(),
            sigma_factor: default_sigma_factor(),
            size_factor: default_size_factor(),
            kernel_size: None,
            dc_correct: true,
        }
    }
}

impl BankParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_scales == 0 || self.n_orientations == 0 {
            return Err(Error::InvalidParams("bank needs at least one scale and orientation".into()));
        }
        let positive = [self.omega_max, self.scale_factor, self.sigma_factor, self.size_factor, self.gamma];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidParams(format!("bank parameters must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn omega(&self, scale: usize) -> f64 {
        self.omega_max / self.scale_factor.powi(scale as i32)
    }

    pub fn lambda(&self, scale: usize) -> f64 {
        2.0 * PI / self.omega(scale)
    }

    pub fn sigma(&self, scale: usize) -> f64 {
        self.sigma_factor * self.lambda(scale)
    }

    pub fn theta(&self, orientation: usize) -> f64 {
        orientation as f64 * PI / self.n_orientations as f64
    }

    /// Common side length of every kernel in the bank.
    pub fn kernel_size(&self) -> usize {
        if let Some(s) = self.kernel_size {
            return s;
        }
        let sigma_max = (0..self.n_scales).map(|m| self.sigma(m)).fold(0.0, f64::max);
        2 * (self.size_factor * sigma_max).ceil() as usize + 1
    }

    pub fn filter_params(&self) -> Vec<GaborParams> {
        let size = self.kernel_size();
        let mut out = Vec::with_capacity(self.n_scales * self.n_orientations);
        for m in 0..self.n_scales {
            for n in 0..self.n_orientations {
                out.push(GaborParams {
                    lambda: self.lambda(m),
                    theta: self.theta(n),
                    psi: self.psi,
                    sigma: self.sigma(m),
                    gamma: self.gamma,
                    size,
                    dc_correct: self.dc_correct,
                });
            }
        }
        out
    }
}

/// Anything that supplies an ordered list of equally sized kernels.
pub trait FilterBank {
    fn kernels(&self) -> &[ComplexKernel];

    fn len(&self) -> usize {
        self.kernels().len()
    }

    fn is_empty(&self) -> bool {
        self.kernels().is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct GaborBank {
    pub params: BankParams,
    /// Per-kernel parameters, scale-major then orientation.
    pub filters: Vec<GaborParams>,
    pub kernels: Vec<ComplexKernel>,
}

impl FilterBank for GaborBank {
    fn kernels(&self) -> &[ComplexKernel] {
        &self.kernels
    }
}

impl FilterBank for [ComplexKernel] {
    fn kernels(&self) -> &[ComplexKernel] {
        self
    }
}

impl FilterBank for Vec<ComplexKernel> {
    fn kernels(&self) -> &[ComplexKernel] {
        self
    }
}

pub fn build_bank(params: &BankParams) -> Result<GaborBank> {
    params.validate()?;
    let filters = params.filter_params();
    let kernels = filters.iter().map(build_kernel).collect::<Result<Vec<_>>>()?;
    Ok(GaborBank {
        params: params.clone(),
        filters,
        kernels,
    })
}

/// Complex response grid: real part `E`, imaginary part `O`.
pub type ComplexResponse = Grid<Complex64>;

pub fn even_part(resp: &ComplexResponse) -> RealGrid {
    resp.map(|z| z.re)
}

pub fn odd_part(resp: &ComplexResponse) -> RealGrid {
    resp.map(|z| z.im)
}

/// `√(E² + O²)` pointwise.
pub fn magnitude(resp: &ComplexResponse) -> RealGrid {
    resp.map(|z| (z.re * z.re + z.im * z.im).sqrt())
}

/// Four-quadrant `atan2(O, E)` in `(-π, π]`; `(0, 0)` maps to 0.
pub fn phase(resp: &ComplexResponse) -> RealGrid {
    resp.map(|z| {
        if z.re == 0.0 && z.im == 0.0 {
            0.0
        } else {
            let a = z.im.atan2(z.re);
            // atan2(-0.0, negative) = -π; fold onto +π
            if a <= -PI {
                PI
            } else {
                a
            }
        }
    })
}

/// How pixels outside the image are filled during correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Border {
    #[default]
    Replicate,
    Zero,
}

/// FFT correlator for one image size and a fixed set of kernels.
///
/// Computes `G(x, y) = Σ_{u,v} I(x+u, y+v) · g(u, v)` (no kernel flip). The
/// image is padded by the kernel half-width on every side, so the circular
/// product over the padded extent has no wrap-around in the kept region.
pub struct Correlator {
    width: usize,
    height: usize,
    half: usize,
    pw: usize,
    ph: usize,
    border: Border,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    spectra: Vec<Vec<Complex64>>,
}

impl Correlator {
    pub fn new(kernels: &[ComplexKernel], width: usize, height: usize, border: Border) -> Result<Self> {
        let size = kernels.first().map(|k| k.size).unwrap_or(1);
        if kernels.iter().any(|k| k.size != size) {
            return Err(Error::UnequalKernelSizes);
        }
        if width == 0 || height == 0 {
            return Err(Error::SizeMismatch("correlation needs a non-empty image".into()));
        }
        let half = size / 2;
        let pw = width + 2 * half;
        let ph = height + 2 * half;
        let mut planner = FftPlanner::new();
        let mut c = Correlator {
            width,
            height,
            half,
            pw,
            ph,
            border,
            row_fwd: planner.plan_fft_forward(pw),
            col_fwd: planner.plan_fft_forward(ph),
            row_inv: planner.plan_fft_inverse(pw),
            col_inv: planner.plan_fft_inverse(ph),
            spectra: Vec::with_capacity(kernels.len()),
        };
        for k in kernels {
            // place g(u, v) at circular index (-u, -v)
            let mut buf = vec![Complex64::new(0.0, 0.0); pw * ph];
            let h = half as isize;
            for v in -h..=h {
                for u in -h..=h {
                    let ix = (-u).rem_euclid(pw as isize) as usize;
                    let iy = (-v).rem_euclid(ph as isize) as usize;
                    buf[iy * pw + ix] = k.at(u, v);
                }
            }
            c.fft2(&mut buf, false);
            c.spectra.push(buf);
        }
        Ok(c)
    }

    pub fn n_kernels(&self) -> usize {
        self.spectra.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        let mut column = vec![Complex64::new(0.0, 0.0); self.ph];
        for x in 0..self.pw {
            for y in 0..self.ph {
                column[y] = buf[y * self.pw + x];
            }
            col.process(&mut column);
            for y in 0..self.ph {
                buf[y * self.pw + x] = column[y];
            }
        }
    }

    /// Forward spectrum of the padded image, shared by all kernels.
    pub fn image_spectrum(&self, image: &Image) -> Result<Vec<Complex64>> {
        if (image.width(), image.height()) != (self.width, self.height) {
            return Err(Error::SizeMismatch(format!(
                "correlator built for {}x{}, image is {}x{}",
                self.width,
                self.height,
                image.width(),
                image.height()
            )));
        }
        let h = self.half as isize;
        let mut buf = Vec::with_capacity(self.pw * self.ph);
        for py in 0..self.ph as isize {
            for px in 0..self.pw as isize {
                let (x, y) = (px - h, py - h);
                let inside = x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height;
                let v = match (self.border, inside) {
                    (_, true) => image.get(x as usize, y as usize),
                    (Border::Replicate, false) => image.get_clamped(x, y),
                    (Border::Zero, false) => 0.0,
                };
                buf.push(Complex64::new(v, 0.0));
            }
        }
        self.fft2(&mut buf, false);
        Ok(buf)
    }

    /// Response of kernel `index` given a precomputed image spectrum.
    pub fn response(&self, spectrum: &[Complex64], index: usize) -> ComplexResponse {
        let mut buf: Vec<Complex64> = spectrum
            .iter()
            .zip(&self.spectra[index])
            .map(|(a, b)| a * b)
            .collect();
        self.fft2(&mut buf, true);
        let norm = 1.0 / (self.pw * self.ph) as f64;
        let h = self.half;
        Grid::from_fn(self.width, self.height, |x, y| buf[(y + h) * self.pw + x + h] * norm)
    }

    pub fn responses(&self, image: &Image) -> Result<Vec<ComplexResponse>> {
        let spec = self.image_spectrum(image)?;
        Ok((0..self.spectra.len()).map(|i| self.response(&spec, i)).collect())
    }
}

/// Correlates `image` with `kernel` using edge replication at the borders.
pub fn convolve(image: &Image, kernel: &ComplexKernel) -> ComplexResponse {
    convolve_with_border(image, kernel, Border::Replicate)
}

pub fn convolve_with_border(image: &Image, kernel: &ComplexKernel, border: Border) -> ComplexResponse {
    let c = Correlator::new(std::slice::from_ref(kernel), image.width(), image.height(), border)
        .expect("single kernel and non-empty image");
    let spec = c.image_spectrum(image).expect("dimensions match by construction");
    c.response(&spec, 0)
}

/// Layout of a feature vector: filter-major, row-major within each filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub n_filters: usize,
    pub block_width: usize,
    pub block_height: usize,
    pub downsample: usize,
}

impl FeatureLayout {
    pub fn new(n_filters: usize, width: usize, height: usize, downsample: usize) -> Self {
        FeatureLayout {
            n_filters,
            block_width: width.div_ceil(downsample),
            block_height: height.div_ceil(downsample),
            downsample,
        }
    }

    pub fn len(&self) -> usize {
        self.n_filters * self.block_width * self.block_height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: FeatureLayout,
}

fn default_downsample() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureOptions {
    /// Block-averaging factor applied to each magnitude map.
    #[serde(default = "default_downsample")]
    pub downsample: usize,
    /// Z-score each filter's block before concatenation.
    #[serde(default = "default_true")]
    pub zscore: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            downsample: 1,
            zscore: true,
        }
    }
}

const VARIANCE_FLOOR: f64 = 1e-8;

/// Magnitude features for a fixed bank and image size.
pub struct FeatureExtractor {
    correlator: Correlator,
    options: FeatureOptions,
}

impl FeatureExtractor {
    pub fn new<B: FilterBank + ?Sized>(bank: &B, width: usize, height: usize, options: FeatureOptions) -> Result<Self> {
        if options.downsample == 0 {
            return Err(Error::InvalidParams("downsample factor must be >= 1".into()));
        }
        if bank.is_empty() {
            return Err(Error::InvalidParams("filter bank is empty".into()));
        }
        Ok(FeatureExtractor {
            correlator: Correlator::new(bank.kernels(), width, height, Border::Replicate)?,
            options,
        })
    }

    pub fn layout(&self) -> FeatureLayout {
        let (w, h) = self.correlator.dims();
        FeatureLayout::new(self.correlator.n_kernels(), w, h, self.options.downsample)
    }

    /// Per filter: correlate, take magnitude, block-average, z-score; then
    /// scale the concatenation to unit Euclidean norm.
    pub fn extract(&self, image: &Image) -> Result<FeatureVector> {
        let spec = self.correlator.image_spectrum(image)?;
        let layout = self.layout();
        let mut values = Vec::with_capacity(layout.len());
        for i in 0..self.correlator.n_kernels() {
            let mag = magnitude(&self.correlator.response(&spec, i));
            let mut block = box_average(&mag, self.options.downsample).data;
            if self.options.zscore {
                let n = block.len() as f64;
                let mean = block.iter().sum::<f64>() / n;
                let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let inv_sd = 1.0 / var.max(VARIANCE_FLOOR).sqrt();
                for v in &mut block {
                    *v = (*v - mean) * inv_sd;
                }
            }
            values.extend(block);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            for v in &mut values {
                *v /= norm;
            }
        } else {
            // all-zero response; any unit vector is as good as another
            let u = 1.0 / (values.len() as f64).sqrt();
            values.iter_mut().for_each(|v| *v = u);
        }
        Ok(FeatureVector { values, layout })
    }
}

pub fn extract_features<B: FilterBank + ?Sized>(image: &Image, bank: &B, options: FeatureOptions) -> Result<FeatureVector> {
    FeatureExtractor::new(bank, image.width(), image.height(), options)?.extract(image)
}
