use std::sync::OnceLock;

use gaborface::dataset::SplitMix64;
use gaborface::filter_selection::{
    eigendecompose, filter_covariance, filters_to_matrix, orthogonal_bank, select_bank, FilterEigens, FilterMatrix,
    SelectionCriterion,
};
use gaborface::gabor::{build_bank, convolve, BankParams, ComplexKernel, FilterBank, GaborBank};
use gaborface::image::Image;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

struct Default40 {
    bank: GaborBank,
    fm: FilterMatrix,
    eigens: FilterEigens,
}

fn default_bank() -> &'static Default40 {
    static CELL: OnceLock<Default40> = OnceLock::new();
    CELL.get_or_init(|| {
        let bank = build_bank(&BankParams::default()).unwrap();
        let fm = filters_to_matrix(&bank, true).unwrap();
        let eigens = eigendecompose(&filter_covariance(&fm)).unwrap();
        Default40 { bank, fm, eigens }
    })
}

struct Kernels(Vec<ComplexKernel>);

impl FilterBank for Kernels {
    fn kernels(&self) -> &[ComplexKernel] {
        &self.0
    }
}

fn random_bank(seed: u64, n: usize, size: usize) -> Kernels {
    let mut rng = SplitMix64::new(seed);
    Kernels(
        (0..n)
            .map(|_| {
                let data = (0..size * size)
                    .map(|_| Complex64::new(rng.next_f64() - 0.5, rng.next_f64() - 0.5))
                    .collect();
                ComplexKernel::new(size, data).unwrap()
            })
            .collect(),
    )
}

fn kernel_matrix(kernels: &[ComplexKernel]) -> DMatrix<Complex64> {
    let rows = kernels[0].data.len();
    DMatrix::from_fn(rows, kernels.len(), |r, c| kernels[c].data[r])
}

fn trace(m: &DMatrix<Complex64>) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

#[test]
fn default_bank_trace_matches_spectrum() {
    let d = default_bank();
    let t = trace(&filter_covariance(&d.fm));
    let s: f64 = d.eigens.eigenvalues.iter().sum();
    assert!((t - s).abs() <= 1e-8 * t, "{t} vs {s}");
}

#[test]
fn default_bank_cumulative_variance_is_monotone() {
    let c = &default_bank().eigens.cumulative_variance;
    assert_eq!(c.len(), 40);
    assert!(c.windows(2).all(|w| w[1] >= w[0]));
    assert!(c[0] > 0.0 && c[39] == 1.0);
}

#[test]
fn selection_is_deterministic() {
    let d = default_bank();
    let (a, _) = select_bank(&d.bank, SelectionCriterion::Count(25), true).unwrap();
    let (b, _) = select_bank(&d.bank, SelectionCriterion::Count(25), true).unwrap();
    assert_eq!(a.kernels, b.kernels);
    assert_eq!(a.eigenvalues, b.eigenvalues);
}

#[test]
fn full_orthogonal_bank_is_orthonormal_and_spans_the_bank() {
    let d = default_bank();
    let ortho = orthogonal_bank(&d.fm, &d.eigens, 40, &d.bank.params).unwrap();
    let q = kernel_matrix(&ortho.kernels);
    let gram = q.adjoint() * &q;
    let defect = (gram - DMatrix::<Complex64>::identity(40, 40)).map(|z| z.norm()).max();
    assert!(defect < 1e-8, "{defect}");

    let centered = d.fm.centered_columns();
    for (name, cols) in [("centered", &centered), ("raw", &d.fm.columns)] {
        for i in 0..40 {
            let g = cols.column(i).into_owned();
            let resid = &g - &q * (q.adjoint() * &g);
            let rel = resid.norm() / g.norm();
            assert!(rel < 1e-6, "{name} filter {i}: residual {rel}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Each principal filter's response is the eigenvector-weighted sum of
    /// the centered filter responses, scaled by 1/√λ.
    #[test]
    fn principal_response_is_weighted_sum(seed in any::<u64>(), j in 0usize..39) {
        let d = default_bank();
        let ortho = orthogonal_bank(&d.fm, &d.eigens, 39, &d.bank.params).unwrap();
        let mut rng = SplitMix64::new(seed);
        let img = Image::from_fn(20, 18, |_, _| rng.next_f64());
        let centered = d.fm.centered_columns();
        let size = d.fm.a;
        let got = convolve(&img, &ortho.kernels[j]);
        let scale = d.eigens.eigenvalues[j].sqrt();
        let mut want = vec![Complex64::new(0.0, 0.0); got.data.len()];
        for i in 0..40 {
            let k = ComplexKernel::new(size, centered.column(i).iter().copied().collect()).unwrap();
            let r = convolve(&img, &k);
            let w = d.eigens.eigenvectors[(i, j)] / scale;
            for (acc, z) in want.iter_mut().zip(&r.data) {
                *acc += w * z;
            }
        }
        let peak = want.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let err = got.data.iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        prop_assert!(err <= 1e-9 * peak.max(1e-12), "err {} peak {}", err, peak);
    }

    #[test]
    fn random_bank_invariants(seed in any::<u64>(), n in 2usize..9, centered in any::<bool>()) {
        let bank = random_bank(seed, n, 5);
        let fm = filters_to_matrix(&bank, centered).unwrap();
        let gt = filter_covariance(&fm);
        let e = eigendecompose(&gt).unwrap();
        let total: f64 = e.eigenvalues.iter().sum();
        prop_assert!((trace(&gt) - total).abs() <= 1e-8 * total);
        prop_assert!(e.cumulative_variance.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(e.eigenvalues.windows(2).all(|w| w[1] <= w[0]));

        let ortho = orthogonal_bank(&fm, &e, n, &BankParams::default()).unwrap();
        let q = kernel_matrix(&ortho.kernels);
        let defect = (q.adjoint() * &q - DMatrix::<Complex64>::identity(n, n)).map(|z| z.norm()).max();
        prop_assert!(defect < 1e-8);
        for i in 0..n {
            let g: DVector<Complex64> = fm.columns.column(i).into_owned();
            let resid = &g - &q * (q.adjoint() * &g);
            prop_assert!(resid.norm() < 1e-8 * g.norm());
        }
    }
}
