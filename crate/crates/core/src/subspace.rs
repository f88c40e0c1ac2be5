//! Feature-space PCA chained with LDA (Fisherfaces).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fix_phases, hermitian_eigen};

const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// t × f, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Top-f eigenvalues of the scatter `S_T = Σ (x − μ)(x − μ)ᵀ`, descending.
    pub eigenvalues: Vec<f64>,
    /// Every eigenvalue the decomposition produced, descending.
    pub spectrum: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcaMethod {
    /// Gram (snapshot) path when t > N, covariance path otherwise.
    #[default]
    Auto,
    /// Eigenvectors of the N×N Gram matrix, back-projected.
    Snapshot,
    /// Eigenvectors of the t×t scatter matrix.
    Direct,
}

/// Stacks equally long sample vectors as the columns of a t × N matrix.
pub fn sample_matrix(samples: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let t = samples.first().map(|s| s.len()).unwrap_or(0);
    if let Some(bad) = samples.iter().find(|s| s.len() != t) {
        return Err(Error::DimMismatch {
            expected: t,
            actual: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(t, samples.len(), |r, c| samples[c][r]))
}

pub fn pca_fit(samples: &[Vec<f64>], f: usize) -> Result<PcaModel> {
    pca_fit_matrix(sample_matrix(samples)?, f, PcaMethod::Auto)
}

pub fn pca_fit_with(samples: &[Vec<f64>], f: usize, method: PcaMethod) -> Result<PcaModel> {
    pca_fit_matrix(sample_matrix(samples)?, f, method)
}

/// Fits PCA on the columns of `x` (t × N), consuming it.
pub fn pca_fit_matrix(mut x: DMatrix<f64>, f: usize, method: PcaMethod) -> Result<PcaModel> {
    let (t, n) = x.shape();
    if n < 2 {
        return Err(Error::TooFewSamples(format!("PCA needs at least 2 samples, got {n}")));
    }
    let limit = t.min(n - 1);
    if f == 0 || f > limit {
        return Err(Error::TargetDimTooLarge { requested: f, limit });
    }
    let mean = x.column_mean();
    for mut col in x.column_iter_mut() {
        col -= &mean;
    }
    let snapshot = match method {
        PcaMethod::Auto => t > n,
        PcaMethod::Snapshot => true,
        PcaMethod::Direct => false,
    };
    let (basis, spectrum) = if snapshot {
        let gram = x.tr_mul(&x);
        let eig = hermitian_eigen(&symmetrize(gram))?;
        let spectrum: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
        let top = spectrum[0];
        let nonzero = spectrum[..f].iter().filter(|&&v| v > RANK_TOLERANCE * top && top > 0.0).count();
        let mut coeffs = eig.vectors.columns(0, nonzero).into_owned();
        for (j, mut col) in coeffs.column_iter_mut().enumerate() {
            col /= spectrum[j].sqrt();
        }
        let mut basis = DMatrix::zeros(t, f);
        basis.columns_mut(0, nonzero).copy_from(&(&x * coeffs));
        complete_basis(&mut basis, nonzero);
        fix_phases(&mut basis);
        (basis, spectrum)
    } else {
        let scatter = &x * x.transpose();
        let eig = hermitian_eigen(&symmetrize(scatter))?;
        let spectrum: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
        (eig.vectors.columns(0, f).into_owned(), spectrum)
    };
    Ok(PcaModel {
        mean,
        basis,
        eigenvalues: spectrum[..f].to_vec(),
        spectrum,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Fills columns `from..` with unit vectors orthogonal to all earlier ones,
/// drawn by Gram-Schmidt from the standard basis in index order.
fn complete_basis(basis: &mut DMatrix<f64>, from: usize) {
    let (t, f) = basis.shape();
    let mut candidate = 0usize;
    for j in from..f {
        while candidate < t {
            let mut v = DVector::zeros(t);
            v[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for i in 0..j {
                    let b = basis.column(i);
                    let c = b.dot(&v);
                    v -= b * c;
                }
            }
            let norm = v.norm();
            if norm > 1e-6 {
                basis.set_column(j, &(v / norm));
                break;
            }
        }
    }
}

pub fn pca_project(model: &PcaModel, x: &[f64]) -> Result<DVector<f64>> {
    if x.len() != model.input_dim() {
        return Err(Error::DimMismatch {
            expected: model.input_dim(),
            actual: x.len(),
        });
    }
    let centered = DVector::from_iterator(x.len(), x.iter().zip(model.mean.iter()).map(|(a, m)| a - m));
    Ok(model.basis.tr_mul(&centered))
}

#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub within: DMatrix<f64>,
    pub between: DMatrix<f64>,
    pub class_counts: Vec<usize>,
    pub class_means: Vec<DVector<f64>>,
    pub global_mean: DVector<f64>,
}

impl ScatterPair {
    pub fn n_classes(&self) -> usize {
        self.class_counts.len()
    }
}

/// Within- and between-class scatter. Class ids are `0..=max(labels)` and
/// every id must occur. `S_b` sums `(μ_j − μ)(μ_j − μ)ᵀ` unweighted unless
/// `weighted_between` multiplies each term by the class size.
pub fn compute_scatter(samples: &[DVector<f64>], labels: &[usize], weighted_between: bool) -> Result<ScatterPair> {
    if samples.len() != labels.len() {
        return Err(Error::DimMismatch {
            expected: samples.len(),
            actual: labels.len(),
        });
    }
    let c = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    if c < 2 {
        return Err(Error::SingleClass);
    }
    let d = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimMismatch {
            expected: d,
            actual: bad.len(),
        });
    }
    let mut counts = vec![0usize; c];
    let mut means = vec![DVector::zeros(d); c];
    for (s, &l) in samples.iter().zip(labels) {
        counts[l] += 1;
        means[l] += s;
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(empty));
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        *m /= n as f64;
    }
    let mut global = DVector::zeros(d);
    for s in samples {
        global += s;
    }
    global /= samples.len() as f64;

    let mut within = DMatrix::zeros(d, d);
    for (s, &l) in samples.iter().zip(labels) {
        let diff = s - &means[l];
        within.ger(1.0, &diff, &diff, 1.0);
    }
    let mut between = DMatrix::zeros(d, d);
    for (m, &n) in means.iter().zip(&counts) {
        let diff = m - &global;
        let w = if weighted_between { n as f64 } else { 1.0 };
        between.ger(w, &diff, &diff, 1.0);
    }
    Ok(ScatterPair {
        within: symmetrize(within),
        between: symmetrize(between),
        class_counts: counts,
        class_means: means,
        global_mean: global,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    /// d × r, unit-norm columns.
    pub projection: DMatrix<f64>,
    /// Generalized eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub ridge: f64,
}

/// Top-r eigenvectors of `(S_w + εI)⁻¹ S_b`, solved as the symmetric problem
/// `S^{-1/2} S_b S^{-1/2}` with `S = S_w + εI`.
pub fn lda_fit(scatter: &ScatterPair, r: usize, ridge: f64) -> Result<LdaModel> {
    let c = scatter.n_classes();
    if r > c - 1 {
        return Err(Error::RankExceeded { requested: r, max: c - 1 });
    }
    if r == 0 {
        return Err(Error::InvalidParams("LDA dimension must be >= 1".into()));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidParams(format!("ridge must be >= 0, got {ridge}")));
    }
    let d = scatter.within.nrows();
    let regularized = &scatter.within + DMatrix::identity(d, d) * ridge;
    let eig = hermitian_eigen(&regularized)?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    let bottom = eig.values.last().copied().unwrap_or(0.0);
    if top <= 0.0 || bottom <= 1e-12 * top {
        return Err(Error::SingularScatter);
    }
    let inv_sqrt = DMatrix::from_diagonal(&DVector::from_iterator(d, eig.values.iter().map(|v| 1.0 / v.sqrt())));
    let whitening = &eig.vectors * inv_sqrt * eig.vectors.transpose();
    let whitening = symmetrize(whitening);
    let m = symmetrize(&whitening * &scatter.between * &whitening);
    let gen = hermitian_eigen(&m)?;
    let mut projection = &whitening * gen.vectors.columns(0, r);
    for mut col in projection.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    fix_phases(&mut projection);
    Ok(LdaModel {
        projection,
        eigenvalues: gen.values[..r].iter().map(|v| v.max(0.0)).collect(),
        ridge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceOptions {
    /// PCA dimension f; defaults to N − c.
    #[serde(default)]
    pub pca_dim: Option<usize>,
    /// LDA dimension r; defaults to c − 1.
    #[serde(default)]
    pub lda_dim: Option<usize>,
    /// Absolute ridge ε; defaults to 1e-6 · trace(S_w) / f.
    #[serde(default)]
    pub ridge: Option<f64>,
    /// Weight between-class terms by class size.
    #[serde(default)]
    pub weighted_sb: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    pub pca: PcaModel,
    pub lda: LdaModel,
}

impl SubspaceModel {
    pub fn output_dim(&self) -> usize {
        self.lda.projection.ncols()
    }
}

pub fn subspace_fit(samples: &[Vec<f64>], labels: &[usize], opts: &SubspaceOptions) -> Result<SubspaceModel> {
    subspace_fit_matrix(sample_matrix(samples)?, labels, opts)
}

/// PCA to f ≤ N − c dimensions, then LDA in the PCA space.
pub fn subspace_fit_matrix(x: DMatrix<f64>, labels: &[usize], opts: &SubspaceOptions) -> Result<SubspaceModel> {
    let (t, n) = x.shape();
    if labels.len() != n {
        return Err(Error::DimMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    let c = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    if c < 2 {
        return Err(Error::SingleClass);
    }
    if n <= c {
        return Err(Error::TooFewSamples(format!(
            "{n} samples for {c} classes leaves no within-class degrees of freedom"
        )));
    }
    let limit = (n - c).min(t);
    let f = opts.pca_dim.unwrap_or(limit);
    if f > limit {
        return Err(Error::TargetDimTooLarge { requested: f, limit });
    }
    let r = opts.lda_dim.unwrap_or(c - 1);
    if r > c - 1 {
        return Err(Error::RankExceeded { requested: r, max: c - 1 });
    }
    let pca = pca_fit_matrix(x.clone(), f, PcaMethod::Auto)?;
    let mut centered = x;
    for mut col in centered.column_iter_mut() {
        col -= &pca.mean;
    }
    let projected = pca.basis.tr_mul(&centered);
    let reduced: Vec<DVector<f64>> = projected.column_iter().map(|c| c.into_owned()).collect();
    let scatter = compute_scatter(&reduced, labels, opts.weighted_sb)?;
    let ridge = opts.ridge.unwrap_or_else(|| 1e-6 * scatter.within.trace() / f as f64);
    let lda = lda_fit(&scatter, r, ridge)?;
    Ok(SubspaceModel { pca, lda })
}

/// `Wᵀ · W_pcaᵀ (x − μ)`.
pub fn subspace_project(model: &SubspaceModel, x: &[f64]) -> Result<DVector<f64>> {
    let y = pca_project(&model.pca, x)?;
    Ok(model.lda.projection.tr_mul(&y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn two_samples_have_one_component() {
        let m = pca_fit(&[vec![0.0, 1.0, 2.0], vec![2.0, 1.0, 0.0]], 1).unwrap();
        assert!(m.spectrum[0] > 0.0);
        assert!(m.spectrum[1..].iter().all(|&s| s < 1e-12));
        assert!(matches!(
            pca_fit(&[vec![0.0, 1.0, 2.0], vec![2.0, 1.0, 0.0]], 2),
            Err(Error::TargetDimTooLarge { .. })
        ));
    }

    #[test]
    fn collinear_points() {
        let m = pca_fit(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![2.0, 4.0]], 2).unwrap();
        assert!(m.eigenvalues[1].abs() < 1e-10);
        // direction (1, 2)/√5
        let s5 = 5f64.sqrt();
        assert!((m.basis[(0, 0)] - 1.0 / s5).abs() < 1e-12);
        assert!((m.basis[(1, 0)] - 2.0 / s5).abs() < 1e-12);
        // eigenvalue: Σ |x - μ|² = 5 + 0 + 5 = 10
        assert!((m.eigenvalues[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_rejected() {
        assert!(matches!(pca_fit(&[vec![1.0, 2.0]], 1), Err(Error::TooFewSamples(_))));
    }

    #[test]
    fn projection_of_mean_and_first_axis() {
        let samples = vec![vec![1.0, 0.0, 3.0, 2.0], vec![0.0, 2.0, 1.0, 1.0], vec![4.0, 1.0, 0.0, 0.5], vec![2.0, 2.0, 2.0, 2.0]];
        let m = pca_fit_with(&samples, 2, PcaMethod::Snapshot).unwrap();
        let mean: Vec<f64> = m.mean.iter().copied().collect();
        assert!(pca_project(&m, &mean).unwrap().norm() < 1e-14);
        let x: Vec<f64> = (0..4).map(|i| m.mean[i] + m.basis[(i, 0)]).collect();
        let y = pca_project(&m, &x).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12 && y[1].abs() < 1e-12);
        assert!(matches!(pca_project(&m, &[1.0]), Err(Error::DimMismatch { expected: 4, actual: 1 })));
    }

    #[test]
    fn snapshot_completes_rank_deficient_basis() {
        let samples = vec![vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0, 0.0, 0.0], vec![3.0, 0.0, 0.0, 0.0, 0.0]];
        let m = pca_fit_with(&samples, 2, PcaMethod::Snapshot).unwrap();
        let gram = m.basis.tr_mul(&m.basis);
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn one_dimensional_hand_example() {
        let samples = vec![v(&[0.0]), v(&[2.0]), v(&[4.0]), v(&[6.0])];
        let s = compute_scatter(&samples, &[0, 0, 1, 1], false).unwrap();
        assert!((s.within[(0, 0)] - 4.0).abs() < 1e-15);
        assert!((s.between[(0, 0)] - 8.0).abs() < 1e-15);
        assert_eq!(s.class_means[0][0], 1.0);
        assert_eq!(s.class_means[1][0], 5.0);
        assert_eq!(s.global_mean[0], 3.0);
        let lda = lda_fit(&s, 1, 0.0).unwrap();
        assert!((lda.eigenvalues[0] - 2.0).abs() < 1e-12);
        assert!((lda.projection[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(matches!(lda_fit(&s, 2, 0.0), Err(Error::RankExceeded { requested: 2, max: 1 })));
        let weighted = compute_scatter(&samples, &[0, 0, 1, 1], true).unwrap();
        assert!((weighted.between[(0, 0)] - 16.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_scatters() {
        let single = vec![v(&[1.0, 2.0]), v(&[3.0, -1.0]), v(&[0.5, 0.5])];
        let s = compute_scatter(&single, &[0, 1, 2], false).unwrap();
        assert!(s.within.amax() == 0.0);
        assert!(matches!(lda_fit(&s, 1, 0.0), Err(Error::SingularScatter)));
        assert!(lda_fit(&s, 1, 1e-4).is_ok());

        let same = vec![v(&[1.0, 1.0]); 4];
        let s = compute_scatter(&same, &[0, 0, 1, 1], false).unwrap();
        assert_eq!(s.within.amax(), 0.0);
        assert_eq!(s.between.amax(), 0.0);

        assert!(matches!(compute_scatter(&same, &[0, 0, 0, 0], false), Err(Error::SingleClass)));
        assert!(matches!(compute_scatter(&same, &[0, 0, 2, 2], false), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn orl_dimension_rule() {
        // 40 classes × 4 samples: f ≤ 120, r ≤ 39
        let mut rng = crate::dataset::SplitMix64::new(9);
        let mut unit = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let samples: Vec<Vec<f64>> = (0..160).map(|_| (0..200).map(|_| unit()).collect()).collect();
        let labels: Vec<usize> = (0..160).map(|i| i / 4).collect();
        let m = subspace_fit(&samples, &labels, &SubspaceOptions::default()).unwrap();
        assert_eq!(m.pca.output_dim(), 120);
        assert_eq!(m.output_dim(), 39);
        let too_big = SubspaceOptions { pca_dim: Some(121), ..Default::default() };
        assert!(matches!(
            subspace_fit(&samples, &labels, &too_big),
            Err(Error::TargetDimTooLarge { requested: 121, limit: 120 })
        ));
        let too_many = SubspaceOptions { lda_dim: Some(40), ..Default::default() };
        assert!(matches!(subspace_fit(&samples, &labels, &too_many), Err(Error::RankExceeded { .. })));
    }

    #[test]
    fn separable_two_class_toy() {
        let a = [[0.0, 0.1, 0.0], [0.2, -0.1, 0.1], [-0.1, 0.0, 0.2], [0.1, 0.2, -0.1]];
        let samples: Vec<Vec<f64>> = a
            .iter()
            .map(|p| p.to_vec())
            .chain(a.iter().map(|p| vec![p[0] + 3.0, p[1] + 1.0, p[2] - 2.0]))
            .collect();
        let labels = [0, 0, 0, 0, 1, 1, 1, 1];
        let m = subspace_fit(&samples, &labels, &SubspaceOptions::default()).unwrap();
        let proj: Vec<f64> = samples.iter().map(|s| subspace_project(&m, s).unwrap()[0]).collect();
        let max_within = proj[..4]
            .iter()
            .flat_map(|a| proj[..4].iter().map(move |b| (a - b).abs()))
            .chain(proj[4..].iter().flat_map(|a| proj[4..].iter().map(move |b| (a - b).abs())))
            .fold(0.0, f64::max);
        let min_between = proj[..4]
            .iter()
            .flat_map(|a| proj[4..].iter().map(move |b| (a - b).abs()))
            .fold(f64::INFINITY, f64::min);
        assert!(max_within <= min_between);
        assert!(proj.iter().all(|p| p.is_finite()));
    }
}
