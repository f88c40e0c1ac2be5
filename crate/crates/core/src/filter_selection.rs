//! PCA orthogonalization of a Gabor bank.
//!
//! The vectorized kernels form the columns of a complex matrix `G`. The
//! eigenvectors of the n×n Gram matrix `(G − μ)ᴴ(G − μ)` are back-projected
//! through the centered columns to obtain orthonormal principal filters,
//! ranked by the variance they carry.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::{BankParams, ComplexKernel, FilterBank, GaborBank};
use crate::linalg::hermitian_eigen;

/// Eigenvalues at or below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct FilterMatrix {
    /// ab × n, column `i` is kernel `i` in row-major order.
    pub columns: DMatrix<Complex64>,
    pub mean: DVector<Complex64>,
    /// Kernel side lengths (a = b for square kernels).
    pub a: usize,
    pub b: usize,
    /// Subtract `mean` from every column before forming the Gram matrix.
    pub centered: bool,
}

impl FilterMatrix {
    pub fn n_filters(&self) -> usize {
        self.columns.ncols()
    }

    pub fn centered_columns(&self) -> DMatrix<Complex64> {
        let mut c = self.columns.clone();
        if self.centered {
            for mut col in c.column_iter_mut() {
                col -= &self.mean;
            }
        }
        c
    }

    /// Reshapes column `i` back into a kernel.
    pub fn kernel(&self, i: usize) -> ComplexKernel {
        ComplexKernel {
            size: self.a,
            data: self.columns.column(i).iter().copied().collect(),
        }
    }
}

pub fn filters_to_matrix<B: FilterBank + ?Sized>(bank: &B, centered: bool) -> Result<FilterMatrix> {
    let kernels = bank.kernels();
    let first = kernels
        .first()
        .ok_or_else(|| Error::InvalidParams("filter bank is empty".into()))?;
    let size = first.size;
    if kernels.iter().any(|k| k.size != size) {
        return Err(Error::UnequalKernelSizes);
    }
    let rows = size * size;
    let columns = DMatrix::from_fn(rows, kernels.len(), |r, c| kernels[c].data[r]);
    let mean = columns.column_mean();
    Ok(FilterMatrix {
        columns,
        mean,
        a: size,
        b: size,
        centered,
    })
}

/// Gram form of the bank covariance: `G_T[i][j] = (g_i − μ)ᴴ (g_j − μ)`.
pub fn filter_covariance(fm: &FilterMatrix) -> DMatrix<Complex64> {
    let c = fm.centered_columns();
    let n = c.ncols();
    let mut gt = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let dot = c.column(i).dotc(&c.column(j));
            gt[(i, j)] = dot;
            gt[(j, i)] = dot.conj();
        }
        gt[(i, i)].im = 0.0;
    }
    gt
}

#[derive(Debug, Clone)]
pub struct FilterEigens {
    /// Descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Column `j` pairs with `eigenvalues[j]`.
    pub eigenvectors: DMatrix<Complex64>,
    pub cumulative_variance: Vec<f64>,
}

impl FilterEigens {
    /// Number of eigenvalues above the rank tolerance.
    pub fn nonzero_count(&self) -> usize {
        let top = self.eigenvalues.first().copied().unwrap_or(0.0);
        if top <= 0.0 {
            return 0;
        }
        self.eigenvalues.iter().filter(|&&v| v > RANK_TOLERANCE * top).count()
    }

    /// CSV with columns `index,eigenvalue,cumulative_fraction` (1-based index).
    pub fn variance_csv(&self) -> String {
        let mut out = String::from("index,eigenvalue,cumulative_fraction\n");
        for (i, (v, c)) in self.eigenvalues.iter().zip(&self.cumulative_variance).enumerate() {
            out.push_str(&format!("{},{:.17e},{:.17}\n", i + 1, v, c));
        }
        out
    }
}

pub fn eigendecompose(h: &DMatrix<Complex64>) -> Result<FilterEigens> {
    let eig = hermitian_eigen(h)?;
    let eigenvalues: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let mut acc = 0.0;
    let mut cumulative_variance: Vec<f64> = eigenvalues
        .iter()
        .map(|v| {
            acc += v;
            if total > 0.0 {
                (acc / total).min(1.0)
            } else {
                1.0
            }
        })
        .collect();
    if let Some(last) = cumulative_variance.last_mut() {
        *last = 1.0;
    }
    Ok(FilterEigens {
        eigenvalues,
        eigenvectors: eig.vectors,
        cumulative_variance,
    })
}

/// How many principal filters to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    /// Smallest k whose cumulative variance reaches the target fraction.
    TargetVariance(f64),
    /// Explicit count, clamped to the bank size.
    #[serde(rename = "k")]
    Count(usize),
}

impl Default for SelectionCriterion {
    fn default() -> Self {
        SelectionCriterion::Count(25)
    }
}

pub fn select_components(eigens: &FilterEigens, criterion: SelectionCriterion) -> Result<usize> {
    let n = eigens.eigenvalues.len();
    if n == 0 {
        return Err(Error::InvalidCriterion("no eigenvalues".into()));
    }
    match criterion {
        SelectionCriterion::Count(k) => Ok(k.clamp(1, n)),
        SelectionCriterion::TargetVariance(t) => {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidCriterion(format!("target variance {t} outside (0, 1]")));
            }
            let k = eigens
                .cumulative_variance
                .iter()
                .position(|&c| c >= t - 1e-12)
                .map(|i| i + 1)
                .unwrap_or(n);
            Ok(k)
        }
    }
}

/// Reduced bank of pairwise-orthogonal unit-norm principal filters.
#[derive(Debug, Clone)]
pub struct OrthoBank {
    pub kernels: Vec<ComplexKernel>,
    pub retained_variance: f64,
    pub k: usize,
    /// Gram eigenvalues of the retained components.
    pub eigenvalues: Vec<f64>,
    /// Source bank layout.
    pub provenance: BankParams,
}

impl FilterBank for OrthoBank {
    fn kernels(&self) -> &[ComplexKernel] {
        &self.kernels
    }
}

/// How many principal filters `orthogonal_bank` can construct.
///
/// Centering removes one dimension from the span of the bank, so the nonzero
/// spectrum has at most n−1 entries. When centered, the removed mean
/// direction (orthogonalized against the components) is available as one
/// additional filter, which lets k reach n and restores the full span.
pub fn available_components(fm: &FilterMatrix, eigens: &FilterEigens) -> usize {
    let nz = eigens.nonzero_count();
    let with_mean = fm.centered && mean_completion(fm, eigens, nz).is_some();
    (nz + usize::from(with_mean)).min(fm.n_filters())
}

fn principal_vector(centered: &DMatrix<Complex64>, eigens: &FilterEigens, j: usize) -> DVector<Complex64> {
    let v = eigens.eigenvectors.column(j);
    let mut p = centered * v;
    let norm = p.norm();
    p /= Complex64::new(norm, 0.0);
    p
}

fn mean_completion(fm: &FilterMatrix, eigens: &FilterEigens, nz: usize) -> Option<DVector<Complex64>> {
    let centered = fm.centered_columns();
    let basis: Vec<DVector<Complex64>> = (0..nz).map(|j| principal_vector(&centered, eigens, j)).collect();
    let scale = fm.columns.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
    let mut r = fm.mean.clone();
    // two Gram-Schmidt passes
    for _ in 0..2 {
        for b in &basis {
            let c = b.dotc(&r);
            r -= b * c;
        }
    }
    let norm = r.norm();
    if norm <= 1e-8 * scale * (fm.mean.len() as f64).sqrt() {
        return None;
    }
    Some(r / Complex64::new(norm, 0.0))
}

pub fn orthogonal_bank(fm: &FilterMatrix, eigens: &FilterEigens, k: usize, provenance: &BankParams) -> Result<OrthoBank> {
    let n = fm.n_filters();
    if k == 0 || k > n {
        return Err(Error::InvalidCriterion(format!("k = {k} outside [1, {n}]")));
    }
    let nz = eigens.nonzero_count();
    let available = available_components(fm, eigens);
    if k > available {
        return Err(Error::RankDeficient {
            requested: k,
            available,
        });
    }
    let centered = fm.centered_columns();
    let mut vectors: Vec<DVector<Complex64>> = (0..k.min(nz)).map(|j| principal_vector(&centered, eigens, j)).collect();
    if k > nz {
        vectors.push(mean_completion(fm, eigens, nz).expect("counted as available"));
    }
    let kernels = vectors
        .into_iter()
        .map(|v| ComplexKernel {
            size: fm.a,
            data: v.iter().copied().collect(),
        })
        .collect();
    Ok(OrthoBank {
        kernels,
        retained_variance: eigens.cumulative_variance[k - 1],
        k,
        eigenvalues: eigens.eigenvalues[..k].to_vec(),
        provenance: provenance.clone(),
    })
}

/// Runs the whole selection for a bank: matrix, Gram covariance,
/// eigendecomposition, component count and principal filters.
pub fn select_bank(bank: &GaborBank, criterion: SelectionCriterion, centered: bool) -> Result<(OrthoBank, FilterEigens)> {
    let fm = filters_to_matrix(bank, centered)?;
    let eigens = eigendecompose(&filter_covariance(&fm))?;
    let k = select_components(&eigens, criterion)?;
    let ortho = orthogonal_bank(&fm, &eigens, k, &bank.params)?;
    Ok((ortho, eigens))
}
