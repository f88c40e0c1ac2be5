//! Hermitian eigendecomposition.
//!
//! [`hermitian_eigen`] is the production path (Householder tridiagonalization
//! and implicit QR via nalgebra). [`jacobi_eigen`] is an independent cyclic
//! Jacobi solver kept in-tree as its reference oracle.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigenpairs sorted by descending eigenvalue; column `j` of `vectors` pairs
/// with `values[j]`.
#[derive(Debug, Clone)]
pub struct Eigen<T: nalgebra::Scalar> {
    pub values: Vec<f64>,
    pub vectors: DMatrix<T>,
}

/// Scalars the eigensolvers operate on (`f64` and `Complex64`).
pub trait EigenScalar: ComplexField<RealField = f64> + Copy {
    fn conj_(self) -> Self;
    fn abs_(self) -> f64;
    /// Unit-modulus factor `u` such that `self * u` is real and non-negative.
    fn phase_normalizer(self) -> Self;
}

impl EigenScalar for f64 {
    fn conj_(self) -> Self {
        self
    }
    fn abs_(self) -> f64 {
        self.abs()
    }
    fn phase_normalizer(self) -> Self {
        if self < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

impl EigenScalar for Complex64 {
    fn conj_(self) -> Self {
        self.conj()
    }
    fn abs_(self) -> f64 {
        self.norm()
    }
    fn phase_normalizer(self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            self.conj() / n
        }
    }
}

/// Largest `|H[i][j] - conj(H[j][i])|`.
pub fn hermitian_defect<T: EigenScalar>(h: &DMatrix<T>) -> f64 {
    let n = h.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj_()).abs_());
        }
    }
    worst
}

fn check_hermitian<T: EigenScalar>(h: &DMatrix<T>) -> Result<()> {
    if h.nrows() != h.ncols() {
        return Err(Error::SizeMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let scale = h.iter().fold(1.0f64, |m, v| m.max(v.abs_()));
    let defect = hermitian_defect(h);
    if defect > 1e-10 * scale {
        return Err(Error::NotHermitian(defect));
    }
    if h.iter().any(|v| !v.abs_().is_finite()) {
        return Err(Error::ConvergenceFailure);
    }
    Ok(())
}

/// Rotates every column so its largest-magnitude entry is real and positive.
/// Magnitude ties go to the lowest index.
pub fn fix_phases<T: EigenScalar>(vectors: &mut DMatrix<T>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (i, v) in col.iter().enumerate() {
            let a = v.abs_();
            // relative tolerance so that rounding noise does not pick the pivot
            if a > best_abs * (1.0 + 1e-9) {
                best = i;
                best_abs = a;
            }
        }
        let u = col[best].phase_normalizer();
        for v in col.iter_mut() {
            *v *= u;
        }
    }
}

fn sort_descending<T: EigenScalar>(values: Vec<f64>, vectors: DMatrix<T>) -> Eigen<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let n = vectors.nrows();
    let sorted_vectors = DMatrix::from_fn(n, order.len(), |i, j| vectors[(i, order[j])]);
    let sorted_values = order.iter().map(|&k| values[k]).collect();
    Eigen {
        values: sorted_values,
        vectors: sorted_vectors,
    }
}

/// Eigendecomposition of a Hermitian (or real symmetric) matrix with
/// descending eigenvalues and phase-fixed orthonormal eigenvectors.
pub fn hermitian_eigen<T: EigenScalar>(h: &DMatrix<T>) -> Result<Eigen<T>> {
    check_hermitian(h)?;
    let n = h.nrows();
    if n == 0 {
        return Ok(Eigen {
            values: vec![],
            vectors: DMatrix::zeros(0, 0),
        });
    }
    // Symmetrize exactly so the solver sees a Hermitian input.
    let sym = DMatrix::from_fn(n, n, |i, j| {
        (h[(i, j)] + h[(j, i)].conj_()) * <T as ComplexField>::from_real(0.5)
    });
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or(Error::ConvergenceFailure)?;
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::ConvergenceFailure);
    }
    let mut out = sort_descending(values, eig.eigenvectors);
    fix_phases(&mut out.vectors);
    Ok(out)
}

/// Cyclic Jacobi eigensolver for Hermitian matrices.
///
/// Each sweep visits every off-diagonal pair `(p, q)` and applies the unitary
/// plane rotation that zeroes `A[p][q]`. Iterates until the off-diagonal
/// Frobenius mass falls below `1e-15` of the total, or fails after 100 sweeps.
pub fn jacobi_eigen(h: &DMatrix<Complex64>) -> Result<Eigen<Complex64>> {
    check_hermitian(h)?;
    let n = h.nrows();
    let mut a = DMatrix::from_fn(n, n, |i, j| (h[(i, j)] + h[(j, i)].conj()) * 0.5);
    let mut v = DMatrix::<Complex64>::identity(n, n);
    let total: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum();
        if off <= 1e-30 * total {
            let values = (0..n).map(|i| a[(i, i)].re).collect();
            let mut out = sort_descending(values, v);
            fix_phases(&mut out.vectors);
            return Ok(out);
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                // Factor out the phase of a_pq, then solve the real 2x2 problem.
                let phase = apq / mag;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotation J acting on columns p, q:
                //   J[p][p] = c, J[p][q] = s*phase, J[q][p] = -s*conj(phase), J[q][q] = c
                let sp = phase * s;
                let spc = sp.conj();
                // A <- A J
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * c - akq * spc;
                    a[(k, q)] = akp * sp + akq * c;
                }
                // A <- J^H A
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * c - aqk * sp;
                    a[(q, k)] = apk * spc + aqk * c;
                }
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c - vkq * spc;
                    v[(k, q)] = vkp * sp + vkq * c;
                }
            }
        }
    }
    Err(Error::ConvergenceFailure)
}

/// `max |VᴴV − I|`.
pub fn orthonormality_defect<T: EigenScalar>(v: &DMatrix<T>) -> f64 {
    let k = v.ncols();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let dot = v.column(i).iter().zip(v.column(j).iter()).fold(T::zero(), |acc, (a, b)| acc + a.conj_() * *b);
            let target = if i == j { T::one() } else { T::zero() };
            worst = worst.max((dot - target).abs_());
        }
    }
    worst
}

/// Sine of the angle between the unit vector `a` and the line spanned by the
/// unit vector `b`.
pub fn line_angle_sine<T: EigenScalar>(a: &DVector<T>, b: &DVector<T>) -> f64 {
    let dot = a.iter().zip(b.iter()).fold(T::zero(), |acc, (x, y)| acc + y.conj_() * *x);
    let resid: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (*x - dot * *y).abs_().powi(2))
        .sum();
    resid.sqrt()
}
