//! Stability and controllability metrics of a fitted model.

use std::cmp::Ordering;

use nalgebra::{Complex, DMatrix, Schur, SVD};
use thiserror::Error;

use crate::dmdc::KoopmanControlModel;

pub const DEFAULT_CTRB_REL_TOL: f64 = 1e-10;

/// Krylov blocks whose largest entry exceeds this are rescaled.
const BLOCK_RESCALE_LIMIT: f64 = 1e100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("eigensolver did not converge on a {0}x{0} operator")]
    EigenNoConvergence(usize),
    #[error("SVD did not converge")]
    SvdFailed,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("relative tolerance must be positive and finite, got {0}")]
    Tolerance(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Sorted by non-increasing modulus, then non-increasing real part,
    /// then non-increasing imaginary part.
    pub eigenvalues: Vec<Complex<f64>>,
    pub max_eig_norm: f64,
    /// `n × r`; column `k` is the lifted eigenvector of eigenvalue `k`.
    pub modes: DMatrix<Complex<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllabilityReport {
    pub rank: usize,
    /// Dimension of the fitted operator used as the normaliser.
    pub r: usize,
    pub normalized_rank: f64,
    pub singular_values: Vec<f64>,
    /// Absolute threshold: `rel_tol · σ₁` (or `rel_tol` when `σ₁ = 0`).
    pub tolerance_used: f64,
    /// Cumulative scale factor applied to each Krylov block (1 when the
    /// block did not need rescaling).
    pub block_scales: Vec<f64>,
}

fn order_eigenvalues(a: &Complex<f64>, b: &Complex<f64>) -> Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

/// Eigenvalues of a real square matrix, sorted as in [`SpectrumReport`].
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, MetricsError> {
    if !a.is_square() {
        return Err(MetricsError::Shape(format!("{}x{} is not square", a.nrows(), a.ncols())));
    }
    let r = a.nrows();
    if r == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 100_000).ok_or(MetricsError::EigenNoConvergence(r))?;
    let mut eig: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    if eig.iter().any(|l| !(l.re.is_finite() && l.im.is_finite())) {
        return Err(MetricsError::EigenNoConvergence(r));
    }
    eig.sort_by(order_eigenvalues);
    Ok(eig)
}

/// Unit-norm null vector of `A - λI`, phase-fixed so its largest entry is
/// real and positive.
fn eigenvector(a: &DMatrix<f64>, lambda: Complex<f64>) -> Result<Vec<Complex<f64>>, MetricsError> {
    let r = a.nrows();
    let shifted = DMatrix::from_fn(r, r, |i, j| {
        let v = Complex::new(a[(i, j)], 0.0);
        if i == j {
            v - lambda
        } else {
            v
        }
    });
    let svd = SVD::try_new(shifted, false, true, f64::EPSILON * 5.0, 100_000).ok_or(MetricsError::SvdFailed)?;
    let v_t = svd.v_t.ok_or(MetricsError::SvdFailed)?;
    let mut w: Vec<Complex<f64>> = v_t.row(r - 1).iter().map(|c| c.conj()).collect();
    let pivot = w
        .iter()
        .copied()
        .max_by(|x, y| x.norm().total_cmp(&y.norm()))
        .unwrap_or(Complex::new(1.0, 0.0));
    if pivot.norm() > 0.0 {
        let phase = pivot.conj() / pivot.norm();
        for x in &mut w {
            *x *= phase;
        }
    }
    Ok(w)
}

pub fn spectrum(model: &KoopmanControlModel) -> Result<SpectrumReport, MetricsError> {
    let eig = eigenvalues(&model.a_reduced)?;
    let max_eig_norm = eig.first().map_or(0.0, |l| l.norm());
    let basis = &model.basis;
    let mut modes = DMatrix::zeros(basis.nrows(), eig.len());
    for (k, &lambda) in eig.iter().enumerate() {
        let w = eigenvector(&model.a_reduced, lambda)?;
        for i in 0..basis.nrows() {
            modes[(i, k)] = (0..w.len()).map(|j| w[j] * basis[(i, j)]).sum();
        }
    }
    Ok(SpectrumReport {
        eigenvalues: eig,
        max_eig_norm,
        modes,
    })
}

fn check_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(), MetricsError> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(MetricsError::Shape(format!(
            "A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

/// `[B, AB, A²B, ..., A^{r-1}B]` by iterated multiplication.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    check_pair(a, b)?;
    let (r, q) = b.shape();
    let mut out = DMatrix::zeros(r, r * q);
    let mut block = b.clone();
    for k in 0..r {
        out.columns_mut(k * q, q).copy_from(&block);
        if k + 1 < r {
            block = a * &block;
        }
    }
    Ok(out)
}

/// Krylov blocks with per-block rescaling whenever a block's largest entry
/// leaves `[1/LIMIT, LIMIT]`. Positive block scalings leave the column
/// space, hence the rank, unchanged.
fn scaled_krylov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (r, q) = b.shape();
    let mut out = DMatrix::zeros(r, r * q);
    let mut scales = Vec::with_capacity(r);
    let mut block = b.clone();
    let mut scale = 1.0;
    for k in 0..r {
        let big = block.amax();
        if big > BLOCK_RESCALE_LIMIT || (big > 0.0 && big < 1.0 / BLOCK_RESCALE_LIMIT) {
            block /= big;
            scale /= big;
        }
        out.columns_mut(k * q, q).copy_from(&block);
        scales.push(scale);
        if k + 1 < r {
            block = a * &block;
        }
    }
    (out, scales)
}

/// Numerical rank of the controllability matrix of `(A, B)` with threshold
/// `rel_tol · σ₁`, normalised by `dim A`.
pub fn ctrb_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> Result<ControllabilityReport, MetricsError> {
    check_pair(a, b)?;
    if !(rel_tol > 0.0 && rel_tol.is_finite()) {
        return Err(MetricsError::Tolerance(rel_tol));
    }
    let r = a.nrows();
    if r == 0 || b.ncols() == 0 {
        return Ok(ControllabilityReport {
            rank: 0,
            r,
            normalized_rank: 0.0,
            singular_values: Vec::new(),
            tolerance_used: rel_tol,
            block_scales: Vec::new(),
        });
    }
    let (k, block_scales) = scaled_krylov(a, b);
    let svd = SVD::try_new(k, false, false, f64::EPSILON * 5.0, 100_000).ok_or(MetricsError::SvdFailed)?;
    let singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    let s1 = singular_values.first().copied().unwrap_or(0.0);
    let tolerance_used = if s1 > 0.0 { rel_tol * s1 } else { rel_tol };
    let rank = singular_values.iter().filter(|&&s| s > tolerance_used).count();
    Ok(ControllabilityReport {
        rank,
        r,
        normalized_rank: rank as f64 / r as f64,
        singular_values,
        tolerance_used,
        block_scales,
    })
}

pub fn normalized_ctrb_rank(model: &KoopmanControlModel, rel_tol: f64) -> Result<ControllabilityReport, MetricsError> {
    ctrb_rank(&model.a_reduced, &model.b_reduced, rel_tol)
}
