use candle_core::{DType, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance for negative eigenvalues of a covariance.
const PSD_TOL: f64 = 1e-8;

/// Mean and covariance of flattened samples.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::contract("covariance shape does not match the mean"));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and unbiased covariance of `rows` (one sample per row).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::argument(format!("need at least 2 samples, got {n}")));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::contract("samples differ in dimensionality"));
        }
        let data = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mean = DVector::from_fn(d, |j, _| data.column(j).mean());
        let centered = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
        let cov = (centered.transpose() * &centered) / (n - 1) as f64;
        Ok(Self { mean, cov })
    }

    /// Statistics of a batch tensor flattened per sample.
    pub fn from_tensor(x: &Tensor) -> Result<Self> {
        let b = x.dim(0)?;
        let rows: Vec<Vec<f64>> = x.to_dtype(DType::F64)?.reshape((b, ()))?.to_vec2()?;
        Self::from_rows(&rows)
    }
}

fn symmetric_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some(v) = eig.eigenvalues.iter().find(|v| **v < -PSD_TOL * scale) {
        return Err(Error::numeric(format!("{what} is not positive semidefinite (eigenvalue {v})")));
    }
    Ok(eig)
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen(m, what)?;
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
///
/// The cross term uses `tr((S_a^{1/2} S_b S_a^{1/2})^{1/2})`, which equals
/// the trace of the principal root of `S_a S_b` for PSD inputs.
pub fn toy_frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::contract(format!(
            "statistics of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let root_a = psd_sqrt(&a.cov, "first covariance")?;
    symmetric_eigen(&b.cov, "second covariance")?;
    let inner = &root_a * &b.cov * &root_a;
    let cross: f64 = symmetric_eigen(&inner, "covariance product")?
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let fd = diff + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(fd.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_unit_gaussians() {
        let a = GaussianStats::new(DVector::from_element(1, 0.0), DMatrix::identity(1, 1)).unwrap();
        let b = GaussianStats::new(DVector::from_element(1, 3.0), DMatrix::identity(1, 1)).unwrap();
        assert!((toy_frechet_distance(&a, &b).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_and_symmetry() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| (0..4).map(|j| ((i * 7 + j * 3) % 5) as f64 - 2.0).collect())
            .collect();
        let other: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * 1.5 + 0.2).collect()).collect();
        let a = GaussianStats::from_rows(&rows).unwrap();
        let b = GaussianStats::from_rows(&other).unwrap();
        assert!(toy_frechet_distance(&a, &a).unwrap() < 1e-6);
        let ab = toy_frechet_distance(&a, &b).unwrap();
        let ba = toy_frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8 * ab.max(1.0));
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let a = GaussianStats::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
        )
        .unwrap();
        assert!(matches!(toy_frechet_distance(&a, &a), Err(Error::Numeric { .. })));
        assert!(GaussianStats::from_rows(&[vec![1.0]]).is_err());
    }
}
