//! Dense covariance matrices with a recorded jitter policy, and Gaussian
//! densities computed from their Cholesky factors.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Jitter ladder, as multiples of the mean diagonal.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];
pub const MAX_RELATIVE_JITTER: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-12;

static FACTORIZATIONS: AtomicU64 = AtomicU64::new(0);
static FAILURES: AtomicU64 = AtomicU64::new(0);
static MAX_JITTER_BITS: AtomicU64 = AtomicU64::new(0);

/// Process-wide record of covariance factorizations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorizationStats {
    pub factorizations: u64,
    pub failures: u64,
    /// Largest jitter applied, relative to the mean diagonal.
    pub max_relative_jitter: f64,
}

pub fn factorization_stats() -> FactorizationStats {
    FactorizationStats {
        factorizations: FACTORIZATIONS.load(Ordering::Relaxed),
        failures: FAILURES.load(Ordering::Relaxed),
        max_relative_jitter: f64::from_bits(MAX_JITTER_BITS.load(Ordering::Relaxed)),
    }
}

fn record_jitter(rel: f64) {
    // Non-negative f64 bit patterns order like the values.
    MAX_JITTER_BITS.fetch_max(rel.to_bits(), Ordering::Relaxed);
}

/// Symmetric positive definite matrix together with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct CovarianceMatrix {
    values: DMatrix<f64>,
    jitter: f64,
    factor: Factor,
}

#[derive(Clone, Debug)]
enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    /// Exactly zero matrix: a point mass.
    Zero,
}

impl CovarianceMatrix {
    /// Factorize `values`, adding diagonal jitter `eps * mean(diag)` with
    /// `eps` escalating from 1e-10 to 1e-6 when the plain factorization fails.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        if n != values.ncols() {
            return Err(Error::Shape(format!("covariance is {:?}", values.shape())));
        }
        if n == 0 {
            return Err(Error::Empty("zero-dimensional covariance"));
        }
        let scale = values.amax();
        if !scale.is_finite() {
            return Err(Error::Singular {
                dim: n,
                max_jitter: 0.0,
            });
        }
        let mut asym: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                asym = asym.max((values[(i, j)] - values[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::InvalidInput(format!(
                "covariance asymmetric by {asym:e} (scale {scale:e})"
            )));
        }
        let values = (&values + values.transpose()) * 0.5;
        if scale == 0.0 {
            return Ok(CovarianceMatrix {
                values,
                jitter: 0.0,
                factor: Factor::Zero,
            });
        }
        FACTORIZATIONS.fetch_add(1, Ordering::Relaxed);
        if let Some(c) = Cholesky::new(values.clone()) {
            if c.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Ok(CovarianceMatrix {
                    values,
                    jitter: 0.0,
                    factor: Factor::Cholesky(c),
                });
            }
        }
        let mean_diag = values.trace() / n as f64;
        if mean_diag > 0.0 {
            for eps in JITTER_LADDER {
                let jitter = eps * mean_diag;
                let mut m = values.clone();
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
                if let Some(c) = Cholesky::new(m) {
                    record_jitter(eps);
                    log::debug!("covariance of dim {n} needed jitter {eps:e} x mean diagonal");
                    return Ok(CovarianceMatrix {
                        values,
                        jitter,
                        factor: Factor::Cholesky(c),
                    });
                }
            }
        }
        FAILURES.fetch_add(1, Ordering::Relaxed);
        Err(Error::Singular {
            dim: n,
            max_jitter: MAX_RELATIVE_JITTER * mean_diag.max(0.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// The matrix as built, without jitter.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor `L` with `L Lᵀ = Σ + jitter·I`.
    pub fn factor(&self) -> DMatrix<f64> {
        match &self.factor {
            Factor::Cholesky(c) => c.l(),
            Factor::Zero => DMatrix::zeros(self.dim(), self.dim()),
        }
    }

    fn cholesky(&self) -> Result<&Cholesky<f64, Dyn>> {
        match &self.factor {
            Factor::Cholesky(c) => Ok(c),
            Factor::Zero => Err(Error::Singular {
                dim: self.dim(),
                max_jitter: 0.0,
            }),
        }
    }

    pub fn log_det(&self) -> Result<f64> {
        let c = self.cholesky()?;
        Ok(2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// `Σ⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.cholesky()?.solve(b))
    }

    /// `Σ⁻¹ B`.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.cholesky()?.solve(b))
    }

    /// `L⁻¹ B` for the lower factor, column by column.
    pub fn whiten(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = self.cholesky()?;
        let l = c.l_dirty();
        let mut out = b.clone();
        if !l.solve_lower_triangular_mut(&mut out) {
            return Err(Error::Singular {
                dim: self.dim(),
                max_jitter: self.jitter,
            });
        }
        Ok(out)
    }

    /// Squared Mahalanobis norm `rᵀ Σ⁻¹ r`.
    pub fn mahalanobis(&self, r: &DVector<f64>) -> Result<f64> {
        let w = self.whiten(&DMatrix::from_column_slice(r.len(), 1, r.as_slice()))?;
        Ok(w.norm_squared())
    }

    /// Gaussian log-density of the residual `r = y − μ`.
    pub fn log_density(&self, r: &DVector<f64>) -> Result<f64> {
        let d = self.dim() as f64;
        Ok(-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.log_det()? + self.mahalanobis(r)?))
    }

    /// Log-densities of every column of `residuals`, via one multi-RHS solve.
    pub fn log_density_columns(&self, residuals: &DMatrix<f64>) -> Result<Vec<f64>> {
        let d = self.dim() as f64;
        let constant = d * (2.0 * std::f64::consts::PI).ln() + self.log_det()?;
        let w = self.whiten(residuals)?;
        Ok(w.column_iter()
            .map(|c| -0.5 * (constant + c.norm_squared()))
            .collect())
    }

    /// Sub-matrix on the given index set.
    pub fn select(&self, idx: &[usize]) -> Result<CovarianceMatrix> {
        CovarianceMatrix::new(self.values.select_rows(idx).select_columns(idx))
    }

    pub fn correlation(&self) -> DMatrix<f64> {
        let sd: Vec<f64> = self.values.diagonal().iter().map(|v| v.sqrt()).collect();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.values[(i, j)] / (sd[i] * sd[j])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gaussian_density() {
        let c = CovarianceMatrix::new(DMatrix::identity(1, 1)).unwrap();
        let l0 = c.log_density(&DVector::from_element(1, 0.0)).unwrap();
        assert!((l0 + 0.918_938_533_204_672_7).abs() < 1e-12);
        let l2 = c.log_density(&DVector::from_element(1, 2.0)).unwrap();
        assert!((l2 - (l0 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        // Rank-one matrix: needs jitter.
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        let c = CovarianceMatrix::new(m).unwrap();
        assert!(c.jitter_applied() > 0.0);
        assert!(c.jitter_applied() <= MAX_RELATIVE_JITTER * 14.0 / 3.0);
        assert!(factorization_stats().max_relative_jitter > 0.0);
    }

    #[test]
    fn indefinite_is_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(CovarianceMatrix::new(m), Err(Error::Singular { .. })));
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(CovarianceMatrix::new(m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_matrix_is_point_mass() {
        let c = CovarianceMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(c.factor(), DMatrix::zeros(3, 3));
        assert!(c.log_det().is_err());
    }

    #[test]
    fn multi_column_density_matches_single() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let c = CovarianceMatrix::new(m).unwrap();
        let r = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 0.2, 0.7]);
        let cols = c.log_density_columns(&r).unwrap();
        for (k, v) in cols.iter().enumerate() {
            let single = c.log_density(&r.column(k).into_owned()).unwrap();
            assert!((v - single).abs() < 1e-13);
        }
    }
}
