//! Block-independent Gaussian log-likelihood and finite-difference gradients.
//!
//! Covariances depend on the parameters but not on the block, so each
//! evaluation factorizes once and solves all blocks together.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ConditionalModel, Geometry, MarginalModel};
use crate::optim::{central_gradient, Gradient};
use crate::panel::Panel;
use crate::theta::{ParamLayout, Part, Theta};

/// Complete blocks of an aligned observation/NWP panel pair, one column per
/// retained block in vectorized order.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodData {
    obs: DMatrix<f64>,
    nwp: DMatrix<f64>,
    /// 1-based indices (in the source panels) of the retained blocks.
    retained: Vec<usize>,
}

impl LikelihoodData {
    /// Blocks with any masked entry, in either source, are dropped.
    pub fn new(obs: &Panel, nwp: &Panel) -> Result<Self> {
        if obs.n_blocks() != nwp.n_blocks() || obs.hours() != nwp.hours() {
            return Err(Error::Shape(format!(
                "panels not aligned: {} vs {} blocks, {} vs {} hours",
                obs.n_blocks(),
                nwp.n_blocks(),
                obs.hours(),
                nwp.hours()
            )));
        }
        if obs.blocks().iter().zip(nwp.blocks()).any(|(a, b)| a.start != b.start) {
            return Err(Error::Shape("observation and NWP blocks start at different times".into()));
        }
        let mut obs_cols = Vec::new();
        let mut nwp_cols = Vec::new();
        let mut retained = Vec::new();
        for (i, (o, n)) in obs.data().iter().zip(nwp.data()).enumerate() {
            if o.is_complete() && n.is_complete() {
                obs_cols.push(o.vectorize());
                nwp_cols.push(n.vectorize());
                retained.push(i + 1);
            }
        }
        if retained.is_empty() {
            return Err(Error::NoCompleteBlocks);
        }
        Ok(LikelihoodData {
            obs: DMatrix::from_columns(&obs_cols),
            nwp: DMatrix::from_columns(&nwp_cols),
            retained,
        })
    }

    /// Data from already vectorized blocks.
    pub fn from_vectors(obs: &[DVector<f64>], nwp: &[DVector<f64>]) -> Result<Self> {
        if obs.is_empty() || obs.len() != nwp.len() {
            return Err(Error::NoCompleteBlocks);
        }
        Ok(LikelihoodData {
            obs: DMatrix::from_columns(obs),
            nwp: DMatrix::from_columns(nwp),
            retained: (1..=obs.len()).collect(),
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.retained.len()
    }

    pub fn obs(&self) -> &DMatrix<f64> {
        &self.obs
    }

    pub fn nwp(&self) -> &DMatrix<f64> {
        &self.nwp
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    fn check(&self, geom: &Geometry) -> Result<()> {
        if self.obs.nrows() != geom.obs_dim() || self.nwp.nrows() != geom.nwp_dim() {
            return Err(Error::Shape(format!(
                "data dimensions ({}, {}) do not match geometry ({}, {})",
                self.obs.nrows(),
                self.nwp.nrows(),
                geom.obs_dim(),
                geom.nwp_dim()
            )));
        }
        Ok(())
    }
}

/// Log-density of one vectorized NWP block under the marginal.
pub fn block_loglik_nwp(theta: &Theta, geom: &Geometry, y_nwp: &DVector<f64>) -> Result<f64> {
    let m = MarginalModel::new(theta, geom)?;
    m.cov.log_density(&(y_nwp - &m.mean))
}

/// Log-density of one observation block given its NWP block.
pub fn block_loglik_cond(
    theta: &Theta,
    geom: &Geometry,
    y_obs: &DVector<f64>,
    y_nwp: &DVector<f64>,
) -> Result<f64> {
    let c = ConditionalModel::new(theta, geom)?;
    c.cov.log_density(&(y_obs - c.mean_given(y_nwp)?))
}

/// Per-block log-likelihood terms of one factor, in block order.
pub fn part_terms(theta: &Theta, geom: &Geometry, data: &LikelihoodData, part: Part) -> Result<Vec<f64>> {
    data.check(geom)?;
    match part {
        Part::Marginal => {
            let m = MarginalModel::new(theta, geom)?;
            let mut r = data.nwp.clone();
            for mut c in r.column_iter_mut() {
                c -= &m.mean;
            }
            m.cov.log_density_columns(&r)
        }
        Part::Conditional => {
            let c = ConditionalModel::new(theta, geom)?;
            let mut r = &data.obs - c.lambda.matrix() * &data.nwp;
            for mut col in r.column_iter_mut() {
                col -= &c.base;
            }
            c.cov.log_density_columns(&r)
        }
    }
}

/// Sum of one factor over blocks, accumulated in block order.
pub fn part_loglik(theta: &Theta, geom: &Geometry, data: &LikelihoodData, part: Part) -> Result<f64> {
    Ok(part_terms(theta, geom, data, part)?.iter().sum())
}

/// Joint log-likelihood of all retained blocks.
pub fn total_loglik(theta: &Theta, geom: &Geometry, data: &LikelihoodData) -> Result<f64> {
    Ok(part_loglik(theta, geom, data, Part::Marginal)? + part_loglik(theta, geom, data, Part::Conditional)?)
}

/// Log-likelihood restricted to the factors touched by `layout`, as a
/// function of its unconstrained vector. Failures map to `NaN`.
pub fn layout_objective<'a>(
    base: &'a Theta,
    geom: &'a Geometry,
    data: &'a LikelihoodData,
    layout: &'a ParamLayout,
) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    let parts: Vec<Part> = [Part::Marginal, Part::Conditional]
        .into_iter()
        .filter(|p| layout.params().iter().any(|q| q.part() == *p))
        .collect();
    move |x: &[f64]| {
        let theta = layout.unpack(base, x);
        let mut total = 0.0;
        for &p in &parts {
            match part_loglik(&theta, geom, data, p) {
                Ok(v) => total += v,
                Err(_) => return f64::NAN,
            }
        }
        total
    }
}

/// Step used for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    (1e-5 * x.abs()).max(1e-7)
}

/// Central differences with step [`fd_step`], falling back to a one-sided
/// difference where one neighbor evaluates to a non-finite value.
pub fn numerical_gradient<F>(f: F, x: &[f64]) -> Result<Gradient>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let steps: Vec<f64> = x.iter().map(|v| fd_step(*v)).collect();
    let g = central_gradient(&f, x, &steps)?;
    if !g.one_sided.is_empty() {
        log::debug!("one-sided differences used for coordinates {:?}", g.one_sided);
    }
    Ok(g)
}

/// Gradient of the log-likelihood with respect to the unconstrained
/// coordinates of `layout`.
pub fn loglik_gradient(
    theta: &Theta,
    geom: &Geometry,
    data: &LikelihoodData,
    layout: &ParamLayout,
) -> Result<Gradient> {
    let f = layout_objective(theta, geom, data, layout);
    numerical_gradient(f, &layout.pack(theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        let f = |x: &[f64]| -(x[0] - 1.0).powi(2) - 3.0 * x[1] * x[1] + x[0] * x[1];
        let x = [0.3, -2.0];
        let g = numerical_gradient(f, &x).unwrap();
        let exact = [-2.0 * (0.3 - 1.0) - 2.0, -6.0 * -2.0 + 0.3];
        for k in 0..2 {
            assert!((g.values[k] - exact[k]).abs() < 1e-6, "{g:?}");
        }
        assert!(g.one_sided.is_empty());
    }

    #[test]
    fn one_sided_fallback_is_flagged() {
        // Undefined to the left of the evaluation point.
        let f = |x: &[f64]| if x[0] < 1.0 { f64::NAN } else { 2.0 * x[0] };
        let g = numerical_gradient(f, &[1.0]).unwrap();
        assert_eq!(g.one_sided, vec![0]);
        assert!((g.values[0] - 2.0).abs() < 1e-6);
        assert!(numerical_gradient(|_: &[f64]| f64::NAN, &[1.0]).is_err());
    }

    #[test]
    fn step_policy() {
        assert_eq!(fd_step(0.0), 1e-7);
        assert!((fd_step(-3.0) - 3e-5).abs() < 1e-20);
    }
}
