//! Box-Cox marginal transform, its clamped inverse and profile-likelihood
//! selection of the power parameter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;

/// Power transform applied to every location of one data source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCoxSpec {
    pub lambda: f64,
    /// Offset added before transforming so that calm (zero) readings stay in
    /// the domain.
    pub shift: f64,
}

impl BoxCoxSpec {
    pub fn new(lambda: f64, shift: f64) -> Result<Self> {
        if !lambda.is_finite() || !shift.is_finite() || shift < 0.0 {
            return Err(Error::InvalidInput(format!(
                "invalid Box-Cox spec (lambda={lambda}, shift={shift})"
            )));
        }
        Ok(BoxCoxSpec { lambda, shift })
    }
}

impl Default for BoxCoxSpec {
    fn default() -> Self {
        BoxCoxSpec {
            lambda: 1.0,
            shift: 0.0,
        }
    }
}

/// Box-Cox transform of `y`.
pub fn boxcox(y: f64, spec: &BoxCoxSpec) -> Result<f64> {
    let x = y + spec.shift;
    if spec.lambda == 0.0 {
        if x <= 0.0 {
            return Err(Error::Domain(format!("log of non-positive value {x}")));
        }
        return Ok(x.ln());
    }
    if x < 0.0 || (x == 0.0 && spec.lambda < 0.0) {
        return Err(Error::Domain(format!(
            "Box-Cox argument {x} outside the domain for lambda={}",
            spec.lambda
        )));
    }
    // exp_m1 keeps the transform accurate (and continuous) for tiny lambda.
    Ok((spec.lambda * x.ln()).exp_m1() / spec.lambda)
}

/// Inverse transform; out-of-domain inputs are clamped to the domain boundary.
/// Returns the value and whether clamping happened.
pub fn inv_boxcox_checked(z: f64, spec: &BoxCoxSpec) -> (f64, bool) {
    if spec.lambda == 0.0 {
        return (z.exp() - spec.shift, false);
    }
    let base = spec.lambda * z + 1.0;
    if base > 0.0 {
        return ((base.ln() / spec.lambda).exp() - spec.shift, false);
    }
    if spec.lambda > 0.0 {
        (-spec.shift, true)
    } else {
        // The boundary lies at +inf for negative powers.
        ((f64::MIN_POSITIVE.ln() / spec.lambda).exp() - spec.shift, true)
    }
}

pub fn inv_boxcox(z: f64, spec: &BoxCoxSpec) -> f64 {
    inv_boxcox_checked(z, spec).0
}

/// Inverse transform that keeps count of clamped values.
#[derive(Clone, Debug)]
pub struct BackTransform {
    spec: BoxCoxSpec,
    clamped: usize,
    total: usize,
}

impl BackTransform {
    pub fn new(spec: BoxCoxSpec) -> Self {
        BackTransform {
            spec,
            clamped: 0,
            total: 0,
        }
    }

    pub fn apply(&mut self, z: f64) -> f64 {
        let (y, clamped) = inv_boxcox_checked(z, &self.spec);
        self.total += 1;
        self.clamped += usize::from(clamped);
        y
    }

    pub fn clamp_count(&self) -> usize {
        self.clamped
    }

    pub fn clamp_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.clamped as f64 / self.total as f64
        }
    }
}

/// Offset added to calm readings before the log-like transform.
pub const CALM_OFFSET: f64 = 0.1;

/// Candidate grid {0, 0.1, ..., 1}.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Pick the power maximising the profile Gaussian log-likelihood (with the
/// Jacobian term) of the pooled available values.
pub fn estimate_lambda(panel: &Panel, grid: &[f64]) -> Result<BoxCoxSpec> {
    let values: Vec<f64> = panel.available_values().collect();
    estimate_lambda_values(&values, grid)
}

pub fn estimate_lambda_values(values: &[f64], grid: &[f64]) -> Result<BoxCoxSpec> {
    if values.is_empty() {
        return Err(Error::Empty("no available values to estimate Box-Cox power"));
    }
    if grid.is_empty() {
        return Err(Error::Empty("empty lambda grid"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min > 0.0 { 0.0 } else { CALM_OFFSET - min };
    let n = values.len() as f64;
    let log_sum: f64 = values.iter().map(|y| (y + shift).ln()).sum();

    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let spec = BoxCoxSpec::new(lambda, shift)?;
        let z: Vec<f64> = values
            .iter()
            .map(|&y| boxcox(y, &spec))
            .collect::<Result<_>>()?;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var <= 0.0 {
            continue;
        }
        let profile = -0.5 * n * var.ln() + (lambda - 1.0) * log_sum;
        if best.is_none_or(|(_, b)| profile > b) {
            best = Some((lambda, profile));
        }
    }
    let (lambda, _) = best.ok_or_else(|| Error::Degenerate("constant data".into()))?;
    BoxCoxSpec::new(lambda, shift)
}
