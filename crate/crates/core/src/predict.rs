//! Kriging of observations from an NWP block and predictive scenario
//! sampling.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::CovarianceMatrix;
use crate::model::{build_lambda, cov_marginal, cov_marginal_values, mean_cond_base, mean_nwp_vector, Geometry, Which};
use crate::synth::normal_vector;
use crate::theta::Theta;
use crate::transform::{inv_boxcox, BackTransform, BoxCoxSpec};

/// One predicted coordinate: hour of the block and station position in the
/// geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Target {
    pub hour: usize,
    pub station: usize,
}

/// Every hour of every station, in vectorized order.
pub fn all_targets(geom: &Geometry) -> Vec<Target> {
    (0..geom.n_obs())
        .flat_map(|station| (0..geom.hours()).map(move |hour| Target { hour, station }))
        .collect()
}

/// Gaussian predictive law over targets, in transformed space.
#[derive(Clone, Debug)]
pub struct PredictiveDistribution {
    pub targets: Vec<Target>,
    pub mean: DVector<f64>,
    pub covariance: CovarianceMatrix,
    /// Transform of the observation source; `None` means values are raw.
    pub transform: Option<BoxCoxSpec>,
    /// Parameters that were averaged in for locations without history.
    pub imputed: Vec<String>,
}

impl PredictiveDistribution {
    pub fn dim(&self) -> usize {
        self.targets.len()
    }

    pub fn back_transform(&self, z: f64) -> f64 {
        match &self.transform {
            Some(spec) => inv_boxcox(z, spec),
            None => z,
        }
    }
}

fn target_rows(geom: &Geometry, targets: &[Target]) -> Result<Vec<usize>> {
    if targets.is_empty() {
        return Err(Error::Empty("no prediction targets"));
    }
    targets
        .iter()
        .map(|t| {
            if t.hour >= geom.hours() || t.station >= geom.n_obs() {
                Err(Error::InvalidInput(format!(
                    "target (hour {}, station {}) outside the geometry",
                    t.hour, t.station
                )))
            } else {
                Ok(t.station * geom.hours() + t.hour)
            }
        })
        .collect()
}

/// Conditional law of `Y_Obs(targets)` given the NWP block `y_nwp` over all
/// NWP locations of `geom`.
///
/// With `c₀ = Σ_Obs,NWP(targets, ·)`: mean `(μ + Λμ_NWP) + c₀ Σ_NWP⁻¹ (y − μ_NWP)`
/// and covariance `Σ_Obs − c₀ Σ_NWP⁻¹ c₀ᵀ`. Stations or NWP locations beyond
/// those the parameters were fitted on get averaged local parameters.
pub fn krige(
    theta: &Theta,
    geom: &Geometry,
    y_nwp: &DVector<f64>,
    targets: &[Target],
    transform: Option<BoxCoxSpec>,
) -> Result<PredictiveDistribution> {
    if y_nwp.len() != geom.nwp_dim() {
        return Err(Error::Shape(format!(
            "NWP block of length {}, geometry needs {}",
            y_nwp.len(),
            geom.nwp_dim()
        )));
    }
    let theta = if theta.n_nwp() != geom.n_nwp() || theta.n_obs() != geom.n_obs() {
        theta.extended_for(geom.n_nwp(), geom.n_obs())?
    } else {
        theta.clone()
    };
    let rows = target_rows(geom, targets)?;
    let mu_nwp = mean_nwp_vector(&theta, geom)?;
    let s_nwp = cov_marginal(&theta, geom, Which::Nwp)?;
    let lambda = build_lambda(&theta, geom)?;
    let lambda_t = lambda.matrix().select_rows(&rows);
    let base = mean_cond_base(&theta, geom).select_rows(&rows);
    let s_cond = cov_marginal_values(&theta, geom, Which::Cond)?
        .select_rows(&rows)
        .select_columns(&rows);

    let c0 = &lambda_t * s_nwp.values();
    let s_obs = &s_cond + &c0 * lambda_t.transpose();
    let prior_mean = base + &lambda_t * &mu_nwp;
    let innovation = y_nwp - &mu_nwp;
    let mean = prior_mean + &c0 * s_nwp.solve(&innovation)?;
    let gain = s_nwp.solve_matrix(&c0.transpose())?;
    let cov = s_obs - &c0 * gain;
    let cov = (&cov + cov.transpose()) * 0.5;
    if !theta.imputed.is_empty() {
        log::warn!("prediction uses averaged parameters: {}", theta.imputed.join(", "));
    }
    Ok(PredictiveDistribution {
        targets: targets.to_vec(),
        mean,
        covariance: CovarianceMatrix::new(cov)?,
        transform,
        imputed: theta.imputed.clone(),
    })
}

/// Scenarios drawn from a predictive distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet {
    /// `n × d` draws after the inverse transform.
    pub samples: DMatrix<f64>,
    /// The same draws before the inverse transform.
    pub transformed: DMatrix<f64>,
    pub seed: u64,
    pub clamp_count: usize,
}

impl ScenarioSet {
    pub fn n_scenarios(&self) -> usize {
        self.samples.nrows()
    }

    pub fn clamp_rate(&self) -> f64 {
        let total = self.samples.len();
        if total == 0 {
            0.0
        } else {
            self.clamp_count as f64 / total as f64
        }
    }
}

/// `n` draws `mean + L z`, scenario `i` using random stream `i` of `seed`.
pub fn sample_scenarios(dist: &PredictiveDistribution, n: usize, seed: u64) -> Result<ScenarioSet> {
    if n == 0 {
        return Err(Error::InvalidInput("at least one scenario required".into()));
    }
    let d = dist.dim();
    let l = dist.covariance.factor();
    let draws: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| &dist.mean + &l * normal_vector(seed, i as u64, d))
        .collect();
    let transformed = DMatrix::from_fn(n, d, |i, j| draws[i][j]);
    let (samples, clamp_count) = match &dist.transform {
        Some(spec) => {
            let mut back = BackTransform::new(*spec);
            let s = transformed.map(|z| back.apply(z));
            (s, back.clamp_count())
        }
        None => (transformed.clone(), 0),
    };
    Ok(ScenarioSet {
        samples,
        transformed,
        seed,
        clamp_count,
    })
}

/// Point forecasts in raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanForecast {
    /// Monte Carlo mean of back-transformed draws.
    pub monte_carlo: DVector<f64>,
    /// Inverse transform of the Gaussian mean.
    pub plug_in: DVector<f64>,
}

pub const DEFAULT_MEAN_DRAWS: usize = 1000;

pub fn predictive_mean_forecast(dist: &PredictiveDistribution, n: usize, seed: u64) -> Result<MeanForecast> {
    let plug_in = dist.mean.map(|z| dist.back_transform(z));
    let monte_carlo = match dist.transform {
        // Affine inverse: the Gaussian mean maps exactly.
        Some(spec) if spec.lambda == 1.0 => plug_in.clone(),
        None => plug_in.clone(),
        Some(_) => {
            let set = sample_scenarios(dist, n, seed)?;
            DVector::from_fn(dist.dim(), |j, _| set.samples.column(j).mean())
        }
    };
    Ok(MeanForecast {
        monte_carlo,
        plug_in,
    })
}
