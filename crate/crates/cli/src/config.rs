//! Run configuration: a TOML file with one section per concern. Command-line
//! flags override file values.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use stwind::estimate::FitOptions;
use stwind::optim::BfgsOptions;
use stwind::pipeline::PipelineConfig;
use stwind::transform::default_lambda_grid;
use stwind::Variant;

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub transform: TransformConfig,
    pub optimizer: OptimizerConfig,
    pub scoring: ScoringConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub hours: usize,
    /// Synthetic stations, grid points and days for `simulate`.
    pub stations: usize,
    pub grid: usize,
    pub days: usize,
    /// Moving-average window of `ingest`, minutes.
    pub window_minutes: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub lambda_grid: Vec<f64>,
    pub lambda_obs: Option<f64>,
    pub lambda_nwp: Option<f64>,
    /// Transform under which `simulate` draws its Gaussian panels.
    pub simulate_lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub restarts: usize,
    pub standard_errors: bool,
    pub hessian_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub variant: String,
    pub scenarios: usize,
    pub mean_draws: usize,
    pub variogram_p: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            geometry: GeometryConfig::default(),
            transform: TransformConfig::default(),
            optimizer: OptimizerConfig::default(),
            scoring: ScoringConfig::default(),
        }
    }
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            hours: 24,
            stations: 4,
            grid: 6,
            days: 60,
            window_minutes: 60,
        }
    }
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            lambda_grid: default_lambda_grid(),
            lambda_obs: None,
            lambda_nwp: None,
            simulate_lambda: 0.5,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        OptimizerConfig {
            max_iter: fit.bfgs.max_iter,
            grad_tol: fit.bfgs.grad_tol,
            restarts: fit.restarts,
            standard_errors: fit.standard_errors,
            hessian_step: fit.hessian_step,
        }
    }
}

impl Default for ScoringConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        ScoringConfig {
            variant: p.variant.as_str().to_string(),
            scenarios: p.n_scenarios,
            mean_draws: p.mean_draws,
            variogram_p: p.variogram_p,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the effective configuration text.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn variant(&self) -> anyhow::Result<Variant> {
        Variant::parse(&self.scoring.variant).map_err(|e| UsageError(e.to_string()).into())
    }

    pub fn fit_options(&self) -> FitOptions {
        let o = &self.optimizer;
        FitOptions {
            bfgs: BfgsOptions {
                max_iter: o.max_iter,
                grad_tol: o.grad_tol,
                ..BfgsOptions::default()
            },
            hessian_step: o.hessian_step,
            standard_errors: o.standard_errors,
            restarts: o.restarts,
        }
    }

    pub fn pipeline(&self) -> anyhow::Result<PipelineConfig> {
        Ok(PipelineConfig {
            variant: self.variant()?,
            n_scenarios: self.scoring.scenarios,
            mean_draws: self.scoring.mean_draws,
            seed: self.seed,
            lambda_grid: self.transform.lambda_grid.clone(),
            lambda_obs: self.transform.lambda_obs,
            lambda_nwp: self.transform.lambda_nwp,
            fit: self.fit_options(),
            variogram_p: self.scoring.variogram_p,
            ..PipelineConfig::default()
        })
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: Config = toml::from_str("seed = 3\n[optimizer]\nmax_iter = 10\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.optimizer.max_iter, 10);
        assert_eq!(c.scoring, ScoringConfig::default());
    }

    #[test]
    fn roundtrip_and_hash() {
        let c = Config::default();
        let back: Config = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(c.hash(), d.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<Config>("[optimizer]\nmaxiter = 3\n").is_err());
    }
}
