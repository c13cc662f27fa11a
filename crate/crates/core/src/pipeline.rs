//! Train/test experiment over rotating splits: transform, fit, krige,
//! sample scenarios and score them against the raw NWP forecast.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimate::{fit_mle, init_least_squares, FitOptions, FitResult};
use crate::likelihood::LikelihoodData;
use crate::model::Geometry;
use crate::panel::{BlockData, Panel};
use crate::predict::{all_targets, krige, Target, predictive_mean_forecast, sample_scenarios, MeanForecast, PredictiveDistribution, ScenarioSet};
use crate::theta::{Theta, Variant};
use crate::transform::{boxcox, default_lambda_grid, estimate_lambda, BoxCoxSpec};
use crate::verify::{dss, energy_score, rmse, variogram_score, ScoreReport, DAWID_SEBASTIANI, ENERGY, ENERGY_SPACE_TIME, RMSE, VARIOGRAM};

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub n_scenarios: usize,
    /// Draws behind the Monte Carlo predictive mean.
    pub mean_draws: usize,
    pub seed: u64,
    pub rotations: usize,
    pub lambda_grid: Vec<f64>,
    /// Fixed λ per source instead of a grid search.
    pub lambda_obs: Option<f64>,
    pub lambda_nwp: Option<f64>,
    pub fit: FitOptions,
    pub variogram_p: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            variant: Variant::Full,
            n_scenarios: 50,
            mean_draws: crate::predict::DEFAULT_MEAN_DRAWS,
            seed: 0,
            rotations: 3,
            lambda_grid: default_lambda_grid(),
            lambda_obs: None,
            lambda_nwp: None,
            fit: FitOptions::default(),
            variogram_p: 0.5,
        }
    }
}

/// Block positions (0-based) of one train/test rotation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Cut `k` blocks into `rotations` contiguous parts; rotation `r` tests on
/// part `r` and trains on the others.
pub fn rotation_splits(k: usize, rotations: usize) -> Result<Vec<Split>> {
    if rotations < 2 || k < rotations {
        return Err(Error::InvalidInput(format!("cannot split {k} blocks into {rotations} rotations")));
    }
    let bounds: Vec<usize> = (0..=rotations).map(|i| (i * k + rotations / 2) / rotations).collect();
    Ok((0..rotations)
        .map(|r| Split {
            train: (0..k).filter(|&b| b < bounds[r] || b >= bounds[r + 1]).collect(),
            test: (bounds[r]..bounds[r + 1]).collect(),
        })
        .collect())
}

/// SplitMix64 mix of a base seed with two counters.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Transform every available value; values outside the domain make the
/// panel invalid.
pub fn transform_panel(panel: &Panel, spec: BoxCoxSpec) -> Result<Panel> {
    if panel.transform().is_some() {
        return Err(Error::InvalidInput("panel is already transformed".into()));
    }
    panel.map_values(Some(spec), |y| boxcox(y, &spec).unwrap_or(f64::NAN))
}

/// Geometry of an observation/NWP panel pair, with station land uses
/// reconciled against the NWP categories.
pub fn panel_geometry(obs: &Panel, nwp: &Panel) -> Result<Geometry> {
    let mut geom = Geometry::new(obs.hours(), obs.stations().to_vec(), nwp.stations().to_vec())?;
    geom.reconcile_land_use(n_land_use(&geom));
    Ok(geom)
}

pub fn n_land_use(geom: &Geometry) -> usize {
    geom.nwp_points().iter().map(|p| p.land_use).max().unwrap_or(1) as usize
}

/// Everything needed to forecast: parameters and the transforms of both
/// sources.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecaster {
    pub theta: Theta,
    pub obs_spec: BoxCoxSpec,
    pub nwp_spec: BoxCoxSpec,
}

/// A fitted model with its optimizer report.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub forecaster: Forecaster,
    pub fit: FitResult,
    pub init_flags: Vec<String>,
}

/// Transforms of both sources estimated on raw training panels, unless
/// fixed by the configuration.
pub fn estimate_transforms(obs: &Panel, nwp: &Panel, cfg: &PipelineConfig) -> Result<(BoxCoxSpec, BoxCoxSpec)> {
    let spec = |panel: &Panel, fixed: Option<f64>| match fixed {
        Some(l) => estimate_lambda(panel, &[l]),
        None => estimate_lambda(panel, &cfg.lambda_grid),
    };
    Ok((spec(obs, cfg.lambda_obs)?, spec(nwp, cfg.lambda_nwp)?))
}

/// Estimate both transforms on the raw training panels, then fit by
/// maximum likelihood from `theta0`, or from the least-squares start.
pub fn fit_raw(obs: &Panel, nwp: &Panel, geom: &Geometry, cfg: &PipelineConfig, theta0: Option<&Theta>) -> Result<FittedModel> {
    let (obs_spec, nwp_spec) = estimate_transforms(obs, nwp, cfg)?;
    let data = LikelihoodData::new(&transform_panel(obs, obs_spec)?, &transform_panel(nwp, nwp_spec)?)?;
    let (start, init_flags) = match theta0 {
        Some(th) => (th.clone(), Vec::new()),
        None => {
            let init = init_least_squares(&data, geom, n_land_use(geom), cfg.variant)?;
            (init.theta, init.flags)
        }
    };
    let fit = fit_mle(&data, geom, &start, &cfg.fit)?;
    Ok(FittedModel {
        forecaster: Forecaster {
            theta: fit.theta.clone(),
            obs_spec,
            nwp_spec,
        },
        fit,
        init_flags,
    })
}

/// Predictive law and scenarios for one day.
#[derive(Clone, Debug)]
pub struct DayForecast {
    /// 1-based block index in the source panels.
    pub day: usize,
    pub dist: PredictiveDistribution,
    pub scenarios: ScenarioSet,
    pub mean: MeanForecast,
}

impl Forecaster {
    /// Krige `targets` from one raw NWP block.
    pub fn predict(&self, geom: &Geometry, nwp_raw: &BlockData, targets: &[Target]) -> Result<PredictiveDistribution> {
        if !nwp_raw.is_complete() {
            return Err(Error::InvalidInput("NWP block has missing values".into()));
        }
        let y = nwp_raw
            .vectorize()
            .iter()
            .map(|&v| boxcox(v, &self.nwp_spec))
            .collect::<Result<Vec<f64>>>()?;
        krige(&self.theta, geom, &DVector::from_vec(y), targets, Some(self.obs_spec))
    }

    /// Predictive law, scenarios and mean forecast of `targets` on `day`.
    /// Random streams depend only on the seed and the day.
    pub fn forecast_day(
        &self,
        geom: &Geometry,
        day: usize,
        nwp_raw: &BlockData,
        targets: &[Target],
        cfg: &PipelineConfig,
    ) -> Result<DayForecast> {
        let dist = self.predict(geom, nwp_raw, targets)?;
        let scenarios = sample_scenarios(&dist, cfg.n_scenarios, derive_seed(cfg.seed, day as u64, 1))?;
        let mean = predictive_mean_forecast(&dist, cfg.mean_draws, derive_seed(cfg.seed, day as u64, 2))?;
        Ok(DayForecast {
            day,
            dist,
            scenarios,
            mean,
        })
    }
}

/// Raw NWP at each station's nearest grid point, in vectorized order.
pub fn nwp_baseline(geom: &Geometry, nwp_raw: &BlockData) -> DVector<f64> {
    let h = geom.hours();
    DVector::from_fn(geom.obs_dim(), |r, _| {
        let (j, t) = (r / h, r % h);
        nwp_raw.values()[(t, geom.neighbors()[j][0])]
    })
}

/// Energy score averaged over per-station windows of `hours` values, and
/// over windows covering every pair of stations. Columns of `ens` follow
/// the station-major vectorized order.
pub fn energy_windows(ens: &DMatrix<f64>, obs: &DVector<f64>, n_stations: usize, hours: usize) -> Result<(f64, f64)> {
    let (h, n) = (hours, n_stations);
    if n == 0 || ens.ncols() != n * h || obs.len() != n * h {
        return Err(Error::Shape(format!(
            "ensemble of {} columns and {} observations for {n} stations of {h} hours",
            ens.ncols(),
            obs.len()
        )));
    }
    let station = |j: usize| (j * h..(j + 1) * h).collect::<Vec<_>>();
    let mut temporal = 0.0;
    for j in 0..n {
        let cols = station(j);
        temporal += energy_score(&ens.select_columns(&cols), &obs.select_rows(&cols))?;
    }
    temporal /= n as f64;
    if n < 2 {
        return Ok((temporal, temporal));
    }
    let mut st = 0.0;
    let mut pairs = 0;
    for a in 0..n {
        for b in a + 1..n {
            let cols: Vec<usize> = station(a).into_iter().chain(station(b)).collect();
            st += energy_score(&ens.select_columns(&cols), &obs.select_rows(&cols))?;
            pairs += 1;
        }
    }
    Ok((temporal, st / pairs as f64))
}

/// Scores of the model and of the NWP baseline for one day with complete
/// observations.
pub fn score_day(
    fc: &DayForecast,
    obs_raw: &DVector<f64>,
    baseline: &DVector<f64>,
    geom: &Geometry,
    cfg: &PipelineConfig,
) -> Result<(Vec<(&'static str, f64)>, Vec<(&'static str, f64)>)> {
    let spec = fc.dist.transform.ok_or_else(|| Error::InvalidInput("forecast without transform".into()))?;
    let obs_t = DVector::from_vec(obs_raw.iter().map(|&v| boxcox(v, &spec)).collect::<Result<_>>()?);
    let (es, es_st) = energy_windows(&fc.scenarios.samples, obs_raw, geom.n_obs(), geom.hours())?;
    let model = vec![
        (RMSE, rmse(fc.mean.monte_carlo.as_slice(), obs_raw.as_slice())?),
        (ENERGY, es),
        (ENERGY_SPACE_TIME, es_st),
        (DAWID_SEBASTIANI, dss(&fc.dist.mean, &fc.dist.covariance, &obs_t)?),
        (VARIOGRAM, variogram_score(&fc.scenarios.samples, obs_raw, cfg.variogram_p, None)?),
    ];
    let one = DMatrix::from_row_slice(1, baseline.len(), baseline.as_slice());
    let (nes, nes_st) = energy_windows(&one, obs_raw, geom.n_obs(), geom.hours())?;
    let nwp = vec![
        (RMSE, rmse(baseline.as_slice(), obs_raw.as_slice())?),
        (ENERGY, nes),
        (ENERGY_SPACE_TIME, nes_st),
    ];
    Ok((model, nwp))
}

/// Outcome of one rotation.
#[derive(Clone, Debug)]
pub struct RotationResult {
    pub split: Split,
    pub model: FittedModel,
    pub forecasts: Vec<DayForecast>,
    /// Raw observations of each forecast day, vectorized.
    pub observed: Vec<DVector<f64>>,
    /// Test days left out because of missing values.
    pub skipped: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub model: ScoreReport,
    pub nwp: ScoreReport,
    pub rotations: Vec<RotationResult>,
}

/// Full experiment on raw, aligned panels.
pub fn run_pipeline(obs: &Panel, nwp: &Panel, cfg: &PipelineConfig) -> Result<PipelineResult> {
    if obs.transform().is_some() || nwp.transform().is_some() {
        return Err(Error::InvalidInput("the pipeline expects raw panels".into()));
    }
    if obs.n_blocks() != nwp.n_blocks() {
        return Err(Error::Shape("observation and NWP panels cover different days".into()));
    }
    let geom = panel_geometry(obs, nwp)?;
    let obs = obs.clone().with_stations(geom.stations().to_vec())?;
    let mut model_report = ScoreReport::new(format!("model-{}", cfg.variant.as_str()));
    let mut nwp_report = ScoreReport::new("nwp");
    let mut rotations = Vec::new();
    for (r, split) in rotation_splits(obs.n_blocks(), cfg.rotations)?.into_iter().enumerate() {
        log::info!("rotation {}: {} training days, {} test days", r + 1, split.train.len(), split.test.len());
        let fitted = fit_raw(&obs.select_blocks(&split.train)?, &nwp.select_blocks(&split.train)?, &geom, cfg, None)?;
        let targets = all_targets(&geom);
        let mut forecasts = Vec::new();
        let mut observed = Vec::new();
        let mut skipped = Vec::new();
        for &b in &split.test {
            let day = b + 1;
            let (o, n) = (&obs.data()[b], &nwp.data()[b]);
            if !o.is_complete() || !n.is_complete() {
                skipped.push(day);
                continue;
            }
            let fc = match fitted.forecaster.forecast_day(&geom, day, n, &targets, cfg) {
                Ok(fc) => fc,
                Err(e) if !e.is_numerical() => {
                    log::warn!("day {day} skipped: {e}");
                    skipped.push(day);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let y = o.vectorize();
            let (m, base) = score_day(&fc, &y, &nwp_baseline(&geom, n), &geom, cfg)?;
            model_report.push_day(day, &m)?;
            nwp_report.push_day(day, &base)?;
            forecasts.push(fc);
            observed.push(y);
        }
        rotations.push(RotationResult {
            split,
            model: fitted,
            forecasts,
            observed,
            skipped,
        });
    }
    if model_report.days.is_empty() {
        return Err(Error::NoCompleteBlocks);
    }
    Ok(PipelineResult {
        model: model_report,
        nwp: nwp_report,
        rotations,
    })
}

/// Stations of one cluster, with the NWP panel left whole.
pub fn select_cluster(obs: &Panel, cluster: u32) -> Result<Panel> {
    let pos: Vec<usize> = obs
        .stations()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| (s.cluster == Some(cluster)).then_some(i))
        .collect();
    if pos.is_empty() {
        return Err(Error::InvalidInput(format!("no station in cluster {cluster}")));
    }
    obs.select_stations(&pos)
}
