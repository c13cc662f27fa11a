//! File formats owned by the command-line tool: fitted-model directories,
//! scenario and summary tables, and plot data.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use stwind::pipeline::{n_land_use, DayForecast, FittedModel, Forecaster};
use stwind::predict::Target;
use stwind::verify::{average_periodogram, empirical_st_correlation, rank_histogram, Window, MIN_PERIODOGRAM_LEN};
use stwind::{BoxCoxSpec, Geometry, StationMeta, Theta};

pub const THETA_FILE: &str = "theta.txt";
pub const MODEL_FILE: &str = "model.toml";

/// Standard-normal quantile at 0.95.
const Z95: f64 = 1.644_853_626_951_472_2;

/// Metadata written next to a fitted parameter file.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub hours: usize,
    pub obs_transform: BoxCoxSpec,
    pub nwp_transform: BoxCoxSpec,
    pub train_days: Vec<usize>,
    pub test_days: Vec<usize>,
    pub loglik: f64,
    pub convergence: String,
    pub iterations: usize,
    pub hessian_condition: f64,
    pub flags: Vec<String>,
    pub stations: Vec<StationMeta>,
    pub nwp_points: Vec<StationMeta>,
}

/// Write `theta.txt` and `model.toml` into `dir`; returns both paths.
pub fn write_fit(dir: &Path, fitted: &FittedModel, geom: &Geometry, train: &[usize], test: &[usize]) -> anyhow::Result<[PathBuf; 2]> {
    fs::create_dir_all(dir)?;
    let fc = &fitted.forecaster;
    let theta_path = dir.join(THETA_FILE);
    fs::write(&theta_path, fc.theta.to_text(Some(&fitted.fit.std_errors)))?;
    let mut flags = fitted.init_flags.clone();
    flags.extend(fitted.fit.flags.iter().cloned());
    let meta = ModelFile {
        hours: geom.hours(),
        obs_transform: fc.obs_spec,
        nwp_transform: fc.nwp_spec,
        train_days: train.iter().map(|b| b + 1).collect(),
        test_days: test.iter().map(|b| b + 1).collect(),
        loglik: fitted.fit.loglik,
        convergence: fitted.fit.convergence.as_str().to_string(),
        iterations: fitted.fit.iterations,
        hessian_condition: fitted.fit.hessian_condition,
        flags,
        stations: geom.stations().to_vec(),
        nwp_points: geom.nwp_points().to_vec(),
    };
    let model_path = dir.join(MODEL_FILE);
    fs::write(&model_path, toml::to_string(&meta)?)?;
    Ok([theta_path, model_path])
}

/// Read a fitted-model directory back into a forecaster and its geometry.
pub fn read_fit(dir: &Path) -> anyhow::Result<(Forecaster, Geometry)> {
    let text = fs::read_to_string(dir.join(THETA_FILE)).with_context(|| format!("reading {}", dir.join(THETA_FILE).display()))?;
    let (theta, _) = Theta::from_text(&text)?;
    let meta: ModelFile = toml::from_str(&fs::read_to_string(dir.join(MODEL_FILE))?)
        .with_context(|| format!("parsing {}", dir.join(MODEL_FILE).display()))?;
    let mut geom = Geometry::new(meta.hours, meta.stations, meta.nwp_points)?;
    geom.reconcile_land_use(n_land_use(&geom));
    Ok((
        Forecaster {
            theta,
            obs_spec: meta.obs_transform,
            nwp_spec: meta.nwp_transform,
        },
        geom,
    ))
}

/// Target list CSV with header `hour,station_id`.
pub fn read_targets(reader: impl Read, geom: &Geometry) -> anyhow::Result<Vec<Target>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let hour: usize = row.get(0).unwrap_or("").parse().context("bad hour in target list")?;
        let id = row.get(1).unwrap_or("");
        let station = geom
            .stations()
            .iter()
            .position(|s| s.id == id)
            .with_context(|| format!("unknown station {id} in target list"))?;
        out.push(Target { hour, station });
    }
    if out.is_empty() {
        bail!(stwind::Error::Empty("target list"));
    }
    Ok(out)
}

pub fn write_scenarios(forecasts: &[&DayForecast], geom: &Geometry, w: impl Write) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["scenario", "day", "hour", "station_id", "value"])?;
    for fc in forecasts {
        for s in 0..fc.scenarios.n_scenarios() {
            for (k, t) in fc.dist.targets.iter().enumerate() {
                wtr.write_record([
                    (s + 1).to_string(),
                    fc.day.to_string(),
                    t.hour.to_string(),
                    geom.stations()[t.station].id.clone(),
                    fc.scenarios.samples[(s, k)].to_string(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Mean and standard deviation from Monte Carlo draws; 5% and 95%
/// quantiles exactly, since the inverse transform is monotone.
pub fn write_summary(forecasts: &[(&DayForecast, &DMatrix<f64>)], geom: &Geometry, w: impl Write) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["day", "hour", "station_id", "mean", "sd", "q05", "q95"])?;
    for (fc, draws) in forecasts {
        for (k, t) in fc.dist.targets.iter().enumerate() {
            let col = draws.column(k);
            let sd = col.variance().sqrt() * (col.len() as f64 / (col.len() as f64 - 1.0)).sqrt();
            let (m, s) = (fc.dist.mean[k], fc.dist.covariance.values()[(k, k)].sqrt());
            wtr.write_record([
                fc.day.to_string(),
                t.hour.to_string(),
                geom.stations()[t.station].id.clone(),
                fc.mean.monte_carlo[k].to_string(),
                sd.to_string(),
                fc.dist.back_transform(m - Z95 * s).to_string(),
                fc.dist.back_transform(m + Z95 * s).to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Scenario table grouped by day: `(scenario, hour, station_id) → value`.
pub type ScenarioTable = BTreeMap<usize, BTreeMap<(usize, String, usize), f64>>;

pub fn read_scenarios(reader: impl Read) -> anyhow::Result<ScenarioTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = ScenarioTable::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let ctx = || format!("scenario row {}", i + 2);
        if row.len() != 5 {
            bail!(stwind::Error::Parse {
                context: ctx(),
                message: format!("expected 5 fields, found {}", row.len())
            });
        }
        let num = |k: usize| -> anyhow::Result<usize> {
            row[k].parse().map_err(|_| {
                stwind::Error::Parse {
                    context: ctx(),
                    message: format!("bad integer `{}`", &row[k]),
                }
                .into()
            })
        };
        let value: f64 = row[4].parse().map_err(|_| stwind::Error::Parse {
            context: ctx(),
            message: format!("bad value `{}`", &row[4]),
        })?;
        out.entry(num(1)?).or_default().insert((num(0)?, row[3].to_string(), num(2)?), value);
    }
    if out.is_empty() {
        bail!(stwind::Error::Empty("scenario table"));
    }
    Ok(out)
}

/// One scored day: `m × d` raw scenarios and the `d` observations, in
/// station-major order.
pub struct ScoredDay {
    pub samples: DMatrix<f64>,
    pub obs: DVector<f64>,
}

fn write_matrix(path: &Path, labels: &[String], m: &DMatrix<f64>) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    wtr.write_record(&header)?;
    for (i, label) in labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(m.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Rank histogram, spectra and space-time correlation tables for external
/// plotting. Returns the files written.
pub fn write_plot_data(dir: &Path, days: &[ScoredDay], stations: &[String], hours: usize, seed: u64) -> anyhow::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let Some(first) = days.first() else {
        return Ok(written);
    };

    let cases: Vec<(Vec<f64>, f64)> = days
        .iter()
        .flat_map(|d| (0..d.obs.len()).map(move |k| (d.samples.column(k).iter().copied().collect(), d.obs[k])))
        .collect();
    let hist = rank_histogram(&cases, seed)?;
    let path = dir.join("rank_histogram.csv");
    let mut wtr = csv::Writer::from_path(&path)?;
    wtr.write_record(["rank", "count", "band_low", "band_high"])?;
    for (r, c) in hist.counts.iter().enumerate() {
        wtr.write_record([(r + 1).to_string(), c.to_string(), hist.band.0.to_string(), hist.band.1.to_string()])?;
    }
    wtr.flush()?;
    written.push(path);

    if days.len() * hours >= MIN_PERIODOGRAM_LEN {
        let m = first.samples.nrows();
        let series = |j: usize, pick: &dyn Fn(&ScoredDay, usize) -> f64| -> Vec<f64> {
            days.iter().flat_map(|d| (0..hours).map(move |t| (d, j * hours + t))).map(|(d, c)| pick(d, c)).collect()
        };
        let observed: Vec<Vec<f64>> = (0..stations.len()).map(|j| series(j, &|d, c| d.obs[c])).collect();
        let simulated: Vec<Vec<f64>> = (0..stations.len())
            .flat_map(|j| (0..m).map(move |s| (j, s)))
            .map(|(j, s)| series(j, &|d, c| d.samples[(s, c)]))
            .collect();
        let po = average_periodogram(&observed, Window::None)?;
        let ps = average_periodogram(&simulated, Window::None)?;
        let path = dir.join("spectrum.csv");
        let mut wtr = csv::Writer::from_path(&path)?;
        wtr.write_record(["bin", "period_hours", "observed", "scenarios"])?;
        for k in 1..po.power.len() {
            wtr.write_record([k.to_string(), (po.n as f64 / k as f64).to_string(), po.power[k].to_string(), ps.power[k].to_string()])?;
        }
        wtr.flush()?;
        written.push(path);
    }

    let labels: Vec<String> = stations.iter().flat_map(|s| (0..hours).map(move |t| format!("{s}:{t}"))).collect();
    // Scenario deviations from their day mean, and observed deviations
    // from the ensemble mean.
    let mut scen_cols = Vec::new();
    let mut obs_cols = Vec::new();
    for d in days {
        let mean = d.samples.row_mean().transpose();
        for s in 0..d.samples.nrows() {
            scen_cols.push(d.samples.row(s).transpose() - &mean);
        }
        obs_cols.push(&d.obs - &mean);
    }
    let scen = DMatrix::from_columns(&scen_cols);
    let path = dir.join("correlation_scenarios.csv");
    write_matrix(&path, &labels, &empirical_st_correlation(&scen)?)?;
    written.push(path);
    if obs_cols.len() >= 2 {
        let path = dir.join("correlation_observed.csv");
        write_matrix(&path, &labels, &empirical_st_correlation(&DMatrix::from_columns(&obs_cols))?)?;
        written.push(path);
    }
    Ok(written)
}
