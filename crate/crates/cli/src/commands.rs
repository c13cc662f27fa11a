use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nalgebra::{DMatrix, DVector};

use stwind::ingest::{build_panels, cluster_stations, group_series, parse_observations, read_nwp, read_stations};
use stwind::panel_io::{load_panel, save_panel};
use stwind::pipeline::{
    derive_seed, energy_windows, fit_raw, n_land_use, panel_geometry, rotation_splits, run_pipeline, select_cluster, DayForecast, Split,
};
use stwind::predict::{all_targets, sample_scenarios};
use stwind::synth::{make_test_geometry, reference_theta, simulate_panel, to_raw};
use stwind::verify::{rmse, variogram_score, ScoreReport, ENERGY, ENERGY_SPACE_TIME, RMSE, VARIOGRAM};
use stwind::{BoxCoxSpec, Geometry, Panel, StationMeta, Theta};

use crate::config::Config;
use crate::files::{self, ScoredDay};
use crate::manifest::Recorder;
use crate::{Cli, Command, FitArgs, IngestArgs, ModelArgs, PipelineArgs, PredictArgs, ScoreArgs, SimulateArgs, UsageError};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = Config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(UsageError("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let args: Vec<String> = std::env::args().skip(1).collect();
    match cli.command {
        Command::Ingest(a) => ingest(a, config, &args),
        Command::Simulate(a) => simulate(a, config, &args),
        Command::Fit(a) => fit(a, config, &args),
        Command::Predict(a) => predict(a, config, &args),
        Command::Score(a) => score(a, config, &args),
        Command::Pipeline(a) => pipeline(a, config, &args),
    }
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn load_raw(path: &Path, rec: &mut Recorder) -> anyhow::Result<Panel> {
    let panel = load_panel(path).with_context(|| format!("loading panel {}", path.display()))?;
    if panel.transform().is_some() {
        bail!(stwind::Error::InvalidInput(format!("{} holds transformed values; raw m/s expected", path.display())));
    }
    rec.panel_input(path);
    Ok(panel)
}

fn ingest(a: IngestArgs, mut cfg: Config, args: &[String]) -> anyhow::Result<()> {
    if let Some(h) = a.hours {
        cfg.geometry.hours = h;
    }
    if let Some(w) = a.window {
        cfg.geometry.window_minutes = w;
    }
    let mut rec = Recorder::default();
    let (records, skipped) = parse_observations(open(&a.obs)?)?;
    if skipped > 0 {
        log::warn!("{skipped} unparseable observation lines skipped");
    }
    let series = group_series(records)?;
    let stations = read_stations(open(&a.stations)?)?;
    let table = read_nwp(open(&a.nwp)?, cfg.geometry.hours)?;
    for p in [&a.obs, &a.stations, &a.nwp] {
        rec.input(p);
    }
    let window = chrono::Duration::minutes(cfg.geometry.window_minutes);
    let mut ing = build_panels(&series, stations, &table, cfg.geometry.hours, window)?;
    if !ing.missing_stations.is_empty() {
        log::warn!("stations without records: {}", ing.missing_stations.join(", "));
    }
    if let Some(k) = a.clusters {
        let labels = cluster_stations(&ing.obs, k, cfg.seed)?;
        let stations: Vec<StationMeta> = ing
            .obs
            .stations()
            .iter()
            .zip(labels)
            .map(|(s, l)| StationMeta {
                cluster: Some(l),
                ..s.clone()
            })
            .collect();
        ing.obs = ing.obs.with_stations(stations)?;
    }
    fs::create_dir_all(&a.out)?;
    for (name, panel) in [("obs.csv", &ing.obs), ("nwp.csv", &ing.nwp)] {
        let path = a.out.join(name);
        save_panel(panel, &path)?;
        rec.panel_output(&path);
    }
    println!(
        "{} stations, {} NWP points, {} days",
        ing.obs.n_stations(),
        ing.nwp.n_stations(),
        ing.obs.n_blocks()
    );
    rec.write(&a.out, "ingest", args, &cfg)?;
    Ok(())
}

fn simulate(a: SimulateArgs, mut cfg: Config, args: &[String]) -> anyhow::Result<()> {
    let g = &mut cfg.geometry;
    g.stations = a.stations.unwrap_or(g.stations);
    g.grid = a.grid.unwrap_or(g.grid);
    g.days = a.days.unwrap_or(g.days);
    g.hours = a.hours.unwrap_or(g.hours);
    if let Some(l) = a.lambda {
        cfg.transform.simulate_lambda = l;
    }
    let g = &cfg.geometry;
    let (stations, grid) = make_test_geometry(g.stations, g.grid, cfg.seed)?;
    let geom = Geometry::new(g.hours, stations, grid)?;
    let truth = reference_theta(&geom, n_land_use(&geom), cfg.seed);
    let spec = BoxCoxSpec::new(cfg.transform.simulate_lambda, 0.0).map_err(|e| UsageError(e.to_string()))?;
    let sim = simulate_panel(&truth, &geom, g.days, derive_seed(cfg.seed, 0, 0), spec)?;
    let (obs, nwp) = if a.transformed {
        (sim.obs, sim.nwp)
    } else {
        let (obs, c1) = to_raw(&sim.obs)?;
        let (nwp, c2) = to_raw(&sim.nwp)?;
        if c1 + c2 > 0 {
            log::warn!("{} simulated values clamped at zero speed", c1 + c2);
        }
        (obs, nwp)
    };
    let mut rec = Recorder::default();
    fs::create_dir_all(&a.out)?;
    for (name, panel) in [("obs.csv", &obs), ("nwp.csv", &nwp)] {
        let path = a.out.join(name);
        save_panel(panel, &path)?;
        rec.panel_output(&path);
    }
    let truth_path = a.out.join("truth.txt");
    fs::write(&truth_path, truth.to_text(None))?;
    rec.output(&truth_path);
    rec.write(&a.out, "simulate", args, &cfg)?;
    Ok(())
}

/// Apply the model flags to the configuration and load both panels.
fn model_inputs(m: &ModelArgs, cfg: &mut Config, rec: &mut Recorder) -> anyhow::Result<(Panel, Panel)> {
    if let Some(v) = &m.variant {
        cfg.scoring.variant = v.clone();
    }
    cfg.transform.lambda_obs = m.lambda_obs.or(cfg.transform.lambda_obs);
    cfg.transform.lambda_nwp = m.lambda_nwp.or(cfg.transform.lambda_nwp);
    if m.no_se {
        cfg.optimizer.standard_errors = false;
    }
    cfg.variant()?;
    let mut obs = load_raw(&m.obs, rec)?;
    let nwp = load_raw(&m.nwp, rec)?;
    if let Some(c) = m.cluster {
        obs = select_cluster(&obs, c)?;
    }
    Ok((obs, nwp))
}

fn fit(a: FitArgs, mut cfg: Config, args: &[String]) -> anyhow::Result<()> {
    let mut rec = Recorder::default();
    let (obs, nwp) = model_inputs(&a.model, &mut cfg, &mut rec)?;
    let pcfg = cfg.pipeline()?;
    let geom = panel_geometry(&obs, &nwp)?;
    let obs = obs.with_stations(geom.stations().to_vec())?;
    let theta0 = match &a.init_params {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            rec.input(p);
            Some(Theta::from_text(&text)?.0)
        }
        None => None,
    };
    let k = obs.n_blocks();
    let splits = match a.cv.as_deref() {
        None => vec![Split {
            train: (0..k).collect(),
            test: Vec::new(),
        }],
        Some("rolling3") => rotation_splits(k, 3)?,
        Some(other) => bail!(UsageError(format!("unknown cross-validation scheme `{other}` (expected rolling3)"))),
    };
    let mut trace = match &a.loglik_trace {
        Some(p) => {
            let mut w = csv::Writer::from_path(p).with_context(|| format!("creating {}", p.display()))?;
            w.write_record(["rotation", "part", "iteration", "loglik"])?;
            Some(w)
        }
        None => None,
    };
    let rotations = splits.len() > 1;
    for (r, split) in splits.iter().enumerate() {
        let dir = if rotations { a.model.out.join(format!("rotation_{}", r + 1)) } else { a.model.out.clone() };
        let fitted = fit_raw(&obs.select_blocks(&split.train)?, &nwp.select_blocks(&split.train)?, &geom, &pcfg, theta0.as_ref())?;
        for p in files::write_fit(&dir, &fitted, &geom, &split.train, &split.test)? {
            rec.output(&p);
        }
        if let Some(w) = trace.as_mut() {
            for t in &fitted.fit.trace {
                w.write_record([(r + 1).to_string(), format!("{:?}", t.part).to_lowercase(), t.iteration.to_string(), t.loglik.to_string()])?;
            }
        }
        println!(
            "{}loglik {:.4}, {} after {} iterations{}",
            if rotations { format!("rotation {}: ", r + 1) } else { String::new() },
            fitted.fit.loglik,
            fitted.fit.convergence.as_str(),
            fitted.fit.iterations,
            if fitted.fit.flags.is_empty() { String::new() } else { format!(" ({})", fitted.fit.flags.join("; ")) }
        );
    }
    if let (Some(mut w), Some(p)) = (trace, &a.loglik_trace) {
        w.flush()?;
        rec.output(p);
    }
    fs::create_dir_all(&a.model.out)?;
    rec.write(&a.model.out, "fit", args, &cfg)?;
    Ok(())
}

fn predict(a: PredictArgs, mut cfg: Config, args: &[String]) -> anyhow::Result<()> {
    if let Some(n) = a.scenarios {
        cfg.scoring.scenarios = n;
    }
    let pcfg = cfg.pipeline()?;
    let mut rec = Recorder::default();
    let (forecaster, geom) = files::read_fit(&a.fit)?;
    rec.input(&a.fit.join(files::THETA_FILE));
    rec.input(&a.fit.join(files::MODEL_FILE));
    let nwp = load_raw(&a.nwp, &mut rec)?;
    let pos = geom
        .nwp_points()
        .iter()
        .map(|p| {
            nwp.stations()
                .iter()
                .position(|q| q.id == p.id)
                .ok_or_else(|| stwind::Error::InvalidInput(format!("NWP point {} missing from {}", p.id, a.nwp.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let nwp = nwp.select_stations(&pos)?;
    let targets = match &a.targets {
        Some(p) => {
            rec.input(p);
            files::read_targets(open(p)?, &geom)?
        }
        None => all_targets(&geom),
    };
    let fc = forecaster.forecast_day(&geom, a.day, nwp.block_slice(a.day)?, &targets, &pcfg)?;
    let draws = sample_scenarios(&fc.dist, pcfg.mean_draws, derive_seed(pcfg.seed, a.day as u64, 2))?;
    fs::create_dir_all(&a.out)?;
    let scen_path = a.out.join("scenarios.csv");
    files::write_scenarios(&[&fc], &geom, File::create(&scen_path)?)?;
    let sum_path = a.out.join("summary.csv");
    files::write_summary(&[(&fc, &draws.samples)], &geom, File::create(&sum_path)?)?;
    rec.output(&scen_path);
    rec.output(&sum_path);
    if fc.scenarios.clamp_count > 0 {
        log::warn!("{} scenario values clamped at zero speed", fc.scenarios.clamp_count);
    }
    rec.write(&a.out, "predict", args, &cfg)?;
    Ok(())
}

/// Per-day scores of an ensemble: RMSE of its mean, windowed energy
/// scores and the variogram score.
fn ensemble_scores(samples: &DMatrix<f64>, obs: &DVector<f64>, n_st: usize, hours: usize, p: f64) -> anyhow::Result<Vec<(&'static str, f64)>> {
    let mean = samples.row_mean().transpose();
    let (es, es_st) = energy_windows(samples, obs, n_st, hours)?;
    Ok(vec![
        (RMSE, rmse(mean.as_slice(), obs.as_slice())?),
        (ENERGY, es),
        (ENERGY_SPACE_TIME, es_st),
        (VARIOGRAM, variogram_score(samples, obs, p, None)?),
    ])
}

fn score(a: ScoreArgs, cfg: Config, args: &[String]) -> anyhow::Result<()> {
    let mut rec = Recorder::default();
    let table = files::read_scenarios(open(&a.scenarios)?)?;
    rec.input(&a.scenarios);
    let obs = load_raw(&a.obs, &mut rec)?;
    let h = obs.hours();
    let mut report = ScoreReport::new("scenarios");
    let mut days = Vec::new();
    let mut columns: Option<Vec<usize>> = None;
    for (&day, entries) in &table {
        let ids: BTreeSet<&str> = entries.keys().map(|(_, id, _)| id.as_str()).collect();
        let cols: Vec<usize> = obs
            .stations()
            .iter()
            .enumerate()
            .filter_map(|(j, s)| ids.contains(s.id.as_str()).then_some(j))
            .collect();
        if cols.len() != ids.len() {
            bail!(stwind::Error::InvalidInput(format!("day {day}: scenario stations missing from the observation panel")));
        }
        if columns.get_or_insert_with(|| cols.clone()) != &cols {
            bail!(stwind::Error::InvalidInput("scenario days cover different stations".into()));
        }
        let m = entries.keys().map(|(s, _, _)| *s).max().unwrap_or(0);
        let d = cols.len() * h;
        if entries.len() != m * d {
            bail!(stwind::Error::InvalidInput(format!("day {day}: expected {m} scenarios of {d} station-hours")));
        }
        let mut samples = DMatrix::zeros(m, d);
        for ((s, id, t), v) in entries {
            let j = cols.iter().position(|&c| obs.stations()[c].id == *id).expect("station listed");
            if *s == 0 || *t >= h {
                bail!(stwind::Error::InvalidInput(format!("day {day}: scenario {s} hour {t} out of range")));
            }
            samples[(s - 1, j * h + t)] = *v;
        }
        let block = obs.block_slice(day)?;
        let values: Option<Vec<f64>> = cols.iter().flat_map(|&c| (0..h).map(move |t| block.value(t, c))).collect();
        let Some(values) = values else {
            log::warn!("day {day} skipped: observations incomplete");
            continue;
        };
        let y = DVector::from_vec(values);
        report.push_day(day, &ensemble_scores(&samples, &y, cols.len(), h, cfg.scoring.variogram_p)?)?;
        days.push(ScoredDay { samples, obs: y });
    }
    if days.is_empty() {
        bail!(stwind::Error::NoCompleteBlocks);
    }
    fs::create_dir_all(&a.out)?;
    let path = a.out.join("scores.csv");
    ScoreReport::write_csv(&[&report], File::create(&path)?)?;
    rec.output(&path);
    let ids: Vec<String> = columns.unwrap_or_default().iter().map(|&c| obs.stations()[c].id.clone()).collect();
    for p in files::write_plot_data(&a.out, &days, &ids, h, cfg.seed)? {
        rec.output(&p);
    }
    print_aggregates(&[&report]);
    rec.write(&a.out, "score", args, &cfg)?;
    Ok(())
}

fn print_aggregates(reports: &[&ScoreReport]) {
    for r in reports {
        let parts: Vec<String> = r.aggregates().iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
        println!("{}: {} days, {}", r.label, r.days.len(), parts.join(", "));
    }
}

fn pipeline(a: PipelineArgs, mut cfg: Config, args: &[String]) -> anyhow::Result<()> {
    if let Some(n) = a.scenarios {
        cfg.scoring.scenarios = n;
    }
    let mut rec = Recorder::default();
    let (obs, nwp) = model_inputs(&a.model, &mut cfg, &mut rec)?;
    let pcfg = cfg.pipeline()?;
    let result = run_pipeline(&obs, &nwp, &pcfg)?;
    let geom = panel_geometry(&obs, &nwp)?;
    let out = &a.model.out;
    fs::create_dir_all(out)?;
    let mut written: Vec<PathBuf> = Vec::new();
    for (r, rot) in result.rotations.iter().enumerate() {
        let dir = out.join(format!("rotation_{}", r + 1));
        written.extend(files::write_fit(&dir, &rot.model, &geom, &rot.split.train, &rot.split.test)?);
        if !rot.skipped.is_empty() {
            log::warn!("rotation {}: days {:?} skipped", r + 1, rot.skipped);
        }
    }
    let path = out.join("scores.csv");
    ScoreReport::write_csv(&[&result.model, &result.nwp], File::create(&path)?)?;
    written.push(path);
    let forecasts: Vec<&DayForecast> = result.rotations.iter().flat_map(|r| &r.forecasts).collect();
    let path = out.join("scenarios.csv");
    files::write_scenarios(&forecasts, &geom, File::create(&path)?)?;
    written.push(path);
    let days: Vec<ScoredDay> = result
        .rotations
        .iter()
        .flat_map(|r| r.forecasts.iter().zip(&r.observed))
        .map(|(fc, y)| ScoredDay {
            samples: fc.scenarios.samples.clone(),
            obs: y.clone(),
        })
        .collect();
    let ids: Vec<String> = geom.stations().iter().map(|s| s.id.clone()).collect();
    written.extend(files::write_plot_data(out, &days, &ids, geom.hours(), cfg.seed)?);
    for p in &written {
        rec.output(p);
    }
    print_aggregates(&[&result.model, &result.nwp]);
    for metric in [RMSE, ENERGY] {
        if let (Some(m), Some(n)) = (result.model.aggregate(metric), result.nwp.aggregate(metric)) {
            println!("{metric} improvement over NWP: {:.1}%", 100.0 * (1.0 - m / n));
        }
    }
    rec.write(out, "pipeline", args, &cfg)?;
    Ok(())
}
