//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that the report is always printed.
//! `ACCEPTANCE_ONLY=1,4` restricts the run to the listed criteria.

use std::error::Error as StdError;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, StudentsT};

use stwind::estimate::{fit_mle, free_layout, init_least_squares, FitOptions};
use stwind::likelihood::{fd_step, layout_objective, loglik_gradient, total_loglik, LikelihoodData};
use stwind::linalg::factorization_stats;
use stwind::model::{build_a, build_lambda, cov_marginal_values, cov_values, gamma_values, joint_values, mean_cond_base, Which};
use stwind::pipeline::{n_land_use, run_pipeline, PipelineConfig, PipelineResult};
use stwind::predict::{all_targets, krige, Target};
use stwind::synth::{make_test_geometry, normal_vector, random_theta, reference_theta, simulate_panel, to_raw};
use stwind::theta::{CovParams, GammaParams, Variant};
use stwind::transform::{boxcox, inv_boxcox, BoxCoxSpec};
use stwind::verify::{average_periodogram, dss, rank_histogram, Window, ENERGY, RMSE};
use stwind::Geometry;

type Outcome = Result<(bool, String), Box<dyn StdError>>;

const REPLICATIONS: u64 = 20;

/// Largest absolute difference relative to the largest reference entry.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    diff / b.iter().map(|y| y.abs()).fold(0.0, f64::max)
}

fn geometry(j0: usize, n_grid: usize, hours: usize, seed: u64) -> Result<Geometry, Box<dyn StdError>> {
    let (s, g) = make_test_geometry(j0, n_grid, seed)?;
    Ok(Geometry::new(hours, s, g)?)
}

/// Kriging against explicit conditioning of the joint Gaussian, solved by LU.
fn c1() -> Outcome {
    let geom = geometry(2, 4, 4, 11)?;
    let (h, no) = (geom.hours(), geom.obs_dim());
    let targets: Vec<Target> = (0..h).map(|hour| Target { hour, station: 1 }).collect();
    let rows: Vec<usize> = (0..h).map(|t| h + t).collect();
    let nwp_rows: Vec<usize> = (no..no + geom.nwp_dim()).collect();
    let mut worst = 0.0f64;
    for i in 0..50 {
        let th = random_theta(&geom, n_land_use(&geom), 1000 + i);
        let (mean, cov) = joint_values(&th, &geom)?;
        let mu_n = mean.select_rows(&nwp_rows);
        let y = &mu_n + normal_vector(i, 0, geom.nwp_dim()) * 0.5;
        let d = krige(&th, &geom, &y, &targets, None)?;

        let cnn = cov.select_rows(&nwp_rows).select_columns(&nwp_rows);
        let con = cov.select_rows(&rows).select_columns(&nwp_rows);
        let coo = cov.select_rows(&rows).select_columns(&rows);
        let lu = cnn.lu();
        let m_bf = mean.select_rows(&rows) + &con * lu.solve(&(&y - &mu_n)).ok_or("singular")?;
        let c_bf = coo - &con * lu.solve(&con.transpose()).ok_or("singular")?;
        worst = worst.max(rel_err(d.mean.as_slice(), m_bf.as_slice())).max(rel_err(d.covariance.values().as_slice(), c_bf.as_slice()));
    }
    Ok((worst <= 1e-8, format!("max relative error {worst:.2e} over 50 packs")))
}

/// Conditioning every station-hour on all NWP points leaves the
/// conditional law itself.
fn c2() -> Outcome {
    let geom = geometry(2, 4, 4, 12)?;
    let mut worst = 0.0f64;
    for i in 0..50 {
        let th = random_theta(&geom, n_land_use(&geom), 2000 + i);
        let y = DVector::from_fn(geom.nwp_dim(), |r, _| 2.5 + 0.3 * ((r * 7 + i as usize) % 5) as f64);
        let d = krige(&th, &geom, &y, &all_targets(&geom), None)?;
        let mean = mean_cond_base(&th, &geom) + build_lambda(&th, &geom)?.apply(&y)?;
        let cov = cov_marginal_values(&th, &geom, Which::Cond)?;
        worst = worst.max(rel_err(d.mean.as_slice(), mean.as_slice())).max(rel_err(d.covariance.values().as_slice(), cov.as_slice()));
    }
    Ok((worst <= 1e-8, format!("max relative error {worst:.2e} over 50 packs")))
}

/// Empirical covariance of `A_s Y₀ + ε_s` against the closed form.
fn c3() -> Outcome {
    let h = 4;
    let sites = [(0.4, -0.7), (-0.2, 0.3), (-0.5, 0.6)];
    let mut params = CovParams::new(sites.len());
    params.nu = std::array::from_fn(|k| 0.2 * ((k as f64) * 0.7).sin());
    params.common = GammaParams::new(2e-4, 0.1, 2e-5);
    for (j, g) in params.local.iter_mut().enumerate() {
        *g = GammaParams::new(0.2 + 0.05 * j as f64, 0.3, 0.05);
    }
    let sigma = cov_values(&params, &sites, h, Variant::Full)?;

    let l0 = Cholesky::new(gamma_values(&params.common, h)).ok_or("common kernel not PD")?.unpack();
    let a: Vec<DMatrix<f64>> = sites.iter().map(|&(la, lo)| build_a(&params.nu, la, lo, h)).collect();
    let ls: Vec<DMatrix<f64>> = params
        .local
        .iter()
        .map(|g| Cholesky::new(gamma_values(g, h)).map(|c| c.unpack()))
        .collect::<Option<_>>()
        .ok_or("local kernel not PD")?;
    let d = h * sites.len();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut y = DVector::<f64>::zeros(d);
    for _ in 0..n {
        let y0 = &l0 * DVector::from_fn(h, |_, _| rng.sample::<f64, _>(StandardNormal));
        for j in 0..sites.len() {
            let e = &ls[j] * DVector::from_fn(h, |_, _| rng.sample::<f64, _>(StandardNormal));
            y.rows_mut(j * h, h).copy_from(&(&a[j] * &y0 + e));
        }
        acc.syger(1.0, &y, &y, 1.0);
    }
    let emp = acc / n as f64;
    let mut outside = 0;
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..=i {
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n as f64).sqrt();
            let z = (emp[(i, j)] - sigma[(i, j)]).abs() / se;
            worst = worst.max(z);
            outside += usize::from(z > 3.0);
        }
    }
    let entries = d * (d + 1) / 2;
    Ok((outside == 0, format!("{outside}/{entries} entries beyond 3 SE, max |z| {worst:.2}")))
}

/// Parameter recovery from 60 simulated blocks.
fn c4() -> Outcome {
    let seed = 1;
    let geom = geometry(4, 4, 24, seed)?;
    let nlu = n_land_use(&geom);
    let truth = reference_theta(&geom, nlu, seed);
    let sim = simulate_panel(&truth, &geom, 60, seed + 100, BoxCoxSpec::default())?;
    let data = LikelihoodData::new(&sim.obs, &sim.nwp)?;
    let init = init_least_squares(&data, &geom, nlu, Variant::Full)?;
    let fit = fit_mle(&data, &geom, &init.theta, &FitOptions::default())?;
    let params = fit.layout.params();
    let covered = params
        .iter()
        .filter(|&&p| {
            let se = fit.std_errors.get(&p.name()).copied().unwrap_or(f64::NAN);
            ((fit.theta.get(p) - truth.get(p)) / se).abs() <= 3.0
        })
        .count();
    let coverage = covered as f64 / params.len() as f64;
    let ll_hat = total_loglik(&fit.theta, &geom, &data)?;
    let ll_true = total_loglik(&truth, &geom, &data)?;
    Ok((
        coverage >= 0.9 && ll_hat >= ll_true - 1.0,
        format!(
            "{covered}/{} within 3 SE ({:.1}%), loglik {ll_hat:.2} vs truth {ll_true:.2}, {}",
            params.len(),
            100.0 * coverage,
            fit.convergence.as_str()
        ),
    ))
}

/// One end-to-end run on raw synthetic panels.
fn replication(r: u64) -> Result<PipelineResult, Box<dyn StdError>> {
    let geom = geometry(2, 3, 24, 100 + r)?;
    let truth = reference_theta(&geom, n_land_use(&geom), r);
    let sim = simulate_panel(&truth, &geom, 30, 200 + r, BoxCoxSpec::new(0.5, 0.0)?)?;
    let (obs, _) = to_raw(&sim.obs)?;
    let (nwp, _) = to_raw(&sim.nwp)?;
    let cfg = PipelineConfig {
        seed: r,
        fit: FitOptions {
            standard_errors: false,
            ..FitOptions::default()
        },
        ..PipelineConfig::default()
    };
    Ok(run_pipeline(&obs, &nwp, &cfg)?)
}

fn c5(reps: &[PipelineResult]) -> Outcome {
    let mut wins = 0;
    let mut gains = Vec::new();
    for rep in reps {
        let get = |r: &stwind::verify::ScoreReport, m| r.aggregate(m).unwrap_or(f64::NAN);
        let (mr, nr) = (get(&rep.model, RMSE), get(&rep.nwp, RMSE));
        let (me, ne) = (get(&rep.model, ENERGY), get(&rep.nwp, ENERGY));
        wins += usize::from(mr < nr && me < ne);
        gains.push(1.0 - mr / nr);
    }
    let mean_gain = 100.0 * gains.iter().sum::<f64>() / gains.len() as f64;
    Ok((
        wins >= 18,
        format!("model beats NWP on RMSE and ES in {wins}/{} replications, mean RMSE gain {mean_gain:.0}%", reps.len()),
    ))
}

/// Two ranks per test day, one per station at hours twelve apart.
fn c6(reps: &[PipelineResult]) -> Outcome {
    let mut passed = 0;
    let mut p_min = 1.0f64;
    for (r, rep) in reps.iter().enumerate() {
        let mut cases = Vec::new();
        for rot in &rep.rotations {
            for (fc, obs) in rot.forecasts.iter().zip(&rot.observed) {
                let h = fc.dist.targets.iter().map(|t| t.hour).max().unwrap_or(0) + 1;
                let n_st = obs.len() / h;
                for j in 0..n_st {
                    let col = j * h + (7 * fc.day + 12 * j) % h;
                    cases.push((fc.scenarios.samples.column(col).iter().copied().collect(), obs[col]));
                }
            }
        }
        let hist = rank_histogram(&cases, r as u64)?;
        p_min = p_min.min(hist.p_value);
        passed += usize::from(hist.p_value >= 0.01);
    }
    Ok((
        passed >= 18,
        format!("{passed}/{} histograms pass at 1% (smallest p {p_min:.3})", reps.len()),
    ))
}

/// Scenario and observed periodograms of multi-day station series.
fn c8(reps: &[PipelineResult]) -> Outcome {
    let mut truth = Vec::new();
    let mut scen = Vec::new();
    for rep in reps {
        for rot in &rep.rotations {
            let Some(first) = rot.forecasts.first() else { continue };
            let h = first.dist.targets.iter().map(|t| t.hour).max().unwrap_or(0) + 1;
            let n_st = first.dist.dim() / h;
            let m = first.scenarios.samples.nrows();
            for j in 0..n_st {
                truth.push(rot.observed.iter().flat_map(|o| o.rows(j * h, h).iter().copied().collect::<Vec<_>>()).collect::<Vec<f64>>());
                for s in 0..m {
                    scen.push(
                        rot.forecasts
                            .iter()
                            .flat_map(|fc| (0..h).map(move |t| fc.scenarios.samples[(s, j * h + t)]))
                            .collect::<Vec<f64>>(),
                    );
                }
            }
        }
    }
    let len = truth.first().ok_or("no series")?.len();
    truth.retain(|s| s.len() == len);
    scen.retain(|s| s.len() == len);
    let pt = average_periodogram(&truth, Window::None)?;
    let ps = average_periodogram(&scen, Window::None)?;
    let mut ok = true;
    let mut detail = Vec::new();
    for period in [24.0, 12.0] {
        let k = pt.bin_of_period(period).ok_or("period is not a Fourier bin")?;
        let ratio = ps.power[k] / pt.power[k];
        ok &= (0.5..=2.0).contains(&ratio);
        detail.push(format!("{period}h ratio {ratio:.3}"));
    }
    Ok((ok, format!("{} ({} observed series of {len} h)", detail.join(", "), truth.len())))
}

/// Paired one-sided t-test that `a` scores lower than `b`.
fn paired_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = mean / (sd / n.sqrt());
    StudentsT::new(0.0, 1.0, n - 1.0).map(|dist| dist.cdf(t)).unwrap_or(f64::NAN)
}

fn c7() -> Outcome {
    let seed = 7;
    let geom = geometry(4, 4, 24, seed)?;
    let nlu = n_land_use(&geom);
    let truth = reference_theta(&geom, nlu, seed);
    let sim = simulate_panel(&truth, &geom, 90, seed + 100, BoxCoxSpec::default())?;
    let train: Vec<usize> = (0..60).collect();
    let data = LikelihoodData::new(&sim.obs.select_blocks(&train)?, &sim.nwp.select_blocks(&train)?)?;
    let opts = FitOptions {
        standard_errors: false,
        ..FitOptions::default()
    };
    let mut scores = Vec::new();
    for variant in [Variant::Full, Variant::TemporalOnly, Variant::BiasOnly] {
        let init = init_least_squares(&data, &geom, nlu, variant)?;
        let fit = fit_mle(&data, &geom, &init.theta, &opts)?;
        let mut per_day = Vec::new();
        for b in 60..90 {
            let y = sim.nwp.data()[b].vectorize();
            let d = krige(&fit.theta, &geom, &y, &all_targets(&geom), None)?;
            per_day.push(dss(&d.mean, &d.covariance, &sim.obs.data()[b].vectorize())?);
        }
        scores.push(per_day);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let p1 = paired_p(&scores[0], &scores[1]);
    let p2 = paired_p(&scores[1], &scores[2]);
    Ok((
        p1 < 0.05 && p2 < 0.05,
        format!(
            "mean DSS full {:.1} < temporal {:.1} (p {p1:.2e}) < bias {:.1} (p {p2:.2e})",
            mean(&scores[0]),
            mean(&scores[1]),
            mean(&scores[2])
        ),
    ))
}

fn c9(ran_others: bool) -> Outcome {
    let stats = factorization_stats();
    let jitter_ok = stats.max_relative_jitter <= 1e-6;

    let mut roundtrip = 0.0f64;
    for lambda in (0..=10).map(|i| i as f64 / 10.0) {
        for shift in [0.0, 0.5] {
            let spec = BoxCoxSpec::new(lambda, shift)?;
            for i in 0..200 {
                let y = 0.01 * 1.04f64.powi(i);
                roundtrip = roundtrip.max((inv_boxcox(boxcox(y, &spec)?, &spec) - y).abs());
            }
        }
    }

    let geom = geometry(2, 4, 6, 19)?;
    let mut grad_err = 0.0f64;
    for i in 0..10 {
        let th = random_theta(&geom, n_land_use(&geom), 3000 + i);
        let sim = simulate_panel(&th, &geom, 20, i, BoxCoxSpec::default())?;
        let data = LikelihoodData::new(&sim.obs, &sim.nwp)?;
        let layout = free_layout(&th, &geom);
        let central = loglik_gradient(&th, &geom, &data, &layout)?.values;
        let f = layout_objective(&th, &geom, &data, &layout);
        let x = layout.pack(&th);
        let mut fourth = Vec::with_capacity(x.len());
        for k in 0..x.len() {
            let step = fd_step(x[k]);
            let at = |m: f64| {
                let mut z = x.clone();
                z[k] += m * step;
                f(&z)
            };
            fourth.push((at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * step));
        }
        let diff = DVector::from_vec(central) - DVector::from_vec(fourth.clone());
        grad_err = grad_err.max(diff.norm() / DVector::from_vec(fourth).norm());
    }
    let scope = if ran_others { "" } else { " (criteria 1-8 not run)" };
    Ok((
        jitter_ok && roundtrip <= 1e-10 && grad_err <= 1e-4,
        format!(
            "max jitter {:.1e} of mean diagonal over {} factorizations{scope}, Box-Cox roundtrip {roundtrip:.1e}, gradient stencil gap {grad_err:.1e}",
            stats.max_relative_jitter, stats.factorizations
        ),
    ))
}

fn report(n: usize, started: Instant, outcome: Outcome) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("criterion {n}: {} [{secs:.1}s] {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|v| v.contains(&n));
    let mut all = true;
    let singles: [(usize, fn() -> Outcome); 4] = [(1, c1), (2, c2), (3, c3), (4, c4)];
    for (n, f) in singles {
        if wanted(n) {
            all &= report(n, Instant::now(), f());
        }
    }
    if wanted(5) || wanted(6) || wanted(8) {
        let t = Instant::now();
        let reps: Result<Vec<_>, _> = (1..=REPLICATIONS).map(replication).collect();
        match reps {
            Ok(reps) => {
                println!("({REPLICATIONS} pipeline replications in {:.1}s)", t.elapsed().as_secs_f64());
                let shared: [(usize, fn(&[PipelineResult]) -> Outcome); 3] = [(5, c5), (6, c6), (8, c8)];
                for (n, f) in shared {
                    if wanted(n) {
                        all &= report(n, Instant::now(), f(&reps));
                    }
                }
            }
            Err(e) => {
                for n in [5, 6, 8].into_iter().filter(|&n| wanted(n)) {
                    all &= report(n, t, Err(format!("replication failed: {e}").into()));
                }
            }
        }
    }
    if wanted(7) {
        all &= report(7, Instant::now(), c7());
    }
    if wanted(9) {
        all &= report(9, Instant::now(), c9(only.is_none()));
    }
    if !all {
        std::process::exit(1);
    }
}
