//! Forecast verification: point and ensemble scores, rank histograms,
//! periodograms and empirical space-time correlation.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};
use crate::linalg::CovarianceMatrix;

pub fn rmse(forecast: &[f64], obs: &[f64]) -> Result<f64> {
    if forecast.len() != obs.len() {
        return Err(Error::Shape(format!(
            "forecast length {} vs observation length {}",
            forecast.len(),
            obs.len()
        )));
    }
    if obs.is_empty() {
        return Err(Error::Empty("no forecast/observation pairs"));
    }
    let sse: f64 = forecast.iter().zip(obs).map(|(f, o)| (f - o).powi(2)).sum();
    Ok((sse / obs.len() as f64).sqrt())
}

/// Energy score of an `m × d` ensemble (members in rows).
pub fn energy_score(ensemble: &DMatrix<f64>, obs: &DVector<f64>) -> Result<f64> {
    let (m, d) = ensemble.shape();
    if m == 0 {
        return Err(Error::Empty("empty ensemble"));
    }
    if d != obs.len() {
        return Err(Error::Shape(format!("ensemble dimension {d} vs observation {}", obs.len())));
    }
    let dist = |a: usize, b: Option<usize>| -> f64 {
        (0..d)
            .map(|k| {
                let other = b.map_or(obs[k], |b| ensemble[(b, k)]);
                (ensemble[(a, k)] - other).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    };
    let to_obs: f64 = (0..m).map(|i| dist(i, None)).sum::<f64>() / m as f64;
    let mut pairs = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            pairs += dist(i, Some(j));
        }
    }
    // Each unordered pair appears twice in the double sum.
    Ok(to_obs - pairs / (m * m) as f64)
}

/// Dawid-Sebastiani score `log det Σ + (y − μ)ᵀ Σ⁻¹ (y − μ)`.
pub fn dss(mean: &DVector<f64>, cov: &CovarianceMatrix, obs: &DVector<f64>) -> Result<f64> {
    if mean.len() != cov.dim() || obs.len() != cov.dim() {
        return Err(Error::Shape("mean, covariance and observation sizes differ".into()));
    }
    Ok(cov.log_det()? + cov.mahalanobis(&(obs - mean))?)
}

/// Variogram score of order `p`; `weights` defaults to all ones.
pub fn variogram_score(
    ensemble: &DMatrix<f64>,
    obs: &DVector<f64>,
    p: f64,
    weights: Option<&DMatrix<f64>>,
) -> Result<f64> {
    let (m, d) = ensemble.shape();
    if m == 0 {
        return Err(Error::Empty("empty ensemble"));
    }
    if !(p > 0.0) {
        return Err(Error::InvalidInput(format!("variogram order must be positive, got {p}")));
    }
    if d != obs.len() {
        return Err(Error::Shape(format!("ensemble dimension {d} vs observation {}", obs.len())));
    }
    if let Some(w) = weights {
        if w.shape() != (d, d) {
            return Err(Error::Shape("weight matrix must be d × d".into()));
        }
    }
    let mut score = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            let w = weights.map_or(1.0, |w| w[(i, j)]);
            let vy = (obs[i] - obs[j]).abs().powf(p);
            let vx = (0..m)
                .map(|k| (ensemble[(k, i)] - ensemble[(k, j)]).abs().powf(p))
                .sum::<f64>()
                / m as f64;
            score += w * (vy - vx).powi(2);
        }
    }
    Ok(score)
}

/// Counts of observation ranks among ensemble members.
#[derive(Clone, Debug, PartialEq)]
pub struct RankHistogram {
    /// `counts[r]` = cases with 0-based rank `r` in `0..=m`.
    pub counts: Vec<usize>,
    /// Exact binomial 95% band per bin under uniform ranks.
    pub band: (u64, u64),
    pub chi_square: f64,
    pub p_value: f64,
}

impl RankHistogram {
    pub fn n_cases(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// 1-based rank of `obs` among `members ∪ {obs}`; ties broken uniformly at random.
pub fn rank_of(members: &[f64], obs: f64, rng: &mut impl Rng) -> usize {
    let below = members.iter().filter(|&&x| x < obs).count();
    let ties = members.iter().filter(|&&x| x == obs).count();
    below + 1 + if ties > 0 { rng.random_range(0..=ties) } else { 0 }
}

/// Rank histogram over cases `(members, obs)` with a common ensemble size.
pub fn rank_histogram(cases: &[(Vec<f64>, f64)], seed: u64) -> Result<RankHistogram> {
    let m = cases.first().ok_or(Error::Empty("no rank-histogram cases"))?.0.len();
    if m == 0 || cases.iter().any(|c| c.0.len() != m) {
        return Err(Error::InvalidInput("ensemble size must be fixed and positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; m + 1];
    for (members, obs) in cases {
        counts[rank_of(members, *obs, &mut rng) - 1] += 1;
    }
    let n = cases.len() as u64;
    let bins = (m + 1) as f64;
    let expected = n as f64 / bins;
    let chi_square: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p_value = ChiSquared::new(bins - 1.0)
        .map(|d| d.sf(chi_square))
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let binom = Binomial::new(1.0 / bins, n).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let band = (binom.inverse_cdf(0.025), binom.inverse_cdf(0.975));
    Ok(RankHistogram {
        counts,
        band,
        chi_square,
        p_value,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    None,
    Hann,
}

/// Periodogram at Fourier frequencies `ω_k = 2πk/N`, `k = 0..=N/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Periodogram {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub n: usize,
}

impl Periodogram {
    /// Bin of a period given in samples, if it is a Fourier frequency.
    pub fn bin_of_period(&self, period: f64) -> Option<usize> {
        let k = self.n as f64 / period;
        let r = k.round();
        ((k - r).abs() < 1e-9 && r as usize <= self.n / 2).then_some(r as usize)
    }
}

pub const MIN_PERIODOGRAM_LEN: usize = 8;

/// `|DFT|² / (2πN)` of the mean-removed (optionally tapered) series. A Hann
/// taper is rescaled to preserve total power.
pub fn periodogram(series: &[f64], window: Window) -> Result<Periodogram> {
    let n = series.len();
    if n < MIN_PERIODOGRAM_LEN {
        return Err(Error::InvalidInput(format!(
            "series of length {n} shorter than {MIN_PERIODOGRAM_LEN}"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let taper: Vec<f64> = match window {
        Window::None => vec![1.0; n],
        Window::Hann => (0..n)
            .map(|t| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * t as f64 / n as f64).cos())
            .collect(),
    };
    let norm = (taper.iter().map(|w| w * w).sum::<f64>() / n as f64).sqrt();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .zip(&taper)
        .map(|(x, w)| Complex::new((x - mean) * w / norm, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 2.0 * std::f64::consts::PI * n as f64;
    let half = n / 2;
    Ok(Periodogram {
        frequencies: (0..=half)
            .map(|k| 2.0 * std::f64::consts::PI * k as f64 / n as f64)
            .collect(),
        power: buf[..=half].iter().map(|c| c.norm_sqr() / scale).collect(),
        n,
    })
}

/// Bin-wise average of periodograms of equal-length series.
pub fn average_periodogram(series: &[Vec<f64>], window: Window) -> Result<Periodogram> {
    let first = series.first().ok_or(Error::Empty("no series to average"))?;
    let mut acc = periodogram(first, window)?;
    for s in &series[1..] {
        if s.len() != first.len() {
            return Err(Error::Shape("series lengths differ".into()));
        }
        let p = periodogram(s, window)?;
        for (a, b) in acc.power.iter_mut().zip(&p.power) {
            *a += b;
        }
    }
    let k = series.len() as f64;
    acc.power.iter_mut().for_each(|v| *v /= k);
    Ok(acc)
}

/// Sample correlation between coordinates of replicated vectors, given as
/// columns of `samples` (`dim × n`).
pub fn empirical_st_correlation(samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, n) = samples.shape();
    if n < 2 {
        return Err(Error::InvalidInput("at least two replicates required".into()));
    }
    let mean = samples.column_mean();
    let mut centered = samples.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let cov = &centered * centered.transpose() / (n as f64 - 1.0);
    let sd: Vec<f64> = cov.diagonal().iter().map(|v| v.sqrt()).collect();
    if let Some(k) = sd.iter().position(|s| *s == 0.0) {
        return Err(Error::Degenerate(format!("coordinate {k} has zero variance")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else {
            cov[(i, j)] / (sd[i] * sd[j])
        }
    }))
}

pub const RMSE: &str = "rmse";
pub const ENERGY: &str = "energy";
pub const ENERGY_SPACE_TIME: &str = "energy_space_time";
pub const DAWID_SEBASTIANI: &str = "dss";
pub const VARIOGRAM: &str = "variogram";

/// Per-day scores of one forecasting system.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreReport {
    pub label: String,
    /// Block index of each evaluated day.
    pub days: Vec<usize>,
    pub per_day: BTreeMap<String, Vec<f64>>,
}

impl ScoreReport {
    pub fn new(label: impl Into<String>) -> Self {
        ScoreReport {
            label: label.into(),
            ..Default::default()
        }
    }

    /// Record one day; every day must carry the same metrics.
    pub fn push_day(&mut self, day: usize, scores: &[(&str, f64)]) -> Result<()> {
        if !self.days.is_empty() {
            let same = scores.len() == self.per_day.len()
                && scores.iter().all(|(k, _)| self.per_day.contains_key(*k));
            if !same {
                return Err(Error::InvalidInput(format!("day {day} has a different metric set")));
            }
        }
        self.days.push(day);
        for (k, v) in scores {
            self.per_day.entry((*k).to_string()).or_default().push(*v);
        }
        Ok(())
    }

    /// Mean of per-day values for each metric.
    pub fn aggregates(&self) -> BTreeMap<String, f64> {
        self.per_day
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len().max(1) as f64))
            .collect()
    }

    pub fn aggregate(&self, metric: &str) -> Option<f64> {
        self.aggregates().get(metric).copied()
    }

    /// Concatenate the days of `other`, which must have the same metrics.
    pub fn extend(&mut self, other: &ScoreReport) -> Result<()> {
        for (i, &day) in other.days.iter().enumerate() {
            let row: Vec<(&str, f64)> = other.per_day.iter().map(|(k, v)| (k.as_str(), v[i])).collect();
            self.push_day(day, &row)?;
        }
        Ok(())
    }

    /// Long-format CSV `system,day,metric,value`, with aggregate rows using
    /// day `all`.
    pub fn write_csv<W: Write>(reports: &[&ScoreReport], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["system", "day", "metric", "value"])?;
        for r in reports {
            for (metric, vals) in &r.per_day {
                for (day, v) in r.days.iter().zip(vals) {
                    w.write_record([r.label.as_str(), &day.to_string(), metric, &v.to_string()])?;
                }
            }
            for (metric, v) in r.aggregates() {
                w.write_record([r.label.as_str(), "all", &metric, &v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, -4.0], &[0.0, 0.0]).unwrap() - (12.5f64).sqrt()).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn energy_examples() {
        let one = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert_eq!(energy_score(&one, &DVector::from_vec(vec![1.0, 2.0])).unwrap(), 0.0);
        let two = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        assert!((energy_score(&two, &DVector::from_vec(vec![1.0])).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dss_examples() {
        let c = CovarianceMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let z = DVector::zeros(2);
        assert!(dss(&z, &c, &z).unwrap().abs() < 1e-15);
        let s2 = 2.5;
        let c = CovarianceMatrix::new(DMatrix::from_element(1, 1, s2)).unwrap();
        let v = dss(&DVector::zeros(1), &c, &DVector::from_element(1, s2.sqrt())).unwrap();
        assert!((v - (s2.ln() + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn variogram_examples() {
        let obs = DVector::from_vec(vec![0.0, 1.0]);
        let ens = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 3.0]);
        assert!((variogram_score(&ens, &obs, 1.0, None).unwrap() - 1.0).abs() < 1e-15);
        let same = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(variogram_score(&same, &obs, 0.5, None).unwrap(), 0.0);
        assert!(variogram_score(&same, &obs, 0.0, None).is_err());
    }

    #[test]
    fn rank_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(rank_of(&[1.0, 2.0, 3.0], 0.5, &mut rng), 1);
        assert_eq!(rank_of(&[1.0, 2.0, 3.0], 9.0, &mut rng), 4);
        let h = rank_histogram(&[(vec![1.0, 2.0], 0.0)], 1).unwrap();
        assert_eq!(h.counts, vec![1, 0, 0]);
        assert!(rank_histogram(&[(vec![1.0], 0.0), (vec![1.0, 2.0], 0.0)], 1).is_err());
    }

    #[test]
    fn periodogram_peak_and_bins() {
        let n = 240;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 24.0).cos())
            .collect();
        let p = periodogram(&x, Window::None).unwrap();
        let k = p.bin_of_period(24.0).unwrap();
        assert_eq!(k, 10);
        let argmax = (0..p.power.len()).max_by(|&a, &b| p.power[a].total_cmp(&p.power[b])).unwrap();
        assert_eq!(argmax, k);
        assert!(periodogram(&x[..7], Window::None).is_err());
        assert_eq!(p.bin_of_period(7.0), None);
    }

    #[test]
    fn correlation_diagonal_is_one() {
        let s = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 5.0, 2.0, 1.0, 4.0, 3.0]);
        let c = empirical_st_correlation(&s).unwrap();
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(1, 1)], 1.0);
        let flat = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        assert!(empirical_st_correlation(&flat).is_err());
    }

    #[test]
    fn report_aggregates_are_means() {
        let mut r = ScoreReport::new("model");
        r.push_day(1, &[(RMSE, 1.0), (ENERGY, 2.0)]).unwrap();
        r.push_day(2, &[(RMSE, 3.0), (ENERGY, 4.0)]).unwrap();
        assert_eq!(r.aggregate(RMSE), Some(2.0));
        assert!(r.push_day(3, &[(RMSE, 1.0)]).is_err());
        let mut buf = Vec::new();
        ScoreReport::write_csv(&[&r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("model,all,rmse,2"));
    }
}
