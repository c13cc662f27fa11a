//! Least-squares initialization, maximum-likelihood fitting and
//! Hessian-based standard errors.
//!
//! The NWP marginal and the conditional law share no parameters, so the
//! log-likelihood separates and each factor is maximized on its own.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::likelihood::{layout_objective, total_loglik, LikelihoodData};
use crate::model::{build_lambda, cov_values, harmonics_cond, harmonics_nwp, Geometry};
use crate::optim::{diagonal_curvature, hessian, minimize, minimize_with_restarts, BfgsOptions, Convergence};
use crate::theta::{GammaField, GammaParams, Kind, Origin, Param, ParamLayout, Part, TemporalWeights, Theta, Variant};

/// Penalty used when a least-squares design is rank deficient.
pub const RIDGE: f64 = 1e-6;
/// Lower bound for positive covariance parameters after the moment fit,
/// relative to their natural scale.
pub const POSITIVITY_FLOOR: f64 = 1e-3;
/// Eigenvalues of the negative Hessian are floored at this fraction of the
/// largest one.
pub const EIGEN_FLOOR: f64 = 1e-8;

const RHO0_GRID: [f64; 7] = [0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 1.0];
const RHO1_GRID: [f64; 9] = [0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.5, 4.0];

/// Parameters the optimizer moves for this geometry and variant.
///
/// Fixed by convention: `β₀ = 1`, and `α₁ = 0` at the first NWP location of
/// each land use. Parameters with no data behind them (land uses without
/// NWP locations or without stations) and parameters the variant does not
/// use are fixed as well.
pub fn free_layout(theta: &Theta, geom: &Geometry) -> ParamLayout {
    let n_lu = theta.n_land_use();
    let mut nwp_lu = vec![false; n_lu];
    let mut anchor = vec![false; theta.n_nwp()];
    for (j, p) in geom.nwp_points().iter().enumerate() {
        if let Some(seen) = nwp_lu.get_mut(p.land_use as usize - 1) {
            if !*seen {
                anchor[j] = true;
            }
            *seen = true;
        }
    }
    let mut obs_lu = vec![false; n_lu];
    for s in geom.stations() {
        if let Some(seen) = obs_lu.get_mut(s.land_use as usize - 1) {
            *seen = true;
        }
    }
    let used = |p: Param| -> bool {
        match theta.variant {
            Variant::Full => true,
            Variant::TemporalOnly => match p {
                Param::Nu(..) | Param::Common(..) => false,
                Param::Phi(k, c) => k == 0 && c == 0,
                _ => true,
            },
            Variant::BiasOnly => match p {
                Param::Nu(..) | Param::Common(..) | Param::Rho0(_) | Param::Rho1(_) => false,
                Param::Local(_, _, f) => f == GammaField::Nugget,
                Param::Phi(k, c) => k == 0 && c == 0,
                _ => true,
            },
        }
    };
    let free = theta
        .params()
        .into_iter()
        .filter(|&p| match p {
            Param::Beta(0) => false,
            Param::AlphaSite(j) => !anchor[j],
            Param::AlphaLand(l) => nwp_lu[l],
            Param::Rho0(l) | Param::Rho1(l) => obs_lu[l],
            _ => true,
        })
        .filter(|&p| used(p))
        .collect();
    ParamLayout::new(free)
}

/// Least-squares solution of `x b ≈ y`. Rank-deficient designs fall back to
/// a ridge solution; the flag reports that.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if x.nrows() != y.len() || x.ncols() == 0 {
        return Err(Error::Shape(format!(
            "design {}x{} against {} responses",
            x.nrows(),
            x.ncols(),
            y.len()
        )));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if x.nrows() >= x.ncols() && smin > 1e-10 * smax {
        let b = svd
            .solve(y, 0.0)
            .map_err(|e| Error::Degenerate(format!("least squares: {e}")))?;
        return Ok((b, false));
    }
    let xtx = x.transpose() * x + DMatrix::identity(x.ncols(), x.ncols()) * RIDGE;
    let b = xtx
        .cholesky()
        .ok_or_else(|| Error::Degenerate("ridge system not positive definite".into()))?
        .solve(&(x.transpose() * y));
    Ok((b, true))
}

/// Starting values together with notes on how they were obtained.
#[derive(Clone, Debug)]
pub struct InitResult {
    pub theta: Theta,
    pub flags: Vec<String>,
}

/// Three-stage least-squares initialization: NWP mean, conditional mean,
/// then covariance parameters by weighted least squares on empirical
/// covariances.
pub fn init_least_squares(data: &LikelihoodData, geom: &Geometry, n_land_use: usize, variant: Variant) -> Result<InitResult> {
    if data.n_blocks() < 3 {
        return Err(Error::InvalidInput(format!(
            "initialization needs at least 3 complete blocks, got {}",
            data.n_blocks()
        )));
    }
    let origin = crate::geo::centroid(geom.stations());
    let mut theta = Theta::neutral(n_land_use, geom.n_nwp(), geom.n_obs(), origin);
    theta.variant = variant;
    let mut flags = Vec::new();
    init_nwp_mean(&mut theta, data, geom, &mut flags)?;
    init_cond_mean(&mut theta, data, geom, &mut flags)?;
    init_covariances(&mut theta, data, geom, &mut flags)?;
    Ok(InitResult { theta, flags })
}

fn block_mean(y: &DMatrix<f64>) -> DVector<f64> {
    y.column_mean()
}

/// Rank-one fit `m(t, j) ≈ f(t) a_j` with `f` in the harmonic span, by
/// alternating least squares.
fn init_nwp_mean(theta: &mut Theta, data: &LikelihoodData, geom: &Geometry, flags: &mut Vec<String>) -> Result<()> {
    let h = geom.hours();
    let nj = geom.n_nwp();
    let m = DMatrix::from_column_slice(h, nj, block_mean(data.nwp()).as_slice());
    let x = DMatrix::from_fn(h, 7, |t, i| harmonics_nwp(t as f64)[i]);
    let mut a = DVector::from_fn(nj, |j, _| m.column(j).mean());
    if a.norm() == 0.0 {
        a.fill(1.0);
    }
    let mut beta = DVector::zeros(7);
    let mut ridge = false;
    for _ in 0..200 {
        let target = &m * &a / a.norm_squared();
        let (b, r) = least_squares(&x, &target)?;
        ridge |= r;
        let f = &x * &b;
        let ff = f.norm_squared();
        if ff == 0.0 {
            return Err(Error::Degenerate("NWP mean profile is identically zero".into()));
        }
        let a_new = m.transpose() * &f / ff;
        let change = (&b - &beta).amax() + (&a_new - &a).amax();
        beta = b;
        a = a_new;
        if change < 1e-13 {
            break;
        }
    }
    if ridge {
        flags.push("nwp-mean: rank-deficient harmonic design, ridge fallback".into());
    }
    let c = beta[0];
    if c.abs() < 1e-12 {
        return Err(Error::Degenerate("NWP mean level is zero; cannot normalize".into()));
    }
    for i in 0..7 {
        theta.beta[i] = beta[i] / c;
    }
    let a = a * c;
    let n_lu = theta.n_land_use();
    let mut anchor: Vec<Option<f64>> = vec![None; n_lu];
    for (j, p) in geom.nwp_points().iter().enumerate() {
        let l = land_use_position(p.land_use, n_lu)?;
        anchor[l].get_or_insert(a[j]);
    }
    let overall = a.mean();
    for l in 0..n_lu {
        theta.alpha_land[l] = anchor[l].unwrap_or(overall);
    }
    for (j, p) in geom.nwp_points().iter().enumerate() {
        let l = land_use_position(p.land_use, n_lu)?;
        theta.alpha_site[j] = a[j] - theta.alpha_land[l];
    }
    Ok(())
}

fn land_use_position(land_use: u32, n_lu: usize) -> Result<usize> {
    let l = land_use as usize;
    if l == 0 || l > n_lu {
        return Err(Error::UnknownLandUse(land_use));
    }
    Ok(l - 1)
}

/// The `(k, c)` transition weights the variant uses.
fn phi_terms(variant: Variant) -> Vec<(usize, usize)> {
    match variant {
        Variant::Full => (0..3).flat_map(|k| (0..3).map(move |c| (k, c))).collect(),
        Variant::TemporalOnly | Variant::BiasOnly => vec![(0, 0)],
    }
}

/// Linear least squares of observations on harmonic terms and transition
/// regressors, with a grid search over a common `(ρ₀, ρ₁)`.
fn init_cond_mean(theta: &mut Theta, data: &LikelihoodData, geom: &Geometry, flags: &mut Vec<String>) -> Result<()> {
    let h = geom.hours();
    let k_blocks = data.n_blocks();
    let n_rows = geom.obs_dim() * k_blocks;
    let terms = phi_terms(theta.variant);
    let y = DVector::from_column_slice(data.obs().as_slice());
    let mut base_cols = DMatrix::zeros(n_rows, 15);
    for (j, s) in geom.stations().iter().enumerate() {
        let (lat, long) = (s.lat - theta.origin.lat, s.long - theta.origin.long);
        for t in 0..h {
            let x = harmonics_cond(t as f64);
            for b in 0..k_blocks {
                let r = b * geom.obs_dim() + j * h + t;
                for i in 0..5 {
                    base_cols[(r, i)] = x[i];
                    base_cols[(r, 5 + i)] = x[i] * lat;
                    base_cols[(r, 10 + i)] = x[i] * long;
                }
            }
        }
    }
    let grid: Vec<TemporalWeights> = if theta.variant == Variant::BiasOnly {
        vec![TemporalWeights { rho0: 1.0, rho1: 1.0 }]
    } else {
        RHO0_GRID
            .iter()
            .flat_map(|&rho0| RHO1_GRID.iter().map(move |&rho1| TemporalWeights { rho0, rho1 }))
            .collect()
    };
    let mut best: Option<(f64, TemporalWeights, DVector<f64>, bool)> = None;
    for w in grid {
        let mut design = DMatrix::zeros(n_rows, 15 + terms.len());
        design.columns_mut(0, 15).copy_from(&base_cols);
        for (c, &(k, comp)) in terms.iter().enumerate() {
            let mut unit = theta.clone();
            unit.variant = if theta.variant == Variant::BiasOnly {
                Variant::BiasOnly
            } else {
                Variant::Full
            };
            unit.rho.iter_mut().for_each(|r| *r = w);
            unit.phi = [[0.0; 3]; 3];
            unit.phi[k][comp] = 1.0;
            let reg = build_lambda(&unit, geom)?.matrix() * data.nwp();
            design.column_mut(15 + c).copy_from_slice(reg.as_slice());
        }
        let (coef, ridge) = least_squares(&design, &y)?;
        let rss = (&y - &design * &coef).norm_squared();
        if best.as_ref().is_none_or(|b| rss < b.0) {
            best = Some((rss, w, coef, ridge));
        }
    }
    let (_, w, coef, ridge) = best.ok_or(Error::Empty("temporal weight grid"))?;
    if ridge {
        flags.push("cond-mean: rank-deficient design, ridge fallback".into());
    }
    let b0 = coef.rows(0, 5).into_owned();
    let b1 = coef.rows(5, 5);
    let b2 = coef.rows(10, 5);
    let nb = b0.norm_squared();
    for i in 0..5 {
        theta.beta_cond[i] = b0[i];
    }
    (theta.alpha_lat, theta.alpha_long) = if nb > 0.0 {
        (b0.dot(&b1) / nb, b0.dot(&b2) / nb)
    } else {
        (0.0, 0.0)
    };
    if theta.variant != Variant::BiasOnly {
        theta.rho.iter_mut().for_each(|r| *r = w);
    }
    theta.phi = [[0.0; 3]; 3];
    for (c, &(k, comp)) in terms.iter().enumerate() {
        theta.phi[k][comp] = coef[15 + c];
    }
    Ok(())
}

fn empirical_cov(resid: &DMatrix<f64>) -> DMatrix<f64> {
    resid * resid.transpose() / resid.ncols() as f64
}

/// Covariance parameters of one part that the moment fit adjusts. The band
/// slopes `ν` stay at zero: against empirical moments they trade off with
/// the common scale and drift without bound.
fn cov_layout(theta: &Theta, geom: &Geometry, part: Part) -> ParamLayout {
    let all = free_layout(theta, geom);
    ParamLayout::new(
        all.params()
            .iter()
            .copied()
            .filter(|p| p.part() == part && matches!(p, Param::Common(..) | Param::Local(..)))
            .collect(),
    )
}

fn init_covariances(theta: &mut Theta, data: &LikelihoodData, geom: &Geometry, flags: &mut Vec<String>) -> Result<()> {
    let mu = crate::model::mean_nwp_vector(theta, geom)?;
    let mut r_nwp = data.nwp().clone();
    for mut c in r_nwp.column_iter_mut() {
        c -= &mu;
    }
    let base = crate::model::mean_cond_base(theta, geom);
    let mut r_obs = data.obs() - build_lambda(theta, geom)?.matrix() * data.nwp();
    for mut c in r_obs.column_iter_mut() {
        c -= &base;
    }
    for (part, resid) in [(Part::Marginal, r_nwp), (Part::Conditional, r_obs)] {
        let s = empirical_cov(&resid);
        fit_cov_part(theta, geom, part, &s, flags)?;
    }
    Ok(())
}

fn sites(theta: &Theta, geom: &Geometry, part: Part) -> Vec<(f64, f64)> {
    let pts = match part {
        Part::Marginal => geom.nwp_points(),
        Part::Conditional => geom.stations(),
    };
    pts.iter()
        .map(|p| (p.lat - theta.origin.lat, p.long - theta.origin.long))
        .collect()
}

fn cov_of(theta: &mut Theta, part: Part) -> &mut crate::theta::CovParams {
    match part {
        Part::Marginal => &mut theta.nwp_cov,
        Part::Conditional => &mut theta.cond_cov,
    }
}

/// Weighted least squares between empirical and parametric covariance
/// entries, weights `1 / (S_ii S_jj)`.
fn fit_cov_part(theta: &mut Theta, geom: &Geometry, part: Part, s: &DMatrix<f64>, flags: &mut Vec<String>) -> Result<()> {
    let h = geom.hours();
    let coords = sites(theta, geom, part);
    let n = coords.len();
    let diag: Vec<f64> = (0..s.nrows()).map(|i| s[(i, i)].max(1e-12)).collect();
    let local_var: Vec<f64> = (0..n)
        .map(|j| (0..h).map(|t| diag[j * h + t]).fold(f64::INFINITY, f64::min))
        .collect();
    let variant = theta.variant;

    if variant == Variant::BiasOnly {
        let cov = cov_of(theta, part);
        for (j, g) in cov.local.iter_mut().enumerate() {
            g.nugget = (0..h).map(|t| diag[j * h + t]).sum::<f64>() / h as f64;
        }
        return Ok(());
    }

    // Latent variance at 1-based hour i grows like (3 (1 + i + i²))² when
    // the band coefficients are one.
    let q = |t: usize| {
        let i = (t + 1) as f64;
        9.0 * (1.0 + i + i * i).powi(2)
    };
    let mut ratios: Vec<f64> = (0..n)
        .flat_map(|j| (0..h).map(move |t| (j, t)))
        .map(|(j, t)| diag[j * h + t] / q(t))
        .collect();
    ratios.sort_by(f64::total_cmp);
    let common_scale = ratios[ratios.len() / 2];
    {
        let cov = cov_of(theta, part);
        cov.nu = [0.0; 18];
        cov.common = GammaParams::new(0.5 * common_scale, 0.05, 0.05 * common_scale);
        for (j, g) in cov.local.iter_mut().enumerate() {
            *g = GammaParams::new(0.5 * local_var[j], 0.1, 0.2 * local_var[j]);
        }
    }
    let layout = cov_layout(theta, geom, part);
    if layout.is_empty() {
        return Ok(());
    }
    let base = theta.clone();
    let dim = s.nrows();
    let objective = |x: &[f64]| -> f64 {
        let th = layout.unpack(&base, x);
        let cov = match part {
            Part::Marginal => &th.nwp_cov,
            Part::Conditional => &th.cond_cov,
        };
        let Ok(sigma) = cov_values(cov, &coords, h, variant) else {
            return f64::NAN;
        };
        let mut total = 0.0;
        for c in 0..dim {
            for r in c..dim {
                let d = s[(r, c)] - sigma[(r, c)];
                let w = if r == c { 1.0 } else { 2.0 };
                total += w * d * d / (diag[r] * diag[c]);
            }
        }
        total
    };
    let opts = BfgsOptions {
        max_iter: 300,
        grad_tol: 1e-6,
        ..Default::default()
    };
    let res = minimize(&objective, &layout.pack(theta), &opts)?;
    if res.status != Convergence::Converged {
        flags.push(format!(
            "{}: covariance moment fit stopped with {}",
            part_label(part),
            res.status.as_str()
        ));
    }
    layout.unpack_into(theta, &res.x);
    // Project onto the positive orthant with a floor relative to each
    // parameter's natural scale.
    let mut floored = false;
    let cov = cov_of(theta, part);
    floored |= floor(&mut cov.common.sigma, POSITIVITY_FLOOR * common_scale);
    floored |= floor(&mut cov.common.nugget, POSITIVITY_FLOOR * common_scale);
    floored |= floor(&mut cov.common.decay, POSITIVITY_FLOOR);
    for (j, g) in cov.local.iter_mut().enumerate() {
        floored |= floor(&mut g.sigma, POSITIVITY_FLOOR * local_var[j]);
        floored |= floor(&mut g.nugget, POSITIVITY_FLOOR * local_var[j]);
        floored |= floor(&mut g.decay, POSITIVITY_FLOOR);
    }
    if floored {
        flags.push(format!("{}: positivity floor applied", part_label(part)));
    }
    Ok(())
}

fn floor(v: &mut f64, lower: f64) -> bool {
    if !(*v >= lower) {
        *v = lower;
        true
    } else {
        false
    }
}

fn part_label(part: Part) -> &'static str {
    match part {
        Part::Marginal => "nwp",
        Part::Conditional => "cond",
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub bfgs: BfgsOptions,
    /// Difference step of the Hessian, in curvature-scaled coordinates.
    pub hessian_step: f64,
    pub standard_errors: bool,
    /// Rescaled optimizer restarts after the first run.
    pub restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            bfgs: BfgsOptions::default(),
            hessian_step: 2e-2,
            standard_errors: true,
            restarts: 4,
        }
    }
}

/// Log-likelihood after an accepted optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub part: Part,
    pub iteration: usize,
    pub loglik: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub theta: Theta,
    pub loglik: f64,
    /// Keyed by parameter name; free parameters only.
    pub std_errors: BTreeMap<String, f64>,
    /// Largest ratio of negative-Hessian eigenvalues over the fitted parts.
    pub hessian_condition: f64,
    /// The least favourable status over the fitted parts.
    pub convergence: Convergence,
    pub iterations: usize,
    pub trace: Vec<TracePoint>,
    pub flags: Vec<String>,
    pub layout: ParamLayout,
}

/// Maximum-likelihood fit from `theta0` over the default free parameters.
pub fn fit_mle(data: &LikelihoodData, geom: &Geometry, theta0: &Theta, opts: &FitOptions) -> Result<FitResult> {
    fit_mle_with_layout(data, geom, theta0, &free_layout(theta0, geom), opts)
}

fn severity(c: Convergence) -> u8 {
    match c {
        Convergence::Converged => 0,
        Convergence::MaxIter => 1,
        Convergence::LineSearchFail => 2,
    }
}

/// Maximum-likelihood fit over the parameters in `layout`.
pub fn fit_mle_with_layout(
    data: &LikelihoodData,
    geom: &Geometry,
    theta0: &Theta,
    layout: &ParamLayout,
    opts: &FitOptions,
) -> Result<FitResult> {
    theta0.validate()?;
    let start = total_loglik(theta0, geom, data)?;
    if !start.is_finite() {
        return Err(Error::Degenerate("log-likelihood not finite at the start point".into()));
    }
    let mut theta = theta0.clone();
    let mut std_errors = BTreeMap::new();
    let mut trace = Vec::new();
    let mut flags = Vec::new();
    let mut convergence = Convergence::Converged;
    let mut iterations = 0;
    let mut condition: f64 = 1.0;
    for part in [Part::Marginal, Part::Conditional] {
        let sub = layout.part(part);
        if sub.is_empty() {
            continue;
        }
        let base = theta.clone();
        let ll = layout_objective(&base, geom, data, &sub);
        let neg = |x: &[f64]| -ll(x);
        let res = minimize_with_restarts(&neg, &sub.pack(&base), &opts.bfgs, opts.restarts)?;
        log::info!(
            "{} part: {} after {} iterations, loglik {:.4}",
            part_label(part),
            res.status.as_str(),
            res.iterations,
            -res.value
        );
        trace.extend(res.trace.iter().enumerate().map(|(i, v)| TracePoint {
            part,
            iteration: i,
            loglik: -v,
        }));
        if res.one_sided {
            flags.push(format!("{}: one-sided differences used", part_label(part)));
        }
        if res.status != Convergence::Converged {
            flags.push(format!("{}: {}", part_label(part), res.status.as_str()));
        }
        if severity(res.status) > severity(convergence) {
            convergence = res.status;
        }
        iterations += res.iterations;
        sub.unpack_into(&mut theta, &res.x);
        if opts.standard_errors {
            let se = match hessian_standard_errors(&neg, &res.x, opts.hessian_step) {
                Ok(se) => se,
                Err(e) => {
                    flags.push(format!("{}: no standard errors ({e})", part_label(part)));
                    continue;
                }
            };
            if se.floored {
                flags.push(format!("{}: negative Hessian projected to positive definite", part_label(part)));
            }
            condition = condition.max(se.condition);
            let jac = sub.jacobian_diag(&theta);
            for ((name, s), d) in sub.names().into_iter().zip(se.se).zip(jac) {
                std_errors.insert(name, s * d.abs());
            }
        }
    }
    let loglik = total_loglik(&theta, geom, data)?;
    Ok(FitResult {
        theta,
        loglik,
        std_errors,
        hessian_condition: condition,
        convergence,
        iterations,
        trace,
        flags,
        layout: layout.clone(),
    })
}

/// Standard errors in the coordinates of `x_hat`.
#[derive(Clone, Debug)]
pub struct HessianSe {
    pub se: Vec<f64>,
    /// Ratio of the largest to the smallest eigenvalue used.
    pub condition: f64,
    /// True when eigenvalues had to be floored.
    pub floored: bool,
}

/// Square roots of the diagonal of the inverse Hessian of `neg_loglik` at
/// its minimizer `x_hat`. The Hessian is taken by differences in
/// curvature-scaled coordinates; non-positive-definite Hessians are
/// projected by flooring eigenvalues.
pub fn hessian_standard_errors<F>(neg_loglik: &F, x_hat: &[f64], step: f64) -> Result<HessianSe>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x_hat.len();
    let scales: Vec<f64> = diagonal_curvature(neg_loglik, x_hat, 1e-12)
        .iter()
        .map(|c| c.sqrt())
        .collect();
    let fu = |u: &[f64]| {
        let x: Vec<f64> = u.iter().zip(&scales).map(|(u, s)| u / s).collect();
        neg_loglik(&x)
    };
    let u_hat: Vec<f64> = x_hat.iter().zip(&scales).map(|(x, s)| x * s).collect();
    let hu = hessian(&fu, &u_hat, &vec![step; n])?;
    let eig = SymmetricEigen::new(hu);
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        return Err(Error::Degenerate("negative Hessian has no positive curvature".into()));
    }
    let lower = EIGEN_FLOOR * max;
    let floored = eig.eigenvalues.iter().any(|&v| v < lower);
    let vals = eig.eigenvalues.map(|v| v.max(lower));
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&vals.map(|v| 1.0 / v)) * eig.eigenvectors.transpose();
    let se = (0..n).map(|k| inv[(k, k)].sqrt() / scales[k]).collect();
    Ok(HessianSe {
        se,
        condition: max / vals.min(),
        floored,
    })
}

/// Coordinate origin used for a geometry: the station centroid.
pub fn default_origin(geom: &Geometry) -> Origin {
    crate::geo::centroid(geom.stations())
}

/// True when every positive parameter of `layout` is strictly positive in
/// `theta`.
pub fn feasible(theta: &Theta, layout: &ParamLayout) -> bool {
    layout
        .params()
        .iter()
        .all(|&p| p.kind() == Kind::Real || theta.get(p) > 0.0)
}
