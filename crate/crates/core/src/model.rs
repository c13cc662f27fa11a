//! Parametric mean and covariance builders of the hierarchical model.
//!
//! Vectors and matrices follow the crate-wide vectorization (station-major,
//! hour fastest). Coordinates enter the mean and band formulas after the
//! origin stored in [`Theta`] is subtracted; neighbor weights use absolute
//! coordinate differences, which centering does not change.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geo::nearest_indices;
use crate::linalg::CovarianceMatrix;
use crate::panel::StationMeta;
use crate::theta::{CovParams, GammaParams, Part, Theta, Variant};

/// Number of NWP neighbors feeding each station in the transition.
pub const N_NEIGHBORS: usize = 3;

/// Observation stations, NWP locations and the neighbor map between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    hours: usize,
    stations: Vec<StationMeta>,
    nwp_points: Vec<StationMeta>,
    neighbors: Vec<[usize; N_NEIGHBORS]>,
}

impl Geometry {
    /// Neighbors are the three NWP locations nearest to each station by
    /// great-circle distance.
    pub fn new(hours: usize, stations: Vec<StationMeta>, nwp_points: Vec<StationMeta>) -> Result<Self> {
        let pts: Vec<(f64, f64)> = nwp_points.iter().map(|p| (p.lat, p.long)).collect();
        let neighbors = stations
            .iter()
            .map(|s| {
                let idx = nearest_indices(s.lat, s.long, &pts, N_NEIGHBORS)?;
                Ok([idx[0], idx[1], idx[2]])
            })
            .collect::<Result<Vec<_>>>()?;
        Geometry::with_neighbors(hours, stations, nwp_points, neighbors)
    }

    pub fn with_neighbors(
        hours: usize,
        stations: Vec<StationMeta>,
        nwp_points: Vec<StationMeta>,
        neighbors: Vec<[usize; N_NEIGHBORS]>,
    ) -> Result<Self> {
        if hours == 0 {
            return Err(Error::Shape("geometry needs at least one hour".into()));
        }
        if stations.is_empty() || nwp_points.is_empty() {
            return Err(Error::Empty("geometry without stations or NWP locations"));
        }
        if neighbors.len() != stations.len() {
            return Err(Error::Shape("one neighbor triple per station required".into()));
        }
        if neighbors.iter().flatten().any(|&k| k >= nwp_points.len()) {
            return Err(Error::InvalidInput("neighbor index out of range".into()));
        }
        Ok(Geometry {
            hours,
            stations,
            nwp_points,
            neighbors,
        })
    }

    pub fn hours(&self) -> usize {
        self.hours
    }

    pub fn stations(&self) -> &[StationMeta] {
        &self.stations
    }

    pub fn nwp_points(&self) -> &[StationMeta] {
        &self.nwp_points
    }

    pub fn neighbors(&self) -> &[[usize; N_NEIGHBORS]] {
        &self.neighbors
    }

    pub fn n_obs(&self) -> usize {
        self.stations.len()
    }

    pub fn n_nwp(&self) -> usize {
        self.nwp_points.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.hours * self.n_obs()
    }

    pub fn nwp_dim(&self) -> usize {
        self.hours * self.n_nwp()
    }

    /// Replace station land uses outside `1..=n_land_use` by the land use of
    /// their nearest NWP neighbor. Returns the ids of affected stations.
    pub fn reconcile_land_use(&mut self, n_land_use: usize) -> Vec<String> {
        let mut changed = Vec::new();
        for (s, nb) in self.stations.iter_mut().zip(&self.neighbors) {
            if s.land_use as usize > n_land_use {
                let lu = self.nwp_points[nb[0]].land_use;
                log::warn!(
                    "station {} has unseen land use {}; using {} from its nearest grid point",
                    s.id,
                    s.land_use,
                    lu
                );
                s.land_use = lu;
                changed.push(s.id.clone());
            }
        }
        changed
    }

    /// Same geometry restricted to the stations at `positions`.
    pub fn select_stations(&self, positions: &[usize]) -> Result<Geometry> {
        let mut stations = Vec::with_capacity(positions.len());
        let mut neighbors = Vec::with_capacity(positions.len());
        for &p in positions {
            let s = self
                .stations
                .get(p)
                .ok_or_else(|| Error::InvalidInput(format!("station position {p} out of range")))?;
            stations.push(s.clone());
            neighbors.push(self.neighbors[p]);
        }
        Geometry::with_neighbors(self.hours, stations, self.nwp_points.clone(), neighbors)
    }
}

fn land_use_index(theta: &Theta, land_use: u32) -> Result<usize> {
    let l = land_use as usize;
    if l == 0 || l > theta.n_land_use() {
        return Err(Error::UnknownLandUse(land_use));
    }
    Ok(l - 1)
}

fn centered(theta: &Theta, s: &StationMeta) -> (f64, f64) {
    (s.lat - theta.origin.lat, s.long - theta.origin.long)
}

/// `(1, cos, sin)` pairs at periods 24, 12 and 8 hours.
pub fn harmonics_nwp(t: f64) -> [f64; 7] {
    let w = 2.0 * PI * t;
    [
        1.0,
        (w / 24.0).cos(),
        (w / 24.0).sin(),
        (w / 12.0).cos(),
        (w / 12.0).sin(),
        (w / 8.0).cos(),
        (w / 8.0).sin(),
    ]
}

/// `(1, cos, sin)` pairs at periods 24 and 12 hours.
pub fn harmonics_cond(t: f64) -> [f64; 5] {
    let h = harmonics_nwp(t);
    [h[0], h[1], h[2], h[3], h[4]]
}

/// Marginal NWP mean at hour `t` of NWP location `j`.
pub fn mean_nwp(theta: &Theta, t: usize, j: usize, point: &StationMeta) -> Result<f64> {
    let l = land_use_index(theta, point.land_use)?;
    let site = *theta
        .alpha_site
        .get(j)
        .ok_or_else(|| Error::InvalidInput(format!("no site parameter for NWP location {}", j + 1)))?;
    let harmonic: f64 = harmonics_nwp(t as f64)
        .iter()
        .zip(&theta.beta)
        .map(|(x, b)| x * b)
        .sum();
    Ok(harmonic * (theta.alpha_land[l] + site))
}

/// `μ_NWP` over all NWP locations.
pub fn mean_nwp_vector(theta: &Theta, geom: &Geometry) -> Result<DVector<f64>> {
    let h = geom.hours();
    let mut out = DVector::zeros(geom.nwp_dim());
    for (j, p) in geom.nwp_points().iter().enumerate() {
        for t in 0..h {
            out[j * h + t] = mean_nwp(theta, t, j, p)?;
        }
    }
    Ok(out)
}

/// Entries `σ exp(−decay (k−l)²) + nugget·1{k=l}`.
pub fn gamma_values(g: &GammaParams, h: usize) -> DMatrix<f64> {
    DMatrix::from_fn(h, h, |l, k| {
        let lag = k as f64 - l as f64;
        g.sigma * (-g.decay * lag * lag).exp() + if k == l { g.nugget } else { 0.0 }
    })
}

pub fn gamma_matrix(sigma: f64, decay: f64, nugget: f64, h: usize) -> Result<CovarianceMatrix> {
    if !(sigma > 0.0 && decay > 0.0 && nugget > 0.0) {
        return Err(Error::InvalidInput(format!(
            "kernel parameters must be positive (sigma={sigma}, decay={decay}, nugget={nugget})"
        )));
    }
    CovarianceMatrix::new(gamma_values(&GammaParams::new(sigma, decay, nugget), h))
}

/// Tridiagonal `A` at centered coordinates; row `i` (1-based) has bands
/// `c₀ + c₁ i + c₂ i²` with each `c = 1 + ν·Lat + ν'·Long`.
pub fn build_a(nu: &[f64; 18], lat: f64, long: f64, h: usize) -> DMatrix<f64> {
    let coef = |k: usize| 1.0 + nu[k] * lat + nu[k + 1] * long;
    let band = |first: usize, i: f64| coef(first) + coef(first + 2) * i + coef(first + 4) * i * i;
    let mut a = DMatrix::zeros(h, h);
    for r in 0..h {
        let i = (r + 1) as f64;
        a[(r, r)] = band(0, i);
        if r > 0 {
            a[(r, r - 1)] = band(6, i);
        }
        if r + 1 < h {
            a[(r, r + 1)] = band(12, i);
        }
    }
    a
}

/// Dense covariance for sites at the given centered coordinates.
pub fn cov_values(cov: &CovParams, sites: &[(f64, f64)], h: usize, variant: Variant) -> Result<DMatrix<f64>> {
    let n = sites.len();
    if cov.local.len() < n {
        return Err(Error::Shape(format!(
            "{} local kernels for {n} locations",
            cov.local.len()
        )));
    }
    let mut out = DMatrix::zeros(h * n, h * n);
    match variant {
        Variant::Full => {
            let g0 = gamma_values(&cov.common, h);
            let a: Vec<DMatrix<f64>> = sites.iter().map(|&(la, lo)| build_a(&cov.nu, la, lo, h)).collect();
            let ag: Vec<DMatrix<f64>> = a.iter().map(|ai| ai * &g0).collect();
            for i in 0..n {
                for j in 0..=i {
                    let block = &ag[i] * a[j].transpose();
                    out.view_mut((i * h, j * h), (h, h)).copy_from(&block);
                    if i != j {
                        out.view_mut((j * h, i * h), (h, h)).copy_from(&block.transpose());
                    }
                }
            }
            for (j, g) in cov.local.iter().take(n).enumerate() {
                let mut v = out.view_mut((j * h, j * h), (h, h));
                v += gamma_values(g, h);
            }
            // The products above are symmetric only up to rounding.
            let sym = (&out + out.transpose()) * 0.5;
            out = sym;
        }
        Variant::TemporalOnly => {
            for (j, g) in cov.local.iter().take(n).enumerate() {
                out.view_mut((j * h, j * h), (h, h)).copy_from(&gamma_values(g, h));
            }
        }
        Variant::BiasOnly => {
            for (j, g) in cov.local.iter().take(n).enumerate() {
                for t in 0..h {
                    out[(j * h + t, j * h + t)] = g.nugget;
                }
            }
        }
    }
    Ok(out)
}

/// Selects which covariance parameter block to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    /// `Σ_NWP` over NWP locations.
    Nwp,
    /// `Σ_Obs|NWP` over observation stations.
    Cond,
}

pub fn cov_marginal_values(theta: &Theta, geom: &Geometry, which: Which) -> Result<DMatrix<f64>> {
    let (params, sites) = match which {
        Which::Nwp => (&theta.nwp_cov, geom.nwp_points()),
        Which::Cond => (&theta.cond_cov, geom.stations()),
    };
    let coords: Vec<(f64, f64)> = sites.iter().map(|s| centered(theta, s)).collect();
    cov_values(params, &coords, geom.hours(), theta.variant)
}

pub fn cov_marginal(theta: &Theta, geom: &Geometry, which: Which) -> Result<CovarianceMatrix> {
    CovarianceMatrix::new(cov_marginal_values(theta, geom, which)?)
}

/// `ρ⁽ˡ⁾(Δt) = ρ₀ exp(−ρ₁ Δt) + (1 − ρ₀)`; the bias-only reduction keeps lag 0 alone.
pub fn temporal_weight(theta: &Theta, land_use: u32, dt: usize) -> Result<f64> {
    let l = land_use_index(theta, land_use)?;
    if theta.variant == Variant::BiasOnly {
        return Ok(if dt == 0 { 1.0 } else { 0.0 });
    }
    let w = theta.rho[l];
    Ok(w.rho0 * (-w.rho1 * dt as f64).exp() + w.rho2())
}

/// Spatial weight `φ₀ + φ₁ ΔLat + φ₂ ΔLong` of neighbor rank `k`.
pub fn spatial_weight(theta: &Theta, k: usize, s: &StationMeta, nb: &StationMeta) -> f64 {
    let phi = theta.phi[k];
    match theta.variant {
        Variant::Full => phi[0] + phi[1] * (s.lat - nb.lat).abs() + phi[2] * (s.long - nb.long).abs(),
        Variant::TemporalOnly | Variant::BiasOnly => {
            if k == 0 {
                phi[0]
            } else {
                0.0
            }
        }
    }
}

/// The transition `Λ` mapping an NWP block to the conditional observation mean.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionOperator {
    matrix: DMatrix<f64>,
}

impl TransitionOperator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, y_nwp: &DVector<f64>) -> Result<DVector<f64>> {
        if y_nwp.len() != self.matrix.ncols() {
            return Err(Error::Shape(format!(
                "NWP vector of length {}, transition expects {}",
                y_nwp.len(),
                self.matrix.ncols()
            )));
        }
        Ok(&self.matrix * y_nwp)
    }

    pub fn row_nonzeros(&self, row: usize) -> usize {
        self.matrix.row(row).iter().filter(|v| **v != 0.0).count()
    }
}

pub fn build_lambda(theta: &Theta, geom: &Geometry) -> Result<TransitionOperator> {
    let h = geom.hours();
    let mut m = DMatrix::zeros(geom.obs_dim(), geom.nwp_dim());
    for (j, (s, nb)) in geom.stations().iter().zip(geom.neighbors()).enumerate() {
        let rho: Vec<f64> = (0..h)
            .map(|dt| temporal_weight(theta, s.land_use, dt))
            .collect::<Result<_>>()?;
        for (k, &p) in nb.iter().enumerate() {
            let phi = spatial_weight(theta, k, s, &geom.nwp_points()[p]);
            if phi == 0.0 {
                continue;
            }
            for t in 0..h {
                for ti in 0..h {
                    // Neighbors may repeat when the grid is degenerate; accumulate.
                    m[(j * h + t, p * h + ti)] += rho[t.abs_diff(ti)] * phi;
                }
            }
        }
    }
    Ok(TransitionOperator { matrix: m })
}

/// Harmonic part `μ(t, s)` of the conditional mean over all stations.
pub fn mean_cond_base(theta: &Theta, geom: &Geometry) -> DVector<f64> {
    let h = geom.hours();
    let mut out = DVector::zeros(geom.obs_dim());
    for (j, s) in geom.stations().iter().enumerate() {
        let (lat, long) = centered(theta, s);
        let spatial = 1.0 + theta.alpha_lat * lat + theta.alpha_long * long;
        for t in 0..h {
            let harmonic: f64 = harmonics_cond(t as f64)
                .iter()
                .zip(&theta.beta_cond)
                .map(|(x, b)| x * b)
                .sum();
            out[j * h + t] = harmonic * spatial;
        }
    }
    out
}

/// `μ(t, s) + (Λ y_NWP)(t, s)` for hour `t` of station position `s`.
pub fn mean_cond(
    theta: &Theta,
    geom: &Geometry,
    t: usize,
    s: usize,
    lambda: &TransitionOperator,
    y_nwp: &DVector<f64>,
) -> Result<f64> {
    let h = geom.hours();
    if t >= h || s >= geom.n_obs() {
        return Err(Error::InvalidInput(format!("target ({t}, {s}) outside the geometry")));
    }
    if y_nwp.len() != lambda.matrix.ncols() {
        return Err(Error::Shape("NWP block does not match the transition".into()));
    }
    let row = s * h + t;
    let base = mean_cond_base(theta, geom)[row];
    Ok(base + lambda.matrix.row(row).dot(&y_nwp.transpose()))
}

/// Moments of the NWP marginal.
#[derive(Clone, Debug)]
pub struct MarginalModel {
    pub mean: DVector<f64>,
    pub cov: CovarianceMatrix,
}

impl MarginalModel {
    pub fn new(theta: &Theta, geom: &Geometry) -> Result<Self> {
        Ok(MarginalModel {
            mean: mean_nwp_vector(theta, geom)?,
            cov: cov_marginal(theta, geom, Which::Nwp)?,
        })
    }
}

/// Moments of observations given NWP: `N(base + Λ y, cov)`.
#[derive(Clone, Debug)]
pub struct ConditionalModel {
    pub base: DVector<f64>,
    pub lambda: TransitionOperator,
    pub cov: CovarianceMatrix,
}

impl ConditionalModel {
    pub fn new(theta: &Theta, geom: &Geometry) -> Result<Self> {
        Ok(ConditionalModel {
            base: mean_cond_base(theta, geom),
            lambda: build_lambda(theta, geom)?,
            cov: cov_marginal(theta, geom, Which::Cond)?,
        })
    }

    pub fn mean_given(&self, y_nwp: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.base + self.lambda.apply(y_nwp)?)
    }
}

/// Joint Gaussian of `(Y_Obs, Y_NWP)`, observations first.
#[derive(Clone, Debug)]
pub struct JointMoments {
    pub mean: DVector<f64>,
    pub cov: CovarianceMatrix,
    pub obs_dim: usize,
}

/// Raw joint moments without factorization.
pub fn joint_values(theta: &Theta, geom: &Geometry) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mu_nwp = mean_nwp_vector(theta, geom)?;
    let lambda = build_lambda(theta, geom)?;
    let lm = lambda.matrix();
    let s_nwp = cov_marginal_values(theta, geom, Which::Nwp)?;
    let s_cond = cov_marginal_values(theta, geom, Which::Cond)?;
    let (no, nn) = (geom.obs_dim(), geom.nwp_dim());
    let cross = lm * &s_nwp;
    let mut top = s_cond + &cross * lm.transpose();
    top = (&top + top.transpose()) * 0.5;
    let mut cov = DMatrix::zeros(no + nn, no + nn);
    cov.view_mut((0, 0), (no, no)).copy_from(&top);
    cov.view_mut((0, no), (no, nn)).copy_from(&cross);
    cov.view_mut((no, 0), (nn, no)).copy_from(&cross.transpose());
    cov.view_mut((no, no), (nn, nn)).copy_from(&s_nwp);
    let mut mean = DVector::zeros(no + nn);
    mean.rows_mut(0, no)
        .copy_from(&(mean_cond_base(theta, geom) + lambda.apply(&mu_nwp)?));
    mean.rows_mut(no, nn).copy_from(&mu_nwp);
    Ok((mean, cov))
}

pub fn assemble_joint(theta: &Theta, geom: &Geometry) -> Result<JointMoments> {
    let (mean, cov) = joint_values(theta, geom)?;
    Ok(JointMoments {
        mean,
        cov: CovarianceMatrix::new(cov)?,
        obs_dim: geom.obs_dim(),
    })
}

/// Location counts each covariance part expects.
pub fn part_locations(geom: &Geometry, part: Part) -> usize {
    match part {
        Part::Marginal => geom.n_nwp(),
        Part::Conditional => geom.n_obs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theta::{Origin, TemporalWeights};

    fn station(id: &str, lat: f64, long: f64, lu: u32) -> StationMeta {
        StationMeta::new(id, lat, long, lu).unwrap()
    }

    fn small_geometry(h: usize) -> Geometry {
        let stations = vec![station("a", 42.1, -88.2, 1), station("b", 41.7, -87.6, 2)];
        let grid = vec![
            station("g1", 42.0, -88.0, 1),
            station("g2", 41.5, -87.5, 2),
            station("g3", 42.5, -87.5, 1),
        ];
        Geometry::new(h, stations, grid).unwrap()
    }

    fn theta_for(geom: &Geometry) -> Theta {
        Theta::neutral(2, geom.n_nwp(), geom.n_obs(), Origin { lat: 41.9, long: -87.9 })
    }

    #[test]
    fn constant_nwp_mean() {
        let g = small_geometry(4);
        let mut th = theta_for(&g);
        th.alpha_land = vec![2.0, 0.0];
        th.alpha_site[0] = 0.5;
        for t in 0..4 {
            assert!((mean_nwp(&th, t, 0, &g.nwp_points()[0]).unwrap() - 2.5).abs() < 1e-15);
        }
    }

    #[test]
    fn quarter_period_is_zero() {
        let g = small_geometry(24);
        let mut th = theta_for(&g);
        th.beta = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        th.alpha_land = vec![1.0, 1.0];
        assert!(mean_nwp(&th, 6, 0, &g.nwp_points()[0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn unknown_land_use_is_an_error() {
        let g = small_geometry(4);
        let th = Theta::neutral(1, 3, 2, Origin::default());
        assert!(matches!(
            mean_nwp(&th, 0, 1, &g.nwp_points()[1]),
            Err(Error::UnknownLandUse(2))
        ));
        assert!(temporal_weight(&th, 2, 0).is_err());
    }

    #[test]
    fn gamma_examples() {
        let g = gamma_values(&GammaParams::new(1.0, 0.3, 0.5), 3);
        assert!((g[(1, 1)] - 1.5).abs() < 1e-15);
        let g = gamma_values(&GammaParams::new(2.0, 2f64.ln(), 0.1), 3);
        assert!((g[(0, 1)] - 1.0).abs() < 1e-15);
        let c = gamma_matrix(1.0, 0.5, 0.1, 3).unwrap();
        let eig = c.values().clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
        assert!(gamma_matrix(0.0, 1.0, 1.0, 3).is_err());
    }

    #[test]
    fn a_bands_with_zero_nu() {
        let a = build_a(&[0.0; 18], 0.3, -0.2, 4);
        for r in 0..4 {
            let i = (r + 1) as f64;
            let v = 1.0 + i + i * i;
            assert_eq!(a[(r, r)], v);
            if r > 0 {
                assert_eq!(a[(r, r - 1)], v);
            }
            if r < 3 {
                assert_eq!(a[(r, r + 1)], v);
            }
        }
        assert_eq!(a[(0, 2)], 0.0);
        let mut nu = [0.0; 18];
        nu[0] = 1.0;
        assert_eq!(build_a(&nu, 0.0, -0.2, 4), build_a(&[0.0; 18], 0.0, -0.2, 4));
    }

    #[test]
    fn temporal_weight_examples() {
        let g = small_geometry(4);
        let mut th = theta_for(&g);
        th.rho[0] = TemporalWeights { rho0: 1.0, rho1: 2f64.ln() };
        th.rho[1] = TemporalWeights { rho0: 0.7, rho1: 0.3 };
        assert_eq!(temporal_weight(&th, 1, 0).unwrap(), 1.0);
        assert!((temporal_weight(&th, 1, 1).unwrap() - 0.5).abs() < 1e-15);
        let expect = 0.7 * (-1.5f64).exp() + 0.3;
        assert!((temporal_weight(&th, 2, 5).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn lambda_collapse_case() {
        let g = small_geometry(3);
        let mut th = theta_for(&g);
        th.phi[0][0] = 1.0;
        th.rho = vec![TemporalWeights { rho0: 0.0, rho1: 1.0 }; 2];
        let op = build_lambda(&th, &g).unwrap();
        let y = DVector::from_fn(9, |i, _| i as f64 + 1.0);
        let out = op.apply(&y).unwrap();
        for (j, nb) in g.neighbors().iter().enumerate() {
            let sum: f64 = (0..3).map(|t| y[nb[0] * 3 + t]).sum();
            for t in 0..3 {
                assert!((out[j * 3 + t] - sum).abs() < 1e-12);
            }
        }
        for r in 0..6 {
            assert!(op.row_nonzeros(r) <= 3 * 3);
        }
    }

    #[test]
    fn coincident_neighbor_gets_intercept_weight() {
        let stations = vec![station("a", 42.0, -88.0, 1)];
        let grid = vec![
            station("g1", 42.0, -88.0, 1),
            station("g2", 41.5, -87.5, 1),
            station("g3", 42.5, -87.5, 1),
        ];
        let g = Geometry::new(2, stations, grid).unwrap();
        let mut th = Theta::neutral(1, 3, 1, Origin::default());
        th.phi = [[0.4, 5.0, 7.0], [0.0; 3], [0.0; 3]];
        let op = build_lambda(&th, &g).unwrap();
        assert!((op.matrix()[(0, 0)] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn mean_cond_reductions() {
        let g = small_geometry(4);
        let mut th = theta_for(&g);
        th.beta_cond = [3.0, 0.0, 0.0, 0.0, 0.0];
        let op = build_lambda(&th, &g).unwrap();
        let y = DVector::from_element(g.nwp_dim(), 1.7);
        assert!((mean_cond(&th, &g, 2, 1, &op, &y).unwrap() - 3.0).abs() < 1e-15);
        th.phi[1] = [0.3, 0.1, 0.2];
        let op = build_lambda(&th, &g).unwrap();
        let zero = DVector::zeros(g.nwp_dim());
        assert!((mean_cond(&th, &g, 2, 1, &op, &zero).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn joint_blocks_and_independence() {
        let g = small_geometry(3);
        let mut th = theta_for(&g);
        th.nwp_cov.common = GammaParams::new(1e-3, 0.5, 1e-4);
        th.cond_cov.common = GammaParams::new(2e-3, 0.3, 1e-4);
        let (_, cov) = joint_values(&th, &g).unwrap();
        let no = g.obs_dim();
        assert!(cov.view((0, no), (no, g.nwp_dim())).iter().all(|v| *v == 0.0));
        th.phi[0] = [0.8, 0.1, -0.2];
        th.phi[2] = [0.1, 0.0, 0.3];
        let (_, cov) = joint_values(&th, &g).unwrap();
        let lm = build_lambda(&th, &g).unwrap().matrix().clone();
        let s_nwp = cov_marginal_values(&th, &g, Which::Nwp).unwrap();
        let s_cond = cov_marginal_values(&th, &g, Which::Cond).unwrap();
        let top = cov.view((0, 0), (no, no)).into_owned() - &lm * &s_nwp * lm.transpose();
        assert!((top - s_cond).amax() < 1e-12);
    }

    #[test]
    fn cov_blocks_are_transposes() {
        let g = small_geometry(4);
        let mut th = theta_for(&g);
        th.nwp_cov.nu = std::array::from_fn(|i| 0.05 * (i as f64 - 9.0));
        th.nwp_cov.common = GammaParams::new(0.01, 0.4, 0.002);
        let c = cov_marginal_values(&th, &g, Which::Nwp).unwrap();
        let b01 = c.view((0, 4), (4, 4)).into_owned();
        let b10 = c.view((4, 0), (4, 4)).into_owned();
        assert!((b01 - b10.transpose()).amax() < 1e-12);
        assert!(cov_marginal(&th, &g, Which::Nwp).is_ok());
    }

    #[test]
    fn single_station_with_identity_a() {
        // Direct construction with A = I.
        let g0 = GammaParams::new(0.7, 0.2, 0.1);
        let gs = GammaParams::new(0.4, 0.5, 0.3);
        let expected = gamma_values(&g0, 3) + gamma_values(&gs, 3);
        let a = DMatrix::<f64>::identity(3, 3);
        let built = &a * gamma_values(&g0, 3) * a.transpose() + gamma_values(&gs, 3);
        assert!((built - expected).amax() < 1e-15);
    }
}
