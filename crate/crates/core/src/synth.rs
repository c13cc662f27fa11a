//! Forward simulation of the hierarchical model and reproducible synthetic
//! geometries.

use chrono::{TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ConditionalModel, Geometry, MarginalModel};
use crate::panel::{daily_blocks, devectorize, BlockData, Panel, Source, StationMeta};
use crate::theta::{GammaParams, TemporalWeights, Theta, Variant};
use crate::transform::{BackTransform, BoxCoxSpec};

/// South-west corner and extent of the synthetic study box, degrees.
pub const BOX_LAT: f64 = 41.0;
pub const BOX_LONG: f64 = -89.0;
pub const BOX_SIZE: f64 = 2.0;
/// Spacing of the synthetic NWP lattice, degrees.
pub const GRID_STEP: f64 = 0.25;

/// Standard-normal vector from a counter-addressed stream.
pub fn normal_vector(seed: u64, stream: u64, dim: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// Random stations and lattice NWP points in a 2°×2° box.
///
/// Grid points are distinct lattice nodes; land uses (two or three
/// categories) are spread over the grid so that each category occurs when
/// there are enough points, and each station takes the land use of its
/// nearest grid point.
pub fn make_test_geometry(j0: usize, n_grid: usize, seed: u64) -> Result<(Vec<StationMeta>, Vec<StationMeta>)> {
    let side = (BOX_SIZE / GRID_STEP) as usize + 1;
    if n_grid < 3 || n_grid > side * side {
        return Err(Error::InvalidInput(format!(
            "grid size must be in 3..={}, got {n_grid}",
            side * side
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_lu = 2 + usize::from(n_grid >= 6 && rng.random_bool(0.5));
    let mut nodes: Vec<usize> = (0..side * side).collect();
    for i in 0..n_grid {
        let j = rng.random_range(i..nodes.len());
        nodes.swap(i, j);
    }
    let offset = rng.random_range(0..n_lu);
    let grid: Vec<StationMeta> = nodes[..n_grid]
        .iter()
        .enumerate()
        .map(|(n, &node)| {
            let lat = BOX_LAT + GRID_STEP * (node / side) as f64;
            let long = BOX_LONG + GRID_STEP * (node % side) as f64;
            let lu = ((n + offset) % n_lu + 1) as u32;
            StationMeta::new(format!("G{:02}", n + 1), lat, long, lu)
        })
        .collect::<Result<_>>()?;
    let pts: Vec<(f64, f64)> = grid.iter().map(|g| (g.lat, g.long)).collect();
    let stations = (0..j0)
        .map(|n| {
            let lat = BOX_LAT + BOX_SIZE * rng.random::<f64>();
            let long = BOX_LONG + BOX_SIZE * rng.random::<f64>();
            let nearest = crate::geo::nearest_indices(lat, long, &pts, 1)?[0];
            StationMeta::new(format!("S{:02}", n + 1), lat, long, grid[nearest].land_use)
        })
        .collect::<Result<_>>()?;
    Ok((stations, grid))
}

/// A parameter pack with diurnal harmonics, a latent common signal and
/// temporal and spatial transition weights, sized for `geom`.
///
/// The `seed` perturbs per-location values so that stations differ.
pub fn reference_theta(geom: &Geometry, n_land_use: usize, seed: u64) -> Theta {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7e7a);
    let origin = crate::geo::centroid(geom.stations());
    let mut th = Theta::neutral(n_land_use, geom.n_nwp(), geom.n_obs(), origin);
    th.variant = Variant::Full;
    th.beta = [1.0, 0.25, -0.15, 0.08, 0.05, 0.03, -0.02];
    th.alpha_land = (0..n_land_use).map(|l| 3.0 - 0.3 * l as f64).collect();
    let mut seen = vec![false; n_land_use];
    for (j, p) in geom.nwp_points().iter().enumerate() {
        let l = p.land_use as usize - 1;
        th.alpha_site[j] = if l < n_land_use && !seen[l] {
            seen[l] = true;
            0.0
        } else {
            rng.random_range(-0.2..0.2)
        };
    }
    th.nwp_cov.nu = std::array::from_fn(|k| 0.15 * ((k + 1) as f64).sin());
    th.nwp_cov.common = GammaParams::new(3e-7, 0.02, 3e-8);
    for g in th.nwp_cov.local.iter_mut() {
        *g = GammaParams::new(rng.random_range(0.25..0.35), rng.random_range(0.04..0.08), 0.05);
    }
    th.beta_cond = [0.5, 0.2, -0.15, 0.06, 0.05];
    th.alpha_lat = 0.1;
    th.alpha_long = -0.05;
    th.rho = (0..n_land_use)
        .map(|l| TemporalWeights {
            rho0: 0.9 - 0.05 * l as f64,
            rho1: 0.6 + 0.2 * l as f64,
        })
        .collect();
    th.phi = [[0.15, 0.05, -0.04], [0.05, 0.03, 0.02], [0.02, -0.02, 0.03]];
    th.cond_cov.nu = std::array::from_fn(|k| 0.1 * ((k + 1) as f64).cos());
    th.cond_cov.common = GammaParams::new(2e-7, 0.03, 2e-8);
    for g in th.cond_cov.local.iter_mut() {
        *g = GammaParams::new(rng.random_range(0.15..0.25), rng.random_range(0.08..0.12), 0.04);
    }
    th
}

/// A random valid full-model pack: every free value drawn uniformly from a
/// box around [`reference_theta`].
pub fn random_theta(geom: &Geometry, n_land_use: usize, seed: u64) -> Theta {
    let mut th = reference_theta(geom, n_land_use, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    for b in th.beta.iter_mut().skip(1).chain(th.beta_cond.iter_mut()) {
        *b = u(-0.3, 0.3);
    }
    for a in th.alpha_land.iter_mut() {
        *a = u(1.5, 4.0);
    }
    for a in th.alpha_site.iter_mut() {
        *a = u(-0.3, 0.3);
    }
    th.alpha_lat = u(-0.2, 0.2);
    th.alpha_long = u(-0.2, 0.2);
    for r in th.rho.iter_mut() {
        *r = TemporalWeights {
            rho0: u(0.5, 1.0),
            rho1: u(0.2, 2.0),
        };
    }
    for v in th.phi.iter_mut().flatten() {
        *v = u(-0.2, 0.2);
    }
    for cov in [&mut th.nwp_cov, &mut th.cond_cov] {
        for v in cov.nu.iter_mut() {
            *v = u(-0.3, 0.3);
        }
        cov.common = GammaParams::new(u(1e-7, 5e-7), u(0.01, 0.1), u(1e-8, 5e-8));
        for g in cov.local.iter_mut() {
            *g = GammaParams::new(u(0.1, 0.5), u(0.02, 0.2), u(0.02, 0.1));
        }
    }
    th
}

/// Simulated observation and NWP panels in transformed space.
#[derive(Clone, Debug)]
pub struct SimulatedPanels {
    pub obs: Panel,
    pub nwp: Panel,
}

/// Draw `k` independent blocks: `Y_NWP ~ N(μ_NWP, Σ_NWP)` then
/// `Y_Obs ~ N(μ + Λ Y_NWP, Σ_Obs|NWP)`. Block `i` uses its own random
/// stream, so results do not depend on thread scheduling.
///
/// Panels are tagged with `spec`, the transform under which the values are
/// understood to live.
pub fn simulate_panel(theta: &Theta, geom: &Geometry, k: usize, seed: u64, spec: BoxCoxSpec) -> Result<SimulatedPanels> {
    let marginal = MarginalModel::new(theta, geom)?;
    let cond = ConditionalModel::new(theta, geom)?;
    simulate_with(&marginal, &cond, geom, k, seed, spec)
}

/// As [`simulate_panel`] with prebuilt moments (allowing injected ones).
pub fn simulate_with(
    marginal: &MarginalModel,
    cond: &ConditionalModel,
    geom: &Geometry,
    k: usize,
    seed: u64,
    spec: BoxCoxSpec,
) -> Result<SimulatedPanels> {
    if k == 0 {
        return Err(Error::Empty("zero blocks requested"));
    }
    let l_nwp = marginal.cov.factor();
    let l_obs = cond.cov.factor();
    let h = geom.hours();
    let draws: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..k)
        .into_par_iter()
        .map(|b| {
            let z = normal_vector(seed, 2 * b as u64, geom.nwp_dim());
            let y_nwp = &marginal.mean + &l_nwp * z;
            let e = normal_vector(seed, 2 * b as u64 + 1, geom.obs_dim());
            let y_obs = cond.mean_given(&y_nwp)? + &l_obs * e;
            Ok((devectorize(&y_obs, h)?, devectorize(&y_nwp, h)?))
        })
        .collect::<Result<_>>()?;
    let start = Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).single().expect("valid date");
    let blocks = daily_blocks(start, k);
    let (obs_data, nwp_data): (Vec<_>, Vec<_>) = draws
        .into_iter()
        .map(|(o, n)| (BlockData::complete(o), BlockData::complete(n)))
        .unzip();
    Ok(SimulatedPanels {
        obs: Panel::new(Source::Obs, geom.stations().to_vec(), blocks.clone(), obs_data, Some(spec))?,
        nwp: Panel::new(Source::Nwp, geom.nwp_points().to_vec(), blocks, nwp_data, Some(spec))?,
    })
}

/// Inverse-transform a panel to raw m/s. Returns the panel and the number of
/// clamped values.
pub fn to_raw(panel: &Panel) -> Result<(Panel, usize)> {
    let spec = *panel
        .transform()
        .ok_or_else(|| Error::InvalidInput("panel is already in raw units".into()))?;
    let back = std::sync::Mutex::new(BackTransform::new(spec));
    let raw = panel.map_values(None, |z| back.lock().expect("unpoisoned").apply(z))?;
    let clamped = back.into_inner().expect("unpoisoned").clamp_count();
    Ok((raw, clamped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_is_reproducible() {
        let a = make_test_geometry(4, 6, 3).unwrap();
        let b = make_test_geometry(4, 6, 3).unwrap();
        assert_eq!(a, b);
        let (stations, grid) = make_test_geometry(1, 3, 9).unwrap();
        assert_eq!(stations.len(), 1);
        assert_eq!(grid.len(), 3);
        assert!(Geometry::new(24, stations, grid).is_ok());
        assert!(make_test_geometry(1, 2, 9).is_err());
    }

    #[test]
    fn land_uses_within_declared_set() {
        for seed in 0..20 {
            let (stations, grid) = make_test_geometry(5, 8, seed).unwrap();
            let n_lu = grid.iter().map(|g| g.land_use).max().unwrap();
            assert!((2..=3).contains(&n_lu));
            assert!(grid.iter().chain(&stations).all(|s| (1..=n_lu).contains(&s.land_use)));
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let (s, g) = make_test_geometry(2, 4, 1).unwrap();
        let geom = Geometry::new(6, s, g).unwrap();
        let th = reference_theta(&geom, 2, 1);
        let a = simulate_panel(&th, &geom, 3, 42, BoxCoxSpec::default()).unwrap();
        let b = simulate_panel(&th, &geom, 3, 42, BoxCoxSpec::default()).unwrap();
        assert_eq!(a.obs, b.obs);
        assert_eq!(a.nwp, b.nwp);
        let c = simulate_panel(&th, &geom, 3, 43, BoxCoxSpec::default()).unwrap();
        assert_ne!(a.obs, c.obs);
    }

    #[test]
    fn random_packs_are_valid_and_distinct() {
        let (s, g) = make_test_geometry(2, 4, 5).unwrap();
        let geom = Geometry::new(4, s, g).unwrap();
        let a = random_theta(&geom, 2, 1);
        a.validate().unwrap();
        assert!(MarginalModel::new(&a, &geom).is_ok());
        assert_ne!(a, random_theta(&geom, 2, 2));
        assert_eq!(a.beta[0], 1.0);
    }
}
