//! Shared fixtures for the benchmarks.

use stwind::likelihood::LikelihoodData;
use stwind::pipeline::n_land_use;
use stwind::synth::{make_test_geometry, reference_theta, simulate_panel};
use stwind::{BoxCoxSpec, Geometry, Theta};

pub struct Fixture {
    pub geom: Geometry,
    pub theta: Theta,
    pub data: LikelihoodData,
}

/// `j0` stations, four grid points, 24 hours, `k` simulated blocks.
pub fn fixture(j0: usize, k: usize) -> Fixture {
    let (s, g) = make_test_geometry(j0, 4, 1).expect("geometry");
    let geom = Geometry::new(24, s, g).expect("geometry");
    let theta = reference_theta(&geom, n_land_use(&geom), 1);
    let sim = simulate_panel(&theta, &geom, k, 2, BoxCoxSpec::default()).expect("simulation");
    let data = LikelihoodData::new(&sim.obs, &sim.nwp).expect("data");
    Fixture { geom, theta, data }
}
