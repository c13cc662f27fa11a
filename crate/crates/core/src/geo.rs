//! Great-circle distances and nearest-point search.

use crate::error::{Error, Result};
use crate::panel::StationMeta;
use crate::theta::Origin;

pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Haversine distance in kilometres.
pub fn haversine_km(lat1: f64, long1: f64, lat2: f64, long2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (long2 - long1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Indices of the `k` points closest to `(lat, long)`, ascending by distance;
/// equal distances are ordered by `(lat, long)` of the candidate point.
pub fn nearest_indices(lat: f64, long: f64, points: &[(f64, f64)], k: usize) -> Result<Vec<usize>> {
    if points.len() < k {
        return Err(Error::InvalidInput(format!(
            "need {k} grid points, only {} available",
            points.len()
        )));
    }
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, &(plat, plong))| (haversine_km(lat, long, plat, plong), i))
        .collect();
    order.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| points[a.1].0.total_cmp(&points[b.1].0))
            .then_with(|| points[a.1].1.total_cmp(&points[b.1].1))
            .then_with(|| a.1.cmp(&b.1))
    });
    Ok(order.into_iter().take(k).map(|(_, i)| i).collect())
}

/// Mean latitude and longitude of a station set.
pub fn centroid(stations: &[StationMeta]) -> Origin {
    let n = stations.len().max(1) as f64;
    Origin {
        lat: stations.iter().map(|s| s.lat).sum::<f64>() / n,
        long: stations.iter().map(|s| s.long).sum::<f64>() / n,
    }
}
