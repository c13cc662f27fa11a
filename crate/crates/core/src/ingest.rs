//! Raw observation files and NWP extractions to aligned hourly panels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read};
use std::sync::LazyLock;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, TimeZone, Utc};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;

use crate::error::{Error, Result};
use crate::geo::{haversine_km, nearest_indices};
use crate::model::N_NEIGHBORS;
use crate::panel::{BlockData, DayBlock, Panel, Source, StationMeta};

/// Metres per second in one knot.
pub const KNOT_MS: f64 = 0.514444;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unit {
    Knots,
    MetersPerSecond,
}

/// Irregularly sampled wind speeds of one station.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub station_id: String,
    timestamps: Vec<DateTime<Utc>>,
    speeds: Vec<f64>,
    unit: Unit,
}

impl RawSeries {
    pub fn new(station_id: impl Into<String>, timestamps: Vec<DateTime<Utc>>, speeds: Vec<f64>, unit: Unit) -> Result<Self> {
        let station_id = station_id.into();
        if timestamps.len() != speeds.len() {
            return Err(Error::Shape(format!(
                "{station_id}: {} timestamps for {} speeds",
                timestamps.len(),
                speeds.len()
            )));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!("{station_id}: timestamps not strictly increasing")));
        }
        if let Some(v) = speeds.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!("{station_id}: invalid speed {v}")));
        }
        Ok(RawSeries {
            station_id,
            timestamps,
            speeds,
            unit,
        })
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    /// Speeds in m/s.
    pub fn speeds_ms(&self) -> Vec<f64> {
        match self.unit {
            Unit::Knots => self.speeds.iter().map(|v| v * KNOT_MS).collect(),
            Unit::MetersPerSecond => self.speeds.clone(),
        }
    }
}

/// An NWP grid location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub lat: f64,
    pub long: f64,
    pub land_use: u32,
}

/// Hourly means over the centered window `[t − w/2, t + w/2)` at
/// `start + k hours`, `k = 0..hours`. Hours without samples are `None`.
pub fn moving_average_resample(
    series: &RawSeries,
    start: DateTime<Utc>,
    hours: usize,
    window: Duration,
) -> Result<Vec<Option<f64>>> {
    if series.is_empty() {
        return Err(Error::Empty("raw series"));
    }
    if window <= Duration::zero() {
        return Err(Error::InvalidInput("resampling window must be positive".into()));
    }
    let speeds = series.speeds_ms();
    let ts = &series.timestamps;
    let half = window / 2;
    Ok((0..hours)
        .map(|k| {
            let t = start + Duration::hours(k as i64);
            let lo = ts.partition_point(|x| *x < t - half);
            let hi = ts.partition_point(|x| *x < t - half + window);
            (hi > lo).then(|| speeds[lo..hi].iter().sum::<f64>() / (hi - lo) as f64)
        })
        .collect())
}

/// One parsed raw record.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub station: String,
    pub timestamp: DateTime<Utc>,
    pub speed_kn: f64,
}

static ASOS_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([A-Z0-9]{3,4})(\d{8})(\d{4})(\d{4})").expect("valid pattern"));

/// Parse one line of an ASOS one-minute wind file.
///
/// The header token holds the station identifier, the date and the time of
/// the record. The speed is the second value of the first run of at least
/// two integer tokens after it (direction, then speed in knots).
pub fn parse_asos_line(line: &str) -> Option<RawRecord> {
    let caps = ASOS_HEADER.captures(line)?;
    let whole = caps.get(0)?;
    let date = NaiveDate::parse_from_str(&caps[2], "%Y%m%d").ok()?;
    let hm = &caps[3];
    let time = chrono::NaiveTime::from_hms_opt(hm[..2].parse().ok()?, hm[2..].parse().ok()?, 0)?;
    let timestamp = Utc.from_utc_datetime(&date.and_time(time));
    let tokens: Vec<&str> = line[whole.end()..].split_whitespace().collect();
    let is_int = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    let run = tokens.windows(2).find(|w| is_int(w[0]) && is_int(w[1]))?;
    Some(RawRecord {
        station: caps[1].to_string(),
        timestamp,
        speed_kn: run[1].parse().ok()?,
    })
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| Utc.from_utc_datetime(&n))
}

/// Records from either a `timestamp,station,speed_kn` CSV or ASOS minute
/// lines, detected from the first non-empty line. Unparseable lines are
/// skipped and counted.
pub fn parse_observations(reader: impl Read) -> Result<(Vec<RawRecord>, usize)> {
    let mut lines = std::io::BufReader::new(reader).lines();
    let mut records = Vec::new();
    let mut skipped = 0;
    let mut first = None;
    for line in lines.by_ref() {
        let line = line?;
        if !line.trim().is_empty() {
            first = Some(line);
            break;
        }
    }
    let Some(first) = first else {
        return Ok((records, 0));
    };
    if first.trim_start().starts_with("timestamp") {
        let rest: Vec<String> = lines.collect::<std::io::Result<_>>()?;
        let text = std::iter::once(first).chain(rest).collect::<Vec<_>>().join("\n");
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        for row in rdr.records() {
            let row = row?;
            let parsed = (|| {
                let t = parse_timestamp(row.get(0)?)?;
                let station = row.get(1)?.to_string();
                let v: f64 = row.get(2)?.parse().ok()?;
                (v.is_finite() && v >= 0.0).then_some(RawRecord {
                    station,
                    timestamp: t,
                    speed_kn: v,
                })
            })();
            match parsed {
                Some(r) => records.push(r),
                None => skipped += 1,
            }
        }
    } else {
        for line in std::iter::once(Ok(first)).chain(lines) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_asos_line(&line) {
                Some(r) => records.push(r),
                None => skipped += 1,
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} unparseable observation lines");
    }
    Ok((records, skipped))
}

/// Group records into per-station series in knots, sorted by station id.
/// Repeated timestamps keep the first record.
pub fn group_series(records: Vec<RawRecord>) -> Result<Vec<RawSeries>> {
    let mut by_station: BTreeMap<String, BTreeMap<DateTime<Utc>, f64>> = BTreeMap::new();
    for r in records {
        by_station.entry(r.station).or_default().entry(r.timestamp).or_insert(r.speed_kn);
    }
    by_station
        .into_iter()
        .map(|(id, m)| {
            let (ts, vs) = m.into_iter().unzip();
            RawSeries::new(id, ts, vs, Unit::Knots)
        })
        .collect()
}

/// Index of the grid point nearest to each station; station land uses are
/// set from the matched point.
pub fn match_nearest_grid(stations: &mut [StationMeta], grid: &[GridPoint]) -> Result<Vec<usize>> {
    if grid.is_empty() {
        return Err(Error::Empty("NWP grid"));
    }
    let pts: Vec<(f64, f64)> = grid.iter().map(|g| (g.lat, g.long)).collect();
    stations
        .iter_mut()
        .map(|s| {
            let k = nearest_indices(s.lat, s.long, &pts, 1)?[0];
            s.land_use = grid[k].land_use;
            Ok(k)
        })
        .collect()
}

/// Indices of the `k` grid points nearest to `station`, ascending.
pub fn nearest_neighbors(station: &StationMeta, grid: &[GridPoint], k: usize) -> Result<Vec<usize>> {
    let pts: Vec<(f64, f64)> = grid.iter().map(|g| (g.lat, g.long)).collect();
    nearest_indices(station.lat, station.long, &pts, k)
}

/// Station features: mean hourly profile over available values, then
/// latitude and longitude.
fn station_features(panel: &Panel) -> Vec<Vec<f64>> {
    let h = panel.hours();
    panel
        .stations()
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let mut f: Vec<f64> = (0..h)
                .map(|t| {
                    let vals: Vec<f64> = panel.data().iter().filter_map(|b| b.value(t, j)).collect();
                    if vals.is_empty() {
                        f64::NAN
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    }
                })
                .collect();
            f.push(s.lat);
            f.push(s.long);
            f
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means clusters (1-based labels, in panel station order) of stations
/// described by their mean hourly profile and coordinates, each feature
/// standardized. Seeded k-means++ with ten starts; labels are numbered by
/// first appearance in station-id order, so the result does not depend on
/// the order of stations in the panel.
pub fn cluster_stations(panel: &Panel, k: usize, seed: u64) -> Result<Vec<u32>> {
    let n = panel.n_stations();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("cannot form {k} clusters from {n} stations")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| panel.stations()[a].id.cmp(&panel.stations()[b].id));
    let raw = station_features(panel);
    let raw: Vec<&Vec<f64>> = order.iter().map(|&i| &raw[i]).collect();
    let dim = raw[0].len();
    let mut cols = Vec::new();
    for d in 0..dim {
        let vals: Vec<f64> = raw.iter().map(|f| f[d]).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) {
            cols.push(vals.into_iter().map(|v| (v - mean) / sd).collect::<Vec<f64>>());
        }
    }
    if cols.is_empty() {
        return Err(Error::Degenerate("all station features are identical".into()));
    }
    let x: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    let distinct = x
        .iter()
        .enumerate()
        .filter(|(i, xi)| x[..*i].iter().all(|xj| sq_dist(xi, xj) > 0.0))
        .count();
    if distinct < k {
        return Err(Error::Degenerate(format!(
            "{distinct} distinct feature vectors for {k} clusters"
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for start in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(start);
        let (inertia, labels) = kmeans(&x, k, &mut rng);
        if best.as_ref().is_none_or(|b| inertia < b.0 - 1e-12) {
            best = Some((inertia, labels));
        }
    }
    let (_, labels) = best.expect("at least one start");
    let mut relabel = vec![None; k];
    let mut next = 0;
    let mut sorted_labels = vec![0u32; n];
    for (i, &l) in labels.iter().enumerate() {
        let id = *relabel[l].get_or_insert_with(|| {
            next += 1;
            next
        });
        sorted_labels[i] = id;
    }
    let mut out = vec![0u32; n];
    for (pos, &station) in order.iter().enumerate() {
        out[station] = sorted_labels[pos];
    }
    Ok(out)
}

fn kmeans(x: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
    let n = x.len();
    let mut centers: Vec<Vec<f64>> = vec![x[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d: Vec<f64> = x
            .iter()
            .map(|xi| centers.iter().map(|c| sq_dist(xi, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = d.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        for (i, &di) in d.iter().enumerate() {
            if di > 0.0 && u < di {
                pick = i;
                break;
            }
            u -= di;
        }
        centers.push(x[pick].clone());
    }
    let mut labels = vec![0usize; n];
    for _ in 0..300 {
        let new: Vec<usize> = x
            .iter()
            .map(|xi| {
                (0..k)
                    .min_by(|&a, &b| sq_dist(xi, &centers[a]).total_cmp(&sq_dist(xi, &centers[b])))
                    .expect("k > 0")
            })
            .collect();
        let mut new = new;
        // Refill empty clusters with the point farthest from its center.
        for c in 0..k {
            if !new.contains(&c) {
                let far = (0..n)
                    .filter(|&i| new.iter().filter(|&&l| l == new[i]).count() > 1)
                    .max_by(|&a, &b| {
                        sq_dist(&x[a], &centers[new[a]]).total_cmp(&sq_dist(&x[b], &centers[new[b]]))
                    })
                    .expect("more points than clusters");
                new[far] = c;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = x.iter().zip(&new).filter(|(_, &l)| l == c).map(|(xi, _)| xi).collect();
            for (d, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
        let done = new == labels;
        labels = new;
        if done {
            break;
        }
    }
    let inertia = x.iter().zip(&labels).map(|(xi, &l)| sq_dist(xi, &centers[l])).sum();
    (inertia, labels)
}

/// Station list from a CSV with columns `id,lat,long`. Land uses are
/// unset (1) until matched to the grid.
pub fn read_stations(reader: impl Read) -> Result<Vec<StationMeta>> {
    #[derive(serde::Deserialize)]
    struct Row {
        id: String,
        lat: f64,
        long: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: Row = row?;
        out.push(StationMeta::new(r.id, r.lat, r.long, 1)?);
    }
    if out.is_empty() {
        return Err(Error::Empty("station list"));
    }
    Ok(out)
}

/// NWP extraction: hourly speeds at grid points over whole days.
#[derive(Clone, Debug, PartialEq)]
pub struct NwpTable {
    /// Distinct grid points sorted by `(lat, long)`.
    pub grid: Vec<GridPoint>,
    pub days: Vec<NaiveDate>,
    /// `(day, hour, grid index) → m/s`.
    pub values: BTreeMap<(NaiveDate, usize, usize), f64>,
}

/// Read an NWP CSV with columns `day,hour,grid_lat,grid_long,land_use,speed_ms`.
pub fn read_nwp(reader: impl Read, hours: usize) -> Result<NwpTable> {
    #[derive(serde::Deserialize)]
    struct Row {
        day: String,
        hour: usize,
        grid_lat: f64,
        grid_long: f64,
        land_use: u32,
        speed_ms: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for (line, row) in rdr.deserialize().enumerate() {
        let r: Row = row?;
        let day = NaiveDate::parse_from_str(&r.day, "%Y-%m-%d")
            .map_err(|e| Error::parse(format!("NWP row {}", line + 2), e.to_string()))?;
        if r.hour >= hours {
            return Err(Error::parse(format!("NWP row {}", line + 2), format!("hour {} out of range", r.hour)));
        }
        if !(r.speed_ms.is_finite() && r.speed_ms >= 0.0) {
            return Err(Error::parse(format!("NWP row {}", line + 2), format!("speed {}", r.speed_ms)));
        }
        if r.land_use == 0 {
            return Err(Error::parse(format!("NWP row {}", line + 2), "land use must be at least 1"));
        }
        rows.push((day, r));
    }
    if rows.is_empty() {
        return Err(Error::Empty("NWP table"));
    }
    let mut points: BTreeMap<(u64, u64), GridPoint> = BTreeMap::new();
    let key = |lat: f64, long: f64| (lat.to_bits() ^ (1 << 63), long.to_bits() ^ (1 << 63));
    for (_, r) in &rows {
        let g = GridPoint {
            lat: r.grid_lat,
            long: r.grid_long,
            land_use: r.land_use,
        };
        if let Some(old) = points.insert(key(r.grid_lat, r.grid_long), g) {
            if old.land_use != r.land_use {
                return Err(Error::InvalidInput(format!(
                    "grid point ({}, {}) has conflicting land uses",
                    r.grid_lat, r.grid_long
                )));
            }
        }
    }
    let mut grid: Vec<GridPoint> = points.into_values().collect();
    grid.sort_by(|a, b| a.lat.total_cmp(&b.lat).then(a.long.total_cmp(&b.long)));
    let index = |lat: f64, long: f64| grid.iter().position(|g| g.lat == lat && g.long == long).expect("grid point present");
    let mut values = BTreeMap::new();
    let mut days = BTreeSet::new();
    for (day, r) in &rows {
        days.insert(*day);
        values.insert((*day, r.hour, index(r.grid_lat, r.grid_long)), r.speed_ms);
    }
    Ok(NwpTable {
        days: days.into_iter().collect(),
        grid,
        values,
    })
}

/// Aligned observation and NWP panels in raw m/s.
#[derive(Clone, Debug)]
pub struct Ingested {
    pub obs: Panel,
    pub nwp: Panel,
    /// Stations listed but without any raw records.
    pub missing_stations: Vec<String>,
}

/// Build panels over the NWP days. NWP locations are the union of the
/// nearest grid neighbors of all stations; station land uses come from
/// their nearest grid point.
pub fn build_panels(
    series: &[RawSeries],
    mut stations: Vec<StationMeta>,
    table: &NwpTable,
    hours: usize,
    window: Duration,
) -> Result<Ingested> {
    match_nearest_grid(&mut stations, &table.grid)?;
    let mut used = BTreeSet::new();
    for s in &stations {
        used.extend(nearest_neighbors(s, &table.grid, N_NEIGHBORS.min(table.grid.len()))?);
    }
    let used: Vec<usize> = used.into_iter().collect();
    let nwp_points: Vec<StationMeta> = used
        .iter()
        .map(|&g| {
            let p = table.grid[g];
            StationMeta::new(format!("G{:03}", g + 1), p.lat, p.long, p.land_use)
        })
        .collect::<Result<_>>()?;
    let blocks: Vec<DayBlock> = table
        .days
        .iter()
        .enumerate()
        .map(|(i, d)| DayBlock {
            index: i + 1,
            start: Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).expect("midnight")),
        })
        .collect();
    let by_id: BTreeMap<&str, &RawSeries> = series.iter().map(|s| (s.station_id.as_str(), s)).collect();
    let missing_stations: Vec<String> = stations
        .iter()
        .filter(|s| !by_id.contains_key(s.id.as_str()))
        .map(|s| s.id.clone())
        .collect();
    let resampled: Vec<Vec<Option<f64>>> = stations
        .par_iter()
        .map(|s| match by_id.get(s.id.as_str()) {
            Some(series) => moving_average_resample(series, blocks[0].start, span_hours(&blocks, hours), window),
            None => Ok(vec![None; span_hours(&blocks, hours)]),
        })
        .collect::<Result<_>>()?;
    let obs_data: Vec<BlockData> = blocks
        .iter()
        .map(|b| {
            let offset = (b.start - blocks[0].start).num_hours() as usize;
            let mut v = DMatrix::zeros(hours, stations.len());
            let mut m = DMatrix::from_element(hours, stations.len(), false);
            for (j, r) in resampled.iter().enumerate() {
                for t in 0..hours {
                    if let Some(x) = r[offset + t] {
                        v[(t, j)] = x;
                        m[(t, j)] = true;
                    }
                }
            }
            BlockData::new(v, m)
        })
        .collect::<Result<_>>()?;
    let nwp_data: Vec<BlockData> = table
        .days
        .iter()
        .map(|d| {
            let mut v = DMatrix::zeros(hours, used.len());
            let mut m = DMatrix::from_element(hours, used.len(), false);
            for (c, &g) in used.iter().enumerate() {
                for t in 0..hours {
                    if let Some(x) = table.values.get(&(*d, t, g)) {
                        v[(t, c)] = *x;
                        m[(t, c)] = true;
                    }
                }
            }
            BlockData::new(v, m)
        })
        .collect::<Result<_>>()?;
    Ok(Ingested {
        obs: Panel::new(Source::Obs, stations, blocks.clone(), obs_data, None)?,
        nwp: Panel::new(Source::Nwp, nwp_points, blocks, nwp_data, None)?,
        missing_stations,
    })
}

fn span_hours(blocks: &[DayBlock], hours: usize) -> usize {
    blocks
        .last()
        .map_or(0, |b| (b.start - blocks[0].start).num_hours() as usize + hours)
}

/// Great-circle distance table from stations to grid points, in km.
pub fn distance_table(stations: &[StationMeta], grid: &[GridPoint]) -> DMatrix<f64> {
    DMatrix::from_fn(stations.len(), grid.len(), |i, j| {
        haversine_km(stations[i].lat, stations[i].long, grid[j].lat, grid[j].long)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::daily_blocks;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).unwrap()
    }

    fn minutes(n: usize, from: i64) -> Vec<DateTime<Utc>> {
        (0..n as i64).map(|m| t0() + Duration::minutes(from + m)).collect()
    }

    #[test]
    fn constant_knots_convert() {
        let s = RawSeries::new("A", minutes(180, -30), vec![5.0; 180], Unit::Knots).unwrap();
        let r = moving_average_resample(&s, t0(), 3, Duration::hours(1)).unwrap();
        for v in r {
            assert!((v.unwrap() - 5.0 * 0.514444).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_means_and_masks() {
        let s = RawSeries::new("A", vec![t0() + Duration::minutes(10)], vec![3.0], Unit::MetersPerSecond).unwrap();
        let r = moving_average_resample(&s, t0(), 2, Duration::hours(1)).unwrap();
        assert_eq!(r, vec![Some(3.0), None]);
        let v: Vec<f64> = (0..60).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let s = RawSeries::new("A", minutes(60, -30), v, Unit::MetersPerSecond).unwrap();
        assert_eq!(moving_average_resample(&s, t0(), 1, Duration::hours(1)).unwrap(), vec![Some(1.0)]);
        let empty = RawSeries::new("A", vec![], vec![], Unit::Knots).unwrap();
        assert!(moving_average_resample(&empty, t0(), 1, Duration::hours(1)).is_err());
    }

    #[test]
    fn asos_lines() {
        let line = "94846KORD ORD2012010100000600   0.140 N      0.143 N     260    10   262    12    14R";
        let r = parse_asos_line(line).unwrap();
        assert_eq!(r.station, "ORD");
        assert_eq!(r.timestamp, t0());
        assert_eq!(r.speed_kn, 10.0);
        assert!(parse_asos_line("garbage").is_none());
        let csv = "timestamp,station,speed_kn\n2012-01-01 00:00,ORD,4\nbad,ORD,1\n";
        let (recs, skipped) = parse_observations(csv.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(skipped, 1);
        let series = group_series(recs).unwrap();
        assert_eq!(series[0].speeds(), &[4.0]);
    }

    #[test]
    fn grid_matching_and_ties() {
        let grid = vec![
            GridPoint { lat: 0.0, long: 1.0, land_use: 1 },
            GridPoint { lat: 0.0, long: -1.0, land_use: 2 },
            GridPoint { lat: 5.0, long: 5.0, land_use: 3 },
        ];
        let mut st = vec![
            StationMeta::new("a", 0.0, 0.0, 1).unwrap(),
            StationMeta::new("b", 5.0, 5.0, 1).unwrap(),
        ];
        assert_eq!(match_nearest_grid(&mut st, &grid).unwrap(), vec![1, 2]);
        assert_eq!(st[0].land_use, 2);
        assert_eq!(nearest_neighbors(&st[0], &grid, 1).unwrap(), vec![1]);
        assert!(nearest_neighbors(&st[0], &grid, 4).is_err());
        assert!(match_nearest_grid(&mut st, &[]).is_err());
    }

    fn profile_panel(groups: &[(f64, f64, f64)]) -> Panel {
        let stations: Vec<StationMeta> = groups
            .iter()
            .enumerate()
            .map(|(i, g)| StationMeta::new(format!("S{i:02}"), g.0, g.1, 1).unwrap())
            .collect();
        let values = DMatrix::from_fn(4, groups.len(), |t, j| groups[j].2 + 0.01 * t as f64);
        Panel::new(Source::Obs, stations, daily_blocks(t0(), 1), vec![BlockData::complete(values)], None).unwrap()
    }

    #[test]
    fn separated_groups_are_recovered() {
        let mut g = Vec::new();
        for i in 0..4 {
            g.push((41.0 + 0.01 * i as f64, -88.0, 2.0 + 0.01 * i as f64));
            g.push((43.0 + 0.01 * i as f64, -86.0, 9.0 + 0.01 * i as f64));
        }
        let labels = cluster_stations(&profile_panel(&g), 2, 1).unwrap();
        for i in 0..4 {
            assert_eq!(labels[2 * i], labels[0]);
            assert_eq!(labels[2 * i + 1], labels[1]);
        }
        assert_ne!(labels[0], labels[1]);
        let singletons = cluster_stations(&profile_panel(&g), 8, 1).unwrap();
        let distinct: BTreeSet<u32> = singletons.into_iter().collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn degenerate_clustering_rejected() {
        let g = vec![(41.0, -88.0, 2.0); 3];
        assert!(cluster_stations(&profile_panel(&g), 2, 1).is_err());
        assert!(cluster_stations(&profile_panel(&g), 4, 1).is_err());
    }

    #[test]
    fn nwp_table_and_panels() {
        let csv = "day,hour,grid_lat,grid_long,land_use,speed_ms\n\
                   2012-01-01,0,41.0,-88.0,1,3.0\n\
                   2012-01-01,1,41.0,-88.0,1,4.0\n\
                   2012-01-01,0,41.5,-88.0,2,5.0\n\
                   2012-01-01,1,41.5,-88.0,2,6.0\n\
                   2012-01-01,0,42.0,-88.0,1,1.0\n\
                   2012-01-01,1,42.0,-88.0,1,2.0\n";
        let table = read_nwp(csv.as_bytes(), 2).unwrap();
        assert_eq!(table.grid.len(), 3);
        let stations = read_stations("id,lat,long\nX,41.4,-88.0\n".as_bytes()).unwrap();
        let series = vec![RawSeries::new("X", minutes(30, 0), vec![2.0; 30], Unit::Knots).unwrap()];
        let out = build_panels(&series, stations, &table, 2, Duration::hours(1)).unwrap();
        assert_eq!(out.obs.stations()[0].land_use, 2);
        assert_eq!(out.nwp.n_stations(), 3);
        let b = out.obs.block_slice(1).unwrap();
        assert!((b.value(0, 0).unwrap() - 2.0 * KNOT_MS).abs() < 1e-12);
        assert_eq!(b.value(1, 0), None);
        assert!(read_nwp("day,hour,grid_lat,grid_long,land_use,speed_ms\n2012-01-01,5,1,1,1,1\n".as_bytes(), 2).is_err());
    }
}
