//! Stations, day blocks and the hourly panel container shared by every
//! other module.
//!
//! Vectorization convention: a block of `h` hours by `J` locations is
//! flattened station-major with the hour index varying fastest, i.e. entry
//! `(t, j)` lands at position `j * h + t`. Every covariance matrix in the crate
//! is laid out in this order, so per-station temporal blocks are contiguous.

use chrono::{DateTime, Duration, Utc};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::BoxCoxSpec;

pub const DEFAULT_HOURS: usize = 24;

/// A measurement site or an NWP grid location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub id: String,
    pub lat: f64,
    pub long: f64,
    pub land_use: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<u32>,
}

impl StationMeta {
    pub fn new(id: impl Into<String>, lat: f64, long: f64, land_use: u32) -> Result<Self> {
        let id = id.into();
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&long) {
            return Err(Error::InvalidInput(format!(
                "station {id}: coordinates ({lat}, {long}) out of range"
            )));
        }
        if land_use == 0 {
            return Err(Error::InvalidInput(format!(
                "station {id}: land-use categories start at 1"
            )));
        }
        Ok(StationMeta {
            id,
            lat,
            long,
            land_use,
            cluster: None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Obs,
    Nwp,
}

/// One forecast window of `h` consecutive hours, starting at the top of an hour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayBlock {
    /// 1-based position within the panel.
    pub index: usize,
    pub start: DateTime<Utc>,
}

impl DayBlock {
    pub fn timestamp(&self, hour: usize) -> DateTime<Utc> {
        self.start + Duration::hours(hour as i64)
    }
}

/// Values of one block, `h` rows (hours) by `J` columns (locations).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockData {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

impl BlockData {
    pub fn new(values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::Shape(format!(
                "values {:?} vs mask {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        Ok(BlockData { values, mask })
    }

    /// A block with every entry available.
    pub fn complete(values: DMatrix<f64>) -> Self {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        BlockData { values, mask }
    }

    pub fn hours(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_locations(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn value(&self, hour: usize, loc: usize) -> Option<f64> {
        self.mask[(hour, loc)].then(|| self.values[(hour, loc)])
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Station-major, hour-fastest flattening of the values.
    pub fn vectorize(&self) -> DVector<f64> {
        vectorize(&self.values)
    }

    fn map(&self, f: &impl Fn(f64) -> f64) -> BlockData {
        let values = DMatrix::from_fn(self.hours(), self.n_locations(), |t, j| {
            if self.mask[(t, j)] {
                f(self.values[(t, j)])
            } else {
                self.values[(t, j)]
            }
        });
        BlockData {
            values,
            mask: self.mask.clone(),
        }
    }

    fn select_columns(&self, cols: &[usize]) -> BlockData {
        BlockData {
            values: self.values.select_columns(cols),
            mask: self.mask.select_columns(cols),
        }
    }
}

/// Station-major, hour-fastest flattening of an `h × J` block.
pub fn vectorize(block: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is column-major, which is exactly the convention.
    DVector::from_column_slice(block.as_slice())
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &DVector<f64>, hours: usize) -> Result<DMatrix<f64>> {
    if hours == 0 || v.len() % hours != 0 {
        return Err(Error::Shape(format!(
            "vector of length {} is not a multiple of {hours} hours",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(hours, v.len() / hours, v.as_slice()))
}

/// Hourly wind speeds of one source over a set of day blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    source: Source,
    hours: usize,
    stations: Vec<StationMeta>,
    blocks: Vec<DayBlock>,
    data: Vec<BlockData>,
    transform: Option<BoxCoxSpec>,
}

impl Panel {
    /// `transform == None` means raw m/s values, which must be non-negative.
    pub fn new(
        source: Source,
        stations: Vec<StationMeta>,
        blocks: Vec<DayBlock>,
        data: Vec<BlockData>,
        transform: Option<BoxCoxSpec>,
    ) -> Result<Self> {
        if blocks.len() != data.len() {
            return Err(Error::Shape(format!(
                "{} day blocks but {} data blocks",
                blocks.len(),
                data.len()
            )));
        }
        let hours = data.first().map_or(DEFAULT_HOURS, BlockData::hours);
        if hours == 0 {
            return Err(Error::Shape("blocks must contain at least one hour".into()));
        }
        for (b, d) in blocks.iter().zip(&data) {
            if d.hours() != hours || d.n_locations() != stations.len() {
                return Err(Error::Shape(format!(
                    "block {} has shape {:?}, expected ({hours}, {})",
                    b.index,
                    d.values.shape(),
                    stations.len()
                )));
            }
            for (v, &m) in d.values.iter().zip(d.mask.iter()) {
                if m && !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite available value in block {}",
                        b.index
                    )));
                }
                if m && transform.is_none() && *v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "negative raw wind speed {v} in block {}",
                        b.index
                    )));
                }
            }
        }
        for pair in blocks.windows(2) {
            if pair[1].start < pair[0].start + Duration::hours(hours as i64) {
                return Err(Error::InvalidInput(format!(
                    "day blocks {} and {} overlap or are out of order",
                    pair[0].index, pair[1].index
                )));
            }
        }
        Ok(Panel {
            source,
            hours,
            stations,
            blocks,
            data,
            transform,
        })
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn hours(&self) -> usize {
        self.hours
    }

    pub fn stations(&self) -> &[StationMeta] {
        &self.stations
    }

    pub fn blocks(&self) -> &[DayBlock] {
        &self.blocks
    }

    pub fn data(&self) -> &[BlockData] {
        &self.data
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn transform(&self) -> Option<&BoxCoxSpec> {
        self.transform.as_ref()
    }

    /// Values of block `block_index` (1-based), hours by stations.
    pub fn block_slice(&self, block_index: usize) -> Result<&BlockData> {
        if block_index == 0 || block_index > self.data.len() {
            return Err(Error::BlockOutOfRange {
                index: block_index,
                len: self.data.len(),
            });
        }
        Ok(&self.data[block_index - 1])
    }

    /// Re-indexed panel holding the blocks at the given 0-based positions.
    pub fn select_blocks(&self, positions: &[usize]) -> Result<Panel> {
        let mut blocks = Vec::with_capacity(positions.len());
        let mut data = Vec::with_capacity(positions.len());
        for (n, &p) in positions.iter().enumerate() {
            let b = self.blocks.get(p).ok_or(Error::BlockOutOfRange {
                index: p + 1,
                len: self.blocks.len(),
            })?;
            blocks.push(DayBlock {
                index: n + 1,
                start: b.start,
            });
            data.push(self.data[p].clone());
        }
        Panel::new(self.source, self.stations.clone(), blocks, data, self.transform)
    }

    /// Panel restricted to the given station positions (in that order).
    pub fn select_stations(&self, positions: &[usize]) -> Result<Panel> {
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.stations.len()) {
            return Err(Error::InvalidInput(format!("station position {bad} out of range")));
        }
        let stations = positions.iter().map(|&p| self.stations[p].clone()).collect();
        let data = self.data.iter().map(|d| d.select_columns(positions)).collect();
        Panel::new(self.source, stations, self.blocks.clone(), data, self.transform)
    }

    /// Apply `f` to every available value and tag the result with `transform`.
    pub fn map_values(
        &self,
        transform: Option<BoxCoxSpec>,
        f: impl Fn(f64) -> f64,
    ) -> Result<Panel> {
        let data = self.data.iter().map(|d| d.map(&f)).collect();
        Panel::new(self.source, self.stations.clone(), self.blocks.clone(), data, transform)
    }

    pub fn with_stations(mut self, stations: Vec<StationMeta>) -> Result<Panel> {
        if stations.len() != self.stations.len() {
            return Err(Error::Shape("station list length changed".into()));
        }
        self.stations = stations;
        Ok(self)
    }

    /// Iterator over all available values.
    pub fn available_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().flat_map(|d| {
            d.values
                .iter()
                .zip(d.mask.iter())
                .filter_map(|(v, &m)| m.then_some(*v))
        })
    }
}

/// Consecutive daily blocks starting at `first`.
pub fn daily_blocks(first: DateTime<Utc>, count: usize) -> Vec<DayBlock> {
    (0..count)
        .map(|i| DayBlock {
            index: i + 1,
            start: first + Duration::days(i as i64),
        })
        .collect()
}
