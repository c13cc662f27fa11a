//! Panel files: a CSV of `day,hour,station_id,value,available` rows and a
//! TOML sidecar with the source, stations, block starts and transform.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{BlockData, DayBlock, Panel, Source, StationMeta};
use crate::transform::BoxCoxSpec;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    source: Source,
    hours: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transform: Option<BoxCoxSpec>,
    block_starts: Vec<DateTime<Utc>>,
    stations: Vec<StationMeta>,
}

/// Sidecar path for a panel CSV: the same path with a `.toml` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("toml")
}

pub fn write_values(panel: &Panel, mut w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(&mut w);
    wtr.write_record(["day", "hour", "station_id", "value", "available"])?;
    for (b, d) in panel.blocks().iter().zip(panel.data()) {
        for (j, s) in panel.stations().iter().enumerate() {
            for t in 0..panel.hours() {
                let avail = d.mask()[(t, j)];
                let value = if avail { format!("{}", d.values()[(t, j)]) } else { String::new() };
                wtr.write_record([
                    b.index.to_string(),
                    t.to_string(),
                    s.id.clone(),
                    value,
                    u8::from(avail).to_string(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_sidecar(panel: &Panel) -> Result<String> {
    let sc = Sidecar {
        source: panel.source(),
        hours: panel.hours(),
        transform: panel.transform().copied(),
        block_starts: panel.blocks().iter().map(|b| b.start).collect(),
        stations: panel.stations().to_vec(),
    };
    toml::to_string(&sc).map_err(|e| Error::InvalidInput(format!("panel metadata: {e}")))
}

/// Rebuild a panel from its CSV values and sidecar text. Rows may come in
/// any order; entries without a row are masked.
pub fn read_panel(values: impl Read, sidecar: &str) -> Result<Panel> {
    let sc: Sidecar = toml::from_str(sidecar).map_err(|e| Error::parse("panel metadata", e.to_string()))?;
    let (h, n_st, k) = (sc.hours, sc.stations.len(), sc.block_starts.len());
    let col: HashMap<&str, usize> = sc.stations.iter().enumerate().map(|(j, s)| (s.id.as_str(), j)).collect();
    let mut vals = vec![DMatrix::zeros(h, n_st); k];
    let mut mask = vec![DMatrix::from_element(h, n_st, false); k];
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(values);
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let ctx = || format!("panel row {}", line + 2);
        let field = |i: usize| row.get(i).ok_or_else(|| Error::parse(ctx(), format!("missing column {}", i + 1)));
        let day: usize = field(0)?.parse().map_err(|_| Error::parse(ctx(), "bad day"))?;
        let hour: usize = field(1)?.parse().map_err(|_| Error::parse(ctx(), "bad hour"))?;
        let j = *col
            .get(field(2)?)
            .ok_or_else(|| Error::parse(ctx(), format!("unknown station {}", &row[2])))?;
        if day == 0 || day > k || hour >= h {
            return Err(Error::parse(ctx(), format!("day {day} hour {hour} out of range")));
        }
        let avail = match field(4)? {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Error::parse(ctx(), format!("bad availability flag {other}"))),
        };
        if avail {
            let v: f64 = field(3)?.parse().map_err(|_| Error::parse(ctx(), "bad value"))?;
            vals[day - 1][(hour, j)] = v;
            mask[day - 1][(hour, j)] = true;
        }
    }
    let blocks = sc
        .block_starts
        .iter()
        .enumerate()
        .map(|(i, &start)| DayBlock { index: i + 1, start })
        .collect();
    let data = vals
        .into_iter()
        .zip(mask)
        .map(|(v, m)| BlockData::new(v, m))
        .collect::<Result<_>>()?;
    Panel::new(sc.source, sc.stations, blocks, data, sc.transform)
}

/// Write `path` (CSV) and its sidecar.
pub fn save_panel(panel: &Panel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_values(panel, &mut buf)?;
    fs::write(path, buf)?;
    fs::write(sidecar_path(path), write_sidecar(panel)?)?;
    Ok(())
}

pub fn load_panel(path: &Path) -> Result<Panel> {
    let sidecar = fs::read_to_string(sidecar_path(path))?;
    read_panel(fs::File::open(path)?, &sidecar)
}
