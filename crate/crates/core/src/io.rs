//! CSV formats shared by the simulator, tracker and evaluator.
//!
//! - measurements: `frame,x,y,r,g,b`
//! - ground truth: `frame,id,gx,gy`
//! - calibration: `px,py,gx,gy` (header optional)
//! - tracks: `frame,target_id,gx,gy,px,py`

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::coords::CalibrationPair;
use crate::error::{Error, Result};
use crate::foreground::{FrameMeasurements, Measurement};
use crate::metrics::TrackTable;
use crate::tracker::FrameResult;

fn malformed(path: &str, row: u64, message: impl Into<String>) -> Error {
    Error::MalformedCsv {
        path: path.to_string(),
        row,
        message: message.into(),
    }
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => malformed(path, row, format!("{kind:?}")),
    }
}

fn read_records<T: DeserializeOwned, R: Read>(reader: R, name: &str, header: &[&str]) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let found = rdr.headers().map_err(|e| csv_error(name, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(malformed(
            name,
            1,
            format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    rdr.deserialize().map(|r| r.map_err(|e| csv_error(name, e))).collect()
}

fn open(path: &Path) -> Result<File> {
    Ok(File::open(path)?)
}

#[derive(Deserialize)]
struct MeasurementRow {
    frame: u64,
    x: u32,
    y: u32,
    r: u8,
    g: u8,
    b: u8,
}

pub const MEASUREMENT_HEADER: [&str; 6] = ["frame", "x", "y", "r", "g", "b"];
pub const GROUND_TRUTH_HEADER: [&str; 4] = ["frame", "id", "gx", "gy"];
pub const TRACKS_HEADER: [&str; 6] = ["frame", "target_id", "gx", "gy", "px", "py"];

/// Reads measurement rows grouped by frame. Frames between the first and
/// last listed one that have no rows come back empty.
pub fn read_measurements_from<R: Read>(reader: R, name: &str) -> Result<Vec<FrameMeasurements>> {
    let rows: Vec<MeasurementRow> = read_records(reader, name, &MEASUREMENT_HEADER)?;
    let mut by_frame: BTreeMap<u64, Vec<Measurement>> = BTreeMap::new();
    for r in rows {
        by_frame.entry(r.frame).or_default().push(Measurement::new(r.x, r.y, [r.r, r.g, r.b]));
    }
    let (Some(&first), Some(&last)) = (by_frame.keys().next(), by_frame.keys().next_back()) else {
        return Ok(Vec::new());
    };
    Ok((first..=last)
        .map(|k| FrameMeasurements::new(k, by_frame.remove(&k).unwrap_or_default()))
        .collect())
}

pub fn read_measurements(path: &Path) -> Result<Vec<FrameMeasurements>> {
    read_measurements_from(open(path)?, &path.display().to_string())
}

pub fn write_measurements<W: Write>(out: W, frames: &[FrameMeasurements]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MEASUREMENT_HEADER).map_err(|e| csv_error("<out>", e))?;
    for f in frames {
        for m in &f.measurements {
            w.write_record([
                f.frame_index.to_string(),
                m.x.to_string(),
                m.y.to_string(),
                m.r.to_string(),
                m.g.to_string(),
                m.b.to_string(),
            ])
            .map_err(|e| csv_error("<out>", e))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct GroundTruthRow {
    frame: u64,
    id: u64,
    gx: f64,
    gy: f64,
}

pub fn read_ground_truth_from<R: Read>(reader: R, name: &str) -> Result<TrackTable> {
    let rows: Vec<GroundTruthRow> = read_records(reader, name, &GROUND_TRUTH_HEADER)?;
    Ok(crate::metrics::table_from_rows(rows.into_iter().map(|r| (r.frame, r.id, r.gx, r.gy))))
}

pub fn read_ground_truth(path: &Path) -> Result<TrackTable> {
    read_ground_truth_from(open(path)?, &path.display().to_string())
}

/// Writes `(frame, id, x, y)` rows in table order.
pub fn write_ground_truth<W: Write>(out: W, table: &TrackTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GROUND_TRUTH_HEADER).map_err(|e| csv_error("<out>", e))?;
    for (frame, objs) in table {
        for &(id, x, y) in objs {
            w.write_record([frame.to_string(), id.to_string(), fmt(x), fmt(y)])
                .map_err(|e| csv_error("<out>", e))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct TrackRow {
    frame: u64,
    target_id: u64,
    gx: f64,
    gy: f64,
    #[allow(dead_code)]
    px: f64,
    #[allow(dead_code)]
    py: f64,
}

/// Reads a tracks file as ground positions keyed by frame.
pub fn read_tracks_from<R: Read>(reader: R, name: &str) -> Result<TrackTable> {
    let rows: Vec<TrackRow> = read_records(reader, name, &TRACKS_HEADER)?;
    Ok(crate::metrics::table_from_rows(rows.into_iter().map(|r| (r.frame, r.target_id, r.gx, r.gy))))
}

pub fn read_tracks(path: &Path) -> Result<TrackTable> {
    read_tracks_from(open(path)?, &path.display().to_string())
}

pub fn write_tracks<W: Write>(out: W, results: &[FrameResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACKS_HEADER).map_err(|e| csv_error("<out>", e))?;
    for r in results {
        for e in &r.estimates {
            w.write_record([
                r.frame_index.to_string(),
                e.id.to_string(),
                fmt(e.ground.x),
                fmt(e.ground.y),
                fmt(e.pixel.x),
                fmt(e.pixel.y),
            ])
            .map_err(|e| csv_error("<out>", e))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `px,py,gx,gy` correspondences; a non-numeric first line is taken
/// as a header.
pub fn read_calibration_from<R: Read>(reader: R, name: &str) -> Result<Vec<CalibrationPair>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(name, e))?;
        let row = i as u64 + 1;
        let values: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match values {
            Ok(v) if v.len() == 4 => out.push(CalibrationPair::new(v[0], v[1], v[2], v[3])),
            Ok(v) => return Err(malformed(name, row, format!("expected 4 fields, found {}", v.len()))),
            Err(_) if row == 1 => continue,
            Err(e) => return Err(malformed(name, row, e.to_string())),
        }
    }
    Ok(out)
}

pub fn read_calibration(path: &Path) -> Result<Vec<CalibrationPair>> {
    read_calibration_from(open(path)?, &path.display().to_string())
}

pub fn write_calibration<W: Write>(out: W, pairs: &[CalibrationPair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["px", "py", "gx", "gy"]).map_err(|e| csv_error("<out>", e))?;
    for p in pairs {
        w.write_record([fmt(p.pixel.x), fmt(p.pixel.y), fmt(p.ground.x), fmt(p.ground.y)])
            .map_err(|e| csv_error("<out>", e))?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed six-decimal formatting used by every float column.
pub fn fmt(v: f64) -> String {
    format!("{v:.6}")
}
