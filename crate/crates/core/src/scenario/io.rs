//! On-disk scenario layout.
//!
//! | file            | columns                                                       |
//! |-----------------|---------------------------------------------------------------|
//! | `scenario.json` | format version, config, subdomain tiles, plume parameters     |
//! | `sources.csv`   | `source_id,subdomain_id,x0,y0,x1,y1`                          |
//! | `receptors.csv` | `subdomain_id,receptor_id,x,y`                                |
//! | `traffic.csv`   | `timestamp,source_id,volume_veh_h`                            |
//! | `weather.csv`   | `timestamp,wind_speed_ms,wind_dir_rad,wind_dir_std_rad,temp_c`|
//! | `labels.csv`    | `pollutant,subdomain_id,receptor_id,timestamp,conc_ug_m3`     |
//!
//! Floats are written with Rust's shortest round-trip formatting, so an
//! export followed by an ingest reproduces every value bit for bit.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Scenario, ScenarioConfig, ScenarioError, HOUR};
use crate::geometry::{BBox, BoundaryRef, Point, Segment, Subdomain};
use crate::plume::{PlumeParams, WeatherSample};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

const SOURCES: &str = "sources.csv";
const RECEPTORS: &str = "receptors.csv";
const TRAFFIC: &str = "traffic.csv";
const WEATHER: &str = "weather.csv";
const LABELS: &str = "labels.csv";
const MANIFEST: &str = "scenario.json";

#[derive(Serialize, Deserialize)]
struct Tile {
    id: usize,
    bbox: BBox,
    boundary_refs: Vec<BoundaryRef>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ScenarioConfig,
    subdomains: Vec<Tile>,
    plume_params: Vec<PlumeParams>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io { path: path.display().to_string(), source }
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>, ScenarioError> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(io_err(&path))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn csv_err(file: &str) -> impl FnOnce(csv::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Csv { file: file.to_string(), source }
}

pub fn export_csv(scn: &Scenario, dir: &Path) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let manifest = Manifest {
        format_version: SCENARIO_FORMAT_VERSION,
        config: scn.config.clone(),
        subdomains: scn
            .subdomains
            .iter()
            .map(|s| Tile { id: s.id, bbox: s.bbox, boundary_refs: s.boundary_refs.clone() })
            .collect(),
        plume_params: scn.plume_params.clone(),
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).map_err(|source| ScenarioError::Json { file: MANIFEST.into(), source })?;
    fs::write(&path, json + "\n").map_err(io_err(&path))?;

    let mut w = writer(dir, SOURCES)?;
    w.write_record(["source_id", "subdomain_id", "x0", "y0", "x1", "y1"]).map_err(csv_err(SOURCES))?;
    for sub in &scn.subdomains {
        for &id in &sub.line_sources {
            let s = scn.sources[id];
            w.write_record(&[
                id.to_string(),
                sub.id.to_string(),
                s.start.x.to_string(),
                s.start.y.to_string(),
                s.end.x.to_string(),
                s.end.y.to_string(),
            ])
            .map_err(csv_err(SOURCES))?;
        }
    }
    w.flush().map_err(io_err(dir))?;

    let mut w = writer(dir, RECEPTORS)?;
    w.write_record(["subdomain_id", "receptor_id", "x", "y"]).map_err(csv_err(RECEPTORS))?;
    for sub in &scn.subdomains {
        for (i, p) in sub.receptors.iter().enumerate() {
            w.write_record(&[sub.id.to_string(), i.to_string(), p.x.to_string(), p.y.to_string()])
                .map_err(csv_err(RECEPTORS))?;
        }
    }
    w.flush().map_err(io_err(dir))?;

    let mut w = writer(dir, TRAFFIC)?;
    w.write_record(["timestamp", "source_id", "volume_veh_h"]).map_err(csv_err(TRAFFIC))?;
    for (t, ts) in scn.timestamps.iter().enumerate() {
        for id in 0..scn.sources.len() {
            w.write_record(&[ts.to_string(), id.to_string(), scn.traffic[[t, id]].to_string()])
                .map_err(csv_err(TRAFFIC))?;
        }
    }
    w.flush().map_err(io_err(dir))?;

    let mut w = writer(dir, WEATHER)?;
    w.write_record(["timestamp", "wind_speed_ms", "wind_dir_rad", "wind_dir_std_rad", "temp_c"])
        .map_err(csv_err(WEATHER))?;
    for (ts, ws) in scn.timestamps.iter().zip(&scn.weather) {
        w.write_record(&[
            ts.to_string(),
            ws.wind_speed.to_string(),
            ws.wind_dir.to_string(),
            ws.wind_dir_std.to_string(),
            ws.temperature.to_string(),
        ])
        .map_err(csv_err(WEATHER))?;
    }
    w.flush().map_err(io_err(dir))?;

    let mut w = writer(dir, LABELS)?;
    w.write_record(["pollutant", "subdomain_id", "receptor_id", "timestamp", "conc_ug_m3"]).map_err(csv_err(LABELS))?;
    for (p, per_sub) in scn.labels.iter().enumerate() {
        let name = &scn.config.pollutants[p].name;
        for (m, y) in per_sub.iter().enumerate() {
            for i in 0..y.ncols() {
                for (t, ts) in scn.timestamps.iter().enumerate() {
                    w.write_record(&[name.clone(), m.to_string(), i.to_string(), ts.to_string(), y[[t, i]].to_string()])
                        .map_err(csv_err(LABELS))?;
                }
            }
        }
    }
    w.flush().map_err(io_err(dir))?;
    Ok(())
}

/// Header-checked CSV reader that reports row/column diagnostics.
struct Table {
    file: String,
    columns: Vec<usize>,
    names: &'static [&'static str],
    reader: csv::Reader<File>,
}

impl Table {
    fn open(dir: &Path, file: &str, names: &'static [&'static str]) -> Result<Self, ScenarioError> {
        let path = dir.join(file);
        let f = File::open(&path).map_err(io_err(&path))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
        let headers = reader.headers().map_err(csv_err(file))?.clone();
        let columns = names
            .iter()
            .map(|n| {
                headers.iter().position(|h| h == *n).ok_or_else(|| ScenarioError::MissingColumn {
                    file: file.to_string(),
                    column: n.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { file: file.to_string(), columns, names, reader })
    }

    /// Visits each record as its selected fields; `row` is the 1-based data row.
    fn for_each(mut self, mut f: impl FnMut(usize, Row<'_>) -> Result<(), ScenarioError>) -> Result<(), ScenarioError> {
        let mut record = csv::StringRecord::new();
        let mut row = 0;
        while self.reader.read_record(&mut record).map_err(csv_err(&self.file))? {
            row += 1;
            f(row, Row { table: &self, record: &record, row })?;
        }
        Ok(())
    }
}

struct Row<'a> {
    table: &'a Table,
    record: &'a csv::StringRecord,
    row: usize,
}

impl Row<'_> {
    fn raw(&self, k: usize) -> Result<&str, ScenarioError> {
        self.record.get(self.table.columns[k]).ok_or_else(|| self.field_err(k, "missing field".into()))
    }

    fn field_err(&self, k: usize, message: String) -> ScenarioError {
        ScenarioError::Field {
            file: self.table.file.clone(),
            row: self.row,
            column: self.table.names[k].to_string(),
            message,
        }
    }

    fn f64(&self, k: usize) -> Result<f64, ScenarioError> {
        let s = self.raw(k)?;
        let v: f64 = s.parse().map_err(|e| self.field_err(k, format!("`{s}` is not a number ({e})")))?;
        if !v.is_finite() {
            return Err(self.field_err(k, format!("non-finite value `{s}`")));
        }
        Ok(v)
    }

    fn usize(&self, k: usize) -> Result<usize, ScenarioError> {
        let s = self.raw(k)?;
        s.parse().map_err(|e| self.field_err(k, format!("`{s}` is not a nonnegative integer ({e})")))
    }

    fn i64(&self, k: usize) -> Result<i64, ScenarioError> {
        let s = self.raw(k)?;
        s.parse().map_err(|e| self.field_err(k, format!("`{s}` is not an integer ({e})")))
    }
}

fn schema(file: &str, message: String) -> ScenarioError {
    ScenarioError::Schema { file: file.to_string(), message }
}

/// Reads weather and timestamps; the series must be hourly and strictly increasing.
pub fn read_weather(dir: &Path) -> Result<(Vec<i64>, Vec<WeatherSample>), ScenarioError> {
    let table =
        Table::open(dir, WEATHER, &["timestamp", "wind_speed_ms", "wind_dir_rad", "wind_dir_std_rad", "temp_c"])?;
    let mut timestamps: Vec<i64> = Vec::new();
    let mut weather = Vec::new();
    table.for_each(|_, r| {
        let ts = r.i64(0)?;
        let w = WeatherSample { wind_speed: r.f64(1)?, wind_dir: r.f64(2)?, wind_dir_std: r.f64(3)?, temperature: r.f64(4)? };
        w.validate().map_err(|e| r.field_err(1, e.to_string()))?;
        timestamps.push(ts);
        weather.push(w);
        Ok(())
    })?;
    if timestamps.is_empty() {
        return Err(schema(WEATHER, "no rows".into()));
    }
    // Ordering is checked over the whole column before the stride.
    if let Some(k) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
        return Err(ScenarioError::TimestampsNotIncreasing { file: WEATHER.into(), row: k + 2 });
    }
    if let Some(k) = timestamps.windows(2).position(|w| w[1] - w[0] != HOUR) {
        return Err(ScenarioError::Field {
            file: WEATHER.into(),
            row: k + 2,
            column: "timestamp".into(),
            message: format!("expected hourly stride, got {} s", timestamps[k + 1] - timestamps[k]),
        });
    }
    Ok((timestamps, weather))
}

/// Reads a `[T x n_sources]` traffic matrix aligned to `timestamps`.
pub fn read_traffic(dir: &Path, timestamps: &[i64], n_sources: usize) -> Result<Array2<f64>, ScenarioError> {
    let index: HashMap<i64, usize> = timestamps.iter().enumerate().map(|(t, &ts)| (ts, t)).collect();
    let table = Table::open(dir, TRAFFIC, &["timestamp", "source_id", "volume_veh_h"])?;
    let mut traffic = Array2::from_elem((timestamps.len(), n_sources), f64::NAN);
    let mut last_ts = i64::MIN;
    table.for_each(|row, r| {
        let ts = r.i64(0)?;
        if ts < last_ts {
            return Err(ScenarioError::TimestampsNotIncreasing { file: TRAFFIC.into(), row });
        }
        last_ts = ts;
        let t = *index.get(&ts).ok_or_else(|| r.field_err(0, format!("timestamp {ts} not in weather series")))?;
        let id = r.usize(1)?;
        if id >= n_sources {
            return Err(r.field_err(1, format!("unknown source {id}")));
        }
        let v = r.f64(2)?;
        if v < 0.0 {
            return Err(r.field_err(2, format!("negative volume {v}")));
        }
        if !traffic[[t, id]].is_nan() {
            return Err(r.field_err(1, format!("duplicate entry for source {id} at {ts}")));
        }
        traffic[[t, id]] = v;
        Ok(())
    })?;
    if traffic.iter().any(|v| v.is_nan()) {
        return Err(schema(TRAFFIC, "missing (timestamp, source) entries".into()));
    }
    Ok(traffic)
}

pub fn ingest_csv(dir: &Path) -> Result<Scenario, ScenarioError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| ScenarioError::Json { file: MANIFEST.into(), source })?;
    if manifest.format_version != SCENARIO_FORMAT_VERSION {
        return Err(schema(MANIFEST, format!("unsupported format version {}", manifest.format_version)));
    }
    manifest.config.validate()?;
    let mut subdomains: Vec<Subdomain> = manifest
        .subdomains
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            if t.id != k {
                return Err(schema(MANIFEST, format!("subdomain ids must be 0..n in order (found {} at {k})", t.id)));
            }
            t.bbox.validate()?;
            Ok(Subdomain { id: t.id, bbox: t.bbox, line_sources: vec![], receptors: vec![], boundary_refs: t.boundary_refs })
        })
        .collect::<Result<_, ScenarioError>>()?;
    let n_sub = subdomains.len();
    if manifest.plume_params.len() != n_sub {
        return Err(schema(MANIFEST, "one plume parameter set per subdomain required".into()));
    }
    for p in &manifest.plume_params {
        p.validate()?;
    }

    let mut sources: Vec<Option<Segment>> = Vec::new();
    Table::open(dir, SOURCES, &["source_id", "subdomain_id", "x0", "y0", "x1", "y1"])?.for_each(|_, r| {
        let id = r.usize(0)?;
        let m = r.usize(1)?;
        if m >= n_sub {
            return Err(r.field_err(1, format!("unknown subdomain {m}")));
        }
        if id >= sources.len() {
            sources.resize(id + 1, None);
        }
        if sources[id].is_some() {
            return Err(r.field_err(0, format!("duplicate source {id}")));
        }
        let seg = Segment::new(Point::new(r.f64(2)?, r.f64(3)?), Point::new(r.f64(4)?, r.f64(5)?));
        if seg.start == seg.end {
            return Err(r.field_err(2, format!("source {id} has coincident endpoints")));
        }
        sources[id] = Some(seg);
        subdomains[m].line_sources.push(id);
        Ok(())
    })?;
    let sources: Vec<Segment> = sources
        .into_iter()
        .enumerate()
        .map(|(id, s)| s.ok_or_else(|| schema(SOURCES, format!("source ids must be contiguous; {id} missing"))))
        .collect::<Result<_, _>>()?;

    Table::open(dir, RECEPTORS, &["subdomain_id", "receptor_id", "x", "y"])?.for_each(|_, r| {
        let m = r.usize(0)?;
        let i = r.usize(1)?;
        if m >= n_sub {
            return Err(r.field_err(0, format!("unknown subdomain {m}")));
        }
        let sub = &mut subdomains[m];
        if i != sub.receptors.len() {
            return Err(r.field_err(1, format!("receptor ids must be contiguous per subdomain; expected {}", sub.receptors.len())));
        }
        let p = Point::new(r.f64(2)?, r.f64(3)?);
        if !sub.bbox.contains(p) {
            return Err(r.field_err(2, format!("receptor ({}, {}) outside subdomain {m}", p.x, p.y)));
        }
        sub.receptors.push(p);
        Ok(())
    })?;

    let (timestamps, weather) = read_weather(dir)?;
    let traffic = read_traffic(dir, &timestamps, sources.len())?;

    let t_index: HashMap<i64, usize> = timestamps.iter().enumerate().map(|(t, &ts)| (ts, t)).collect();
    let pollutants = &manifest.config.pollutants;
    let mut labels: Vec<Vec<Array2<f64>>> = pollutants
        .iter()
        .map(|_| subdomains.iter().map(|s| Array2::from_elem((timestamps.len(), s.receptors.len()), f64::NAN)).collect())
        .collect();
    Table::open(dir, LABELS, &["pollutant", "subdomain_id", "receptor_id", "timestamp", "conc_ug_m3"])?.for_each(|_, r| {
        let name = r.raw(0)?;
        let p = pollutants.iter().position(|p| p.name == name).ok_or_else(|| r.field_err(0, format!("unknown pollutant `{name}`")))?;
        let m = r.usize(1)?;
        if m >= n_sub {
            return Err(r.field_err(1, format!("unknown subdomain {m}")));
        }
        let i = r.usize(2)?;
        if i >= subdomains[m].receptors.len() {
            return Err(r.field_err(2, format!("unknown receptor {i}")));
        }
        let ts = r.i64(3)?;
        let t = *t_index.get(&ts).ok_or_else(|| r.field_err(3, format!("timestamp {ts} not in weather series")))?;
        let v = r.f64(4)?;
        if v < 0.0 {
            return Err(r.field_err(4, format!("negative concentration {v}")));
        }
        labels[p][m][[t, i]] = v;
        Ok(())
    })?;
    if labels.iter().flatten().any(|y| y.iter().any(|v| v.is_nan())) {
        return Err(schema(LABELS, "missing label entries".into()));
    }

    let scn = Scenario {
        config: manifest.config,
        subdomains,
        sources,
        timestamps,
        traffic,
        weather,
        plume_params: manifest.plume_params,
        labels,
    };
    scn.check_invariants()?;
    Ok(scn)
}
