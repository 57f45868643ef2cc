//! CSV ingest and export for traffic series and service catalogs.
//!
//! Traffic rows: `timestamp_utc,antenna_id,lon,lat,service_id,bytes_up,bytes_down`
//! with ISO-8601 timestamps on 5-minute boundaries. Lines starting with
//! `#` are comments. Uplink and downlink are merged on ingest; duplicate
//! `(timestamp, antenna, service)` rows accumulate.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};

use super::{AntennaLocation, ServiceDesc, TrafficSeries, BIN_MINUTES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TRAFFIC_HEADER: &str = "timestamp_utc,antenna_id,lon,lat,service_id,bytes_up,bytes_down";
pub const CATALOG_HEADER: &str = "service_id,service_name,category";

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Read a traffic CSV into a dense, time-sorted series. Row order in the
/// file does not matter; antennas and services are indexed in sorted id
/// order, so any permutation of the rows ingests identically.
pub fn ingest_csv(path: &Path) -> Result<TrafficSeries> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);

    struct Row {
        when: DateTime<Utc>,
        antenna: String,
        lon: f64,
        lat: f64,
        service: String,
        volume: f64,
    }

    let mut rows: Vec<Row> = Vec::new();
    let mut saw_header = false;
    let mut stamp_cache: HashMap<String, DateTime<Utc>> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != TRAFFIC_HEADER {
                return Err(parse_err(lineno, format!("expected header {TRAFFIC_HEADER:?}")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(parse_err(lineno, format!("expected 7 fields, found {}", fields.len())));
        }
        let when = match stamp_cache.get(fields[0]) {
            Some(&t) => t,
            None => {
                let t = DateTime::parse_from_rfc3339(fields[0])
                    .map_err(|e| parse_err(lineno, format!("bad timestamp {:?}: {e}", fields[0])))?
                    .with_timezone(&Utc);
                if t.timestamp() % (BIN_MINUTES * 60) != 0 {
                    return Err(parse_err(
                        lineno,
                        format!("timestamp {:?} is not on a {BIN_MINUTES}-minute boundary", fields[0]),
                    ));
                }
                stamp_cache.insert(fields[0].to_string(), t);
                t
            }
        };
        let number = |i: usize, what: &str| -> Result<f64> {
            let v: f64 = fields[i]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad {what} {:?}", fields[i])))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite {what}")));
            }
            Ok(v)
        };
        let up = number(5, "bytes_up")?;
        let down = number(6, "bytes_down")?;
        if up < 0.0 || down < 0.0 {
            return Err(parse_err(lineno, "negative byte count"));
        }
        rows.push(Row {
            when,
            antenna: fields[1].to_string(),
            lon: number(2, "longitude")?,
            lat: number(3, "latitude")?,
            service: fields[4].to_string(),
            volume: up + down,
        });
    }
    if !saw_header {
        return Err(parse_err(0, "file has no header row"));
    }
    if rows.is_empty() {
        return Err(parse_err(0, "file has no data rows"));
    }

    let mut antennas: Vec<AntennaLocation> = Vec::new();
    for row in &rows {
        match antennas.iter().find(|a| a.id == row.antenna) {
            None => antennas.push(AntennaLocation {
                id: row.antenna.clone(),
                lon: row.lon,
                lat: row.lat,
            }),
            Some(a) if a.lon != row.lon || a.lat != row.lat => {
                return Err(Error::contract(format!(
                    "antenna {} appears at two positions",
                    row.antenna
                )));
            }
            Some(_) => {}
        }
    }
    antennas.sort_by(|a, b| a.id.cmp(&b.id));
    let mut service_ids: Vec<String> = rows.iter().map(|r| r.service.clone()).collect();
    service_ids.sort();
    service_ids.dedup();

    let mut stamps: Vec<DateTime<Utc>> = rows.iter().map(|r| r.when).collect();
    stamps.sort();
    stamps.dedup();
    let start = stamps[0];
    let step = Duration::minutes(BIN_MINUTES);
    for (i, pair) in stamps.windows(2).enumerate() {
        if pair[1] - pair[0] != step {
            return Err(Error::Gap(format!(
                "expected bin {} at position {}, found {}",
                (pair[0] + step).to_rfc3339(),
                i + 1,
                pair[1].to_rfc3339()
            )));
        }
    }
    let bins = stamps.len();

    let antenna_index: HashMap<&str, usize> =
        antennas.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect();
    let service_index: HashMap<&str, usize> =
        service_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n_s = service_ids.len();
    let n_a = antennas.len();
    let mut volumes = Tensor::zeros(&[bins, n_s, n_a]);
    for row in &rows {
        let t = ((row.when - start).num_minutes() / BIN_MINUTES) as usize;
        let s = service_index[row.service.as_str()];
        let a = antenna_index[row.antenna.as_str()];
        volumes.data_mut()[(t * n_s + s) * n_a + a] += row.volume;
    }

    let series = TrafficSeries {
        start,
        antennas,
        services: service_ids
            .into_iter()
            .map(|id| ServiceDesc { id: id.clone(), name: id, category: "miscellaneous".into() })
            .collect(),
        volumes,
    };
    series.validate()?;
    Ok(series)
}

/// Write a series back out in the ingest format. Uplink and downlink are
/// merged on ingest, so the full volume is written as `bytes_down` with
/// `bytes_up` zero; `header_comments` lines are emitted first, prefixed
/// with `#`.
pub fn write_series_csv(series: &TrafficSeries, path: &Path, header_comments: &[String]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for line in header_comments {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "{TRAFFIC_HEADER}")?;
    for t in 0..series.bins() {
        let stamp = series.timestamp(t).format("%Y-%m-%dT%H:%M:%SZ").to_string();
        for (a, ant) in series.antennas.iter().enumerate() {
            for (s, svc) in series.services.iter().enumerate() {
                writeln!(
                    out,
                    "{stamp},{},{},{},{},0,{}",
                    ant.id,
                    ant.lon,
                    ant.lat,
                    svc.id,
                    series.volume(t, s, a)
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a service catalog: `service_id,service_name,category`.
pub fn load_catalog(path: &Path) -> Result<Vec<ServiceDesc>> {
    let reader = BufReader::new(File::open(path)?);
    let mut services = Vec::new();
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != CATALOG_HEADER {
                return Err(parse_err(lineno, format!("expected header {CATALOG_HEADER:?}")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(lineno, format!("expected 3 fields, found {}", fields.len())));
        }
        if !super::CATEGORIES.contains(&fields[2]) {
            return Err(parse_err(lineno, format!("unknown category {:?}", fields[2])));
        }
        if services.iter().any(|s: &ServiceDesc| s.id == fields[0]) {
            return Err(parse_err(lineno, format!("duplicate service id {:?}", fields[0])));
        }
        services.push(ServiceDesc {
            id: fields[0].to_string(),
            name: fields[1].to_string(),
            category: fields[2].to_string(),
        });
    }
    if services.is_empty() {
        return Err(parse_err(0, "catalog has no services"));
    }
    Ok(services)
}

pub fn write_catalog_csv(services: &[ServiceDesc], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{CATALOG_HEADER}")?;
    for s in services {
        writeln!(out, "{},{},{}", s.id, s.name, s.category)?;
    }
    out.flush()?;
    Ok(())
}
