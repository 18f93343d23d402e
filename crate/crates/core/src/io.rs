//! CSV artifacts: sampled processes, per-coordinate way-points and atomic
//! measures.
//!
//! Every file has a header line. Floats are written with Rust's shortest
//! round-trip formatting, so reading a file back reproduces the values
//! bit for bit.
//!
//! | file     | header                   |
//! |----------|--------------------------|
//! | process  | `time,u1..um,x1..xn`     |
//! | series   | `coord,time,value,weight`|
//! | atoms    | `<coord names>,weight`   |

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::moments::Coord;
use crate::oracle::SampledProcess;
use crate::reconstruct::{AtomicMeasure, CoordinateSeries, WayPoint};

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            column: 0,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_float(s: &str, line: usize, column: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        column,
        message: format!("not a number: {s:?}"),
    })
}

fn header_error(message: impl Into<String>) -> Error {
    Error::Parse {
        line: 1,
        column: 0,
        message: message.into(),
    }
}

/// Records after the header, each with its 1-based line number.
fn records<R: Read>(r: R) -> Result<(Vec<String>, Vec<(usize, csv::StringRecord)>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec));
    }
    Ok((header, rows))
}

fn floats(rec: &csv::StringRecord, line: usize, skip: usize) -> Result<Vec<f64>> {
    rec.iter()
        .enumerate()
        .skip(skip)
        .map(|(c, s)| parse_float(s, line, c + 1))
        .collect()
}

pub fn write_process<W: Write>(w: W, p: &SampledProcess) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["time".to_string()];
    header.extend((0..p.n_controls()).map(|k| Coord::Control(k).name()));
    header.extend((0..p.n_states()).map(|j| Coord::State(j).name()));
    wtr.write_record(&header).map_err(csv_error)?;
    for k in 0..p.len() {
        wtr.write_record(p.point(k).iter().map(f64::to_string))
            .map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a process CSV. Control columns must precede state columns, each
/// group numbered from 1.
pub fn read_process<R: Read>(r: R) -> Result<SampledProcess> {
    let (header, rows) = records(r)?;
    if header.first().map(String::as_str) != Some("time") {
        return Err(header_error("first column must be `time`"));
    }
    let coords: Vec<Coord> = header[1..]
        .iter()
        .map(|h| Coord::parse(h).ok_or_else(|| header_error(format!("unknown column {h:?}"))))
        .collect::<Result<_>>()?;
    let m = coords.iter().filter(|c| matches!(c, Coord::Control(_))).count();
    let expected: Vec<Coord> = (0..m)
        .map(Coord::Control)
        .chain((0..coords.len() - m).map(Coord::State))
        .collect();
    if coords != expected {
        return Err(header_error("columns must be time, u1..um, x1..xn"));
    }
    let mut times = Vec::with_capacity(rows.len());
    let mut controls = Vec::with_capacity(rows.len());
    let mut states = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let v = floats(rec, *line, 0)?;
        times.push(v[0]);
        controls.push(v[1..1 + m].to_vec());
        states.push(v[1 + m..].to_vec());
    }
    SampledProcess::new(times, controls, states)
}

/// One row of a series file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub coord: Coord,
    pub point: WayPoint,
}

pub fn write_series<W: Write>(w: W, series: &[CoordinateSeries]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["coord", "time", "value", "weight"])
        .map_err(csv_error)?;
    for s in series {
        for p in &s.points {
            wtr.write_record([
                s.coord.name(),
                p.time.to_string(),
                p.value.to_string(),
                p.weight.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_series<R: Read>(r: R) -> Result<Vec<SeriesRow>> {
    let (header, rows) = records(r)?;
    if header != ["coord", "time", "value", "weight"] {
        return Err(header_error("expected header coord,time,value,weight"));
    }
    rows.iter()
        .map(|(line, rec)| {
            let coord = Coord::parse(&rec[0]).ok_or_else(|| Error::Parse {
                line: *line,
                column: 1,
                message: format!("unknown coordinate {:?}", &rec[0]),
            })?;
            let v = floats(rec, *line, 1)?;
            Ok(SeriesRow {
                coord,
                point: WayPoint {
                    time: v[0],
                    value: v[1],
                    weight: v[2],
                },
            })
        })
        .collect()
}

/// Atoms with positive weight, one row each, in grid order.
pub fn write_atoms<W: Write>(w: W, mu: &AtomicMeasure) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = mu.grid.coords().iter().map(|c| c.name()).collect();
    header.push("weight".into());
    wtr.write_record(&header).map_err(csv_error)?;
    for (z, wgt) in mu.atoms().filter(|(_, w)| *w > 0.0) {
        wtr.write_record(z.iter().chain(std::iter::once(&wgt)).map(f64::to_string))
            .map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Atoms read back from an atoms CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomTable {
    pub coords: Vec<Coord>,
    pub atoms: Vec<(Vec<f64>, f64)>,
}

pub fn read_atoms<R: Read>(r: R) -> Result<AtomTable> {
    let (header, rows) = records(r)?;
    if header.last().map(String::as_str) != Some("weight") || header.len() < 2 {
        return Err(header_error("last column must be `weight`"));
    }
    let coords = header[..header.len() - 1]
        .iter()
        .map(|h| Coord::parse(h).ok_or_else(|| header_error(format!("unknown column {h:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let atoms = rows
        .iter()
        .map(|(line, rec)| {
            let mut v = floats(rec, *line, 0)?;
            let w = v.pop().expect("checked width");
            Ok((v, w))
        })
        .collect::<Result<_>>()?;
    Ok(AtomTable { coords, atoms })
}

pub fn save_process(path: &Path, p: &SampledProcess) -> Result<()> {
    write_process(File::create(path)?, p)
}

pub fn load_process(path: &Path) -> Result<SampledProcess> {
    read_process(File::open(path)?)
}

pub fn save_series(path: &Path, series: &[CoordinateSeries]) -> Result<()> {
    write_series(File::create(path)?, series)
}

pub fn load_series(path: &Path) -> Result<Vec<SeriesRow>> {
    read_series(File::open(path)?)
}

pub fn save_atoms(path: &Path, mu: &AtomicMeasure) -> Result<()> {
    write_atoms(File::create(path)?, mu)
}

pub fn load_atoms(path: &Path) -> Result<AtomTable> {
    read_atoms(File::open(path)?)
}
