//! CSV readers and writers for spectra, decay records, saturation curves and
//! plot exports.
//!
//! Files carry a header row, may contain `#` comment lines and surrounding
//! whitespace. Floats are written with Rust's shortest round-trip formatting,
//! so a write followed by a read is lossless.

use std::io::{Read, Write};
use std::path::Path;

use super::IoError;
use crate::fit::SaturationCurve;
use crate::synth::{DecayKind, DecayRecord, OdmrSpectrum};

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source)
}

fn open(path: &Path) -> Result<std::fs::File, IoError> {
    std::fs::File::open(path).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<std::fs::File, IoError> {
    std::fs::File::create(path).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))
}

fn csv_error(e: csv::Error) -> IoError {
    let line = e.position().map(|p| p.line());
    match line {
        Some(line) => IoError::Row {
            line,
            message: e.to_string(),
        },
        None => IoError::Io(e.to_string()),
    }
}

/// Reads a table whose header must be `required` optionally followed by
/// `optional`. Returns one column vector per header field present.
fn read_columns<R: Read>(
    source: R,
    required: &[&str],
    optional: &[&str],
) -> Result<Vec<Vec<f64>>, IoError> {
    let mut rdr = reader(source);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    let expected_min = required.len();
    let ok_names = header.len() >= expected_min
        && header.len() <= expected_min + optional.len()
        && header
            .iter()
            .zip(required.iter().chain(optional))
            .all(|(h, e)| h == e);
    if !ok_names {
        let mut expected = required.join(",");
        if !optional.is_empty() {
            expected.push_str(&format!("[,{}]", optional.join(",")));
        }
        return Err(IoError::Header {
            expected,
            found: header.join(","),
        });
    }
    let width = header.len();
    let mut columns = vec![Vec::new(); width];
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(IoError::Row {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (k, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| IoError::Row {
                line,
                message: format!("{}: cannot parse '{field}' as a number", header[k]),
            })?;
            if !value.is_finite() {
                return Err(IoError::Row {
                    line,
                    message: format!("{}: value must be finite", header[k]),
                });
            }
            columns[k].push(value);
        }
        if let Some(prev) = columns[0].len().checked_sub(2).map(|i| columns[0][i]) {
            if columns[0][columns[0].len() - 1] <= prev {
                return Err(IoError::Row {
                    line,
                    message: format!("{} must be strictly increasing", header[0]),
                });
            }
        }
    }
    if columns[0].is_empty() {
        return Err(IoError::Empty);
    }
    Ok(columns)
}

fn write_rows<W: Write>(sink: W, header: &[&str], columns: &[&[f64]]) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record(header)
        .map_err(|e| IoError::Io(e.to_string()))?;
    let n = columns.first().map_or(0, |c| c.len());
    for i in 0..n {
        wtr.write_record(columns.iter().map(|c| c[i].to_string()))
            .map_err(|e| IoError::Io(e.to_string()))?;
    }
    wtr.flush().map_err(|e| IoError::Io(e.to_string()))
}

/// `freq_mhz,pl_norm[,counts]`
pub fn read_odmr<R: Read>(source: R) -> Result<OdmrSpectrum, IoError> {
    let mut cols = read_columns(source, &["freq_mhz", "pl_norm"], &["counts"])?;
    let counts = if cols.len() == 3 { cols.pop() } else { None };
    let pl = cols.pop().unwrap_or_default();
    let freqs = cols.pop().unwrap_or_default();
    OdmrSpectrum::new(freqs, pl, counts).map_err(|e| IoError::Data(e.to_string()))
}

pub fn read_odmr_file(path: &Path) -> Result<OdmrSpectrum, IoError> {
    read_odmr(open(path)?).map_err(|e| e.in_file(path))
}

pub fn write_odmr<W: Write>(sink: W, spectrum: &OdmrSpectrum) -> Result<(), IoError> {
    match &spectrum.counts_per_point {
        Some(c) => write_rows(
            sink,
            &["freq_mhz", "pl_norm", "counts"],
            &[&spectrum.freqs_mhz, &spectrum.pl_norm, c],
        ),
        None => write_rows(
            sink,
            &["freq_mhz", "pl_norm"],
            &[&spectrum.freqs_mhz, &spectrum.pl_norm],
        ),
    }
}

pub fn write_odmr_file(path: &Path, spectrum: &OdmrSpectrum) -> Result<(), IoError> {
    write_odmr(create(path)?, spectrum)
}

/// `time_us,signal`
pub fn read_decay<R: Read>(source: R, kind: DecayKind) -> Result<DecayRecord, IoError> {
    let mut cols = read_columns(source, &["time_us", "signal"], &[])?;
    let signal = cols.pop().unwrap_or_default();
    let times = cols.pop().unwrap_or_default();
    DecayRecord::new(times, signal, kind).map_err(|e| IoError::Data(e.to_string()))
}

pub fn read_decay_file(path: &Path, kind: DecayKind) -> Result<DecayRecord, IoError> {
    read_decay(open(path)?, kind).map_err(|e| e.in_file(path))
}

pub fn write_decay<W: Write>(sink: W, record: &DecayRecord) -> Result<(), IoError> {
    write_rows(
        sink,
        &["time_us", "signal"],
        &[&record.times_us, &record.signal],
    )
}

pub fn write_decay_file(path: &Path, record: &DecayRecord) -> Result<(), IoError> {
    write_decay(create(path)?, record)
}

/// `power_mw,rate_hz`
pub fn read_saturation<R: Read>(source: R) -> Result<SaturationCurve, IoError> {
    let mut cols = read_columns(source, &["power_mw", "rate_hz"], &[])?;
    let rates = cols.pop().unwrap_or_default();
    let powers = cols.pop().unwrap_or_default();
    SaturationCurve::new(powers, rates).map_err(|e| IoError::Data(e.to_string()))
}

pub fn read_saturation_file(path: &Path) -> Result<SaturationCurve, IoError> {
    read_saturation(open(path)?).map_err(|e| e.in_file(path))
}

/// Plot export: x, data, model and residual (data − model) columns.
pub fn write_plot<W: Write>(
    sink: W,
    x_name: &str,
    x: &[f64],
    data: &[f64],
    model: &[f64],
) -> Result<(), IoError> {
    if data.len() != x.len() || model.len() != x.len() {
        return Err(IoError::Data("plot columns differ in length".into()));
    }
    let residual: Vec<f64> = data.iter().zip(model).map(|(d, m)| d - m).collect();
    write_rows(
        sink,
        &[x_name, "data", "model", "residual"],
        &[x, data, model, &residual],
    )
}

pub fn write_plot_file(
    path: &Path,
    x_name: &str,
    x: &[f64],
    data: &[f64],
    model: &[f64],
) -> Result<(), IoError> {
    write_plot(create(path)?, x_name, x, data, model)
}
