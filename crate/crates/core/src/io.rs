//! Curve-sample CSV: the first record holds the grid abscissae, each further
//! record holds one curve's values on that grid. Comma separated, `.` decimal.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::func::{Grid, Sample};

pub fn read_sample<R: Read>(reader: R) -> Result<Sample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut grid_points: Option<Vec<f64>> = None;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("column {}: `{field}` is not a number", col + 1),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        match &grid_points {
            None => grid_points = Some(values),
            Some(g) => {
                if values.len() != g.len() {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected {} values, found {}", g.len(), values.len()),
                    });
                }
                if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Parse {
                        line,
                        message: format!("column {}: non-finite value", col + 1),
                    });
                }
                rows.push(values);
            }
        }
    }
    let points = grid_points.ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let grid = Grid::from_points(points).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if rows.is_empty() {
        return Err(Error::TooFewCurves {
            required: 1,
            actual: 0,
        });
    }
    Sample::from_rows(Arc::new(grid), rows)
}

pub fn read_sample_file(path: &Path) -> Result<Sample> {
    read_sample(File::open(path)?)
}

pub fn write_sample<W: Write>(writer: W, sample: &Sample) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(sample.grid().points().iter().map(|x| x.to_string()))?;
    for c in sample.curves() {
        wtr.write_record(c.values().iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_sample_file(path: &Path, sample: &Sample) -> Result<()> {
    write_sample(File::create(path)?, sample)
}

/// Writes named columns of equal length as CSV with a header row.
pub fn write_columns<W: Write>(writer: W, names: &[&str], columns: &[&[f64]]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(names)?;
    let rows = columns.first().map_or(0, |c| c.len());
    for i in 0..rows {
        wtr.write_record(columns.iter().map(|c| c[i].to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads the first column of a CSV of numbers; a non-numeric first row is
/// treated as a header.
pub fn read_values<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        let Some(field) = record.get(0).filter(|f| !f.is_empty()) else {
            continue;
        };
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    line,
                    message: format!("`{field}` is not a number"),
                })
            }
        }
    }
    Ok(out)
}
