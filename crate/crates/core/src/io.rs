//! CSV tables: datasets (`x1,...,xd,y`), covariate-only inputs, predictions,
//! trial records and per-cell summaries.
//!
//! Written tables start with a `# doma <version>` comment line; readers skip
//! any line starting with `#`.

use std::io::{Read, Write};

use crate::error::{DomaError, Result};
use crate::model::Dataset;
use crate::synth::{CellSummary, TrialRecord};

/// Comment line written atop every CSV output.
pub fn version_header() -> String {
    format!("# doma {}", env!("CARGO_PKG_VERSION"))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input)
}

fn parse_rows<R: Read>(input: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    DomaError::InvalidInput(format!("row {}: cannot parse `{field}` as a number", line + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Reads `x1,...,xd,y`. The last column is the target.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let (header, rows) = parse_rows(input)?;
    if header.len() < 2 {
        return Err(DomaError::InvalidInput(
            "dataset header needs at least one covariate column and a target column".into(),
        ));
    }
    let d = header.len() - 1;
    let mut x = Vec::with_capacity(rows.len() * d);
    let mut y = Vec::with_capacity(rows.len());
    for row in rows {
        x.extend_from_slice(&row[..d]);
        y.push(row[d]);
    }
    Dataset::from_flat(d, x, y)
}

/// Reads covariate rows (`x1,...,xd`, no target). Returns the dimension from
/// the header and the rows, which may be empty.
pub fn read_covariates<R: Read>(input: R) -> Result<(usize, Vec<Vec<f64>>)> {
    let (header, rows) = parse_rows(input)?;
    if header.is_empty() {
        return Err(DomaError::InvalidInput("covariate header is empty".into()));
    }
    Ok((header.len(), rows))
}

pub fn write_dataset<W: Write>(mut out: W, data: &Dataset) -> Result<()> {
    writeln!(out, "{}", version_header())?;
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=data.d()).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    wtr.write_record(&header)?;
    for (x, y) in data.rows().zip(data.targets()) {
        wtr.write_record(x.iter().chain(std::iter::once(y)).map(f64::to_string))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_covariates<W: Write>(mut out: W, d: usize, rows: &[Vec<f64>]) -> Result<()> {
    writeln!(out, "{}", version_header())?;
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record((1..=d).map(|i| format!("x{i}")))?;
    for row in rows {
        wtr.write_record(row.iter().map(f64::to_string))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_predictions<W: Write>(mut out: W, y_hat: &[f64]) -> Result<()> {
    writeln!(out, "{}", version_header())?;
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["y_hat"])?;
    for y in y_hat {
        wtr.write_record([y.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(input: R) -> Result<Vec<f64>> {
    let (_, rows) = parse_rows(input)?;
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

/// Columns `n,d,k1,k2,sigma_z,seed,init_kind,rel_error,nmse,iterations,converged`.
pub fn write_records<W: Write>(mut out: W, records: &[TrialRecord]) -> Result<()> {
    writeln!(out, "{}", version_header())?;
    let mut wtr = csv::Writer::from_writer(out);
    for r in records {
        wtr.serialize(r)?;
    }
    if records.is_empty() {
        wtr.write_record([
            "n",
            "d",
            "k1",
            "k2",
            "sigma_z",
            "seed",
            "init_kind",
            "rel_error",
            "nmse",
            "iterations",
            "converged",
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = reader(input);
    rdr.deserialize().map(|r| r.map_err(DomaError::from)).collect()
}

pub fn write_summary<W: Write>(mut out: W, summary: &[CellSummary]) -> Result<()> {
    writeln!(out, "{}", version_header())?;
    let mut wtr = csv::Writer::from_writer(out);
    for s in summary {
        wtr.serialize(s)?;
    }
    wtr.flush()?;
    Ok(())
}
