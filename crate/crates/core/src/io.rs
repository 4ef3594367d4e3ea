//! CSV ingestion of observed datasets and fixed populations, and tidy CSV
//! output.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::design::CovariateMatrix;
use crate::error::{Error, Result};

/// Columns of a dataset file: `y`, `t`, then covariates in file order.
#[derive(Debug, Clone)]
pub struct DatasetTable {
    pub y: Vec<f64>,
    pub t: Vec<u8>,
    pub x: CovariateMatrix,
    pub covariate_names: Vec<String>,
}

/// Columns of a population file: `y1`, then covariates.
#[derive(Debug, Clone)]
pub struct PopulationTable {
    pub y1: Vec<f64>,
    pub x: CovariateMatrix,
    pub covariate_names: Vec<String>,
}

fn parse_cell(s: &str, line: u64, col: &str) -> Result<f64> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::Input(format!("line {line}: missing value in column '{col}'")));
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Input(format!("line {line}: cannot parse '{s}' in column '{col}'")))?;
    if !v.is_finite() {
        return Err(Error::Input(format!("line {line}: non-finite value in column '{col}'")));
    }
    Ok(v)
}

/// Parse a header-led numeric table whose leading columns are `lead`.
fn read_numeric<R: Read>(rdr: R, lead: &[&str]) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(rdr);
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for (k, want) in lead.iter().enumerate() {
        if headers.get(k).map(String::as_str) != Some(*want) {
            return Err(Error::Input(format!(
                "line 1: expected column {} to be '{want}', header is [{}]",
                k + 1,
                headers.join(",")
            )));
        }
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(Error::Input(format!(
                "line {line}: expected {} fields, found {}",
                headers.len(),
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .zip(&headers)
            .map(|(s, h)| parse_cell(s, line, h))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::Input(format!("need at least 2 data rows, found {}", rows.len())));
    }
    Ok((rows, headers))
}

fn covariates(rows: &[Vec<f64>], skip: usize) -> Result<CovariateMatrix> {
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r[skip..].to_vec()).collect();
    if x[0].is_empty() {
        CovariateMatrix::empty(rows.len())
    } else {
        CovariateMatrix::from_rows(&x)
    }
}

pub fn read_dataset_from<R: Read>(rdr: R) -> Result<DatasetTable> {
    let (rows, headers) = read_numeric(rdr, &["y", "t"])?;
    let mut t = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        match r[1] {
            0.0 => t.push(0),
            1.0 => t.push(1),
            v => {
                return Err(Error::Input(format!(
                    "line {}: treatment must be 0 or 1, found {v}",
                    k + 2
                )))
            }
        }
    }
    Ok(DatasetTable {
        y: rows.iter().map(|r| r[0]).collect(),
        t,
        x: covariates(&rows, 2)?,
        covariate_names: headers[2..].to_vec(),
    })
}

pub fn read_dataset(path: &Path) -> Result<DatasetTable> {
    read_dataset_from(File::open(path)?)
}

pub fn read_population_from<R: Read>(rdr: R) -> Result<PopulationTable> {
    let (rows, headers) = read_numeric(rdr, &["y1"])?;
    Ok(PopulationTable {
        y1: rows.iter().map(|r| r[0]).collect(),
        x: covariates(&rows, 1)?,
        covariate_names: headers[1..].to_vec(),
    })
}

pub fn read_population(path: &Path) -> Result<PopulationTable> {
    read_population_from(File::open(path)?)
}

/// One line of the estimate table: point estimate with both intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimator: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub se_conservative: Option<f64>,
    pub ci_lower_conservative: Option<f64>,
    pub ci_upper_conservative: Option<f64>,
}

/// Serialize rows with a header; floats use the shortest round-trip form.
pub fn write_csv_to<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_csv_to(File::create(path)?, rows)
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv_to(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Numerical(e.to_string()))
}

pub fn read_csv_from<R: Read, T: DeserializeOwned>(rdr: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(rdr);
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_csv_from(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_dataset() {
        let s = "y,t,x1,x2\n1.5,1,0.1,2\n2,0,0.3,1\n-1,1,0.2,0\n";
        let d = read_dataset_from(s.as_bytes()).unwrap();
        assert_eq!(d.t, vec![1, 0, 1]);
        assert_eq!(d.y, vec![1.5, 2.0, -1.0]);
        assert_eq!(d.x.p(), 2);
        assert_eq!(d.covariate_names, vec!["x1", "x2"]);
    }

    #[test]
    fn dataset_without_covariates() {
        let d = read_dataset_from("y,t\n1,1\n2,0\n".as_bytes()).unwrap();
        assert_eq!(d.x.p(), 0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = read_dataset_from("y,t,x1\n1,1,0\n2,0,\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = read_dataset_from("y,t,x1\n1,1,0\n2,2,1\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("line 3") && e.to_string().contains("0 or 1"), "{e}");
        let e = read_dataset_from("y,t,x1\n1,1,0\n2,abc,1\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = read_dataset_from("t,y\n1,1\n0,2\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
    }

    #[test]
    fn estimate_rows_round_trip() {
        let rows = vec![
            EstimateRow {
                estimator: "adj2".into(),
                estimate: 0.1 + 0.2,
                se: Some(1.0 / 3.0),
                ci_lower: Some(-1e-300),
                ci_upper: Some(7.25),
                se_conservative: None,
                ci_lower_conservative: None,
                ci_upper_conservative: None,
            },
        ];
        let s = csv_string(&rows).unwrap();
        let back: Vec<EstimateRow> = read_csv_from(s.as_bytes()).unwrap();
        assert_eq!(back, rows);
    }
}
