//! Covariate and scenario CSV files.
//!
//! Covariates: a header row of column names, then one numeric row per unit.
//! Columns taking only the values 0 and 1 are flagged binary; an optional
//! sidecar file adds binary names (one per line). Exported scenarios append
//! `t` (0-based intervention index), `d` and `y` columns.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::data::{CovariateMatrix, DataError, ScenarioDataset};

#[derive(Debug, Error)]
pub enum CovariateError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: expected {expected} fields, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("row {row}, column `{col}`: `{value}` is not a number")]
    NotNumeric { row: usize, col: String, value: String },
    #[error("duplicate header `{0}`")]
    DuplicateHeader(String),
    #[error("no data rows")]
    Empty,
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Reads a covariate CSV. Row numbers in errors are 1-based file lines.
pub fn load_covariates(path: &Path, sidecar: Option<&Path>) -> Result<CovariateMatrix, CovariateError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let names: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut seen = BTreeSet::new();
    for n in &names {
        if !seen.insert(n) {
            return Err(CovariateError::DuplicateHeader(n.clone()));
        }
    }
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2;
        if record.len() != names.len() {
            return Err(CovariateError::Ragged { row, expected: names.len(), found: record.len() });
        }
        for (field, col) in record.iter().zip(&names) {
            let v: f64 = field.trim().parse().map_err(|_| CovariateError::NotNumeric {
                row,
                col: col.clone(),
                value: field.to_string(),
            })?;
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(CovariateError::Empty);
    }
    let m = names.len();
    let mut binary: BTreeSet<String> = (0..m)
        .filter(|&j| values.iter().skip(j).step_by(m).all(|&v| v == 0.0 || v == 1.0))
        .map(|j| names[j].clone())
        .collect();
    if let Some(p) = sidecar {
        let text = std::fs::read_to_string(p)?;
        binary.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    Ok(CovariateMatrix::new(names, values, binary)?)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Writes a covariate CSV that [`load_covariates`] reads back exactly.
pub fn write_covariates(x: &CovariateMatrix, path: &Path) -> Result<(), CovariateError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(x.names())?;
    for i in 0..x.rows() {
        w.write_record(x.row(i).iter().map(|v| fmt(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes covariates plus `t`, `d`, `y` columns.
pub fn write_scenario(ds: &ScenarioDataset, path: &Path) -> Result<(), CovariateError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ds.x.names().to_vec();
    header.extend(["t", "d", "y"].map(String::from));
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut row: Vec<String> = ds.x.row(i).iter().map(|v| fmt(*v)).collect();
        row.extend([ds.t[i].to_string(), fmt(ds.d[i]), fmt(ds.y[i])]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedTree;
    use rand::Rng as _;

    #[test]
    fn round_trip_and_binary_detection() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeedTree::new(1).rng();
        let (n, m) = (747, 25);
        let mut vals = Vec::with_capacity(n * m);
        for _ in 0..n {
            for j in 0..m {
                vals.push(match j {
                    0 => 0.0,
                    1 => f64::from(rng.random::<bool>()),
                    _ => rng.random::<f64>() * 1e3 - 500.0,
                });
            }
        }
        let x = CovariateMatrix::new((0..m).map(|j| format!("c{j}")).collect(), vals, BTreeSet::new()).unwrap();
        let p = dir.path().join("x.csv");
        write_covariates(&x, &p).unwrap();
        let back = load_covariates(&p, None).unwrap();
        assert_eq!((back.rows(), back.cols()), (747, 25));
        assert_eq!(back.values(), x.values());
        assert!(back.is_binary("c0"));
        assert!(back.is_binary("c1"));
        assert!(!back.is_binary("c2"));
    }

    #[test]
    fn errors_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "a,b\n1,2\n3\n").unwrap();
        let err = load_covariates(&p, None).unwrap_err();
        assert!(matches!(err, CovariateError::Ragged { row: 3, .. }), "{err}");
        std::fs::write(&p, "a,b\n1,x\n").unwrap();
        assert!(load_covariates(&p, None).unwrap_err().to_string().contains("row 2"));
        std::fs::write(&p, "a,a\n1,2\n").unwrap();
        assert!(matches!(load_covariates(&p, None), Err(CovariateError::DuplicateHeader(_))));
    }

    #[test]
    fn sidecar_adds_binary_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let s = dir.path().join("binary.txt");
        std::fs::write(&p, "a,b\n0.5,1\n0.25,0\n").unwrap();
        std::fs::write(&s, "b\n").unwrap();
        let x = load_covariates(&p, Some(&s)).unwrap();
        assert!(x.is_binary("b"));
        std::fs::write(&s, "a\n").unwrap();
        assert!(load_covariates(&p, Some(&s)).is_err());
    }
}
