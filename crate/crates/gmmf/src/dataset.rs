//! Data model for single-regressor IV problems and grouped-data views.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Outcome `y`, endogenous regressor `x` and instrument matrix `Z` (n x k_z).
///
/// Immutable after construction; all estimators borrow it read-only.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DVector<f64>,
    x: DVector<f64>,
    z: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if x.len() != n || z.nrows() != n {
            return Err(Error::InvalidData(format!(
                "length mismatch: y has {}, x has {}, Z has {} rows",
                n,
                x.len(),
                z.nrows()
            )));
        }
        if z.ncols() < 1 || n < z.ncols() {
            return Err(Error::InvalidData(format!(
                "need n >= k_z >= 1, got n = {}, k_z = {}",
                n,
                z.ncols()
            )));
        }
        let finite = y.iter().chain(x.iter()).all(|v| v.is_finite()) && z.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidData("non-finite entry".into()));
        }
        Ok(Self {
            y: DVector::from_vec(y),
            x: DVector::from_vec(x),
            z,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k_z(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }
}

/// Per-group membership, counts and means, valid only when `Z` consists of
/// mutually exclusive 0/1 indicator columns.
#[derive(Debug, Clone)]
pub struct GroupedView {
    group_index: Vec<usize>,
    n_s: Vec<usize>,
    xbar_s: Vec<f64>,
    ybar_s: Vec<f64>,
}

impl GroupedView {
    pub fn n_groups(&self) -> usize {
        self.n_s.len()
    }

    pub fn group_index(&self) -> &[usize] {
        &self.group_index
    }

    pub fn n_s(&self) -> &[usize] {
        &self.n_s
    }

    pub fn xbar_s(&self) -> &[f64] {
        &self.xbar_s
    }

    pub fn ybar_s(&self) -> &[f64] {
        &self.ybar_s
    }
}

/// Builds the grouped view of `d`.
///
/// Indicator detection is exact: every entry of `Z` must be exactly 0.0 or
/// 1.0 and every row must contain a single 1. Groups with fewer than two
/// members are rejected here, before any estimation can touch them.
pub fn grouped_view(d: &Dataset) -> Result<GroupedView> {
    let n = d.n();
    let s = d.k_z();
    let mut group_index = Vec::with_capacity(n);
    for i in 0..n {
        let mut hit = None;
        for j in 0..s {
            let v = d.z()[(i, j)];
            if v == 1.0 {
                if hit.is_some() {
                    return Err(Error::NotGrouped(format!("row {} has multiple indicator 1s", i + 1)));
                }
                hit = Some(j);
            } else if v != 0.0 {
                return Err(Error::NotGrouped(format!(
                    "row {} column {} is {}, not 0/1",
                    i + 1,
                    j + 1,
                    v
                )));
            }
        }
        match hit {
            Some(j) => group_index.push(j),
            None => return Err(Error::NotGrouped(format!("row {} has no indicator 1", i + 1))),
        }
    }

    let mut n_s = vec![0usize; s];
    let mut xsum = vec![0.0f64; s];
    let mut ysum = vec![0.0f64; s];
    for (i, &g) in group_index.iter().enumerate() {
        n_s[g] += 1;
        xsum[g] += d.x()[i];
        ysum[g] += d.y()[i];
    }
    for (g, &c) in n_s.iter().enumerate() {
        if c < 2 {
            return Err(Error::DegenerateGroup { group: g + 1 });
        }
    }
    let xbar_s: Vec<f64> = xsum.iter().zip(&n_s).map(|(s, &c)| s / c as f64).collect();
    let ybar_s: Vec<f64> = ysum.iter().zip(&n_s).map(|(s, &c)| s / c as f64).collect();
    Ok(GroupedView {
        group_index,
        n_s,
        xbar_s,
        ybar_s,
    })
}

/// Loads a dataset from a headered CSV file with named columns.
pub fn load_dataset(path: &Path, y_col: &str, x_col: &str, z_cols: &[String]) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let yi = col(y_col)?;
    let xi = col(x_col)?;
    let zi: Vec<usize> = z_cols.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let parse = |record: &csv::StringRecord, idx: usize, name: &str, row: usize| -> Result<f64> {
        let raw = record.get(idx).unwrap_or("");
        raw.trim()
            .parse::<f64>()
            .map_err(|_| Error::NonNumeric {
                row,
                column: name.to_string(),
                value: raw.to_string(),
            })
    };

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut zdata: Vec<f64> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1; // 1-based data row
        y.push(parse(&record, yi, y_col, row)?);
        x.push(parse(&record, xi, x_col, row)?);
        for (j, &idx) in zi.iter().enumerate() {
            zdata.push(parse(&record, idx, &z_cols[j], row)?);
        }
    }
    let n = y.len();
    let k = zi.len();
    let z = DMatrix::from_row_slice(n, k, &zdata);
    Dataset::new(y, x, z)
}
