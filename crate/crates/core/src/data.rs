//! Long-format clustered observations.
//!
//! One row per observation, with a cluster label, the response, fixed and
//! random-effect covariates, and an auxiliary variable that is *not* part of
//! the model but is used to order cases for the fluctuation tests.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column token that requests an intercept (a column of ones).
pub const INTERCEPT: &str = "1";

/// Display name used for an intercept column.
pub const INTERCEPT_NAME: &str = "(Intercept)";

/// Maps CSV header names onto the roles of the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub cluster: String,
    pub response: String,
    /// Fixed-effect covariates; `"1"` denotes an intercept.
    pub fixed: Vec<String>,
    /// Random-effect covariates; `"1"` denotes a random intercept.
    #[serde(default)]
    pub random: Vec<String>,
    /// Auxiliary ordering variable. When absent every row gets 0.
    #[serde(default)]
    pub aux: Option<String>,
}

/// Rows belonging to one cluster, with its design blocks extracted.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub id: String,
    /// Indices into the dataset's rows, in file order.
    pub rows: Vec<usize>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Validated long-format dataset.
#[derive(Debug, Clone)]
pub struct LongDataset {
    fixed_names: Vec<String>,
    random_names: Vec<String>,
    cluster_of: Vec<usize>,
    response: DVector<f64>,
    fixed: DMatrix<f64>,
    random: DMatrix<f64>,
    aux: Vec<f64>,
    clusters: Vec<Cluster>,
}

impl LongDataset {
    /// Builds a dataset from row-aligned columns. Clusters are numbered in
    /// order of first appearance.
    pub fn new(
        cluster_labels: &[String],
        response: Vec<f64>,
        fixed: DMatrix<f64>,
        random: DMatrix<f64>,
        aux: Vec<f64>,
        fixed_names: Vec<String>,
        random_names: Vec<String>,
    ) -> Result<Self> {
        let n = response.len();
        if n == 0 {
            return Err(Error::Data("dataset has no observations".into()));
        }
        if cluster_labels.len() != n || aux.len() != n || fixed.nrows() != n || random.nrows() != n {
            return Err(Error::Data("column lengths differ".into()));
        }
        if fixed.ncols() != fixed_names.len() || random.ncols() != random_names.len() {
            return Err(Error::Data("covariate names do not match covariate columns".into()));
        }
        if fixed.ncols() == 0 {
            return Err(Error::Data("at least one fixed-effect covariate is required".into()));
        }
        if let Some(row) = aux.iter().position(|a| !a.is_finite()) {
            return Err(Error::NonFiniteAuxiliary { row });
        }
        if let Some(row) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite response at row {row}")));
        }
        if fixed.iter().chain(random.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite covariate value".into()));
        }

        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut ids: Vec<String> = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut cluster_of = Vec::with_capacity(n);
        for (row, label) in cluster_labels.iter().enumerate() {
            let next = ids.len();
            let c = *index.entry(label.as_str()).or_insert(next);
            if c == next {
                ids.push(label.clone());
                members.push(Vec::new());
            }
            members[c].push(row);
            cluster_of.push(c);
        }

        let response = DVector::from_vec(response);
        let clusters = ids
            .into_iter()
            .zip(members)
            .map(|(id, rows)| Cluster {
                x: fixed.select_rows(rows.iter()),
                z: random.select_rows(rows.iter()),
                y: response.select_rows(rows.iter()),
                id,
                rows,
            })
            .collect();

        Ok(Self {
            fixed_names,
            random_names,
            cluster_of,
            response,
            fixed,
            random,
            aux,
            clusters,
        })
    }

    /// Reads a CSV with a header row, selecting columns by name.
    /// Missing values (empty, `NA`, `NaN`) are rejected.
    pub fn from_csv_reader<R: Read>(reader: R, map: &ColumnMap) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("column `{name}` not found in header")))
        };
        let cluster_col = find(&map.cluster)?;
        let response_col = find(&map.response)?;
        let resolve = |cols: &[String]| -> Result<Vec<Option<usize>>> {
            cols.iter()
                .map(|c| if c == INTERCEPT { Ok(None) } else { find(c).map(Some) })
                .collect()
        };
        let fixed_cols = resolve(&map.fixed)?;
        let random_cols = resolve(&map.random)?;
        let aux_col = map.aux.as_deref().map(find).transpose()?;

        let mut labels = Vec::new();
        let mut response = Vec::new();
        let mut fixed = Vec::new();
        let mut random = Vec::new();
        let mut aux = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let field = |col: usize| -> Result<f64> {
                let raw = record
                    .get(col)
                    .ok_or_else(|| Error::Data(format!("line {line}: missing field")))?;
                parse_value(raw).map_err(|msg| Error::Data(format!("line {line}, column `{}`: {msg}", &headers[col])))
            };
            let label = record
                .get(cluster_col)
                .ok_or_else(|| Error::Data(format!("line {line}: missing field")))?;
            if label.is_empty() || label == "NA" {
                return Err(Error::Data(format!("line {line}: missing cluster id")));
            }
            labels.push(label.to_string());
            response.push(field(response_col)?);
            for c in &fixed_cols {
                fixed.push(c.map_or(Ok(1.0), field)?);
            }
            for c in &random_cols {
                random.push(c.map_or(Ok(1.0), field)?);
            }
            aux.push(aux_col.map_or(Ok(0.0), field)?);
        }
        let n = response.len();
        let fixed = DMatrix::from_row_slice(n, fixed_cols.len(), &fixed);
        let random = DMatrix::from_row_slice(n, random_cols.len(), &random);
        let names = |cols: &[String]| -> Vec<String> {
            cols.iter()
                .map(|c| if c == INTERCEPT { INTERCEPT_NAME.to_string() } else { c.clone() })
                .collect()
        };
        Self::new(&labels, response, fixed, random, aux, names(&map.fixed), names(&map.random))
    }

    pub fn from_csv_path(path: impl AsRef<Path>, map: &ColumnMap) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file), map)
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn p(&self) -> usize {
        self.fixed.ncols()
    }

    pub fn r(&self) -> usize {
        self.random.ncols()
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn fixed(&self) -> &DMatrix<f64> {
        &self.fixed
    }

    pub fn random(&self) -> &DMatrix<f64> {
        &self.random
    }

    pub fn aux(&self) -> &[f64] {
        &self.aux
    }

    pub fn fixed_names(&self) -> &[String] {
        &self.fixed_names
    }

    pub fn random_names(&self) -> &[String] {
        &self.random_names
    }

    /// Cluster number of each row.
    pub fn cluster_of(&self) -> &[usize] {
        &self.cluster_of
    }

    /// All clusters have the same size. Unbalanced designs are supported but
    /// fall outside the regime the simulation study validates.
    pub fn is_balanced(&self) -> bool {
        let first = self.clusters[0].len();
        self.clusters.iter().all(|c| c.len() == first)
    }

    /// Returns a copy with the auxiliary variable replaced.
    pub fn with_aux(&self, aux: Vec<f64>) -> Result<Self> {
        if aux.len() != self.n() {
            return Err(Error::Data("auxiliary length differs from row count".into()));
        }
        if let Some(row) = aux.iter().position(|a| !a.is_finite()) {
            return Err(Error::NonFiniteAuxiliary { row });
        }
        Ok(Self { aux, ..self.clone() })
    }
}

fn parse_value(raw: &str) -> std::result::Result<f64, String> {
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
        return Err("missing value".into());
    }
    let v: f64 = raw.parse().map_err(|_| format!("`{raw}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{raw}` is not finite"))
    }
}
