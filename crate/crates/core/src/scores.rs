//! Casewise (level-1) score contributions and the cumulative score processes
//! built from them once cases are ordered by the auxiliary variable.
//!
//! Observation `i` of cluster `j` is allocated
//! * fixed effect `β_m`: `x_im · (V⁻¹ r)_i`
//! * variance parameter `θ_k`: `-½ [V⁻¹ ∂V/∂θ_k]_ii + ½ (V⁻¹ r)_i [∂V/∂θ_k V⁻¹ r]_i`
//!
//! so rows of a cluster sum exactly to that cluster's analytic score.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LongDataset;
use crate::error::{Error, Result};
use crate::linalg::inv_sqrt_spd;
use crate::model::{dv_matrices, solve_cluster, FittedLmm, ModelSpec, ThetaVector};

/// Allowed magnitude of the score column sums, per observation.
pub const SCORE_SUM_TOL: f64 = 1e-6;

/// Casewise scores in auxiliary order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: DMatrix<f64>,
    order: Vec<usize>,
    aux_sorted: Vec<f64>,
    names: Vec<String>,
    boundary: Vec<bool>,
}

impl ScoreMatrix {
    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn q(&self) -> usize {
        self.scores.ncols()
    }

    /// `n × q`, row `i` is the score of the `i`-th smallest case.
    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    /// `order[i]` is the original row of sorted position `i`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn aux_sorted(&self) -> &[f64] {
        &self.aux_sorted
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_boundary(&self, col: usize) -> bool {
        self.boundary.get(col).copied().unwrap_or(false)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column_sums(&self) -> DVector<f64> {
        self.scores.row_sum().transpose()
    }

    /// Largest absolute column sum divided by `n`; at an interior maximum
    /// this is at most [`SCORE_SUM_TOL`].
    pub fn score_sum_excess(&self) -> f64 {
        self.column_sums().amax() / self.n() as f64
    }

    /// Columns `cols` as an `n × |cols|` matrix.
    pub fn select(&self, cols: &[usize]) -> Result<DMatrix<f64>> {
        self.check_cols(cols)?;
        Ok(self.scores.select_columns(cols.iter()))
    }

    pub(crate) fn check_cols(&self, cols: &[usize]) -> Result<()> {
        if cols.is_empty() {
            return Err(Error::InvalidArgument("no columns selected".into()));
        }
        if let Some(&c) = cols.iter().find(|&&c| c >= self.q()) {
            return Err(Error::InvalidArgument(format!("column {c} out of range (q = {})", self.q())));
        }
        if let Some(&c) = cols.iter().find(|&&c| self.is_boundary(c)) {
            return Err(Error::Boundary { name: self.names[c].clone() });
        }
        Ok(())
    }

    /// `B*_{a,b}` with 1-based positions. For `a > b` the terms are
    /// accumulated backwards from position `a` down to `b`.
    pub fn partial_cumsum(&self, a: usize, b: usize) -> Result<DVector<f64>> {
        let n = self.n();
        for idx in [a, b] {
            if idx == 0 || idx > n {
                return Err(Error::IndexOutOfRange { index: idx, n });
            }
        }
        let mut acc = DVector::zeros(self.q());
        if a <= b {
            for i in a..=b {
                acc += self.scores.row(i - 1).transpose();
            }
        } else {
            for i in (b..=a).rev() {
                acc += self.scores.row(i - 1).transpose();
            }
        }
        Ok(acc)
    }

    /// Copy with every score multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { scores: &self.scores * c, ..self.clone() }
    }

    /// Copy with the case order reversed.
    pub fn reversed(&self) -> Self {
        let n = self.n();
        let rows: Vec<usize> = (0..n).rev().collect();
        Self {
            scores: self.scores.select_rows(rows.iter()),
            order: rows.iter().map(|&i| self.order[i]).collect(),
            aux_sorted: rows.iter().map(|&i| self.aux_sorted[i]).collect(),
            names: self.names.clone(),
            boundary: self.boundary.clone(),
        }
    }

    /// Writes `aux` followed by one column per parameter, in sorted order.
    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["aux".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![format!("{:e}", self.aux_sorted[i])];
            rec.extend(self.scores.row(i).iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads externally produced scores: a header row, an auxiliary column
    /// named `aux_column`, and every other column taken as a score column.
    /// Column sums above tolerance produce a warning, not an error.
    pub fn from_csv_reader<R: Read>(reader: R, aux_column: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let aux_idx = headers
            .iter()
            .position(|h| h == aux_column)
            .ok_or_else(|| Error::Data(format!("column `{aux_column}` not found in header")))?;
        let score_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != aux_idx).collect();
        if score_cols.is_empty() {
            return Err(Error::Data("no score columns".into()));
        }
        let names: Vec<String> = score_cols.iter().map(|&c| headers[c].to_string()).collect();
        let mut aux = Vec::new();
        let mut vals = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<f64> {
                let raw = rec.get(c).unwrap_or("");
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("line {}: bad value `{raw}`", i + 2)))
            };
            if rec.len() != headers.len() {
                return Err(Error::Data(format!("line {}: wrong number of fields", i + 2)));
            }
            aux.push(parse(aux_idx)?);
            for &c in &score_cols {
                vals.push(parse(c)?);
            }
        }
        if aux.is_empty() {
            return Err(Error::Data("no score rows".into()));
        }
        let raw = DMatrix::from_row_slice(aux.len(), score_cols.len(), &vals);
        let s = order_by_auxiliary(raw, &aux, names)?;
        let excess = s.score_sum_excess();
        if excess > SCORE_SUM_TOL {
            log::warn!("imported scores do not sum to zero (max |column sum| / n = {excess:e})");
        }
        Ok(s)
    }
}

/// Sorts score rows by the auxiliary variable; ties keep their original order.
pub fn order_by_auxiliary(raw: DMatrix<f64>, aux: &[f64], names: Vec<String>) -> Result<ScoreMatrix> {
    if aux.len() != raw.nrows() {
        return Err(Error::InvalidArgument(format!(
            "auxiliary has length {}, scores have {} rows",
            aux.len(),
            raw.nrows()
        )));
    }
    if names.len() != raw.ncols() {
        return Err(Error::InvalidArgument("names do not match score columns".into()));
    }
    if let Some(row) = aux.iter().position(|a| !a.is_finite()) {
        return Err(Error::NonFiniteAuxiliary { row });
    }
    let mut order: Vec<usize> = (0..aux.len()).collect();
    // sort_by is stable
    order.sort_by(|&i, &j| aux[i].total_cmp(&aux[j]));
    let q = raw.ncols();
    Ok(ScoreMatrix {
        scores: raw.select_rows(order.iter()),
        aux_sorted: order.iter().map(|&i| aux[i]).collect(),
        order,
        names,
        boundary: vec![false; q],
    })
}

/// How a cluster's score is split across its observations. Both rules sum
/// exactly to the cluster score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocation {
    /// Row `i` gets the raw residual `r_i` times its GLS weight:
    /// `(V⁻¹X)_i r_i` for `β`, and
    /// `-½ diag(V⁻¹D_k)_i + ½ r_i (V⁻¹ D_k V⁻¹ r)_i` for variance parameters.
    #[default]
    Residual,
    /// Row `i` gets the whitened residual `u = V⁻¹r`:
    /// `x_i u_i` for `β`, and `-½ diag(V⁻¹D_k)_i + ½ u_i (D_k u)_i`.
    Whitened,
}

/// Casewise scores at `theta`, rows in the dataset's original order.
pub fn casewise_raw(spec: &ModelSpec, theta: &ThetaVector, data: &LongDataset) -> Result<DMatrix<f64>> {
    casewise_raw_with(spec, theta, data, Allocation::default())
}

/// [`casewise_raw`] with an explicit allocation rule.
pub fn casewise_raw_with(
    spec: &ModelSpec,
    theta: &ThetaVector,
    data: &LongDataset,
    alloc: Allocation,
) -> Result<DMatrix<f64>> {
    let (p, q) = (spec.p(), spec.q());
    let beta = theta.beta(spec);
    let g = theta.g_matrix(spec);
    let mut out = DMatrix::zeros(data.n(), q);
    for cl in data.clusters() {
        let s = solve_cluster(&beta, &g, theta.sigma2(), cl)?;
        let r = &cl.y - &cl.x * &beta;
        let wx = &s.vinv * &cl.x;
        for (local, &row) in cl.rows.iter().enumerate() {
            for m in 0..p {
                out[(row, m)] = match alloc {
                    Allocation::Residual => wx[(local, m)] * r[local],
                    Allocation::Whitened => cl.x[(local, m)] * s.u[local],
                };
            }
        }
        for (k, d) in dv_matrices(spec, &cl.z).iter().enumerate() {
            let du = d * &s.u;
            let right = match alloc {
                Allocation::Residual => &s.vinv * &du,
                Allocation::Whitened => du,
            };
            let left = match alloc {
                Allocation::Residual => &r,
                Allocation::Whitened => &s.u,
            };
            for (local, &row) in cl.rows.iter().enumerate() {
                let diag = s.vinv.row(local).dot(&d.column(local).transpose());
                out[(row, p + k)] = -0.5 * diag + 0.5 * left[local] * right[local];
            }
        }
    }
    Ok(out)
}

/// Casewise scores of a converged interior fit, ordered by `data.aux()`.
pub fn casewise_scores(fitted: &FittedLmm, data: &LongDataset) -> Result<ScoreMatrix> {
    if let Some(i) = fitted.boundary.iter().position(|&b| b) {
        return Err(Error::Boundary { name: fitted.spec.names()[i].clone() });
    }
    casewise_scores_flagged(fitted, data, Allocation::default())
}

/// Like [`casewise_scores`] but accepts boundary fits; boundary columns are
/// flagged and refused later by the test statistics.
pub fn casewise_scores_flagged(fitted: &FittedLmm, data: &LongDataset, alloc: Allocation) -> Result<ScoreMatrix> {
    if !fitted.converged {
        return Err(Error::NotConverged);
    }
    let raw = casewise_raw_with(&fitted.spec, &fitted.theta_hat, data, alloc)?;
    let mut s = order_by_auxiliary(raw, data.aux(), fitted.spec.names().to_vec())?;
    s.boundary = fitted.boundary.clone();
    Ok(s)
}

/// Scaled cumulative score process `B(k/n) = n^{-1/2} Î^{-1/2} B*_{1,k}`.
#[derive(Debug, Clone)]
pub struct CumProcess {
    /// Row `k-1` holds `B(k/n)`.
    pub b: DMatrix<f64>,
    pub info_root_inv: DMatrix<f64>,
    /// Sorted auxiliary values, one per row of `b`.
    pub aux: Vec<f64>,
    pub names: Vec<String>,
}

impl CumProcess {
    pub fn n(&self) -> usize {
        self.b.nrows()
    }
}

/// Builds the cumulative process. `info` is the per-observation information
/// (whole-sample information divided by `n` for a fitted model).
pub fn cumulative_process(s: &ScoreMatrix, info: &DMatrix<f64>) -> Result<CumProcess> {
    if info.nrows() != s.q() || info.ncols() != s.q() {
        return Err(Error::InvalidArgument(format!(
            "information is {}x{}, scores have {} columns",
            info.nrows(),
            info.ncols(),
            s.q()
        )));
    }
    let root = inv_sqrt_spd(info).map_err(|smallest| Error::InfoNotPositiveDefinite { smallest })?;
    Ok(cumulative_from_raw(s.scores(), &root, s.aux_sorted().to_vec(), s.names().to_vec()))
}

pub(crate) fn cumulative_from_raw(
    scores: &DMatrix<f64>,
    root: &DMatrix<f64>,
    aux: Vec<f64>,
    names: Vec<String>,
) -> CumProcess {
    let (n, q) = scores.shape();
    let scale = 1.0 / (n as f64).sqrt();
    let mut cum = DMatrix::zeros(n, q);
    let mut acc = DVector::zeros(q);
    for k in 0..n {
        acc += scores.row(k).transpose();
        cum.row_mut(k).copy_from(&(root * &acc * scale).transpose());
    }
    CumProcess { b: cum, info_root_inv: root.clone(), aux, names }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn toy_scores(vals: &[f64]) -> ScoreMatrix {
        let raw = DMatrix::from_column_slice(vals.len(), 1, vals);
        let aux: Vec<f64> = (0..vals.len()).map(|i| i as f64).collect();
        order_by_auxiliary(raw, &aux, vec!["s".into()]).unwrap()
    }

    #[test]
    fn hand_partial_sums() {
        let s = toy_scores(&[1.0, -1.0, 2.0, -2.0]);
        assert_eq!(s.partial_cumsum(1, 3).unwrap()[0], 2.0);
        assert_eq!(s.partial_cumsum(4, 2).unwrap()[0], -1.0);
        assert_eq!(s.partial_cumsum(1, 4).unwrap()[0], 0.0);
        for a in 1..=4 {
            assert_eq!(s.partial_cumsum(a, a).unwrap()[0], s.scores()[(a - 1, 0)]);
        }
        assert!(matches!(s.partial_cumsum(0, 2), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(s.partial_cumsum(2, 5), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn ordering_permutations() {
        let raw = DMatrix::from_column_slice(4, 1, &[10.0, 20.0, 30.0, 40.0]);
        let s = order_by_auxiliary(raw.clone(), &[1.0, 2.0, 3.0, 4.0], vec!["a".into()]).unwrap();
        assert_eq!(s.order(), &[0, 1, 2, 3]);
        let s = order_by_auxiliary(raw.clone(), &[5.0; 4], vec!["a".into()]).unwrap();
        assert_eq!(s.order(), &[0, 1, 2, 3]);
        let s = order_by_auxiliary(raw.clone(), &[4.0, 3.0, 2.0, 1.0], vec!["a".into()]).unwrap();
        assert_eq!(s.order(), &[3, 2, 1, 0]);
        assert_eq!(s.scores()[(0, 0)], 40.0);
        let s = order_by_auxiliary(raw.clone(), &[2.0, 1.0, 2.0, 1.0], vec!["a".into()]).unwrap();
        assert_eq!(s.order(), &[1, 3, 0, 2]);
        assert!(matches!(
            order_by_auxiliary(raw, &[1.0, f64::NAN, 0.0, 0.0], vec!["a".into()]),
            Err(Error::NonFiniteAuxiliary { row: 1 })
        ));
    }

    #[test]
    fn hand_cumulative_process() {
        let s = toy_scores(&[1.0, -1.0, 2.0, -2.0]);
        let p = cumulative_process(&s, &DMatrix::from_element(1, 1, 4.0)).unwrap();
        let rows: Vec<f64> = p.b.column(0).iter().copied().collect();
        assert_eq!(rows, vec![0.25, 0.0, 0.5, 0.0]);
        let z = toy_scores(&[0.0; 5]);
        let p = cumulative_process(&z, &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!(p.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cumulative_rejects_indefinite_info() {
        let s = toy_scores(&[1.0, -1.0]);
        let err = cumulative_process(&s, &DMatrix::from_element(1, 1, -3.0)).unwrap_err();
        match err {
            Error::InfoNotPositiveDefinite { smallest } => assert_relative_eq!(smallest, -3.0),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let raw = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -2.0, 0.25, 1.0, -0.75]);
        let s = order_by_auxiliary(raw, &[0.3, 0.1, 0.2], vec!["b0".into(), "b1".into()]).unwrap();
        let mut buf = Vec::new();
        s.to_csv_writer(&mut buf).unwrap();
        let back = ScoreMatrix::from_csv_reader(buf.as_slice(), "aux").unwrap();
        assert_eq!(back.scores(), s.scores());
        assert_eq!(back.aux_sorted(), s.aux_sorted());
        assert_eq!(back.names(), s.names());
    }

    #[test]
    fn csv_rejects_bad_rows() {
        assert!(ScoreMatrix::from_csv_reader("aux,a\n1,x\n".as_bytes(), "aux").is_err());
        assert!(ScoreMatrix::from_csv_reader("aux,a\n".as_bytes(), "aux").is_err());
        assert!(ScoreMatrix::from_csv_reader("a,b\n1,2\n".as_bytes(), "aux").is_err());
        assert!(ScoreMatrix::from_csv_reader("aux\n1\n".as_bytes(), "aux").is_err());
    }

    fn two_clusters() -> (ModelSpec, ThetaVector, LongDataset) {
        let ids: Vec<String> = ["a", "a", "a", "b", "b", "b", "b"].iter().map(|s| s.to_string()).collect();
        let y = vec![1.0, 2.0, 0.5, 3.0, 2.5, 4.0, 3.5];
        let x = DMatrix::from_fn(7, 2, |i, j| if j == 0 { 1.0 } else { (i % 4) as f64 });
        let z = x.columns(0, 1).into_owned();
        let names = vec!["(Intercept)".to_string(), "t".to_string()];
        let data = LongDataset::new(&ids, y, x, z, vec![0.0; 7], names.clone(), names[..1].to_vec()).unwrap();
        let spec = ModelSpec::for_dataset(&data);
        (spec, ThetaVector::new(vec![1.5, 0.4, 0.8, 0.6]), data)
    }

    #[test]
    fn allocations_share_cluster_sums() {
        let (spec, theta, data) = two_clusters();
        let a = casewise_raw_with(&spec, &theta, &data, Allocation::Residual).unwrap();
        let b = casewise_raw_with(&spec, &theta, &data, Allocation::Whitened).unwrap();
        assert!((&a - &b).amax() > 1e-3, "rules should differ row-wise");
        for rows in [0..3, 3..7] {
            let sa = a.rows(rows.start, rows.len()).row_sum();
            let sb = b.rows(rows.start, rows.len()).row_sum();
            assert!((sa - sb).amax() < 1e-12);
        }
    }

    #[test]
    fn allocations_agree_without_random_effects() {
        let (spec, _, data) = two_clusters();
        // G = 0 makes V diagonal: both rules give x_i r_i / σ²
        let theta = ThetaVector::new(vec![1.5, 0.4, 0.0, 0.6]);
        let a = casewise_raw_with(&spec, &theta, &data, Allocation::Residual).unwrap();
        let b = casewise_raw_with(&spec, &theta, &data, Allocation::Whitened).unwrap();
        assert!((&a - &b).amax() < 1e-12);
        let r0 = data.response()[0] - 1.5;
        assert_relative_eq!(a[(0, 0)], r0 / 0.6, epsilon = 1e-12);
    }

}
