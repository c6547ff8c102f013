//! Fluctuation statistics on ordered casewise scores.
//!
//! The information-normalized statistics (CvM, DM, maxLM) aggregate the
//! cumulative process `B(k/n)`. The self-normalized family replaces the
//! fixed normalizer with the data-driven `V_n(k)`:
//!
//! `SN = sup_k T_n(k)ᵀ V_n(k)⁻¹ T_n(k)`, `T_n(k) = n^{-1/2}(B*_{1,k} - (k/n) B*_{1,n})`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::inv_sqrt_spd;
use crate::normalizer::{self, Sweep};
use crate::scores::{CumProcess, ScoreMatrix};

/// The implemented statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatKind {
    #[serde(rename = "CvM")]
    Cvm,
    #[serde(rename = "DM")]
    Dm,
    #[serde(rename = "maxLM")]
    MaxLm,
    #[serde(rename = "SN")]
    Sn,
    #[serde(rename = "SN_w")]
    SnW,
    #[serde(rename = "SN_ord")]
    SnOrd,
}

impl StatKind {
    pub const ALL: [StatKind; 6] = [Self::Cvm, Self::Dm, Self::MaxLm, Self::Sn, Self::SnW, Self::SnOrd];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cvm => "CvM",
            Self::Dm => "DM",
            Self::MaxLm => "maxLM",
            Self::Sn => "SN",
            Self::SnW => "SN_w",
            Self::SnOrd => "SN_ord",
        }
    }

    /// Uses the fixed information normalizer.
    pub fn is_traditional(self) -> bool {
        matches!(self, Self::Cvm | Self::Dm | Self::MaxLm)
    }
}

impl fmt::Display for StatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown statistic `{s}`")))
    }
}

/// Per-split-point values of a self-normalized statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnTrace {
    pub k_grid: Vec<usize>,
    pub values: Vec<f64>,
    /// Split points skipped because `V_n(k)` was singular.
    pub skipped: Vec<usize>,
    pub argmax_k: usize,
    pub argmax_aux: f64,
    /// Auxiliary value at each entry of `k_grid`.
    pub aux: Vec<f64>,
    /// Split points where the recursive sweep fell back to direct inversion.
    #[serde(default)]
    pub fallbacks: Vec<usize>,
}

/// How a process trace is reduced to the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregate {
    Mean,
    Max,
}

/// Per-split-point record kept by a test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Trace {
    SelfNormalized(SnTrace),
    Process {
        k: Vec<usize>,
        aux: Vec<f64>,
        values: Vec<f64>,
        aggregate: Aggregate,
    },
}

impl Trace {
    /// Recomputes the statistic from the stored per-k values.
    pub fn aggregate(&self) -> f64 {
        match self {
            Trace::SelfNormalized(t) => t.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Trace::Process { values, aggregate: Aggregate::Mean, .. } => {
                values.iter().sum::<f64>() / values.len() as f64
            }
            Trace::Process { values, aggregate: Aggregate::Max, .. } => {
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// `(k, aux, value)` rows.
    pub fn rows(&self) -> Vec<(usize, f64, f64)> {
        match self {
            Trace::SelfNormalized(t) => t
                .k_grid
                .iter()
                .zip(&t.aux)
                .zip(&t.values)
                .map(|((&k, &a), &v)| (k, a, v))
                .collect(),
            Trace::Process { k, aux, values, .. } => {
                k.iter().zip(aux).zip(values).map(|((&k, &a), &v)| (k, a, v)).collect()
            }
        }
    }
}

/// Critical value at a stated level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub alpha: f64,
    pub value: f64,
}

/// Outcome of one test on one set of columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: StatKind,
    pub value: f64,
    pub critical_value: Option<CriticalValue>,
    pub p_value: Option<f64>,
    pub tested_params: Vec<String>,
    pub tested_cols: Vec<usize>,
    /// Auxiliary value where the per-k trace peaks.
    pub argmax_aux: f64,
    pub trace: Trace,
}

impl TestResult {
    /// `Some(true)` when the statistic exceeds the attached critical value.
    pub fn rejects(&self) -> Option<bool> {
        self.critical_value.map(|c| self.value > c.value)
    }

    /// Writes the `k, aux, value[, critical_value]` trace as CSV.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let crit = self.critical_value.map(|c| c.value);
        if crit.is_some() {
            w.write_record(["k", "aux", "value", "critical_value"])?;
        } else {
            w.write_record(["k", "aux", "value"])?;
        }
        for (k, a, v) in self.trace.rows() {
            let mut rec = vec![k.to_string(), a.to_string(), v.to_string()];
            if let Some(c) = crit {
                rec.push(c.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

fn check_process_cols(p: &CumProcess, cols: &[usize]) -> Result<()> {
    if p.n() == 0 {
        return Err(Error::InvalidArgument("empty process".into()));
    }
    if cols.is_empty() {
        return Err(Error::InvalidArgument("no columns selected".into()));
    }
    if let Some(&c) = cols.iter().find(|&&c| c >= p.b.ncols()) {
        return Err(Error::InvalidArgument(format!("column {c} out of range")));
    }
    Ok(())
}

fn process_result(
    kind: StatKind,
    p: &CumProcess,
    cols: &[usize],
    k: Vec<usize>,
    values: Vec<f64>,
    aggregate: Aggregate,
) -> TestResult {
    let trace = Trace::Process {
        aux: k.iter().map(|&k| p.aux.get(k - 1).copied().unwrap_or(k as f64 / p.n() as f64)).collect(),
        k,
        values,
        aggregate,
    };
    let value = trace.aggregate();
    let argmax_aux = match &trace {
        Trace::Process { aux, values, .. } => argmax(values).map_or(f64::NAN, |i| aux[i]),
        Trace::SelfNormalized(t) => t.argmax_aux,
    };
    TestResult {
        statistic: kind,
        value,
        critical_value: None,
        p_value: None,
        tested_params: cols.iter().map(|&c| p.names.get(c).cloned().unwrap_or_else(|| c.to_string())).collect(),
        tested_cols: cols.to_vec(),
        argmax_aux,
        trace,
    }
}

/// Cramér-von Mises: `n⁻¹ Σ_k Σ_{j∈cols} B_j(k/n)²`.
pub fn cvm_stat(p: &CumProcess, cols: &[usize]) -> Result<TestResult> {
    check_process_cols(p, cols)?;
    let values: Vec<f64> = p.b.row_iter().map(|row| cols.iter().map(|&c| row[c] * row[c]).sum()).collect();
    let k = (1..=p.n()).collect();
    Ok(process_result(StatKind::Cvm, p, cols, k, values, Aggregate::Mean))
}

/// CvM through partial sums and the inverse information,
/// `n⁻² Σ_k B*_{1,k}ᵀ Î⁻¹ B*_{1,k}` over all columns.
pub fn cvm_via_inverse_information(s: &ScoreMatrix, info: &DMatrix<f64>) -> Result<f64> {
    let inv = crate::linalg::inv_spd(info).ok_or(Error::InfoNotPositiveDefinite {
        smallest: crate::linalg::min_eigenvalue(info),
    })?;
    let n = s.n();
    let mut acc = DVector::zeros(s.q());
    let mut total = 0.0;
    for k in 0..n {
        acc += s.scores().row(k).transpose();
        total += acc.dot(&(&inv * &acc));
    }
    Ok(total / (n * n) as f64)
}

/// Double maximum: `max_k max_{j∈cols} |B_j(k/n)|`.
pub fn dm_stat(p: &CumProcess, cols: &[usize]) -> Result<TestResult> {
    check_process_cols(p, cols)?;
    let values: Vec<f64> = p.b.row_iter().map(|row| cols.iter().fold(0.0, |m, &c| f64::max(m, row[c].abs()))).collect();
    let k = (1..=p.n()).collect();
    Ok(process_result(StatKind::Dm, p, cols, k, values, Aggregate::Max))
}

/// Trimmed window `⌈n·trim⌉ ..= ⌊n(1-trim)⌋` for maxLM.
pub fn maxlm_window(n: usize, trim: f64) -> Result<(usize, usize)> {
    if !(trim > 0.0 && trim < 0.5) {
        return Err(Error::InvalidArgument(format!("trim must lie in (0, 0.5), got {trim}")));
    }
    let lo = ((n as f64 * trim).ceil() as usize).max(1);
    let hi = ((n as f64 * (1.0 - trim)).floor() as usize).min(n.saturating_sub(1));
    if lo > hi {
        return Err(Error::InvalidArgument(format!("maxLM trimming window is empty for n = {n}")));
    }
    Ok((lo, hi))
}

/// Maximum Lagrange multiplier over the trimmed window:
/// `max_k {t(1-t)}⁻¹ Σ_{j∈cols} B_j(t)²`, `t = k/n`.
pub fn maxlm_stat(p: &CumProcess, cols: &[usize], trim: f64) -> Result<TestResult> {
    check_process_cols(p, cols)?;
    let n = p.n();
    let (lo, hi) = maxlm_window(n, trim)?;
    let k: Vec<usize> = (lo..=hi).collect();
    let values = k
        .iter()
        .map(|&k| {
            let t = k as f64 / n as f64;
            let row = p.b.row(k - 1);
            cols.iter().map(|&c| row[c] * row[c]).sum::<f64>() / (t * (1.0 - t))
        })
        .collect();
    Ok(process_result(StatKind::MaxLm, p, cols, k, values, Aggregate::Max))
}

/// Default maxLM trimming fraction.
pub const DEFAULT_TRIM: f64 = 0.1;

impl ScoreMatrix {
    /// `T_n(k)` restricted to `cols`, `1 ≤ k ≤ n-1`.
    pub fn t_vec(&self, k: usize, cols: &[usize]) -> Result<DVector<f64>> {
        let n = self.n();
        if k == 0 || k >= n {
            return Err(Error::IndexOutOfRange { index: k, n: n - 1 });
        }
        let head = self.partial_cumsum(1, k)?;
        let total = self.partial_cumsum(1, n)?;
        let t = (head - total * (k as f64 / n as f64)) / (n as f64).sqrt();
        Ok(t.select_rows(cols.iter()))
    }

    /// Deviation matrix `C_{a,b}` restricted to `cols`, 1-based positions.
    pub fn c_matrix(&self, a: usize, b: usize, cols: &[usize]) -> Result<DMatrix<f64>> {
        let n = self.n();
        for idx in [a, b] {
            if idx == 0 || idx > n {
                return Err(Error::IndexOutOfRange { index: idx, n });
            }
        }
        Ok(normalizer::deviation_matrix(&self.select_unchecked(cols), a, b))
    }

    /// `V_n(k)` restricted to `cols`, `1 ≤ k ≤ n-1`.
    pub fn v_matrix(&self, k: usize, cols: &[usize]) -> Result<DMatrix<f64>> {
        let n = self.n();
        if k == 0 || k >= n {
            return Err(Error::IndexOutOfRange { index: k, n: n - 1 });
        }
        Ok(normalizer::normalizer_direct(&self.select_unchecked(cols), k))
    }

    fn select_unchecked(&self, cols: &[usize]) -> DMatrix<f64> {
        self.scores().select_columns(cols.iter())
    }
}

/// Weight applied to each split point.
#[derive(Debug, Clone, Copy, Default)]
pub enum Weight {
    #[default]
    Unit,
    /// `{t(1-t)}⁻¹`
    InverseVariance,
    Custom(fn(f64) -> f64),
}

impl Weight {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Weight::Unit => 1.0,
            Weight::InverseVariance => 1.0 / (t * (1.0 - t)),
            Weight::Custom(f) => f(t),
        }
    }
}

/// Which split points enter the supremum.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum KRange {
    /// `q'+1 ..= n-q'-1`
    #[default]
    Admissible,
    /// `1 ..= n-1`
    Full,
    /// Explicit split points, each in `1..n-1`.
    At(Vec<usize>),
}

impl KRange {
    pub fn grid(&self, n: usize, dim: usize) -> Result<Vec<usize>> {
        let grid: Vec<usize> = match self {
            KRange::Admissible => ((dim + 1)..=(n.saturating_sub(dim + 1))).collect(),
            KRange::Full => (1..n).collect(),
            KRange::At(ks) => {
                if let Some(&k) = ks.iter().find(|&&k| k == 0 || k >= n) {
                    return Err(Error::IndexOutOfRange { index: k, n: n - 1 });
                }
                let mut ks = ks.clone();
                ks.sort_unstable();
                ks.dedup();
                ks
            }
        };
        if grid.is_empty() {
            return Err(Error::TooFewObservations { n, required: 2 * (dim + 1) });
        }
        Ok(grid)
    }
}

/// Algorithm for the normalizer sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMethod {
    #[default]
    Recursive,
    Direct,
}

/// Options of the self-normalized statistic.
#[derive(Debug, Clone, Default)]
pub struct SnOptions {
    pub weight: Weight,
    pub k_range: KRange,
    pub method: SweepMethod,
    /// Experimental, joint tests only: premultiply the selected score
    /// columns by `Î^{-1/2}` (the information block of those columns).
    pub decorrelate: Option<DMatrix<f64>>,
}

/// Core of the SN family on a raw `n × q'` score block.
pub fn sn_on_block(block: &DMatrix<f64>, aux: &[f64], opts: &SnOptions) -> Result<SnTrace> {
    let (n, dim) = block.shape();
    if n < 2 * (dim + 1) {
        return Err(Error::TooFewObservations { n, required: 2 * (dim + 1) });
    }
    let block = match &opts.decorrelate {
        Some(info) => {
            if info.nrows() != dim || info.ncols() != dim {
                return Err(Error::InvalidArgument("decorrelation block has the wrong size".into()));
            }
            let root = inv_sqrt_spd(info).map_err(|smallest| Error::InfoNotPositiveDefinite { smallest })?;
            block * root
        }
        None => block.clone(),
    };
    let ks = opts.k_range.grid(n, dim)?;
    let sweep: Sweep = match opts.method {
        SweepMethod::Recursive => normalizer::sweep_recursive(&block, &ks),
        SweepMethod::Direct => normalizer::sweep_direct(&block, &ks),
    };
    trace_from_sweep(&block, &sweep, aux, &opts.weight)
}

fn trace_from_sweep(block: &DMatrix<f64>, sweep: &Sweep, aux: &[f64], weight: &Weight) -> Result<SnTrace> {
    let n = block.nrows();
    let nf = n as f64;
    let total = block.row_sum().transpose();
    let mut head = DVector::zeros(block.ncols());
    let mut pos = 0usize;
    let mut k_grid = Vec::new();
    let mut values = Vec::new();
    let mut skipped = Vec::new();
    for pt in &sweep.points {
        while pos < pt.k {
            head += block.row(pos).transpose();
            pos += 1;
        }
        let Some(inv) = &pt.v_inv else {
            skipped.push(pt.k);
            continue;
        };
        let t = (&head - &total * (pt.k as f64 / nf)) / nf.sqrt();
        let quad = t.dot(&(inv * &t)).max(0.0);
        k_grid.push(pt.k);
        values.push(weight.at(pt.k as f64 / nf) * quad);
    }
    let best = argmax(&values).ok_or(Error::AllSplitsSingular)?;
    let aux_at = |k: usize| aux.get(k - 1).copied().unwrap_or(k as f64 / nf);
    Ok(SnTrace {
        argmax_k: k_grid[best],
        argmax_aux: aux_at(k_grid[best]),
        aux: k_grid.iter().map(|&k| aux_at(k)).collect(),
        k_grid,
        values,
        skipped,
        fallbacks: sweep.fallbacks.clone(),
    })
}

fn sn_result(kind: StatKind, s: &ScoreMatrix, cols: &[usize], trace: SnTrace) -> TestResult {
    TestResult {
        statistic: kind,
        value: trace.values[s_argmax(&trace)],
        critical_value: None,
        p_value: None,
        tested_params: cols.iter().map(|&c| s.names()[c].clone()).collect(),
        tested_cols: cols.to_vec(),
        argmax_aux: trace.argmax_aux,
        trace: Trace::SelfNormalized(trace),
    }
}

fn s_argmax(t: &SnTrace) -> usize {
    t.k_grid.iter().position(|&k| k == t.argmax_k).expect("argmax in grid")
}

/// Self-normalized statistic on `cols`, unweighted or weighted.
pub fn sn_stat(s: &ScoreMatrix, cols: &[usize], opts: &SnOptions) -> Result<TestResult> {
    s.check_cols(cols)?;
    let trace = sn_on_block(&s.select(cols)?, s.aux_sorted(), opts)?;
    let kind = if matches!(opts.weight, Weight::Unit) { StatKind::Sn } else { StatKind::SnW };
    Ok(sn_result(kind, s, cols, trace))
}

/// Split points at the boundaries between consecutive levels of a sorted
/// ordinal variable.
pub fn ordinal_cutpoints(aux_sorted: &[f64]) -> Vec<usize> {
    (1..aux_sorted.len()).filter(|&k| aux_sorted[k - 1] < aux_sorted[k]).collect()
}

/// Ordinal SN: supremum over the level boundaries `k_1..k_{m-1}` with weight
/// `{t(1-t)}⁻¹`.
pub fn sn_ord_stat(s: &ScoreMatrix, cols: &[usize], method: SweepMethod) -> Result<TestResult> {
    s.check_cols(cols)?;
    let cuts = ordinal_cutpoints(s.aux_sorted());
    if cuts.is_empty() {
        return Err(Error::InvalidArgument("ordinal auxiliary variable has a single level".into()));
    }
    let opts = SnOptions { weight: Weight::InverseVariance, k_range: KRange::At(cuts), method, decorrelate: None };
    let trace = sn_on_block(&s.select(cols)?, s.aux_sorted(), &opts)?;
    Ok(sn_result(StatKind::SnOrd, s, cols, trace))
}

/// Inverse normalizers for every admissible split point, by the recursive sweep.
pub fn v_matrix_sweep_recursive(s: &ScoreMatrix, cols: &[usize], k_range: &KRange) -> Result<Sweep> {
    s.check_cols(cols)?;
    let block = s.select(cols)?;
    let ks = k_range.grid(s.n(), cols.len())?;
    Ok(normalizer::sweep_recursive(&block, &ks))
}

/// Same as [`v_matrix_sweep_recursive`] but inverting each `V_n(k)` directly.
pub fn v_matrix_sweep_direct(s: &ScoreMatrix, cols: &[usize], k_range: &KRange) -> Result<Sweep> {
    s.check_cols(cols)?;
    let block = s.select(cols)?;
    let ks = k_range.grid(s.n(), cols.len())?;
    Ok(normalizer::sweep_direct(&block, &ks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{cumulative_process, order_by_auxiliary};
    use approx::assert_relative_eq;

    fn hand() -> ScoreMatrix {
        let raw = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 2.0, -2.0]);
        order_by_auxiliary(raw, &[1.0, 2.0, 3.0, 4.0], vec!["s".into()]).unwrap()
    }

    fn hand_process() -> (ScoreMatrix, CumProcess) {
        let s = hand();
        let p = cumulative_process(&s, &DMatrix::from_element(1, 1, 4.0)).unwrap();
        (s, p)
    }

    #[test]
    fn hand_traditional_statistics() {
        let (s, p) = hand_process();
        let cvm = cvm_stat(&p, &[0]).unwrap();
        assert_relative_eq!(cvm.value, 0.078125, epsilon = 1e-15);
        let dm = dm_stat(&p, &[0]).unwrap();
        assert_relative_eq!(dm.value, 0.5, epsilon = 1e-15);
        assert_eq!(dm.argmax_aux, 3.0);
        let eq9 = cvm_via_inverse_information(&s, &DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_relative_eq!(eq9, cvm.value, epsilon = 1e-15);
    }

    #[test]
    fn hand_t_vectors() {
        let s = hand();
        assert_relative_eq!(s.t_vec(1, &[0]).unwrap()[0], 0.5, epsilon = 1e-15);
        // zero-sum scores: T = n^{-1/2} B*_{1,k}; at k = n-1 it equals -n^{-1/2} s_(n)
        assert_relative_eq!(s.t_vec(3, &[0]).unwrap()[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.t_vec(3, &[0]).unwrap()[0], -(-2.0) / 2.0, epsilon = 1e-15);
        assert!(s.t_vec(4, &[0]).is_err());
        assert!(s.t_vec(0, &[0]).is_err());
    }

    #[test]
    fn hand_sn_full_range() {
        let s = hand();
        let opts = SnOptions { k_range: KRange::Full, ..Default::default() };
        let r = sn_stat(&s, &[0], &opts).unwrap();
        let Trace::SelfNormalized(t) = &r.trace else { panic!() };
        assert_eq!(t.k_grid, vec![1, 2, 3]);
        assert_relative_eq!(t.values[0], 36.0 / 29.0, epsilon = 1e-12);
        assert_relative_eq!(t.values[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(t.values[2], 144.0 / 17.0, epsilon = 1e-12);
        assert_eq!(t.argmax_k, 3);
        assert_relative_eq!(r.value, 144.0 / 17.0, epsilon = 1e-12);
    }

    #[test]
    fn maxlm_window_edges() {
        assert_eq!(maxlm_window(4, 0.25).unwrap(), (1, 3));
        assert_eq!(maxlm_window(100, 0.1).unwrap(), (10, 90));
        assert!(maxlm_window(4, 0.5).is_err());
        assert!(maxlm_window(4, 0.0).is_err());
        assert!(maxlm_window(1, 0.4).is_err());
    }

    #[test]
    fn zero_scores_give_zero_statistics() {
        let raw = DMatrix::zeros(10, 2);
        let s = order_by_auxiliary(raw, &[0.0; 10], vec!["a".into(), "b".into()]).unwrap();
        let p = cumulative_process(&s, &DMatrix::identity(2, 2)).unwrap();
        for r in [
            cvm_stat(&p, &[0, 1]).unwrap(),
            dm_stat(&p, &[0]).unwrap(),
            maxlm_stat(&p, &[1], 0.1).unwrap(),
        ] {
            assert_eq!(r.value, 0.0);
        }
        // all split points singular
        assert!(matches!(sn_stat(&s, &[0], &SnOptions::default()), Err(Error::AllSplitsSingular)));
    }

    #[test]
    fn too_few_observations_for_sn() {
        let raw = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -3.0]);
        let s = order_by_auxiliary(raw, &[0.0; 3], vec!["a".into()]).unwrap();
        assert!(matches!(sn_stat(&s, &[0], &SnOptions::default()), Err(Error::TooFewObservations { .. })));
    }

    #[test]
    fn parses_kind_names() {
        for k in StatKind::ALL {
            assert_eq!(k.as_str().parse::<StatKind>().unwrap(), k);
        }
        assert!("foo".parse::<StatKind>().is_err());
        assert_eq!(serde_json::to_string(&StatKind::SnOrd).unwrap(), "\"SN_ord\"");
    }

    #[test]
    fn trace_csv_has_critical_column() {
        let s = hand();
        let mut r = sn_stat(&s, &[0], &SnOptions { k_range: KRange::Full, ..Default::default() }).unwrap();
        r.critical_value = Some(CriticalValue { alpha: 0.05, value: 40.0 });
        let mut buf = Vec::new();
        r.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,aux,value,critical_value\n1,1,"));
        assert_eq!(text.lines().count(), 4);
        assert_eq!(r.rejects(), Some(false));
    }
}
