//! Sleepstudy-style data generator and the power / Type I study.
//!
//! Subjects are observed on days 0..9 under a random intercept and slope
//! model. Each subject carries a standard-normal auxiliary value, and subjects
//! below its median get the changed fixed effect shifted by `d` asymptotic
//! standard errors.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critvals::{self, NullCache, NullSpec, NullTable};
use crate::data::{LongDataset, INTERCEPT_NAME};
use crate::error::{Error, Result};
use crate::linalg::inv_spd;
use crate::model::{expected_information, fit_ml, FitOptions, ModelSpec, ThetaVector};
use crate::scores::{casewise_scores_flagged, Allocation, cumulative_process, CumProcess, ScoreMatrix};
use crate::stats::{self, SnOptions, StatKind, SweepMethod, Weight};

pub const DAYS: usize = 10;

/// Parameter names in reporting order.
pub const PARAM_NAMES: [&str; 6] = ["beta0", "beta1", "sigma0^2", "sigma01", "sigma1^2", "sigmar^2"];

const DEFAULT_TRUTH_JSON: &str = include_str!("../data/default_truth.json");

/// Model of the simulation: fixed and random intercept and slope on days.
pub fn sleep_spec() -> ModelSpec {
    ModelSpec::new(2, 2, PARAM_NAMES.iter().map(|s| s.to_string()).collect()).expect("static spec")
}

/// Generator truth with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub provenance: String,
}

impl TruthConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: TruthConfig = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.names.len() != PARAM_NAMES.len() || self.names.iter().zip(PARAM_NAMES).any(|(a, b)| a != b) {
            return Err(Error::Data(format!("truth names must be {PARAM_NAMES:?}")));
        }
        self.theta().validate(&sleep_spec())
    }

    pub fn theta(&self) -> ThetaVector {
        ThetaVector::new(self.values.clone())
    }
}

/// Estimates from fitting the sleepstudy data, frozen in `data/default_truth.json`.
pub fn default_truth() -> TruthConfig {
    TruthConfig::from_json_str(DEFAULT_TRUTH_JSON).expect("bundled truth is valid")
}

/// One cell of the study grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCondition {
    pub subjects: usize,
    pub d: f64,
    /// `beta0` or `beta1`.
    pub changed: String,
    pub tested: Vec<String>,
    pub statistics: Vec<StatKind>,
    pub replications: usize,
    pub seed: u64,
}

impl SimCondition {
    pub fn n(&self) -> usize {
        self.subjects * DAYS
    }

    fn changed_index(&self) -> Result<usize> {
        match self.changed.as_str() {
            "beta0" => Ok(0),
            "beta1" => Ok(1),
            other => Err(Error::InvalidArgument(format!("only beta0 or beta1 can change, got {other}"))),
        }
    }

    fn tested_indices(&self) -> Result<Vec<usize>> {
        let spec = sleep_spec();
        self.tested
            .iter()
            .map(|t| spec.index_of(t).ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {t}"))))
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.subjects < 4 {
            return Err(Error::InvalidArgument("need at least 4 subjects".into()));
        }
        if !self.d.is_finite() || self.d < 0.0 {
            return Err(Error::InvalidArgument(format!("change magnitude must be finite and nonnegative, got {}", self.d)));
        }
        self.changed_index()?;
        self.tested_indices()?;
        Ok(())
    }

    /// Seed of this condition's replication streams.
    pub fn stream_seed(&self) -> u64 {
        let key = format!("{}|{}|{}", self.subjects, self.d.to_bits(), self.changed);
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for b in key.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        splitmix(h)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn subject_design() -> DMatrix<f64> {
    DMatrix::from_fn(DAYS, 2, |i, j| if j == 0 { 1.0 } else { i as f64 })
}

fn assemble(subjects: usize, y: Vec<f64>, aux: Vec<f64>) -> Result<LongDataset> {
    let ids: Vec<String> = (0..subjects).flat_map(|j| std::iter::repeat_n(format!("S{j:03}"), DAYS)).collect();
    let one = subject_design();
    let x = DMatrix::from_fn(subjects * DAYS, 2, |i, j| one[(i % DAYS, j)]);
    let names = vec![INTERCEPT_NAME.to_string(), "Days".to_string()];
    LongDataset::new(&ids, y, x.clone(), x, aux, names.clone(), names)
}

/// Asymptotic standard errors at `truth` for `subjects` subjects, from the
/// inverse expected information of the model without change.
pub fn asymptotic_se(truth: &ThetaVector, subjects: usize) -> Result<DVector<f64>> {
    let spec = sleep_spec();
    let data = assemble(subjects, vec![0.0; subjects * DAYS], vec![0.0; subjects * DAYS])?;
    let info = expected_information(&spec, truth, &data)?;
    let inv = inv_spd(&info).ok_or(Error::InfoNotPositiveDefinite { smallest: crate::linalg::min_eigenvalue(&info) })?;
    Ok(inv.diagonal().map(f64::sqrt))
}

/// Square root of a PSD matrix, via Cholesky or, for singular `G`, eigenvalues.
fn psd_root(g: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = g.clone().cholesky() {
        return c.l();
    }
    let eig = g.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d)
}

/// Draws one dataset. `shift` is the absolute change applied to the changed
/// fixed effect for subjects below the auxiliary median.
pub fn generate_with_shift<R: Rng + ?Sized>(
    subjects: usize,
    changed: usize,
    shift: f64,
    truth: &ThetaVector,
    rng: &mut R,
) -> Result<LongDataset> {
    let spec = sleep_spec();
    truth.validate(&spec)?;
    let root = psd_root(&truth.g_matrix(&spec));
    let sd = truth.sigma2().sqrt();
    let beta = truth.beta(&spec);
    let aux: Vec<f64> = (0..subjects).map(|_| rng.sample(StandardNormal)).collect();
    let mut rank: Vec<usize> = (0..subjects).collect();
    rank.sort_by(|&a, &b| aux[a].total_cmp(&aux[b]));
    let mut low = vec![false; subjects];
    for &j in &rank[..subjects / 2] {
        low[j] = true;
    }
    let mut y = Vec::with_capacity(subjects * DAYS);
    for j in 0..subjects {
        let z = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = &root * z;
        let mut coef = [beta[0] + b[0], beta[1] + b[1]];
        if low[j] {
            coef[changed] += shift;
        }
        for day in 0..DAYS {
            let e: f64 = rng.sample(StandardNormal);
            y.push(coef[0] + coef[1] * day as f64 + sd * e);
        }
    }
    let aux_rows = aux.iter().flat_map(|&a| std::iter::repeat_n(a, DAYS)).collect();
    assemble(subjects, y, aux_rows)
}

/// Draws one dataset for `cond`: the changed effect moves by `d · ase`.
pub fn generate_dataset<R: Rng + ?Sized>(cond: &SimCondition, truth: &ThetaVector, rng: &mut R) -> Result<LongDataset> {
    cond.check()?;
    let c = cond.changed_index()?;
    let shift = cond.d * asymptotic_se(truth, cond.subjects)?[c];
    generate_with_shift(cond.subjects, c, shift, truth, rng)
}

/// Writes a simulated dataset as `Subject,Days,Reaction,aux` CSV.
pub fn write_sleep_csv<W: Write>(data: &LongDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["Subject", "Days", "Reaction", "aux"])?;
    for (i, &c) in data.cluster_of().iter().enumerate() {
        w.write_record([
            data.clusters()[c].id.clone(),
            data.fixed()[(i, 1)].to_string(),
            data.response()[i].to_string(),
            data.aux()[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Null tables available to a study, all for single-parameter tests.
#[derive(Debug, Clone, Default)]
pub struct NullTables {
    tables: Vec<NullTable>,
}

impl NullTables {
    pub fn new(tables: Vec<NullTable>) -> Self {
        Self { tables }
    }

    pub fn tables(&self) -> &[NullTable] {
        &self.tables
    }

    /// Split fractions used by SN_ord with `subjects` distinct auxiliary levels.
    pub fn subject_cuts(subjects: usize) -> Vec<f64> {
        (1..subjects).map(|j| j as f64 / subjects as f64).collect()
    }

    /// Simulates (or loads from `cache`) every table the conditions need.
    pub fn for_conditions(
        conds: &[SimCondition],
        base: &NullSpec,
        cache: Option<&NullCache>,
    ) -> Result<Self> {
        let mut specs: Vec<NullSpec> = Vec::new();
        for c in conds {
            for &kind in &c.statistics {
                let mut spec = NullSpec { kind, dim: 1, cut_fractions: Vec::new(), ..base.clone() };
                if kind == StatKind::SnOrd {
                    spec.cut_fractions = Self::subject_cuts(c.subjects);
                }
                if !specs.contains(&spec) {
                    specs.push(spec);
                }
            }
        }
        let tables = specs
            .iter()
            .map(|s| match cache {
                Some(cache) => cache.load_or_generate(s),
                None => critvals::null_distribution(s),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tables })
    }

    pub fn find(&self, kind: StatKind, subjects: usize) -> Option<&NullTable> {
        self.tables.iter().find(|t| {
            t.spec.kind == kind
                && t.spec.dim == 1
                && (kind != StatKind::SnOrd || t.spec.cut_fractions == Self::subject_cuts(subjects))
        })
    }
}

/// Knobs of a study run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub alpha: f64,
    pub fit: FitOptions,
    /// A condition fails when more than this share of its fits fail.
    pub max_failure_rate: f64,
    pub trim: f64,
    #[serde(default)]
    pub allocation: Allocation,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            fit: FitOptions::default(),
            max_failure_rate: 0.02,
            trim: stats::DEFAULT_TRIM,
            allocation: Allocation::default(),
        }
    }
}

/// Rejection count for one tested parameter and statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEntry {
    pub subjects: usize,
    pub n: usize,
    pub d: f64,
    pub changed: String,
    pub tested: String,
    pub statistic: StatKind,
    pub rejections: usize,
    /// Replications where the test could be run.
    pub replications: usize,
    /// Replications where the test was refused (boundary estimate or
    /// numerically singular normalizer).
    pub refused: usize,
    pub rate: f64,
    pub se: f64,
}

/// Outcome of one condition; also the checkpoint unit of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: SimCondition,
    pub attempted: usize,
    pub fit_failures: usize,
    pub entries: Vec<PowerEntry>,
}

#[derive(Clone, Copy)]
enum Outcome {
    Reject,
    Accept,
    Refused,
}

/// Runs all replications of one condition on the current rayon pool.
pub fn run_condition(
    cond: &SimCondition,
    truth: &ThetaVector,
    tables: &NullTables,
    opts: &StudyOptions,
) -> Result<ConditionResult> {
    cond.check()?;
    let changed = cond.changed_index()?;
    let tested = cond.tested_indices()?;
    let mut crit = Vec::new();
    for &kind in &cond.statistics {
        let table = tables
            .find(kind, cond.subjects)
            .ok_or_else(|| Error::Study(format!("no null table for {kind}")))?;
        crit.push(
            table
                .critical_value(opts.alpha)
                .ok_or_else(|| Error::Study(format!("null table for {kind} lacks alpha = {}", opts.alpha)))?,
        );
    }
    let shift = cond.d * asymptotic_se(truth, cond.subjects)?[changed];
    let base = cond.stream_seed();
    let outcomes: Vec<Option<Vec<Outcome>>> = (0..cond.replications as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = critvals::replication_rng(base, rep);
            let data = generate_with_shift(cond.subjects, changed, shift, truth, &mut rng).ok()?;
            replicate(&data, &tested, &cond.statistics, &crit, opts)
        })
        .collect();

    let width = tested.len() * cond.statistics.len();
    let mut rejections = vec![0usize; width];
    let mut valid = vec![0usize; width];
    let mut refused = vec![0usize; width];
    let mut failures = 0;
    for o in &outcomes {
        let Some(o) = o else {
            failures += 1;
            continue;
        };
        for (i, r) in o.iter().enumerate() {
            match r {
                Outcome::Reject => {
                    rejections[i] += 1;
                    valid[i] += 1;
                }
                Outcome::Accept => valid[i] += 1,
                Outcome::Refused => refused[i] += 1,
            }
        }
    }
    if failures as f64 > opts.max_failure_rate * cond.replications as f64 {
        return Err(Error::Study(format!(
            "{failures} of {} fits failed for J = {}, d = {}, changed {}",
            cond.replications, cond.subjects, cond.d, cond.changed
        )));
    }
    if failures > 0 {
        log::warn!("{failures} fit failures excluded (J = {}, d = {}, {})", cond.subjects, cond.d, cond.changed);
    }
    let mut entries = Vec::with_capacity(width);
    for (ti, &t) in tested.iter().enumerate() {
        for (si, &kind) in cond.statistics.iter().enumerate() {
            let i = ti * cond.statistics.len() + si;
            let rate = if valid[i] > 0 { rejections[i] as f64 / valid[i] as f64 } else { f64::NAN };
            entries.push(PowerEntry {
                subjects: cond.subjects,
                n: cond.n(),
                d: cond.d,
                changed: cond.changed.clone(),
                tested: PARAM_NAMES[t].to_string(),
                statistic: kind,
                rejections: rejections[i],
                replications: valid[i],
                refused: refused[i],
                rate,
                se: (rate * (1.0 - rate) / valid[i] as f64).sqrt(),
            });
        }
    }
    Ok(ConditionResult { condition: cond.clone(), attempted: cond.replications, fit_failures: failures, entries })
}

/// Fits, scores and tests one dataset. `None` when the fit fails.
fn replicate(
    data: &LongDataset,
    tested: &[usize],
    kinds: &[StatKind],
    crit: &[f64],
    opts: &StudyOptions,
) -> Option<Vec<Outcome>> {
    let fit = fit_ml(&sleep_spec(), data, &opts.fit).ok()?;
    if !fit.converged {
        return None;
    }
    let scores = casewise_scores_flagged(&fit, data, opts.allocation).ok()?;
    let needs_process = kinds.iter().any(|k| k.is_traditional());
    let process = if needs_process { cumulative_process(&scores, &(&fit.info / data.n() as f64)).ok() } else { None };
    let mut out = Vec::with_capacity(tested.len() * kinds.len());
    for &c in tested {
        for (&kind, &cv) in kinds.iter().zip(crit) {
            let value = if scores.is_boundary(c) { None } else { statistic(kind, &scores, process.as_ref(), c, opts.trim) };
            out.push(match value {
                Some(v) if v > cv => Outcome::Reject,
                Some(_) => Outcome::Accept,
                None => Outcome::Refused,
            });
        }
    }
    Some(out)
}

fn statistic(kind: StatKind, s: &ScoreMatrix, p: Option<&CumProcess>, col: usize, trim: f64) -> Option<f64> {
    let cols = [col];
    let r = match kind {
        StatKind::Sn => stats::sn_stat(s, &cols, &SnOptions::default()),
        StatKind::SnW => stats::sn_stat(s, &cols, &SnOptions { weight: Weight::InverseVariance, ..Default::default() }),
        StatKind::SnOrd => stats::sn_ord_stat(s, &cols, SweepMethod::Recursive),
        StatKind::Cvm => stats::cvm_stat(p?, &cols),
        StatKind::Dm => stats::dm_stat(p?, &cols),
        StatKind::MaxLm => stats::maxlm_stat(p?, &cols, trim),
    };
    r.ok().map(|r| r.value)
}

/// Runs every condition, parallel over replications with `jobs` threads
/// (all cores when `None`).
pub fn run_power_study(
    conds: &[SimCondition],
    truth: &ThetaVector,
    tables: &NullTables,
    opts: &StudyOptions,
    jobs: Option<usize>,
) -> Result<PowerTable> {
    let results = with_jobs(jobs, || conds.iter().map(|c| run_condition(c, truth, tables, opts)).collect::<Result<Vec<_>>>())??;
    Ok(PowerTable::from_results(results))
}

/// Runs `f` on a dedicated pool of `jobs` threads.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::Study(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Rejection rates of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub conditions: Vec<ConditionResult>,
}

impl PowerTable {
    pub fn from_results(conditions: Vec<ConditionResult>) -> Self {
        Self { conditions }
    }

    pub fn entries(&self) -> impl Iterator<Item = &PowerEntry> {
        self.conditions.iter().flat_map(|c| c.entries.iter())
    }

    pub fn find(&self, subjects: usize, d: f64, changed: &str, tested: &str, kind: StatKind) -> Option<&PowerEntry> {
        self.entries().find(|e| {
            e.subjects == subjects && e.d == d && e.changed == changed && e.tested == tested && e.statistic == kind
        })
    }

    /// Wide CSV: one row per (changed, tested, sample size, statistic), one
    /// column of rejection percentages per `d`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut ds: Vec<f64> = Vec::new();
        let mut keys: Vec<(String, String, usize, StatKind)> = Vec::new();
        for e in self.entries() {
            if !ds.contains(&e.d) {
                ds.push(e.d);
            }
            let key = (e.changed.clone(), e.tested.clone(), e.subjects, e.statistic);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        ds.sort_by(f64::total_cmp);
        let param_rank = |name: &str| PARAM_NAMES.iter().position(|p| *p == name).unwrap_or(usize::MAX);
        let stat_rank = |k: StatKind| StatKind::ALL.iter().position(|&s| s == k).unwrap_or(usize::MAX);
        keys.sort_by_key(|(c, t, j, s)| (param_rank(c), param_rank(t), *j, stat_rank(*s)));

        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["changed".to_string(), "tested".into(), "n".into(), "statistic".into()];
        header.extend(ds.iter().map(|d| format!("d={d}")));
        w.write_record(&header)?;
        for (c, t, j, s) in keys {
            let mut row = vec![c.clone(), t.clone(), (j * DAYS).to_string(), s.to_string()];
            for &d in &ds {
                row.push(match self.find(j, d, &c, &t, s) {
                    Some(e) if e.rate.is_finite() => format!("{:.1}", 100.0 * e.rate),
                    _ => String::new(),
                });
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// JSON description of a full study grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub subjects: Vec<usize>,
    pub d: Vec<f64>,
    pub changed: Vec<String>,
    pub tested: Vec<String>,
    pub statistics: Vec<StatKind>,
    pub replications: usize,
    pub seed: u64,
    pub options: StudyOptions,
    pub null_grid: usize,
    pub null_replications: usize,
    pub null_seed: u64,
    /// Replaces the bundled truth when present.
    pub truth: Option<TruthConfig>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            subjects: vec![24, 48, 96],
            d: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            changed: vec!["beta0".into(), "beta1".into()],
            tested: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
            statistics: vec![StatKind::Sn, StatKind::Cvm, StatKind::Dm, StatKind::MaxLm],
            replications: 500,
            seed: 1,
            options: StudyOptions::default(),
            null_grid: critvals::DEFAULT_GRID,
            null_replications: critvals::DEFAULT_REPLICATIONS,
            null_seed: critvals::DEFAULT_SEED,
            truth: None,
        }
    }
}

impl StudyConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be positive".into()));
        }
        if !(self.options.alpha > 0.0 && self.options.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.options.alpha)));
        }
        if self.statistics.is_empty() || self.tested.is_empty() {
            return Err(Error::InvalidArgument("need at least one statistic and one tested parameter".into()));
        }
        if let Some(t) = &self.truth {
            t.check()?;
        }
        self.conditions().iter().try_for_each(SimCondition::check)?;
        self.null_spec().validate_public()
    }

    pub fn truth(&self) -> TruthConfig {
        self.truth.clone().unwrap_or_else(default_truth)
    }

    /// Base spec for the null tables; kind and cuts are filled per statistic.
    pub fn null_spec(&self) -> NullSpec {
        NullSpec::new(StatKind::Sn, 1)
            .with_grid(self.null_grid)
            .with_replications(self.null_replications)
            .with_seed(self.null_seed)
    }

    /// Conditions in `changed × subjects × d` order.
    pub fn conditions(&self) -> Vec<SimCondition> {
        let mut out = Vec::new();
        for c in &self.changed {
            for &j in &self.subjects {
                for &d in &self.d {
                    out.push(SimCondition {
                        subjects: j,
                        d,
                        changed: c.clone(),
                        tested: self.tested.clone(),
                        statistics: self.statistics.clone(),
                        replications: self.replications,
                        seed: self.seed,
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sleep_csv_round_trips() {
        let truth = default_truth().theta();
        let data = generate_with_shift(5, 0, 3.0, &truth, &mut critvals::replication_rng(4, 0)).unwrap();
        let mut buf = Vec::new();
        write_sleep_csv(&data, &mut buf).unwrap();
        let map = crate::data::ColumnMap {
            cluster: "Subject".into(),
            response: "Reaction".into(),
            fixed: vec![crate::data::INTERCEPT.into(), "Days".into()],
            random: vec![crate::data::INTERCEPT.into(), "Days".into()],
            aux: Some("aux".into()),
        };
        let back = LongDataset::from_csv_reader(buf.as_slice(), &map).unwrap();
        assert_eq!(back.response(), data.response());
        assert_eq!(back.aux(), data.aux());
        assert_eq!(back.fixed(), data.fixed());
    }

    fn cond(d: f64, changed: &str, reps: usize) -> SimCondition {
        SimCondition {
            subjects: 24,
            d,
            changed: changed.into(),
            tested: vec!["beta0".into(), "beta1".into()],
            statistics: vec![StatKind::Sn, StatKind::Cvm],
            replications: reps,
            seed: 3,
        }
    }

    #[test]
    fn truth_round_trips_exactly() {
        let t = default_truth();
        let text = serde_json::to_string(&t).unwrap();
        assert_eq!(TruthConfig::from_json_str(&text).unwrap(), t);
        assert!(t.theta().validate(&sleep_spec()).is_ok());
    }

    #[test]
    fn truth_rejects_bad_names_and_values() {
        let mut t = default_truth();
        t.names.swap(0, 1);
        assert!(t.check().is_err());
        let mut t = default_truth();
        t.values[5] = -1.0;
        assert!(t.check().is_err());
    }

    #[test]
    fn shift_hits_lower_half_exactly() {
        let truth = default_truth().theta();
        // no randomness in the shift: compare a shifted and an unshifted draw
        let a = generate_with_shift(24, 0, 0.0, &truth, &mut critvals::replication_rng(9, 0)).unwrap();
        let b = generate_with_shift(24, 0, 7.5, &truth, &mut critvals::replication_rng(9, 0)).unwrap();
        let median = {
            let mut s: Vec<f64> = a.aux().iter().step_by(DAYS).copied().collect();
            s.sort_by(f64::total_cmp);
            0.5 * (s[11] + s[12])
        };
        for i in 0..a.n() {
            let diff = b.response()[i] - a.response()[i];
            let expect = if a.aux()[i] < median { 7.5 } else { 0.0 };
            assert!((diff - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn dataset_shape() {
        let truth = default_truth().theta();
        let data = generate_dataset(&cond(2.0, "beta1", 1), &truth, &mut critvals::replication_rng(1, 0)).unwrap();
        assert_eq!(data.n(), 240);
        assert_eq!(data.n_clusters(), 24);
        assert!(data.is_balanced());
        assert_eq!(data.fixed().column(1).iter().take(DAYS).copied().collect::<Vec<_>>(), (0..10).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn condition_checks() {
        assert!(cond(-1.0, "beta0", 1).check().is_err());
        assert!(cond(1.0, "sigma0^2", 1).check().is_err());
        let mut c = cond(1.0, "beta0", 1);
        c.tested.push("gamma".into());
        assert!(c.check().is_err());
        assert_ne!(cond(1.0, "beta0", 1).stream_seed(), cond(2.0, "beta0", 1).stream_seed());
    }

    #[test]
    fn study_is_schedule_independent() {
        let truth = default_truth().theta();
        let conds = vec![cond(3.0, "beta0", 24)];
        let base = NullSpec::new(StatKind::Sn, 1).with_grid(200).with_replications(1000);
        let tables = NullTables::for_conditions(&conds, &base, None).unwrap();
        let opts = StudyOptions::default();
        let one = run_power_study(&conds, &truth, &tables, &opts, Some(1)).unwrap();
        let four = run_power_study(&conds, &truth, &tables, &opts, Some(4)).unwrap();
        assert_eq!(one, four);
        let e = one.find(24, 3.0, "beta0", "beta0", StatKind::Sn).unwrap();
        assert_eq!(e.rate, e.rejections as f64 / e.replications as f64);
        let mut csv = Vec::new();
        one.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("changed,tested,n,statistic,d=3\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn study_config_defaults_and_unknown_fields() {
        let cfg = StudyConfig::from_json_str("{\"replications\": 10, \"subjects\": [24]}").unwrap();
        assert_eq!(cfg.conditions().len(), 10);
        assert!(StudyConfig::from_json_str("{\"replicates\": 10}").is_err());
        assert!(StudyConfig::from_json_str("{\"replications\": 0}").is_err());
    }
}
