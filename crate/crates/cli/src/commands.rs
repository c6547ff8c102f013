use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use snlmm::critvals::{null_distribution, replication_rng, NullCache, NullSpec};
use snlmm::scores::{casewise_scores_flagged, cumulative_process, CumProcess, ScoreMatrix};
use snlmm::sim::{
    default_truth, generate_dataset, run_condition, with_jobs, write_sleep_csv, ConditionResult, NullTables,
    PowerTable, SimCondition,
};
use snlmm::stats::{self, ordinal_cutpoints, SnOptions, SweepMethod, Weight, DEFAULT_TRIM};
use snlmm::{fit_ml, Error, FitOptions, FittedLmm, LongDataset, ModelSpec, NullTable, StatKind, TestResult};

use crate::args::{Command, CritvalsArgs, FitArgs, PowerArgs, SimulateArgs, TestArgs};
use crate::config::{study_config, RunConfig};
use crate::CliError;

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit(a) => fit(&a),
        Command::Test(a) => test(&a),
        Command::Trace(a) => trace(&a),
        Command::Critvals(a) => critvals(&a),
        Command::Power(a) => power(&a),
        Command::Simulate(a) => simulate(&a),
    }
}

/// Self-describing JSON output.
#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a C,
    result: R,
}

fn emit<C: Serialize, R: Serialize>(out: Option<&Path>, command: &'static str, config: &C, result: R) -> Result<(), CliError> {
    let env = Envelope { tool: "snlmm", version: env!("CARGO_PKG_VERSION"), command, config, result };
    let mut text = serde_json::to_string_pretty(&env).map_err(Error::from)?;
    text.push('\n');
    write_output(out, text.as_bytes())
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| io_error(path, e)),
        None => io::stdout().write_all(bytes).map_err(|e| CliError::Core(e.into())),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: io::Error) -> CliError {
    CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Serialize)]
struct FitReport {
    n: usize,
    clusters: usize,
    names: Vec<String>,
    estimates: Vec<f64>,
    loglik: f64,
    converged: bool,
    iterations: usize,
    grad_norm: f64,
    boundary: Vec<bool>,
    /// Expected information of the whole sample, row by row.
    information: Vec<Vec<f64>>,
}

impl FitReport {
    fn new(fit: &FittedLmm, data: &LongDataset) -> Self {
        Self {
            n: data.n(),
            clusters: data.n_clusters(),
            names: fit.spec.names().to_vec(),
            estimates: fit.theta_hat.values.clone(),
            loglik: fit.loglik,
            converged: fit.converged,
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
            boundary: fit.boundary.clone(),
            information: fit.info.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

fn load(cfg: &RunConfig) -> Result<LongDataset, CliError> {
    if !cfg.data.is_file() {
        return Err(CliError::Usage(format!("data file {} does not exist", cfg.data.display())));
    }
    Ok(LongDataset::from_csv_path(&cfg.data, &cfg.columns())?)
}

fn fit_model(data: &LongDataset) -> Result<FittedLmm, CliError> {
    Ok(fit_ml(&ModelSpec::for_dataset(data), data, &FitOptions::default())?)
}

fn fit(args: &FitArgs) -> Result<(), CliError> {
    let cfg = RunConfig::from_fit_args(&args.data)?;
    let data = load(&cfg)?;
    let fit = fit_model(&data)?;
    emit(args.data.out.as_deref(), "fit", &cfg, FitReport::new(&fit, &data))?;
    if !fit.converged {
        return Err(Error::NotConverged.into());
    }
    Ok(())
}

#[derive(Serialize)]
struct TestReport {
    fit: FitReport,
    tests: Vec<TestResult>,
}

fn test(args: &TestArgs) -> Result<(), CliError> {
    let cfg = RunConfig::from_test_args(args)?;
    let (fit, data, tests) = run_tests(&cfg)?;
    for t in &tests {
        let crit = t.critical_value.map(|c| c.value).unwrap_or(f64::NAN);
        let verdict = if t.rejects() == Some(true) { "reject" } else { "retain" };
        eprintln!(
            "{} on {}: {:.4} (critical {:.4}, p {:.4}) {verdict}, peak at aux {}",
            t.statistic,
            t.tested_params.join("+"),
            t.value,
            crit,
            t.p_value.unwrap_or(f64::NAN),
            t.argmax_aux
        );
    }
    emit(args.data.out.as_deref(), "test", &cfg, TestReport { fit: FitReport::new(&fit, &data), tests })
}

fn trace(args: &TestArgs) -> Result<(), CliError> {
    let cfg = RunConfig::from_test_args(args)?;
    let groups = if cfg.joint { 1 } else { cfg.params.len() };
    if groups != 1 || cfg.stats.len() != 1 {
        return Err(CliError::Usage("trace needs exactly one parameter (or --joint) and one statistic".into()));
    }
    let (_, _, tests) = run_tests(&cfg)?;
    let mut buf = Vec::new();
    tests[0].write_trace_csv(&mut buf)?;
    write_output(args.data.out.as_deref(), &buf)
}

fn run_tests(cfg: &RunConfig) -> Result<(FittedLmm, LongDataset, Vec<TestResult>), CliError> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(CliError::Usage(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    let data = load(cfg)?;
    let fit = fit_model(&data)?;
    if !fit.converged {
        return Err(Error::NotConverged.into());
    }
    let scores = casewise_scores_flagged(&fit, &data, cfg.allocation)?;
    let cols = tested_columns(cfg, &scores)?;
    let groups: Vec<Vec<usize>> = if cfg.joint { vec![cols] } else { cols.into_iter().map(|c| vec![c]).collect() };
    let process = if cfg.stats.iter().any(|k| k.is_traditional()) {
        Some(cumulative_process(&scores, &(&fit.info / data.n() as f64))?)
    } else {
        None
    };
    let cache = cfg.null_cache.as_ref().map(NullCache::new);
    let mut tables: Vec<NullTable> = Vec::new();
    let mut tests = Vec::new();
    for group in &groups {
        for &kind in &cfg.stats {
            let mut result = statistic(kind, &scores, process.as_ref(), group)?;
            let mut spec = NullSpec::new(kind, group.len())
                .with_grid(cfg.null_grid)
                .with_replications(cfg.null_replications)
                .with_seed(cfg.seed);
            if kind == StatKind::SnOrd {
                let n = scores.n() as f64;
                spec = spec.with_cut_fractions(ordinal_cutpoints(scores.aux_sorted()).iter().map(|&k| k as f64 / n).collect());
            }
            let table = match tables.iter().position(|t| t.spec == spec) {
                Some(i) => &tables[i],
                None => {
                    let t = match &cache {
                        Some(c) => c.load_or_generate(&spec)?,
                        None => null_distribution(&spec)?,
                    };
                    tables.push(t);
                    tables.last().expect("just pushed")
                }
            };
            result.attach_null(table, cfg.alpha)?;
            tests.push(result);
        }
    }
    Ok((fit, data, tests))
}

fn tested_columns(cfg: &RunConfig, scores: &ScoreMatrix) -> Result<Vec<usize>, CliError> {
    if cfg.params.is_empty() {
        let cols: Vec<usize> = (0..scores.q()).filter(|&c| !scores.is_boundary(c)).collect();
        for c in (0..scores.q()).filter(|&c| scores.is_boundary(c)) {
            log::warn!("skipping `{}`: estimated on the boundary", scores.names()[c]);
        }
        return Ok(cols);
    }
    cfg.params
        .iter()
        .map(|name| {
            let c = scores.column_index(name).ok_or_else(|| {
                CliError::Usage(format!("unknown parameter `{name}`; available: {}", scores.names().join(", ")))
            })?;
            if scores.is_boundary(c) {
                return Err(Error::Boundary { name: name.clone() }.into());
            }
            Ok(c)
        })
        .collect()
}

fn statistic(kind: StatKind, s: &ScoreMatrix, p: Option<&CumProcess>, cols: &[usize]) -> Result<TestResult, CliError> {
    let process = || p.ok_or_else(|| CliError::Usage("process not computed".into()));
    Ok(match kind {
        StatKind::Sn => stats::sn_stat(s, cols, &SnOptions::default())?,
        StatKind::SnW => stats::sn_stat(s, cols, &SnOptions { weight: Weight::InverseVariance, ..Default::default() })?,
        StatKind::SnOrd => stats::sn_ord_stat(s, cols, SweepMethod::Recursive)?,
        StatKind::Cvm => stats::cvm_stat(process()?, cols)?,
        StatKind::Dm => stats::dm_stat(process()?, cols)?,
        StatKind::MaxLm => stats::maxlm_stat(process()?, cols, DEFAULT_TRIM)?,
    })
}

fn critvals(args: &CritvalsArgs) -> Result<(), CliError> {
    let mut specs = Vec::new();
    for &kind in &args.stats {
        let mut spec = NullSpec::new(kind, args.dim)
            .with_grid(args.grid)
            .with_replications(args.replications)
            .with_seed(args.seed);
        if kind == StatKind::SnOrd {
            let cuts = args.cuts.clone().ok_or_else(|| CliError::Usage("SN_ord needs --cuts".into()))?;
            spec = spec.with_cut_fractions(cuts);
        }
        spec.validate_public()?;
        specs.push(spec);
    }
    let cache = args.null_cache.as_ref().map(NullCache::new);
    let tables = with_jobs(args.jobs, || {
        specs
            .iter()
            .map(|s| match &cache {
                Some(c) => c.load_or_generate(s),
                None => null_distribution(s),
            })
            .collect::<snlmm::Result<Vec<_>>>()
    })??;
    let summaries: Vec<NullTable> = tables.into_iter().map(NullTable::without_samples).collect();
    emit(args.out.as_deref(), "critvals", &specs, summaries)
}

fn power(args: &PowerArgs) -> Result<(), CliError> {
    if let Some(path) = &args.config {
        if !path.is_file() {
            return Err(CliError::Usage(format!("config file {} does not exist", path.display())));
        }
    }
    let cfg = study_config(args)?;
    let truth = cfg.truth().theta();
    let conds = cfg.conditions();
    let cache = args.null_cache.as_ref().map(NullCache::new);
    let tables = with_jobs(args.jobs, || NullTables::for_conditions(&conds, &cfg.null_spec(), cache.as_ref()))??;
    if let Some(dir) = &args.checkpoints {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut results = Vec::with_capacity(conds.len());
    let mut fresh = 0;
    for (i, cond) in conds.iter().enumerate() {
        let path = args.checkpoints.as_ref().map(|d| checkpoint_path(d, i));
        if let Some(r) = path.as_deref().and_then(|p| read_checkpoint(p, cond)) {
            eprintln!("[{}/{}] {} (from checkpoint)", i + 1, conds.len(), describe(cond));
            results.push(r);
            continue;
        }
        if args.stop_after.is_some_and(|n| fresh >= n) {
            eprintln!("stopped after {fresh} new conditions");
            return Ok(());
        }
        let r = with_jobs(args.jobs, || run_condition(cond, &truth, &tables, &cfg.options))??;
        if let Some(p) = &path {
            let tmp = p.with_extension("json.tmp");
            std::fs::write(&tmp, serde_json::to_string(&r).map_err(Error::from)?).map_err(|e| io_error(&tmp, e))?;
            std::fs::rename(&tmp, p).map_err(|e| io_error(p, e))?;
        }
        fresh += 1;
        eprintln!("[{}/{}] {} ({} fit failures)", i + 1, conds.len(), describe(cond), r.fit_failures);
        results.push(r);
    }
    let table = PowerTable::from_results(results);
    if let Some(path) = &args.csv {
        let mut w = create(path)?;
        table.write_csv(&mut w)?;
        w.flush().map_err(|e| io_error(path, e))?;
    }
    emit(args.out.as_deref(), "power", &cfg, table)
}

fn checkpoint_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("condition-{index:04}.json"))
}

fn read_checkpoint(path: &Path, cond: &SimCondition) -> Option<ConditionResult> {
    let text = std::fs::read_to_string(path).ok()?;
    match serde_json::from_str::<ConditionResult>(&text) {
        Ok(r) if r.condition == *cond => Some(r),
        _ => {
            log::warn!("ignoring checkpoint {} from a different study", path.display());
            None
        }
    }
}

fn describe(c: &SimCondition) -> String {
    format!("J={} d={} changed={}", c.subjects, c.d, c.changed)
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let cond = SimCondition {
        subjects: args.subjects,
        d: args.d,
        changed: args.changed.clone(),
        tested: vec![args.changed.clone()],
        statistics: vec![StatKind::Sn],
        replications: 1,
        seed: args.seed,
    };
    let data = generate_dataset(&cond, &default_truth().theta(), &mut replication_rng(args.seed, 0))?;
    let mut buf = Vec::new();
    write_sleep_csv(&data, &mut buf)?;
    write_output(args.out.as_deref(), &buf)
}
