//! Null distributions of the fluctuation statistics, simulated from
//! discretized Brownian bridges, with critical values and p-values.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{self, CriticalValue, KRange, SnOptions, StatKind, TestResult, Weight};

/// Levels stored in every table.
pub const ALPHAS: [f64; 3] = [0.10, 0.05, 0.01];

pub const DEFAULT_GRID: usize = 1000;
pub const DEFAULT_REPLICATIONS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 20_221_015;

/// Bump when the simulation algorithm changes; part of the cache key.
pub const TABLE_VERSION: u32 = 1;

/// What to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSpec {
    pub kind: StatKind,
    /// Number of tested columns.
    pub dim: usize,
    pub grid: usize,
    pub replications: usize,
    pub seed: u64,
    /// maxLM trimming fraction.
    #[serde(default = "default_trim")]
    pub trim: f64,
    /// SN_ord split points as fractions of the sample.
    #[serde(default)]
    pub cut_fractions: Vec<f64>,
}

fn default_trim() -> f64 {
    stats::DEFAULT_TRIM
}

impl NullSpec {
    pub fn new(kind: StatKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            grid: DEFAULT_GRID,
            replications: DEFAULT_REPLICATIONS,
            seed: DEFAULT_SEED,
            trim: stats::DEFAULT_TRIM,
            cut_fractions: Vec::new(),
        }
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_replications(mut self, replications: usize) -> Self {
        self.replications = replications;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_cut_fractions(mut self, cuts: Vec<f64>) -> Self {
        self.cut_fractions = cuts;
        self
    }

    /// File-name-safe identifier of the table.
    pub fn cache_key(&self) -> String {
        let mut key = format!(
            "v{TABLE_VERSION}_{}_q{}_g{}_r{}_s{}",
            self.kind.as_str(),
            self.dim,
            self.grid,
            self.replications,
            self.seed
        );
        if self.kind == StatKind::MaxLm {
            key.push_str(&format!("_t{}", self.trim));
        }
        if self.kind == StatKind::SnOrd {
            // FNV-1a over the cut positions
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for c in &self.cut_fractions {
                for b in c.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
            key.push_str(&format!("_c{h:016x}"));
        }
        key
    }

    pub fn validate_public(&self) -> Result<()> {
        self.validate()
    }

    fn validate(&self) -> Result<()> {
        if self.grid < 10 {
            return Err(Error::InvalidArgument(format!("bridge grid must be at least 10, got {}", self.grid)));
        }
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("need at least one replication".into()));
        }
        if self.replications < 1000 {
            log::warn!("null table with only {} replications", self.replications);
        }
        if self.kind == StatKind::SnOrd {
            if self.cut_fractions.is_empty() {
                return Err(Error::InvalidArgument("SN_ord tables need cut fractions".into()));
            }
            if self.cut_fractions.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
                return Err(Error::InvalidArgument("cut fractions must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// One stored quantile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub alpha: f64,
    pub critical_value: f64,
}

/// Simulated null distribution of one statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullTable {
    pub version: u32,
    pub spec: NullSpec,
    pub quantiles: Vec<Quantile>,
    /// Sorted draws, kept for p-values.
    #[serde(default)]
    pub samples: Option<Vec<f64>>,
}

impl NullTable {
    pub fn kind(&self) -> StatKind {
        self.spec.kind
    }

    pub fn critical_value(&self, alpha: f64) -> Option<f64> {
        if let Some(q) = self.quantiles.iter().find(|q| (q.alpha - alpha).abs() < 1e-12) {
            return Some(q.critical_value);
        }
        self.samples.as_ref().map(|s| empirical_quantile(s, alpha))
    }

    /// `(r + 1) / (R + 1)` with `r` the number of draws at or above `value`.
    pub fn p_value(&self, value: f64) -> Result<f64> {
        let samples = self.samples.as_ref().ok_or(Error::NoStoredSamples)?;
        let below = samples.partition_point(|&s| s < value);
        let r = samples.len() - below;
        Ok((r + 1) as f64 / (samples.len() + 1) as f64)
    }

    pub fn without_samples(mut self) -> Self {
        self.samples = None;
        self
    }

    /// Parses and validates a table from JSON.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let table: NullTable = serde_json::from_str(text)?;
        table.check()?;
        Ok(table)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json_string()?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Structural checks for tables read from disk.
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Data(format!("invalid null table: {m}")));
        if self.quantiles.iter().any(|q| !(q.alpha > 0.0 && q.alpha < 1.0) || !q.critical_value.is_finite()) {
            return bad("quantile out of range");
        }
        let mut qs = self.quantiles.clone();
        qs.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
        if qs.windows(2).any(|w| w[0].critical_value < w[1].critical_value) {
            return bad("critical values are not monotone in alpha");
        }
        if let Some(s) = &self.samples {
            if s.len() != self.spec.replications {
                return bad("sample count differs from replications");
            }
            if s.iter().any(|v| !v.is_finite()) || s.windows(2).any(|w| w[0] > w[1]) {
                return bad("samples must be finite and sorted");
            }
        }
        Ok(())
    }
}

/// Type-1 empirical quantile: the `⌈(1-α)R⌉`-th smallest draw.
pub fn empirical_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let r = sorted.len();
    let idx = (((1.0 - alpha) * r as f64).ceil() as usize).clamp(1, r);
    sorted[idx - 1]
}

/// Independent generator for replication `index` of a run seeded by `seed`.
pub fn replication_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n_g × dim` discretized standard Brownian bridge on `{1/n_g, …, 1}`:
/// cumulative sums of `N(0, 1/n_g)` increments minus `t` times the total.
pub fn simulate_bridge<R: Rng + ?Sized>(grid: usize, dim: usize, rng: &mut R) -> DMatrix<f64> {
    let sd = 1.0 / (grid as f64).sqrt();
    let mut incr = DMatrix::zeros(grid, dim);
    for j in 0..dim {
        for i in 0..grid {
            let z: f64 = rng.sample(StandardNormal);
            incr[(i, j)] = z * sd;
        }
    }
    bridge_from_increments(&incr)
}

pub(crate) fn bridge_from_increments(incr: &DMatrix<f64>) -> DMatrix<f64> {
    let (grid, dim) = incr.shape();
    let mut out = DMatrix::zeros(grid, dim);
    for j in 0..dim {
        let mut acc = 0.0;
        for i in 0..grid {
            acc += incr[(i, j)];
            out[(i, j)] = acc;
        }
        let total = acc;
        for i in 0..grid {
            let t = (i + 1) as f64 / grid as f64;
            out[(i, j)] -= t * total;
        }
    }
    out
}

/// Applies a statistic's functional to one bridge path.
pub fn bridge_functional(spec: &NullSpec, bridge: &DMatrix<f64>) -> Result<f64> {
    let (grid, _) = bridge.shape();
    let g = grid as f64;
    match spec.kind {
        StatKind::Cvm => Ok(bridge.iter().map(|v| v * v).sum::<f64>() / g),
        StatKind::Dm => Ok(bridge.amax()),
        StatKind::MaxLm => {
            let (lo, hi) = stats::maxlm_window(grid, spec.trim)?;
            Ok((lo..=hi)
                .map(|k| {
                    let t = k as f64 / g;
                    bridge.row(k - 1).norm_squared() / (t * (1.0 - t))
                })
                .fold(f64::NEG_INFINITY, f64::max))
        }
        StatKind::Sn | StatKind::SnW | StatKind::SnOrd => {
            // bridge increments play the role of the ordered scores
            let mut scores = DMatrix::zeros(grid, bridge.ncols());
            for i in 0..grid {
                let prev = if i == 0 { bridge.row(0) * 0.0 } else { bridge.row(i - 1).into_owned() };
                scores.set_row(i, &((bridge.row(i) - prev) * g.sqrt()));
            }
            let opts = match spec.kind {
                StatKind::Sn => SnOptions::default(),
                StatKind::SnW => SnOptions { weight: Weight::InverseVariance, ..Default::default() },
                _ => SnOptions {
                    weight: Weight::InverseVariance,
                    k_range: KRange::At(cut_positions(&spec.cut_fractions, grid)),
                    ..Default::default()
                },
            };
            let aux: Vec<f64> = Vec::new();
            Ok(stats::sn_on_block(&scores, &aux, &opts)?.values.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        }
    }
}

/// Split points for cut fractions on a grid of `n` cases.
pub fn cut_positions(fractions: &[f64], n: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = fractions
        .iter()
        .map(|f| ((f * n as f64).round() as usize).clamp(1, n - 1))
        .collect();
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// Simulates the null distribution. Deterministic in `spec`, independent of
/// the number of worker threads.
pub fn null_distribution(spec: &NullSpec) -> Result<NullTable> {
    spec.validate()?;
    let draws: Result<Vec<f64>> = (0..spec.replications as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replication_rng(spec.seed, i);
            let bridge = simulate_bridge(spec.grid, spec.dim, &mut rng);
            bridge_functional(spec, &bridge)
        })
        .collect();
    let mut draws = draws?;
    draws.sort_by(f64::total_cmp);
    let quantiles = ALPHAS
        .iter()
        .map(|&alpha| Quantile { alpha, critical_value: empirical_quantile(&draws, alpha) })
        .collect();
    Ok(NullTable { version: TABLE_VERSION, spec: spec.clone(), quantiles, samples: Some(draws) })
}

/// Directory of JSON tables keyed by [`NullSpec::cache_key`].
#[derive(Debug, Clone)]
pub struct NullCache {
    dir: PathBuf,
}

impl NullCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, spec: &NullSpec) -> PathBuf {
        self.dir.join(format!("{}.json", spec.cache_key()))
    }

    /// Loads a cached table or simulates and stores it.
    pub fn load_or_generate(&self, spec: &NullSpec) -> Result<NullTable> {
        let path = self.path_for(spec);
        if path.exists() {
            let table = NullTable::load(&path)?;
            if &table.spec == spec && table.samples.is_some() {
                return Ok(table);
            }
            log::warn!("ignoring stale null table {}", path.display());
        }
        std::fs::create_dir_all(&self.dir)?;
        let table = null_distribution(spec)?;
        table.save(&path)?;
        Ok(table)
    }
}

/// Result of doubling the bridge grid on shared Brownian paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCheck {
    pub alpha: f64,
    pub coarse: f64,
    pub fine: f64,
    /// `|fine - coarse| / fine`
    pub drift: f64,
}

impl GridCheck {
    pub fn passes(&self) -> bool {
        self.drift < 0.01
    }
}

/// Compares the `alpha` critical value on grid `n_g` against `2 n_g`, using
/// the same underlying paths (coarse increments are sums of fine pairs).
pub fn grid_convergence(spec: &NullSpec, alpha: f64) -> Result<GridCheck> {
    spec.validate()?;
    let fine_spec = NullSpec { grid: 2 * spec.grid, ..spec.clone() };
    let pairs: Result<Vec<(f64, f64)>> = (0..spec.replications as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replication_rng(spec.seed, i);
            let fine_grid = 2 * spec.grid;
            let sd = 1.0 / (fine_grid as f64).sqrt();
            let fine = DMatrix::from_fn(fine_grid, spec.dim, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                z * sd
            });
            let coarse = DMatrix::from_fn(spec.grid, spec.dim, |i, j| fine[(2 * i, j)] + fine[(2 * i + 1, j)]);
            Ok((
                bridge_functional(spec, &bridge_from_increments(&coarse))?,
                bridge_functional(&fine_spec, &bridge_from_increments(&fine))?,
            ))
        })
        .collect();
    let (mut coarse, mut fine): (Vec<f64>, Vec<f64>) = pairs?.into_iter().unzip();
    coarse.sort_by(f64::total_cmp);
    fine.sort_by(f64::total_cmp);
    let c = empirical_quantile(&coarse, alpha);
    let f = empirical_quantile(&fine, alpha);
    Ok(GridCheck { alpha, coarse: c, fine: f, drift: (f - c).abs() / f.abs() })
}

impl TestResult {
    /// Attaches the `alpha` critical value and, when the table kept its
    /// draws, the p-value.
    pub fn attach_null(&mut self, table: &NullTable, alpha: f64) -> Result<()> {
        if table.kind() != self.statistic {
            return Err(Error::InvalidArgument(format!(
                "null table is for {}, test is {}",
                table.kind(),
                self.statistic
            )));
        }
        if table.spec.dim != self.tested_cols.len() {
            return Err(Error::InvalidArgument(format!(
                "null table has dimension {}, test uses {} columns",
                table.spec.dim,
                self.tested_cols.len()
            )));
        }
        let value = table
            .critical_value(alpha)
            .ok_or_else(|| Error::InvalidArgument(format!("no critical value for alpha = {alpha}")))?;
        self.critical_value = Some(CriticalValue { alpha, value });
        self.p_value = Some(table.p_value(self.value)?);
        Ok(())
    }
}
