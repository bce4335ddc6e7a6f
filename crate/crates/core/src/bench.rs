//! Seeded experiment runner: TOML configs in, tab-separated result rows out.
//!
//! Output starts with `#`-prefixed manifest lines (config hash, crate version,
//! frozen constants) followed by a header and one row per measurement. There
//! is no timestamp, so reruns of the same config produce identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::sample_trajectories;
use crate::error::{Error, Result};
use crate::fixtures::{build, Fixture};
use crate::low_adaptive::{batch_bound, regret_harness, Algorithm, ApeveConfig, FixedPolicy, LarfeConfig};
use crate::mdp::{cr_lower_bound, policy_value, Policy};
use crate::ope_tabular::{cumulative_ratios, mse_harness_multi, Method};
use crate::opl_linear::{default_beta, pfvi, vw_pfvi, VwConfig};
use crate::opl_tabular::{pvi, suboptimality, BonusConfig, BonusStyle};
use crate::util::{derive_seed, linear_fit, mean, sample_variance, Fnv64};

/// Bonus failure probability used by the pessimism experiments.
pub const BENCH_DELTA: f64 = 0.1;
/// Ridge parameter for the linear learners.
pub const BENCH_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    OpeScaling,
    OpeEfficiency,
    OplPessimism,
    OplLinear,
    LowAdaptive,
    CurseOfHorizon,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::OpeScaling => "ope-scaling",
            ExperimentKind::OpeEfficiency => "ope-efficiency",
            ExperimentKind::OplPessimism => "opl-pessimism",
            ExperimentKind::OplLinear => "opl-linear",
            ExperimentKind::LowAdaptive => "low-adaptive",
            ExperimentKind::CurseOfHorizon => "curse-of-horizon",
        }
    }

    fn default_methods(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::OpeScaling => &["IS", "SMIS", "TMIS"],
            ExperimentKind::OpeEfficiency => &["TMIS"],
            ExperimentKind::OplPessimism => &["none", "hoeffding", "bernstein"],
            ExperimentKind::OplLinear => &["pfvi", "vw-pfvi"],
            ExperimentKind::LowAdaptive => &["apeve", "uniform"],
            ExperimentKind::CurseOfHorizon => &["IS"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub name: String,
    /// Fixture parameters; numbers, booleans and strings such as `"1/3"`.
    #[serde(default)]
    pub params: BTreeMap<String, toml::Value>,
}

impl FixtureSpec {
    fn string_params(&self) -> std::result::Result<BTreeMap<String, String>, ConfigError> {
        self.params
            .iter()
            .map(|(k, v)| {
                let s = match v {
                    toml::Value::String(s) => s.clone(),
                    toml::Value::Integer(i) => i.to_string(),
                    toml::Value::Float(f) => f.to_string(),
                    toml::Value::Boolean(b) => b.to_string(),
                    other => return Err(ConfigError(format!("fixture.params.{k}: unsupported value {other}"))),
                };
                Ok((k.clone(), s))
            })
            .collect()
    }

    /// Build the fixture, overriding its horizon when `horizon` is given.
    pub fn build(&self, horizon: Option<usize>) -> std::result::Result<Fixture, ConfigError> {
        let mut params = self.string_params()?;
        if let Some(h) = horizon {
            params.insert("H".into(), h.to_string());
        }
        build(&self.name, &params).map_err(|e| ConfigError(format!("fixture {:?}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment id written into every row; defaults to the kind name.
    #[serde(default)]
    pub id: Option<String>,
    pub kind: ExperimentKind,
    pub fixture: FixtureSpec,
    /// Sample sizes; episode counts `T` for `low-adaptive`.
    pub n: Vec<usize>,
    /// Horizon grid; empty means the fixture's own horizon.
    #[serde(default)]
    pub horizons: Vec<usize>,
    /// Empty means the kind's default methods.
    #[serde(default)]
    pub methods: Vec<String>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn experiment_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn hash(&self) -> u64 {
        Fnv64::default().bytes(self.to_toml().as_bytes()).finish()
    }

    pub fn method_names(&self) -> Vec<String> {
        if self.methods.is_empty() {
            self.kind.default_methods().iter().map(|s| s.to_string()).collect()
        } else {
            self.methods.clone()
        }
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        if self.n.is_empty() {
            return Err(ConfigError("n grid is empty".into()));
        }
        if self.n.contains(&0) {
            return Err(ConfigError("n grid contains 0".into()));
        }
        if self.horizons.contains(&0) {
            return Err(ConfigError("horizons grid contains 0".into()));
        }
        if self.reps < 2 {
            return Err(ConfigError(format!("reps = {} but at least 2 are needed for variance estimates", self.reps)));
        }
        for m in self.method_names() {
            self.check_method(&m)?;
        }
        for h in self.horizon_grid() {
            let f = self.fixture.build(h)?;
            if self.kind == ExperimentKind::OplLinear && f.features.is_none() {
                return Err(ConfigError(format!("fixture {:?} has no feature map", self.fixture.name)));
            }
        }
        if self.kind == ExperimentKind::LowAdaptive {
            if let Some(&t) = self.n.iter().find(|&&t| t < 4) {
                return Err(ConfigError(format!("episode count {t} below 4")));
            }
        }
        Ok(())
    }

    fn check_method(&self, m: &str) -> std::result::Result<(), ConfigError> {
        let ok = match self.kind {
            ExperimentKind::OpeScaling | ExperimentKind::OpeEfficiency => m.parse::<Method>().is_ok(),
            ExperimentKind::OplPessimism => m.parse::<BonusStyle>().is_ok(),
            ExperimentKind::OplLinear => matches!(m, "pfvi" | "vw-pfvi"),
            ExperimentKind::LowAdaptive => matches!(m, "apeve" | "uniform"),
            ExperimentKind::CurseOfHorizon => m.eq_ignore_ascii_case("IS"),
        };
        if ok {
            Ok(())
        } else {
            Err(ConfigError(format!("method {m:?} not valid for {}", self.kind.name())))
        }
    }

    fn horizon_grid(&self) -> Vec<Option<usize>> {
        if self.horizons.is_empty() {
            vec![None]
        } else {
            self.horizons.iter().map(|&h| Some(h)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    pub n: usize,
    pub horizon: usize,
    pub metric: String,
    pub value: f64,
    pub se: f64,
    pub seed: u64,
    /// Error message for rows recording a failed cell.
    pub note: Option<String>,
}

pub const HEADER: &str = "experiment\tmethod\tn\tH\tmetric\tvalue\tse\tseed\tnote";

impl ResultRow {
    pub fn format(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.experiment,
            self.method,
            self.n,
            self.horizon,
            self.metric,
            self.value,
            self.se,
            self.seed,
            self.note.as_deref().unwrap_or("-")
        )
    }

    /// Parse one data line; `line` is only used in the error.
    pub fn parse(text: &str, line: usize) -> Result<Self> {
        let bad = |what: &str| Error::Parse { line, kind: crate::error::ParseErrorKind::BadValue(what.to_string()) };
        let f: Vec<&str> = text.split('\t').collect();
        if f.len() != 9 {
            return Err(Error::Parse { line, kind: crate::error::ParseErrorKind::TruncatedRecord(format!("{} of 9 fields", f.len())) });
        }
        Ok(ResultRow {
            experiment: f[0].to_string(),
            method: f[1].to_string(),
            n: f[2].parse().map_err(|_| bad("n"))?,
            horizon: f[3].parse().map_err(|_| bad("H"))?,
            metric: f[4].to_string(),
            value: f[5].parse().map_err(|_| bad("value"))?,
            se: f[6].parse().map_err(|_| bad("se"))?,
            seed: f[7].parse().map_err(|_| bad("seed"))?,
            note: (f[8] != "-").then(|| f[8].to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// `(key, value)` manifest entries, in output order.
    pub manifest: Vec<(String, String)>,
    pub rows: Vec<ResultRow>,
}

impl RunOutput {
    pub fn format(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.manifest {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out.push_str(HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.format());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.format())?;
        Ok(())
    }
}

/// Rows of a result file; manifest and header lines are skipped.
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#') && *l != HEADER)
        .map(|(i, l)| ResultRow::parse(l, i + 1))
        .collect()
}

/// Manifest entries for every constant an experiment can depend on.
pub fn frozen_constants() -> Vec<(String, String)> {
    let apeve = ApeveConfig::default();
    let larfe = LarfeConfig::default();
    let vw = VwConfig::default();
    let entries: Vec<(&str, String)> = vec![
        ("bonus.delta", BENCH_DELTA.to_string()),
        ("bonus.c_var", BonusConfig::DEFAULT_C_VAR.to_string()),
        ("bonus.c_range", BonusConfig::DEFAULT_C_RANGE.to_string()),
        ("bonus.iota", "log(2HSA/delta)".into()),
        ("vw.c", vw.c.to_string()),
        ("vw.c_low", vw.c_low.to_string()),
        ("vw.delta", vw.delta.to_string()),
        ("vw.iota", "log(2dHn/delta)".into()),
        ("pfvi.beta", "dH".into()),
        ("linear.lambda", BENCH_LAMBDA.to_string()),
        ("apeve.delta", apeve.delta.to_string()),
        ("apeve.policy_cap", apeve.policy_cap.to_string()),
        ("apeve.crude_fraction", apeve.crude_fraction.to_string()),
        ("apeve.ci_constant", apeve.ci_constant.to_string()),
        ("larfe.epsilon", larfe.epsilon.to_string()),
        ("larfe.delta", larfe.delta.to_string()),
        ("larfe.c_budget", larfe.c_budget.to_string()),
    ];
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

struct Cell<'a> {
    config: &'a ExperimentConfig,
    fixture: &'a Fixture,
    method: &'a str,
    n: usize,
    seed: u64,
}

impl Cell<'_> {
    fn row(&self, metric: &str, value: f64, se: f64) -> ResultRow {
        ResultRow {
            experiment: self.config.experiment_id(),
            method: self.method.to_string(),
            n: self.n,
            horizon: self.fixture.mdp.horizon,
            metric: metric.to_string(),
            value,
            se,
            seed: self.seed,
            note: None,
        }
    }

    fn error_row(&self, e: &Error) -> ResultRow {
        ResultRow { note: Some(e.to_string().replace(['\t', '\n'], " ")), ..self.row("error", f64::NAN, 0.0) }
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    (mean(xs), (sample_variance(xs) / xs.len() as f64).sqrt())
}

fn ope_cell(cell: &Cell, efficiency: bool) -> Result<Vec<ResultRow>> {
    let f = cell.fixture;
    let method: Method = cell.method.parse()?;
    let s = mse_harness_multi(&f.mdp, &f.target, &f.behavior, &[method], cell.n, cell.config.reps, cell.seed)?.remove(0);
    let mut rows = Vec::new();
    if efficiency {
        let nf = cell.n as f64;
        rows.push(cell.row("n_mse", nf * s.mse, nf * s.se));
        rows.push(cell.row("cr_bound", cr_lower_bound(&f.mdp, &f.target, &f.behavior)?, 0.0));
    } else {
        rows.push(cell.row("mse", s.mse, s.se));
        rows.push(cell.row("rel_rmse", s.rel_rmse, 0.0));
    }
    if s.failures > 0 {
        rows.push(cell.row("failures", s.failures as f64, 0.0));
    }
    Ok(rows)
}

fn curse_cell(cell: &Cell) -> Result<Vec<ResultRow>> {
    let f = cell.fixture;
    let ds = sample_trajectories(&f.mdp, &f.behavior, cell.n, cell.seed)?;
    let rho = cumulative_ratios(&ds, &f.target, &f.behavior)?;
    let m = mean(&rho);
    let var = sample_variance(&rho);
    let m4 = mean(&rho.iter().map(|x| (x - m).powi(4)).collect::<Vec<f64>>());
    let se = ((m4 - var * var) / rho.len() as f64).max(0.0).sqrt();
    let mut rows = vec![cell.row("var_rho", var, se)];
    if let Some((_, a)) = f.manifest.iter().find(|(k, _)| k == "A_eta") {
        let a: f64 = a.parse().map_err(|_| Error::InvalidArgument("A_eta manifest entry".into()))?;
        rows.push(cell.row("var_rho_exact", a.powi(f.mdp.horizon as i32) - 1.0, 0.0));
    }
    Ok(rows)
}

/// Suboptimality and validity (`V̂₁ ≤ v^π̂`) over `reps` datasets.
fn learner_cell(cell: &Cell, learn: &(dyn Fn(&crate::data::Dataset) -> Result<(Policy, f64)> + Sync)) -> Result<Vec<ResultRow>> {
    let f = cell.fixture;
    let per_rep = (0..cell.config.reps as u64)
        .into_par_iter()
        .map(|r| {
            let ds = sample_trajectories(&f.mdp, &f.behavior, cell.n, derive_seed(cell.seed, r))?;
            let (policy, v_hat) = learn(&ds)?;
            let v = policy_value(&f.mdp, &policy)?.value;
            Ok((suboptimality(&f.mdp, &policy)?, if v_hat <= v + 1e-10 { 1.0 } else { 0.0 }))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let subopt: Vec<f64> = per_rep.iter().map(|p| p.0).collect();
    let valid: Vec<f64> = per_rep.iter().map(|p| p.1).collect();
    let (m, se) = mean_se(&subopt);
    let (vm, vse) = mean_se(&valid);
    Ok(vec![cell.row("suboptimality", m, se), cell.row("validity", vm, vse)])
}

fn initial_value(d1: &[f64], v_hat: &[f64]) -> f64 {
    d1.iter().zip(v_hat).map(|(p, v)| p * v).sum()
}

fn opl_cell(cell: &Cell) -> Result<Vec<ResultRow>> {
    let style: BonusStyle = cell.method.parse()?;
    let d1 = cell.fixture.mdp.d1.clone();
    learner_cell(cell, &move |ds| {
        let rep = pvi(ds, &BonusConfig::new(style, BENCH_DELTA))?;
        Ok((rep.policy, initial_value(&d1, &rep.v_hat)))
    })
}

fn opl_linear_cell(cell: &Cell) -> Result<Vec<ResultRow>> {
    let features = cell.fixture.features.clone().ok_or_else(|| Error::InvalidArgument("fixture has no features".into()))?;
    let d1 = cell.fixture.mdp.d1.clone();
    let weighted = cell.method == "vw-pfvi";
    let h = cell.fixture.mdp.horizon;
    learner_cell(cell, &move |ds| {
        let (rep, _) = if weighted {
            vw_pfvi(ds, &features, BENCH_LAMBDA, &VwConfig::default())?
        } else {
            pfvi(ds, &features, BENCH_LAMBDA, default_beta(features.d, h))?
        };
        Ok((rep.policy, initial_value(&d1, &rep.v_hat)))
    })
}

fn low_adaptive_cell(cell: &Cell) -> Result<Vec<ResultRow>> {
    let f = cell.fixture;
    let (s, a, h) = (f.mdp.states, f.mdp.actions, f.mdp.horizon);
    let algorithm: Box<dyn Algorithm> = match cell.method {
        "apeve" => Box::new(ApeveConfig::default()),
        _ => Box::new(FixedPolicy(Policy::uniform(s, a, h))),
    };
    let seeds: Vec<u64> = (0..cell.config.reps as u64).map(|k| derive_seed(cell.seed, k)).collect();
    let summary = regret_harness(&f.mdp, algorithm.as_ref(), cell.n, &seeds)?;
    Ok(vec![
        cell.row("regret", summary.mean_regret, summary.se_regret),
        cell.row("max_switches", summary.max_switches as f64, 0.0),
        cell.row("max_batches", summary.max_batches as f64, 0.0),
        cell.row("batch_bound", batch_bound(cell.n) as f64, 0.0),
    ])
}

/// Validate and run an experiment.
///
/// Cells are `(H, n, method)` in grid order; cell `k` uses seed
/// `derive_seed(config.seed, k)`. A failing cell yields one `error` row.
pub fn run(config: &ExperimentConfig) -> std::result::Result<RunOutput, ConfigError> {
    config.validate()?;
    let methods = config.method_names();
    let mut rows = Vec::new();
    let mut k = 0u64;
    let mut errors = 0usize;
    for h in config.horizon_grid() {
        let fixture = config.fixture.build(h)?;
        for &n in &config.n {
            for method in &methods {
                let cell = Cell { config, fixture: &fixture, method, n, seed: derive_seed(config.seed, k) };
                k += 1;
                let out = match config.kind {
                    ExperimentKind::OpeScaling => ope_cell(&cell, false),
                    ExperimentKind::OpeEfficiency => ope_cell(&cell, true),
                    ExperimentKind::CurseOfHorizon => curse_cell(&cell),
                    ExperimentKind::OplPessimism => opl_cell(&cell),
                    ExperimentKind::OplLinear => opl_linear_cell(&cell),
                    ExperimentKind::LowAdaptive => low_adaptive_cell(&cell),
                };
                match out {
                    Ok(r) => rows.extend(r),
                    Err(e) => {
                        errors += 1;
                        rows.push(cell.error_row(&e));
                    }
                }
            }
        }
    }
    let mut manifest = vec![
        ("format".to_string(), "offrl-results 1".to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("experiment".to_string(), config.experiment_id()),
        ("kind".to_string(), config.kind.name().to_string()),
        ("config_hash".to_string(), format!("{:016x}", config.hash())),
        ("float".to_string(), "IEEE-754 binary64, round-to-nearest-even, pairwise reductions".to_string()),
    ];
    manifest.extend(frozen_constants());
    for line in config.to_toml().lines().filter(|l| !l.trim().is_empty()) {
        manifest.push(("config".to_string(), line.to_string()));
    }
    manifest.push(("error_rows".to_string(), errors.to_string()));
    Ok(RunOutput { manifest, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    N,
    H,
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" | "N" => Ok(Axis::N),
            "h" | "H" => Ok(Axis::H),
            _ => Err(Error::InvalidArgument(format!("axis {s:?}; expected n or H"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
    /// Rows dropped for a nonpositive or non-finite value.
    pub excluded: usize,
}

/// Least squares of `log value` on `log x` over rows with the given metric.
pub fn fit_loglog(rows: &[ResultRow], x: Axis, metric: &str) -> Result<LogLogFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = 0;
    for r in rows.iter().filter(|r| r.metric == metric) {
        let xv = match x {
            Axis::N => r.n,
            Axis::H => r.horizon,
        } as f64;
        if !(r.value > 0.0 && r.value.is_finite()) {
            excluded += 1;
            continue;
        }
        xs.push(xv.ln());
        ys.push(r.value.ln());
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument(format!("{} usable points for {metric:?}; need at least 3", xs.len())));
    }
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    Ok(LogLogFit { slope, intercept, r2, points: xs.len(), excluded })
}
