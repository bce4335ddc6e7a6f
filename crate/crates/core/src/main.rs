//! `offrl` command-line runner.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 runtime error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use offrl::bench::{fit_loglog, parse_results, run, Axis, ConfigError, ExperimentConfig, ExperimentKind};
use offrl::data::{read_dataset, sample_trajectories, write_dataset};
use offrl::fixtures::{build, Fixture, FIXTURE_NAMES};
use offrl::formats::{format_mdp, format_policy, read_mdp, read_policy};
use offrl::low_adaptive::{apeve, larfe, ApeveConfig, LarfeConfig, MdpEnvironment};
use offrl::mdp::policy_value;
use offrl::ope_tabular::{estimate, Method};
use offrl::opl_tabular::{pvi, BonusConfig, BonusStyle};
use offrl::util::derive_seed;

#[derive(Parser)]
#[command(name = "offrl", version, about = "Offline RL estimators, learners and low-adaptive exploration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample trajectories from a fixture or an MDP file.
    Simulate(SimulateArgs),
    /// Evaluate a policy on a dataset, or run an OPE experiment config.
    Ope(OpeArgs),
    /// Learn a pessimistic policy from a dataset, or run an OPL experiment config.
    Opl(OplArgs),
    /// Run APEVE or LARFE against a fixture, or a low-adaptive experiment config.
    LowAdaptive(LowAdaptiveArgs),
    /// List or emit named fixtures.
    Fixtures {
        #[command(subcommand)]
        action: FixturesAction,
    },
    /// Log-log fit over a result file.
    Fit(FitArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replications; overrides the config.
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args)]
struct FixtureArgs {
    /// Named fixture; see `offrl fixtures list`.
    #[arg(long)]
    fixture: Option<String>,
    /// Fixture parameters as `key=value`.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// MDP file, instead of a named fixture.
    #[arg(long)]
    mdp: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    fixture: FixtureArgs,
    /// Behavior policy file; defaults to the fixture's behavior policy.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(short, long, default_value_t = 1000)]
    n: usize,
}

#[derive(Args)]
struct OpeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    behavior: Option<PathBuf>,
    #[arg(long, default_value = "TMIS")]
    method: String,
}

#[derive(Args)]
struct OplArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// none | hoeffding | bernstein
    #[arg(long, default_value = "bernstein")]
    style: String,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
}

#[derive(Args)]
struct LowAdaptiveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    fixture: FixtureArgs,
    /// apeve | larfe
    #[arg(long, default_value = "apeve")]
    algorithm: String,
    /// Episode budget for APEVE.
    #[arg(short, long, default_value_t = 2048)]
    t: usize,
    /// LARFE accuracy target.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
}

#[derive(Subcommand)]
enum FixturesAction {
    List,
    /// Write `<name>.mdp`, `.behavior`, `.target` and `.manifest` into `--out` (default `.`).
    Emit {
        name: String,
        /// `key=value` parameters.
        params: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FitArgs {
    /// Result file written by an experiment.
    input: PathBuf,
    /// n | H
    #[arg(long, default_value = "n")]
    x: String,
    #[arg(long, default_value = "mse")]
    metric: String,
    #[arg(long)]
    method: Option<String>,
}

enum Fail {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Fail {
    fn from(e: ConfigError) -> Self {
        Fail::Config(e.0)
    }
}

impl From<offrl::Error> for Fail {
    fn from(e: offrl::Error) -> Self {
        match e {
            offrl::Error::InvalidArgument(m) => Fail::Config(m),
            other => Fail::Runtime(other.to_string()),
        }
    }
}

type CliResult = Result<(), Fail>;

/// Prefix runtime errors from reading `path` with the path.
fn at<T>(path: &Path, r: offrl::Result<T>) -> Result<T, Fail> {
    r.map_err(|e| match Fail::from(e) {
        Fail::Runtime(m) => Fail::Runtime(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn parse_params(items: &[String]) -> Result<BTreeMap<String, String>, Fail> {
    items
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Fail::Config(format!("parameter {kv:?} is not key=value")))
        })
        .collect()
}

fn load_fixture(args: &FixtureArgs) -> Result<Fixture, Fail> {
    match (&args.fixture, &args.mdp) {
        (Some(name), None) => Ok(build(name, &parse_params(&args.params)?)?),
        (None, Some(path)) => {
            let mdp = at(path, read_mdp(path))?;
            let (s, a, h) = (mdp.states, mdp.actions, mdp.horizon);
            let uniform = offrl::mdp::Policy::uniform(s, a, h);
            Ok(Fixture {
                name: path.display().to_string(),
                behavior: uniform.clone(),
                target: uniform,
                features: None,
                manifest: vec![],
                mdp,
            })
        }
        _ => Err(Fail::Config("give exactly one of --fixture or --mdp".into())),
    }
}

fn emit(text: &str, out: Option<&Path>) -> CliResult {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Fail::Runtime(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Fail::Runtime(e.to_string())),
                _ => Ok(()),
            }
        }
    }
}

/// Load a config, apply flag overrides and check the kind belongs to `allowed`.
fn run_config(common: &Common, allowed: &[ExperimentKind]) -> CliResult {
    let path = common.config.as_ref().expect("caller checked");
    let mut config = ExperimentConfig::load(path)?;
    if !allowed.contains(&config.kind) {
        return Err(Fail::Config(format!("experiment kind {} does not belong to this subcommand", config.kind.name())));
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(r) = common.reps {
        config.reps = r;
    }
    if let Some(o) = &common.out {
        config.out = Some(o.clone());
    }
    let output = run(&config)?;
    let errors = output.rows.iter().filter(|r| r.note.is_some()).count();
    if errors > 0 {
        eprintln!("warning: {errors} cell(s) failed; see rows with metric `error`");
    }
    emit(&output.format(), config.out.as_deref())
}

fn simulate(args: SimulateArgs) -> CliResult {
    let f = load_fixture(&args.fixture)?;
    let behavior = match &args.policy {
        Some(p) => at(p, read_policy(p))?,
        None => f.behavior,
    };
    let ds = sample_trajectories(&f.mdp, &behavior, args.n, args.common.seed.unwrap_or(0))?;
    match &args.common.out {
        Some(p) => Ok(write_dataset(&ds, p)?),
        None => emit(&offrl::data::format_dataset(&ds), None),
    }
}

fn ope(args: OpeArgs) -> CliResult {
    if args.common.config.is_some() {
        use ExperimentKind::*;
        return run_config(&args.common, &[OpeScaling, OpeEfficiency, CurseOfHorizon]);
    }
    let (Some(data), Some(target)) = (&args.data, &args.target) else {
        return Err(Fail::Config("ope needs --config, or --data and --target".into()));
    };
    let ds = at(data, read_dataset(data))?;
    let target = at(target, read_policy(target))?;
    let method: Method = args.method.parse()?;
    let behavior = match &args.behavior {
        Some(p) => at(p, read_policy(p))?,
        None if method == Method::Tmis => target.clone(),
        None => return Err(Fail::Config(format!("{method} needs --behavior"))),
    };
    let rep = estimate(method, &ds, &target, &behavior)?;
    emit(&format!("{method}\t{}\n", rep.estimate), args.common.out.as_deref())
}

fn opl(args: OplArgs) -> CliResult {
    if args.common.config.is_some() {
        return run_config(&args.common, &[ExperimentKind::OplPessimism, ExperimentKind::OplLinear]);
    }
    let Some(data) = &args.data else {
        return Err(Fail::Config("opl needs --config or --data".into()));
    };
    let style: BonusStyle = args.style.parse()?;
    let config = BonusConfig::new(style, args.delta);
    config.validate()?;
    let rep = pvi(&at(data, read_dataset(data))?, &config)?;
    let mut text = format!("# style {style} iota {}\n# h s action\n", rep.iota);
    text.push_str(&rep.format_policy());
    emit(&text, args.common.out.as_deref())
}

fn low_adaptive(args: LowAdaptiveArgs) -> CliResult {
    if args.common.config.is_some() {
        return run_config(&args.common, &[ExperimentKind::LowAdaptive]);
    }
    let f = load_fixture(&args.fixture)?;
    let seed = args.common.seed.unwrap_or(0);
    let mut env = MdpEnvironment::new(&f.mdp, derive_seed(seed, 0xE11));
    let mut text = String::new();
    match args.algorithm.as_str() {
        "apeve" => {
            let out = apeve(&mut env, args.t, &ApeveConfig::default(), seed)?;
            let mut ledger = out.ledger.clone();
            let regret = offrl::low_adaptive::fill_regret(&f.mdp, &mut ledger)?;
            text.push_str(&format!(
                "# batches {} switches {} regret {regret} survivors {:?}\n",
                ledger.batch_count, ledger.switch_count, out.policy_set.ids
            ));
            text.push_str(&ledger.format_batches());
            text.push_str("# t h s a r s_next policy_id\n");
            text.push_str(&ledger.format_log(&out.episodes));
        }
        "larfe" => {
            let config = LarfeConfig { epsilon: args.epsilon, ..LarfeConfig::default() };
            let out = larfe(&mut env, &config, seed)?;
            let c = &out.certificate;
            text.push_str(&format!(
                "# batches {} episodes {} budget {} min_ratio {} achieved {}\n",
                out.ledger.batch_count, out.dataset.n, c.per_policy_budget, c.min_ratio, c.achieved
            ));
            text.push_str(&out.ledger.format_batches());
            text.push_str("# t h s a r s_next policy_id\n");
            text.push_str(&out.ledger.format_log(&out.dataset));
        }
        other => return Err(Fail::Config(format!("unknown algorithm {other:?}; expected apeve or larfe"))),
    }
    emit(&text, args.common.out.as_deref())
}

fn fixtures(action: FixturesAction) -> CliResult {
    match action {
        FixturesAction::List => {
            for name in FIXTURE_NAMES {
                println!("{name}");
            }
            Ok(())
        }
        FixturesAction::Emit { name, params, out } => {
            let f = build(&name, &parse_params(&params)?)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("."));
            let mut manifest = format!("name {}\nvalue_target {}\n", f.name, policy_value(&f.mdp, &f.target)?.value);
            for (k, v) in &f.manifest {
                manifest.push_str(&format!("{k} {v}\n"));
            }
            for (ext, text) in [
                ("mdp", format_mdp(&f.mdp)),
                ("behavior", format_policy(&f.behavior)),
                ("target", format_policy(&f.target)),
                ("manifest", manifest),
            ] {
                emit(&text, Some(&dir.join(format!("{name}.{ext}"))))?;
            }
            Ok(())
        }
    }
}

fn fit(args: FitArgs) -> CliResult {
    let text = std::fs::read_to_string(&args.input).map_err(|e| Fail::Runtime(format!("{}: {e}", args.input.display())))?;
    let mut rows = parse_results(&text)?;
    if let Some(m) = &args.method {
        rows.retain(|r| &r.method == m);
    }
    let axis: Axis = args.x.parse()?;
    let fit = fit_loglog(&rows, axis, &args.metric)?;
    if fit.excluded > 0 {
        eprintln!("warning: excluded {} nonpositive value(s)", fit.excluded);
    }
    println!("slope\t{}\nintercept\t{}\nr2\t{}\npoints\t{}", fit.slope, fit.intercept, fit.r2, fit.points);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Ope(a) => ope(a),
        Command::Opl(a) => opl(a),
        Command::LowAdaptive(a) => low_adaptive(a),
        Command::Fixtures { action } => fixtures(action),
        Command::Fit(a) => fit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
