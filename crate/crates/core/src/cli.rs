//! Command-line front end.
//!
//! Flag precedence is: command-line flag, then the `--config` file
//! (`key = value` lines, keys named like the long flags), then built-in
//! defaults. The seed additionally falls back to `LPV_SEED` before the
//! default.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::bench::{self, Dataset, SetName};
use crate::ident::{self, InitialState, TrainConfig};
use crate::lpvmodel::{format, CoeffSpec, Dims, LpvLfrModel, LpvModel, LpvSsModel, MlpMode, Model};
use crate::verify::{self, CertifyOptions, Property};

pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    /// The command ran but its verdict was negative.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Failed(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "lpvss", version, about = "Learn LPV state-space models with contraction or Lipschitz guarantees")]
pub struct Cli {
    /// File of `key = value` lines supplying defaults for any long flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    pub serial: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate benchmark data sets.
    Generate(GenerateArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Check the LMI certificate and run the empirical probe.
    Verify(VerifyArgs),
    /// NRMSe of a model on every trajectory of a data set.
    Eval(EvalArgs),
    /// Measured and simulated output of one trajectory.
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SetArg {
    Training,
    Validation,
    TestA,
    TestB,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Paper,
    Desk,
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Lipschitz,
    Contracting,
    Lfr,
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub set: SetArg,
    /// Each set is written to `OUT/<set name>/`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `desk` writes 128 training and 64 validation trajectories.
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    /// Lipschitz bound (default 1).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training report CSV (default: `<out>.train.csv`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `desk` uses the first 128 training and 64 validation trajectories.
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
    /// Trajectories per optimizer step (default: all).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Burn-in samples excluded from the loss (default 10).
    #[arg(long)]
    pub skip: Option<usize>,
    /// State dimension (default 3).
    #[arg(long)]
    pub nx: Option<usize>,
    /// Hidden layer widths, comma separated (default 50,50).
    #[arg(long)]
    pub hidden: Option<String>,
    /// Size of the LFR nonlinearity channel (default 100).
    #[arg(long)]
    pub nw: Option<usize>,
    /// Strictness margin ε of the Cayley parametrization (default 0.01).
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub property: Option<PropertyArg>,
    /// Random scheduling samples (the box vertices are always added).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scale of the scheduling box 𝕡 (default 1).
    #[arg(long)]
    pub p_scale: Option<f64>,
    /// Empirical probe trials (default 100).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Report CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PropertyArg {
    Contraction,
    Lipschitz,
}

impl FromStr for PropertyArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the random initial states.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub traj: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Resolved settings: flag, then config file, then default.
struct Settings {
    config: HashMap<String, String>,
    env_seed: Option<String>,
}

impl Settings {
    fn load(path: Option<&Path>, env_seed: Option<String>) -> Result<Self, CliError> {
        let mut config = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", n + 1)))?;
                config.insert(k.trim().replace('_', "-"), v.trim().to_string());
            }
        }
        Ok(Self { config, env_seed })
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get_opt(flag, key)?.unwrap_or(default))
    }

    fn get_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.config.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))),
            None => Ok(None),
        }
    }

    fn seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(s) = self.get_opt(flag, "seed")? {
            return Ok(s);
        }
        match &self.env_seed {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("LPV_SEED `{v}` is not an unsigned integer"))),
            None => Ok(DEFAULT_SEED),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, env_seed: Option<String>) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => Ok(e.to_string()),
                _ => Err(CliError::Usage(e.to_string())),
            }
        }
    };
    #[cfg(feature = "parallel")]
    if cli.serial {
        // Fails harmlessly if the pool was already set up.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let settings = Settings::load(cli.config.as_deref(), env_seed)?;
    match cli.command {
        Command::Generate(a) => generate(&settings, a),
        Command::Train(a) => train(&settings, a, !cli.serial),
        Command::Verify(a) => verify_cmd(&settings, a),
        Command::Eval(a) => eval(&settings, a),
        Command::Trace(a) => trace(&settings, a),
    }
}

fn generate(s: &Settings, a: GenerateArgs) -> Result<String, CliError> {
    let seed = s.seed(a.seed)?;
    let scale = s.get(a.scale, "scale", Scale::Paper)?;
    let sets: Vec<SetName> = match a.set {
        SetArg::Training => vec![SetName::Training],
        SetArg::Validation => vec![SetName::Validation],
        SetArg::TestA => vec![SetName::TestA],
        SetArg::TestB => vec![SetName::TestB],
        SetArg::All => SetName::ALL.to_vec(),
    };
    let mut msg = String::new();
    for name in sets {
        let spec = match scale {
            Scale::Paper => name.spec(),
            Scale::Desk => name.desk_spec(),
        };
        let ds = bench::generate_dataset(&spec, seed);
        let dir = a.out.join(name.as_str());
        bench::write_dataset(&ds, &dir).map_err(runtime)?;
        writeln!(msg, "wrote {} ({} trajectories of length {})", dir.display(), spec.n_b, spec.t).unwrap();
    }
    Ok(msg)
}

fn load_data(path: &Path, limit: Option<usize>) -> Result<Dataset, CliError> {
    let mut ds = bench::read_dataset(path).map_err(runtime)?;
    if let Some(n) = limit {
        ds.trajectories.truncate(n);
        ds.meta.n_b = ds.trajectories.len();
    }
    Ok(ds)
}

fn parse_hidden(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| CliError::Usage(format!("bad hidden width `{t}`"))))
        .collect()
}

fn train(s: &Settings, a: TrainArgs, parallel: bool) -> Result<String, CliError> {
    let seed = s.seed(a.seed)?;
    let variant = s.get(a.variant, "variant", Variant::Lipschitz)?;
    let scale = s.get(a.scale, "scale", Scale::Paper)?;
    let gamma = s.get(a.gamma, "gamma", 1.0)?;
    let epsilon = s.get(a.epsilon, "epsilon", crate::ssparam::DEFAULT_EPSILON)?;
    let n_x = s.get(a.nx, "nx", 3)?;
    let n_w = s.get(a.nw, "nw", 100)?;
    let hidden = parse_hidden(&s.get(a.hidden, "hidden", "50,50".to_string())?)?;
    if !(gamma > 0.0) || !(epsilon > 0.0) {
        return Err(CliError::Usage("gamma and epsilon must be positive".into()));
    }
    let cfg = TrainConfig {
        learning_rate: s.get(a.lr, "lr", 1e-2)?,
        epochs: s.get(a.epochs, "epochs", 20)?,
        batch_size: s.get_opt(a.batch_size, "batch-size")?,
        skip: s.get(a.skip, "skip", 10)?,
        seed,
        initial_state: InitialState::RandomUniform,
        parallel,
        ..TrainConfig::default()
    };
    let (train_limit, val_limit) = match scale {
        Scale::Paper => (None, None),
        Scale::Desk => (Some(SetName::Training.desk_spec().n_b), Some(SetName::Validation.desk_spec().n_b)),
    };
    let train_set = load_data(&a.data, train_limit)?;
    let val_set = load_data(&a.val, val_limit)?;
    let first = train_set
        .trajectories
        .first()
        .ok_or_else(|| runtime("training set is empty"))?;
    let dims = Dims {
        n_x,
        n_u: first.u.cols(),
        n_y: first.y.cols(),
        n_p: first.p.cols(),
    };
    let spec = CoeffSpec::Mlp {
        mode: MlpMode::PerComponent,
        hidden,
    };
    let mut model: Model = match variant {
        Variant::Lipschitz => LpvSsModel::lipschitz(dims, gamma, epsilon, &spec, seed).into(),
        Variant::Contracting => LpvSsModel::contracting(dims, epsilon, &spec, seed).into(),
        Variant::Lfr => LpvLfrModel::random(dims, n_w, seed).into(),
    };
    let report = ident::train(&mut model, &train_set.trajectories, &val_set.trajectories, &cfg, |r, _| {
        eprintln!(
            "epoch {:>3}  train {:.6e}  val {:.6e}  ({:.0} ms)",
            r.epoch, r.train_loss, r.val_loss, r.wall_ms
        );
    })
    .map_err(runtime)?;
    format::save(&model, &a.out).map_err(runtime)?;
    let report_path = a.report.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".train.csv");
        PathBuf::from(p)
    });
    std::fs::write(&report_path, report.to_csv()).map_err(runtime)?;
    Ok(format!(
        "wrote {} and {} (best epoch {})\n",
        a.out.display(),
        report_path.display(),
        report.best_epoch.map_or("-".to_string(), |e| e.to_string())
    ))
}

fn verify_cmd(s: &Settings, a: VerifyArgs) -> Result<String, CliError> {
    let seed = s.seed(a.seed)?;
    let model = format::load(&a.model).map_err(runtime)?;
    let default_property = match model.variant() {
        "contracting" => PropertyArg::Contraction,
        _ => PropertyArg::Lipschitz,
    };
    let property = match s.get(a.property, "property", default_property)? {
        PropertyArg::Contraction => Property::Contraction,
        PropertyArg::Lipschitz => Property::Lipschitz,
    };
    let p_scale = s.get(a.p_scale, "p-scale", 1.0)?;
    let n_p = model.dims().n_p;
    let p_box: Vec<(f64, f64)> = if n_p == bench::P_BOX.len() {
        bench::P_BOX.iter().map(|(lo, hi)| (p_scale * lo, p_scale * hi)).collect()
    } else {
        vec![(-p_scale, p_scale); n_p]
    };
    let mut opts = CertifyOptions::new(s.get(a.samples, "samples", 1000)?, p_box, seed);
    opts.trials = s.get(a.trials, "trials", 100)?;
    let report = verify::certify(&model, property, &opts).map_err(runtime)?;
    if let Some(out) = &a.out {
        std::fs::write(out, report.to_csv()).map_err(runtime)?;
    }
    let text = format!("{report}\n");
    if report.pass {
        Ok(text)
    } else {
        Err(CliError::Failed(text))
    }
}

fn eval(s: &Settings, a: EvalArgs) -> Result<String, CliError> {
    let seed = s.seed(a.seed)?;
    let model = format::load(&a.model).map_err(runtime)?;
    let ds = load_data(&a.data, None)?;
    check_dims(&model, &ds)?;
    let ev = bench::evaluate(&model, &ds, seed).map_err(runtime)?;
    std::fs::write(&a.out, ev.to_csv()).map_err(runtime)?;
    Ok(format!("mean NRMSe {:.6} over {} trajectories\n", ev.mean, ev.nrmse.len()))
}

fn check_dims(model: &Model, ds: &Dataset) -> Result<(), CliError> {
    let d = model.dims();
    match ds.trajectories.first() {
        Some(t) if t.u.cols() == d.n_u && t.p.cols() == d.n_p && t.y.cols() == d.n_y => Ok(()),
        Some(_) => Err(runtime("model dimensions do not match the data set")),
        None => Err(runtime("data set is empty")),
    }
}

/// Trace CSV: `t,y_measured,y_model`, optionally ending in a
/// `# NonFiniteState at step k` line.
pub fn trace_csv(ds: &Dataset, index: usize, model: &Model, seed: u64) -> Result<String, CliError> {
    let tr = ds
        .trajectories
        .get(index)
        .ok_or_else(|| runtime(format!("trajectory {index} does not exist ({} available)", ds.trajectories.len())))?;
    let x0 = bench::evaluation_x0(model.dims().n_x, seed, index);
    let (sim, blowup) = model.simulate_prefix(&x0, &tr.u, &tr.p).map_err(runtime)?;
    let mut s = String::from("t,y_measured,y_model\n");
    for t in 0..sim.y.rows() {
        writeln!(s, "{t},{:?},{:?}", tr.y[(t, 0)], sim.y[(t, 0)]).unwrap();
    }
    if let Some(crate::lpvmodel::ModelError::NonFiniteState { step }) = blowup {
        writeln!(s, "# NonFiniteState at step {step}").unwrap();
    }
    Ok(s)
}

/// Reads a trace CSV back: rows of `(t, measured, model)` and the blow-up step.
pub fn read_trace(text: &str) -> Result<(Vec<(usize, f64, f64)>, Option<usize>), String> {
    let mut lines = text.lines();
    if lines.next() != Some("t,y_measured,y_model") {
        return Err("missing trace header".into());
    }
    let mut rows = Vec::new();
    let mut blowup = None;
    for l in lines {
        if let Some(step) = l.strip_prefix("# NonFiniteState at step ") {
            blowup = Some(step.trim().parse().map_err(|_| "bad blow-up marker")?);
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 3 {
            return Err(format!("bad trace row `{l}`"));
        }
        rows.push((
            f[0].parse().map_err(|_| "bad t")?,
            f[1].parse().map_err(|_| "bad value")?,
            f[2].parse().map_err(|_| "bad value")?,
        ));
    }
    Ok((rows, blowup))
}

fn trace(s: &Settings, a: TraceArgs) -> Result<String, CliError> {
    let seed = s.seed(a.seed)?;
    let model = format::load(&a.model).map_err(runtime)?;
    let ds = load_data(&a.data, None)?;
    check_dims(&model, &ds)?;
    let csv = trace_csv(&ds, a.traj, &model, seed)?;
    std::fs::write(&a.out, &csv).map_err(runtime)?;
    Ok(format!("wrote {}\n", a.out.display()))
}
