//! Command-line entry point.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::distillation::PrivilegedInputs;
use crate::error::{Error, Result};

pub use config::{parse_grid, RunConfig, RUN_CONFIG_FILE};

const SEED_HELP: &str = "\
Seeds: every random choice derives from --seed. Run j of `evaluate` splits
with seed+j and trains with (seed+j) XOR 0x5851f42d4c957f2d; the single-split
commands use run 0. Synthetic data and feature selection use --seed directly.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.";

#[derive(Debug, Parser)]
#[command(name = "privdistill", version, about = "Train and evaluate per-profile distilled dose models", after_help = SEED_HELP)]
struct Cli {
    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    #[arg(long, global = true, env = "PRIVDISTILL_JOBS", default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic cohort (data.csv + schema.json).
    Synth(SynthArgs),
    /// Validate, encode and split a dataset; report counts and encodings.
    Prepare(PrepareArgs),
    /// Backward attribute elimination on the training cohort.
    SelectFeatures(SelectArgs),
    /// Inspect patient profiles.
    Profiles {
        #[command(subcommand)]
        action: ProfilesCommand,
    },
    /// Train privileged and distilled models for the selected profiles.
    Train(TrainArgs),
    /// λ sweep for one profile.
    Sweep(SweepArgs),
    /// Multi-split accuracy and safety study.
    Evaluate(EvaluateArgs),
    /// Predict a weekly dose from disclosed features.
    Predict(PredictArgs),
}

#[derive(Debug, Subcommand)]
enum ProfilesCommand {
    /// Print the profile catalog as a ✓/✗ table.
    List(ListArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Patient CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sidecar schema JSON.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long, env = "PRIVDISTILL_OUT")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of patients in the training cohort.
    #[arg(long, default_value_t = 0.65)]
    split_ratio: f64,
    /// Rerun from a saved run_config.json; other flags except --out are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Training {
    /// λ grid as start:stop:step (inclusive) or a comma list.
    #[arg(long, default_value = "0:1:0.1")]
    grid: String,
    /// Inputs of the privileged model: all_features or redacted_only.
    #[arg(long, default_value = "all_features")]
    privileged_inputs: PrivilegedInputs,
    /// Restrict to the features kept by `select-features` (its bae.json).
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1877)]
    n: usize,
    /// Correlation between the privileged signal and the visible signal.
    #[arg(long, default_value_t = 0.8)]
    rho: f64,
    #[arg(long, default_value_t = 8.0)]
    noise_std: f64,
    /// Extra pure-noise background columns.
    #[arg(long, default_value_t = 0)]
    noise_features: usize,
}

#[derive(Debug, Args)]
struct PrepareArgs {
    #[command(flatten)]
    common: Common,
    /// Also write the encoded, standardized cohorts as CSV.
    #[arg(long)]
    dump_encoded: bool,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    common: Common,
    /// Largest tolerated CV MAE rise per removal (mg/week).
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Debug, Args)]
struct ListArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Read the catalog from a trained bundles file instead.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Print JSON masks instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    training: Training,
    /// Profile name or slug; repeatable. `all` trains the default catalog.
    #[arg(long = "profile", default_value = "all")]
    profiles: Vec<String>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    training: Training,
    #[arg(long)]
    profile: Option<String>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    training: Training,
    #[arg(long = "profile", default_value = "all")]
    profiles: Vec<String>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// bundles.json written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Disclosed values as name=value,name=value; omitted features are withheld.
    #[arg(long)]
    disclose: String,
    /// Train a profile for this exact disclosure when none matches exactly,
    /// using the run_config.json beside the model file.
    #[arg(long)]
    on_demand: bool,
    /// Print the prediction as JSON.
    #[arg(long)]
    json: bool,
}

/// Resolve the effective config: a saved one (with --out overriding) or flags.
fn resolve(command: &str, common: &Common, fill: impl FnOnce(&mut RunConfig) -> Result<()>) -> Result<RunConfig> {
    if let Some(path) = &common.config {
        let mut cfg = RunConfig::load(path)?;
        if cfg.command != command {
            return Err(Error::InvalidArgument(format!(
                "{} was written by `{}`, not `{command}`",
                path.display(),
                cfg.command
            )));
        }
        if let Some(out) = &common.out {
            cfg.out = out.clone();
        }
        return Ok(cfg);
    }
    let mut cfg = RunConfig::new(command, common.out.clone().unwrap_or_else(|| PathBuf::from("out")));
    cfg.data = common.data.clone();
    cfg.schema = common.schema.clone();
    cfg.seed = common.seed;
    cfg.split_ratio = common.split_ratio;
    fill(&mut cfg)?;
    Ok(cfg)
}

fn apply_training(cfg: &mut RunConfig, t: &Training) -> Result<()> {
    cfg.lambda_grid = parse_grid(&t.grid)?;
    cfg.privileged_inputs = t.privileged_inputs;
    cfg.features = t.features.clone();
    cfg.train.max_epochs = t.epochs;
    cfg.train.patience = t.patience;
    cfg.train.learning_rate = t.learning_rate;
    cfg.train.batch_size = t.batch_size;
    cfg.train.hidden = t.hidden;
    cfg.train.validate()
}

fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::Synth(a) => {
            let cfg = resolve("synth", &a.common, |c| {
                c.synthetic = Some(crate::dataset::SyntheticSpec {
                    n: a.n,
                    rho: a.rho,
                    noise_std: a.noise_std,
                    noise_features: a.noise_features,
                    ..Default::default()
                });
                Ok(())
            })?;
            commands::synth(&cfg)
        }
        Command::Prepare(a) => {
            let cfg = resolve("prepare", &a.common, |c| {
                c.dump_encoded = a.dump_encoded;
                Ok(())
            })?;
            commands::prepare(&cfg)
        }
        Command::SelectFeatures(a) => {
            let cfg = resolve("select-features", &a.common, |c| {
                c.bae.epsilon = a.epsilon;
                c.bae.folds = a.folds;
                c.bae.seed = a.common.seed;
                Ok(())
            })?;
            commands::select_features(&cfg)
        }
        Command::Profiles {
            action: ProfilesCommand::List(a),
        } => commands::list_profiles(a.data.as_deref(), a.schema.as_deref(), a.model.as_deref(), a.json),
        Command::Train(a) => {
            let cfg = resolve("train", &a.common, |c| {
                c.profiles = a.profiles.clone();
                apply_training(c, &a.training)
            })?;
            commands::train(&cfg)
        }
        Command::Sweep(a) => {
            let cfg = resolve("sweep", &a.common, |c| {
                let profile = a
                    .profile
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("`sweep` needs --profile".into()))?;
                c.profiles = vec![profile];
                apply_training(c, &a.training)
            })?;
            commands::sweep(&cfg)
        }
        Command::Evaluate(a) => {
            let cfg = resolve("evaluate", &a.common, |c| {
                c.profiles = a.profiles.clone();
                c.runs = a.runs;
                apply_training(c, &a.training)
            })?;
            commands::evaluate(&cfg)
        }
        Command::Predict(a) => commands::predict(&a.model, &a.disclose, a.on_demand, a.json),
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.jobs);
            return 2;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
