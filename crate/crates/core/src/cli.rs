//! Command-line surface: dataset generation, training, evaluation, tabular
//! gap analysis and dataset inspection.
//!
//! Exit codes: 0 success, 2 usage or invalid input, 3 numerical failure,
//! 4 I/O or file-format failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::agent::{Agent, Metrics, TrainConfig, Variant, CSV_HEADER};
use crate::critic::{CriticError, DistortionMeasure};
use crate::data::{DataError, Dataset};
use crate::envs::{collect_dataset, BehaviorKind, BehaviorPolicy, EnvError, EnvKind};
use crate::error::Error;
use crate::gap::{
    analyze, EmpiricalModel, GapError, GapReport, TabularMdp, TabularPolicy, TabularTransition,
};
use crate::nn::NnError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.popo";

#[derive(Debug, Parser)]
#[command(
    name = "popo",
    version,
    about = "Pessimistic offline policy optimization on toy control tasks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out a scripted behavior policy and write a dataset.
    GenData(GenDataArgs),
    /// Train an agent on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Tabular estimation-gap analysis.
    Gap(GapArgs),
    /// Print a JSON summary of a dataset.
    DatasetInspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub env: String,
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, env = "POPO_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for episode rollouts; output does not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory (default `runs/<variant>-<seed>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Environment used for evaluation (default: the dataset's).
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long, env = "POPO_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub n_candidates: Option<usize>,
    /// `wang:<ζ>`, `cpw:<ζ>`, `cvar:<ζ>` or `identity`.
    #[arg(long)]
    pub distortion: Option<String>,
    #[arg(long)]
    pub distort_td: Option<bool>,
    /// Sets N, N′ and K together.
    #[arg(long)]
    pub quantiles: Option<usize>,
    #[arg(long)]
    pub actor_hidden: Option<usize>,
    #[arg(long)]
    pub critic_hidden: Option<usize>,
    #[arg(long)]
    pub vae_hidden: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Default: the environment recorded in the checkpoint.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, env = "POPO_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GapArgs {
    /// MDP JSON: `S`, `A`, `reward_support`, `p`, `rho0`, `gamma`, optional `policy`.
    #[arg(long)]
    pub mdp: PathBuf,
    /// JSON list of `[s, a, r_index, s_next]`, bare or under `"transitions"`.
    #[arg(long)]
    pub transitions: PathBuf,
    /// Treat state-action pairs without data as zero-reward self-loops.
    #[arg(long)]
    pub absorb_uncovered: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub dataset: PathBuf,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numerical(_) => EXIT_NUMERICAL,
        Error::Io(_) | Error::Data(_) => EXIT_IO,
        Error::Nn(NnError::NonFiniteGradient { .. }) => EXIT_NUMERICAL,
        Error::Nn(NnError::Checkpoint(_)) => EXIT_IO,
        Error::Nn(_) => EXIT_USAGE,
        Error::Critic(
            CriticError::NonFinite(_) | CriticError::Nn(NnError::NonFiniteGradient { .. }),
        ) => EXIT_NUMERICAL,
        Error::Critic(_) => EXIT_USAGE,
        Error::Gap(GapError::Singular) => EXIT_NUMERICAL,
        Error::Gap(_) => EXIT_USAGE,
        Error::Env(EnvError::NonFinite { .. }) => EXIT_NUMERICAL,
        Error::Env(_) => EXIT_USAGE,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

/// Parses `wang:-0.75`, `cpw:0.71`, `cvar:0.25` or `identity`.
pub fn parse_distortion(s: &str) -> Result<DistortionMeasure, CliError> {
    let (kind, zeta) = match s.split_once(':') {
        Some((k, z)) => {
            let z: f64 = z
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("bad distortion parameter in {s:?}")))?;
            (k.trim(), Some(z))
        }
        None => (s.trim(), None),
    };
    let m = match (kind, zeta) {
        ("identity", None) => DistortionMeasure::identity(),
        ("wang", Some(z)) => DistortionMeasure::wang(z),
        ("cpw", Some(z)) => DistortionMeasure::cpw(z),
        ("cvar", Some(z)) => DistortionMeasure::cvar(z),
        _ => return Err(CliError::usage(format!("unknown distortion {s:?}"))),
    };
    m.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(m)
}

/// Everything a training run needs: the agent hyperparameters plus run
/// plumbing. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub env_id: Option<String>,
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub eval_episodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            env_id: None,
            dataset: None,
            out_dir: None,
            seed: 0,
            eval_episodes: 10,
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunKeys {
    env_id: Option<String>,
    dataset: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    eval_episodes: Option<usize>,
}

const RUN_KEYS: [&str; 5] = ["env_id", "dataset", "out_dir", "seed", "eval_episodes"];

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))?;
        let Value::Object(mut all) = value else {
            return Err(CliError::usage("config must be a JSON object"));
        };
        let mut run = Map::new();
        for k in RUN_KEYS {
            if let Some(v) = all.remove(k) {
                run.insert(k.into(), v);
            }
        }
        let keys: RunKeys = serde_json::from_value(Value::Object(run))
            .map_err(|e| CliError::usage(format!("config: {e}")))?;
        let train: TrainConfig = serde_json::from_value(Value::Object(all))
            .map_err(|e| CliError::usage(format!("config: {e}")))?;
        let d = RunConfig::default();
        Ok(Self {
            train,
            env_id: keys.env_id,
            dataset: keys.dataset,
            out_dir: keys.out_dir,
            seed: keys.seed.unwrap_or(d.seed),
            eval_episodes: keys.eval_episodes.unwrap_or(d.eval_episodes),
        })
    }

    /// Applies command-line overrides; flags win.
    pub fn apply(&mut self, a: &TrainArgs) -> Result<(), CliError> {
        let t = &mut self.train;
        if let Some(v) = &a.variant {
            t.variant = v
                .parse::<Variant>()
                .map_err(|e| CliError::usage(e.to_string()))?;
        }
        if let Some(d) = &a.distortion {
            t.distortion = parse_distortion(d)?;
        }
        macro_rules! set {
            ($($field:ident <- $arg:ident),*) => {$(if let Some(v) = a.$arg { t.$field = v; })*};
        }
        set!(max_steps <- steps, eval_interval <- eval_interval, batch_size <- batch_size,
             gamma <- gamma, xi <- xi, eta <- eta, n_candidates <- n_candidates,
             distort_td <- distort_td, actor_hidden <- actor_hidden,
             critic_hidden <- critic_hidden, vae_hidden <- vae_hidden);
        if let Some(q) = a.quantiles {
            t.n_quantiles = q;
            t.n_target_quantiles = q;
            t.k_quantiles = q;
        }
        if let Some(e) = &a.env {
            self.env_id = Some(e.clone());
        }
        if let Some(d) = &a.dataset {
            self.dataset = Some(d.clone());
        }
        if let Some(o) = &a.out {
            self.out_dir = Some(o.clone());
        }
        if let Some(s) = a.seed {
            self.seed = s;
        }
        if let Some(n) = a.eval_episodes {
            self.eval_episodes = n;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(CliError::from)?;
        if self.eval_episodes == 0 {
            return Err(CliError::usage("eval_episodes must be at least 1"));
        }
        if let Some(e) = &self.env_id {
            e.parse::<EnvKind>()
                .map_err(|e| CliError::usage(e.to_string()))?;
        }
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::read(path).map_err(|e| match e {
        DataError::Io(err) => CliError::io(path, err),
        other => CliError {
            code: EXIT_IO,
            message: format!("{}: {other}", path.display()),
        },
    })
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn print_json(out: &mut dyn Write, v: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).expect("serializable");
    writeln!(out, "{text}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

pub fn cmd_gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let env: EnvKind = a
        .env
        .parse()
        .map_err(|e: EnvError| CliError::usage(e.to_string()))?;
    let kind: BehaviorKind = a
        .kind
        .parse()
        .map_err(|e: EnvError| CliError::usage(e.to_string()))?;
    if a.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let seed = a.seed.unwrap_or(0);
    let ds = collect_dataset(env, &BehaviorPolicy::new(kind), a.n, seed, a.jobs.max(1))?;
    ds.write(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    print_json(
        out,
        &json!({
            "path": a.out,
            "env_id": ds.env_id(),
            "policy": kind.to_string(),
            "seed": seed,
            "count": ds.len(),
            "episodes": ds.manifest().episode_returns.len(),
            "mean_return": ds.manifest().mean_return,
            "content_hash": ds.content_hash(),
        }),
    )
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut run = match &a.config {
        Some(p) => RunConfig::from_json(&read_text(p)?)?,
        None => RunConfig::default(),
    };
    run.apply(a)?;
    run.validate()?;
    let dataset_path = run.dataset.clone().ok_or_else(|| {
        CliError::usage("no dataset given (--dataset or \"dataset\" in the config)")
    })?;
    let ds = read_dataset(&dataset_path)?;
    let env_id = run
        .env_id
        .clone()
        .unwrap_or_else(|| ds.env_id().to_string());
    let env: EnvKind = env_id
        .parse()
        .map_err(|e: EnvError| CliError::usage(e.to_string()))?;
    let spec = env.spec();
    if spec.obs_dim != ds.obs_dim() || spec.act_dim != ds.act_dim() {
        return Err(CliError::usage(format!(
            "dataset dimensions ({}, {}) do not match {env_id} ({}, {})",
            ds.obs_dim(),
            ds.act_dim(),
            spec.obs_dim,
            spec.act_dim
        )));
    }
    let out_dir = run
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", run.train.variant, run.seed)));
    fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;

    let mut agent = Agent::<f32>::new(
        run.train.clone(),
        ds.obs_dim(),
        ds.act_dim(),
        ds.max_action(),
        run.seed,
    )?;
    let mut manifest = json!({
        "config": run,
        "env_id": env_id,
        "dataset": {
            "path": dataset_path,
            "content_hash": ds.content_hash(),
            "count": ds.len(),
            "behavior_mean_return": ds.manifest().mean_return,
        },
        "metrics_columns": CSV_HEADER.split(',').collect::<Vec<_>>(),
    });
    let manifest_path = out_dir.join(MANIFEST_FILE);
    write_json(&manifest_path, &manifest)?;

    let metrics_path = out_dir.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{CSV_HEADER}").map_err(|e| CliError::io(&metrics_path, e))?;
    let mut last_eval = None;
    let result = agent.train(&ds, env, run.eval_episodes, run.seed, |m| {
        m.write_csv_row(&mut w)?;
        if m.eval.is_some() {
            last_eval = m.eval.clone();
        }
        Ok(())
    });
    if let Err(e) = result {
        let code = exit_code(&e);
        if code == EXIT_NUMERICAL {
            let diag = Metrics {
                step: agent.steps() + 1,
                critic_loss: f64::NAN,
                actor_objective: f64::NAN,
                vae_losses: None,
                eval: None,
            };
            let _ = diag.write_csv_row(&mut w);
        }
        let _ = w.flush();
        return Err(CliError {
            code,
            message: format!("training stopped at step {}: {e}", agent.steps() + 1),
        });
    }
    w.flush().map_err(|e| CliError::io(&metrics_path, e))?;

    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    agent
        .save_checkpoint(
            &ckpt_path,
            json!({ "env_id": env_id, "dataset_hash": ds.content_hash() }),
        )
        .map_err(|e| CliError::io(&ckpt_path, e))?;
    manifest["final"] = json!({ "steps": agent.steps(), "eval": last_eval });
    write_json(&manifest_path, &manifest)?;
    print_json(
        out,
        &json!({
            "out_dir": out_dir,
            "steps": agent.steps(),
            "final_eval": last_eval,
        }),
    )
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let bytes = fs::read(&a.checkpoint).map_err(|e| CliError::io(&a.checkpoint, e))?;
    let (agent, extra) = Agent::<f32>::from_checkpoint_bytes(&bytes)?;
    let env_id = match (&a.env, extra.get("env_id").and_then(Value::as_str)) {
        (Some(e), _) => e.clone(),
        (None, Some(e)) => e.to_string(),
        (None, None) => {
            return Err(CliError::usage(
                "checkpoint records no environment; pass --env",
            ))
        }
    };
    let env: EnvKind = env_id
        .parse()
        .map_err(|e: EnvError| CliError::usage(e.to_string()))?;
    if a.episodes == 0 {
        return Err(CliError::usage("--episodes must be at least 1"));
    }
    let seed = a.seed.unwrap_or(0);
    let report = agent.evaluate(env, a.episodes, seed)?;
    print_json(
        out,
        &json!({
            "env_id": env_id,
            "variant": agent.config().variant,
            "steps": agent.steps(),
            "seed": seed,
            "return_mean": report.return_mean,
            "return_std": report.return_std,
            "q_beta_mean": report.q_beta_mean,
            "mc_return": report.mc_return,
            "returns": report.returns,
        }),
    )
}

#[derive(Deserialize)]
struct GapInput {
    #[serde(flatten)]
    mdp: TabularMdp,
    policy: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TransitionsFile {
    Bare(Vec<TabularTransition>),
    Wrapped { transitions: Vec<TabularTransition> },
}

/// Runs the gap analysis on the JSON inputs accepted by the `gap` command.
pub fn gap_from_json(
    mdp_json: &str,
    transitions_json: &str,
    absorb_uncovered: bool,
) -> Result<GapReport, CliError> {
    let input: GapInput =
        serde_json::from_str(mdp_json).map_err(|e| CliError::usage(format!("mdp: {e}")))?;
    let mdp = input.mdp;
    mdp.validate().map_err(|e| CliError::from(Error::from(e)))?;
    let policy = match input.policy {
        Some(probs) => TabularPolicy { probs },
        None => TabularPolicy::uniform(mdp.states, mdp.actions),
    };
    let transitions = match serde_json::from_str(transitions_json)
        .map_err(|e| CliError::usage(format!("transitions: {e}")))?
    {
        TransitionsFile::Bare(t) | TransitionsFile::Wrapped { transitions: t } => t,
    };
    let mut model = EmpiricalModel::from_transitions(&mdp, &transitions).map_err(Error::from)?;
    if absorb_uncovered {
        model.absorb_uncovered(&mdp).map_err(Error::from)?;
    }
    Ok(analyze(&mdp, &model, &policy).map_err(Error::from)?)
}

pub fn cmd_gap(a: &GapArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let report = gap_from_json(
        &read_text(&a.mdp)?,
        &read_text(&a.transitions)?,
        a.absorb_uncovered,
    )?;
    print_json(out, &report)
}

pub fn cmd_dataset_inspect(a: &InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ds = read_dataset(&a.dataset)?;
    print_json(out, &ds.summary())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Gap(a) => cmd_gap(a, out),
        Command::DatasetInspect(a) => cmd_dataset_inspect(a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn main_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distortion_strings() {
        assert_eq!(
            parse_distortion("wang:-0.75").unwrap(),
            DistortionMeasure::wang(-0.75)
        );
        assert_eq!(
            parse_distortion("cvar:0.25").unwrap(),
            DistortionMeasure::cvar(0.25)
        );
        assert_eq!(
            parse_distortion("identity").unwrap(),
            DistortionMeasure::identity()
        );
        assert!(parse_distortion("cvar:2").is_err());
        assert!(parse_distortion("wang").is_err());
        assert!(parse_distortion("spectral:1").is_err());
    }

    #[test]
    fn run_config_splits_keys() {
        let c = RunConfig::from_json(
            r#"{"seed": 4, "gamma": 0.5, "eval_episodes": 3, "variant": "opo"}"#,
        )
        .unwrap();
        assert_eq!((c.seed, c.eval_episodes), (4, 3));
        assert_eq!((c.train.gamma, c.train.variant), (0.5, Variant::Opo));
        assert!(RunConfig::from_json(r#"{"sed": 4}"#).is_err());
        assert!(RunConfig::from_json("[1]").is_err());
    }

    #[test]
    fn flags_override_config() {
        let mut c = RunConfig::from_json(r#"{"seed": 4, "xi": 0.1, "max_steps": 7}"#).unwrap();
        let a = TrainArgs {
            seed: Some(9),
            xi: Some(0.2),
            quantiles: Some(8),
            ..TrainArgs::default()
        };
        c.apply(&a).unwrap();
        assert_eq!((c.seed, c.train.xi, c.train.max_steps), (9, 0.2, 7));
        assert_eq!(c.train.k_quantiles, 8);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Numerical("x".into())), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::Data(DataError::Empty)), EXIT_IO);
        assert_eq!(
            exit_code(&Error::Critic(CriticError::NonFinite("loss"))),
            EXIT_NUMERICAL
        );
    }
}
