use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use sfdma_core::abg::{abg_fit, read_samples_csv, AbgParamsFile};
use sfdma_core::harness::{
    cdf_experiment, config_comment, run_workflow, sweep_snr, write_cdf_csv, write_sweep_csv,
    RunConfig, WorkflowOptions,
};
use sfdma_core::power::{build_problem, simplex_solve, AllocationRequest, PowerSolution};
use sfdma_core::trainer::{
    cross_decoding_report, evaluate_accuracy, orthogonality_report, train, write_history_csv,
    EvalChannel, SystemCheckpoint,
};
use sfdma_core::{AbgParams, UserModel};

const SEED_ENV: &str = "SFDMA_SEED";

#[derive(Parser)]
#[command(
    name = "sfdma",
    version,
    about = "Multi-user semantic broadcast simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Serialize)]
struct Common {
    /// TOML file with optional [train] and [experiment] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (a directory for `train`).
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train all users' codecs jointly.
    Train(TrainArgs),
    /// Accuracy of a trained system on held-out data.
    Eval(EvalArgs),
    /// Pairwise cosine and angle between user codes.
    ReportOrth(ModelArgs),
    /// Cross-decoding accuracy matrix.
    ReportPrivacy(PrivacyArgs),
    /// Fit the performance-vs-SINR curve to `sinr_db,phi` samples.
    FitAbg(FitArgs),
    /// Minimum-power allocation.
    Allocate(AllocateArgs),
    /// Accuracy over the configured SNR grid under Rayleigh fading.
    Sweep(SweepArgs),
    /// Optimal vs equal-budget allocation over random fading draws.
    Cdf(CdfArgs),
    /// Encode, allocate, broadcast and decode over random draws.
    Workflow(WorkflowArgs),
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train_snr_db: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ChannelArg {
    Rayleigh,
    Awgn,
    UpperBound,
}

impl From<ChannelArg> for EvalChannel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Rayleigh => EvalChannel::RAYLEIGH,
            ChannelArg::Awgn => EvalChannel::AWGN,
            ChannelArg::UpperBound => EvalChannel::UPPER_BOUND,
        }
    }
}

#[derive(Args, Serialize)]
struct ModelArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    snr_db: f64,
    #[arg(long, value_enum, default_value_t = ChannelArg::Rayleigh)]
    channel: ChannelArg,
    /// Overrides `experiment.trials`.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args, Serialize)]
struct PrivacyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    snr_db: f64,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// CSV with header `sinr_db,phi`.
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args, Serialize)]
struct AllocateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Request JSON `{users:[{alpha,beta,gamma,tau,eta,gain_sq,noise_var}]}`.
    #[arg(long = "in", conflicts_with = "params")]
    input: Option<PathBuf>,
    /// Curve JSON per user (as written by `fit-abg`).
    #[arg(long)]
    params: Vec<PathBuf>,
    /// Target per user; a single value applies to all.
    #[arg(long, value_delimiter = ',')]
    eta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    gain_sq: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    noise_var: Vec<f64>,
}

#[derive(Args, Serialize)]
struct CdfArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Overrides `experiment.draws`.
    #[arg(long)]
    draws: Option<usize>,
    /// Also write the pass-fraction summary as JSON here.
    #[arg(long)]
    #[serde(skip)]
    summary: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct WorkflowArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    draws: Option<usize>,
    /// Give every user this power instead of the minimum-power allocation.
    #[arg(long)]
    fixed_power: Option<f64>,
    /// Unit channel gains instead of Rayleigh fading.
    #[arg(long)]
    no_fading: bool,
}

/// Config from file (or defaults) with the seed override applied. The
/// environment seed is used only when neither the flag nor the file sets
/// one.
fn load_config(common: &Common) -> Result<RunConfig> {
    let (mut cfg, has_seed) = match &common.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let raw: toml::Table =
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let has = |section: &str| {
                raw.get(section)
                    .and_then(|t| t.as_table())
                    .is_some_and(|t| t.contains_key("seed"))
            };
            let has_seed = has("train") || has("experiment");
            (RunConfig::from_toml_str(&text)?, has_seed)
        }
        None => (RunConfig::default(), false),
    };
    let seed = match common.seed {
        Some(s) => Some(s),
        None if !has_seed => match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .with_context(|| format!("{SEED_ENV}={v} is not a u64"))?,
            ),
            Err(_) => None,
        },
        None => None,
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
        cfg.experiment.seed = s;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_models(path: &Path) -> Result<(SystemCheckpoint, Vec<UserModel>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ck: SystemCheckpoint =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let models = ck.models()?;
    Ok((ck, models))
}

fn load_params(path: &Path) -> Result<AbgParams> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: AbgParamsFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if file.has_ignored_zeta() {
        eprintln!(
            "warning: {}: `zeta` is not part of the curve and is ignored",
            path.display()
        );
    }
    Ok(file.params()?)
}

/// Everything that determined an output, minus output paths.
fn provenance<A: Serialize>(command: &str, args: &A, cfg: &RunConfig) -> serde_json::Value {
    json!({ "command": command, "args": args, "config": cfg })
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.train_snr_db {
        cfg.train.train_snr_db = s;
    }
    let data = cfg.train.train_datasets()?;
    let sys = train(&cfg.train, &data)?;
    fs::create_dir_all(&a.common.out)
        .with_context(|| format!("creating {}", a.common.out.display()))?;
    write_json(&a.common.out.join("model.json"), &sys.to_checkpoint())?;
    let mut w = create(&a.common.out.join("history.csv"))?;
    write_history_csv(&mut w, &sys.history, &cfg.train)?;
    w.flush()?;
    if let Some(last) = sys.history.last() {
        println!(
            "epoch {} loss {} accuracy {:?}",
            last.epoch, last.loss, last.accuracy
        );
    }
    Ok(())
}

/// Config for a model-based command: the checkpoint's training config
/// replaces the file's `[train]` table so datasets match the model.
fn model_config(m: &ModelArgs) -> Result<(RunConfig, Vec<UserModel>)> {
    let mut cfg = load_config(&m.common)?;
    let (ck, models) = load_models(&m.model)?;
    let seed = cfg.train.seed;
    cfg.train = ck.config;
    if m.common.seed.is_some() {
        cfg.train.seed = seed;
    }
    Ok((cfg, models))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (cfg, models) = model_config(&a.model)?;
    let trials = a.trials.unwrap_or(cfg.experiment.trials);
    let test = cfg
        .train
        .test_datasets(Some(cfg.experiment.test_per_class))?;
    let est = evaluate_accuracy(
        &models,
        &test,
        a.channel.into(),
        a.snr_db,
        trials,
        cfg.experiment.seed,
    )?;
    let mut w = create(&a.model.common.out)?;
    w.write_all(config_comment(&provenance("eval", a, &cfg))?.as_bytes())?;
    writeln!(w, "user,accuracy,stderr,decodes")?;
    for (i, e) in est.iter().enumerate() {
        writeln!(w, "{i},{},{},{}", e.accuracy, e.stderr, e.decodes)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_report_orth(a: &ModelArgs) -> Result<()> {
    let (cfg, models) = model_config(a)?;
    let probes = cfg
        .train
        .test_dataset(Some(cfg.experiment.test_per_class), 3000)?;
    let rep = orthogonality_report(&models, &probes)?;
    let mut w = create(&a.common.out)?;
    w.write_all(config_comment(&provenance("report-orth", a, &cfg))?.as_bytes())?;
    writeln!(w, "user_a,user_b,cosine,angle_deg")?;
    for p in rep {
        writeln!(w, "{},{},{},{}", p.user_a, p.user_b, p.cosine, p.angle_deg)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_report_privacy(a: &PrivacyArgs) -> Result<()> {
    let (cfg, models) = model_config(&a.model)?;
    let trials = a.trials.unwrap_or(cfg.experiment.trials);
    let probes = cfg
        .train
        .test_dataset(Some(cfg.experiment.test_per_class), 3000)?;
    let matrix = cross_decoding_report(&models, &probes, a.snr_db, trials, cfg.experiment.seed)?;
    let mut w = create(&a.model.common.out)?;
    w.write_all(config_comment(&provenance("report-privacy", a, &cfg))?.as_bytes())?;
    writeln!(w, "decoder,user,accuracy")?;
    for (i, row) in matrix.iter().enumerate() {
        for (j, acc) in row.iter().enumerate() {
            writeln!(w, "{i},{j},{acc}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_fit_abg(a: &FitArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let samples = read_samples_csv(file)?;
    let fit = abg_fit(&samples)?;
    let mut out = AbgParamsFile::from(&fit);
    out.config = Some(provenance("fit-abg", a, &cfg));
    write_json(&a.common.out, &out)?;
    println!(
        "alpha={:?} beta={:?} gamma={:?} tau={:?} residual_rms={:?}",
        fit.params.alpha, fit.params.beta, fit.params.gamma, fit.params.tau, fit.residual_rms
    );
    Ok(())
}

/// Broadcast a single value to `n` users.
fn per_user(values: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        k if k == n => Ok(values.to_vec()),
        k => bail!("{what}: expected 1 or {n} values, got {k}"),
    }
}

#[derive(Serialize)]
struct AllocationOutput<'a> {
    #[serde(flatten)]
    solution: &'a PowerSolution,
    config: serde_json::Value,
}

fn cmd_allocate(a: &AllocateArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let problem = match &a.input {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let req: AllocationRequest = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            req.to_problem()?
        }
        None => {
            if a.params.is_empty() {
                bail!("give either --in or at least one --params file");
            }
            let n = a.params.len();
            let params = a
                .params
                .iter()
                .map(|p| load_params(p))
                .collect::<Result<Vec<_>>>()?;
            let eta = per_user(&a.eta, n, "--eta")?;
            let gain_sq = per_user(
                if a.gain_sq.is_empty() {
                    &[1.0]
                } else {
                    &a.gain_sq
                },
                n,
                "--gain-sq",
            )?;
            let noise = per_user(
                if a.noise_var.is_empty() {
                    &[1.0]
                } else {
                    &a.noise_var
                },
                n,
                "--noise-var",
            )?;
            build_problem(&params, &eta, &gain_sq, &noise)?
        }
    };
    let sol = simplex_solve(&problem)?;
    write_json(
        &a.common.out,
        &AllocationOutput {
            solution: &sol,
            config: provenance("allocate", a, &cfg),
        },
    )?;
    println!(
        "status={} total={:?}",
        serde_json::to_value(sol.status)?.as_str().unwrap_or("?"),
        sol.total
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let (cfg, models) = model_config(&a.model)?;
    cfg.experiment.validate()?;
    let trials = a.trials.unwrap_or(cfg.experiment.trials);
    let test = cfg
        .train
        .test_datasets(Some(cfg.experiment.test_per_class))?;
    let rows = sweep_snr(
        &models,
        &test,
        &cfg.experiment.snr_grid_db,
        trials,
        cfg.experiment.seed,
    )?;
    let mut w = create(&a.model.common.out)?;
    write_sweep_csv(&mut w, &rows, &provenance("sweep", a, &cfg))?;
    w.flush()?;
    Ok(())
}

fn cmd_cdf(a: &CdfArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(d) = a.draws {
        cfg.experiment.draws = d;
    }
    let e = &cfg.experiment;
    e.validate()?;
    let rep = cdf_experiment(&e.params, &e.eta, &e.noise_var, e.draws, e.seed)?;
    let prov = provenance("cdf", a, &cfg);
    let mut w = create(&a.common.out)?;
    write_cdf_csv(&mut w, &rep, &prov)?;
    w.flush()?;
    let summary = json!({
        "draws": rep.draws,
        "eta": rep.eta,
        "infeasible_draws": rep.infeasible_draws,
        "fixed_budget": rep.fixed_budget,
        "optimal": {
            "pass_fraction": rep.optimal.pass_fraction,
            "joint_pass_fraction": rep.optimal.joint_pass_fraction,
            "feasible_pass_fraction": rep.optimal.feasible_pass_fraction,
        },
        "fixed": {
            "pass_fraction": rep.fixed.pass_fraction,
            "joint_pass_fraction": rep.fixed.joint_pass_fraction,
            "feasible_pass_fraction": rep.fixed.feasible_pass_fraction,
        },
        "config": prov,
    });
    if let Some(path) = &a.summary {
        write_json(path, &summary)?;
    }
    println!(
        "optimal pass {:?} fixed pass {:?} (budget {:?}, infeasible draws {})",
        rep.optimal.joint_pass_fraction,
        rep.fixed.joint_pass_fraction,
        rep.fixed_budget,
        rep.infeasible_draws
    );
    Ok(())
}

fn cmd_workflow(a: &WorkflowArgs) -> Result<()> {
    let (cfg, models) = model_config(&a.model)?;
    let e = &cfg.experiment;
    e.validate()?;
    if e.params.len() != models.len() {
        bail!(
            "{} curves configured for {} users",
            e.params.len(),
            models.len()
        );
    }
    let test = cfg.train.test_datasets(Some(e.test_per_class))?;
    let opts = WorkflowOptions {
        draws: a.draws.unwrap_or(e.draws),
        noise_vars: e.noise_var.clone(),
        fading: !a.no_fading,
        allocate: a.fixed_power.is_none(),
        fixed_power: a.fixed_power.unwrap_or(1.0),
        seed: e.seed,
    };
    let rep = run_workflow(&models, &e.params, &e.eta, &test, &opts)?;
    let mut out = serde_json::to_value(&rep)?;
    out["config"] = provenance("workflow", a, &cfg);
    write_json(&a.model.common.out, &out)?;
    println!(
        "executed {} draws, {} infeasible, {} below target, accuracy {:?}",
        rep.records.len(),
        rep.infeasible_draws.len(),
        rep.sinr_violations,
        rep.accuracy
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ReportOrth(a) => cmd_report_orth(a),
        Command::ReportPrivacy(a) => cmd_report_privacy(a),
        Command::FitAbg(a) => cmd_fit_abg(a),
        Command::Allocate(a) => cmd_allocate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Cdf(a) => cmd_cdf(a),
        Command::Workflow(a) => cmd_workflow(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
