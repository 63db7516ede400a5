//! resip-lab: drives the pipeline from demonstrations through fine-tuning,
//! distillation, evaluation, and run-directory reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::SystemTime;

use clap::{Parser, Subcommand, ValueEnum};

use resip_core::checkpoint::{
    load_base_policy, load_qnet, load_residual, save_base_policy, save_qnet, save_residual,
};
use resip_core::config::RunConfig;
use resip_core::data::Dataset;
use resip_core::distill::{
    collect_successes, distill_student, eval_policy, run_scaling_study, EvalReport,
};
use resip_core::env::{Controller, EnvConfig, ScriptedExpert};
use resip_core::metrics::{CsvFile, BC_CSV_HEADER, SCALING_CSV_HEADER, TRAIN_CSV_HEADER};
use resip_core::policy::{bc_train, BasePolicy, BcRow, ChunkExecutor, PolicyKind};
use resip_core::residual::CombinedController;
use resip_core::rl::{train_idql, train_mlp_direct, train_residual_ppo, IdqlController};
use resip_core::rng::{DEMO_SEED_BASE, EVAL_SEED_BASE};
use resip_core::{Error, Result};

const MANIFEST_NAME: &str = "manifest.json";

#[derive(Parser)]
#[command(
    name = "resip-lab",
    about = "Chunked-policy fine-tuning lab for the planar insertion task",
    version
)]
struct Cli {
    /// Run config JSON; field defaults fill anything omitted.
    #[arg(long, global = true, conflicts_with = "profile")]
    config: Option<PathBuf>,
    /// Built-in config profile.
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Override the config's run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// Minutes-scale wiring check; learns nothing interesting.
    Smoke,
    /// The full recipe at the scale this crate is tuned for.
    PaperAnalog,
}

impl Profile {
    fn text(self) -> &'static str {
        match self {
            Profile::Smoke => include_str!("../profiles/smoke.json"),
            Profile::PaperAnalog => include_str!("../profiles/paper-analog.json"),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Record successful scripted-expert demonstrations.
    CollectDemos {
        #[arg(long)]
        out: PathBuf,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a policy (behavior cloning) or an improvement operator.
    Train {
        #[arg(value_enum)]
        kind: TrainKind,
        /// Demonstration dataset (behavior cloning kinds).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Base policy checkpoint (fine-tuning kinds).
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Harvest teacher successes, run the dataset-size scaling study, and
    /// distill a student from the full harvest.
    Distill {
        /// Teacher base policy; the scripted expert when omitted.
        #[arg(long)]
        base: Option<PathBuf>,
        /// Residual checkpoint riding on the base policy.
        #[arg(long, requires = "base")]
        residual: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a saved artifact on the eval seed band.
    Eval {
        /// Base policy checkpoint.
        #[arg(long)]
        policy: PathBuf,
        /// Residual checkpoint to combine with the base.
        #[arg(long)]
        residual: Option<PathBuf>,
        /// Q checkpoint for selection over the base sampler.
        #[arg(long, conflicts_with = "residual")]
        qnet: Option<PathBuf>,
        /// Episode count; the config's eval_episodes when omitted.
        #[arg(long)]
        episodes: Option<usize>,
        /// Write eval.json here in addition to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate manifests under a directory: methods by env randomness.
    Report {
        #[arg(long)]
        root: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainKind {
    /// Chunked diffusion policy via behavior cloning.
    BcDp,
    /// Single-step regression policy via behavior cloning.
    BcMlpS,
    /// Chunked regression policy via behavior cloning.
    BcMlpC,
    /// Gaussian residual on a frozen base, trained with PPO.
    ResidualPpo,
    /// Whole-chunk PPO fine-tuning of the regression policy.
    DirectPpo,
    /// Q-guided selection over the frozen diffusion sampler.
    Idql,
}

impl TrainKind {
    fn method(self) -> &'static str {
        match self {
            TrainKind::BcDp => "bc-dp",
            TrainKind::BcMlpS => "bc-mlp-s",
            TrainKind::BcMlpC => "bc-mlp-c",
            TrainKind::ResidualPpo => "residual-ppo",
            TrainKind::DirectPpo => "direct-ppo",
            TrainKind::Idql => "idql",
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    command: String,
    method: String,
    code_version: String,
    config_digest: String,
    seed: u64,
    randomness: String,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    /// Success rate of this run's primary artifact on the eval band.
    eval_success: Option<f64>,
    /// Wilson 95% interval matching eval_success.
    eval_ci_95: Option<(f64, f64)>,
    /// Input artifacts and their digests.
    inputs: BTreeMap<String, String>,
    /// Output files, relative to the run directory.
    artifacts: BTreeMap<String, String>,
    config: RunConfig,
}

/// Everything a run accumulates for its manifest besides the config.
struct RunRecord {
    command: &'static str,
    method: String,
    started_unix_ms: u128,
    eval: Option<EvalReport>,
    inputs: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
}

impl RunRecord {
    fn start(command: &'static str, method: &str) -> Self {
        RunRecord {
            command,
            method: method.to_string(),
            started_unix_ms: unix_ms(),
            eval: None,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    fn finish(self, dir: &Path, cfg: &RunConfig) -> Result<()> {
        let manifest = Manifest {
            command: self.command.into(),
            method: self.method,
            code_version: env!("CARGO_PKG_VERSION").into(),
            config_digest: config_digest(cfg)?,
            seed: cfg.seed,
            randomness: randomness_label(&cfg.env),
            started_unix_ms: self.started_unix_ms,
            finished_unix_ms: unix_ms(),
            eval_success: self.eval.as_ref().map(|r| r.success_rate),
            eval_ci_95: self.eval.as_ref().map(|r| r.wilson_ci_95),
            inputs: self.inputs,
            artifacts: self.artifacts,
            config: cfg.clone(),
        };
        write_manifest(dir, &manifest)
    }
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

fn config_digest(cfg: &RunConfig) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(cfg)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match (&cli.config, cli.profile) {
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(profile)) => RunConfig::from_json(profile.text())
            .map_err(|e| Error::Config(format!("built-in profile is broken: {e}")))?,
        (None, None) => RunConfig::default(),
        (Some(_), Some(_)) => unreachable!("clap rejects --config with --profile"),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;

    match cli.cmd {
        Cmd::CollectDemos { out, force } => cmd_collect_demos(&cfg, &out, force),
        Cmd::Train {
            kind,
            data,
            base,
            out,
            force,
        } => cmd_train(&cfg, kind, data.as_deref(), base.as_deref(), &out, force),
        Cmd::Distill {
            base,
            residual,
            out,
            force,
        } => cmd_distill(&cfg, base.as_deref(), residual.as_deref(), &out, force),
        Cmd::Eval {
            policy,
            residual,
            qnet,
            episodes,
            out,
        } => cmd_eval(&cfg, &policy, residual.as_deref(), qnet.as_deref(), episodes, out.as_deref()),
        Cmd::Report { root } => cmd_report(&root),
    }
}

/// Creates the run directory; refuses to reuse a non-empty one without
/// --force so runs do not silently mix artifacts.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let occupied = fs::read_dir(dir)?.next().is_some();
    if occupied && !force {
        return Err(Error::Config(format!(
            "{} is not empty; pass --force to write into it",
            dir.display()
        )));
    }
    Ok(())
}

/// Manifest writes go through a temp file and rename, so a run directory
/// either has a complete manifest or none.
fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    let tmp = dir.join(".manifest.tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, dir.join(MANIFEST_NAME))?;
    Ok(())
}

fn randomness_label(cfg: &EnvConfig) -> String {
    serde_json::to_value(cfg.randomness)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| "unknown".to_string())
}

fn save_eval(dir: &Path, name: &str, report: &EvalReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_bc_csv(dir: &Path, rows: &[BcRow]) -> Result<()> {
    let mut csv = CsvFile::create(&dir.join("bc_train.csv"), BC_CSV_HEADER)?;
    for r in rows {
        csv.write_row(&format!("{},{},{}", r.step, r.loss, r.lr))?;
    }
    Ok(())
}

fn cmd_collect_demos(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    prepare_out(out, force)?;
    let mut rec = RunRecord::start("collect-demos", "expert");
    log::info!("collecting {} expert demonstrations", cfg.demos);
    let (ds, stats) = collect_successes(
        |_| ScriptedExpert::with_seed(0),
        &cfg.env,
        cfg.demos,
        DEMO_SEED_BASE,
    )?;
    ds.save(&out.join("demos.jsonl"))?;
    rec.artifacts.insert("dataset".into(), "demos.jsonl".into());
    log::info!(
        "kept {} successes out of {} attempts",
        stats.successes,
        stats.attempts
    );
    let report = eval_policy(
        |_| ScriptedExpert::with_seed(0),
        &cfg.env,
        cfg.eval_episodes,
        EVAL_SEED_BASE,
    )?;
    save_eval(out, "eval.json", &report)?;
    rec.artifacts.insert("eval".into(), "eval.json".into());
    println!("expert eval success: {:.3}", report.success_rate);
    rec.eval = Some(report);
    rec.finish(out, cfg)
}

fn cmd_train(
    cfg: &RunConfig,
    kind: TrainKind,
    data: Option<&Path>,
    base: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<()> {
    prepare_out(out, force)?;
    let mut rec = RunRecord::start("train", kind.method());

    let eval_report = match kind {
        TrainKind::BcDp | TrainKind::BcMlpS | TrainKind::BcMlpC => {
            let data = data.ok_or_else(|| {
                Error::Config("behavior cloning needs --data <demos.jsonl>".into())
            })?;
            let ds = Dataset::load(data, Some(&cfg.env))?;
            rec.inputs.insert("data".into(), data.display().to_string());
            let pkind = match kind {
                TrainKind::BcDp => PolicyKind::Diffusion,
                TrainKind::BcMlpS => PolicyKind::MlpS,
                _ => PolicyKind::MlpC,
            };
            log::info!("cloning {} on {} trajectories", pkind, ds.len());
            let (policy, rows) = bc_train(pkind, &ds, &cfg.bc, cfg.seed)?;
            write_bc_csv(out, &rows)?;
            rec.artifacts.insert("train_csv".into(), "bc_train.csv".into());
            let digest = save_base_policy(&out.join("policy.json"), &policy)?;
            rec.artifacts.insert("policy".into(), "policy.json".into());
            rec.inputs.insert("policy_digest".into(), digest);
            let report = eval_policy(
                |_| ChunkExecutor::new(&policy),
                &cfg.env,
                cfg.eval_episodes,
                EVAL_SEED_BASE,
            )?;
            save_eval(out, "eval.json", &report)?;
            rec.artifacts.insert("eval".into(), "eval.json".into());
            report
        }
        TrainKind::ResidualPpo => {
            let base = base.ok_or_else(|| {
                Error::Config("residual training needs --base <policy.json>".into())
            })?;
            let (base_policy, base_digest) = load_base_policy(base)?;
            rec.inputs.insert("base".into(), base.display().to_string());
            rec.inputs.insert("base_digest".into(), base_digest.clone());

            let mut csv = CsvFile::create(&out.join("train.csv"), TRAIN_CSV_HEADER)?;
            let result = train_residual_ppo(&base_policy, &cfg.env, &cfg.residual, cfg.seed, |row| {
                csv.write_row(&row.to_csv())
            })?;
            rec.artifacts.insert("train_csv".into(), "train.csv".into());
            save_residual(&out.join("residual.json"), &result.residual, &result.critic, &base_digest)?;
            rec.artifacts.insert("residual".into(), "residual.json".into());

            let base_report = eval_policy(
                |_| ChunkExecutor::new(&base_policy),
                &cfg.env,
                cfg.eval_episodes,
                EVAL_SEED_BASE,
            )?;
            save_eval(out, "base_eval.json", &base_report)?;
            rec.artifacts.insert("base_eval".into(), "base_eval.json".into());

            let report = eval_policy(
                |_| CombinedController::new(&base_policy, &result.residual, true),
                &cfg.env,
                cfg.eval_episodes,
                EVAL_SEED_BASE,
            )?;
            save_eval(out, "eval.json", &report)?;
            rec.artifacts.insert("eval".into(), "eval.json".into());
            println!(
                "base {:.3} -> residual {:.3} over {} paired episodes",
                base_report.success_rate, report.success_rate, report.episodes
            );
            report
        }
        TrainKind::DirectPpo => {
            let base = base.ok_or_else(|| {
                Error::Config("direct fine-tuning needs --base <policy.json>".into())
            })?;
            let (base_policy, base_digest) = load_base_policy(base)?;
            let mlp = base_policy.as_mlp().ok_or_else(|| {
                Error::Dependency("direct fine-tuning expects a regression policy checkpoint".into())
            })?;
            rec.inputs.insert("base".into(), base.display().to_string());
            rec.inputs.insert("base_digest".into(), base_digest);

            let mut csv = CsvFile::create(&out.join("train.csv"), TRAIN_CSV_HEADER)?;
            let result = train_mlp_direct(mlp, &cfg.env, &cfg.direct, cfg.seed, |row| {
                csv.write_row(&row.to_csv())
            })?;
            rec.artifacts.insert("train_csv".into(), "train.csv".into());
            let tuned = BasePolicy::Mlp(result.policy);
            save_base_policy(&out.join("policy.json"), &tuned)?;
            rec.artifacts.insert("policy".into(), "policy.json".into());

            let report = eval_policy(
                |_| ChunkExecutor::new(&tuned),
                &cfg.env,
                cfg.eval_episodes,
                EVAL_SEED_BASE,
            )?;
            save_eval(out, "eval.json", &report)?;
            rec.artifacts.insert("eval".into(), "eval.json".into());
            report
        }
        TrainKind::Idql => {
            let base = base.ok_or_else(|| {
                Error::Config("selection training needs --base <policy.json>".into())
            })?;
            let (base_policy, base_digest) = load_base_policy(base)?;
            let dp = base_policy.as_diffusion().ok_or_else(|| {
                Error::Dependency("selection training expects a diffusion policy checkpoint".into())
            })?;
            rec.inputs.insert("base".into(), base.display().to_string());
            rec.inputs.insert("base_digest".into(), base_digest.clone());

            let mut csv = CsvFile::create(&out.join("train.csv"), TRAIN_CSV_HEADER)?;
            let result = train_idql(dp, &cfg.env, &cfg.idql, cfg.seed, |row| {
                csv.write_row(&row.to_csv())
            })?;
            rec.artifacts.insert("train_csv".into(), "train.csv".into());
            save_qnet(
                &out.join("qnet.json"),
                &result.q,
                cfg.idql.n_samples,
                cfg.idql.noise_log_std,
                &base_digest,
            )?;
            rec.artifacts.insert("qnet".into(), "qnet.json".into());

            let report = eval_policy(
                |_| IdqlController::new(dp, &result.q, cfg.idql.n_samples, cfg.idql.noise_log_std),
                &cfg.env,
                cfg.eval_episodes,
                EVAL_SEED_BASE,
            )?;
            save_eval(out, "eval.json", &report)?;
            rec.artifacts.insert("eval".into(), "eval.json".into());
            report
        }
    };

    println!(
        "{}: eval success {:.3} ({}/{} episodes)",
        kind.method(),
        eval_report.success_rate,
        eval_report.successes,
        eval_report.episodes
    );
    rec.eval = Some(eval_report);
    rec.finish(out, cfg)
}

fn cmd_distill(
    cfg: &RunConfig,
    base: Option<&Path>,
    residual: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<()> {
    prepare_out(out, force)?;
    let mut rec = RunRecord::start("distill", "distill");

    // Teacher resolution; boxed so every branch evaluates with the same code.
    let loaded_base = base.map(load_base_policy).transpose()?;
    let loaded_residual = match (&loaded_base, residual) {
        (Some((_, digest)), Some(path)) => {
            rec.inputs.insert("residual".into(), path.display().to_string());
            Some(load_residual(path, Some(digest))?)
        }
        _ => None,
    };
    if let Some(path) = base {
        rec.inputs.insert("base".into(), path.display().to_string());
        rec.inputs.insert("base_digest".into(), loaded_base.as_ref().unwrap().1.clone());
    }
    let make_teacher = |_: usize| -> Box<dyn Controller> {
        match (&loaded_base, &loaded_residual) {
            (Some((policy, _)), Some((res, _))) => {
                Box::new(CombinedController::new(policy, res, true))
            }
            (Some((policy, _)), None) => Box::new(ChunkExecutor::new(policy)),
            _ => Box::new(ScriptedExpert::with_seed(0)),
        }
    };

    let max_size = *cfg.distill.sizes.last().expect("validated non-empty");
    log::info!("harvesting {max_size} teacher successes");
    let (harvest, stats) = collect_successes(&make_teacher, &cfg.env, max_size, DEMO_SEED_BASE)?;
    log::info!("harvest took {} attempts", stats.attempts);
    harvest.save(&out.join("harvest.jsonl"))?;
    rec.artifacts.insert("harvest".into(), "harvest.jsonl".into());

    let teacher_report = eval_policy(&make_teacher, &cfg.env, cfg.eval_episodes, EVAL_SEED_BASE)?;
    save_eval(out, "teacher_eval.json", &teacher_report)?;
    rec.artifacts.insert("teacher_eval".into(), "teacher_eval.json".into());
    println!("teacher eval success: {:.3}", teacher_report.success_rate);

    let mut csv = CsvFile::create(&out.join("scaling.csv"), SCALING_CSV_HEADER)?;
    run_scaling_study(&harvest, &cfg.distill, &cfg.env, cfg.seed, EVAL_SEED_BASE, |row| {
        println!(
            "student on {} trajectories (rep {}): success {:.3}",
            row.size, row.rep, row.success_rate
        );
        csv.write_row(&row.to_csv())
    })?;
    rec.artifacts.insert("scaling_csv".into(), "scaling.csv".into());

    log::info!("distilling the final student on the full harvest");
    let (student, rows) = distill_student(&harvest, cfg.distill.student, &cfg.distill.bc, cfg.seed)?;
    write_bc_csv(out, &rows)?;
    rec.artifacts.insert("train_csv".into(), "bc_train.csv".into());
    save_base_policy(&out.join("student.json"), &student)?;
    rec.artifacts.insert("student".into(), "student.json".into());

    let report = eval_policy(
        |_| ChunkExecutor::new(&student),
        &cfg.env,
        cfg.eval_episodes,
        EVAL_SEED_BASE,
    )?;
    save_eval(out, "eval.json", &report)?;
    rec.artifacts.insert("eval".into(), "eval.json".into());
    println!(
        "student eval success: {:.3} (teacher {:.3})",
        report.success_rate, teacher_report.success_rate
    );
    rec.eval = Some(report);
    rec.finish(out, cfg)
}

fn cmd_eval(
    cfg: &RunConfig,
    policy: &Path,
    residual: Option<&Path>,
    qnet: Option<&Path>,
    episodes: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let (base, base_digest) = load_base_policy(policy)?;
    let episodes = episodes.unwrap_or(cfg.eval_episodes);

    let report = if let Some(res_path) = residual {
        let (res, _critic) = load_residual(res_path, Some(&base_digest))?;
        eval_policy(
            |_| CombinedController::new(&base, &res, true),
            &cfg.env,
            episodes,
            EVAL_SEED_BASE,
        )?
    } else if let Some(q_path) = qnet {
        let dp = base.as_diffusion().ok_or_else(|| {
            Error::Dependency("Q-guided evaluation expects a diffusion policy checkpoint".into())
        })?;
        let (q, n_samples, noise_log_std) = load_qnet(q_path, Some(&base_digest))?;
        eval_policy(
            |_| IdqlController::new(dp, &q, n_samples, noise_log_std),
            &cfg.env,
            episodes,
            EVAL_SEED_BASE,
        )?
    } else {
        eval_policy(|_| ChunkExecutor::new(&base), &cfg.env, episodes, EVAL_SEED_BASE)?
    };

    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    print!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        save_eval(dir, "eval.json", &report)?;
    }
    Ok(())
}

struct ReportCell {
    success: f64,
    ci: Option<(f64, f64)>,
    finished_unix_ms: u128,
    dir: PathBuf,
}

/// Scans the immediate children of `root` for run manifests and prints a
/// methods-by-randomness success table (plus report.csv next to the runs).
/// When a (method, randomness) cell has several runs, the latest one wins.
fn cmd_report(root: &Path) -> Result<()> {
    let mut cells: BTreeMap<(String, String), ReportCell> = BTreeMap::new();
    let mut randomness_seen: Vec<String> = Vec::new();

    for entry in fs::read_dir(root)? {
        let dir = entry?.path();
        let manifest_path = dir.join(MANIFEST_NAME);
        if !manifest_path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&manifest_path)?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Dependency(format!("{}: {e}", manifest_path.display())))?;
        let Some(success) = manifest.eval_success else {
            continue;
        };
        if !randomness_seen.contains(&manifest.randomness) {
            randomness_seen.push(manifest.randomness.clone());
        }
        let cell = ReportCell {
            success,
            ci: manifest.eval_ci_95,
            finished_unix_ms: manifest.finished_unix_ms,
            dir: dir.clone(),
        };
        let key = (manifest.method.clone(), manifest.randomness.clone());
        match cells.get(&key) {
            Some(old) => {
                let keep_new = cell.finished_unix_ms > old.finished_unix_ms;
                let winner = if keep_new { &cell.dir } else { &old.dir };
                eprintln!(
                    "warning: {} and {} both report {}/{}; keeping the newer {}",
                    old.dir.display(),
                    dir.display(),
                    key.0,
                    key.1,
                    winner.display()
                );
                if keep_new {
                    cells.insert(key, cell);
                }
            }
            None => {
                cells.insert(key, cell);
            }
        }
    }

    // Canonical orders; anything unknown goes after, alphabetically.
    const METHOD_ORDER: [&str; 8] = [
        "expert",
        "bc-dp",
        "bc-mlp-s",
        "bc-mlp-c",
        "residual-ppo",
        "direct-ppo",
        "idql",
        "distill",
    ];
    const RANDOMNESS_ORDER: [&str; 2] = ["low", "med"];
    let rank = |order: &[&str], v: &str| order.iter().position(|m| *m == v).unwrap_or(order.len());
    let mut methods: Vec<String> = cells.keys().map(|(m, _)| m.clone()).collect();
    methods.sort_by(|a, b| rank(&METHOD_ORDER, a).cmp(&rank(&METHOD_ORDER, b)).then(a.cmp(b)));
    methods.dedup();
    if randomness_seen.is_empty() {
        randomness_seen = RANDOMNESS_ORDER.iter().map(|s| s.to_string()).collect();
    }
    randomness_seen.sort_by(|a, b| {
        rank(&RANDOMNESS_ORDER, a)
            .cmp(&rank(&RANDOMNESS_ORDER, b))
            .then(a.cmp(b))
    });

    // Machine-readable mirror of the table, rates passed through unscaled.
    let mut csv = CsvFile::create(
        &root.join("report.csv"),
        "method,randomness,success_rate,ci_lo,ci_hi",
    )?;
    for ((m, r), cell) in &cells {
        let (lo, hi) = cell.ci.unwrap_or((f64::NAN, f64::NAN));
        csv.write_row(&format!("{m},{r},{},{lo},{hi}", cell.success))?;
    }

    let fmt_cell = |cell: &ReportCell| match cell.ci {
        Some((lo, hi)) => format!(
            "{:5.1} [{:.1}, {:.1}]",
            cell.success * 100.0,
            lo * 100.0,
            hi * 100.0
        ),
        None => format!("{:5.1}", cell.success * 100.0),
    };
    const CELL_W: usize = 20;
    let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
    let mut header = format!("{:width$}", "method");
    for r in &randomness_seen {
        header.push_str(&format!(" | {:>CELL_W$}", format!("success % ({r})")));
    }
    println!("{header}");
    println!("{}", "-".repeat(header.len()));
    for m in &methods {
        let mut line = format!("{m:width$}");
        for r in &randomness_seen {
            match cells.get(&(m.clone(), r.clone())) {
                Some(cell) => line.push_str(&format!(" | {:>CELL_W$}", fmt_cell(cell))),
                None => line.push_str(&format!(" | {:>CELL_W$}", "—")),
            }
        }
        println!("{line}");
    }
    Ok(())
}
