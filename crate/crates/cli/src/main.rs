//! Command-line driver for the hybrid-model simulator.
//!
//! Subcommands: `run` executes a batch of trials for one task and prints a
//! CSV summary, `sweep` repeats that along one parameter axis, `audit`
//! measures the exact privacy loss of the shipped randomizers, `gen` writes
//! an instance file with its ground-truth sidecar, and `validate` checks a
//! transcript dump against an interaction pattern.
//!
//! Every command is deterministic given a seed. The seed is resolved from
//! `--seed`, then the config file, then the `HYBRIDDP_SEED` environment
//! variable, then a fixed default, in that order. Trial `t` of a batch runs
//! at `seed + t`, so batches with the same base seed reuse the same
//! instances point by point.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;
use std::{env, fs};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, RngCore};

use hybriddp_core::audit::{standard_audit_rows, AUDIT_CSV_HEADER};
use hybriddp_core::datagen::{self, Marginal, TaskInstance};
use hybriddp_core::fmt_f64;
use hybriddp_core::tasks::{default_pattern, default_select_mu, run_trial, TaskParams, TASK_NAMES};
use hybriddp_core::{validate_pattern, InteractionPattern, PatternKind, RngStream, Transcript};

/// Column order every `run` and `sweep` invocation prints.
const CSV_HEADER: &str =
    "task,b,c,d,m,n,eps,alpha,alpha_prime,beta,pattern,trials,successes,rate,mean_err,ms";

/// Seed used when neither flags, config, nor environment provide one.
const DEFAULT_SEED: u64 = 0;

/// Batch size used when no trial count is given.
const DEFAULT_TRIALS: u64 = 20;

#[derive(Parser)]
#[command(name = "hybriddp", version, about = "Hybrid-model task simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of trials for one task and print a CSV summary row.
    Run(ExperimentArgs),
    /// Run one batch per value of a single swept parameter.
    Sweep(SweepArgs),
    /// Measure the exact privacy loss of the shipped randomizers.
    Audit(AuditArgs),
    /// Write an instance file and its ground-truth sidecar.
    Gen(ExperimentArgs),
    /// Check a transcript dump against an interaction pattern.
    Validate(ValidateArgs),
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Task name from the registry.
    #[arg(long)]
    task: Option<String>,
    /// Config file of `key = value` lines; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Threshold bit width.
    #[arg(long)]
    b: Option<u32>,
    /// Parity width (log2 of the concept count).
    #[arg(long)]
    c: Option<u32>,
    /// Coordinate count for selection-style tasks.
    #[arg(long)]
    d: Option<u32>,
    /// Curator record count; 0 re-derives it from the task's formula.
    #[arg(long)]
    m: Option<u64>,
    /// Agent count; 0 re-derives it from the task's formula.
    #[arg(long)]
    n: Option<u64>,
    /// Per-party privacy budget.
    #[arg(long)]
    eps: Option<f64>,
    /// Primary accuracy target.
    #[arg(long)]
    alpha: Option<f64>,
    /// Estimation accuracy target for select-estimate.
    #[arg(long)]
    alpha_prime: Option<f64>,
    /// Failure probability target.
    #[arg(long)]
    beta: Option<f64>,
    /// Trials in the batch; 0 prints the header with no rows.
    #[arg(long)]
    trials: Option<u64>,
    /// Base seed for the batch.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the output to this file (`gen` writes the instance here).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Expected interaction pattern name; the command fails on a mismatch.
    #[arg(long)]
    pattern: Option<String>,
    /// Exit nonzero unless every row's success rate reaches this value.
    #[arg(long)]
    require_rate: Option<f64>,
    /// Exit nonzero unless every row's mean error stays at or below this.
    #[arg(long)]
    require_mean_err_le: Option<f64>,
    /// Accept an alpha_prime at or above alpha on select-estimate.
    #[arg(long)]
    allow_wide_alpha_prime: bool,
    /// Write the first trial's transcript dump to this file.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Parameter to vary: one of b, c, d, m, n, eps, alpha, alpha_prime, beta.
    #[arg(long)]
    axis: String,
    /// Comma-separated values for the swept parameter.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
}

#[derive(Args)]
struct AuditArgs {
    /// Comma-separated budgets to audit at.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
    eps: Vec<f64>,
    /// Domain size for the frequency-oracle encoder (power of two).
    #[arg(long, default_value_t = 8)]
    domain: u64,
    /// Also write the CSV to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Transcript dump to check.
    #[arg(long)]
    file: PathBuf,
    /// Pattern name to check against.
    #[arg(long)]
    pattern: String,
    /// Round ceiling for the check.
    #[arg(long, default_value_t = 64)]
    max_rounds: u32,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Audit(args) => cmd_audit(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

/// Parsed `key = value` config file; `#` starts a comment anywhere on a line.
#[derive(Default)]
struct FileConfig {
    values: BTreeMap<String, String>,
}

const CONFIG_KEYS: [&str; 16] = [
    "task",
    "b",
    "c",
    "d",
    "m",
    "n",
    "eps",
    "alpha",
    "alpha_prime",
    "beta",
    "trials",
    "seed",
    "pattern",
    "out",
    "require_rate",
    "require_mean_err_le",
];

fn load_config(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut values = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected `key = value`, got `{raw}`", path.display(), idx + 1);
        };
        let key = key.trim();
        let value = value.trim();
        if !CONFIG_KEYS.contains(&key) {
            bail!(
                "{}:{}: unknown key `{key}` (known: {})",
                path.display(),
                idx + 1,
                CONFIG_KEYS.join(", ")
            );
        }
        if value.is_empty() {
            bail!("{}:{}: key `{key}` has an empty value", path.display(), idx + 1);
        }
        values.insert(key.to_string(), value.to_string());
    }
    Ok(FileConfig { values })
}

impl FileConfig {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key `{key}` has invalid value `{raw}`: {e}")),
        }
    }
}

/// A fully resolved experiment: flags merged over config over defaults.
/// `base.m` and `base.n` stay 0 for tasks with sizing formulas unless the
/// user pinned them, so sweeps re-derive sizes at every point.
struct Experiment {
    task: String,
    base: TaskParams,
    trials: u64,
    seed: u64,
    out: Option<PathBuf>,
    pattern: Option<String>,
    require_rate: Option<f64>,
    require_mean_err_le: Option<f64>,
    allow_wide: bool,
    transcript: Option<PathBuf>,
}

fn resolve(args: &ExperimentArgs) -> Result<Experiment> {
    let cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => FileConfig::default(),
    };
    let task = args
        .task
        .clone()
        .or(cfg.get::<String>("task")?)
        .ok_or_else(|| anyhow!("no task given; pass --task or a config with `task = ...`"))?;
    if !TASK_NAMES.contains(&task.as_str()) {
        bail!("unknown task `{task}` (registered: {})", TASK_NAMES.join(", "));
    }

    let mut base = TaskParams::defaults_for(&task)?;
    if let Some(b) = args.b.or(cfg.get("b")?) {
        base.b = b;
    }
    if let Some(c) = args.c.or(cfg.get("c")?) {
        base.c = c;
    }
    if let Some(d) = args.d.or(cfg.get("d")?) {
        base.d = d;
    }
    if let Some(eps) = args.eps.or(cfg.get("eps")?) {
        base.eps = eps;
    }
    if let Some(alpha) = args.alpha.or(cfg.get("alpha")?) {
        base.alpha = alpha;
    }
    if let Some(alpha_prime) = args.alpha_prime.or(cfg.get("alpha_prime")?) {
        base.alpha_prime = alpha_prime;
    }
    if let Some(beta) = args.beta.or(cfg.get("beta")?) {
        base.beta = beta;
    }
    base.m = match args.m.or(cfg.get("m")?) {
        Some(m) => m,
        None if has_m_formula(&task) => 0,
        None => base.m,
    };
    base.n = match args.n.or(cfg.get("n")?) {
        Some(n) => n,
        None if has_n_formula(&task) => 0,
        None => base.n,
    };

    let seed = match args.seed.or(cfg.get("seed")?) {
        Some(seed) => seed,
        None => match env::var("HYBRIDDP_SEED") {
            Ok(raw) => raw
                .parse()
                .map_err(|e| anyhow!("HYBRIDDP_SEED has invalid value `{raw}`: {e}"))?,
            Err(_) => DEFAULT_SEED,
        },
    };

    Ok(Experiment {
        task,
        base,
        trials: args.trials.or(cfg.get("trials")?).unwrap_or(DEFAULT_TRIALS),
        seed,
        out: args.out.clone().or(cfg.get::<PathBuf>("out")?),
        pattern: args.pattern.clone().or(cfg.get("pattern")?),
        require_rate: args.require_rate.or(cfg.get("require_rate")?),
        require_mean_err_le: args.require_mean_err_le.or(cfg.get("require_mean_err_le")?),
        allow_wide: args.allow_wide_alpha_prime,
        transcript: args.transcript.clone(),
    })
}

/// Tasks whose curator size has a closed-form default.
fn has_m_formula(task: &str) -> bool {
    matches!(task, "parity-thresh" | "concat" | "one-out" | "pcs")
}

/// Tasks whose agent count has a closed-form default.
fn has_n_formula(task: &str) -> bool {
    matches!(task, "parity-thresh" | "concat" | "one-out" | "pcs" | "learn-to-select")
}

/// One completed batch, ready to print.
struct RowStats {
    params: TaskParams,
    pattern: &'static str,
    trials: u64,
    successes: u64,
    rate: f64,
    mean_err: f64,
    ms: u128,
    first_transcript: Option<String>,
}

fn csv_row(task: &str, s: &RowStats) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        task,
        s.params.b,
        s.params.c,
        s.params.d,
        s.params.m,
        s.params.n,
        fmt_f64(s.params.eps),
        fmt_f64(s.params.alpha),
        fmt_f64(s.params.alpha_prime),
        fmt_f64(s.params.beta),
        s.pattern,
        s.trials,
        s.successes,
        fmt_f64(s.rate),
        fmt_f64(s.mean_err),
        s.ms
    )
}

/// Completes the sizes of one parameter point and runs its batch.
/// Returns `None` when the batch is empty.
fn run_point(exp: &Experiment, raw: &TaskParams) -> Result<Option<RowStats>> {
    let mut params = *raw;
    params
        .fill_derived_sizes(&exp.task)
        .map_err(|e| anyhow!("{e}"))?;
    params
        .validate(&exp.task, exp.allow_wide)
        .map_err(|e| anyhow!("{e}"))?;
    let pattern = default_pattern(&exp.task).name();
    if let Some(want) = &exp.pattern {
        if want != pattern {
            bail!("task `{}` runs under the `{pattern}` pattern, not `{want}`", exp.task);
        }
    }
    if exp.trials == 0 {
        return Ok(None);
    }
    let start = Instant::now();
    let mut successes = 0u64;
    let mut err_sum = 0.0f64;
    let mut first_transcript = None;
    for t in 0..exp.trials {
        let outcome = run_trial(&exp.task, &params, exp.seed.wrapping_add(t))
            .map_err(|e| anyhow!("trial {t} failed: {e}"))?;
        if t == 0 {
            first_transcript = outcome.transcript.as_ref().map(Transcript::dump);
        }
        successes += u64::from(outcome.success);
        err_sum += outcome.error;
    }
    Ok(Some(RowStats {
        params,
        pattern,
        trials: exp.trials,
        successes,
        rate: successes as f64 / exp.trials as f64,
        mean_err: err_sum / exp.trials as f64,
        ms: start.elapsed().as_millis(),
        first_transcript,
    }))
}

/// Exit gate: thresholds hold on every row, and a threshold over an empty
/// batch counts as unmet.
fn gate_ok(exp: &Experiment, rows: &[RowStats]) -> bool {
    if exp.require_rate.is_none() && exp.require_mean_err_le.is_none() {
        return true;
    }
    if rows.is_empty() {
        return false;
    }
    rows.iter().all(|s| {
        exp.require_rate.is_none_or(|r| s.rate >= r)
            && exp.require_mean_err_le.is_none_or(|e| s.mean_err <= e)
    })
}

fn emit(csv: &str, out: Option<&Path>) -> Result<()> {
    print!("{csv}");
    if let Some(path) = out {
        fs::write(path, csv)
            .with_context(|| format!("cannot write output file {}", path.display()))?;
    }
    Ok(())
}

fn cmd_run(args: ExperimentArgs) -> Result<ExitCode> {
    let exp = resolve(&args)?;
    let stats = run_point(&exp, &exp.base)?;
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    if let Some(s) = &stats {
        csv.push_str(&csv_row(&exp.task, s));
        csv.push('\n');
    }
    emit(&csv, exp.out.as_deref())?;
    if let Some(path) = &exp.transcript {
        let dump = stats
            .as_ref()
            .and_then(|s| s.first_transcript.as_deref())
            .ok_or_else(|| anyhow!("task `{}` produced no transcript to write", exp.task))?;
        fs::write(path, dump)
            .with_context(|| format!("cannot write transcript file {}", path.display()))?;
    }
    let rows: Vec<RowStats> = stats.into_iter().collect();
    Ok(if gate_ok(&exp, &rows) { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

/// The swept axes; each checks membership and assigns one parsed value.
fn assign_axis(params: &mut TaskParams, axis: &str, raw: &str) -> Result<f64> {
    fn parse<T: FromStr>(axis: &str, raw: &str) -> Result<T>
    where
        T::Err: Display,
    {
        raw.parse()
            .map_err(|e| anyhow!("sweep value `{raw}` is invalid for axis `{axis}`: {e}"))
    }
    Ok(match axis {
        "b" => {
            params.b = parse(axis, raw)?;
            f64::from(params.b)
        }
        "c" => {
            params.c = parse(axis, raw)?;
            f64::from(params.c)
        }
        "d" => {
            params.d = parse(axis, raw)?;
            f64::from(params.d)
        }
        "m" => {
            params.m = parse(axis, raw)?;
            params.m as f64
        }
        "n" => {
            params.n = parse(axis, raw)?;
            params.n as f64
        }
        "eps" => {
            params.eps = parse(axis, raw)?;
            params.eps
        }
        "alpha" => {
            params.alpha = parse(axis, raw)?;
            params.alpha
        }
        "alpha_prime" => {
            params.alpha_prime = parse(axis, raw)?;
            params.alpha_prime
        }
        "beta" => {
            params.beta = parse(axis, raw)?;
            params.beta
        }
        other => bail!("unknown sweep axis `{other}`"),
    })
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let exp = resolve(&args.experiment)?;
    let mut rows = Vec::new();
    for raw in &args.values {
        let mut point = exp.base;
        let key = assign_axis(&mut point, &args.axis, raw)?;
        if let Some(stats) = run_point(&exp, &point)? {
            rows.push((key, stats));
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for (_, stats) in &rows {
        csv.push_str(&csv_row(&exp.task, stats));
        csv.push('\n');
    }
    emit(&csv, exp.out.as_deref())?;
    let rows: Vec<RowStats> = rows.into_iter().map(|(_, s)| s).collect();
    Ok(if gate_ok(&exp, &rows) { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_audit(args: AuditArgs) -> Result<ExitCode> {
    if args.eps.iter().any(|&e| e <= 0.0) {
        bail!("audit budgets must be positive");
    }
    if !args.domain.is_power_of_two() {
        bail!("audit domain must be a power of two, got {}", args.domain);
    }
    let rows = standard_audit_rows(&args.eps, args.domain);
    let mut csv = String::from(AUDIT_CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    emit(&csv, args.out.as_deref())?;
    Ok(if rows.iter().all(|r| r.pass) { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

/// Builds the instance the `run` subcommand would draw at this seed, so a
/// generated file reproduces trial 0 of the matching batch.
fn build_instance(task: &str, p: &TaskParams, seed: u64) -> Result<TaskInstance> {
    let instance = match task {
        "parity-thresh" | "concat" => {
            let mut targets = RngStream::for_datagen(seed, 90);
            let k_star = targets.random_range(0..(1u64 << p.c));
            let t_star = targets.random_range(0..(1u64 << p.b));
            if task == "parity-thresh" {
                datagen::gen_parity_thresh(
                    p.b,
                    p.c,
                    p.m,
                    p.n,
                    k_star,
                    t_star,
                    Marginal::Uniform,
                    seed,
                )
            } else {
                datagen::gen_concat(p.b, p.c, p.m, p.n, k_star, t_star, Marginal::Uniform, seed)
            }
        }
        "one-out" => datagen::gen_one_out(p.d, p.c, p.m, p.n, seed),
        "pcs" => datagen::gen_pcs(p.c, p.m, p.n, seed),
        "select-estimate" => datagen::gen_select(p.d, &default_select_mu(p.d), p.m, p.n, seed),
        "hypo-reduce" => {
            let mut meta = RngStream::for_datagen(seed, 93);
            let j = (meta.next_u64() & 1) as u8;
            datagen::gen_hypo(p.alpha, j, p.m, p.n, seed)
        }
        other => bail!("task `{other}` draws its sample in-process and has no instance file"),
    };
    instance.map_err(|e| anyhow!("{e}"))
}

fn cmd_gen(args: ExperimentArgs) -> Result<ExitCode> {
    let exp = resolve(&args)?;
    let path = exp
        .out
        .clone()
        .ok_or_else(|| anyhow!("gen needs an instance path; pass --out or config `out`"))?;
    let mut params = exp.base;
    params
        .fill_derived_sizes(&exp.task)
        .map_err(|e| anyhow!("{e}"))?;
    params
        .validate(&exp.task, exp.allow_wide)
        .map_err(|e| anyhow!("{e}"))?;
    let instance = build_instance(&exp.task, &params, exp.seed)?;
    instance
        .write_files(&path)
        .map_err(|e| anyhow!("cannot write {}: {e}", path.display()))?;
    println!("wrote {} and {}", path.display(), datagen::truth_path(&path).display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.file)
        .with_context(|| format!("cannot read transcript file {}", args.file.display()))?;
    let transcript = Transcript::parse(&text).map_err(|e| anyhow!("{e}"))?;
    let kind = PatternKind::from_name(&args.pattern).ok_or_else(|| {
        anyhow!(
            "unknown pattern `{}` (known: non-interactive, local-then-curator, \
             curator-then-local, general)",
            args.pattern
        )
    })?;
    let pattern = InteractionPattern { kind, max_rounds: args.max_rounds };
    if validate_pattern(&transcript, pattern) {
        println!("valid");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("invalid");
        Ok(ExitCode::from(1))
    }
}
