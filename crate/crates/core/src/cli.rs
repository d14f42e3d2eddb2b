//! The `sipl` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataset::{build_dataset, task_file_names, DatasetOptions, PolicyDump};
use crate::env::generate;
use crate::error::{Error, Result};
use crate::model::{build_model, validate_model};
use crate::nested::NestedSpec;
use crate::trajectory::{evaluate_policy, simulate_episode, EpisodeConfig, Expert, PolicyKind};
use crate::task::TaskParameter;

pub const THREADS_ENV: &str = "SIPL_THREADS";
pub const INDEX_FILE: &str = "index.json";
/// Initial cells per agent for generated tasks.
pub const DEFAULT_SUPPORT_SIZE: usize = 3;

#[derive(Debug, Parser)]
#[command(name = "sipl", version, about = "Sparse-interaction I-POMDP Lite planning on Tiger-grid tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate random connected Tiger-grid tasks.
    GenTasks(GenTasksArgs),
    /// Solve one task and write agent i's Q table and agent j's nested strategy.
    Solve(SolveArgs),
    /// Run one episode on a task and print its trace.
    Simulate(SimulateArgs),
    /// Build an expert-demonstration dataset.
    GenDataset(GenDatasetArgs),
    /// Evaluate a policy over a directory of tasks.
    Evaluate(EvaluateArgs),
    /// Check a task's model for inconsistencies.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
struct GenTasksArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0.25)]
    obstacle_density: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    task: PathBuf,
    /// Top reasoning level; the level distribution is uniform over 0..=level.
    #[arg(long, default_value_t = 1)]
    level: usize,
    /// Defaults to twice the grid size.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Expert,
    Random,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Expert => PolicyKind::Expert,
            PolicyArg::Random => PolicyKind::Random,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    task: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Expert)]
    policy: PolicyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenDatasetArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    episodes_per_task: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Train, valid and test fractions over tasks.
    #[arg(long, value_name = "TRAIN,VALID,TEST", value_parser = parse_split, default_value = "0.8,0.1,0.1")]
    split: [f64; 3],
}

fn parse_split(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|v| format!("expected three fractions, got {}", v.len()))
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, value_enum)]
    policy: PolicyArg,
    #[arg(long)]
    episodes: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    task: PathBuf,
}

#[derive(Debug, Serialize)]
struct IndexEntry<'a> {
    file: &'a str,
    seed: u64,
    obstacle_density: f64,
}

/// Parses `argv` (program name first) and runs the subcommand.
/// Returns 0 on success, 1 on usage errors and 2 on runtime errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn configure_threads() {
    let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) else {
        return;
    };
    // a pool may already exist when `run` is called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::GenTasks(a) => gen_tasks(a).map(|_| true),
        Command::Solve(a) => solve(a).map(|_| true),
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::GenDataset(a) => gen_dataset(a).map(|_| true),
        Command::Evaluate(a) => evaluate(a).map(|_| true),
        Command::Check(a) => check(a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn gen_tasks(a: GenTasksArgs) -> Result<()> {
    let specs = generate(a.seed, a.n, a.count, a.obstacle_density, DEFAULT_SUPPORT_SIZE)?;
    fs::create_dir_all(&a.out)?;
    let names = task_file_names(specs.len());
    for (spec, name) in specs.iter().zip(&names) {
        spec.task.save(a.out.join(name))?;
    }
    let index: Vec<IndexEntry> = specs
        .iter()
        .zip(&names)
        .map(|(s, f)| IndexEntry { file: f, seed: s.seed, obstacle_density: s.obstacle_density })
        .collect();
    write_json(&a.out.join(INDEX_FILE), &index)?;
    println!("wrote {} tasks ({}x{}, density {}) to {}", specs.len(), a.n, a.n, a.obstacle_density, a.out.display());
    Ok(())
}

/// Loads every task in `dir`, in the order given by its index file when
/// present and by file name otherwise.
pub fn load_task_dir(dir: &Path) -> Result<Vec<TaskParameter>> {
    let index = dir.join(INDEX_FILE);
    let files: Vec<PathBuf> = if index.exists() {
        let entries: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(&index)?)?;
        entries
            .iter()
            .map(|e| {
                e.get("file")
                    .and_then(|f| f.as_str())
                    .map(|f| dir.join(f))
                    .ok_or_else(|| Error::InvalidArgument(format!("{} has an entry without a file", index.display())))
            })
            .collect::<Result<_>>()?
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        files
    };
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no task files in {}", dir.display())));
    }
    files.iter().map(TaskParameter::load).collect()
}

fn solve(a: SolveArgs) -> Result<()> {
    let task = TaskParameter::load(&a.task)?;
    let spec = NestedSpec {
        top_level: a.level,
        level_dist: vec![1.0 / (a.level + 1) as f64; a.level + 1],
        horizon: a.horizon.unwrap_or(2 * task.n),
        temperature: 1.0,
    };
    spec.validate()?;
    let expert = Expert::solve(&task, &spec)?;
    PolicyDump::from_expert(&expert)?.write(&a.out)?;
    println!(
        "solved {} ({} joint states, level {}, horizon {}); policy written to {}",
        a.task.display(),
        expert.model.num_states(),
        spec.top_level,
        spec.horizon,
        a.out.display()
    );
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let task = TaskParameter::load(&a.task)?;
    let expert = Expert::solve_default(&task)?;
    let policy = PolicyKind::from(a.policy);
    let rec = simulate_episode(0, &expert, &policy, &expert.pi_j, a.seed, &EpisodeConfig::default())?;
    for (t, s) in rec.steps.iter().enumerate() {
        println!("t={t:<3} a_i={:<6} a_j={:<6} o_i={:05b}", s.a_i.name(), s.a_j.name(), s.o_i);
    }
    println!(
        "{} after {} steps, discounted return {:.4}",
        if rec.success { "success" } else { "failure" },
        rec.len(),
        rec.discounted_return
    );
    if let Some(path) = &a.json_out {
        write_json(path, &rec)?;
    }
    Ok(())
}

fn gen_dataset(a: GenDatasetArgs) -> Result<()> {
    let tasks = load_task_dir(&a.tasks)?;
    let options = DatasetOptions { split_fractions: a.split, ..Default::default() };
    let manifest = build_dataset(&tasks, a.episodes_per_task, a.seed, &a.out, &options)?;
    println!(
        "wrote {} episodes over {} tasks to {} (train/valid/test tasks: {}/{}/{})",
        manifest.num_records(),
        manifest.tasks.len(),
        a.out.display(),
        manifest.splits.train.len(),
        manifest.splits.valid.len(),
        manifest.splits.test.len()
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let tasks = load_task_dir(&a.tasks)?;
    let experts: Vec<Expert> = crate::trajectory::solve_tasks(&tasks, |t| NestedSpec::for_grid(t.n))?;
    let m = evaluate_policy(&experts, &PolicyKind::from(a.policy), a.episodes, a.seed, &EpisodeConfig::default())?;
    println!(
        "{} episodes: success {:.3} ± {:.3}, return {:.3} ± {:.3}, mean length {:.2}",
        m.episodes, m.success_rate, m.success_rate_se, m.mean_return, m.return_se, m.mean_length
    );
    if let Some(path) = &a.json_out {
        write_json(path, &m)?;
    }
    Ok(())
}

fn check(a: CheckArgs) -> Result<bool> {
    let task = TaskParameter::load(&a.task)?;
    let model = build_model(&task)?;
    let report = validate_model(&model);
    if report.is_valid() {
        println!("{}: ok ({} joint states)", a.task.display(), model.num_states());
    } else {
        for issue in &report.issues {
            println!("{issue}");
        }
        println!("{}: {} issue(s)", a.task.display(), report.issues.len());
    }
    Ok(report.is_valid())
}
