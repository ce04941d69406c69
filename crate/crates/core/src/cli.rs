//! Command-line harness behind the `branchrl` binary.
//!
//! Exit codes: 0 success, 1 validation or check failure, 2 input error,
//! 3 exploration stopped at the episode cap.
//!
//! Output files are deterministic for fixed arguments; wall-clock timings go
//! to stdout only. Replication `i` of `run-rm` uses seed `seed ^ i`. CSV
//! floats use `{:.16e}` (17 significant digits) and LF line endings.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::baselines::{run_epsilon_greedy, run_euler_adaptation};
use crate::branchrfe::{certify, explore, plan, RewardFree, RfeConfig, DEFAULT_MAX_EPISODES};
use crate::branchvi::{run_rm, RmConfig, RmTrace};
use crate::diagnostics::{self, Preset};
use crate::error::{Error, Result};
use crate::instances;
use crate::model::{load_reward_table, BranchingMdp, PolicyTable};
use crate::planner::{optimal_values, policy_value};
use crate::stats::Moments;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_CAP: u8 = 3;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "BRANCHRL_THREADS";

#[derive(Parser, Debug)]
#[command(name = "branchrl", version, about = "Learning and planning in branching MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Branchvi,
    Euler,
    Egreedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    /// The six-state experiment instance.
    Experiment,
    /// Bandit-state hard instance with trigger bound `1/m`.
    LowerBound,
    /// The same family with trigger probability `qbar > 1/m`.
    Relaxed,
    /// Uniformly random model satisfying the trigger bound.
    Random,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a model file and print every violation.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Print the optimal value; optionally evaluate a policy file.
    Plan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Where to write the optimal policy.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regret minimization with replications.
    RunRm {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        algo: Algo,
        #[arg(long = "K")]
        episodes: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1)]
        runs: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-node exploration probability of `egreedy`.
        #[arg(long, default_value_t = 0.01)]
        explore: f64,
        /// Trace CSV; the summary goes next to it with a `.summary.csv` suffix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reward-free exploration, then planning for each supplied reward table.
    RunRfe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_EPISODES)]
        max_episodes: u64,
        /// Estimated model file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reward: Vec<PathBuf>,
    },
    /// Numerical checks of the structural identities.
    CheckLemmas {
        #[arg(long, value_parser = parse_preset, required_unless_present = "model")]
        preset: Option<Preset>,
        /// Check a single model instead of a preset.
        #[arg(long, conflicts_with = "preset")]
        model: Option<PathBuf>,
        /// Policy for `--model`; the optimal policy if omitted.
        #[arg(long, requires = "model")]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 200_000)]
        rollouts: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated instance to a model file.
    Gen {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long = "S", default_value_t = 6)]
        num_states: usize,
        #[arg(long = "N", default_value_t = 10)]
        num_actions: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long = "H", default_value_t = 6)]
        horizon: usize,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, default_value_t = 0.75)]
        qbar: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure of a subcommand with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<u8, Failure>;

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only if a global pool already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Validate { model } => cmd_validate(&model),
        Command::Plan { model, policy, out } => cmd_plan(&model, policy.as_deref(), out.as_deref()),
        Command::RunRm {
            model,
            algo,
            episodes,
            delta,
            runs,
            seed,
            explore,
            out,
        } => cmd_run_rm(&model, algo, episodes, delta, runs, seed, explore, &out),
        Command::RunRfe {
            model,
            eps,
            delta,
            seed,
            max_episodes,
            out,
            reward,
        } => cmd_run_rfe(&model, eps, delta, seed, max_episodes, &out, &reward),
        Command::CheckLemmas {
            preset,
            model,
            policy,
            rollouts,
            seed,
            out,
        } => cmd_check_lemmas(preset, model.as_deref(), policy.as_deref(), rollouts, seed, out.as_deref()),
        Command::Gen {
            kind,
            num_states,
            num_actions,
            m,
            horizon,
            eta,
            qbar,
            seed,
            out,
        } => cmd_gen(kind, num_states, num_actions, m, horizon, eta, qbar, seed, &out),
    }
}

fn input_error(path: &Path, e: Error) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: format!("{}: {e}", path.display()),
    }
}

/// Loads a model and refuses it if validation fails.
fn load_valid(path: &Path) -> std::result::Result<BranchingMdp, Failure> {
    let mdp = BranchingMdp::load(path).map_err(|e| input_error(path, e))?;
    let report = mdp.validate();
    if !report.is_clean() {
        let mut message = format!("{} failed validation:", path.display());
        for v in &report.violations {
            let _ = write!(message, "\n  {v}");
        }
        return Err(Failure {
            code: EXIT_FAILED,
            message,
        });
    }
    Ok(mdp)
}

fn write_file(path: &Path, text: &str) -> std::result::Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| input_error(path, e.into()))
}

fn cmd_validate(path: &Path) -> CmdResult {
    let mdp = BranchingMdp::load(path).map_err(|e| input_error(path, e))?;
    let report = mdp.validate();
    if report.is_clean() {
        println!("ok: S={} N={} m={} H={}", mdp.num_states, mdp.num_actions, mdp.m, mdp.horizon);
        return Ok(EXIT_OK);
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    Ok(EXIT_FAILED)
}

fn cmd_plan(model: &Path, policy: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let mdp = load_valid(model)?;
    let (vstar, best) = optimal_values(&mdp);
    let v1 = vstar.get(1, mdp.initial);
    println!("optimal_value {v1:.16e}");
    if let Some(out) = out {
        let mut text = best.to_json()?;
        text.push('\n');
        write_file(out, &text)?;
    }
    if let Some(path) = policy {
        let text = std::fs::read_to_string(path).map_err(|e| input_error(path, e.into()))?;
        let pol = PolicyTable::from_json(&text).map_err(|e| input_error(path, e))?;
        pol.check(&mdp).map_err(|e| input_error(path, e))?;
        let v = policy_value(&mdp, &pol).get(1, mdp.initial);
        println!("policy_value {v:.16e}");
        println!("gap {:.16e}", v1 - v);
    }
    Ok(EXIT_OK)
}

/// `trace.csv` -> `trace.summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.summary.csv"))
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

/// Per-run trace rows, runs in order.
pub fn trace_csv(traces: &[RmTrace]) -> String {
    let mut s = String::from("run,episode,inst_regret,cum_regret,vbar1,vlow1\n");
    for (run, t) in traces.iter().enumerate() {
        for (k, e) in t.episodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "{run},{},{:.16e},{:.16e},{},{}",
                k + 1,
                e.inst_regret,
                e.cum_regret,
                opt_cell(e.vbar1),
                opt_cell(e.vlow1)
            );
        }
    }
    s
}

/// Per-episode mean and standard error across runs.
pub fn summary_csv(traces: &[RmTrace]) -> String {
    let mut s = String::from("episode,mean_inst_regret,stderr_inst_regret,mean_cum_regret,stderr_cum_regret\n");
    let k = traces.first().map_or(0, |t| t.episodes.len());
    for i in 0..k {
        let (mut inst, mut cum) = (Moments::default(), Moments::default());
        for t in traces {
            inst.push(t.episodes[i].inst_regret);
            cum.push(t.episodes[i].cum_regret);
        }
        let _ = writeln!(
            s,
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            i + 1,
            inst.mean(),
            inst.stderr(),
            cum.mean(),
            cum.stderr()
        );
    }
    s
}

/// Runs `runs` replications of `algo`; run `i` uses seed `seed ^ i`.
pub fn replicate(
    mdp: &BranchingMdp,
    algo: Algo,
    episodes: usize,
    delta: f64,
    runs: u64,
    seed: u64,
    explore: f64,
) -> Result<Vec<RmTrace>> {
    RmConfig::new(episodes, delta, seed)?;
    if algo == Algo::Egreedy && !(0.0..=1.0).contains(&explore) {
        return Err(Error::InvalidParameter(format!("explore={explore} outside [0, 1]")));
    }
    (0..runs)
        .into_par_iter()
        .map(|i| {
            let cfg = RmConfig::new(episodes, delta, seed ^ i)?;
            match algo {
                Algo::Branchvi => Ok(run_rm(mdp, &cfg)),
                Algo::Euler => Ok(run_euler_adaptation(mdp, &cfg)),
                Algo::Egreedy => run_epsilon_greedy(mdp, &cfg, explore),
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_run_rm(
    model: &Path,
    algo: Algo,
    episodes: usize,
    delta: f64,
    runs: u64,
    seed: u64,
    explore: f64,
    out: &Path,
) -> CmdResult {
    let mdp = load_valid(model)?;
    if runs == 0 {
        return Err(Error::InvalidParameter("runs must be at least 1".into()).into());
    }
    let start = Instant::now();
    let traces = replicate(&mdp, algo, episodes, delta, runs, seed, explore)?;
    let secs = start.elapsed().as_secs_f64();
    write_file(out, &trace_csv(&traces))?;
    write_file(&summary_path(out), &summary_csv(&traces))?;
    let mut cum = Moments::default();
    traces.iter().for_each(|t| cum.push(t.cumulative_regret()));
    println!(
        "algo={algo:?} runs={runs} K={episodes} mean_cum_regret={:.6} stderr={:.6} wall_seconds={secs:.2}",
        cum.mean(),
        cum.stderr()
    );
    Ok(EXIT_OK)
}

fn cmd_run_rfe(
    model: &Path,
    eps: f64,
    delta: f64,
    seed: u64,
    max_episodes: u64,
    out: &Path,
    rewards: &[PathBuf],
) -> CmdResult {
    let mdp = load_valid(model)?;
    let cfg = RfeConfig::new(eps, delta, seed)?.with_max_episodes(max_episodes);
    let start = Instant::now();
    let res = explore(&mdp, &cfg);
    let secs = start.elapsed().as_secs_f64();
    println!(
        "stopped={} episodes_used={} b1={:.16e} wall_seconds={secs:.2}",
        res.stopped, res.episodes_used, res.b1
    );
    if !res.stopped {
        eprintln!("exploration hit the cap of {max_episodes} episodes");
        return Ok(EXIT_CAP);
    }
    let estimated = res.estimated_mdp(&RewardFree::new(&mdp));
    estimated.save(out).map_err(|e| input_error(out, e))?;
    let mut all_ok = true;
    for path in rewards {
        let r = load_reward_table(path, mdp.num_states, mdp.num_actions).map_err(|e| input_error(path, e))?;
        let pol = plan(&estimated, &r).map_err(|e| input_error(path, e))?;
        let gap = certify(&mdp, &pol, &r).map_err(|e| input_error(path, e))?;
        let ok = gap <= eps;
        all_ok &= ok;
        println!("reward={} gap={gap:.16e} within_eps={ok}", path.display());
    }
    Ok(if all_ok { EXIT_OK } else { EXIT_FAILED })
}

fn cmd_check_lemmas(
    preset: Option<Preset>,
    model: Option<&Path>,
    policy: Option<&Path>,
    rollouts: u64,
    seed: u64,
    out: Option<&Path>,
) -> CmdResult {
    let records = match (preset, model) {
        (Some(p), _) => diagnostics::run_preset(p, rollouts, seed)?,
        (None, Some(path)) => {
            let mdp = load_valid(path)?;
            let pol = match policy {
                Some(pp) => {
                    let text = std::fs::read_to_string(pp).map_err(|e| input_error(pp, e.into()))?;
                    let pol = PolicyTable::from_json(&text).map_err(|e| input_error(pp, e))?;
                    pol.check(&mdp).map_err(|e| input_error(pp, e))?;
                    pol
                }
                None => optimal_values(&mdp).1,
            };
            diagnostics::model_report(&mdp, &pol, rollouts, seed)?
        }
        (None, None) => unreachable!("clap requires one of --preset and --model"),
    };
    let mut text = String::new();
    for r in &records {
        let _ = writeln!(text, "{r}");
    }
    print!("{text}");
    if let Some(out) = out {
        write_file(out, &text)?;
    }
    let failed = records.iter().filter(|r| !r.pass).count();
    println!("checks={} failed={failed}", records.len());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILED })
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen(
    kind: GenKind,
    num_states: usize,
    num_actions: usize,
    m: usize,
    horizon: usize,
    eta: f64,
    qbar: f64,
    seed: u64,
    out: &Path,
) -> CmdResult {
    let mdp = match kind {
        GenKind::Experiment => instances::experiment_instance(num_actions),
        GenKind::LowerBound => instances::regret_lb_instance(num_states, num_actions, m, horizon, eta, seed)?.mdp,
        GenKind::Relaxed => instances::relaxed_instance(qbar, num_states, num_actions, m, horizon, eta, seed)?.mdp,
        GenKind::Random => instances::random_instance(num_states, num_actions, m, horizon, seed)?,
    };
    mdp.save(out).map_err(|e| input_error(out, e))?;
    println!("wrote {} (S={} N={} m={} H={})", out.display(), mdp.num_states, mdp.num_actions, mdp.m, mdp.horizon);
    Ok(EXIT_OK)
}
