//! Command-line front end for the dpow crates.
//!
//! Four subcommands: `mine-bench` (solo vs sharded mining benchmark),
//! `pbft-table` (verifier verdict grid), `attack-prob` (security formulas),
//! and `simulate` (seeded safety campaigns with trace record/replay).
//! Every file the tool writes gets a sibling `*.manifest.json` naming the
//! command, the fully resolved config, and the seed, so any output can be
//! regenerated from the manifest alone.
//!
//! Exit codes: 0 success, 1 protocol or safety failure, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dpow_core::mining::collision_probability;
use dpow_core::report::{self, AttackProbRow};
use dpow_core::security::{
    monte_carlo_double_spend, p_att, pf_chernoff_bound, pf_exact, ps_double_spend, AttackScenario,
};
use dpow_core::sim::{
    replay_trace, run_experiment_1, run_experiment_2, run_safety_campaign, write_trace,
    DifficultyPolicy, SimConfig, TraceError, TraceKind,
};

#[derive(Parser)]
#[command(
    name = "dpow",
    version,
    about = "Sharded proof-of-work consensus: benchmarks, verdict grids, attack probabilities"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Benchmark k solo mining servers against one server sharding across k miners
    MineBench(MineBenchArgs),
    /// Print the verdict grid for verifier groups facing conspiring subsets
    PbftTable(PbftTableArgs),
    /// Evaluate collision and double-spend probabilities, optionally with Monte Carlo
    AttackProb(AttackProbArgs),
    /// Run a seeded consensus safety campaign from a JSON config
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct MineBenchArgs {
    /// JSON config file; explicit flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Miners per arm
    #[arg(long)]
    miners: Option<u32>,
    /// Hash puzzles per arm
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fix every trial at this difficulty instead of the log-uniform band (accepts 2^k)
    #[arg(long, value_parser = parse_u64_pow2)]
    difficulty: Option<u64>,
    /// Hashes per simulated second per miner
    #[arg(long)]
    hash_rate: Option<f64>,
    /// Hash for real and measure wall-clock time (hash counts stay seeded,
    /// times become machine-dependent)
    #[arg(long)]
    real_hash: bool,
    /// Per-trial CSV output path
    #[arg(long, default_value = "mine_bench.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct PbftTableArgs {
    /// JSON config file; explicit flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Verdict columns per group (default 10)
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the grid as CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttackProbArgs {
    /// Coinbase collision mode: probability that m random tx roots collide
    #[arg(long)]
    collision: bool,
    /// Trial count m for collision mode (accepts 2^k); omit for the standard sweep
    #[arg(long, value_parser = parse_f64_pow2)]
    m: Option<f64>,
    /// Total parties N
    #[arg(long = "N", value_parser = parse_u64_pow2)]
    total: Option<u64>,
    /// Corrupted parties T
    #[arg(long = "T", value_parser = parse_u64_pow2)]
    corrupt: Option<u64>,
    /// Verifier group size M
    #[arg(long = "M", default_value = "12", value_parser = parse_u64_pow2)]
    verifiers: u64,
    /// Confirmations the victim waits for
    #[arg(long, default_value = "6", value_parser = parse_u64_pow2)]
    z: u64,
    /// Sweep N in {30,90,300}, T/N in {0.1..0.6}, M in {4,10,30,100} instead
    /// of a single scenario
    #[arg(long, conflicts_with_all = ["total", "corrupt"])]
    grid: bool,
    /// Add Monte Carlo estimate and stderr columns with this many trials (accepts 2^k)
    #[arg(long, value_parser = parse_u64_pow2)]
    mc_trials: Option<u64>,
    /// Seed for the Monte Carlo columns
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the CSV here as well as to stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation config (required unless --replay is given)
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of randomized runs in the campaign
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    drop_rate: Option<f64>,
    /// Campaign report output path (JSON)
    #[arg(long, default_value = "campaign_report.json")]
    out: PathBuf,
    /// Replayable event trace path, written on failure or with --record
    #[arg(long, default_value = "campaign.trace")]
    trace: PathBuf,
    /// Write the event trace even when the campaign passes
    #[arg(long)]
    record: bool,
    /// Verify a previously recorded trace instead of running a campaign
    #[arg(long, value_name = "TRACE", conflicts_with = "config")]
    replay: Option<PathBuf>,
}

/// Integer flag value, either decimal or `2^k`.
fn parse_u64_pow2(s: &str) -> Result<u64, String> {
    if let Some(exp) = s.strip_prefix("2^") {
        let k: u32 = exp
            .parse()
            .map_err(|_| format!("bad exponent in {s:?}"))?;
        if k >= 64 {
            return Err(format!("2^{k} does not fit in 64 bits"));
        }
        Ok(1u64 << k)
    } else {
        s.parse()
            .map_err(|_| format!("expected an integer or 2^k, got {s:?}"))
    }
}

/// Like [`parse_u64_pow2`] but for counts beyond 64 bits, e.g. `2^128`.
fn parse_f64_pow2(s: &str) -> Result<f64, String> {
    let v = if let Some(exp) = s.strip_prefix("2^") {
        let k: i32 = exp
            .parse()
            .map_err(|_| format!("bad exponent in {s:?}"))?;
        if !(0..=1023).contains(&k) {
            return Err(format!("2^{k} is out of range"));
        }
        2f64.powi(k)
    } else {
        s.parse::<f64>()
            .map_err(|_| format!("expected a number or 2^k, got {s:?}"))?
    };
    if !v.is_finite() || v < 0.0 {
        return Err(format!("{s:?} is not a usable trial count"));
    }
    Ok(v)
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    config: serde_json::Value,
    seed: u64,
    outputs: Vec<String>,
    tool_version: &'static str,
}

/// Drop a `*.manifest.json` next to the first output file.
fn write_manifest(
    command: &'static str,
    config: serde_json::Value,
    seed: u64,
    outputs: &[&Path],
) -> Result<PathBuf> {
    let manifest = RunManifest {
        command,
        config,
        seed,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        tool_version: env!("CARGO_PKG_VERSION"),
    };
    let path = outputs[0].with_extension("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn load_config(path: Option<&Path>) -> Result<SimConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(SimConfig::default()),
    }
}

fn cmd_mine_bench(a: MineBenchArgs) -> Result<ExitCode> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(m) = a.miners {
        cfg.topology.miners = m;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.difficulty {
        cfg.difficulty = DifficultyPolicy::Fixed { difficulty: d };
    }
    if let Some(h) = a.hash_rate {
        cfg.hash_rate = h;
    }
    if a.real_hash {
        cfg.real_hash = true;
    }
    cfg.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;

    let (records, summary) = run_experiment_1(&cfg);
    fs::write(&a.out, report::exp1_csv(&records))
        .with_context(|| format!("writing {}", a.out.display()))?;
    let manifest = write_manifest("mine-bench", serde_json::to_value(&cfg)?, cfg.seed, &[&a.out])?;

    print!("{}", report::exp1_summary_text(&summary));
    println!("per-trial CSV: {}", a.out.display());
    println!("manifest: {}", manifest.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_pbft_table(a: PbftTableArgs) -> Result<ExitCode> {
    let from_file = a.config.is_some();
    let mut cfg = load_config(a.config.as_deref())?;
    if !from_file {
        cfg.trials = 10;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;

    let rows = run_experiment_2(&cfg);
    print!("{}", report::exp2_grid_text(&rows));
    if let Some(out) = &a.out {
        fs::write(out, report::exp2_grid_csv(&rows))
            .with_context(|| format!("writing {}", out.display()))?;
        let manifest =
            write_manifest("pbft-table", serde_json::to_value(&cfg)?, cfg.seed, &[out])?;
        println!("CSV: {}", out.display());
        println!("manifest: {}", manifest.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_attack_prob(a: AttackProbArgs) -> Result<ExitCode> {
    if a.collision {
        let ms: Vec<f64> = match a.m {
            Some(m) => vec![m],
            // Default sweep: the trial counts worth knowing by heart, up to
            // the 2^128 birthday bound where the collision odds hit one half.
            None => [16, 32, 64, 96, 127, 128]
                .iter()
                .map(|&k| 2f64.powi(k))
                .collect(),
        };
        let rows: Vec<(f64, f64)> = ms
            .into_iter()
            .map(|m| (m, collision_probability(m)))
            .collect();
        let csv = report::collision_csv(&rows);
        print!("{csv}");
        if let Some(out) = &a.out {
            fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
            write_manifest(
                "attack-prob",
                serde_json::json!({ "collision": true, "m": rows.iter().map(|r| r.0).collect::<Vec<_>>() }),
                a.seed,
                &[out],
            )?;
        }
        return Ok(ExitCode::SUCCESS);
    }

    if a.verifiers > 10_000 {
        bail!("--M must be at most 10000 (exact committee tail is summed termwise)");
    }
    if let Some(tr) = a.mc_trials {
        if tr < 1_000 {
            bail!("--mc-trials must be at least 1000");
        }
    }

    let scenarios: Vec<AttackScenario> = if a.grid {
        let mut out = Vec::new();
        for n in [30u64, 90, 300] {
            for tenths in 1..=6u64 {
                let t = n * tenths / 10;
                for m in [4u64, 10, 30, 100] {
                    out.push(AttackScenario::new(n, t, m, a.z)?);
                }
            }
        }
        out
    } else {
        let (Some(n), Some(t)) = (a.total, a.corrupt) else {
            bail!("attack-prob needs --collision, --grid, or both --N and --T");
        };
        vec![AttackScenario::new(n, t, a.verifiers, a.z)?]
    };

    let rows: Vec<AttackProbRow> = scenarios
        .iter()
        .map(|s| AttackProbRow {
            n: s.total_parties,
            t: s.attacker_parties,
            m: s.verifier_count,
            z: s.confirmations,
            pf_bound: pf_chernoff_bound(s.total_parties, s.attacker_parties, s.verifier_count)
                .value,
            pf_exact: pf_exact(s.total_parties, s.attacker_parties, s.verifier_count).value,
            ps: ps_double_spend(s).value,
            p_att: p_att(s).value,
            mc: a.mc_trials.map(|tr| monte_carlo_double_spend(s, tr, a.seed)),
        })
        .collect();

    let csv = report::attack_csv(&rows);
    print!("{csv}");
    if let Some(out) = &a.out {
        fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
        write_manifest(
            "attack-prob",
            serde_json::to_value(&scenarios)?,
            a.seed,
            &[out],
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(a: SimulateArgs) -> Result<ExitCode> {
    if let Some(trace) = &a.replay {
        return match replay_trace(trace) {
            Ok(lines) => {
                println!("replay ok: {lines} lines reproduced from {}", trace.display());
                Ok(ExitCode::SUCCESS)
            }
            Err(TraceError::Diverged { line, stored, recomputed }) => {
                eprintln!("replay diverged at line {line}");
                eprintln!("  stored:     {stored}");
                eprintln!("  recomputed: {recomputed}");
                Ok(ExitCode::from(1))
            }
            Err(e) => bail!("replay failed: {e}"),
        };
    }

    let config_path = a
        .config
        .as_deref()
        .context("simulate needs a config file (or --replay)")?;
    let mut cfg = load_config(Some(config_path))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(d) = a.drop_rate {
        cfg.drop_rate = d;
    }
    cfg.validate_campaign()
        .map_err(|e| anyhow!("invalid configuration: {e}"))?;

    let (rep, _records) = run_safety_campaign(&cfg)?;
    fs::write(&a.out, serde_json::to_string_pretty(&rep)?)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let manifest = write_manifest("simulate", serde_json::to_value(&cfg)?, cfg.seed, &[&a.out])?;

    println!(
        "campaign: {} runs, {} fully committed, {} with aborts",
        rep.runs, rep.fully_committed_runs, rep.aborted_runs
    );
    println!(
        "  conflicts {}, double-signed votes {}, messages {}, bytes {}",
        rep.conflicts, rep.double_signs, rep.total_messages, rep.total_bytes
    );
    println!(
        "  lock scenario: target committed by all {}, decoy committed {}",
        rep.scenario.all_committed_target, rep.scenario.decoy_committed
    );
    println!("report: {}", a.out.display());
    println!("manifest: {}", manifest.display());

    if a.record || !rep.safe() {
        write_trace(&a.trace, TraceKind::Campaign, &cfg)
            .map_err(|e| anyhow!("writing trace {}: {e}", a.trace.display()))?;
        println!("event trace: {}", a.trace.display());
    }

    if rep.safe() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "safety violation detected; verify with: dpow simulate --replay {}",
            a.trace.display()
        );
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::MineBench(a) => cmd_mine_bench(a),
        Cmd::PbftTable(a) => cmd_pbft_table(a),
        Cmd::AttackProb(a) => cmd_attack_prob(a),
        Cmd::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
