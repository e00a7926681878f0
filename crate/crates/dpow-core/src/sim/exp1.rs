//! Solo-vs-sharded mining benchmark on a virtual clock.
//!
//! Each trial mines one block two ways with the same per-miner random
//! draws: a single miner working alone, and the same pool of miners fed
//! disjoint shards by one server, where the first finisher ends the round.
//! Per-miner streams are keyed by (trial, miner, purpose) with no arm tag,
//! so the sharded arm sees exactly miner 0's solo draws plus extra miners;
//! that couples the arms (sharded time never exceeds solo time for the
//! same trial) and makes the two arms byte-identical when the pool is one
//! miner.
//!
//! Time for one miner is assignment latency, then hashing at the
//! configured rate, then submission latency. Losers in the sharded arm
//! stop when the winner's submission lands, and their burned hashes are
//! metered up to that instant.

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::queue::{EventKind, EventQueue};
use super::rng::{self, purpose};
use super::{DifficultyPolicy, SimConfig, TrialRecord};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Exp1Summary {
    pub trials: u64,
    pub miners: u32,
    pub solo_mean: f64,
    pub sharded_mean: f64,
    /// Mean speedup, solo over sharded.
    pub ratio: f64,
    pub solo_iqr: (f64, f64),
    pub sharded_iqr: (f64, f64),
    /// Welch two-sample t statistic on log solve times (sharded minus solo,
    /// so faster sharded runs drive it negative).
    pub welch_t: f64,
    /// Two-sided p-value for the t statistic.
    pub p_value: f64,
    pub solo_hashes: u64,
    pub sharded_hashes: u64,
}

struct MinerDraws {
    assign_latency: f64,
    hashes_needed: u64,
    submit_latency: f64,
}

fn draws(cfg: &SimConfig, trial: u64, miner: u64, difficulty: u64) -> MinerDraws {
    let mut assign = rng::stream(cfg.seed, &[purpose::ASSIGN_LATENCY, trial, miner]);
    let mut hash = rng::stream(cfg.seed, &[purpose::HASH_COUNT, trial, miner]);
    let mut submit = rng::stream(cfg.seed, &[purpose::SUBMIT_LATENCY, trial, miner]);
    MinerDraws {
        assign_latency: rng::uniform(&mut assign, cfg.latency.min, cfg.latency.max),
        hashes_needed: rng::geometric_hashes(&mut hash, difficulty),
        submit_latency: rng::uniform(&mut submit, cfg.latency.min, cfg.latency.max),
    }
}

fn trial_difficulty(cfg: &SimConfig, trial: u64) -> u64 {
    match cfg.difficulty {
        DifficultyPolicy::Fixed { difficulty } => difficulty,
        DifficultyPolicy::LogUniform { min, max } => {
            let mut rng = rng::stream(cfg.seed, &[purpose::DIFFICULTY, trial]);
            rng::log_uniform_u64(&mut rng, min, max)
        }
    }
}

/// Run the benchmark; returns one record per arm per trial (solo first)
/// plus the aggregate summary.
pub fn run_experiment_1(cfg: &SimConfig) -> (Vec<TrialRecord>, Exp1Summary) {
    if cfg.real_hash {
        return run_real_hash(cfg);
    }
    let k = cfg.topology.miners as u64;
    let rate = cfg.hash_rate;
    let mut records = Vec::with_capacity(2 * cfg.trials as usize);
    let mut solo_times = Vec::with_capacity(cfg.trials as usize);
    let mut sharded_times = Vec::with_capacity(cfg.trials as usize);
    let mut solo_hashes_total = 0u64;
    let mut sharded_hashes_total = 0u64;

    for trial in 0..cfg.trials {
        let difficulty = trial_difficulty(cfg, trial);
        let miners: Vec<MinerDraws> =
            (0..k).map(|m| draws(cfg, trial, m, difficulty)).collect();

        // Solo arm: miner 0 alone, start to submission.
        let solo = &miners[0];
        let solo_time = solo.assign_latency + solo.hashes_needed as f64 / rate + solo.submit_latency;
        let solo_hashes = solo.hashes_needed;

        // Sharded arm: every miner races; the earliest submission wins.
        let mut queue = EventQueue::new();
        for (m, d) in miners.iter().enumerate() {
            let done = d.assign_latency + d.hashes_needed as f64 / rate + d.submit_latency;
            queue.push(done, EventKind::HashBatch, m);
        }
        let winner = queue.pop().expect("at least one miner");
        let sharded_time = winner.time;

        // Losers burn hashes until the winning submission lands. A miner
        // still waiting on its assignment at that point burned nothing.
        let mut sharded_hashes = 0u64;
        for (m, d) in miners.iter().enumerate() {
            if m == winner.payload {
                sharded_hashes += d.hashes_needed;
            } else {
                let mining_time = (sharded_time - d.assign_latency).max(0.0);
                let burned = (mining_time * rate).floor() as u64;
                sharded_hashes += burned.min(d.hashes_needed);
            }
        }

        records.push(TrialRecord {
            trial,
            arm: "solo".to_string(),
            difficulty,
            solve_time: solo_time,
            hashes: solo_hashes,
        });
        records.push(TrialRecord {
            trial,
            arm: "sharded".to_string(),
            difficulty,
            solve_time: sharded_time,
            hashes: sharded_hashes,
        });
        solo_times.push(solo_time);
        sharded_times.push(sharded_time);
        solo_hashes_total += solo_hashes;
        sharded_hashes_total += sharded_hashes;
    }

    let solo_mean = mean(&solo_times);
    let sharded_mean = mean(&sharded_times);
    let (welch_t, p_value) = welch_log_t(&sharded_times, &solo_times);
    let summary = Exp1Summary {
        trials: cfg.trials,
        miners: cfg.topology.miners,
        solo_mean,
        sharded_mean,
        ratio: solo_mean / sharded_mean,
        solo_iqr: iqr(&solo_times),
        sharded_iqr: iqr(&sharded_times),
        welch_t,
        p_value,
        solo_hashes: solo_hashes_total,
        sharded_hashes: sharded_hashes_total,
    };
    (records, summary)
}

/// Micro-benchmark mode: mine the shards for real and clock them.
///
/// Every miner runs its full disjoint shard search to completion, one
/// after another (this is a timing probe, not a scheduling model). The
/// solo arm is miner 0's search; the sharded arm finishes at the fastest
/// miner's time, and losers are billed for the hashes their measured rate
/// fits into the winner's window. Hash counts are exact and reproducible;
/// wall-clock times are not.
fn run_real_hash(cfg: &SimConfig) -> (Vec<TrialRecord>, Exp1Summary) {
    use crate::hash::keccak256;
    use crate::mining::{mine_shard, BlockTemplate, MinerId, MinerStats, ShardingServer};
    use crate::pow::StopSignal;

    let k = cfg.topology.miners as u64;
    let mut records = Vec::with_capacity(2 * cfg.trials as usize);
    let mut solo_times = Vec::new();
    let mut sharded_times = Vec::new();
    let mut solo_hashes_total = 0u64;
    let mut sharded_hashes_total = 0u64;

    for trial in 0..cfg.trials {
        let difficulty = trial_difficulty(cfg, trial);
        let template = BlockTemplate {
            prev_hash: keccak256(&trial.to_be_bytes()),
            difficulty,
            timestamp: 1_700_000_000 + trial,
            transactions: Vec::new(),
            receiver: vec![0xaa; 20],
        };
        let mut server = ShardingServer::new(template).expect("positive difficulty");
        let miners: Vec<MinerId> = (0..k).map(MinerId::from_index).collect();
        let assignments = server.map_shards(&miners).expect("distinct miner ids");

        let mut times = Vec::with_capacity(k as usize);
        let mut hashes = Vec::with_capacity(k as usize);
        for a in &assignments {
            let mut stats = MinerStats::default();
            let started = std::time::Instant::now();
            mine_shard(a, &StopSignal::new(), &mut stats).expect("open-ended search");
            times.push(started.elapsed().as_secs_f64().max(1e-9));
            hashes.push(stats.hashes_tried);
        }

        let solo_time = times[0];
        let solo_hashes = hashes[0];
        let winner = (0..times.len())
            .min_by(|&a, &b| times[a].total_cmp(&times[b]))
            .unwrap();
        let sharded_time = times[winner];
        let mut sharded_hashes = 0u64;
        for m in 0..times.len() {
            if m == winner {
                sharded_hashes += hashes[m];
            } else {
                let rate = hashes[m] as f64 / times[m];
                sharded_hashes += ((sharded_time * rate).floor() as u64).min(hashes[m]);
            }
        }

        records.push(TrialRecord {
            trial,
            arm: "solo".to_string(),
            difficulty,
            solve_time: solo_time,
            hashes: solo_hashes,
        });
        records.push(TrialRecord {
            trial,
            arm: "sharded".to_string(),
            difficulty,
            solve_time: sharded_time,
            hashes: sharded_hashes,
        });
        solo_times.push(solo_time);
        sharded_times.push(sharded_time);
        solo_hashes_total += solo_hashes;
        sharded_hashes_total += sharded_hashes;
    }

    let solo_mean = mean(&solo_times);
    let sharded_mean = mean(&sharded_times);
    let (welch_t, p_value) = welch_log_t(&sharded_times, &solo_times);
    let summary = Exp1Summary {
        trials: cfg.trials,
        miners: cfg.topology.miners,
        solo_mean,
        sharded_mean,
        ratio: solo_mean / sharded_mean,
        solo_iqr: iqr(&solo_times),
        sharded_iqr: iqr(&sharded_times),
        welch_t,
        p_value,
        solo_hashes: solo_hashes_total,
        sharded_hashes: sharded_hashes_total,
    };
    (records, summary)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Interquartile range endpoints (25th and 75th percentile, linearly
/// interpolated between order statistics).
pub fn iqr(xs: &[f64]) -> (f64, f64) {
    (percentile(xs, 0.25), percentile(xs, 0.75))
}

fn percentile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty());
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Welch's t on log-transformed samples: solve times are right-skewed
/// (roughly exponential within a trial), so the test runs on logs.
/// Returns (t, two-sided p).
fn welch_log_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let la: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let (na, nb) = (la.len() as f64, lb.len() as f64);
    let (ma, mb) = (mean(&la), mean(&lb));
    let (va, vb) = (variance(&la), variance(&lb));
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        // Degenerate identical samples: no evidence of a difference.
        return (0.0, 1.0);
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
    let p = 2.0 * dist.cdf(-t.abs());
    (t, p)
}
