//! End-to-end checks pinning the numbers this workspace is expected to
//! reproduce: the collision sweep, the verdict grid, the mining speedup,
//! the race probability calibration, bound dominance, Monte Carlo
//! consistency, campaign safety, shard disjointness, and determinism.

use std::collections::HashSet;
use std::time::Instant;

use dpow_core::mining::{collision_probability, BlockTemplate, MinerId, ShardingServer};
use dpow_core::pbft::quorum;
use dpow_core::report;
use dpow_core::security::{
    monte_carlo_double_spend, p_att, pf_chernoff_bound, pf_exact, ps_double_spend, AttackScenario,
};
use dpow_core::sim::{
    run_experiment_1, run_experiment_2, run_safety_campaign, ByzantineAssignment,
    ByzantineStrategy, SimConfig, Verdict,
};
use dpow_core::{keccak256, Transaction};

#[test]
fn collision_sweep_matches_the_reference_entries() {
    let start = Instant::now();
    // Trial counts and their birthday-bound collision odds against a
    // 256-bit root space, up to the 2^128 midpoint.
    let entries: [(i32, f64); 6] = [
        (16, 2f64.powi(-225)),
        (32, 2f64.powi(-193)),
        (64, 2f64.powi(-129)),
        (96, 2f64.powi(-65)),
        (127, 0.125),
        (128, 0.5),
    ];
    for (k, expected) in entries {
        let p = collision_probability(2f64.powi(k));
        let rel = (p - expected).abs() / expected;
        assert!(
            rel < 0.05,
            "m = 2^{k}: p = {p:e}, expected {expected:e}, rel err {rel:.4}"
        );
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn verdict_grid_reproduces_the_reference_rows() {
    let start = Instant::now();
    let cfg = SimConfig { trials: 10, ..SimConfig::default() };
    let rows = run_experiment_2(&cfg);
    let row = |g: &str| &rows.iter().find(|r| r.group == g).unwrap().verdicts;

    // Conspiring minorities cannot push an invalid block (B1, B2) and
    // cannot stop a valid one (A1). A conspiring supermajority controls
    // the outcome outright (A3, B3).
    assert!(row("A1").iter().all(|v| *v == Verdict::V), "{:?}", row("A1"));
    assert!(row("B1").iter().all(|v| *v == Verdict::I), "{:?}", row("B1"));
    assert!(row("B2").iter().all(|v| *v == Verdict::I), "{:?}", row("B2"));
    assert!(row("A3").iter().all(|v| *v == Verdict::I), "{:?}", row("A3"));
    assert!(row("B3").iter().all(|v| *v == Verdict::V), "{:?}", row("B3"));

    // Two coin-flipping verifiers of four sometimes cooperate and
    // sometimes stonewall, so their row must be mixed.
    let a2 = row("A2");
    assert!(
        a2.contains(&Verdict::V) && a2.contains(&Verdict::I),
        "expected a mixed row, got {a2:?}"
    );
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn sharded_mining_beats_solo_with_seven_miners() {
    let start = Instant::now();
    let cfg = SimConfig::default();
    assert_eq!(cfg.topology.miners, 7);
    assert_eq!(cfg.trials, 1000);

    let (_, s) = run_experiment_1(&cfg);
    assert!(s.sharded_mean < s.solo_mean, "{s:?}");
    assert!(s.p_value < 0.01, "p = {:e}", s.p_value);

    let ratio = s.solo_mean / s.sharded_mean;
    assert!((s.ratio - ratio).abs() < 1e-12);
    assert!(
        (3.0..=7.0).contains(&ratio),
        "speedup {ratio:.3} outside [3, 7]"
    );
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn race_probability_matches_the_classic_double_spend_value() {
    // One attacker in ten parties, victim waits five confirmations. The
    // committee size plays no role in the pure race term.
    let s = AttackScenario::new(10, 1, 4, 5).unwrap();
    let ps = ps_double_spend(&s).value;

    // Route 1: the published value for q = 0.1, z = 5.
    assert!((ps - 0.0009137).abs() < 1e-5, "ps = {ps:e}");

    // Route 2: direct evaluation of the truncated Poisson race sum with
    // plain running-product arithmetic.
    let (q, p) = (0.1f64, 0.9f64);
    let lam = 5.0 * q / p;
    let mut pois = (-lam).exp();
    let mut sum = 0.0;
    for k in 0..=5i32 {
        if k > 0 {
            pois *= lam / k as f64;
        }
        sum += pois * (1.0 - (q / p).powi(5 - k));
    }
    let oracle = 1.0 - sum;
    assert!((ps - oracle).abs() < 1e-12, "ps = {ps:e}, oracle = {oracle:e}");
}

#[test]
fn chernoff_bound_dominates_the_exact_tail_across_the_grid() {
    for n in [30u64, 90, 300] {
        for tenths in 1..=6u64 {
            let t = n * tenths / 10;
            for m in [4u64, 10, 30, 100] {
                let bound = pf_chernoff_bound(n, t, m).value;
                let exact = pf_exact(n, t, m).value;
                assert!(
                    bound >= exact,
                    "N={n} T={t} M={m}: bound {bound:e} < exact {exact:e}"
                );
            }
        }
    }
}

#[test]
fn monte_carlo_estimates_never_exceed_the_composite_bound() {
    let start = Instant::now();
    // Thirty scenarios spanning harmless to hopeless: minorities below a
    // third, racing minorities below a half, and outright majorities.
    let mut grid = Vec::new();
    for (n, ts, ms, z) in [
        (12u64, vec![1u64, 3, 5, 7, 9], vec![4u64, 7], 2u64),
        (60, vec![6, 18, 30, 45], vec![10, 31], 4),
        (200, vec![20, 60, 100, 150], vec![12], 6),
        (10, vec![0, 10], vec![4], 3),
        (30, vec![3, 9, 15], vec![4, 10], 5),
    ] {
        for &t in &ts {
            for &m in &ms {
                grid.push(AttackScenario::new(n, t, m, z).unwrap());
            }
        }
    }
    assert_eq!(grid.len(), 30);

    for (i, s) in grid.iter().enumerate() {
        let bound = p_att(s).value;
        let mc = monte_carlo_double_spend(s, 1_000_000, 0xacce55 + i as u64);
        let limit = bound + 3.0 * mc.stderr.unwrap();
        assert!(
            mc.value <= limit,
            "N={} T={} M={} z={}: mc {:e} > bound {bound:e} + 3 stderr",
            s.total_parties,
            s.attacker_parties,
            s.verifier_count,
            s.confirmations,
            mc.value,
        );
    }
    assert!(start.elapsed().as_secs_f64() < 300.0);
}

#[test]
fn byzantine_campaign_never_conflicts_or_double_signs() {
    assert_eq!(quorum(4), 3);

    // One equivocating verifier of four under a 20% lossy network.
    let cfg = SimConfig {
        seed: 42,
        trials: 1000,
        drop_rate: 0.2,
        byzantine: vec![ByzantineAssignment {
            verifier: 2,
            strategy: ByzantineStrategy::Equivocate,
        }],
        ..SimConfig::default()
    };
    let (report, records) = run_safety_campaign(&cfg).unwrap();
    assert_eq!(report.runs, 1000);
    assert_eq!(records.len(), 1000);
    assert_eq!(report.conflicts, 0, "{report:?}");
    assert_eq!(report.double_signs, 0, "{report:?}");
    for r in &records {
        assert_eq!(r.conflicts, 0, "run {}", r.run);
        assert_eq!(r.double_signs, 0, "run {}", r.run);
    }

    // The scripted delayed-vote scenario: one verifier commits early and
    // alone, the others lock, refuse a later decoy, and re-propose the
    // locked block until everyone lands on the same hash.
    let sc = &report.scenario;
    assert!(sc.all_committed_target, "{sc:?}");
    assert!(!sc.decoy_committed, "{sc:?}");
    assert_eq!(sc.conflicts, 0);
    assert_eq!(sc.double_signs, 0);
    assert!(sc.commit_rounds.iter().all(|r| r.is_some()), "{sc:?}");
}

#[test]
fn two_miner_shards_are_exhaustively_disjoint() {
    let template = BlockTemplate {
        prev_hash: keccak256(b"shard-disjointness-genesis"),
        difficulty: 1 << 20,
        timestamp: 1_700_000_000,
        transactions: vec![
            Transaction::new(b"pay alice".to_vec()),
            Transaction::new(b"pay bob".to_vec()),
            Transaction::new(b"pay carol".to_vec()),
        ],
        receiver: b"server".to_vec(),
    };
    let mut server = ShardingServer::new(template).unwrap();
    let shards = server
        .map_shards(&[MinerId::from_index(0), MinerId::from_index(1)])
        .unwrap();
    assert_eq!(shards.len(), 2);

    // Walk both miners' full two-byte extra spaces; every coinbase hash
    // and every induced tx root must be globally unique.
    let mut coinbases: HashSet<[u8; 32]> = HashSet::with_capacity(2 << 16);
    let mut roots: HashSet<[u8; 32]> = HashSet::with_capacity(2 << 16);
    for shard in &shards {
        for extra in 0..(1u64 << 16) {
            let cb = shard.coinbase_for(extra);
            assert!(
                coinbases.insert(*cb.hash().as_bytes()),
                "coinbase collision, miner {:?} extra {extra}",
                shard.miner_id
            );
            assert!(
                roots.insert(*shard.root_for(&cb).as_bytes()),
                "tx root collision, miner {:?} extra {extra}",
                shard.miner_id
            );
        }
    }
    assert_eq!(coinbases.len(), 2 << 16);
    assert_eq!(roots.len(), 2 << 16);
}

#[test]
fn repeated_runs_emit_byte_identical_output() {
    let cfg = SimConfig { trials: 200, ..SimConfig::default() };
    let (r1, s1) = run_experiment_1(&cfg);
    let (r2, s2) = run_experiment_1(&cfg);
    assert_eq!(report::exp1_csv(&r1), report::exp1_csv(&r2));
    assert_eq!(report::exp1_summary_text(&s1), report::exp1_summary_text(&s2));

    let gcfg = SimConfig { trials: 5, ..SimConfig::default() };
    let g1 = run_experiment_2(&gcfg);
    let g2 = run_experiment_2(&gcfg);
    assert_eq!(report::exp2_grid_csv(&g1), report::exp2_grid_csv(&g2));

    let ccfg = SimConfig { seed: 7, trials: 20, drop_rate: 0.1, ..SimConfig::default() };
    let (rep1, rec1) = run_safety_campaign(&ccfg).unwrap();
    let (rep2, rec2) = run_safety_campaign(&ccfg).unwrap();
    assert_eq!(
        serde_json::to_string(&rep1).unwrap(),
        serde_json::to_string(&rep2).unwrap()
    );
    assert_eq!(
        serde_json::to_string(&rec1).unwrap(),
        serde_json::to_string(&rec2).unwrap()
    );
}
