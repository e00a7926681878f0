//! Deterministic text rendering for experiment outputs.
//!
//! Every renderer here is a pure function of its inputs, emitting the same
//! bytes for the same data on every platform: floats print in shortest
//! round-trip form (plain for times, exponent form for probabilities), and
//! no timestamps, locales, or hash-map orderings are involved.

use crate::security::ProbabilityResult;
use crate::sim::{Exp1Summary, Exp2Row, TrialRecord};

/// Per-trial benchmark rows. Schema: `trial,arm,difficulty,solve_time_s,hashes`.
pub fn exp1_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from("trial,arm,difficulty,solve_time_s,hashes\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.trial, r.arm, r.difficulty, r.solve_time, r.hashes
        ));
    }
    out
}

/// Human-readable benchmark summary for stdout.
pub fn exp1_summary_text(s: &Exp1Summary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "mining benchmark: {} miners, {} trials\n",
        s.miners, s.trials
    ));
    out.push_str(&format!(
        "  solo    mean {:.4} s, IQR [{:.4}, {:.4}] s, {} hashes\n",
        s.solo_mean, s.solo_iqr.0, s.solo_iqr.1, s.solo_hashes
    ));
    out.push_str(&format!(
        "  sharded mean {:.4} s, IQR [{:.4}, {:.4}] s, {} hashes\n",
        s.sharded_mean, s.sharded_iqr.0, s.sharded_iqr.1, s.sharded_hashes
    ));
    out.push_str(&format!(
        "  speedup {:.3}x, Welch t = {:.2} on log times, two-sided p = {:.3e}\n",
        s.ratio, s.welch_t, s.p_value
    ));
    out
}

/// Verdict grid as CSV. Schema: `group,t1,...,tN`.
pub fn exp2_grid_csv(rows: &[Exp2Row]) -> String {
    let trials = rows.first().map_or(0, |r| r.verdicts.len());
    let mut out = String::from("group");
    for t in 1..=trials {
        out.push_str(&format!(",t{t}"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&row.group);
        for v in &row.verdicts {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Verdict grid as an aligned table for stdout.
pub fn exp2_grid_text(rows: &[Exp2Row]) -> String {
    let trials = rows.first().map_or(0, |r| r.verdicts.len());
    let mut out = String::from("trial   ");
    for t in 1..=trials {
        out.push_str(&format!("{t:>2} "));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{:<8}", row.group));
        for v in &row.verdicts {
            out.push_str(&format!("{v:>2} "));
        }
        out.push('\n');
    }
    out
}

/// One evaluated attack scenario for the probability CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackProbRow {
    pub n: u64,
    pub t: u64,
    pub m: u64,
    pub z: u64,
    pub pf_bound: f64,
    pub pf_exact: f64,
    pub ps: f64,
    pub p_att: f64,
    /// Monte Carlo estimate, when requested.
    pub mc: Option<ProbabilityResult>,
}

/// Attack probability rows. Schema:
/// `N,T,M,z,p_f_bound,p_f_exact,p_s,p_att[,mc_estimate,mc_stderr]`,
/// the Monte Carlo columns appearing when any row carries an estimate.
pub fn attack_csv(rows: &[AttackProbRow]) -> String {
    let with_mc = rows.iter().any(|r| r.mc.is_some());
    let mut out = String::from("N,T,M,z,p_f_bound,p_f_exact,p_s,p_att");
    if with_mc {
        out.push_str(",mc_estimate,mc_stderr");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:e},{:e},{:e},{:e}",
            r.n, r.t, r.m, r.z, r.pf_bound, r.pf_exact, r.ps, r.p_att
        ));
        if with_mc {
            match &r.mc {
                Some(mc) => out.push_str(&format!(
                    ",{:e},{:e}",
                    mc.value,
                    mc.stderr.unwrap_or(0.0)
                )),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Coinbase collision probabilities. Schema: `m,p_collision`.
pub fn collision_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("m,p_collision\n");
    for (m, p) in rows {
        out.push_str(&format!("{m:e},{p:e}\n"));
    }
    out
}
