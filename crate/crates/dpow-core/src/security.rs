//! Attack-probability calculus.
//!
//! An attacker controlling `T` of `N` parties must first corrupt a quorum
//! of the sampled verifier group (probability `P_f`, bounded by a Chernoff
//! tail), and then win the chain race behind `z` confirmations (probability
//! `P_s`, the Poisson-weighted gambler's ruin). The composite bound is
//! `P_att = P_f * P_s`. A seeded Monte Carlo simulation of the whole attack
//! serves as an independent oracle for the closed forms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::pbft::quorum;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SecurityError {
    #[error("total parties must be nonzero")]
    NoParties,
    #[error("attacker parties {attacker} exceed total {total}")]
    AttackerExceedsTotal { attacker: u64, total: u64 },
    #[error("verifier count must be nonzero")]
    NoVerifiers,
}

/// One attack configuration: N parties, T of them corrupt, a verifier
/// committee of M, and z confirmations on the victim's payment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub total_parties: u64,
    pub attacker_parties: u64,
    pub verifier_count: u64,
    pub confirmations: u64,
}

impl AttackScenario {
    /// `T = N` is allowed: it degenerates to certain success and anchors
    /// the Monte Carlo oracle's upper end.
    pub fn new(
        total_parties: u64,
        attacker_parties: u64,
        verifier_count: u64,
        confirmations: u64,
    ) -> Result<Self, SecurityError> {
        if total_parties == 0 {
            return Err(SecurityError::NoParties);
        }
        if attacker_parties > total_parties {
            return Err(SecurityError::AttackerExceedsTotal {
                attacker: attacker_parties,
                total: total_parties,
            });
        }
        if verifier_count == 0 {
            return Err(SecurityError::NoVerifiers);
        }
        Ok(AttackScenario {
            total_parties,
            attacker_parties,
            verifier_count,
            confirmations,
        })
    }

    /// Attacker's share of parties, `T/N`.
    pub fn attacker_share(&self) -> f64 {
        self.attacker_parties as f64 / self.total_parties as f64
    }

    /// Mean head start of the attacker's secret chain while the victim
    /// waits for z confirmations: `z * T / (N - T)`. Infinite at `T = N`;
    /// only consulted when `T < N/2`.
    pub fn secret_chain_mean(&self) -> f64 {
        let t = self.attacker_parties as f64;
        let n = self.total_parties as f64;
        self.confirmations as f64 * t / (n - t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbabilityKind {
    Exact,
    UpperBound,
    MonteCarlo,
}

/// A probability together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityResult {
    pub value: f64,
    pub kind: ProbabilityKind,
    pub trials: Option<u64>,
    pub stderr: Option<f64>,
}

impl ProbabilityResult {
    fn checked(value: f64, kind: ProbabilityKind) -> Self {
        assert!(
            (-1e-12..=1.0 + 1e-12).contains(&value),
            "probability {value} out of range"
        );
        ProbabilityResult {
            value: value.clamp(0.0, 1.0),
            kind,
            trials: None,
            stderr: None,
        }
    }

    pub fn exact(value: f64) -> Self {
        Self::checked(value, ProbabilityKind::Exact)
    }

    pub fn upper_bound(value: f64) -> Self {
        Self::checked(value, ProbabilityKind::UpperBound)
    }

    pub fn monte_carlo(value: f64, trials: u64, stderr: f64) -> Self {
        let mut r = Self::checked(value, ProbabilityKind::MonteCarlo);
        r.trials = Some(trials);
        r.stderr = Some(stderr);
        r
    }
}

/// Chernoff upper bound on corrupting a verifier quorum.
///
/// With committee mean `mu = M*T/N` and `delta = 2N/(3T) - 1`, the tail
/// `P(X >= 2M/3)` is at most `exp(-delta^2 * mu / 3)` for `N/3 <= T <= 2N/3`
/// and `exp(-delta * mu / 3)` for `T < N/3` (the two agree at `T = N/3`).
/// Degenerates to 1 when the attacker holds two thirds or more.
pub fn pf_chernoff_bound(n: u64, t: u64, m: u64) -> ProbabilityResult {
    assert!(n > 0 && m > 0, "need parties and verifiers");
    if t == 0 {
        return ProbabilityResult::upper_bound(0.0);
    }
    if 3 * t >= 2 * n {
        return ProbabilityResult::upper_bound(1.0);
    }
    let (n_f, t_f) = (n as f64, t as f64);
    let delta = 2.0 * n_f / (3.0 * t_f) - 1.0;
    let mu = m as f64 * t_f / n_f;
    let exponent = if 3 * t >= n {
        delta * delta * mu / 3.0
    } else {
        delta * mu / 3.0
    };
    ProbabilityResult::upper_bound((-exponent).exp())
}

/// Exact quorum-corruption probability: `P(X >= floor(2M/3)+1)` for
/// `X ~ Binomial(M, T/N)`, summed in log space. Scales to `M <= 10^4`.
pub fn pf_exact(n: u64, t: u64, m: u64) -> ProbabilityResult {
    assert!(n > 0 && m > 0, "need parties and verifiers");
    assert!(m <= 10_000, "binomial tail summation sized for M <= 10^4");
    let p = t as f64 / n as f64;
    if p == 0.0 {
        return ProbabilityResult::exact(0.0);
    }
    if p == 1.0 {
        return ProbabilityResult::exact(1.0);
    }
    let q = quorum(m);
    let m_f = m as f64;
    let (ln_p, ln_q) = (p.ln(), (1.0 - p).ln());
    let mut sum = 0.0;
    for k in q..=m {
        let k_f = k as f64;
        let ln_choose = ln_gamma(m_f + 1.0) - ln_gamma(k_f + 1.0) - ln_gamma(m_f - k_f + 1.0);
        sum += (ln_choose + k_f * ln_p + (m_f - k_f) * ln_q).exp();
    }
    ProbabilityResult::exact(sum.min(1.0))
}

/// Probability the attacker ever erases a deficit of `z` blocks: 1 when
/// `T >= N/2`, else `(T/(N-T))^z`.
pub fn catch_up_probability(n: u64, t: u64, z: u64) -> ProbabilityResult {
    assert!(n > 0, "need parties");
    if 2 * t >= n {
        return ProbabilityResult::exact(1.0);
    }
    let r = t as f64 / (n - t) as f64;
    ProbabilityResult::exact(r.powf(z as f64))
}

/// Double-spend success probability behind `z` confirmations:
/// `1 - sum_{k=0}^{z} Pois(k; lambda) * (1 - r^(z-k))` with
/// `r = T/(N-T)` and `lambda = z*r`. Returns 1 when `T >= N/2` or `z = 0`.
pub fn ps_double_spend(s: &AttackScenario) -> ProbabilityResult {
    let (n, t, z) = (s.total_parties, s.attacker_parties, s.confirmations);
    if 2 * t >= n {
        return ProbabilityResult::exact(1.0);
    }
    if z == 0 {
        return ProbabilityResult::exact(1.0);
    }
    if t == 0 {
        return ProbabilityResult::exact(0.0);
    }
    let r = t as f64 / (n - t) as f64;
    let lambda = s.secret_chain_mean();
    let ln_lambda = lambda.ln();
    let mut sum = 0.0;
    let mut mass = 0.0;
    for k in 0..=z {
        let k_f = k as f64;
        let pois = (k_f * ln_lambda - lambda - ln_gamma(k_f + 1.0)).exp();
        sum += pois * (1.0 - r.powf((z - k) as f64));
        mass += pois;
        // once nearly all Poisson mass is spent the remaining terms are
        // bounded by the leftover tail
        if 1.0 - mass < 1e-15 {
            break;
        }
    }
    ProbabilityResult::exact(1.0 - sum)
}

/// Composite attack bound `P_att = P_f * P_s`, piecewise in `T/N`:
/// below one half both factors apply; between one half and two thirds the
/// race is already won so only `P_f` matters; above two thirds the attack
/// is certain.
pub fn p_att(s: &AttackScenario) -> ProbabilityResult {
    let (n, t) = (s.total_parties, s.attacker_parties);
    if 3 * t >= 2 * n {
        return ProbabilityResult::upper_bound(1.0);
    }
    let pf = pf_chernoff_bound(n, t, s.verifier_count).value;
    let ps = if 2 * t >= n {
        1.0
    } else {
        ps_double_spend(s).value
    };
    ProbabilityResult::upper_bound(pf * ps)
}

/// Seeded end-to-end attack simulation, the oracle for [`p_att`].
///
/// Each trial draws the number of corrupted committee members from
/// `Binomial(M, T/N)`; if a quorum is corrupted the attacker runs the chain
/// race: a `Poisson(lambda)` head start, then a random walk that moves in
/// the attacker's favor with probability `T/N` per block. The walk is
/// abandoned once the deficit is so large that the residual catch-up
/// probability is below 1e-9, which biases the estimate down by less than
/// that.
pub fn monte_carlo_double_spend(s: &AttackScenario, trials: u64, seed: u64) -> ProbabilityResult {
    assert!(trials >= 1_000, "need at least 10^3 trials");
    let (n, t, z) = (s.total_parties, s.attacker_parties, s.confirmations);
    let p = s.attacker_share();
    let q = quorum(s.verifier_count);
    let committee = Binomial::new(s.verifier_count, p).expect("share in [0,1]");
    let race_won_outright = 2 * t >= n;
    let r = if race_won_outright {
        1.0
    } else {
        t as f64 / (n - t) as f64
    };
    let head_start = if race_won_outright || t == 0 {
        None
    } else {
        Some(Poisson::new(s.secret_chain_mean()).expect("lambda > 0"))
    };
    // deficit beyond which (T/(N-T))^deficit < 1e-9
    let give_up = if r <= 0.0 {
        1
    } else if r >= 1.0 {
        u64::MAX
    } else {
        ((1e-9f64.ln() / r.ln()).ceil() as u64).max(z + 1)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut successes = 0u64;
    for _ in 0..trials {
        if committee.sample(&mut rng) < q {
            continue;
        }
        if race_won_outright {
            successes += 1;
            continue;
        }
        let k = match &head_start {
            Some(pois) => pois.sample(&mut rng) as u64,
            None => 0,
        };
        if k >= z {
            successes += 1;
            continue;
        }
        let mut deficit = z - k;
        loop {
            if rng.random::<f64>() < p {
                deficit -= 1;
                if deficit == 0 {
                    successes += 1;
                    break;
                }
            } else {
                deficit += 1;
                if deficit > give_up {
                    break;
                }
            }
        }
    }
    let estimate = successes as f64 / trials as f64;
    let stderr = (estimate * (1.0 - estimate) / trials as f64).sqrt();
    ProbabilityResult::monte_carlo(estimate, trials, stderr)
}
