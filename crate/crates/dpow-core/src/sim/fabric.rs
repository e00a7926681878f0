//! Network models.
//!
//! The driver asks a [`Fabric`] what happens to each message it sends:
//! delivered after some delay, or silently dropped. [`UniformFabric`] is
//! the randomized production model; [`ScriptedFabric`] applies an exact
//! drop list on top of a constant delay, for regression scenarios that
//! need specific messages to go missing.

use rand_chacha::ChaCha8Rng;

use super::rng::uniform;
use super::LatencyBand;

/// What kind of consensus message an envelope carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgKind {
    Proposal,
    Prevote,
    Precommit,
}

/// Routing metadata for one point-to-point message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Envelope {
    pub src: u32,
    pub dst: u32,
    pub kind: MsgKind,
    pub height: u64,
    pub round: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Route {
    Deliver { delay: f64 },
    Drop,
}

pub trait Fabric {
    fn route(&mut self, env: &Envelope) -> Route;
}

/// Uniform latency band with i.i.d. drops.
pub struct UniformFabric {
    latency: LatencyBand,
    drop_rate: f64,
    rng: ChaCha8Rng,
}

impl UniformFabric {
    pub fn new(latency: LatencyBand, drop_rate: f64, rng: ChaCha8Rng) -> Self {
        assert!((0.0..1.0).contains(&drop_rate), "drop_rate out of range");
        UniformFabric { latency, drop_rate, rng }
    }
}

impl Fabric for UniformFabric {
    fn route(&mut self, _env: &Envelope) -> Route {
        // Draw both variates unconditionally so the delay draw for a given
        // message does not depend on whether earlier messages were dropped.
        let u_drop = uniform(&mut self.rng, 0.0, 1.0);
        let delay = uniform(&mut self.rng, self.latency.min, self.latency.max);
        if u_drop < self.drop_rate {
            Route::Drop
        } else {
            Route::Deliver { delay }
        }
    }
}

/// Exact-match rule for dropping one message flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropRule {
    pub src: u32,
    pub dst: u32,
    pub kind: MsgKind,
    pub height: u64,
    pub round: u32,
}

/// Constant-delay fabric that drops exactly the scripted flows.
pub struct ScriptedFabric {
    pub delay: f64,
    pub rules: Vec<DropRule>,
}

impl Fabric for ScriptedFabric {
    fn route(&mut self, env: &Envelope) -> Route {
        let hit = self.rules.iter().any(|r| {
            r.src == env.src
                && r.dst == env.dst
                && r.kind == env.kind
                && r.height == env.height
                && r.round == env.round
        });
        if hit {
            Route::Drop
        } else {
            Route::Deliver { delay: self.delay }
        }
    }
}
