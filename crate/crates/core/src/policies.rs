//! Channel-selection policies driven by binary ACK rewards.
//!
//! Three policies share one strictly alternating `choose` → `update`
//! contract:
//!
//! - **UCB1** picks the arm maximizing `mean_k + sqrt(alpha * ln t / N_k)`,
//!   where `t` is the number of messages this device has sent. Unpulled
//!   arms score `+inf`, so the first `K` choices visit every channel once.
//! - **Thompson Sampling** keeps a `Beta(a_k, b_k)` posterior per arm,
//!   starting from `Beta(1, 1)`, samples one index per arm and picks the
//!   largest.
//! - **Uniform** picks a channel uniformly at random (the non-learning
//!   baseline).
//!
//! Ties in either argmax go to the lowest channel index. All randomness comes
//! from the state's own `ChaCha8Rng`, so equal seeds and equal update
//! sequences replay bit-for-bit.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default UCB1 exploration parameter.
pub const DEFAULT_UCB_ALPHA: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("channel {channel} out of range for {arms} arms")]
    ChannelOutOfRange { channel: usize, arms: usize },
    #[error("empirical mean undefined for an arm that was never pulled")]
    UndefinedMean,
    #[error("policy needs at least one arm")]
    NoArms,
    #[error("ucb alpha must be positive and finite, got {0}")]
    InvalidAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Ucb1,
    ThompsonSampling,
    Uniform,
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Ucb1 => "ucb1",
            PolicyKind::ThompsonSampling => "thompson_sampling",
            PolicyKind::Uniform => "uniform",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ucb1" => Ok(PolicyKind::Ucb1),
            "thompson_sampling" | "ts" => Ok(PolicyKind::ThompsonSampling),
            "uniform" => Ok(PolicyKind::Uniform),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

/// Per-channel counters.
///
/// `alpha_param`/`beta_param` are the Thompson Sampling posterior parameters.
/// They are updated alongside `pulls`/`successes` rather than derived, so
/// `alpha_param - 1 == successes` and `beta_param - 1 == pulls - successes`
/// is a checked invariant and not a tautology.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmState {
    pulls: u64,
    successes: u64,
    alpha_param: f64,
    beta_param: f64,
}

impl Default for ArmState {
    fn default() -> Self {
        ArmState {
            pulls: 0,
            successes: 0,
            alpha_param: 1.0,
            beta_param: 1.0,
        }
    }
}

impl ArmState {
    /// Builds an arm from raw counts, as if `pulls` updates had been applied.
    ///
    /// # Panics
    /// If `successes > pulls`.
    pub fn from_counts(pulls: u64, successes: u64) -> Self {
        assert!(successes <= pulls, "successes ({successes}) exceed pulls ({pulls})");
        ArmState {
            pulls,
            successes,
            alpha_param: 1.0 + successes as f64,
            beta_param: 1.0 + (pulls - successes) as f64,
        }
    }

    pub fn pulls(&self) -> u64 {
        self.pulls
    }

    pub fn successes(&self) -> u64 {
        self.successes
    }

    pub fn failures(&self) -> u64 {
        self.pulls - self.successes
    }

    pub fn alpha_param(&self) -> f64 {
        self.alpha_param
    }

    pub fn beta_param(&self) -> f64 {
        self.beta_param
    }

    fn record(&mut self, reward: bool) {
        self.pulls += 1;
        if reward {
            self.successes += 1;
            self.alpha_param += 1.0;
        } else {
            self.beta_param += 1.0;
        }
    }
}

/// `successes / pulls`. Errors for an unpulled arm.
pub fn empirical_mean(arm: &ArmState) -> Result<f64, PolicyError> {
    if arm.pulls == 0 {
        return Err(PolicyError::UndefinedMean);
    }
    Ok(arm.successes as f64 / arm.pulls as f64)
}

/// UCB1 index `mean + sqrt(alpha * ln(total_pulls) / pulls)`, or `+inf` for
/// an arm that has never been pulled.
///
/// Callers guarantee `total_pulls >= arm.pulls()` and `ucb_alpha > 0`.
pub fn ucb_index(arm: &ArmState, total_pulls: u64, ucb_alpha: f64) -> f64 {
    if arm.pulls == 0 {
        return f64::INFINITY;
    }
    debug_assert!(total_pulls >= arm.pulls);
    let n = arm.pulls as f64;
    let mean = arm.successes as f64 / n;
    mean + (ucb_alpha * (total_pulls as f64).ln() / n).sqrt()
}

/// Index of the first maximum. `values` must be non-empty and NaN-free.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// Result of one `choose` call.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelChoice {
    pub channel: usize,
    /// UCB indices or Thompson samples that produced the choice; empty for
    /// the uniform policy.
    pub decision_indices: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyState {
    kind: PolicyKind,
    arms: Vec<ArmState>,
    total_pulls: u64,
    ucb_alpha: f64,
    rng: ChaCha8Rng,
}

impl PolicyState {
    pub fn new(kind: PolicyKind, channels: usize, seed: u64) -> Result<Self, PolicyError> {
        Self::with_alpha(kind, channels, DEFAULT_UCB_ALPHA, seed)
    }

    pub fn with_alpha(
        kind: PolicyKind,
        channels: usize,
        ucb_alpha: f64,
        seed: u64,
    ) -> Result<Self, PolicyError> {
        Self::with_rng(kind, channels, ucb_alpha, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(
        kind: PolicyKind,
        channels: usize,
        ucb_alpha: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self, PolicyError> {
        if channels == 0 {
            return Err(PolicyError::NoArms);
        }
        if !(ucb_alpha > 0.0 && ucb_alpha.is_finite()) {
            return Err(PolicyError::InvalidAlpha(ucb_alpha));
        }
        Ok(PolicyState {
            kind,
            arms: vec![ArmState::default(); channels],
            total_pulls: 0,
            ucb_alpha,
            rng,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn arms(&self) -> &[ArmState] {
        &self.arms
    }

    pub fn channels(&self) -> usize {
        self.arms.len()
    }

    pub fn total_pulls(&self) -> u64 {
        self.total_pulls
    }

    pub fn ucb_alpha(&self) -> f64 {
        self.ucb_alpha
    }

    /// Current UCB1 index of every arm, whatever the policy kind.
    pub fn ucb_indices(&self) -> Vec<f64> {
        self.arms
            .iter()
            .map(|arm| ucb_index(arm, self.total_pulls, self.ucb_alpha))
            .collect()
    }

    pub fn choose(&mut self) -> ChannelChoice {
        match self.kind {
            PolicyKind::Ucb1 => {
                let indices = self.ucb_indices();
                ChannelChoice {
                    channel: argmax_lowest(&indices),
                    decision_indices: indices,
                }
            }
            PolicyKind::ThompsonSampling => {
                let rng = &mut self.rng;
                let samples: Vec<f64> = self
                    .arms
                    .iter()
                    .map(|arm| {
                        // Parameters are >= 1, which Beta::new always accepts.
                        Beta::new(arm.alpha_param, arm.beta_param)
                            .expect("beta parameters are at least 1")
                            .sample(rng)
                    })
                    .collect();
                ChannelChoice {
                    channel: argmax_lowest(&samples),
                    decision_indices: samples,
                }
            }
            PolicyKind::Uniform => ChannelChoice {
                channel: self.rng.random_range(0..self.arms.len()),
                decision_indices: Vec::new(),
            },
        }
    }

    pub fn update(&mut self, channel: usize, reward: bool) -> Result<(), PolicyError> {
        let arms = self.arms.len();
        let arm = self
            .arms
            .get_mut(channel)
            .ok_or(PolicyError::ChannelOutOfRange { channel, arms })?;
        arm.record(reward);
        self.total_pulls += 1;
        Ok(())
    }
}
