//! Discrete-event MAC simulation.
//!
//! Devices send one fixed-length uplink every `inter_message_period`
//! seconds on a channel picked by their policy. If the gateway decodes the
//! uplink, it answers on the same channel after `ack_delay`. The device's
//! reward is 1 iff the ACK arrives intact, and it is fed back to the policy
//! before the next message.
//!
//! Randomness comes from streams derived from the run seed (see
//! [`crate::seed`]): one per traffic channel, one per device policy, and one
//! per device phase offset. Equal `(scenario, seed)` gives an identical
//! trace.

mod engine;
pub mod event;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy_frame::{self, DeviceIndex, FrameCodec};
use crate::policies::{PolicyError, PolicyKind, PolicyState};
use crate::seed;
use crate::traffic::{
    self, BusyInterval, Exposure, OccupancyVector, PoissonTraffic, PoissonTrafficConfig,
    SlottedTraffic,
};

pub use engine::{
    overlaps_any, simulate, Background, ChannelSelector, DeviceSetup, SimOutput, SlotBusySource,
};

/// Maximum number of devices one gateway can address with a single QPSK
/// index symbol.
pub const MAX_DEVICES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacError {
    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),
    #[error("analytic success probability is only defined for a lone device")]
    AnalyticUnsupported,
    #[error("channel {channel} out of range for {channels} channels")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacTiming {
    pub uplink_duration: f64,
    pub ack_delay: f64,
    pub ack_duration: f64,
    pub inter_message_period: f64,
}

impl Default for MacTiming {
    fn default() -> Self {
        MacTiming {
            uplink_duration: 0.5,
            ack_delay: 1.0,
            ack_duration: 0.5,
            inter_message_period: 5.0,
        }
    }
}

impl MacTiming {
    /// Constraint violations, as `field: message` strings.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("uplink_duration", self.uplink_duration),
            ("ack_delay", self.ack_delay),
            ("ack_duration", self.ack_duration),
            ("inter_message_period", self.inter_message_period),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name}: must be positive and finite, got {v}"));
            }
        }
        if out.is_empty() && self.exchange_duration() >= self.inter_message_period {
            out.push(format!(
                "inter_message_period: uplink + ack_delay + ack (= {}) must end before the next message ({})",
                self.exchange_duration(),
                self.inter_message_period
            ));
        }
        out
    }

    /// Uplink start to ACK end.
    pub fn exchange_duration(&self) -> f64 {
        self.uplink_duration + self.ack_delay + self.ack_duration
    }

    /// Slots per message period in slotted mode, where a slot lasts one
    /// uplink. `None` unless the period is a whole number of at least three
    /// slots (uplink slot, ACK slot, and a gap before the next message).
    pub fn slots_per_period(&self) -> Option<u64> {
        let ratio = self.inter_message_period / self.uplink_duration;
        let rounded = ratio.round();
        if (ratio - rounded).abs() <= 1e-9 * ratio && rounded >= 3.0 {
            Some(rounded as u64)
        } else {
            None
        }
    }

    pub fn exposure(&self) -> Exposure {
        Exposure {
            uplink_duration: self.uplink_duration,
            ack_delay: self.ack_delay,
            ack_duration: self.ack_duration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionModel {
    SlottedBernoulli,
    PureAloha,
}

/// Whether devices share one medium or each runs alone against an identical
/// realization of the background traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Medium {
    #[default]
    Shared,
    Isolated,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Interference {
    Slotted(OccupancyVector),
    Poisson(PoissonTrafficConfig),
}

impl Interference {
    pub fn collision_model(&self) -> CollisionModel {
        match self {
            Interference::Slotted(_) => CollisionModel::SlottedBernoulli,
            Interference::Poisson(_) => CollisionModel::PureAloha,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Interference::Slotted(p) => p.len(),
            Interference::Poisson(c) => c.lambda.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub policy: PolicyKind,
    pub ucb_alpha: f64,
    pub phy_index: DeviceIndex,
    /// Time of the first uplink; drawn from the seed when `None`.
    pub phase_offset: Option<f64>,
}

/// A fully resolved scenario, ready to simulate.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub channels: usize,
    pub interference: Interference,
    pub timing: MacTiming,
    pub devices: Vec<DeviceSpec>,
    /// Messages per device.
    pub horizon: u64,
    pub medium: Medium,
}

impl Scenario {
    pub fn collision_model(&self) -> CollisionModel {
        self.interference.collision_model()
    }

    /// True when every device sees the medium alone, so per-channel success
    /// has a closed form.
    pub fn is_lone_device(&self) -> bool {
        self.devices.len() == 1 || self.medium == Medium::Isolated
    }

    pub fn validate(&self) -> Result<(), MacError> {
        let mut v = Vec::new();
        if self.channels == 0 {
            v.push("channels: must be at least 1".to_string());
        }
        if self.horizon == 0 {
            v.push("horizon: must be at least 1".to_string());
        }
        if self.devices.is_empty() {
            v.push("devices: at least one device is required".to_string());
        }
        if self.devices.len() > MAX_DEVICES {
            v.push(format!(
                "devices: at most {MAX_DEVICES} devices fit the QPSK index space, got {}",
                self.devices.len()
            ));
        }
        for (i, d) in self.devices.iter().enumerate() {
            if !(d.ucb_alpha > 0.0 && d.ucb_alpha.is_finite()) {
                v.push(format!("devices[{i}].ucb_alpha: must be positive, got {}", d.ucb_alpha));
            }
            if let Some(p) = d.phase_offset {
                if !(p >= 0.0 && p.is_finite()) {
                    v.push(format!("devices[{i}].phase_offset: must be finite and >= 0, got {p}"));
                }
            }
            if self.devices[..i].iter().any(|o| o.phy_index == d.phy_index) {
                v.push(format!("devices[{i}].phy_index: {} is used by another device", d.phy_index));
            }
        }
        if self.interference.channels() != self.channels {
            v.push(format!(
                "traffic: has {} channels, expected {}",
                self.interference.channels(),
                self.channels
            ));
        }
        if let Interference::Poisson(cfg) = &self.interference {
            if let Err(e) = cfg.validate() {
                v.push(format!("traffic: {e}"));
            }
        }
        v.extend(self.timing.violations().into_iter().map(|m| format!("timing.{m}")));
        if self.collision_model() == CollisionModel::SlottedBernoulli
            && self.timing.violations().is_empty()
            && self.timing.slots_per_period().is_none()
        {
            v.push(
                "timing.inter_message_period: slotted mode needs a whole number (>= 3) of uplink slots per period"
                    .to_string(),
            );
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(MacError::InvalidScenario(v))
        }
    }
}

/// Outcome of one message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransmissionRecord {
    pub device: usize,
    /// 1-based message number of this device.
    pub seq: u64,
    pub channel: usize,
    pub uplink_ok: bool,
    pub ack_ok: bool,
    pub reward: bool,
    /// Uplink start, seconds.
    pub time: f64,
    /// ACK start, if the gateway transmitted one.
    pub ack_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EventTrace {
    /// Sorted by `(time, device)`.
    pub records: Vec<TransmissionRecord>,
}

impl EventTrace {
    pub fn for_device(&self, device: usize) -> impl Iterator<Item = &TransmissionRecord> + '_ {
        self.records.iter().filter(move |r| r.device == device)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Trace plus the final policy state of every device.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub trace: EventTrace,
    pub policies: Vec<PolicyState>,
}

pub fn run_simulation(scenario: &Scenario, seed: u64) -> Result<EventTrace, MacError> {
    run_simulation_detailed(scenario, seed).map(|r| r.trace)
}

pub fn run_simulation_detailed(scenario: &Scenario, seed: u64) -> Result<SimulationRun, MacError> {
    scenario.validate()?;
    let setups = scenario
        .devices
        .iter()
        .enumerate()
        .map(|(id, spec)| device_setup(scenario, id, spec, seed))
        .collect::<Result<Vec<_>, _>>()?;

    let groups: Vec<Vec<DeviceSetup<PolicyState>>> = match scenario.medium {
        Medium::Shared => vec![setups],
        Medium::Isolated => setups.into_iter().map(|s| vec![s]).collect(),
    };
    let mut records = Vec::with_capacity(scenario.devices.len() * scenario.horizon as usize);
    let mut policies = Vec::with_capacity(scenario.devices.len());
    for group in groups {
        let out = simulate_group(scenario, group, seed);
        records.extend(out.records);
        policies.extend(out.selectors);
    }
    records.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.device.cmp(&b.device)));
    Ok(SimulationRun {
        trace: EventTrace { records },
        policies,
    })
}

fn device_setup(
    scenario: &Scenario,
    id: usize,
    spec: &DeviceSpec,
    seed: u64,
) -> Result<DeviceSetup<PolicyState>, MacError> {
    let policy = PolicyState::with_rng(
        spec.policy,
        scenario.channels,
        spec.ucb_alpha,
        seed::stream(seed, seed::TAG_DEVICE_POLICY, id as u64),
    )?;
    let phase_offset = spec.phase_offset.unwrap_or_else(|| {
        seed::stream(seed, seed::TAG_DEVICE_PHASE, id as u64)
            .random_range(0.0..scenario.timing.inter_message_period)
    });
    Ok(DeviceSetup {
        id,
        phy_index: spec.phy_index,
        selector: policy,
        phase_offset,
    })
}

fn simulate_group<S: ChannelSelector>(
    scenario: &Scenario,
    devices: Vec<DeviceSetup<S>>,
    seed: u64,
) -> SimOutput<S> {
    let background = match &scenario.interference {
        Interference::Slotted(p) => Background::Slotted(SlottedTraffic::new(p.clone(), seed)),
        Interference::Poisson(cfg) => {
            let t = &scenario.timing;
            let last_start = devices.iter().map(|d| d.phase_offset).fold(0.0, f64::max)
                + scenario.horizon as f64 * t.inter_message_period;
            let end = last_start + t.exchange_duration() + cfg.packet_duration;
            Background::Continuous(PoissonTraffic::new(cfg.clone(), seed).intervals(0.0, end))
        }
    };
    simulate(scenario.channels, &scenario.timing, scenario.horizon, devices, background)
}

/// What a frame sees on its channel besides other devices' frames.
#[derive(Debug, Clone, Copy)]
pub enum ChannelView<'a> {
    /// Busy draw of the frame's slot.
    Slotted { busy: bool },
    /// Interferer packets on the channel, sorted by start.
    Continuous { background: &'a [BusyInterval] },
}

fn frame_survives(interval: (f64, f64), view: ChannelView<'_>, concurrent: &[(f64, f64)]) -> bool {
    let (start, end) = interval;
    let hit = match view {
        ChannelView::Slotted { busy } => busy,
        ChannelView::Continuous { background } => overlaps_any(background, start, end),
    };
    !hit && concurrent.iter().all(|&(s, e)| s >= end || e <= start)
}

/// Uplink outcome: no interference and no other frame on the channel
/// overlapping `interval` by a nonzero amount.
pub fn resolve_uplink(interval: (f64, f64), view: ChannelView<'_>, concurrent: &[(f64, f64)]) -> bool {
    frame_survives(interval, view, concurrent)
}

/// ACK outcome, under the same overlap rule. An ACK is only sent for a
/// decoded uplink, so `uplink_ok == false` always yields `false`.
pub fn resolve_ack(
    uplink_ok: bool,
    interval: (f64, f64),
    view: ChannelView<'_>,
    concurrent: &[(f64, f64)],
) -> bool {
    uplink_ok && frame_survives(interval, view, concurrent)
}

/// Closed-form probability that a lone device succeeds on `channel`:
/// `(1 - p_k)^2` in slotted mode (independent uplink and ACK slots), and the
/// Poisson void probability over both vulnerable windows in pure-ALOHA mode.
pub fn per_channel_success_prob(scenario: &Scenario, channel: usize) -> Result<f64, MacError> {
    if !scenario.is_lone_device() {
        return Err(MacError::AnalyticUnsupported);
    }
    if channel >= scenario.channels {
        return Err(MacError::ChannelOutOfRange {
            channel,
            channels: scenario.channels,
        });
    }
    Ok(match &scenario.interference {
        Interference::Slotted(p) => {
            let free = 1.0 - p.as_slice()[channel];
            free * free
        }
        Interference::Poisson(cfg) => traffic::aloha_success_prob(
            cfg.lambda[channel],
            cfg.packet_duration,
            &scenario.timing.exposure(),
        ),
    })
}

pub fn per_channel_success_probs(scenario: &Scenario) -> Result<Vec<f64>, MacError> {
    (0..scenario.channels)
        .map(|k| per_channel_success_prob(scenario, k))
        .collect()
}

/// Replays every rewarded transmission through the PHY codec.
///
/// For each record with reward 1: the device's uplink is rotated by a
/// record-dependent phase and decoded by the gateway, the gateway's ACK is
/// rotated and decoded by the device, and the device must accept it while no
/// other device may. `devices[i]` is the index of device `i`.
pub fn integration_check_addressing(trace: &EventTrace, devices: &[DeviceIndex]) -> bool {
    let codec = FrameCodec::default();
    for (i, a) in devices.iter().enumerate() {
        if devices[..i].contains(a) {
            return false;
        }
    }
    for r in trace.records.iter().filter(|r| r.reward) {
        let Some(&mine) = devices.get(r.device) else {
            return false;
        };
        let theta = (r.seq as f64 * 0.618_033_988_749_895 + r.device as f64 * 0.25).fract()
            * std::f64::consts::TAU;
        let uplink = phy_frame::apply_phase_offset(&codec.encode_uplink(mine), theta);
        let Ok(heard) = codec.decode(&uplink) else {
            return false;
        };
        let ack = phy_frame::apply_phase_offset(&codec.encode_ack(heard), -theta * 0.5);
        let Ok(decoded) = codec.decode(&ack) else {
            return false;
        };
        if !phy_frame::is_ack_for(decoded, mine) {
            return false;
        }
        let foreign = devices
            .iter()
            .enumerate()
            .any(|(j, &other)| j != r.device && phy_frame::is_ack_for(decoded, other));
        if foreign {
            return false;
        }
    }
    true
}
