#![allow(dead_code)]

use aloha_bandit::experiment::{DeviceConfig, ScenarioConfig};
use aloha_bandit::mac_sim::{
    simulate, Background, ChannelSelector, CollisionModel, DeviceSetup, MacTiming, Medium,
    SlotBusySource,
};
use aloha_bandit::phy_frame::DeviceIndex;
use aloha_bandit::policies::PolicyKind;
use rayon::prelude::*;

pub const FIG4_OCCUPANCIES: [f64; 4] = [0.15, 0.10, 0.02, 0.01];

pub fn device(policy: PolicyKind) -> DeviceConfig {
    DeviceConfig {
        policy,
        ucb_alpha: (policy == PolicyKind::Ucb1).then_some(0.5),
        phy_index: None,
        phase_offset: None,
    }
}

pub fn slotted_config(name: &str, p: &[f64], policies: &[PolicyKind], horizon: u64, reps: u64) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        channels: p.len(),
        collision_mode: CollisionModel::SlottedBernoulli,
        occupancies: Some(p.to_vec()),
        poisson: None,
        timing: MacTiming::default(),
        medium: Medium::Isolated,
        devices: policies.iter().map(|&k| device(k)).collect(),
        horizon,
        repetitions: reps,
        master_seed: 2018,
        calibration: None,
        rolling_window: None,
    }
}

/// Plays a fixed channel sequence; reward of message `n` goes to bit `n`.
struct Script<'a> {
    channels: &'a [usize],
    next: usize,
    observed: usize,
    rewards: usize,
}

impl ChannelSelector for Script<'_> {
    fn select(&mut self) -> usize {
        let c = self.channels[self.next];
        self.next += 1;
        c
    }

    fn observe(&mut self, _channel: usize, reward: bool) {
        self.rewards |= (reward as usize) << self.observed;
        self.observed += 1;
    }
}

/// Busy masks read from the bits of one enumerated outcome. Slots the
/// device never uses are idle.
struct Enumerated<'a> {
    /// Position of each slot among the used slots, if used.
    slot_position: &'a [Option<usize>],
    channels: usize,
    bits: u64,
}

impl SlotBusySource for Enumerated<'_> {
    fn fill_mask(&mut self, slot: u64, mask: &mut [bool]) {
        let j = self.slot_position.get(slot as usize).copied().flatten();
        for (k, busy) in mask.iter_mut().enumerate() {
            *busy = j.is_some_and(|j| self.bits >> (j * self.channels + k) & 1 == 1);
        }
    }
}

/// Occupancy of channel `k` is `numerators[k] / denominator`.
pub struct BruteForce {
    pub numerators: Vec<u128>,
    pub denominator: u128,
    pub horizon: usize,
}

/// Reward-vector distributions for one channel sequence, as integer weights
/// over `denominator^(bits)`; index = reward bits (message `n` -> bit `n`).
#[derive(Debug, PartialEq, Eq)]
pub struct Tables {
    pub simulated: Vec<u128>,
    pub closed_form: Vec<u128>,
}

impl BruteForce {
    fn timing() -> MacTiming {
        // three slots per period: uplink, ACK, idle
        MacTiming { uplink_duration: 1.0, ack_delay: 0.5, ack_duration: 1.0, inter_message_period: 3.0 }
    }

    pub fn channels(&self) -> usize {
        self.numerators.len()
    }

    /// All `channels^horizon` channel sequences.
    pub fn sequences(&self) -> Vec<Vec<usize>> {
        let k = self.channels();
        (0..k.pow(self.horizon as u32))
            .map(|mut code| {
                (0..self.horizon)
                    .map(|_| {
                        let c = code % k;
                        code /= k;
                        c
                    })
                    .collect()
            })
            .collect()
    }

    fn used_slots(&self) -> Vec<u64> {
        (0..self.horizon as u64).flat_map(|n| [3 * n, 3 * n + 1]).collect()
    }

    /// Probability weight of every mask outcome; bit `j * K + k` is channel
    /// `k` in the `j`-th used slot.
    pub fn weights(&self) -> Vec<u128> {
        let k = self.channels();
        let total_bits = self.used_slots().len() * k;
        let mut w = vec![1u128];
        for b in 0..total_bits {
            let a = self.numerators[b % k];
            let idle = self.denominator - a;
            let mut next = Vec::with_capacity(w.len() * 2);
            next.extend(w.iter().map(|x| x * idle));
            next.extend(w.iter().map(|x| x * a));
            w = next;
        }
        w
    }

    pub fn tables(&self, sequence: &[usize], weights: &[u128]) -> Tables {
        let k = self.channels();
        let used_slots = self.used_slots();
        let outcomes = 1usize << self.horizon;
        assert_eq!(weights.len(), 1 << (used_slots.len() * k));
        let last = *used_slots.last().unwrap() as usize;
        let slot_position: Vec<Option<usize>> =
            (0..=last as u64).map(|s| used_slots.iter().position(|&u| u == s)).collect();

        let simulated = (0..weights.len() as u64)
            .into_par_iter()
            .fold(
                || vec![0u128; outcomes],
                |mut acc, bits| {
                    let setup = DeviceSetup {
                        id: 0,
                        phy_index: DeviceIndex::PlusPlus,
                        selector: Script { channels: sequence, next: 0, observed: 0, rewards: 0 },
                        phase_offset: 0.0,
                    };
                    let source = Enumerated { slot_position: &slot_position, channels: k, bits };
                    let out = simulate(k, &Self::timing(), self.horizon as u64, vec![setup], Background::Slotted(source));
                    acc[out.selectors[0].rewards] += weights[bits as usize];
                    acc
                },
            )
            .reduce(
                || vec![0u128; outcomes],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            );

        // each message succeeds iff its uplink and ACK slots are idle on its
        // channel; the other bits integrate out
        let d = self.denominator;
        let closed_form = (0..outcomes)
            .map(|code| {
                let mut w: u128 = 1;
                for (n, &c) in sequence.iter().enumerate() {
                    let free = (d - self.numerators[c]).pow(2);
                    let p = if code >> n & 1 == 1 { free } else { d * d - free };
                    w *= p * d.pow(2 * (k as u32 - 1));
                }
                w
            })
            .collect();
        Tables { simulated, closed_form }
    }
}
