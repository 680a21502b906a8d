//! Single-threaded event loop.
//!
//! Frames (uplinks and ACKs) occupy one channel for a closed time interval.
//! A frame is lost if any other frame on the same channel overlaps it by a
//! nonzero amount, or if background interference touches it. Both frames of
//! an overlapping pair are lost, including an uplink arriving while the
//! gateway transmits an ACK on that channel. The gateway sends at most one ACK
//! per channel at a time; an ACK that cannot start on time is dropped.
//!
//! In slotted mode the slot length is the uplink duration, every frame fills
//! exactly one slot, and the ACK of an uplink in slot `s` occupies slot
//! `s + 1`. Slot-boundary events are only scheduled for slots that carry a
//! frame; the busy masks of the slots in between are still drawn, in order,
//! so the background realization does not depend on device activity.

use crate::phy_frame::DeviceIndex;
use crate::policies::PolicyState;
use crate::traffic::{BusyInterval, SlottedTraffic};

use super::event::{EventKind, EventQueue, SimEvent};
use super::{MacTiming, TransmissionRecord};

/// Anything that picks a channel and learns from the binary outcome.
pub trait ChannelSelector {
    fn select(&mut self) -> usize;
    fn observe(&mut self, channel: usize, reward: bool);
}

impl ChannelSelector for PolicyState {
    fn select(&mut self) -> usize {
        self.choose().channel
    }

    fn observe(&mut self, channel: usize, reward: bool) {
        self.update(channel, reward)
            .expect("engine only reports channels the policy chose");
    }
}

/// Per-slot busy masks. Called once per slot, in increasing slot order,
/// with one entry per channel to overwrite.
pub trait SlotBusySource {
    fn fill_mask(&mut self, slot: u64, mask: &mut [bool]);
}

impl SlotBusySource for SlottedTraffic {
    fn fill_mask(&mut self, _slot: u64, mask: &mut [bool]) {
        self.fill_next_mask(mask)
    }
}

pub enum Background<B> {
    Slotted(B),
    /// Interferer packets per channel, sorted by start, all of equal length.
    Continuous(Vec<Vec<BusyInterval>>),
}

pub struct DeviceSetup<S> {
    pub id: usize,
    pub phy_index: DeviceIndex,
    pub selector: S,
    /// Seconds after time zero of the first uplink. Rounded down to a whole
    /// slot in slotted mode.
    pub phase_offset: f64,
}

pub struct SimOutput<S> {
    /// Sorted by `(time, device)`.
    pub records: Vec<TransmissionRecord>,
    pub selectors: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FrameKind {
    Uplink,
    Ack,
}

#[derive(Debug, Clone, Copy)]
struct ActiveFrame {
    channel: usize,
    owner: usize,
    kind: FrameKind,
    end: f64,
    collided: bool,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    seq: u64,
    channel: usize,
    start: f64,
    uplink_end: f64,
    slot: u64,
    ack_start: f64,
    ack_end: f64,
}

struct DeviceRt<S> {
    id: usize,
    selector: S,
    first_time: f64,
    first_slot: u64,
    sent: u64,
    pending: Option<Pending>,
}

struct Engine<S, B> {
    timing: MacTiming,
    horizon: u64,
    slots_per_period: u64,
    devices: Vec<DeviceRt<S>>,
    background: Background<B>,
    /// Frames on the air, all channels.
    active: Vec<ActiveFrame>,
    gateway_busy_until: Vec<f64>,
    queue: EventQueue,
    current_slot: Option<u64>,
    /// Lowest slot without a scheduled boundary event.
    next_boundary: u64,
    current_mask: Vec<bool>,
    records: Vec<TransmissionRecord>,
}

/// Runs `devices` against `background` until each device has sent `horizon`
/// messages.
///
/// # Panics
/// In slotted mode if `timing` has no whole number of at least three slots
/// per period (see [`MacTiming::slots_per_period`]).
pub fn simulate<S: ChannelSelector, B: SlotBusySource>(
    channels: usize,
    timing: &MacTiming,
    horizon: u64,
    devices: Vec<DeviceSetup<S>>,
    background: Background<B>,
) -> SimOutput<S> {
    let slotted = matches!(background, Background::Slotted(_));
    let slots_per_period = if slotted {
        timing
            .slots_per_period()
            .expect("slotted mode needs a whole number of >= 3 slots per period")
    } else {
        0
    };
    let devices: Vec<DeviceRt<S>> = devices
        .into_iter()
        .map(|d| {
            let (first_time, first_slot) = if slotted {
                let slot = (d.phase_offset / timing.uplink_duration).floor() as u64 % slots_per_period;
                (slot as f64 * timing.uplink_duration, slot)
            } else {
                (d.phase_offset, 0)
            };
            DeviceRt {
                id: d.id,
                selector: d.selector,
                first_time,
                first_slot,
                sent: 0,
                pending: None,
            }
        })
        .collect();
    let devices_len = devices.len();
    let mut engine = Engine {
        timing: *timing,
        horizon,
        slots_per_period,
        devices,
        background,
        active: Vec::with_capacity(2 * devices_len),
        gateway_busy_until: vec![f64::NEG_INFINITY; channels],
        queue: EventQueue::with_capacity(4 * devices_len + 4),
        current_slot: None,
        next_boundary: 0,
        current_mask: vec![false; channels],
        records: Vec::with_capacity(0),
    };
    engine.records.reserve(engine.devices.len() * horizon as usize);
    engine.run();

    let Engine { mut records, devices, .. } = engine;
    let order = |a: &TransmissionRecord, b: &TransmissionRecord| a.time.total_cmp(&b.time).then(a.device.cmp(&b.device));
    if !records.is_sorted_by(|a, b| order(a, b).is_le()) {
        records.sort_by(order);
    }
    SimOutput {
        records,
        selectors: devices.into_iter().map(|d| d.selector).collect(),
    }
}

impl<S: ChannelSelector, B: SlotBusySource> Engine<S, B> {
    fn slotted(&self) -> bool {
        matches!(self.background, Background::Slotted(_))
    }

    fn slot_time(&self, slot: u64) -> f64 {
        slot as f64 * self.timing.uplink_duration
    }

    fn run(&mut self) {
        if self.horizon == 0 {
            return;
        }
        for i in 0..self.devices.len() {
            let t = self.devices[i].first_time;
            self.push(t, EventKind::UplinkStart, None, Some(i));
        }
        while let Some(ev) = self.queue.pop() {
            match ev.kind {
                EventKind::UplinkStart => self.on_uplink_start(ev),
                EventKind::UplinkEnd => self.on_uplink_end(ev),
                EventKind::AckStart => self.on_ack_start(ev),
                EventKind::AckEnd => self.on_ack_end(ev),
                EventKind::SlotBoundary => self.on_slot_boundary(ev),
            }
        }
        debug_assert!(self.devices.iter().all(|d| d.sent == self.horizon && d.pending.is_none()));
    }

    fn push(&mut self, time: f64, kind: EventKind, channel: Option<usize>, device: Option<usize>) {
        self.queue.push(SimEvent { time, kind, channel, device });
    }

    /// Registers a frame, marking it and every frame it overlaps as collided.
    fn occupy(&mut self, channel: usize, owner: usize, kind: FrameKind, now: f64, end: f64) {
        let mut frame = ActiveFrame { channel, owner, kind, end, collided: false };
        for other in self.active.iter_mut().filter(|f| f.channel == channel) {
            if other.end > now {
                other.collided = true;
                frame.collided = true;
            }
        }
        self.active.push(frame);
    }

    fn release(&mut self, channel: usize, owner: usize, kind: FrameKind) -> ActiveFrame {
        let pos = self
            .active
            .iter()
            .position(|f| f.channel == channel && f.owner == owner && f.kind == kind)
            .expect("ending frame is active");
        self.active.swap_remove(pos)
    }

    fn background_hit(&self, channel: usize, slot: u64, start: f64, end: f64) -> bool {
        match &self.background {
            Background::Slotted(_) => {
                debug_assert_eq!(self.current_slot, Some(slot));
                self.current_mask[channel]
            }
            Background::Continuous(intervals) => overlaps_any(&intervals[channel], start, end),
        }
    }

    fn ensure_boundary(&mut self, slot: u64) {
        if slot >= self.next_boundary {
            self.push(self.slot_time(slot), EventKind::SlotBoundary, None, None);
            self.next_boundary = slot + 1;
        }
    }

    fn on_slot_boundary(&mut self, ev: SimEvent) {
        let slot = (ev.time / self.timing.uplink_duration).round() as u64;
        let first = self.current_slot.map_or(0, |s| s + 1);
        if let Background::Slotted(source) = &mut self.background {
            for s in first..=slot {
                source.fill_mask(s, &mut self.current_mask);
            }
        }
        self.current_slot = Some(slot);
    }

    fn on_uplink_start(&mut self, ev: SimEvent) {
        let i = ev.device.expect("uplink has a device");
        let now = ev.time;
        let slotted = self.slotted();
        let spp = self.slots_per_period;
        let timing = self.timing;
        let slot_time = |slot: u64| slot as f64 * timing.uplink_duration;
        let dev = &mut self.devices[i];
        debug_assert!(dev.pending.is_none(), "previous reward resolved before next message");
        let channel = dev.selector.select();
        let seq = dev.sent + 1;
        dev.sent = seq;
        let n = seq - 1;
        let (slot, uplink_end, ack_start, ack_end, next_time) = if slotted {
            let slot = dev.first_slot + n * spp;
            (
                slot,
                slot_time(slot + 1),
                slot_time(slot + 1),
                slot_time(slot + 2),
                slot_time(slot + spp),
            )
        } else {
            let end = now + timing.uplink_duration;
            let ack = end + timing.ack_delay;
            (
                0,
                end,
                ack,
                ack + timing.ack_duration,
                dev.first_time + (n + 1) as f64 * timing.inter_message_period,
            )
        };
        dev.pending = Some(Pending {
            seq,
            channel,
            start: now,
            uplink_end,
            slot,
            ack_start,
            ack_end,
        });
        let more = seq < self.horizon;
        if slotted {
            self.ensure_boundary(slot);
            self.ensure_boundary(slot + 1);
        }

        self.occupy(channel, i, FrameKind::Uplink, now, uplink_end);
        self.push(uplink_end, EventKind::UplinkEnd, Some(channel), Some(i));
        if more {
            self.push(next_time, EventKind::UplinkStart, None, Some(i));
        }
    }

    fn on_uplink_end(&mut self, ev: SimEvent) {
        let i = ev.device.expect("uplink has a device");
        let p = self.devices[i].pending.expect("pending uplink");
        let frame = self.release(p.channel, i, FrameKind::Uplink);
        let uplink_ok = !frame.collided && !self.background_hit(p.channel, p.slot, p.start, p.uplink_end);
        if uplink_ok {
            self.push(p.ack_start, EventKind::AckStart, Some(p.channel), Some(i));
        } else {
            self.finish(i, false, false, None);
        }
    }

    fn on_ack_start(&mut self, ev: SimEvent) {
        let i = ev.device.expect("ack has a device");
        let p = self.devices[i].pending.expect("pending ack");
        let now = ev.time;
        if self.gateway_busy_until[p.channel] > now {
            self.finish(i, true, false, None);
            return;
        }
        self.gateway_busy_until[p.channel] = p.ack_end;
        self.occupy(p.channel, i, FrameKind::Ack, now, p.ack_end);
        self.push(p.ack_end, EventKind::AckEnd, Some(p.channel), Some(i));
    }

    fn on_ack_end(&mut self, ev: SimEvent) {
        let i = ev.device.expect("ack has a device");
        let p = self.devices[i].pending.expect("pending ack");
        let frame = self.release(p.channel, i, FrameKind::Ack);
        let ack_ok =
            !frame.collided && !self.background_hit(p.channel, p.slot + 1, p.ack_start, p.ack_end);
        self.finish(i, true, ack_ok, Some(p.ack_start));
    }

    fn finish(&mut self, i: usize, uplink_ok: bool, ack_ok: bool, ack_time: Option<f64>) {
        let dev = &mut self.devices[i];
        let p = dev.pending.take().expect("pending transmission");
        let reward = uplink_ok && ack_ok;
        dev.selector.observe(p.channel, reward);
        self.records.push(TransmissionRecord {
            device: dev.id,
            seq: p.seq,
            channel: p.channel,
            uplink_ok,
            ack_ok,
            reward,
            time: p.start,
            ack_time,
        });
    }
}

/// True if any interval in `sorted` (sorted by start, equal lengths) overlaps
/// `(start, end)` by a nonzero amount.
pub fn overlaps_any(sorted: &[BusyInterval], start: f64, end: f64) -> bool {
    let first = sorted.partition_point(|iv| iv.end <= start);
    sorted.get(first).is_some_and(|iv| iv.start < end)
}
