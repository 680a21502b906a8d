//! Time-ordered event queue.

use std::collections::VecDeque;

/// Event kinds. Declaration order is the tie-break order for events at the
/// same instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    UplinkStart,
    UplinkEnd,
    AckStart,
    AckEnd,
    SlotBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
    /// Unknown for an `UplinkStart` until the device has chosen; `None` for
    /// slot boundaries.
    pub channel: Option<usize>,
    pub device: Option<usize>,
}

/// Queue entry: `(time, kind and device, insertion order)` packed so that
/// plain integer order is queue order, plus the channel.
#[derive(Debug)]
struct Entry {
    key: (u64, u64, u64),
    channel: Option<u32>,
}

/// Maps `f64` to `u64` preserving `f64::total_cmp` order.
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | 1 << 63
    }
}

fn from_ordered_bits(o: u64) -> f64 {
    f64::from_bits(if o >> 63 == 1 { o & !(1 << 63) } else { !o })
}

const KINDS: [EventKind; 5] = [
    EventKind::UplinkStart,
    EventKind::UplinkEnd,
    EventKind::AckStart,
    EventKind::AckEnd,
    EventKind::SlotBoundary,
];

fn pack(kind: EventKind, device: Option<usize>) -> u64 {
    // `None` sorts before every device, as with `Option`'s order
    let dev = device.map_or(0, |d| d as u64 + 1);
    debug_assert!(dev < 1 << 60);
    (kind as u64) << 60 | dev
}

fn unpack(packed: u64) -> (EventKind, Option<usize>) {
    let dev = packed & ((1 << 60) - 1);
    (KINDS[(packed >> 60) as usize], dev.checked_sub(1).map(|d| d as usize))
}

impl Entry {
    fn event(&self) -> SimEvent {
        let (kind, device) = unpack(self.key.1);
        SimEvent {
            time: from_ordered_bits(self.key.0),
            kind,
            channel: self.channel.map(|c| c as usize),
            device,
        }
    }
}

/// Min-queue on `(time, kind, device, insertion order)`.
///
/// Kept as a deque sorted in ascending key order. The engine holds only a
/// few events per device and almost always schedules past every pending
/// one, so appending and swapping backward into place rarely moves anything,
/// and popping the front is O(1).
#[derive(Debug, Default)]
pub struct EventQueue {
    sorted: VecDeque<Entry>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        EventQueue { sorted: VecDeque::with_capacity(capacity), next_seq: 0 }
    }

    pub fn push(&mut self, event: SimEvent) {
        debug_assert!(event.time.is_finite());
        let seq = self.next_seq;
        self.next_seq += 1;
        let key = (ordered_bits(event.time), pack(event.kind, event.device), seq);
        let channel = event.channel.map(|c| u32::try_from(c).expect("channel fits in u32"));
        // keys are unique (insertion order breaks ties), so this is exact
        self.sorted.push_back(Entry { key, channel });
        let mut i = self.sorted.len() - 1;
        while i > 0 && self.sorted[i - 1].key > key {
            self.sorted.swap(i - 1, i);
            i -= 1;
        }
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.sorted.pop_front().map(|e| e.event())
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }
}
