//! Simplified QPSK frame codec.
//!
//! A frame is a known preamble followed by one device-index symbol. The
//! gateway acknowledges an uplink with a frame of the same shape whose index
//! is the complex conjugate of the uplink's index (`1+1j` is acked with
//! `1-1j`). The receiver estimates a constant phase rotation from the
//! preamble, removes it, and makes a hard decision on the index symbol.

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const DEFAULT_PREAMBLE_LEN: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PhyError {
    #[error("preamble length {got} does not match codec preamble length {expected}")]
    PreambleLength { expected: usize, got: usize },
    #[error("`{0}` is not a QPSK constellation point (expected one of 1+1j, 1-1j, -1+1j, -1-1j)")]
    NotAConstellationPoint(String),
}

/// One of the four QPSK constellation points.
///
/// Declaration order is the fixed constellation order used to break
/// hard-decision ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeviceIndex {
    /// `1+1j`
    PlusPlus,
    /// `1-1j`
    PlusMinus,
    /// `-1+1j`
    MinusPlus,
    /// `-1-1j`
    MinusMinus,
}

impl DeviceIndex {
    pub const ALL: [DeviceIndex; 4] = [
        DeviceIndex::PlusPlus,
        DeviceIndex::PlusMinus,
        DeviceIndex::MinusPlus,
        DeviceIndex::MinusMinus,
    ];

    pub fn symbol(self) -> Complex64 {
        match self {
            DeviceIndex::PlusPlus => Complex64::new(1.0, 1.0),
            DeviceIndex::PlusMinus => Complex64::new(1.0, -1.0),
            DeviceIndex::MinusPlus => Complex64::new(-1.0, 1.0),
            DeviceIndex::MinusMinus => Complex64::new(-1.0, -1.0),
        }
    }

    pub fn conj(self) -> DeviceIndex {
        match self {
            DeviceIndex::PlusPlus => DeviceIndex::PlusMinus,
            DeviceIndex::PlusMinus => DeviceIndex::PlusPlus,
            DeviceIndex::MinusPlus => DeviceIndex::MinusMinus,
            DeviceIndex::MinusMinus => DeviceIndex::MinusPlus,
        }
    }

    /// Exact match against a constellation point.
    pub fn from_symbol(symbol: Complex64) -> Option<DeviceIndex> {
        DeviceIndex::ALL.into_iter().find(|d| d.symbol() == symbol)
    }

    /// Nearest constellation point; ties go to the earlier point in
    /// [`DeviceIndex::ALL`].
    pub fn nearest(symbol: Complex64) -> DeviceIndex {
        let mut best = DeviceIndex::ALL[0];
        let mut best_dist = (symbol - best.symbol()).norm_sqr();
        for candidate in &DeviceIndex::ALL[1..] {
            let dist = (symbol - candidate.symbol()).norm_sqr();
            if dist < best_dist {
                best = *candidate;
                best_dist = dist;
            }
        }
        best
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceIndex::PlusPlus => "1+1j",
            DeviceIndex::PlusMinus => "1-1j",
            DeviceIndex::MinusPlus => "-1+1j",
            DeviceIndex::MinusMinus => "-1-1j",
        }
    }
}

impl std::fmt::Display for DeviceIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DeviceIndex {
    type Err = PhyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        DeviceIndex::ALL
            .into_iter()
            .find(|d| d.as_str() == compact)
            .ok_or_else(|| PhyError::NotAConstellationPoint(s.to_string()))
    }
}

impl Serialize for DeviceIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DeviceIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub preamble: Vec<Complex64>,
    pub index: Complex64,
}

impl Frame {
    pub fn len(&self) -> usize {
        self.preamble.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.preamble.iter().copied().chain(std::iter::once(self.index))
    }
}

/// Encoder/decoder bound to one preamble pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCodec {
    preamble: Vec<Complex64>,
}

impl Default for FrameCodec {
    fn default() -> Self {
        FrameCodec::with_preamble_len(DEFAULT_PREAMBLE_LEN)
    }
}

impl FrameCodec {
    /// Alternating `1+1j, -1-1j, ...` preamble of the given length.
    ///
    /// # Panics
    /// If `len == 0`; phase estimation needs at least one reference symbol.
    pub fn with_preamble_len(len: usize) -> Self {
        assert!(len > 0, "preamble must contain at least one symbol");
        let preamble = (0..len)
            .map(|i| {
                if i % 2 == 0 {
                    DeviceIndex::PlusPlus.symbol()
                } else {
                    DeviceIndex::MinusMinus.symbol()
                }
            })
            .collect();
        FrameCodec { preamble }
    }

    pub fn preamble(&self) -> &[Complex64] {
        &self.preamble
    }

    pub fn encode_uplink(&self, idx: DeviceIndex) -> Frame {
        Frame {
            preamble: self.preamble.clone(),
            index: idx.symbol(),
        }
    }

    pub fn encode_ack(&self, uplink_idx: DeviceIndex) -> Frame {
        Frame {
            preamble: self.preamble.clone(),
            index: uplink_idx.symbol().conj(),
        }
    }

    /// Phase of the correlation between the received and reference preambles.
    pub fn estimate_phase(&self, received: &Frame) -> Result<f64, PhyError> {
        if received.preamble.len() != self.preamble.len() {
            return Err(PhyError::PreambleLength {
                expected: self.preamble.len(),
                got: received.preamble.len(),
            });
        }
        let corr: Complex64 = received
            .preamble
            .iter()
            .zip(&self.preamble)
            .map(|(rx, reference)| rx * reference.conj())
            .sum();
        Ok(corr.arg())
    }

    pub fn decode(&self, received: &Frame) -> Result<DeviceIndex, PhyError> {
        let theta = self.estimate_phase(received)?;
        let derotated = received.index * Complex64::from_polar(1.0, -theta);
        Ok(DeviceIndex::nearest(derotated))
    }
}

pub fn encode_uplink(idx: DeviceIndex) -> Frame {
    FrameCodec::default().encode_uplink(idx)
}

pub fn encode_ack(uplink_idx: DeviceIndex) -> Frame {
    FrameCodec::default().encode_ack(uplink_idx)
}

/// Decodes with the default preamble.
pub fn decode_frame(received: &Frame) -> Result<DeviceIndex, PhyError> {
    FrameCodec::default().decode(received)
}

/// Rotates every symbol by `exp(j * theta)`.
pub fn apply_phase_offset(frame: &Frame, theta: f64) -> Frame {
    let rot = Complex64::from_polar(1.0, theta);
    Frame {
        preamble: frame.preamble.iter().map(|s| s * rot).collect(),
        index: frame.index * rot,
    }
}

/// True iff `decoded` is the conjugate of `mine`.
pub fn is_ack_for(decoded: DeviceIndex, mine: DeviceIndex) -> bool {
    decoded.symbol() == mine.symbol().conj()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn approx(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn uplink_ends_with_index() {
        let f = encode_uplink(DeviceIndex::PlusPlus);
        assert_eq!(f.index, Complex64::new(1.0, 1.0));
        assert_eq!(f.len(), DEFAULT_PREAMBLE_LEN + 1);
        assert_eq!(f.symbols().last(), Some(Complex64::new(1.0, 1.0)));
        assert_eq!(encode_uplink(DeviceIndex::MinusMinus).index, Complex64::new(-1.0, -1.0));
    }

    #[test]
    fn preamble_alternates() {
        let codec = FrameCodec::with_preamble_len(4);
        let p = codec.preamble();
        assert_eq!(p[0], Complex64::new(1.0, 1.0));
        assert_eq!(p[1], Complex64::new(-1.0, -1.0));
        assert_eq!(p[2], p[0]);
        assert_eq!(p[3], p[1]);
    }

    #[test]
    fn ack_carries_conjugate() {
        assert_eq!(encode_ack(DeviceIndex::PlusPlus).index, Complex64::new(1.0, -1.0));
        assert_eq!(encode_ack(DeviceIndex::MinusPlus).index, Complex64::new(-1.0, -1.0));
        for d in DeviceIndex::ALL {
            assert_eq!(d.conj().conj(), d);
            assert_eq!(d.conj().symbol(), d.symbol().conj());
        }
    }

    #[test]
    fn phase_offset_examples() {
        let f = encode_uplink(DeviceIndex::PlusPlus);
        assert_eq!(apply_phase_offset(&f, 0.0), f);
        let half = apply_phase_offset(&f, PI);
        for (a, b) in half.symbols().zip(f.symbols()) {
            assert!(approx(a, -b));
        }
        let quarter = apply_phase_offset(&f, FRAC_PI_2);
        assert!(approx(quarter.index, Complex64::new(-1.0, 1.0)));
    }

    #[test]
    fn decode_removes_rotation() {
        let f = encode_uplink(DeviceIndex::PlusPlus);
        assert_eq!(decode_frame(&f), Ok(DeviceIndex::PlusPlus));
        assert_eq!(
            decode_frame(&apply_phase_offset(&f, FRAC_PI_2)),
            Ok(DeviceIndex::PlusPlus)
        );
        for theta in [0.0, FRAC_PI_4, FRAC_PI_2] {
            let ack = apply_phase_offset(&encode_ack(DeviceIndex::PlusPlus), theta);
            assert_eq!(decode_frame(&ack), Ok(DeviceIndex::PlusMinus));
        }
    }

    #[test]
    fn decode_rejects_wrong_preamble_length() {
        let f = FrameCodec::with_preamble_len(3).encode_uplink(DeviceIndex::PlusPlus);
        assert_eq!(
            decode_frame(&f),
            Err(PhyError::PreambleLength { expected: 8, got: 3 })
        );
    }

    #[test]
    fn nearest_tie_break_follows_constellation_order() {
        assert_eq!(DeviceIndex::nearest(Complex64::new(0.0, 0.0)), DeviceIndex::PlusPlus);
        // equidistant from 1-1j and -1-1j
        assert_eq!(DeviceIndex::nearest(Complex64::new(0.0, -1.0)), DeviceIndex::PlusMinus);
        assert_eq!(DeviceIndex::nearest(Complex64::new(-0.9, -1.3)), DeviceIndex::MinusMinus);
    }

    #[test]
    fn ack_addressing() {
        assert!(is_ack_for(DeviceIndex::PlusMinus, DeviceIndex::PlusPlus));
        assert!(!is_ack_for(DeviceIndex::PlusPlus, DeviceIndex::PlusPlus));
        assert!(!is_ack_for(DeviceIndex::MinusMinus, DeviceIndex::PlusPlus));
    }

    #[test]
    fn round_trip_all_indices_and_phases() {
        for d in DeviceIndex::ALL {
            for i in 0..64 {
                let theta = 2.0 * PI * i as f64 / 64.0;
                let rx = apply_phase_offset(&encode_uplink(d), theta);
                assert_eq!(decode_frame(&rx), Ok(d), "idx {d} theta {theta}");
            }
        }
    }

    #[test]
    fn parse_and_display() {
        for d in DeviceIndex::ALL {
            assert_eq!(d.as_str().parse::<DeviceIndex>(), Ok(d));
            assert_eq!(DeviceIndex::from_symbol(d.symbol()), Some(d));
        }
        assert_eq!(" -1 + 1j ".parse::<DeviceIndex>(), Ok(DeviceIndex::MinusPlus));
        assert!("1+2j".parse::<DeviceIndex>().is_err());
        assert_eq!(DeviceIndex::from_symbol(Complex64::new(0.5, 1.0)), None);
    }
}
