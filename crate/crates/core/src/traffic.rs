//! Background interference from uncoordinated neighbouring networks.
//!
//! Two stationary models:
//!
//! - slotted Bernoulli: each channel is independently busy in each slot with
//!   probability `p_k`;
//! - pure-ALOHA Poisson: interferer packets of fixed duration start on
//!   channel `k` as a homogeneous Poisson process of rate `lambda_k`.
//!
//! `occupancy_from_rate` and `calibrate_rate` map between the two, and
//! `calibrate_scenario` scales all Poisson rates so that a uniformly random
//! channel choice succeeds with a chosen probability.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("occupancy[{channel}] = {value} is outside [0, 1]")]
    OccupancyOutOfRange { channel: usize, value: f64 },
    #[error("occupancy {0} is not reachable: a channel busy with probability >= 1 has no finite rate")]
    InfeasibleOccupancy(f64),
    #[error("lambda[{channel}] = {value} must be finite and non-negative")]
    InvalidRate { channel: usize, value: f64 },
    #[error("packet duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error(
        "uniform success target {target} is not achievable; reachable range is ({min}, {max}]"
    )]
    CalibrationInfeasible { target: f64, min: f64, max: f64 },
}

/// Per-channel busy probability per slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct OccupancyVector(Vec<f64>);

impl OccupancyVector {
    pub fn new(p: Vec<f64>) -> Result<Self, TrafficError> {
        for (channel, &value) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(TrafficError::OccupancyOutOfRange { channel, value });
            }
        }
        Ok(OccupancyVector(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonTrafficConfig {
    /// Interferer packet arrivals per second, per channel.
    pub lambda: Vec<f64>,
    /// Interferer packet length in seconds.
    pub packet_duration: f64,
}

impl PoissonTrafficConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(self.packet_duration > 0.0 && self.packet_duration.is_finite()) {
            return Err(TrafficError::InvalidDuration(self.packet_duration));
        }
        for (channel, &value) in self.lambda.iter().enumerate() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(TrafficError::InvalidRate { channel, value });
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> PoissonTrafficConfig {
        PoissonTrafficConfig {
            lambda: self.lambda.iter().map(|l| l * factor).collect(),
            packet_duration: self.packet_duration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusyInterval {
    pub channel: usize,
    pub start: f64,
    pub end: f64,
}

/// Draws one busy mask: channel `k` is busy with probability `p[k]`.
///
/// Consumes exactly one `f64` per channel, in channel order.
pub fn slotted_busy_sample<R: Rng + ?Sized>(p: &OccupancyVector, rng: &mut R) -> Vec<bool> {
    p.0.iter().map(|&pk| rng.random::<f64>() < pk).collect()
}

/// Sorted arrival times of a homogeneous Poisson process on `[t0, t1)`.
pub fn poisson_arrivals<R: Rng + ?Sized>(rate: f64, t0: f64, t1: f64, rng: &mut R) -> Vec<f64> {
    debug_assert!(t0 < t1);
    if rate <= 0.0 {
        return Vec::new();
    }
    let exp = Exp::new(rate).expect("rate is positive");
    let mut out = Vec::with_capacity(((t1 - t0) * rate * 1.1) as usize + 8);
    let mut t = t0 + exp.sample(rng);
    while t < t1 {
        out.push(t);
        t += exp.sample(rng);
    }
    out
}

/// Probability that an M/D/inf channel is busy at a random instant.
pub fn occupancy_from_rate(rate: f64, packet_duration: f64) -> f64 {
    -(-rate * packet_duration).exp_m1()
}

/// Inverse of [`occupancy_from_rate`].
pub fn calibrate_rate(target_occupancy: f64, packet_duration: f64) -> Result<f64, TrafficError> {
    if !(0.0..1.0).contains(&target_occupancy) {
        return Err(TrafficError::InfeasibleOccupancy(target_occupancy));
    }
    if !(packet_duration > 0.0 && packet_duration.is_finite()) {
        return Err(TrafficError::InvalidDuration(packet_duration));
    }
    Ok(-(-target_occupancy).ln_1p() / packet_duration)
}

/// Frame durations that determine how long a transmission is exposed to
/// interferers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exposure {
    pub uplink_duration: f64,
    pub ack_delay: f64,
    pub ack_duration: f64,
}

impl Exposure {
    /// Total length of the windows in which an interferer start destroys the
    /// uplink or its ACK. Interferers of duration `D` hit a frame of length
    /// `d` if they start within `d + D`; the two windows merge when the ACK
    /// delay is shorter than `D`.
    pub fn vulnerable_time(&self, interferer_duration: f64) -> f64 {
        let d = interferer_duration;
        if self.ack_delay >= d {
            self.uplink_duration + self.ack_duration + 2.0 * d
        } else {
            self.uplink_duration + self.ack_delay + self.ack_duration + d
        }
    }
}

/// Success probability of a lone transmission on a channel with Poisson
/// interferer rate `rate`: the void probability over the vulnerable windows.
pub fn aloha_success_prob(rate: f64, interferer_duration: f64, exposure: &Exposure) -> f64 {
    (-rate * exposure.vulnerable_time(interferer_duration)).exp()
}

/// Mean over channels of [`aloha_success_prob`]: the analytic success rate of
/// a lone uniformly random device.
pub fn uniform_success(config: &PoissonTrafficConfig, exposure: &Exposure) -> f64 {
    let k = config.lambda.len() as f64;
    config
        .lambda
        .iter()
        .map(|&l| aloha_success_prob(l, config.packet_duration, exposure))
        .sum::<f64>()
        / k
}

/// Scale factor `s` such that multiplying every rate by `s` gives the target
/// uniform success, found by bisection to within `1e-12` of the target.
pub fn calibrate_scenario(
    config: &PoissonTrafficConfig,
    exposure: &Exposure,
    target_uniform_success: f64,
) -> Result<f64, TrafficError> {
    config.validate()?;
    let success_at = |s: f64| uniform_success(&config.scaled(s), exposure);
    // Success tends to the share of interference-free channels as s grows.
    let free = config.lambda.iter().filter(|&&l| l == 0.0).count() as f64;
    let floor = free / config.lambda.len().max(1) as f64;
    let infeasible = || TrafficError::CalibrationInfeasible {
        target: target_uniform_success,
        min: floor,
        max: 1.0,
    };
    if config.lambda.is_empty()
        || !(target_uniform_success > floor && target_uniform_success <= 1.0)
    {
        return Err(infeasible());
    }
    if success_at(0.0) <= target_uniform_success {
        // Only s = 0 reaches a target of exactly 1.
        return if target_uniform_success == 1.0 { Ok(0.0) } else { Err(infeasible()) };
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    while success_at(hi) > target_uniform_success {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(infeasible());
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if success_at(mid) > target_uniform_success {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Slotted Bernoulli background with one random stream per channel.
#[derive(Debug, Clone)]
pub struct SlottedTraffic {
    p: OccupancyVector,
    streams: Vec<ChaCha8Rng>,
}

impl SlottedTraffic {
    pub fn new(p: OccupancyVector, seed: u64) -> Self {
        let streams = (0..p.len())
            .map(|k| seed::stream(seed, seed::TAG_TRAFFIC_CHANNEL, k as u64))
            .collect();
        SlottedTraffic { p, streams }
    }

    /// Busy mask of the next slot.
    pub fn next_mask(&mut self) -> Vec<bool> {
        let mut mask = vec![false; self.p.len()];
        self.fill_next_mask(&mut mask);
        mask
    }

    /// Like [`next_mask`](Self::next_mask), writing into `mask`.
    pub fn fill_next_mask(&mut self, mask: &mut [bool]) {
        for ((busy, &pk), rng) in mask.iter_mut().zip(&self.p.0).zip(self.streams.iter_mut()) {
            *busy = rng.random::<f64>() < pk;
        }
    }
}

/// Poisson interferer packets, one random stream per channel.
#[derive(Debug, Clone)]
pub struct PoissonTraffic {
    config: PoissonTrafficConfig,
    seed: u64,
}

impl PoissonTraffic {
    pub fn new(config: PoissonTrafficConfig, seed: u64) -> Self {
        PoissonTraffic { config, seed }
    }

    pub fn config(&self) -> &PoissonTrafficConfig {
        &self.config
    }

    /// Every interferer packet overlapping `[t0, t1)`, per channel, sorted by
    /// start. Arrivals are drawn from `t0 - packet_duration` so packets
    /// already on the air at `t0` are included.
    pub fn intervals(&self, t0: f64, t1: f64) -> Vec<Vec<BusyInterval>> {
        let d = self.config.packet_duration;
        self.config
            .lambda
            .iter()
            .enumerate()
            .map(|(channel, &rate)| {
                let mut rng = seed::stream(self.seed, seed::TAG_TRAFFIC_CHANNEL, channel as u64);
                poisson_arrivals(rate, t0 - d, t1, &mut rng)
                    .into_iter()
                    .map(|start| BusyInterval {
                        channel,
                        start,
                        end: start + d,
                    })
                    .collect()
            })
            .collect()
    }
}

/// Fraction of `[t0, t1]` covered by the union of `intervals` (sorted by
/// start).
pub fn covered_fraction(intervals: &[BusyInterval], t0: f64, t1: f64) -> f64 {
    let mut covered = 0.0;
    let mut cursor = t0;
    for iv in intervals {
        let start = iv.start.max(cursor);
        let end = iv.end.min(t1);
        if end > start {
            covered += end - start;
            cursor = end;
        }
    }
    covered / (t1 - t0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    const REFERENCE_P: [f64; 4] = [0.15, 0.10, 0.02, 0.01];

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn occupancy_vector_validates() {
        assert!(OccupancyVector::new(vec![0.0, 1.0, 0.5]).is_ok());
        assert_eq!(
            OccupancyVector::new(vec![0.2, 1.2]),
            Err(TrafficError::OccupancyOutOfRange { channel: 1, value: 1.2 })
        );
        assert!(OccupancyVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn degenerate_masks() {
        let mut r = rng(1);
        let zero = OccupancyVector::new(vec![0.0; 4]).unwrap();
        let one = OccupancyVector::new(vec![1.0; 4]).unwrap();
        for _ in 0..1000 {
            assert_eq!(slotted_busy_sample(&zero, &mut r), vec![false; 4]);
            assert_eq!(slotted_busy_sample(&one, &mut r), vec![true; 4]);
        }
    }

    #[test]
    fn busy_frequencies_match_occupancy() {
        let p = OccupancyVector::new(REFERENCE_P.to_vec()).unwrap();
        let mut r = rng(2);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            for (c, b) in counts.iter_mut().zip(slotted_busy_sample(&p, &mut r)) {
                *c += b as usize;
            }
        }
        for (c, pk) in counts.iter().zip(REFERENCE_P) {
            assert!((*c as f64 / n as f64 - pk).abs() < 0.01);
        }
    }

    #[test]
    fn channels_are_uncorrelated() {
        let p = OccupancyVector::new(vec![0.3, 0.5, 0.15, 0.1]).unwrap();
        let mut traffic = SlottedTraffic::new(p, 3);
        let n = 100_000;
        let masks: Vec<Vec<bool>> = (0..n).map(|_| traffic.next_mask()).collect();
        let col = |k: usize| -> Vec<f64> { masks.iter().map(|m| m[k] as u8 as f64).collect() };
        for a in 0..4 {
            for b in (a + 1)..4 {
                let (x, y) = (col(a), col(b));
                let mx = x.iter().sum::<f64>() / n as f64;
                let my = y.iter().sum::<f64>() / n as f64;
                let cov: f64 = x.iter().zip(&y).map(|(u, v)| (u - mx) * (v - my)).sum::<f64>() / n as f64;
                let sx = (x.iter().map(|u| (u - mx).powi(2)).sum::<f64>() / n as f64).sqrt();
                let sy = (y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n as f64).sqrt();
                assert!((cov / (sx * sy)).abs() < 0.01, "channels {a},{b}");
            }
        }
    }

    #[test]
    fn zero_rate_has_no_arrivals() {
        assert!(poisson_arrivals(0.0, 0.0, 1e6, &mut rng(0)).is_empty());
    }

    #[test]
    fn arrival_count_and_spacing() {
        let arrivals = poisson_arrivals(5.0, 0.0, 1e4, &mut rng(4));
        let sigma = (5.0e4f64).sqrt();
        assert!((arrivals.len() as f64 - 5.0e4).abs() < 3.0 * sigma);
        assert!(arrivals.windows(2).all(|w| w[0] <= w[1]));
        assert!(arrivals.iter().all(|&t| (0.0..1e4).contains(&t)));

        let gaps = poisson_arrivals(5.0, 0.0, 2.2e4, &mut rng(5));
        let gaps: Vec<f64> = gaps.windows(2).take(100_000).map(|w| w[1] - w[0]).collect();
        assert_eq!(gaps.len(), 100_000);
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!((mean - 0.2).abs() < 0.2 * 0.01, "mean gap {mean}");
    }

    #[test]
    fn occupancy_rate_examples() {
        assert_eq!(occupancy_from_rate(0.0, 1.0), 0.0);
        assert!((occupancy_from_rate(2f64.ln(), 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(calibrate_rate(0.0, 1.0), Ok(0.0));
        assert!((calibrate_rate(0.15, 1.0).unwrap() - 0.162_518_929).abs() < 1e-8);
        assert!((calibrate_rate(0.5, 2.0).unwrap() - 2f64.ln() / 2.0).abs() < 1e-15);
        assert_eq!(calibrate_rate(1.0, 1.0), Err(TrafficError::InfeasibleOccupancy(1.0)));
        assert!(calibrate_rate(1.5, 1.0).is_err());
    }

    #[test]
    fn rate_round_trip() {
        for i in 0..1000 {
            let rate = 1e-3 + i as f64 * 0.37;
            let d = 0.25 + (i % 7) as f64 * 0.5;
            let back = calibrate_rate(occupancy_from_rate(rate, d), d).unwrap();
            assert!(((back - rate) / rate).abs() < 1e-12, "rate {rate}");
            if rate * d > 3.0 {
                break;
            }
        }
        for i in 0..1000 {
            let p = i as f64 / 1000.0;
            let back = occupancy_from_rate(calibrate_rate(p, 0.5).unwrap(), 0.5);
            assert!((back - p).abs() <= 1e-12 * p.max(1e-300), "p {p}");
        }
    }

    fn exposure(d: f64) -> Exposure {
        Exposure { uplink_duration: d, ack_delay: 1.0, ack_duration: d }
    }

    #[test]
    fn vulnerable_time_reduces_to_twice_frame_sum() {
        let e = exposure(0.5);
        assert_eq!(e.vulnerable_time(0.5), 2.0 * (0.5 + 0.5));
        // windows merge when the ACK delay is shorter than an interferer
        let short = Exposure { uplink_duration: 0.5, ack_delay: 0.2, ack_duration: 0.5 };
        assert!((short.vulnerable_time(0.5) - 1.7).abs() < 1e-15);
    }

    #[test]
    fn calibrate_fixed_point() {
        let cfg = PoissonTrafficConfig { lambda: vec![0.3, 0.1, 0.05, 0.01], packet_duration: 0.5 };
        let e = exposure(0.5);
        let target = uniform_success(&cfg, &e);
        let s = calibrate_scenario(&cfg, &e, target).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "s = {s}");
    }

    #[test]
    fn calibrate_equal_rates_half() {
        let lambda = 0.4;
        let cfg = PoissonTrafficConfig { lambda: vec![lambda; 4], packet_duration: 0.5 };
        let e = exposure(0.5);
        let target = (-2.0 * (lambda / 2.0) * (0.5 + 0.5)).exp();
        let s = calibrate_scenario(&cfg, &e, target).unwrap();
        assert!((s - 0.5).abs() < 1e-9, "s = {s}");
        assert!((uniform_success(&cfg.scaled(s), &e) - target).abs() < 1e-6);
    }

    #[test]
    fn calibrate_rejects_unreachable_targets() {
        let cfg = PoissonTrafficConfig { lambda: vec![0.0, 1.0], packet_duration: 0.5 };
        let e = exposure(0.5);
        // channel 0 is always free, so uniform success never drops below 0.5
        assert!(matches!(
            calibrate_scenario(&cfg, &e, 0.4),
            Err(TrafficError::CalibrationInfeasible { min, .. }) if min == 0.5
        ));
        assert!(calibrate_scenario(&cfg, &e, 1.5).is_err());
        assert!(calibrate_scenario(&cfg, &e, 0.6).is_ok());
    }

    #[test]
    fn generated_occupancy_matches_closed_form() {
        let d = 0.5;
        let rates = [0.8, 0.3, 0.05];
        let cfg = PoissonTrafficConfig { lambda: rates.to_vec(), packet_duration: d };
        let traffic = PoissonTraffic::new(cfg, 17);
        let horizon = 1e5;
        let ivs = traffic.intervals(0.0, horizon);
        for (k, rate) in rates.iter().enumerate() {
            assert!(ivs[k].iter().all(|iv| iv.channel == k && (iv.end - iv.start - d).abs() < 1e-12));
            let frac = covered_fraction(&ivs[k], 0.0, horizon);
            assert!((frac - occupancy_from_rate(*rate, d)).abs() < 0.01, "channel {k}: {frac}");
        }
    }

    #[test]
    fn traffic_is_deterministic() {
        let cfg = PoissonTrafficConfig { lambda: vec![0.5, 0.2], packet_duration: 0.5 };
        let a = PoissonTraffic::new(cfg.clone(), 9).intervals(0.0, 1000.0);
        let b = PoissonTraffic::new(cfg, 9).intervals(0.0, 1000.0);
        assert_eq!(a, b);
        let p = OccupancyVector::new(REFERENCE_P.to_vec()).unwrap();
        let mut x = SlottedTraffic::new(p.clone(), 4);
        let mut y = SlottedTraffic::new(p, 4);
        for _ in 0..100 {
            assert_eq!(x.next_mask(), y.next_mask());
        }
    }
}
