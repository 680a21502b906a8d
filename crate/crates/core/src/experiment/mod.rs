//! Seed-swept experiments: config files in, CSV and JSON metrics out.
//!
//! Repetition `i` runs with seed `seed::repetition_seed(master_seed, i)`, so
//! adding repetitions never changes the earlier ones. Repetitions run in
//! parallel and are assembled in index order; the output is identical to a
//! sequential run.

pub mod cli;
pub mod config;
pub mod output;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::mac_sim::{
    self, DeviceSpec, MacError, Scenario, SimulationRun, TransmissionRecord,
};
use crate::policies::{self, PolicyKind};
use crate::seed;
use crate::traffic::TrafficError;

pub use config::{
    load_config, parse_config, CalibrationConfig, ConfigError, DeviceConfig, PoissonBlock,
    ResolveError, ResolvedScenario, ScenarioConfig, Violation,
};
pub use output::{emit_csv, emit_summary_json, write_csv, OutputError};

/// Transmissions in the Monte Carlo side run that estimates `mu` when
/// devices share the medium.
pub const MU_ESTIMATE_SAMPLES: u64 = 100_000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("calibration failed: {0}")]
    Traffic(#[from] TrafficError),
    #[error("simulation failed: {0}")]
    Mac(#[from] MacError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

impl From<ResolveError> for ExperimentError {
    fn from(e: ResolveError) -> Self {
        match e {
            ResolveError::Config(c) => ExperimentError::Config(c),
            ResolveError::Traffic(t) => ExperimentError::Traffic(t),
        }
    }
}

impl ExperimentError {
    /// True for problems with the input document rather than the run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config(ConfigError::Syntax { .. } | ConfigError::Validation(_))
        )
    }
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub repetition: u64,
    pub device: usize,
    pub policy: PolicyKind,
    pub seq: u64,
    pub channel: usize,
    pub reward: bool,
    /// Mean reward over this device's last `rolling_window` messages
    /// (fewer at the start).
    pub rolling_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MuSource {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub devices: Vec<usize>,
    /// Successes over messages, pooled across repetitions and devices.
    pub final_success_rate: f64,
    /// Sample standard deviation of the per-repetition success rates.
    pub final_success_std: f64,
    pub per_repetition_success: Vec<f64>,
    /// Share of messages sent on the channel with the largest `mu`.
    pub best_channel_fraction: f64,
    /// Same, over the last quarter of the horizon.
    pub best_channel_fraction_final_quarter: f64,
    /// Transmissions per channel, summed over repetitions and devices.
    pub selection_counts: Vec<u64>,
    pub final_regret: f64,
}

/// The four per-channel panels: totals over repetitions and devices, and
/// the mean UCB index at the horizon (`null` if some arm was never tried).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelHistogram {
    pub policy: PolicyKind,
    pub transmissions: Vec<u64>,
    pub successes: Vec<u64>,
    pub ucb_indexes: Vec<Option<f64>>,
    pub success_rates: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSummary {
    pub count: usize,
    pub mu: Vec<f64>,
    pub mu_source: MuSource,
    pub best_channel: usize,
    /// Factor applied to the configured Poisson rates, if calibrated.
    pub calibration_scale: Option<f64>,
    pub histograms: Vec<ChannelHistogram>,
}

/// Means over every (repetition, device) pair of one policy; index `t - 1`
/// holds the value after message `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyCurves {
    pub policy: PolicyKind,
    pub cumulative_success_rate: Vec<f64>,
    pub rolling_success_rate: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub config: ScenarioConfig,
    pub policies: Vec<PolicySummary>,
    pub channels: ChannelSummary,
    pub curves: Vec<PolicyCurves>,
}

impl RunSummary {
    pub fn policy(&self, kind: PolicyKind) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.policy == kind)
    }

    pub fn curves_for(&self, kind: PolicyKind) -> Option<&PolicyCurves> {
        self.curves.iter().find(|c| c.policy == kind)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: RunSummary,
    pub rows: Vec<MetricsRow>,
}

/// `T * max(mu) - successes up to T`, for `T = 1..=records.len()`.
/// `records` are one device's messages in order.
pub fn compute_regret(records: &[TransmissionRecord], mu: &[f64]) -> Vec<f64> {
    let best = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut successes = 0u64;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            successes += r.reward as u64;
            (i + 1) as f64 * best - successes as f64
        })
        .collect()
}

/// Per-channel success probability seen by a device: closed form when each
/// device has the medium to itself, otherwise estimated from a side run in
/// which every device picks channels uniformly.
pub fn estimate_mu(scenario: &Scenario, master_seed: u64) -> Result<(Vec<f64>, MuSource), MacError> {
    if scenario.is_lone_device() {
        return Ok((mac_sim::per_channel_success_probs(scenario)?, MuSource::Analytic));
    }
    let n = scenario.devices.len() as u64;
    let side = Scenario {
        devices: scenario
            .devices
            .iter()
            .map(|d| DeviceSpec { policy: PolicyKind::Uniform, ..d.clone() })
            .collect(),
        horizon: MU_ESTIMATE_SAMPLES.div_ceil(n),
        ..scenario.clone()
    };
    let trace = mac_sim::run_simulation(&side, seed::derive(master_seed, seed::TAG_MU_ESTIMATE, 0))?;
    let mut sent = vec![0u64; scenario.channels];
    let mut ok = vec![0u64; scenario.channels];
    for r in &trace.records {
        sent[r.channel] += 1;
        ok[r.channel] += r.reward as u64;
    }
    let mu = sent
        .iter()
        .zip(&ok)
        .map(|(&s, &k)| if s == 0 { 0.0 } else { k as f64 / s as f64 })
        .collect();
    Ok((mu, MuSource::MonteCarlo))
}

/// Runs every repetition of `config` and aggregates the results.
pub fn run_experiment(config: &ScenarioConfig) -> Result<ExperimentOutput, ExperimentError> {
    let ResolvedScenario { scenario, calibration_scale } = config.resolve()?;
    let runs = (0..config.repetitions)
        .into_par_iter()
        .map(|i| mac_sim::run_simulation_detailed(&scenario, seed::repetition_seed(config.master_seed, i)))
        .collect::<Result<Vec<SimulationRun>, MacError>>()?;
    let (mu, mu_source) = estimate_mu(&scenario, config.master_seed)?;
    Ok(aggregate(config, &scenario, &runs, mu, mu_source, calibration_scale))
}

/// Per (repetition, device): rewards and channels in message order.
struct DeviceRun<'a> {
    records: Vec<&'a TransmissionRecord>,
}

fn aggregate(
    config: &ScenarioConfig,
    scenario: &Scenario,
    runs: &[SimulationRun],
    mu: Vec<f64>,
    mu_source: MuSource,
    calibration_scale: Option<f64>,
) -> ExperimentOutput {
    let k = scenario.channels;
    let h = scenario.horizon as usize;
    let window = config.rolling_window();
    let best_channel = policies::argmax_lowest(&mu);
    let mu_best = mu[best_channel];
    let final_start = h - h / 4;

    // device_runs[rep][device]
    let device_runs: Vec<Vec<DeviceRun>> = runs
        .iter()
        .map(|run| {
            let mut per: Vec<DeviceRun> =
                (0..scenario.devices.len()).map(|_| DeviceRun { records: Vec::with_capacity(h) }).collect();
            for r in &run.trace.records {
                per[r.device].records.push(r);
            }
            for d in &mut per {
                d.records.sort_by_key(|r| r.seq);
            }
            per
        })
        .collect();

    let mut rows = Vec::with_capacity(runs.len() * scenario.devices.len() * h);
    for (rep, per) in device_runs.iter().enumerate() {
        for (dev, d) in per.iter().enumerate() {
            let mut in_window = 0u64;
            for (i, r) in d.records.iter().enumerate() {
                in_window += r.reward as u64;
                if i >= window {
                    in_window -= d.records[i - window].reward as u64;
                }
                rows.push(MetricsRow {
                    repetition: rep as u64,
                    device: dev,
                    policy: scenario.devices[dev].policy,
                    seq: r.seq,
                    channel: r.channel,
                    reward: r.reward,
                    rolling_rate: in_window as f64 / (i + 1).min(window) as f64,
                });
            }
        }
    }

    let mut kinds: Vec<PolicyKind> = Vec::new();
    for d in &scenario.devices {
        if !kinds.contains(&d.policy) {
            kinds.push(d.policy);
        }
    }

    let mut policy_summaries = Vec::new();
    let mut histograms = Vec::new();
    let mut curves = Vec::new();
    for kind in kinds {
        let devices: Vec<usize> =
            (0..scenario.devices.len()).filter(|&i| scenario.devices[i].policy == kind).collect();
        let n_runs = (runs.len() * devices.len()) as u64;

        let mut cum = vec![0u64; h];
        let mut roll = vec![0u64; h];
        let mut sent = vec![0u64; k];
        let mut ok = vec![0u64; k];
        let mut on_best = 0u64;
        let mut on_best_final = 0u64;
        let mut ucb_sum = vec![0.0f64; k];
        let mut per_rep = Vec::with_capacity(runs.len());

        for (rep, per) in device_runs.iter().enumerate() {
            let mut rep_ok = 0u64;
            for &dev in &devices {
                let recs = &per[dev].records;
                let mut s = 0u64;
                let mut w = 0u64;
                for (i, r) in recs.iter().enumerate() {
                    s += r.reward as u64;
                    w += r.reward as u64;
                    if i >= window {
                        w -= recs[i - window].reward as u64;
                    }
                    cum[i] += s;
                    roll[i] += w;
                    sent[r.channel] += 1;
                    ok[r.channel] += r.reward as u64;
                    if r.channel == best_channel {
                        on_best += 1;
                        if i >= final_start {
                            on_best_final += 1;
                        }
                    }
                }
                rep_ok += s;
                let state = &runs[rep].policies[dev];
                for (c, arm) in state.arms().iter().enumerate() {
                    ucb_sum[c] += policies::ucb_index(arm, state.total_pulls(), state.ucb_alpha());
                }
            }
            per_rep.push(rep_ok as f64 / (devices.len() * h) as f64);
        }

        let total_ok: u64 = ok.iter().sum();
        let total_msgs = n_runs * h as u64;
        let final_success_rate = total_ok as f64 / total_msgs as f64;
        let final_success_std = sample_std(&per_rep);
        let n = n_runs as f64;
        let cumulative_regret: Vec<f64> =
            cum.iter().enumerate().map(|(i, &s)| (i + 1) as f64 * mu_best - s as f64 / n).collect();

        policy_summaries.push(PolicySummary {
            policy: kind,
            devices: devices.clone(),
            final_success_rate,
            final_success_std,
            per_repetition_success: per_rep,
            best_channel_fraction: on_best as f64 / total_msgs as f64,
            best_channel_fraction_final_quarter: on_best_final as f64 / (n_runs * (h - final_start) as u64) as f64,
            selection_counts: sent.clone(),
            final_regret: *cumulative_regret.last().expect("horizon >= 1"),
        });
        histograms.push(ChannelHistogram {
            policy: kind,
            success_rates: sent
                .iter()
                .zip(&ok)
                .map(|(&s, &o)| (s > 0).then(|| o as f64 / s as f64))
                .collect(),
            transmissions: sent,
            successes: ok,
            ucb_indexes: ucb_sum.iter().map(|&u| u.is_finite().then(|| u / n)).collect(),
        });
        curves.push(PolicyCurves {
            policy: kind,
            cumulative_success_rate: cum.iter().enumerate().map(|(i, &s)| s as f64 / (n * (i + 1) as f64)).collect(),
            rolling_success_rate: roll
                .iter()
                .enumerate()
                .map(|(i, &s)| s as f64 / (n * (i + 1).min(window) as f64))
                .collect(),
            cumulative_regret,
        });
    }

    ExperimentOutput {
        summary: RunSummary {
            config: config.clone(),
            policies: policy_summaries,
            channels: ChannelSummary {
                count: k,
                mu,
                mu_source,
                best_channel,
                calibration_scale,
                histograms,
            },
            curves,
        },
        rows,
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}
