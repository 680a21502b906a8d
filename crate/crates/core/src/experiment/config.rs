//! Scenario files.
//!
//! A scenario is one JSON document; unknown keys are rejected. See
//! `docs/schema.md` for the field reference.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mac_sim::{
    CollisionModel, DeviceSpec, Interference, MacTiming, Medium, Scenario, MAX_DEVICES,
};
use crate::phy_frame::DeviceIndex;
use crate::policies::{PolicyKind, DEFAULT_UCB_ALPHA};
use crate::traffic::{self, OccupancyVector, PoissonTrafficConfig, TrafficError};

pub const DEFAULT_ROLLING_WINDOW: usize = 100;

/// One violated constraint, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn list(vs: &[Violation]) -> String {
    vs.iter().map(|v| format!("\n  - {v}")).collect()
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Syntax { path: String, line: usize, column: usize, message: String },
    #[error("invalid scenario:{}", list(.0))]
    Validation(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonBlock {
    pub lambda: Vec<f64>,
    /// Interferer packet length; defaults to the uplink duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet_duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub policy: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ucb_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phy_index: Option<DeviceIndex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_offset: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub target_uniform_success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub channels: usize,
    pub collision_mode: CollisionModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupancies: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson: Option<PoissonBlock>,
    #[serde(default)]
    pub timing: MacTiming,
    #[serde(default)]
    pub medium: Medium,
    pub devices: Vec<DeviceConfig>,
    pub horizon: u64,
    pub repetitions: u64,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rolling_window: Option<usize>,
}

/// Scenario plus what was derived while resolving it.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedScenario {
    pub scenario: Scenario,
    /// Factor applied to every Poisson rate, when calibration was requested.
    pub calibration_scale: Option<f64>,
}

/// Reads, parses and validates a scenario file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: shown.clone(),
        source,
    })?;
    let config = parse_config(&text, &shown)?;
    config.validate()?;
    Ok(config)
}

/// Parses without validating. `origin` only labels error messages.
pub fn parse_config(text: &str, origin: &str) -> Result<ScenarioConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl ScenarioConfig {
    pub fn rolling_window(&self) -> usize {
        self.rolling_window.unwrap_or(DEFAULT_ROLLING_WINDOW)
    }

    fn interferer_duration(&self) -> f64 {
        self.poisson
            .as_ref()
            .and_then(|p| p.packet_duration)
            .unwrap_or(self.timing.uplink_duration)
    }

    /// Every violated constraint, or `Ok` if there are none.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        if self.name.trim().is_empty() {
            v.push(Violation::new("name", "must not be empty"));
        }
        if self.name.contains(['/', '\\']) {
            v.push(Violation::new("name", "is used in file names and must not contain path separators"));
        }
        if self.channels == 0 {
            v.push(Violation::new("channels", "must be at least 1"));
        }
        if self.horizon == 0 {
            v.push(Violation::new("horizon", "must be at least 1"));
        }
        if self.repetitions == 0 {
            v.push(Violation::new("repetitions", "must be at least 1"));
        }
        if self.rolling_window == Some(0) {
            v.push(Violation::new("rolling_window", "must be at least 1"));
        }

        match (&self.occupancies, &self.poisson) {
            (Some(_), Some(_)) => v.push(Violation::new(
                "occupancies",
                "exactly one of `occupancies` and `poisson` may be given, found both",
            )),
            (None, None) => v.push(Violation::new(
                "occupancies",
                "exactly one of `occupancies` and `poisson` is required, found neither",
            )),
            _ => {}
        }
        if let Some(p) = &self.occupancies {
            if p.len() != self.channels {
                v.push(Violation::new(
                    "occupancies",
                    format!("has {} entries, expected channels = {}", p.len(), self.channels),
                ));
            }
            for (k, &pk) in p.iter().enumerate() {
                if !(0.0..=1.0).contains(&pk) {
                    v.push(Violation::new(format!("occupancies[{k}]"), format!("{pk} is outside [0, 1]")));
                } else if pk == 1.0 && self.collision_mode == CollisionModel::PureAloha {
                    v.push(Violation::new(
                        format!("occupancies[{k}]"),
                        "an occupancy of 1 has no equivalent Poisson rate in pure_aloha mode",
                    ));
                }
            }
        }
        if let Some(block) = &self.poisson {
            if block.lambda.len() != self.channels {
                v.push(Violation::new(
                    "poisson.lambda",
                    format!("has {} entries, expected channels = {}", block.lambda.len(), self.channels),
                ));
            }
            for (k, &l) in block.lambda.iter().enumerate() {
                if !(l >= 0.0 && l.is_finite()) {
                    v.push(Violation::new(format!("poisson.lambda[{k}]"), format!("{l} must be finite and >= 0")));
                }
            }
            if let Some(d) = block.packet_duration {
                if !positive(d) {
                    v.push(Violation::new("poisson.packet_duration", format!("{d} must be positive")));
                }
            }
        }

        if self.devices.is_empty() {
            v.push(Violation::new("devices", "at least one device is required"));
        }
        if self.devices.len() > MAX_DEVICES {
            v.push(Violation::new(
                "devices",
                format!("at most {MAX_DEVICES} devices fit the QPSK index space, got {}", self.devices.len()),
            ));
        }
        for (i, d) in self.devices.iter().enumerate() {
            if let Some(a) = d.ucb_alpha {
                if !positive(a) {
                    v.push(Violation::new(format!("devices[{i}].ucb_alpha"), format!("{a} must be positive")));
                }
            }
            if let Some(p) = d.phase_offset {
                if !(p >= 0.0 && p.is_finite()) {
                    v.push(Violation::new(format!("devices[{i}].phase_offset"), format!("{p} must be finite and >= 0")));
                }
            }
            if let Some(idx) = d.phy_index {
                if self.devices[..i].iter().any(|o| o.phy_index == Some(idx)) {
                    v.push(Violation::new(format!("devices[{i}].phy_index"), format!("{idx} is used by another device")));
                }
            }
        }

        for m in self.timing.violations() {
            let (field, message) = m.split_once(": ").unwrap_or(("", m.as_str()));
            v.push(Violation::new(format!("timing.{field}"), message));
        }
        if self.collision_mode == CollisionModel::SlottedBernoulli
            && self.timing.violations().is_empty()
            && self.timing.slots_per_period().is_none()
        {
            v.push(Violation::new(
                "timing.inter_message_period",
                "slotted_bernoulli needs a whole number (>= 3) of uplink_duration slots per period",
            ));
        }

        if let Some(c) = &self.calibration {
            if self.collision_mode != CollisionModel::PureAloha {
                v.push(Violation::new("calibration", "only supported with collision_mode = pure_aloha"));
            }
            if !(c.target_uniform_success > 0.0 && c.target_uniform_success < 1.0) {
                v.push(Violation::new(
                    "calibration.target_uniform_success",
                    format!("{} must lie in (0, 1)", c.target_uniform_success),
                ));
            }
        }

        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Validation(v))
        }
    }

    /// PHY indices: explicit ones first, then the unused constellation points
    /// in constellation order.
    pub fn phy_indices(&self) -> Vec<DeviceIndex> {
        let mut free = DeviceIndex::ALL
            .into_iter()
            .filter(|idx| !self.devices.iter().any(|d| d.phy_index == Some(*idx)));
        self.devices
            .iter()
            .map(|d| d.phy_index.or_else(|| free.next()).unwrap_or(DeviceIndex::PlusPlus))
            .collect()
    }

    /// Unscaled Poisson rates for pure-ALOHA scenarios.
    pub fn base_poisson(&self) -> Option<PoissonTrafficConfig> {
        if self.collision_mode != CollisionModel::PureAloha {
            return None;
        }
        let packet_duration = self.interferer_duration();
        let lambda = match (&self.poisson, &self.occupancies) {
            (Some(block), _) => block.lambda.clone(),
            (None, Some(p)) => p
                .iter()
                .map(|&pk| traffic::calibrate_rate(pk, packet_duration))
                .collect::<Result<_, _>>()
                .ok()?,
            (None, None) => return None,
        };
        Some(PoissonTrafficConfig { lambda, packet_duration })
    }

    /// Validates and builds the runnable scenario, applying calibration.
    pub fn resolve(&self) -> Result<ResolvedScenario, ResolveError> {
        self.validate()?;
        let mut calibration_scale = None;
        let interference = match self.collision_mode {
            CollisionModel::PureAloha => {
                let mut cfg = self.base_poisson().expect("validated pure_aloha traffic");
                if let Some(c) = &self.calibration {
                    let s = traffic::calibrate_scenario(&cfg, &self.timing.exposure(), c.target_uniform_success)?;
                    cfg = cfg.scaled(s);
                    calibration_scale = Some(s);
                }
                Interference::Poisson(cfg)
            }
            CollisionModel::SlottedBernoulli => {
                let p = match (&self.occupancies, &self.poisson) {
                    (Some(p), _) => p.clone(),
                    (None, Some(block)) => {
                        let d = self.interferer_duration();
                        block.lambda.iter().map(|&l| traffic::occupancy_from_rate(l, d)).collect()
                    }
                    (None, None) => unreachable!("validated traffic block"),
                };
                Interference::Slotted(OccupancyVector::new(p)?)
            }
        };
        let devices = self
            .devices
            .iter()
            .zip(self.phy_indices())
            .map(|(d, phy_index)| DeviceSpec {
                policy: d.policy,
                ucb_alpha: d.ucb_alpha.unwrap_or(DEFAULT_UCB_ALPHA),
                phy_index,
                phase_offset: d.phase_offset,
            })
            .collect();
        let scenario = Scenario {
            channels: self.channels,
            interference,
            timing: self.timing,
            devices,
            horizon: self.horizon,
            medium: self.medium,
        };
        scenario.validate().map_err(|e| {
            ConfigError::Validation(vec![Violation::new("scenario", e.to_string())])
        })?;
        Ok(ResolvedScenario { scenario, calibration_scale })
    }
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
}
