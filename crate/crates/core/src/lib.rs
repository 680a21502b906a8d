//! Simulation of learning IoT end-devices that pick ALOHA channels with
//! multi-armed bandit policies.
//!
//! - [`policies`]: UCB1, Thompson Sampling and uniform channel selection.
//! - [`phy_frame`]: QPSK uplink/ACK frames with conjugate-index addressing.
//! - [`traffic`]: slotted Bernoulli and Poisson background interference.
//! - [`mac_sim`]: the deterministic discrete-event MAC engine.
//! - [`experiment`]: scenario files, repetitions, metrics and the CLI.

pub mod experiment;
pub mod mac_sim;
pub mod phy_frame;
pub mod policies;
pub mod seed;
pub mod traffic;
