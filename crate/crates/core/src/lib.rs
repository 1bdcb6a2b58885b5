//! Modelling library for dual-radio (LoRaWAN + NB-IoT) IoT nodes.
//!
//! The crate provides pure computational models of both radio technologies
//! (time-on-air, payload caps, duty-cycle scheduling, modem state energy,
//! coverage-enhancement levels, empirical latency), a per-message technology
//! selection policy that minimises predicted energy subject to deadline,
//! QoS, payload and coverage constraints, and a deterministic discrete-event
//! simulator that runs traffic scenarios through the policy and reports
//! energy, latency and battery-lifetime figures.
//!
//! All models are pure functions over caller-owned state and safe to use
//! from multiple threads.

pub mod calib;
pub mod link;
pub mod lorawan;
pub mod nbiot;
pub mod policy;
pub mod profile;
pub mod sim;

pub use link::{EnvironmentClass, LinkState};
pub use lorawan::{DutyCycleLedger, LoRaEnergyProfile, LoRaRadioConfig};
pub use nbiot::{CeLevel, LatencyModel, NbIotConfig, NbIotEnergyProfile};
pub use policy::{MessageRequest, NodeState, QosClass, Technology, TransmissionPlan};
pub use profile::ProfileFile;
pub use sim::{Scenario, SimReport};
