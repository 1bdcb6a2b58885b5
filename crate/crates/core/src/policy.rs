//! Per-message multi-RAT selection: enumerate a LoRaWAN plan at the
//! ADR-selected spreading factor and an NB-IoT plan at the RSRP-selected CE
//! level, mark infeasible candidates with machine-readable reasons, and pick
//! the feasible plan with the lowest predicted energy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::{lora_budget_db, lora_reachable, nbiot_reachable, LinkState, NBIOT_MCL_DB};
use crate::lorawan::{
    adr_adjust, fragment_payload, time_on_air, uplink_energy, DutyCycleLedger, LoraError,
    MAC_HEADER_BYTES, RECEIVE_DELAY1_S,
};
use crate::nbiot::{message_energy, select_ce_level, CeLevel, NbIotError, NodeModem};
use crate::profile::ProfileFile;

/// One application message to deliver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRequest {
    pub id: u64,
    pub payload_bytes: u32,
    /// Delivery deadline relative to creation, if any.
    pub deadline_s: Option<f64>,
    pub qos: QosClass,
    /// Simulation time the message was created.
    pub created_at_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QosClass {
    BestEffort,
    Assured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technology {
    Lorawan,
    Nbiot,
}

impl std::fmt::Display for Technology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Technology::Lorawan => write!(f, "lorawan"),
            Technology::Nbiot => write!(f, "nbiot"),
        }
    }
}

/// Radio parameters of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadioParameter {
    SpreadingFactor(u8),
    CeLevel(CeLevel),
}

/// Why a candidate cannot be used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Infeasibility {
    OutOfCoverage { path_loss_db: f64, budget_db: f64 },
    PayloadExceedsCap { payload_bytes: u32, cap_bytes: u32 },
    DeadlineExceeded { predicted_s: f64, deadline_s: f64 },
    QosUnsupported,
}

/// A concrete way to send one message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionPlan {
    pub technology: Technology,
    pub parameter: RadioParameter,
    /// Application-payload fragment sizes (one entry for NB-IoT).
    pub fragments: Vec<u32>,
    pub predicted_energy_j: f64,
    pub predicted_latency_s: f64,
    pub qos_met: bool,
    /// `None` means the plan is usable.
    pub infeasible: Option<Infeasibility>,
}

impl TransmissionPlan {
    pub fn is_feasible(&self) -> bool {
        self.infeasible.is_none()
    }
}

/// Caller-owned node snapshot the policy decides over.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub ledger: DutyCycleLedger,
    pub modem: NodeModem,
    pub link: LinkState,
    pub battery_j: f64,
}

impl NodeState {
    pub fn new(link: LinkState, battery_j: f64) -> Self {
        Self {
            ledger: DutyCycleLedger::default(),
            modem: NodeModem::new(),
            link,
            battery_j,
        }
    }
}

/// Policy knobs beyond the radio profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Allow LoRa to carry assured-QoS traffic by requesting acknowledgments;
    /// charges one downlink window per fragment.
    pub lora_confirmed_uplink: bool,
    /// Compare deadlines against this NB-IoT latency quantile instead of the
    /// median when set (conservative mode).
    pub latency_quantile: Option<f64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            lora_confirmed_uplink: false,
            latency_quantile: None,
        }
    }
}

/// All selection failed: every candidate's reason, by technology.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[error("no feasible transmission plan: {reasons:?}")]
pub struct NoFeasiblePlan {
    pub reasons: Vec<(Technology, Infeasibility)>,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Lora(#[from] LoraError),
    #[error(transparent)]
    NbIot(#[from] NbIotError),
}

/// QoS admission: assured traffic needs NB-IoT or confirmed-uplink LoRa;
/// best effort admits everything.
pub fn qos_gate(msg: &MessageRequest, technology: Technology, policy: &PolicyConfig) -> bool {
    match (msg.qos, technology) {
        (QosClass::BestEffort, _) => true,
        (QosClass::Assured, Technology::Nbiot) => true,
        (QosClass::Assured, Technology::Lorawan) => policy.lora_confirmed_uplink,
    }
}

/// Build the LoRa and NB-IoT candidates for one message.
///
/// Infeasible candidates are returned with their reason rather than dropped;
/// an empty feasible set is a valid outcome.
pub fn enumerate_candidates(
    msg: &MessageRequest,
    state: &NodeState,
    profiles: &ProfileFile,
    policy: &PolicyConfig,
) -> Result<Vec<TransmissionPlan>, PolicyError> {
    Ok(vec![
        lora_candidate(msg, state, profiles, policy)?,
        nbiot_candidate(msg, state, profiles, policy)?,
    ])
}

fn lora_candidate(
    msg: &MessageRequest,
    state: &NodeState,
    profiles: &ProfileFile,
    policy: &PolicyConfig,
) -> Result<TransmissionPlan, PolicyError> {
    let config = adr_adjust(state.link.lora_snr_margin_db, &profiles.lora_radio);
    let fragments = fragment_payload(msg.payload_bytes, config.spreading_factor)?;
    let energy_profile = &profiles.lora_energy;

    let mut energy = 0.0;
    for &frag in &fragments {
        energy += uplink_energy(&config, energy_profile, frag)?;
    }
    let confirmed = msg.qos == QosClass::Assured && policy.lora_confirmed_uplink;
    if confirmed {
        // one acknowledgment window listened per fragment
        energy += fragments.len() as f64 * energy_profile.p_receive_w * energy_profile.rx1_s(&config);
    }

    // schedule the fragments over a scratch copy of the duty ledger
    let mut ledger = state.ledger.clone();
    let mut now = msg.created_at_s;
    let mut last_end = now;
    for &frag in &fragments {
        let toa = time_on_air(&config, frag + MAC_HEADER_BYTES)?;
        let start = ledger.earliest_start(now);
        ledger.record(start, toa).map_err(PolicyError::Lora)?;
        last_end = start + toa;
        now = last_end;
    }
    let mut latency = last_end - msg.created_at_s;
    if confirmed {
        latency += RECEIVE_DELAY1_S + energy_profile.rx1_s(&config);
    }

    let qos_met = qos_gate(msg, Technology::Lorawan, policy);
    let infeasible = if !lora_reachable(&state.link, &config) {
        Some(Infeasibility::OutOfCoverage {
            path_loss_db: state.link.path_loss_db,
            budget_db: lora_budget_db(config.spreading_factor),
        })
    } else if !qos_met {
        Some(Infeasibility::QosUnsupported)
    } else if let Some(deadline) = msg.deadline_s.filter(|d| latency > *d) {
        Some(Infeasibility::DeadlineExceeded {
            predicted_s: latency,
            deadline_s: deadline,
        })
    } else {
        None
    };

    Ok(TransmissionPlan {
        technology: Technology::Lorawan,
        parameter: RadioParameter::SpreadingFactor(config.spreading_factor),
        fragments,
        predicted_energy_j: energy,
        predicted_latency_s: latency,
        qos_met,
        infeasible,
    })
}

fn nbiot_candidate(
    msg: &MessageRequest,
    state: &NodeState,
    profiles: &ProfileFile,
    policy: &PolicyConfig,
) -> Result<TransmissionPlan, PolicyError> {
    let config = &profiles.nbiot_config;
    let ce = select_ce_level(state.link.rsrp_dbm, config);

    let over_cap = msg.payload_bytes > config.max_payload_bytes;
    let mut energy = if over_cap {
        0.0
    } else {
        message_energy(ce, msg.payload_bytes, &profiles.nbiot_energy, config)?
    };
    // a first-ever message triggers the network search and join; later
    // wake-ups from PSM resynchronise within the transmit overhead
    if !state.modem.joined() {
        energy += profiles.nbiot_energy.join_energy_j();
    }

    let latency = match policy.latency_quantile {
        Some(q) => profiles.latency_model.quantile_s(ce, q),
        None => profiles.latency_model.median_s(ce),
    };

    let qos_met = qos_gate(msg, Technology::Nbiot, policy);
    let infeasible = if !nbiot_reachable(&state.link) {
        Some(Infeasibility::OutOfCoverage {
            path_loss_db: state.link.path_loss_db,
            budget_db: NBIOT_MCL_DB,
        })
    } else if over_cap {
        Some(Infeasibility::PayloadExceedsCap {
            payload_bytes: msg.payload_bytes,
            cap_bytes: config.max_payload_bytes,
        })
    } else if let Some(deadline) = msg.deadline_s.filter(|d| latency > *d) {
        Some(Infeasibility::DeadlineExceeded {
            predicted_s: latency,
            deadline_s: deadline,
        })
    } else {
        None
    };

    Ok(TransmissionPlan {
        technology: Technology::Nbiot,
        parameter: RadioParameter::CeLevel(ce),
        fragments: vec![msg.payload_bytes],
        predicted_energy_j: energy,
        predicted_latency_s: latency,
        qos_met,
        infeasible,
    })
}

/// Pick the feasible plan with minimum predicted energy; ties break on lower
/// predicted latency, then LoRaWAN before NB-IoT. Deterministic.
pub fn select_plan(candidates: &[TransmissionPlan]) -> Result<TransmissionPlan, NoFeasiblePlan> {
    let best = candidates
        .iter()
        .filter(|plan| plan.is_feasible())
        .min_by(|a, b| {
            a.predicted_energy_j
                .total_cmp(&b.predicted_energy_j)
                .then(a.predicted_latency_s.total_cmp(&b.predicted_latency_s))
                .then(a.technology.cmp(&b.technology))
        });
    match best {
        Some(plan) => Ok(plan.clone()),
        None => Err(NoFeasiblePlan {
            reasons: candidates
                .iter()
                .map(|plan| {
                    (
                        plan.technology,
                        plan.infeasible.clone().unwrap_or(Infeasibility::QosUnsupported),
                    )
                })
                .collect(),
        }),
    }
}

/// Convenience: enumerate then select.
pub fn decide(
    msg: &MessageRequest,
    state: &NodeState,
    profiles: &ProfileFile,
    policy: &PolicyConfig,
) -> Result<Result<TransmissionPlan, NoFeasiblePlan>, PolicyError> {
    let candidates = enumerate_candidates(msg, state, profiles, policy)?;
    Ok(select_plan(&candidates))
}
