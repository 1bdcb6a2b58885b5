//! Deterministic discrete-event simulator: runs traffic scenarios through
//! the selection policy and both radio models, producing energy, latency,
//! duty-cycle and battery-lifetime reports.
//!
//! A run is strictly sequential and seed-deterministic: event times, latency
//! samples and environment draws all derive from independent streams of one
//! seeded generator, and simulation time is kept in integer microseconds so
//! reports are byte-identical across platforms.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::{sample_environment, EnvironmentClass, LinkState};
use crate::lorawan::{time_on_air, uplink_energy, MAC_HEADER_BYTES};
use crate::nbiot::{uplink_latency_sample, CeLevel, ModemEvent, ModemState};
use crate::policy::{
    decide, MessageRequest, NodeState, PolicyConfig, QosClass, RadioParameter, Technology,
    TransmissionPlan,
};
use crate::profile::{ProfileFile, SCHEMA_VERSION};

pub const WEEK_S: f64 = 604_800.0;
/// Weeks per year used for lifetime arithmetic.
pub const WEEKS_PER_YEAR: f64 = 52.18;

const MICROS: f64 = 1e6;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("internal audit failed: {0}")]
    Audit(String),
}

/// Which radios the node may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    Multirat,
    LoraOnly,
    NbiotOnly,
}

impl std::fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PolicyMode::Multirat => "multirat",
            PolicyMode::LoraOnly => "lora_only",
            PolicyMode::NbiotOnly => "nbiot_only",
        };
        write!(f, "{s}")
    }
}

/// Battery capacity, given directly or as a pack rating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatterySpec {
    Joules { joules: f64 },
    Pack { mah: f64, volts: f64 },
}

impl BatterySpec {
    pub fn joules(&self) -> f64 {
        match *self {
            BatterySpec::Joules { joules } => joules,
            BatterySpec::Pack { mah, volts } => mah / 1000.0 * volts * 3600.0,
        }
    }
}

/// Channel conditions for the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub path_loss_db: f64,
    pub lora_snr_margin_db: f64,
    /// When set, each NB-IoT decision draws its CE level from this
    /// environment's distribution instead of the RSRP thresholds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<EnvironmentClass>,
}

/// One traffic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficSource {
    /// Fixed-interval messages starting at `offset_s`.
    Periodic {
        interval_s: f64,
        payload_bytes: u32,
        qos: QosClass,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deadline_s: Option<f64>,
        #[serde(default)]
        offset_s: f64,
    },
    /// Events at seed-derived uniform times, `count_per_week` on average.
    EventDriven {
        count_per_week: u32,
        payload_bytes: u32,
        qos: QosClass,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deadline_s: Option<f64>,
    },
}

/// Duration overrides a deployment applies to the NB-IoT idle states
/// (release assistance, eDRX off, long TAU). Powers stay calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NbIotTimerOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_cdrx_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edrx_ptw_total_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psm_tau_s: Option<f64>,
}

/// A complete simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub duration_s: f64,
    pub seed: u64,
    pub mode: PolicyMode,
    pub battery: BatterySpec,
    pub link: LinkSpec,
    pub traffic: Vec<TrafficSource>,
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Deployment timer configuration; see [`NbIotTimerOverrides`].
    #[serde(default)]
    pub nbiot_timer_overrides: NbIotTimerOverrides,
    /// Full profile override; when absent the caller-provided profile is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileFile>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Invalid(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            )));
        }
        if !(self.duration_s > 0.0) {
            return Err(ScenarioError::Invalid("duration_s must be positive".into()));
        }
        if self.traffic.is_empty() {
            return Err(ScenarioError::Invalid("at least one traffic source required".into()));
        }
        for (i, t) in self.traffic.iter().enumerate() {
            match t {
                TrafficSource::Periodic { interval_s, payload_bytes, deadline_s, .. } => {
                    if !(interval_s > &0.0) {
                        return Err(ScenarioError::Invalid(format!("traffic[{i}].interval_s must be positive")));
                    }
                    if *payload_bytes == 0 {
                        return Err(ScenarioError::Invalid(format!("traffic[{i}].payload_bytes must be >= 1")));
                    }
                    if let Some(d) = deadline_s {
                        if !(d > &0.0) {
                            return Err(ScenarioError::Invalid(format!("traffic[{i}].deadline_s must be positive")));
                        }
                    }
                }
                TrafficSource::EventDriven { payload_bytes, deadline_s, .. } => {
                    if *payload_bytes == 0 {
                        return Err(ScenarioError::Invalid(format!("traffic[{i}].payload_bytes must be >= 1")));
                    }
                    if let Some(d) = deadline_s {
                        if !(d > &0.0) {
                            return Err(ScenarioError::Invalid(format!("traffic[{i}].deadline_s must be positive")));
                        }
                    }
                }
            }
        }
        if !(self.battery.joules() >= 0.0) {
            return Err(ScenarioError::Invalid("battery must be >= 0 J".into()));
        }
        if let Some(p) = &self.profile {
            p.validate().map_err(ScenarioError::Invalid)?;
        }
        Ok(())
    }

    /// Profile in effect for this run: the embedded or given base profile
    /// with the deployment timer overrides applied to both the energy
    /// durations and the reachability timers.
    pub fn effective_profile(&self, base: &ProfileFile) -> ProfileFile {
        let mut profile = self.profile.clone().unwrap_or_else(|| base.clone());
        let o = &self.nbiot_timer_overrides;
        if let Some(cdrx) = o.t_cdrx_s {
            profile.nbiot_energy.cdrx.base_duration_s = cdrx;
            profile.nbiot_config.t_cdrx_s = cdrx;
        }
        if let Some(edrx) = o.edrx_ptw_total_s {
            profile.nbiot_energy.edrx_ptw.base_duration_s = edrx;
            if edrx == 0.0 {
                profile.nbiot_config.edrx_cycles_before_psm = 0;
            }
        }
        if let Some(tau) = o.psm_tau_s {
            profile.nbiot_config.psm_tau_s = tau;
        }
        profile
    }
}

/// Latency distribution summary (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub min_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub p99_s: f64,
    pub max_s: f64,
}

impl LatencyStats {
    fn from_sorted(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let q = |p: f64| {
            let idx = ((samples.len() as f64 * p).ceil() as usize).clamp(1, samples.len()) - 1;
            samples[idx]
        };
        Some(Self {
            count: samples.len(),
            min_s: samples[0],
            p50_s: q(0.50),
            p95_s: q(0.95),
            p99_s: q(0.99),
            max_s: *samples.last().unwrap(),
        })
    }
}

/// One delivered-or-not message in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub message_id: u64,
    pub t_s: f64,
    pub source: usize,
    pub payload_bytes: u32,
    /// Technology actually used; absent when undelivered.
    pub technology: Option<Technology>,
    /// "sf7".."sf12" or "ce0".."ce2".
    pub parameter: Option<String>,
    pub fragments: usize,
    pub energy_j: f64,
    pub latency_s: f64,
    pub delivered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Scenario totals and audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: PolicyMode,
    pub seed: u64,
    pub duration_s: f64,
    /// Active per-message energy: transmit plus the surrounding receive /
    /// connected-idle windows of each message sequence. This is the figure
    /// battery lifetime is computed from.
    pub transmit_energy_j: f64,
    /// One-off network search and join energy.
    pub join_energy_j: f64,
    /// Sleep-state energy over the whole run (both modems).
    pub idle_energy_j: f64,
    pub total_energy_j: f64,
    pub energy_by_technology: BTreeMap<String, f64>,
    pub energy_by_state: BTreeMap<String, f64>,
    pub messages_by_technology: BTreeMap<String, usize>,
    pub delivered_count: usize,
    pub undelivered: Vec<MessageRecord>,
    pub latency_by_class: BTreeMap<String, LatencyStats>,
    /// Peak on-air/elapsed ratio seen at LoRa transmission boundaries.
    pub duty_cycle_peak: f64,
    pub lora_on_air_s: f64,
    /// Horizon over which duty compliance holds: the nominal duration or, if
    /// backlogged transmissions ran longer, their off-time expiry.
    pub duty_span_s: f64,
    pub battery_j: f64,
    /// `None` when the run consumed no per-message energy (unbounded).
    pub battery_lifetime_years: Option<f64>,
    pub trace: Vec<MessageRecord>,
}

impl SimReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Write the per-message trace as CSV.
    pub fn write_trace_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::from("message_id,t_s,technology,parameter,fragments,energy_j,latency_s,delivered\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.message_id,
                r.t_s,
                r.technology.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
                r.parameter.clone().unwrap_or_else(|| "-".into()),
                r.fragments,
                r.energy_j,
                r.latency_s,
                r.delivered,
            ));
        }
        std::fs::write(path, out)
    }
}

/// Battery lifetime in years at the report's weekly per-message energy rate,
/// ignoring self-discharge and sleep draw. Returns `None` (unbounded) when
/// no per-message energy was consumed.
pub fn battery_lifetime(report: &SimReport, battery_j: f64) -> Option<f64> {
    let weeks = report.duration_s / WEEK_S;
    if weeks <= 0.0 {
        return None;
    }
    let weekly = report.transmit_energy_j / weeks;
    if weekly <= 0.0 {
        return None;
    }
    Some(battery_j / weekly / WEEKS_PER_YEAR)
}

struct ScheduledMessage {
    t_us: u64,
    source: usize,
    payload_bytes: u32,
    qos: QosClass,
    deadline_s: Option<f64>,
}

fn build_schedule(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Vec<ScheduledMessage> {
    let mut out = Vec::new();
    for (source, traffic) in scenario.traffic.iter().enumerate() {
        match *traffic {
            TrafficSource::Periodic { interval_s, payload_bytes, qos, deadline_s, offset_s } => {
                let mut t = offset_s;
                while t < scenario.duration_s {
                    out.push(ScheduledMessage {
                        t_us: (t * MICROS).round() as u64,
                        source,
                        payload_bytes,
                        qos,
                        deadline_s,
                    });
                    t += interval_s;
                }
            }
            TrafficSource::EventDriven { count_per_week, payload_bytes, qos, deadline_s } => {
                let count =
                    (count_per_week as f64 * scenario.duration_s / WEEK_S).round() as usize;
                let mut times: Vec<u64> = (0..count)
                    .map(|_| (rng.gen_range(0.0..scenario.duration_s) * MICROS).round() as u64)
                    .collect();
                times.sort_unstable();
                for t_us in times {
                    out.push(ScheduledMessage { t_us, source, payload_bytes, qos, deadline_s });
                }
            }
        }
    }
    out.sort_by_key(|m| (m.t_us, m.source));
    out
}

/// Run one scenario to completion.
///
/// `base_profile` supplies radio constants unless the scenario embeds its
/// own; `seed` overrides the scenario seed when `Some`.
pub fn run(
    scenario: &Scenario,
    base_profile: &ProfileFile,
    seed: Option<u64>,
) -> Result<SimReport, ScenarioError> {
    scenario.validate()?;
    let seed = seed.unwrap_or(scenario.seed);
    let profile = scenario.effective_profile(base_profile);
    profile.validate().map_err(ScenarioError::Invalid)?;

    let mut schedule_rng = ChaCha8Rng::seed_from_u64(seed);
    schedule_rng.set_stream(0);
    let mut latency_rng = ChaCha8Rng::seed_from_u64(seed);
    latency_rng.set_stream(1);
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    env_rng.set_stream(2);

    let schedule = build_schedule(scenario, &mut schedule_rng);

    let base_link = LinkState::from_path_loss(
        scenario.link.path_loss_db,
        scenario.link.lora_snr_margin_db,
        profile.link.rsrp_reference_dbm,
    );
    let battery_j = scenario.battery.joules();
    let mut node = NodeState::new(base_link, battery_j);

    let mut transmit_energy = 0.0;
    let mut join_energy = 0.0;
    let mut by_tech: BTreeMap<String, f64> = BTreeMap::new();
    let mut by_state: BTreeMap<String, f64> = BTreeMap::new();
    let mut msg_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut latencies: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut trace = Vec::with_capacity(schedule.len());
    let mut undelivered = Vec::new();
    let mut lora_active_s = 0.0;
    let mut nb_active_s = 0.0;
    let mut per_message_energies = Vec::with_capacity(schedule.len());

    let add_state = |map: &mut BTreeMap<String, f64>, key: &str, value: f64| {
        *map.entry(key.to_string()).or_insert(0.0) += value;
    };

    for (idx, sched) in schedule.iter().enumerate() {
        let created_s = sched.t_us as f64 / MICROS;
        let msg = MessageRequest {
            id: idx as u64,
            payload_bytes: sched.payload_bytes,
            deadline_s: sched.deadline_s,
            qos: sched.qos,
            created_at_s: created_s,
        };

        // environment draw overrides the RSRP-derived CE level per message
        if let Some(env) = scenario.link.environment {
            let ce = sample_environment(env, &mut env_rng);
            let representative_rsrp = match ce {
                CeLevel::Ce0 => -90.0,
                CeLevel::Ce1 => -122.0,
                CeLevel::Ce2 => -131.0,
            };
            node.link = LinkState {
                rsrp_dbm: representative_rsrp,
                ..base_link
            };
        }

        let decision = decide(&msg, &node, &profile, &scenario.policy)
            .map_err(|e| ScenarioError::Model(e.to_string()))?;

        let plan = match decision {
            Ok(plan) => plan,
            Err(no_plan) => {
                let record = MessageRecord {
                    message_id: msg.id,
                    t_s: created_s,
                    source: sched.source,
                    payload_bytes: msg.payload_bytes,
                    technology: None,
                    parameter: None,
                    fragments: 0,
                    energy_j: 0.0,
                    latency_s: 0.0,
                    delivered: false,
                    failure: Some(
                        no_plan
                            .reasons
                            .iter()
                            .map(|(t, r)| format!("{t}: {r:?}"))
                            .collect::<Vec<_>>()
                            .join("; "),
                    ),
                };
                undelivered.push(record.clone());
                trace.push(record);
                continue;
            }
        };

        // mode restriction: run single-RAT by discarding the other candidate
        let plan = match (scenario.mode, plan.technology) {
            (PolicyMode::Multirat, _) => Some(plan),
            (PolicyMode::LoraOnly, Technology::Lorawan) | (PolicyMode::NbiotOnly, Technology::Nbiot) => Some(plan),
            _ => {
                let candidates =
                    crate::policy::enumerate_candidates(&msg, &node, &profile, &scenario.policy)
                        .map_err(|e| ScenarioError::Model(e.to_string()))?;
                let wanted = match scenario.mode {
                    PolicyMode::LoraOnly => Technology::Lorawan,
                    _ => Technology::Nbiot,
                };
                candidates
                    .into_iter()
                    .find(|c| c.technology == wanted && c.is_feasible())
            }
        };

        let Some(plan) = plan else {
            let record = MessageRecord {
                message_id: msg.id,
                t_s: created_s,
                source: sched.source,
                payload_bytes: msg.payload_bytes,
                technology: None,
                parameter: None,
                fragments: 0,
                energy_j: 0.0,
                latency_s: 0.0,
                delivered: false,
                failure: Some(format!("no feasible plan in {} mode", scenario.mode)),
            };
            undelivered.push(record.clone());
            trace.push(record);
            continue;
        };

        if plan.predicted_energy_j > node.battery_j {
            let record = MessageRecord {
                message_id: msg.id,
                t_s: created_s,
                source: sched.source,
                payload_bytes: msg.payload_bytes,
                technology: Some(plan.technology),
                parameter: None,
                fragments: plan.fragments.len(),
                energy_j: 0.0,
                latency_s: 0.0,
                delivered: false,
                failure: Some("battery exhausted".into()),
            };
            undelivered.push(record.clone());
            trace.push(record);
            continue;
        }

        // execute
        let (energy, latency, parameter) = match plan.technology {
            Technology::Lorawan => {
                execute_lora(&plan, &msg, &mut node, &profile, &scenario.policy, &mut by_state, &mut lora_active_s)
                    .map_err(|e| ScenarioError::Model(e.to_string()))?
            }
            Technology::Nbiot => execute_nbiot(
                &plan,
                &mut node,
                &profile,
                &mut latency_rng,
                &mut by_state,
                &mut nb_active_s,
                &mut join_energy,
            )
            .map_err(|e| ScenarioError::Model(e.to_string()))?,
        };

        node.battery_j = (node.battery_j - energy).max(0.0);
        transmit_energy += energy;
        per_message_energies.push(energy);
        add_state(&mut by_tech, &plan.technology.to_string(), energy);
        *msg_counts.entry(plan.technology.to_string()).or_insert(0) += 1;
        latencies.entry(format!("tech:{}", plan.technology)).or_default().push(latency);
        latencies.entry(format!("source:{}", sched.source)).or_default().push(latency);

        trace.push(MessageRecord {
            message_id: msg.id,
            t_s: created_s,
            source: sched.source,
            payload_bytes: msg.payload_bytes,
            technology: Some(plan.technology),
            parameter: Some(parameter),
            fragments: plan.fragments.len(),
            energy_j: energy,
            latency_s: latency,
            delivered: true,
            failure: None,
        });
    }

    // sleep accounting over the nominal duration
    let lora_sleep =
        profile.lora_energy.p_sleep_w * (scenario.duration_s - lora_active_s).max(0.0);
    let nb_sleep = profile.nbiot_energy.psm.power_w * (scenario.duration_s - nb_active_s).max(0.0);
    let idle_energy = lora_sleep + nb_sleep;
    add_state(&mut by_state, "lorawan/sleep", lora_sleep);
    add_state(&mut by_state, "nbiot/psm_idle", nb_sleep);
    if join_energy > 0.0 {
        add_state(&mut by_state, "nbiot/search_join", join_energy);
        add_state(&mut by_tech, "nbiot", join_energy);
    }

    let total_energy = transmit_energy + join_energy + idle_energy;

    // audits: energy conservation, duty compliance, modem trace order
    let reconstructed: f64 = per_message_energies.iter().sum::<f64>() + join_energy + idle_energy;
    if (reconstructed - total_energy).abs() > 1e-9 * total_energy.max(1.0) {
        return Err(ScenarioError::Audit(format!(
            "energy conservation: {reconstructed} != {total_energy}"
        )));
    }
    node.ledger
        .audit()
        .map_err(|e| ScenarioError::Audit(format!("duty ledger: {e}")))?;
    // backlogged transmissions may run past the nominal duration; duty
    // compliance is measured over the horizon they actually occupied
    let duty_span = scenario.duration_s.max(node.ledger.horizon_s());
    if node.ledger.total_on_air_s() > node.ledger.duty_fraction() * duty_span * (1.0 + 1e-9) {
        return Err(ScenarioError::Audit(format!(
            "on-air time {} s over {} s duty budget",
            node.ledger.total_on_air_s(),
            node.ledger.duty_fraction() * duty_span
        )));
    }
    node.modem
        .audit()
        .map_err(|e| ScenarioError::Audit(format!("modem trace: {e}")))?;

    let delivered_count = trace.iter().filter(|r| r.delivered).count();
    let latency_by_class = latencies
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(|a, b| a.total_cmp(b));
            (k.clone(), LatencyStats::from_sorted(&v).expect("non-empty"))
        })
        .collect();

    let mut report = SimReport {
        mode: scenario.mode,
        seed,
        duration_s: scenario.duration_s,
        transmit_energy_j: transmit_energy,
        join_energy_j: join_energy,
        idle_energy_j: idle_energy,
        total_energy_j: total_energy,
        energy_by_technology: by_tech,
        energy_by_state: by_state,
        messages_by_technology: msg_counts,
        delivered_count,
        undelivered,
        latency_by_class,
        duty_cycle_peak: node.ledger.peak_utilization(),
        lora_on_air_s: node.ledger.total_on_air_s(),
        duty_span_s: duty_span,
        battery_j,
        battery_lifetime_years: None,
        trace,
    };
    report.battery_lifetime_years = battery_lifetime(&report, battery_j);
    Ok(report)
}

fn execute_lora(
    plan: &TransmissionPlan,
    msg: &MessageRequest,
    node: &mut NodeState,
    profile: &ProfileFile,
    policy: &PolicyConfig,
    by_state: &mut BTreeMap<String, f64>,
    lora_active_s: &mut f64,
) -> Result<(f64, f64, String), crate::policy::PolicyError> {
    let config = crate::lorawan::adr_adjust(node.link.lora_snr_margin_db, &profile.lora_radio);
    let energy_profile = &profile.lora_energy;
    let mut tx_energy = 0.0;
    let mut window_energy = 0.0;
    let mut now = msg.created_at_s;
    let mut last_end = now;
    for &frag in &plan.fragments {
        let toa = time_on_air(&config, frag + MAC_HEADER_BYTES)?;
        let start = node.ledger.earliest_start(now);
        node.ledger.record(start, toa)?;
        last_end = start + toa;
        now = last_end;
        tx_energy += energy_profile.p_transmit_w * toa;
        let total = uplink_energy(&config, energy_profile, frag)?;
        window_energy += total - energy_profile.p_transmit_w * toa;
        *lora_active_s += toa + energy_profile.window_time_s(&config);
    }
    let confirmed = msg.qos == QosClass::Assured && policy.lora_confirmed_uplink;
    let mut latency = last_end - msg.created_at_s;
    if confirmed {
        let ack = plan.fragments.len() as f64
            * energy_profile.p_receive_w
            * energy_profile.rx1_s(&config);
        window_energy += ack;
        latency += crate::lorawan::RECEIVE_DELAY1_S + energy_profile.rx1_s(&config);
        *lora_active_s += plan.fragments.len() as f64 * energy_profile.rx1_s(&config);
    }
    *by_state.entry("lorawan/transmit".into()).or_insert(0.0) += tx_energy;
    *by_state.entry("lorawan/rx_process".into()).or_insert(0.0) += window_energy;
    let parameter = format!("sf{}", config.spreading_factor);
    Ok((tx_energy + window_energy, latency, parameter))
}

#[allow(clippy::too_many_arguments)]
fn execute_nbiot(
    plan: &TransmissionPlan,
    node: &mut NodeState,
    profile: &ProfileFile,
    latency_rng: &mut ChaCha8Rng,
    by_state: &mut BTreeMap<String, f64>,
    nb_active_s: &mut f64,
    join_energy: &mut f64,
) -> Result<(f64, f64, String), crate::nbiot::NbIotError> {
    let RadioParameter::CeLevel(ce) = plan.parameter else {
        return Err(crate::nbiot::NbIotError::InvalidConfig(
            "nbiot plan without a CE level".into(),
        ));
    };
    let energy_profile = &profile.nbiot_energy;
    let payload = plan.fragments[0];

    // walk the modem through the sequence; first contact joins the network
    if !node.modem.joined() {
        node.modem.apply(ModemEvent::JoinComplete)?;
        *join_energy += energy_profile.join_energy_j();
        *nb_active_s += energy_profile.search_join.base_duration_s;
    } else if node.modem.state() != ModemState::Send {
        node.modem.apply(ModemEvent::WakeInterrupt)?;
    }
    node.modem.apply(ModemEvent::MessageSent)?;
    node.modem.apply(ModemEvent::CdrxExpired)?;
    node.modem.apply(ModemEvent::EdrxRoundsDone)?;

    let tx_duration = energy_profile.transmit_duration_s(ce, payload);
    let tx = energy_profile.transmit.power_w * tx_duration;
    let cdrx = energy_profile.cdrx.power_w * energy_profile.cdrx.base_duration_s;
    let edrx = energy_profile.edrx_ptw.power_w * energy_profile.edrx_ptw.base_duration_s;
    let psm_base = energy_profile.psm.power_w * energy_profile.psm.base_duration_s;
    *by_state.entry("nbiot/transmit".into()).or_insert(0.0) += tx;
    *by_state.entry("nbiot/cdrx".into()).or_insert(0.0) += cdrx;
    *by_state.entry("nbiot/edrx_ptw".into()).or_insert(0.0) += edrx + psm_base;
    *nb_active_s += energy_profile.active_time_s(ce, payload);

    let latency = uplink_latency_sample(ce, &profile.latency_model, latency_rng);
    let parameter = format!("ce{}", ce as u8);
    Ok((tx + cdrx + edrx + psm_base, latency, parameter))
}

/// One row of the energy-per-byte sweep (J/B per column).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub payload_bytes: u32,
    /// SF7..SF12.
    pub lora_j_per_byte: [f64; 6],
    /// CE0..CE2.
    pub nbiot_j_per_byte: [f64; 3],
}

/// Energy-per-byte curves plus the headline comparison figures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Smallest payload from which NB-IoT at CE2 stays at or below LoRa at
    /// SF12 for the rest of the range.
    pub crossover_sf12_ce2_bytes: Option<u32>,
    /// LoRa-SF12 over NB-IoT-CE2 energy ratio at the largest payload.
    pub ratio_at_max: f64,
}

/// Sweep energy-per-byte over a payload range. LoRa columns fragment beyond
/// the per-SF cap; NB-IoT columns are per-message figures and cap at 1600 B.
pub fn sweep_energy_per_byte(
    min_bytes: u32,
    max_bytes: u32,
    step: u32,
    profile: &ProfileFile,
) -> Result<SweepTable, ScenarioError> {
    if min_bytes == 0 || min_bytes > max_bytes || step == 0 {
        return Err(ScenarioError::Invalid("need 1 <= min <= max and step >= 1".into()));
    }
    if max_bytes > crate::nbiot::MAX_PAYLOAD_BYTES {
        return Err(ScenarioError::Invalid(format!(
            "NB-IoT columns end at {} B",
            crate::nbiot::MAX_PAYLOAD_BYTES
        )));
    }

    let lora_eb = |sf: u8, payload: u32| -> Result<f64, ScenarioError> {
        let config = crate::lorawan::LoRaRadioConfig::new(sf, 125_000);
        let fragments = crate::lorawan::fragment_payload(payload, sf)
            .map_err(|e| ScenarioError::Model(e.to_string()))?;
        let mut energy = 0.0;
        for frag in fragments {
            energy += uplink_energy(&config, &profile.lora_energy, frag)
                .map_err(|e| ScenarioError::Model(e.to_string()))?;
        }
        Ok(energy / payload as f64)
    };
    let nb_eb = |ce: CeLevel, payload: u32| -> Result<f64, ScenarioError> {
        crate::nbiot::energy_per_byte(ce, payload, &profile.nbiot_energy, &profile.nbiot_config)
            .map_err(|e| ScenarioError::Model(e.to_string()))
    };

    let mut rows = Vec::new();
    let mut payload = min_bytes;
    loop {
        let mut lora = [0.0; 6];
        for (i, sf) in (7u8..=12).enumerate() {
            lora[i] = lora_eb(sf, payload)?;
        }
        let mut nb = [0.0; 3];
        for (i, ce) in CeLevel::ALL.iter().enumerate() {
            nb[i] = nb_eb(*ce, payload)?;
        }
        rows.push(SweepRow { payload_bytes: payload, lora_j_per_byte: lora, nbiot_j_per_byte: nb });
        if payload >= max_bytes {
            break;
        }
        payload = (payload + step).min(max_bytes);
    }

    // NB-IoT columns must be non-increasing (fixed costs amortise)
    for ce in 0..3 {
        for pair in rows.windows(2) {
            if pair[1].nbiot_j_per_byte[ce] > pair[0].nbiot_j_per_byte[ce] * (1.0 + 1e-12) {
                return Err(ScenarioError::Audit(format!(
                    "nbiot CE{ce} energy-per-byte increased at {} B",
                    pair[1].payload_bytes
                )));
            }
        }
    }

    // crossover: scan from the top for the last payload where LoRa wins
    let mut crossover = None;
    for row in rows.iter().rev() {
        if row.lora_j_per_byte[5] < row.nbiot_j_per_byte[2] {
            break;
        }
        crossover = Some(row.payload_bytes);
    }
    let last = rows.last().unwrap();
    let ratio_at_max = last.lora_j_per_byte[5] / last.nbiot_j_per_byte[2];

    Ok(SweepTable { rows, crossover_sf12_ce2_bytes: crossover, ratio_at_max })
}
