//! Coverage model: per-technology reachability from path loss, RSRP
//! derivation, and stochastic environment classes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lorawan::LoRaRadioConfig;
use crate::nbiot::CeLevel;

/// Link budget at SF12 (dB).
pub const LORA_BUDGET_SF12_DB: f64 = 156.0;

/// NB-IoT maximum coupling loss (dB).
pub const NBIOT_MCL_DB: f64 = 164.0;

/// Default base-station reference power used to derive RSRP from path loss
/// (dBm). With 23 dBm, a path loss at the 164 dB MCL maps to -141 dBm.
pub const RSRP_REFERENCE_DBM: f64 = 23.0;

/// Demodulation SNR floor per spreading factor (dB), SX127x datasheet values.
///
/// The per-SF link budget is `156 - (floor(sf) - floor(SF12))`, so the
/// budget shrinks by the floor gap as the spreading factor decreases:
///
/// | SF | floor (dB) | budget (dB) |
/// |----|-----------|-------------|
/// | 7  | -7.5      | 143.5       |
/// | 8  | -10.0     | 146.0       |
/// | 9  | -12.5     | 148.5       |
/// | 10 | -15.0     | 151.0       |
/// | 11 | -17.5     | 153.5       |
/// | 12 | -20.0     | 156.0       |
pub fn snr_floor_db(spreading_factor: u8) -> f64 {
    match spreading_factor {
        7 => -7.5,
        8 => -10.0,
        9 => -12.5,
        10 => -15.0,
        11 => -17.5,
        _ => -20.0,
    }
}

/// Link budget for a spreading factor (dB).
pub fn lora_budget_db(spreading_factor: u8) -> f64 {
    LORA_BUDGET_SF12_DB - (snr_floor_db(spreading_factor) - snr_floor_db(12))
}

/// Channel condition snapshot for one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkState {
    pub path_loss_db: f64,
    /// Derived: reference power minus path loss.
    pub rsrp_dbm: f64,
    /// SNR headroom above the demodulation floor at the current LoRa config.
    pub lora_snr_margin_db: f64,
}

impl LinkState {
    /// Build from a path loss using the given base-station reference power.
    pub fn from_path_loss(path_loss_db: f64, lora_snr_margin_db: f64, reference_dbm: f64) -> Self {
        Self {
            path_loss_db,
            rsrp_dbm: reference_dbm - path_loss_db,
            lora_snr_margin_db,
        }
    }

    /// Build from a measured RSRP, deriving the path loss.
    pub fn from_rsrp(rsrp_dbm: f64, lora_snr_margin_db: f64, reference_dbm: f64) -> Self {
        Self {
            path_loss_db: reference_dbm - rsrp_dbm,
            rsrp_dbm,
            lora_snr_margin_db,
        }
    }
}

/// True when the path loss fits the per-SF LoRa link budget.
pub fn lora_reachable(link: &LinkState, config: &LoRaRadioConfig) -> bool {
    link.path_loss_db <= lora_budget_db(config.spreading_factor)
}

/// True when the path loss is at or below the NB-IoT MCL.
pub fn nbiot_reachable(link: &LinkState) -> bool {
    link.path_loss_db <= NBIOT_MCL_DB
}

/// Union coverage of both technologies.
pub fn multirat_reachable(link: &LinkState, config: &LoRaRadioConfig) -> bool {
    lora_reachable(link, config) || nbiot_reachable(link)
}

/// Deployment environment with its coverage-extension usage distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentClass {
    Outdoor,
    Indoor,
    Subterranean,
}

impl EnvironmentClass {
    /// Probability of each CE level in this environment.
    ///
    /// Outdoor: no extension for 93% of messages, remainder split evenly.
    /// Subterranean: CE1 27% and CE2 19% of the time.
    /// Indoor sits between the two (no field figure; interpolated).
    pub fn ce_probabilities(&self) -> [f64; 3] {
        match self {
            EnvironmentClass::Outdoor => [0.93, 0.035, 0.035],
            EnvironmentClass::Indoor => [0.80, 0.13, 0.07],
            EnvironmentClass::Subterranean => [0.54, 0.27, 0.19],
        }
    }
}

/// Draw a CE level from the environment's distribution.
pub fn sample_environment<R: Rng>(env: EnvironmentClass, rng: &mut R) -> CeLevel {
    sample_ce_from_probabilities(&env.ce_probabilities(), rng)
}

/// Draw a CE level from an explicit probability vector (must sum to 1).
pub fn sample_ce_from_probabilities<R: Rng>(probabilities: &[f64; 3], rng: &mut R) -> CeLevel {
    let draw: f64 = rng.gen();
    if draw < probabilities[0] {
        CeLevel::Ce0
    } else if draw < probabilities[0] + probabilities[1] {
        CeLevel::Ce1
    } else {
        CeLevel::Ce2
    }
}

/// Log-distance path loss helper for scenario authoring.
///
/// `PL(d) = pl0 + 10 n log10(d/d0)`. Carries no measurement authority; it
/// exists so scenarios can be written in metres instead of dB.
pub fn log_distance_path_loss(distance_m: f64, exponent: f64, pl0_db: f64, d0_m: f64) -> f64 {
    pl0_db + 10.0 * exponent * (distance_m / d0_m).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn link(path_loss: f64) -> LinkState {
        LinkState::from_path_loss(path_loss, 0.0, RSRP_REFERENCE_DBM)
    }

    #[test]
    fn lora_budget_gate_at_sf12() {
        let sf12 = LoRaRadioConfig::new(12, 125_000);
        assert!(lora_reachable(&link(150.0), &sf12));
        assert!(!lora_reachable(&link(160.0), &sf12));
        // SF7 loses the floor gap: budget 143.5 dB
        let sf7 = LoRaRadioConfig::new(7, 125_000);
        assert!((lora_budget_db(7) - 143.5).abs() < 1e-12);
        assert!(!lora_reachable(&link(150.0), &sf7));
    }

    #[test]
    fn nbiot_mcl_boundary_inclusive() {
        assert!(nbiot_reachable(&link(164.0)));
        assert!(!nbiot_reachable(&link(165.0)));
    }

    #[test]
    fn union_coverage_exceeds_either() {
        let sf12 = LoRaRadioConfig::new(12, 125_000);
        let l = link(158.0);
        assert!(!lora_reachable(&l, &sf12));
        assert!(nbiot_reachable(&l));
        assert!(multirat_reachable(&l, &sf12));
    }

    #[test]
    fn reachability_monotone_in_path_loss() {
        let sf12 = LoRaRadioConfig::new(12, 125_000);
        let mut reachable_below = true;
        for tenth in 0..=1800 {
            let l = link(tenth as f64 / 10.0);
            let r = multirat_reachable(&l, &sf12);
            if !reachable_below {
                assert!(!r, "regained coverage at {} dB", l.path_loss_db);
            }
            reachable_below = r;
        }
    }

    #[test]
    fn rsrp_tracks_path_loss_one_for_one() {
        let a = link(100.0);
        let b = link(101.0);
        assert!((a.rsrp_dbm - b.rsrp_dbm - 1.0).abs() < 1e-12);
        assert!((link(164.0).rsrp_dbm - (-141.0)).abs() < 1e-12);
    }

    #[test]
    fn environment_frequencies_match_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        for env in [EnvironmentClass::Outdoor, EnvironmentClass::Subterranean] {
            let mut counts = [0u32; 3];
            for _ in 0..n {
                counts[sample_environment(env, &mut rng) as usize] += 1;
            }
            let probs = env.ce_probabilities();
            for lvl in 0..3 {
                let freq = counts[lvl] as f64 / n as f64;
                assert!(
                    (freq - probs[lvl]).abs() <= 0.01,
                    "{env:?} CE{lvl}: {freq} vs {}",
                    probs[lvl]
                );
            }
        }
    }

    #[test]
    fn degenerate_vector_is_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(sample_ce_from_probabilities(&[0.0, 0.0, 1.0], &mut rng), CeLevel::Ce2);
        }
    }

    #[test]
    fn environment_sampling_is_seed_deterministic() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64)
                .map(|_| sample_environment(EnvironmentClass::Indoor, &mut rng) as u8)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn log_distance_helper() {
        let pl = log_distance_path_loss(1000.0, 3.0, 40.0, 1.0);
        assert!((pl - 130.0).abs() < 1e-9);
    }
}
