//! Versioned profile file: radio defaults, energy profiles, timers and
//! latency-model parameters in one schema-validated JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lorawan::{LoRaEnergyProfile, LoRaRadioConfig};
use crate::nbiot::{LatencyModel, NbIotConfig, NbIotEnergyProfile};

/// The one supported schema version.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },
}

/// Link-model constants carried alongside the radio profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDefaults {
    /// Base-station reference power for RSRP derivation (dBm).
    pub rsrp_reference_dbm: f64,
}

impl Default for LinkDefaults {
    fn default() -> Self {
        Self { rsrp_reference_dbm: crate::link::RSRP_REFERENCE_DBM }
    }
}

/// The complete profile document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    pub schema_version: u32,
    pub lora_radio: LoRaRadioConfig,
    pub lora_energy: LoRaEnergyProfile,
    pub nbiot_config: NbIotConfig,
    pub nbiot_energy: NbIotEnergyProfile,
    pub latency_model: LatencyModel,
    pub link: LinkDefaults,
}

impl Default for ProfileFile {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            lora_radio: LoRaRadioConfig::default(),
            lora_energy: LoRaEnergyProfile::default(),
            nbiot_config: NbIotConfig::default(),
            nbiot_energy: NbIotEnergyProfile::default(),
            latency_model: LatencyModel::default(),
            link: LinkDefaults::default(),
        }
    }
}

impl ProfileFile {
    /// Validate version pin and every embedded invariant.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            ));
        }
        self.lora_radio.validate().map_err(|e| format!("lora_radio: {e}"))?;
        self.lora_energy.validate().map_err(|e| format!("lora_energy: {e}"))?;
        self.nbiot_config.validate().map_err(|e| format!("nbiot_config: {e}"))?;
        self.nbiot_energy.validate().map_err(|e| format!("nbiot_energy: {e}"))?;
        self.latency_model.validate().map_err(|e| format!("latency_model: {e}"))?;
        if !self.link.rsrp_reference_dbm.is_finite() {
            return Err("link.rsrp_reference_dbm must be finite".into());
        }
        Ok(())
    }

    pub fn from_json(json: &str, origin: &str) -> Result<Self, ProfileError> {
        let profile: ProfileFile = serde_json::from_str(json).map_err(|e| ProfileError::Schema {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        profile.validate().map_err(|message| ProfileError::Schema {
            path: origin.to_string(),
            message,
        })?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serialises")
    }

    pub fn save(&self, path: &Path) -> Result<(), ProfileError> {
        std::fs::write(path, self.to_json_pretty() + "\n").map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_is_valid_and_round_trips() {
        let profile = ProfileFile::default();
        profile.validate().unwrap();
        let json = profile.to_json_pretty();
        let back = ProfileFile::from_json(&json, "inline").unwrap();
        assert_eq!(profile, back);
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut doc: serde_json::Value =
            serde_json::from_str(&ProfileFile::default().to_json_pretty()).unwrap();
        doc.as_object_mut()
            .unwrap()
            .insert("surprise".into(), serde_json::json!(1));
        let err = ProfileFile::from_json(&doc.to_string(), "inline").unwrap_err();
        assert!(matches!(err, ProfileError::Schema { .. }), "{err}");
    }

    #[test]
    fn version_pin_enforced() {
        let mut profile = ProfileFile::default();
        profile.schema_version = 2;
        let json = serde_json::to_string(&profile).unwrap();
        assert!(ProfileFile::from_json(&json, "inline").is_err());
    }

    #[test]
    fn embedded_invariants_checked() {
        let mut profile = ProfileFile::default();
        profile.nbiot_config.rsrp_threshold_01_dbm = -130.0; // below the 1/2 threshold
        let json = serde_json::to_string(&profile).unwrap();
        let err = ProfileFile::from_json(&json, "inline").unwrap_err();
        assert!(err.to_string().contains("nbiot_config"));
    }
}
