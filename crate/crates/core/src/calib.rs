//! Calibration of NB-IoT energy-profile constants against measured
//! per-message energies.
//!
//! The per-message energy model is linear in the state powers once durations
//! are fixed, so the fit is a non-negative least squares over two constants:
//! the transmit power and a common scale on the idle-state (CDRX and eDRX
//! paging) powers. With two unknowns an exact active-set solve is enough.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nbiot::{select_ce_level, CeLevel, NbIotConfig, NbIotEnergyProfile};

/// One measured message: signal condition, payload, energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub rsrp_dbm: f64,
    pub payload_bytes: u32,
    pub measured_energy_j: f64,
    /// CE level the network granted for this message. Optional in the CSV;
    /// derived from the RSRP thresholds when absent.
    pub ce_level: Option<u8>,
}

impl CalibrationSample {
    pub fn level(&self, config: &NbIotConfig) -> CeLevel {
        match self.ce_level {
            Some(idx) => CeLevel::from_index(idx as usize).unwrap_or(CeLevel::Ce2),
            None => select_ce_level(self.rsrp_dbm, config),
        }
    }
}

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("sample file {path}: {message}")]
    Format { path: String, message: String },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("need at least 3 samples for every CE level present; {0}")]
    TooFewSamples(String),
    #[error("calibration input is rank-deficient: cannot separately resolve {unresolvable:?} (vary payload size or CE level across samples)")]
    RankDeficient { unresolvable: Vec<&'static str> },
}

/// Fit outcome: the adjusted profile plus per-level diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationFit {
    pub profile: NbIotEnergyProfile,
    /// Fitted transmit power (W).
    pub p_transmit_w: f64,
    /// Fitted scale applied to the idle-state powers.
    pub fixed_state_scale: f64,
    /// Per-CE-level diagnostics, indexed by level.
    pub levels: Vec<LevelResidual>,
    pub rms_residual_j: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LevelResidual {
    pub ce_level: u8,
    pub samples: usize,
    pub mean_measured_j: f64,
    pub mean_predicted_j: f64,
    pub rms_residual_j: f64,
}

/// Read samples from a CSV with header
/// `rsrp_dbm,payload_bytes,measured_energy_j[,ce_level]`.
pub fn read_samples_csv(path: &Path) -> Result<Vec<CalibrationSample>, CalibError> {
    let file = std::fs::File::open(path).map_err(|source| CalibError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CalibError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let field = |i: usize| -> Result<&str, CalibError> {
            record.get(i).ok_or_else(|| CalibError::Format {
                path: path.display().to_string(),
                message: format!("row {}: missing column {i}", line + 2),
            })
        };
        let parse_err = |what: &str| CalibError::Format {
            path: path.display().to_string(),
            message: format!("row {}: bad {what}", line + 2),
        };
        let sample = CalibrationSample {
            rsrp_dbm: field(0)?.parse().map_err(|_| parse_err("rsrp_dbm"))?,
            payload_bytes: field(1)?.parse().map_err(|_| parse_err("payload_bytes"))?,
            measured_energy_j: field(2)?.parse().map_err(|_| parse_err("measured_energy_j"))?,
            ce_level: match record.get(3) {
                Some(s) if !s.is_empty() => Some(s.parse().map_err(|_| parse_err("ce_level"))?),
                _ => None,
            },
        };
        out.push(sample);
    }
    Ok(out)
}

/// Least-squares fit of the profile's power constants to the samples.
///
/// Unknowns are `p_tx` (transmit power) and `s` (scale on the CDRX/eDRX
/// powers), both clamped non-negative; durations come from the initial
/// profile and config. When the samples cannot separate the two constants
/// (single CE level at a single payload size), a whole-profile scale is
/// tried instead and accepted only if it reproduces the data exactly.
pub fn calibrate(
    initial: &NbIotEnergyProfile,
    config: &NbIotConfig,
    samples: &[CalibrationSample],
) -> Result<CalibrationFit, CalibError> {
    if samples.is_empty() {
        return Err(CalibError::TooFewSamples("no samples given".into()));
    }
    for s in samples {
        if !(s.measured_energy_j > 0.0) {
            return Err(CalibError::InvalidSample(format!(
                "measured energy must be positive, got {}",
                s.measured_energy_j
            )));
        }
        if s.payload_bytes > config.max_payload_bytes {
            return Err(CalibError::InvalidSample(format!(
                "payload {} B over the {} B cap",
                s.payload_bytes, config.max_payload_bytes
            )));
        }
    }
    let mut per_level_counts = [0usize; 3];
    for s in samples {
        per_level_counts[s.level(config) as usize] += 1;
    }
    let lacking: Vec<String> = per_level_counts
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n > 0 && n < 3)
        .map(|(lvl, &n)| format!("CE{lvl} has {n}"))
        .collect();
    if !lacking.is_empty() {
        return Err(CalibError::TooFewSamples(lacking.join(", ")));
    }

    // design: E = p_tx * d_tx(ce, payload) + s * f0
    let f0 = initial.cdrx.power_w * initial.cdrx.base_duration_s
        + initial.edrx_ptw.power_w * initial.edrx_ptw.base_duration_s;
    let rows: Vec<(f64, f64, f64)> = samples
        .iter()
        .map(|s| {
            (
                initial.transmit_duration_s(s.level(config), s.payload_bytes),
                f0,
                s.measured_energy_j,
            )
        })
        .collect();

    let (p_tx, scale) = match solve_nnls_2(&rows) {
        Some(solution) => solution,
        None => {
            // degenerate design: try scaling the whole initial profile
            let whole: Vec<(f64, f64)> = samples
                .iter()
                .map(|s| {
                    let d = initial.transmit_duration_s(s.level(config), s.payload_bytes);
                    (initial.transmit.power_w * d + f0, s.measured_energy_j)
                })
                .collect();
            let num: f64 = whole.iter().map(|(a, e)| a * e).sum();
            let den: f64 = whole.iter().map(|(a, _)| a * a).sum();
            if den == 0.0 {
                return Err(CalibError::RankDeficient {
                    unresolvable: vec!["p_transmit_w", "fixed_state_scale"],
                });
            }
            let k = (num / den).max(0.0);
            let worst = whole
                .iter()
                .map(|(a, e)| (k * a - e).abs() / e.max(1e-12))
                .fold(0.0_f64, f64::max);
            if worst > 1e-9 {
                return Err(CalibError::RankDeficient {
                    unresolvable: vec!["p_transmit_w", "fixed_state_scale"],
                });
            }
            (k * initial.transmit.power_w, k)
        }
    };

    let mut profile = *initial;
    profile.transmit.power_w = p_tx;
    profile.cdrx.power_w *= scale;
    profile.edrx_ptw.power_w *= scale;

    // diagnostics per level
    let mut levels = Vec::new();
    let mut sq_sum = 0.0;
    for (lvl_idx, &count) in per_level_counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let level = CeLevel::from_index(lvl_idx).unwrap();
        let mut measured = 0.0;
        let mut predicted = 0.0;
        let mut sq = 0.0;
        for s in samples.iter().filter(|s| s.level(config) == level) {
            let pred = p_tx * initial.transmit_duration_s(level, s.payload_bytes) + scale * f0;
            measured += s.measured_energy_j;
            predicted += pred;
            sq += (pred - s.measured_energy_j).powi(2);
        }
        sq_sum += sq;
        levels.push(LevelResidual {
            ce_level: lvl_idx as u8,
            samples: count,
            mean_measured_j: measured / count as f64,
            mean_predicted_j: predicted / count as f64,
            rms_residual_j: (sq / count as f64).sqrt(),
        });
    }

    Ok(CalibrationFit {
        profile,
        p_transmit_w: p_tx,
        fixed_state_scale: scale,
        rms_residual_j: (sq_sum / samples.len() as f64).sqrt(),
        levels,
    })
}

/// Non-negative least squares for `E ~ x1*a + x2*b` by active set: solve the
/// unconstrained 2x2 normal equations, then clamp and re-solve on the
/// boundary if a coefficient goes negative. Returns `None` when the normal
/// matrix is singular (collinear columns).
fn solve_nnls_2(rows: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    let (mut saa, mut sab, mut sbb, mut sae, mut sbe) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(a, b, e) in rows {
        saa += a * a;
        sab += a * b;
        sbb += b * b;
        sae += a * e;
        sbe += b * e;
    }
    let det = saa * sbb - sab * sab;
    let scale = saa.max(sbb);
    if scale == 0.0 || det <= 1e-12 * scale * scale {
        return None;
    }
    let x1 = (sae * sbb - sbe * sab) / det;
    let x2 = (sbe * saa - sae * sab) / det;
    if x1 >= 0.0 && x2 >= 0.0 {
        return Some((x1, x2));
    }
    // one variable pinned at zero, best remaining 1-d solve
    let only_x1 = if saa > 0.0 { (sae / saa).max(0.0) } else { 0.0 };
    let only_x2 = if sbb > 0.0 { (sbe / sbb).max(0.0) } else { 0.0 };
    let cost = |x1: f64, x2: f64| {
        rows.iter()
            .map(|&(a, b, e)| (x1 * a + x2 * b - e).powi(2))
            .sum::<f64>()
    };
    if cost(only_x1, 0.0) <= cost(0.0, only_x2) {
        Some((only_x1, 0.0))
    } else {
        Some((0.0, only_x2))
    }
}

/// Generate noiseless samples from a known profile, for round-trip checks.
pub fn synthesize_samples(
    profile: &NbIotEnergyProfile,
    config: &NbIotConfig,
    payloads: &[u32],
) -> Vec<CalibrationSample> {
    let rsrp_for = [-90.0, -122.0, -131.0];
    let mut out = Vec::new();
    for level in CeLevel::ALL {
        for &payload in payloads {
            let energy =
                crate::nbiot::message_energy(level, payload, profile, config).expect("valid payload");
            out.push(CalibrationSample {
                rsrp_dbm: rsrp_for[level as usize],
                payload_bytes: payload,
                measured_energy_j: energy,
                ce_level: Some(level as u8),
            });
        }
    }
    out
}
