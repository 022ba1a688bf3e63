//! Device technology parameters and the weight <-> conductance pipeline.
//!
//! Conductances are carried in microsiemens (µS) throughout; resistances in
//! ohms, energies in joules, areas in F² (multiples of the squared feature
//! size). Time is in seconds, with the drift reference time fixed at 1 s.

mod conductance;

pub use conductance::{
    apply_drift, apply_read_noise, conductance_to_weights, perturb, perturb_weights,
    quantize_conductance, weights_to_conductance, ConductanceTensor, Perturbation,
};

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::{invalid, Error, Result};

/// Drift reference time in seconds.
pub const DRIFT_T0: f64 = 1.0;

/// Read-noise standard deviation model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ReadNoise {
    /// σ = a·G + b, with G and σ in µS.
    Affine { a: f64, b: f64 },
    /// σ = sigma_rel·G.
    Relative { sigma_rel: f64 },
    /// σ = sigma_us, independent of G.
    Absolute { sigma_us: f64 },
}

impl ReadNoise {
    pub fn sigma_us(&self, g_us: f64) -> f64 {
        match *self {
            ReadNoise::Affine { a, b } => a * g_us + b,
            ReadNoise::Relative { sigma_rel } => sigma_rel * g_us,
            ReadNoise::Absolute { sigma_us } => sigma_us,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            ReadNoise::Affine { a, b } => a == 0.0 && b == 0.0,
            ReadNoise::Relative { sigma_rel } => sigma_rel == 0.0,
            ReadNoise::Absolute { sigma_us } => sigma_us == 0.0,
        }
    }
}

/// How table entries given as a bare σ are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SigmaMode {
    /// σ is a fraction of the programmed conductance.
    #[default]
    Relative,
    /// σ is an absolute conductance in µS.
    Absolute,
}

/// Physical description of one IMC device technology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    /// ON-state resistance in ohms.
    pub r_on: f64,
    /// R_OFF / R_ON; `inf` for devices with no leakage (SRAM).
    pub on_off_ratio: f64,
    /// Programmable weight precision in bits.
    pub precision_bits: u32,
    /// Physical cells storing one weight; the weight's bits are sliced across them.
    pub cells_per_weight: u32,
    pub read_noise: ReadNoise,
    /// Drift coefficient ν, absent for devices that do not drift.
    #[serde(default)]
    pub drift_nu: Option<f64>,
    /// Programming energy per level, joules.
    pub prog_energy_per_level: f64,
    /// Footprint of one stored weight in F² (all its cells together).
    pub feature_area: f64,
}

impl DeviceSpec {
    pub fn sram() -> Self {
        DeviceSpec {
            name: "SRAM".into(),
            r_on: 5.0e3,
            on_off_ratio: f64::INFINITY,
            precision_bits: 4,
            cells_per_weight: 4,
            read_noise: ReadNoise::Relative { sigma_rel: 0.05 },
            drift_nu: None,
            prog_energy_per_level: 10.0e-15,
            feature_area: 480.0,
        }
    }

    pub fn pcm() -> Self {
        DeviceSpec {
            name: "PCM".into(),
            r_on: 40.0e3,
            on_off_ratio: 40.0,
            precision_bits: 4,
            cells_per_weight: 1,
            read_noise: ReadNoise::Affine { a: 0.03, b: 0.13 },
            drift_nu: Some(0.04),
            prog_energy_per_level: 10.0e-12,
            feature_area: 4.0,
        }
    }

    pub fn fefet() -> Self {
        DeviceSpec {
            name: "FeFET".into(),
            r_on: 222.22e3,
            on_off_ratio: 100.0,
            precision_bits: 4,
            cells_per_weight: 1,
            read_noise: ReadNoise::Relative { sigma_rel: 0.1 },
            drift_nu: Some(0.1),
            prog_energy_per_level: 2.0e-12,
            feature_area: 6.0,
        }
    }

    /// Maximum conductance 1/R_ON, in µS.
    pub fn g_max_us(&self) -> f64 {
        1.0e6 / self.r_on
    }

    /// Minimum conductance g_max / ratio, in µS (0 for an infinite ratio).
    pub fn g_min_us(&self) -> f64 {
        if self.on_off_ratio.is_infinite() {
            0.0
        } else {
            self.g_max_us() / self.on_off_ratio
        }
    }

    /// Conductance levels programmable per weight.
    pub fn levels(&self) -> u32 {
        1 << self.precision_bits
    }

    pub fn bits_per_cell(&self) -> u32 {
        self.precision_bits / self.cells_per_weight
    }

    /// Footprint of one physical cell in F².
    pub fn cell_area_f2(&self) -> f64 {
        self.feature_area / f64::from(self.cells_per_weight)
    }

    /// Multiplicative drift factor (t/t0)^(-ν); times below t0 are clamped to t0.
    pub fn drift_factor(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) || !t.is_finite() {
            return invalid(format!("drift time must be positive and finite, got {t}"));
        }
        Ok(match self.drift_nu {
            Some(nu) => (t.max(DRIFT_T0) / DRIFT_T0).powf(-nu),
            None => 1.0,
        })
    }

    /// Table-notation letter (S, P, F for the built-ins).
    pub fn letter(&self) -> char {
        self.name
            .chars()
            .next()
            .map(|c| c.to_ascii_uppercase())
            .unwrap_or('?')
    }

    /// Reinterpret a bare-σ noise entry under `mode`; affine models are unchanged.
    pub fn with_sigma_mode(mut self, mode: SigmaMode) -> Self {
        self.read_noise = match (self.read_noise, mode) {
            (ReadNoise::Relative { sigma_rel }, SigmaMode::Absolute) => {
                ReadNoise::Absolute { sigma_us: sigma_rel }
            }
            (ReadNoise::Absolute { sigma_us }, SigmaMode::Relative) => {
                ReadNoise::Relative { sigma_rel: sigma_us }
            }
            (n, _) => n,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| invalid(format!("device {}: {what}", self.name));
        if self.name.is_empty() {
            return invalid("device name is empty");
        }
        if !(self.r_on > 0.0 && self.r_on.is_finite()) {
            return bad("r_on must be positive and finite");
        }
        if !(self.on_off_ratio > 1.0) {
            return bad("on_off_ratio must exceed 1");
        }
        if self.precision_bits == 0 || self.precision_bits > 16 {
            return bad("precision_bits must be in 1..=16");
        }
        if self.cells_per_weight == 0 || !self.precision_bits.is_multiple_of(self.cells_per_weight) {
            return bad("cells_per_weight must be >= 1 and divide precision_bits");
        }
        if !(self.prog_energy_per_level > 0.0) {
            return bad("prog_energy_per_level must be positive");
        }
        if !(self.feature_area > 0.0) {
            return bad("feature_area must be positive");
        }
        if let Some(nu) = self.drift_nu {
            if !(nu > 0.0 && nu < 1.0) {
                return bad("drift_nu must lie in (0, 1)");
            }
        }
        let noise_ok = match self.read_noise {
            ReadNoise::Affine { a, b } => a >= 0.0 && b >= 0.0,
            ReadNoise::Relative { sigma_rel } => sigma_rel >= 0.0,
            ReadNoise::Absolute { sigma_us } => sigma_us >= 0.0,
        };
        if !noise_ok {
            return bad("read noise parameters must be non-negative");
        }
        Ok(())
    }
}

/// The three built-in technologies in search order: SRAM, PCM, FeFET.
///
/// The order doubles as the tie-break order when sampling a configuration.
pub fn builtin_device_table() -> Vec<DeviceSpec> {
    vec![DeviceSpec::sram(), DeviceSpec::pcm(), DeviceSpec::fefet()]
}

#[derive(Deserialize)]
struct DeviceTableFile {
    device: Vec<DeviceSpec>,
}

/// Parse a TOML device table made of `[[device]]` entries.
pub fn parse_device_table(text: &str) -> Result<Vec<DeviceSpec>> {
    let file: DeviceTableFile =
        toml::from_str(text).map_err(|e| Error::Format(format!("device table: {e}")))?;
    if file.device.is_empty() {
        return invalid("device table has no entries");
    }
    for d in &file.device {
        d.validate()?;
    }
    for (i, d) in file.device.iter().enumerate() {
        if file.device[..i].iter().any(|o| o.name == d.name) {
            return invalid(format!("duplicate device name {}", d.name));
        }
    }
    Ok(file.device)
}

pub fn load_device_table(path: &Path) -> Result<Vec<DeviceSpec>> {
    let text = std::fs::read_to_string(path)?;
    parse_device_table(&text)
}

/// Render a device table in the format [`parse_device_table`] reads.
pub fn device_table_to_toml(devices: &[DeviceSpec]) -> String {
    #[derive(Serialize)]
    struct Out<'a> {
        device: &'a [DeviceSpec],
    }
    toml::to_string(&Out { device: devices }).expect("device table serializes")
}

pub fn find_device<'a>(devices: &'a [DeviceSpec], name: &str) -> Result<&'a DeviceSpec> {
    devices
        .iter()
        .find(|d| d.name.eq_ignore_ascii_case(name) || (name.len() == 1 && d.letter() == name.chars().next().unwrap().to_ascii_uppercase()))
        .ok_or_else(|| Error::InvalidInput(format!("unknown device {name}")))
}
