use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::devlib::{find_device, DeviceSpec};
use crate::{invalid, Error, Result};

/// Dataset class that drives the ADC precision rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Cifar10,
    TinyImagenet,
}

impl Profile {
    /// Precision of the first layer and of homogeneous baselines.
    pub fn full_bits(self) -> u32 {
        match self {
            Profile::Cifar10 => 4,
            Profile::TinyImagenet => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Cifar10 => "cifar10",
            Profile::TinyImagenet => "tinyimagenet",
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    /// `synthetic` tasks are CIFAR10-class.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cifar10" | "cifar-10" | "synthetic" => Ok(Profile::Cifar10),
            "tinyimagenet" | "tiny-imagenet" => Ok(Profile::TinyImagenet),
            _ => invalid(format!("unknown profile `{s}` (expected cifar10, tinyimagenet or synthetic)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdcPolicy {
    /// Device-dependent bits, full precision on the first layer.
    Layerwise,
    /// Profile's full precision everywhere (homogeneous baselines).
    Uniform,
}

/// Per-layer ADC bits for a device assignment.
///
/// CIFAR10-class: first layer 4, SRAM 2, FeFET 3, PCM 4.
/// TinyImagenet-class: first layer 6, SRAM 2, FeFET 4, PCM 6.
/// Devices outside the built-in three get the full precision.
pub fn assign_adc_bits(devices: &[String], profile: Profile, policy: AdcPolicy) -> Vec<u32> {
    let full = profile.full_bits();
    devices
        .iter()
        .enumerate()
        .map(|(i, d)| {
            if i == 0 || policy == AdcPolicy::Uniform {
                return full;
            }
            match (d.to_ascii_lowercase().as_str(), profile) {
                ("sram", _) => 2,
                ("fefet", Profile::Cifar10) => 3,
                ("fefet", Profile::TinyImagenet) => 4,
                _ => full,
            }
        })
        .collect()
}

/// Per-conv-layer device assignment and ADC precision.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub devices: Vec<String>,
    pub adc_bits: Vec<u32>,
    pub profile: Profile,
}

impl HybridConfig {
    /// Assignment with bits from [`assign_adc_bits`].
    pub fn new(devices: Vec<String>, profile: Profile, policy: AdcPolicy) -> Self {
        let adc_bits = assign_adc_bits(&devices, profile, policy);
        HybridConfig {
            devices,
            adc_bits,
            profile,
        }
    }

    /// Every layer on one device with uniform full-precision ADCs.
    pub fn homogeneous(device: &str, layers: usize, profile: Profile) -> Self {
        HybridConfig::new(vec![device.to_string(); layers], profile, AdcPolicy::Uniform)
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn validate(&self, layers: usize, table: &[DeviceSpec]) -> Result<()> {
        if self.devices.len() != layers || self.adc_bits.len() != layers {
            return invalid(format!(
                "configuration covers {} layers, topology has {layers} conv layers",
                self.devices.len()
            ));
        }
        if self.adc_bits.contains(&0) {
            return invalid("adc bits must be at least 1");
        }
        for d in &self.devices {
            find_device(table, d)?;
        }
        Ok(())
    }

    /// Compact letter string, e.g. `S S P F`.
    pub fn letters(&self, table: &[DeviceSpec]) -> String {
        self.devices
            .iter()
            .map(|d| find_device(table, d).map(|s| s.letter()).unwrap_or('?').to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Text form: a `profile` line, then one `L<i> <letter> <bits>` line per layer.
    pub fn to_text(&self, table: &[DeviceSpec]) -> String {
        let mut s = format!("profile {}\n", self.profile.as_str());
        for (i, (d, b)) in self.devices.iter().zip(&self.adc_bits).enumerate() {
            let letter = find_device(table, d).map(|s| s.letter().to_string()).unwrap_or_else(|_| d.clone());
            s.push_str(&format!("L{} {} {}\n", i + 1, letter, b));
        }
        s
    }

    pub fn parse_text(text: &str, table: &[DeviceSpec]) -> Result<Self> {
        let mut profile = Profile::Cifar10;
        let mut devices = Vec::new();
        let mut adc_bits = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Format(format!("config line {}: cannot parse `{line}`", n + 1));
            match parts[..] {
                ["profile", p] => profile = p.parse()?,
                [layer, dev, bits] => {
                    let idx: usize = layer
                        .strip_prefix('L')
                        .and_then(|x| x.parse().ok())
                        .ok_or_else(bad)?;
                    if idx != devices.len() + 1 {
                        return Err(Error::Format(format!(
                            "config line {}: expected L{}, found {layer}",
                            n + 1,
                            devices.len() + 1
                        )));
                    }
                    devices.push(find_device(table, dev)?.name.clone());
                    adc_bits.push(bits.parse().map_err(|_| bad())?);
                }
                _ => return Err(bad()),
            }
        }
        if devices.is_empty() {
            return Err(Error::Format("configuration lists no layers".into()));
        }
        Ok(HybridConfig {
            devices,
            adc_bits,
            profile,
        })
    }
}

impl fmt::Display for HybridConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (d, b)) in self.devices.iter().zip(&self.adc_bits).enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "L{} {d}/{b}b", i + 1)?;
        }
        Ok(())
    }
}
