//! Run configuration file and topology strings.

use std::path::{Path, PathBuf};

use hybrid_imc::hwcost::{CostModel, Profile};
use hybrid_imc::search::{FinetuneConfig, SearchConfig};
use hybrid_imc::topology::{parse_layers, LayerDesc, Topology, DESK_VGG, VGG16};
use hybrid_imc::xbar::CrossbarConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TaskProfile {
    Cifar10,
    Tinyimagenet,
    Synthetic,
}

impl TaskProfile {
    /// The ADC-precision profile; the synthetic task uses the CIFAR-10 one.
    pub fn cost_profile(self) -> Profile {
        match self {
            TaskProfile::Tinyimagenet => Profile::TinyImagenet,
            _ => Profile::Cifar10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory with the CIFAR-10 binary batches.
    pub dir: Option<PathBuf>,
    /// Training samples kept (0 keeps all).
    pub train: usize,
    pub test: usize,
    pub image_size: usize,
    pub classes: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    /// Synthetic generator: per-pixel noise and class-pattern amplitude.
    pub noise: f64,
    pub signal: f64,
    pub pattern_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            dir: None,
            train: 5000,
            test: 1000,
            image_size: 32,
            classes: 10,
            mean: [0.4914, 0.4822, 0.4465],
            std: [0.2470, 0.2435, 0.2616],
            noise: 1.0,
            signal: 0.6,
            pattern_seed: 0x5EED,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: TaskProfile,
    /// Layer list, or `vgg16` / `desk` for the built-in ones.
    pub topology: String,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub device_table: Option<PathBuf>,
    pub data: DataConfig,
    pub search: SearchConfig,
    pub finetune: FinetuneConfig,
    pub crossbar: CrossbarConfig,
    pub pes_per_tile: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: TaskProfile::Synthetic,
            topology: "desk".into(),
            seed: 0,
            out: None,
            device_table: None,
            data: DataConfig::default(),
            search: SearchConfig::default(),
            finetune: FinetuneConfig::default(),
            crossbar: CrossbarConfig::default(),
            pes_per_tile: 64,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Parse(format!("run config: {e}")))
    }

    /// Read a config file; relative paths inside it are taken relative to its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::MissingInput(format!("config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        rebase(&mut cfg.device_table);
        rebase(&mut cfg.data.dir);
        rebase(&mut cfg.out);
        Ok(cfg)
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (3, self.data.image_size, self.data.image_size)
    }

    pub fn topology(&self) -> CliResult<Topology> {
        let text = match self.topology.trim() {
            "vgg16" => VGG16,
            "desk" => DESK_VGG,
            other => other,
        };
        let layers = parse_topology(text)?;
        Ok(Topology::new(layers, self.input_shape(), self.data.classes)?)
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel {
            xbar: self.crossbar,
            pes_per_tile: self.pes_per_tile,
            ..CostModel::default()
        }
    }

    /// Referenced files must exist when the config is used.
    pub fn check_paths(&self) -> CliResult<()> {
        if let Some(p) = &self.device_table {
            if !p.is_file() {
                return Err(CliError::MissingInput(format!("device table {}", p.display())));
            }
        }
        if self.data.source == DataSource::Cifar10 {
            match &self.data.dir {
                Some(d) if d.is_dir() => {}
                Some(d) => return Err(CliError::MissingInput(format!("CIFAR-10 directory {}", d.display()))),
                None => return Err(CliError::MissingInput("data.dir is required for CIFAR-10".into())),
            }
        }
        Ok(())
    }
}

/// Parse a layer list and check that consecutive convolutions agree on channel counts.
pub fn parse_topology(text: &str) -> CliResult<Vec<LayerDesc>> {
    let layers = parse_layers(text)?;
    let mut channels: Option<usize> = None;
    for (i, l) in layers.iter().enumerate() {
        if let LayerDesc::Conv(s) = l {
            if let Some(c) = channels {
                if c != s.in_channels {
                    return Err(CliError::Invalid(format!(
                        "layer {}: conv expects {} input channels but receives {c}",
                        i + 1,
                        s.in_channels
                    )));
                }
            }
            channels = Some(s.out_channels);
        }
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_strings() {
        let l = parse_topology("conv (3,64), M, FC").unwrap();
        assert_eq!(l.len(), 3);
        let l = parse_topology(VGG16).unwrap();
        assert_eq!(l.iter().filter(|x| matches!(x, LayerDesc::Conv(_))).count(), 12);
        assert_eq!(l.iter().filter(|x| matches!(x, LayerDesc::MaxPool)).count(), 4);
        assert!(matches!(l.last(), Some(LayerDesc::Fc)));
        assert!(matches!(parse_topology("conv (3,64), conv (128,128)"), Err(CliError::Invalid(_))));
        match parse_topology("conv (3,64), banana") {
            Err(CliError::Parse(m)) => assert!(m.contains("offset"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let c = RunConfig::parse("seed = 4\n[search]\nlambda1 = 0.5\n[data]\ntrain = 100\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.search.lambda1, 0.5);
        assert_eq!(c.search.epochs, 30);
        assert_eq!(c.data.train, 100);
        assert_eq!(c.data.test, 1000);
        assert_eq!(c.topology().unwrap().conv_count(), 6);
        assert!(matches!(RunConfig::parse("sed = 4"), Err(CliError::Parse(_))));
        assert!(matches!(RunConfig::parse("seed = \"x\""), Err(CliError::Parse(_))));
    }
}
