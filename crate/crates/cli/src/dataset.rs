//! Training and test sets: CIFAR-10 binary batches or the synthetic generator.

use std::path::Path;

use hybrid_imc::data::{synthetic, Dataset, SyntheticSpec};

use crate::config::{DataConfig, DataSource};
use crate::error::{CliError, CliResult};

pub const CIFAR_RECORD: usize = 3073;
const CIFAR_PIXELS: usize = 3072;
const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Debug)]
pub struct DatasetHandle {
    pub source: String,
    pub train: Dataset,
    pub test: Dataset,
}

/// Decode CIFAR-10 records (1 label byte, then 1024 R, 1024 G, 1024 B bytes),
/// scaling pixels to [0, 1] and normalizing each channel with `mean`/`std`.
pub fn parse_cifar_records(bytes: &[u8], name: &str, mean: &[f64; 3], std: &[f64; 3]) -> CliResult<(Vec<f32>, Vec<usize>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let offset = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(CliError::Parse(format!(
            "{name}: truncated record at byte offset {offset} ({} bytes is not a multiple of {CIFAR_RECORD})",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(CliError::Parse(format!(
                "{name}: label {} out of range at byte offset {}",
                rec[0],
                i * CIFAR_RECORD
            )));
        }
        labels.push(usize::from(rec[0]));
        for (c, plane) in rec[1..].chunks_exact(1024).enumerate() {
            images.extend(plane.iter().map(|&b| ((f64::from(b) / 255.0 - mean[c]) / std[c]) as f32));
        }
    }
    Ok((images, labels))
}

fn read_batch(path: &Path, mean: &[f64; 3], std: &[f64; 3]) -> CliResult<(Vec<f32>, Vec<usize>)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    parse_cifar_records(&bytes, &path.display().to_string(), mean, std)
}

/// Load the five training batches and the test batch from `dir`.
pub fn load_cifar10(dir: &Path, mean: &[f64; 3], std: &[f64; 3]) -> CliResult<DatasetHandle> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in TRAIN_FILES {
        let (i, l) = read_batch(&dir.join(f), mean, std)?;
        images.extend(i);
        labels.extend(l);
    }
    let train = Dataset::new(images, labels, (3, 32, 32), 10)?;
    let (i, l) = read_batch(&dir.join(TEST_FILE), mean, std)?;
    let test = Dataset::new(i, l, (3, 32, 32), 10)?;
    Ok(DatasetHandle {
        source: format!("cifar10:{}", dir.display()),
        train,
        test,
    })
}

pub fn load_data(cfg: &DataConfig, seed: u64) -> CliResult<DatasetHandle> {
    let mut handle = match cfg.source {
        DataSource::Cifar10 => {
            let dir = cfg
                .dir
                .as_ref()
                .ok_or_else(|| CliError::MissingInput("data.dir is required for CIFAR-10".into()))?;
            if cfg.image_size != 32 || cfg.classes != 10 {
                return Err(CliError::Invalid("CIFAR-10 images are 32x32 with 10 classes".into()));
            }
            load_cifar10(dir, &cfg.mean, &cfg.std)?
        }
        DataSource::Synthetic => {
            let spec = SyntheticSpec {
                samples: cfg.train,
                classes: cfg.classes,
                shape: (3, cfg.image_size, cfg.image_size),
                noise: cfg.noise,
                signal: cfg.signal,
                pattern_seed: cfg.pattern_seed,
            };
            let train = synthetic(&spec, seed)?;
            let test = synthetic(
                &SyntheticSpec {
                    samples: cfg.test,
                    ..spec
                },
                seed ^ 0x7E57,
            )?;
            DatasetHandle {
                source: "synthetic".into(),
                train,
                test,
            }
        }
    };
    if cfg.train > 0 && cfg.train < handle.train.len() {
        handle.train = handle.train.head(cfg.train);
    }
    if cfg.test > 0 && cfg.test < handle.test.len() {
        handle.test = handle.test.head(cfg.test);
    }
    Ok(handle)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MEAN: [f64; 3] = [0.0; 3];
    const STD: [f64; 3] = [1.0; 3];

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, CIFAR_PIXELS));
        r
    }

    #[test]
    fn decodes_planes_and_labels() {
        let mut bytes = record(3, 255);
        bytes.extend(record(9, 0));
        bytes[1 + 1024] = 51; // first green pixel of record 0
        let (img, lab) = parse_cifar_records(&bytes, "t", &MEAN, &STD).unwrap();
        assert_eq!(lab, vec![3, 9]);
        assert_eq!(img.len(), 2 * CIFAR_PIXELS);
        assert_eq!(img[0], 1.0);
        assert_eq!(img[1024], 0.2);
        assert_eq!(img[CIFAR_PIXELS], 0.0);
    }

    #[test]
    fn normalizes_per_channel() {
        let bytes = record(0, 255);
        let (img, _) = parse_cifar_records(&bytes, "t", &[0.5, 0.0, 1.0], &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!((img[0], img[1024], img[2048]), (1.0, 1.0, 0.0));
    }

    #[test]
    fn truncated_file_names_offset() {
        let mut bytes = record(1, 7);
        bytes.extend(record(2, 7));
        bytes.truncate(CIFAR_RECORD + 100);
        match parse_cifar_records(&bytes, "b.bin", &MEAN, &STD) {
            Err(CliError::Parse(m)) => assert!(m.contains("byte offset 3073"), "{m}"),
            other => panic!("{other:?}"),
        }
        let bad = record(12, 0);
        assert!(matches!(parse_cifar_records(&bad, "b", &MEAN, &STD), Err(CliError::Parse(_))));
    }

    #[test]
    fn full_batch_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        let batch: Vec<u8> = (0..10_000).flat_map(|i| record((i % 10) as u8, (i % 256) as u8)).collect();
        for f in TRAIN_FILES.iter().chain([&TEST_FILE]) {
            std::fs::write(dir.path().join(f), &batch).unwrap();
        }
        let h = load_cifar10(dir.path(), &MEAN, &STD).unwrap();
        assert_eq!(h.train.len(), 50_000);
        assert_eq!(h.test.len(), 10_000);
        assert!(h.test.labels.iter().all(|&l| l < 10));
        std::fs::remove_file(dir.path().join(TEST_FILE)).unwrap();
        assert!(matches!(load_cifar10(dir.path(), &MEAN, &STD), Err(CliError::MissingInput(_))));
    }

    #[test]
    fn synthetic_split_sizes() {
        let cfg = DataConfig {
            train: 30,
            test: 12,
            image_size: 8,
            ..DataConfig::default()
        };
        let h = load_data(&cfg, 1).unwrap();
        assert_eq!((h.train.len(), h.test.len()), (30, 12));
        assert_ne!(h.train.images[..10], h.test.images[..10]);
    }
}
