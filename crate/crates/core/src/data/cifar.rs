//! CIFAR-10 binary batches: records of one label byte followed by 3072
//! pixel bytes (3 channel planes of 32x32, row-major).

use std::path::Path;

use super::Dataset;
use crate::{Error, Result};

pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone)]
pub struct CifarSplits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Parses one batch file's bytes; pixels are scaled to `[0, 1]`.
pub fn parse_cifar_batch(bytes: &[u8], path: &Path) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Format {
            path: path.into(),
            msg: format!(
                "size {} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = rec[0];
        if label > 9 {
            return Err(Error::Format {
                path: path.into(),
                msg: format!("record {r} has label byte {label} > 9"),
            });
        }
        labels.push(label as usize);
        samples.push(rec[1..].iter().map(|&b| b as f64 / 255.0).collect());
    }
    Ok((samples, labels))
}

pub fn load_cifar_file(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (samples, labels) = parse_cifar_batch(&bytes, path)?;
    let name = path
        .file_stem()
        .map_or_else(|| "cifar10".to_string(), |s| s.to_string_lossy().into_owned());
    let mut ds = Dataset::new(name, samples, Some(labels))?;
    ds.image_shape = Some([3, 32, 32]);
    Ok(ds)
}

fn concat(dir: &Path, files: &[&str], name: &str) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let path = dir.join(f);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (s, l) = parse_cifar_batch(&bytes, &path)?;
        samples.extend(s);
        labels.extend(l);
    }
    let mut ds = Dataset::new(name, samples, Some(labels))?;
    ds.image_shape = Some([3, 32, 32]);
    Ok(ds)
}

/// Loads the five training batches and the test batch from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<CifarSplits> {
    Ok(CifarSplits {
        train: concat(dir, &TRAIN_FILES, "cifar10-train")?,
        test: concat(dir, &[TEST_FILE], "cifar10-test")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![fill; CIFAR_RECORD_BYTES];
        r[0] = label;
        r
    }

    #[test]
    fn record_arithmetic() {
        let mut bytes = Vec::new();
        for k in 0..4u8 {
            bytes.extend(record(k, 255 - k));
        }
        let (s, l) = parse_cifar_batch(&bytes, Path::new("mem")).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(l, vec![0, 1, 2, 3]);
        assert_eq!(s[0].len(), 3072);
        assert_eq!(s[0][0], 1.0);
        assert_eq!(s[3][100], 252.0 / 255.0);
    }

    #[test]
    fn channel_planar_layout() {
        let mut r = record(5, 0);
        // red plane pixel (row 1, col 2), green plane pixel (0, 0)
        r[1 + 32 + 2] = 255;
        r[1 + 1024] = 51;
        let (s, _) = parse_cifar_batch(&r, Path::new("mem")).unwrap();
        assert_eq!(s[0][32 + 2], 1.0);
        assert_eq!(s[0][1024], 0.2);
    }

    #[test]
    fn truncated_file_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        let mut bytes = record(1, 9);
        bytes.pop();
        std::fs::write(&path, bytes).unwrap();
        let err = load_cifar_file(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("data_batch_1.bin"));
    }

    #[test]
    fn bad_label_rejected() {
        let err = parse_cifar_batch(&record(10, 0), Path::new("x.bin")).unwrap_err();
        assert!(err.to_string().contains("label byte 10"));
    }

    #[test]
    fn loads_split_directory() {
        let dir = tempfile::tempdir().unwrap();
        for (i, f) in TRAIN_FILES.iter().enumerate() {
            let mut bytes = record(i as u8, 0);
            bytes.extend(record(9, 1));
            std::fs::write(dir.path().join(f), bytes).unwrap();
        }
        std::fs::write(dir.path().join(TEST_FILE), record(3, 2)).unwrap();
        let splits = load_cifar10(dir.path()).unwrap();
        assert_eq!(splits.train.len(), 10);
        assert_eq!(splits.test.len(), 1);
        assert_eq!(splits.train.ground_truth().unwrap().as_slice()[..4], [0, 9, 1, 9]);
        assert_eq!(splits.train.image_shape, Some([3, 32, 32]));
    }

    /// Checks the official files when `CIFAR10_DIR` points at them. The first
    /// labels of the published batches are 6 (train batch 1) and 3 (test).
    #[test]
    fn official_first_labels_when_available() {
        let Ok(dir) = std::env::var("CIFAR10_DIR") else {
            eprintln!("CIFAR10_DIR not set; skipping official-file check");
            return;
        };
        let dir = Path::new(&dir);
        let train = load_cifar_file(&dir.join("data_batch_1.bin")).unwrap();
        assert_eq!(train.ground_truth().unwrap().label(0), 6);
        let test = load_cifar_file(&dir.join(TEST_FILE)).unwrap();
        assert_eq!(test.ground_truth().unwrap().label(0), 3);
        let splits = load_cifar10(dir).unwrap();
        assert_eq!(splits.train.len(), 50_000);
        assert_eq!(splits.test.len(), 10_000);
    }
}
