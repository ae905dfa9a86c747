//! Datasets: synthetic manifolds, the CIFAR-10 binary format, and augmentation.
//!
//! Ground-truth labels are stored in a [`GroundTruth`] that only evaluation
//! code takes as an argument. Training and mining only ever see
//! [`Dataset::samples`].

mod augment;
mod cifar;
mod manifold;

pub use augment::{augment, flip_horizontal, AugmentSpec};
pub use cifar::{load_cifar10, load_cifar_file, parse_cifar_batch, CifarSplits, CIFAR_RECORD_BYTES};
pub use manifold::{gen_manifold, ManifoldKind};

use std::path::Path;

use crate::{Error, Result};

/// Class labels, one per sample. Evaluation-only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth(Vec<usize>);

impl GroundTruth {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn label(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.0.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    samples: Vec<Vec<f64>>,
    labels: Option<GroundTruth>,
    /// `(channels, height, width)` when samples are channel-planar images.
    pub image_shape: Option<[usize; 3]>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, samples: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> Result<Self> {
        let name = name.into();
        if let Some(first) = samples.first() {
            if let Some(bad) = samples.iter().find(|s| s.len() != first.len()) {
                return Err(Error::dim("Dataset sample", first.len(), bad.len()));
            }
        }
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(Error::dim("Dataset labels", samples.len(), l.len()));
            }
        }
        Ok(Self {
            name,
            samples,
            labels: labels.map(GroundTruth),
            image_shape: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// The first `n` samples (all of them if fewer).
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        let mut out = Self::new(
            self.name.clone(),
            self.samples[..n].to_vec(),
            self.labels.as_ref().map(|l| l.0[..n].to_vec()),
        )?;
        out.image_shape = self.image_shape;
        Ok(out)
    }

    /// Labels for evaluation. Never pass these to training or mining code.
    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.labels.as_ref()
    }

    /// Writes `x0,...,xD-1,label`; the label cell is empty for unlabeled data.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut row: Vec<String> = s.iter().map(f64::to_string).collect();
            row.push(self.labels.as_ref().map_or(String::new(), |l| l.label(i).to_string()));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        let label_col = header.iter().position(|h| h == "label");
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        let mut all_labeled = label_col.is_some();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let mut x = Vec::with_capacity(rec.len());
            for (c, cell) in rec.iter().enumerate() {
                if Some(c) == label_col {
                    match cell.trim() {
                        "" => all_labeled = false,
                        v => labels.push(v.parse::<usize>().map_err(|e| Error::Format {
                            path: path.into(),
                            msg: format!("bad label {v:?}: {e}"),
                        })?),
                    }
                } else {
                    x.push(cell.trim().parse::<f64>().map_err(|e| Error::Format {
                        path: path.into(),
                        msg: format!("bad value {cell:?}: {e}"),
                    })?);
                }
            }
            samples.push(x);
        }
        let name = path
            .file_stem()
            .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
        let labels = (all_labeled && labels.len() == samples.len()).then_some(labels);
        Self::new(name, samples, labels)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.into(),
        msg: e.to_string(),
    }
}
