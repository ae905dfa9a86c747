//! Positive sets, triplet sampling, and the feature memory bank.
//!
//! The binary similarity matrix is stored row-wise as one sorted index set
//! per anchor: `s_ij = 1` exactly when `j` is in the positive set of `i`.
//! Every other index is a negative of `i`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::l2_normalize;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityState {
    n: usize,
    /// Sorted, duplicate-free, always containing the anchor itself.
    positives: Vec<Vec<usize>>,
    pub round: usize,
}

impl SimilarityState {
    /// Every instance is similar only to itself.
    pub fn init_identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("similarity state needs at least one instance".into()));
        }
        Ok(Self {
            n,
            positives: (0..n).map(|i| vec![i]).collect(),
            round: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn positives(&self, anchor: usize) -> &[usize] {
        &self.positives[anchor]
    }

    pub fn is_positive(&self, anchor: usize, j: usize) -> bool {
        self.positives[anchor].binary_search(&j).is_ok()
    }

    pub fn negative_count(&self, anchor: usize) -> usize {
        self.n - self.positives[anchor].len()
    }

    pub fn negatives(&self, anchor: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| !self.is_positive(anchor, j))
    }

    /// Number of ones in the similarity matrix.
    pub fn total_positive_pairs(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    /// Marks `j` as a positive of `anchor`. Returns whether the set grew.
    /// Only the anchor's row changes.
    pub fn add_positive(&mut self, anchor: usize, j: usize) -> Result<bool> {
        if anchor >= self.n || j >= self.n {
            return Err(Error::Usage(format!(
                "positive pair ({anchor}, {j}) out of range for {} instances",
                self.n
            )));
        }
        let set = &mut self.positives[anchor];
        match set.binary_search(&j) {
            Ok(_) => Ok(false),
            Err(pos) => {
                set.insert(pos, j);
                Ok(true)
            }
        }
    }

    /// Draws a real triplet: positive uniform over the anchor's positive set,
    /// negative uniform over its complement.
    pub fn sample_triplet<R: Rng + ?Sized>(&self, anchor: usize, rng: &mut R) -> Result<Triplet> {
        if anchor >= self.n {
            return Err(Error::Usage(format!("anchor {anchor} out of range")));
        }
        let pos_set = &self.positives[anchor];
        let n_neg = self.n - pos_set.len();
        if n_neg == 0 {
            return Err(Error::ExhaustedNegatives { anchor });
        }
        let positive = if pos_set.len() == 1 {
            anchor
        } else {
            pos_set[rng.random_range(0..pos_set.len())]
        };
        let negative = if pos_set.len() * 2 <= self.n {
            // rejection sampling is exact and cheap while negatives dominate
            loop {
                let j = rng.random_range(0..self.n);
                if pos_set.binary_search(&j).is_err() {
                    break j;
                }
            }
        } else {
            let k = rng.random_range(0..n_neg);
            self.negatives(anchor).nth(k).expect("k < negative count")
        };
        Ok(Triplet::real(anchor, positive, negative))
    }

    /// One JSON object per line: `{"anchor": i, "positives": [...]}`.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            anchor: usize,
            positives: &'a [usize],
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for (anchor, positives) in self.positives.iter().enumerate() {
            serde_json::to_writer(&mut w, &Row { anchor, positives })?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletKind {
    Real,
    /// Proxy in the positive slot.
    SyntheticPos,
    /// Proxy in the negative slot.
    SyntheticNeg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub kind: TripletKind,
    pub proxy: Option<Vec<f64>>,
}

impl Triplet {
    pub fn real(anchor: usize, positive: usize, negative: usize) -> Self {
        Self {
            anchor,
            positive,
            negative,
            kind: TripletKind::Real,
            proxy: None,
        }
    }

    /// Synthetic variant of this triplet with `proxy` in the slot named by `kind`.
    pub fn synthetic(&self, kind: TripletKind, proxy: Vec<f64>) -> Self {
        debug_assert!(kind != TripletKind::Real);
        Self {
            kind,
            proxy: Some(proxy),
            ..self.clone()
        }
    }

    /// `[anchor | positive slot | negative slot]` features, length `3 * dim`.
    pub fn concat_features(&self, bank: &MemoryBank) -> Result<Vec<f64>> {
        let proxy = || -> Result<&[f64]> {
            let p = self
                .proxy
                .as_deref()
                .ok_or_else(|| Error::Usage("synthetic triplet without a proxy".into()))?;
            if p.len() != bank.dim() {
                return Err(Error::dim("triplet proxy", bank.dim(), p.len()));
            }
            Ok(p)
        };
        let (pos, neg) = match self.kind {
            TripletKind::Real => (bank.row(self.positive), bank.row(self.negative)),
            TripletKind::SyntheticPos => (proxy()?, bank.row(self.negative)),
            TripletKind::SyntheticNeg => (bank.row(self.positive), proxy()?),
        };
        let mut out = Vec::with_capacity(3 * bank.dim());
        out.extend_from_slice(bank.row(self.anchor));
        out.extend_from_slice(pos);
        out.extend_from_slice(neg);
        Ok(out)
    }
}

/// Per-instance running feature store.
///
/// `update` mixes `eta * f + (1 - eta) * f_hat` and, with `renorm` on,
/// projects the result back onto the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    dim: usize,
    pub eta: f64,
    pub renorm: bool,
    data: Vec<f64>,
}

impl MemoryBank {
    /// Random unit vectors (normalized Gaussians).
    pub fn random<R: Rng + ?Sized>(n: usize, dim: usize, eta: f64, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("memory bank dimension must be positive".into()));
        }
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            data.extend(l2_normalize(&v));
        }
        Self::from_flat(dim, eta, data)
    }

    pub fn from_rows(rows: &[Vec<f64>], eta: f64) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Config("memory bank needs non-empty rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::dim("MemoryBank row", dim, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(dim, eta, data)
    }

    fn from_flat(dim: usize, eta: f64, data: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {eta}")));
        }
        Ok(Self {
            dim,
            eta,
            renorm: true,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Row-major `len x dim` buffer.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn update(&mut self, i: usize, feature: &[f64]) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::dim("MemoryBank::update", self.dim, feature.len()));
        }
        if i >= self.len() {
            return Err(Error::Usage(format!("bank index {i} out of range")));
        }
        // eta = 0 keeps the stored bits; eta = 1 stores the feature verbatim
        if self.eta == 0.0 {
            return Ok(());
        }
        let eta = self.eta;
        let row = &mut self.data[i * self.dim..(i + 1) * self.dim];
        if eta == 1.0 {
            row.copy_from_slice(feature);
            return Ok(());
        }
        for (r, &f) in row.iter_mut().zip(feature) {
            *r = eta * f + (1.0 - eta) * *r;
        }
        if self.renorm {
            let normalized = l2_normalize(row);
            row.copy_from_slice(&normalized);
        }
        Ok(())
    }

    /// `len` rows of `dim` comma-separated values, header `f0,...,f{dim-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let fmt = |e: csv::Error| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(fmt)?;
        w.write_record((0..self.dim).map(|j| format!("f{j}"))).map_err(fmt)?;
        for row in self.rows() {
            w.write_record(row.iter().map(f64::to_string)).map_err(fmt)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
