//! Evaluation protocols. These are the only consumers of ground-truth labels.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::GroundTruth;
use crate::mining::knn_neighborhood;
use crate::nn::dot;
use crate::similarity::{MemoryBank, SimilarityState};
use crate::{Error, Result};

/// `min(200, n_train / 10)`, at least 1.
pub fn default_knn_k(n_train: usize) -> usize {
    (n_train / 10).clamp(1, 200)
}

fn check_rows(context: &'static str, rows: &[Vec<f64>], dim: usize) -> Result<()> {
    match rows.iter().find(|r| r.len() != dim) {
        Some(r) => Err(Error::dim(context, dim, r.len())),
        None => Ok(()),
    }
}

/// Similarity-weighted vote of the `k` most similar training features.
///
/// Neighbors are ranked by inner product (ties to the lower index) and vote
/// with weight `exp(s / tau)`; the highest-scoring class wins, ties to the
/// lower class.
pub fn weighted_knn(train: &[Vec<f64>], train_labels: &[usize], queries: &[Vec<f64>], k: usize, tau: f64) -> Result<Vec<usize>> {
    if train.is_empty() {
        return Err(Error::Usage("weighted kNN needs a non-empty training set".into()));
    }
    if train.len() != train_labels.len() {
        return Err(Error::dim("weighted_knn labels", train.len(), train_labels.len()));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("kNN temperature must be positive, got {tau}")));
    }
    let dim = train[0].len();
    check_rows("weighted_knn train", train, dim)?;
    check_rows("weighted_knn query", queries, dim)?;
    let k = k.clamp(1, train.len());
    let n_classes = train_labels.iter().max().map_or(0, |m| m + 1);
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let mut sims: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    let mut scores = vec![0.0; n_classes];
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        sims.clear();
        sims.extend(train.iter().enumerate().map(|(i, t)| (dot(q, t), i)));
        if k < sims.len() {
            sims.select_nth_unstable_by(k - 1, cmp);
        }
        let top = &mut sims[..k];
        top.sort_by(cmp);
        scores.iter_mut().for_each(|s| *s = 0.0);
        for &(s, i) in top.iter() {
            scores[train_labels[i]] += (s / tau).exp();
        }
        let mut best = 0;
        for c in 1..n_classes {
            if scores[c] > scores[best] {
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / predicted.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 50, lr: 0.5, batch_size: 64, seed: 0 }
    }
}

/// Affine softmax classifier trained by minibatch SGD on frozen features.
/// Returns top-1 accuracy on the test split.
pub fn linear_probe(
    train: &[Vec<f64>],
    train_labels: &[usize],
    test: &[Vec<f64>],
    test_labels: &[usize],
    cfg: &ProbeConfig,
) -> Result<f64> {
    if train.is_empty() || train.len() != train_labels.len() || test.len() != test_labels.len() {
        return Err(Error::Usage("linear probe needs non-empty, fully labelled splits".into()));
    }
    let dim = train[0].len();
    check_rows("linear_probe train", train, dim)?;
    check_rows("linear_probe test", test, dim)?;
    let n_classes = train_labels.iter().chain(test_labels).max().map_or(1, |m| m + 1);
    let stride = dim + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut w: Vec<f64> = (0..n_classes * stride)
        .map(|i| if i % stride == dim { 0.0 } else { rng.random_range(-scale..scale) })
        .collect();
    let logits = |w: &[f64], x: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend((0..n_classes).map(|c| {
            let row = &w[c * stride..(c + 1) * stride];
            row[dim] + dot(&row[..dim], x)
        }));
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; w.len()];
    let mut z = Vec::with_capacity(n_classes);
    let bs = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(bs) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                logits(&w, &train[i], &mut z);
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
                for c in 0..n_classes {
                    let p = (z[c] - max).exp() / sum;
                    let dz = p - if c == train_labels[i] { 1.0 } else { 0.0 };
                    let row = &mut grad[c * stride..(c + 1) * stride];
                    for (g, x) in row[..dim].iter_mut().zip(&train[i]) {
                        *g += dz * x;
                    }
                    row[dim] += dz;
                }
            }
            let step = cfg.lr / batch.len() as f64;
            for (p, g) in w.iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
    }
    let predicted: Vec<usize> = test
        .iter()
        .map(|x| {
            logits(&w, x, &mut z);
            let mut best = 0;
            for c in 1..n_classes {
                if z[c] > z[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(accuracy(&predicted, test_labels))
}

/// Bucket label for a positive-set size.
pub fn setsize_bucket(size: usize) -> &'static str {
    match size {
        0 | 1 => "1",
        2..=9 => "2-9",
        _ => "10+",
    }
}

pub const SETSIZE_BUCKETS: [&str; 3] = ["1", "2-9", "10+"];

/// Fraction of `positives` sharing the anchor's class.
pub fn set_precision(anchor: usize, positives: &[usize], labels: &GroundTruth) -> f64 {
    let a = labels.label(anchor);
    let same = positives.iter().filter(|&&j| labels.label(j) == a).count();
    same as f64 / positives.len().max(1) as f64
}

/// Mean per-anchor precision, bucketed by positive-set size. Empty buckets are
/// omitted.
pub fn mining_precision(state: &SimilarityState, labels: &GroundTruth) -> Result<BTreeMap<String, f64>> {
    if labels.len() != state.len() {
        return Err(Error::dim("mining_precision labels", state.len(), labels.len()));
    }
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for a in 0..state.len() {
        let p = state.positives(a);
        let e = acc.entry(setsize_bucket(p.len())).or_default();
        e.0 += set_precision(a, p, labels);
        e.1 += 1;
    }
    Ok(acc.into_iter().map(|(k, (s, n))| (k.to_string(), s / n as f64)).collect())
}

/// Mean precision over all anchors regardless of set size.
pub fn mean_precision(state: &SimilarityState, labels: &GroundTruth) -> Result<f64> {
    if labels.len() != state.len() {
        return Err(Error::dim("mean_precision labels", state.len(), labels.len()));
    }
    let total: f64 = (0..state.len()).map(|a| set_precision(a, state.positives(a), labels)).sum();
    Ok(total / state.len().max(1) as f64)
}

/// Mean precision of Euclidean `k`-neighborhoods (anchor included).
pub fn euclidean_baseline_precision(bank: &MemoryBank, labels: &GroundTruth, k: usize) -> Result<f64> {
    if labels.len() != bank.len() {
        return Err(Error::dim("euclidean baseline labels", bank.len(), labels.len()));
    }
    let mut total = 0.0;
    for a in 0..bank.len() {
        total += set_precision(a, &knn_neighborhood(a, k, bank)?, labels);
    }
    Ok(total / bank.len().max(1) as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub round: usize,
    pub knn_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub linear_accuracy: Option<f64>,
    pub mining_precision_by_setsize: BTreeMap<String, f64>,
    #[serde(default)]
    pub mean_precision: f64,
    /// Euclidean 10-neighborhood precision on the same bank features.
    #[serde(default)]
    pub euclidean_precision: f64,
    #[serde(default)]
    pub total_positive_pairs: usize,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Plot-ready `round,setsize,precision` table.
pub fn write_precision_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    let io = |e: csv::Error| Error::Format { path: path.to_path_buf(), msg: e.to_string() };
    w.write_record(["round", "setsize", "precision"]).map_err(io)?;
    for r in reports {
        for b in SETSIZE_BUCKETS {
            if let Some(p) = r.mining_precision_by_setsize.get(b) {
                w.write_record([r.round.to_string(), b.to_string(), p.to_string()]).map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::l2_normalize;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn unit_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| l2_normalize(&(0..d).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>()))
            .collect()
    }

    fn naive_knn(train: &[Vec<f64>], labels: &[usize], q: &[f64], k: usize, tau: f64) -> usize {
        let mut idx: Vec<usize> = (0..train.len()).collect();
        idx.sort_by(|&a, &b| dot(q, &train[b]).partial_cmp(&dot(q, &train[a])).unwrap().then(a.cmp(&b)));
        let mut votes = [0.0f64; 8];
        for &i in &idx[..k] {
            votes[labels[i]] += (dot(q, &train[i]) / tau).exp();
        }
        let mut best = 0;
        for c in 0..8 {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        best
    }

    #[test]
    fn default_k_scales_with_n() {
        assert_eq!(default_knn_k(2000), 200);
        assert_eq!(default_knn_k(1500), 150);
        assert_eq!(default_knn_k(50_000), 200);
        assert_eq!(default_knn_k(3), 1);
    }

    #[test]
    fn single_training_point_decides_everything() {
        let train = vec![vec![1.0, 0.0]];
        let queries = vec![vec![0.0, 1.0], vec![-1.0, 0.0]];
        assert_eq!(weighted_knn(&train, &[3], &queries, 5, 0.07).unwrap(), vec![3, 3]);
        assert!(weighted_knn(&[], &[], &queries, 5, 0.07).is_err());
    }

    #[test]
    fn k1_is_nearest_neighbor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let train = unit_rows(40, 3, &mut rng);
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let pred = weighted_knn(&train, &labels, &train, 1, 0.07).unwrap();
        assert_eq!(pred, labels);
        let queries = unit_rows(20, 3, &mut rng);
        let pred = weighted_knn(&train, &labels, &queries, 1, 0.07).unwrap();
        for (q, p) in queries.iter().zip(pred) {
            let nn = (0..40).max_by(|&a, &b| dot(q, &train[a]).partial_cmp(&dot(q, &train[b])).unwrap().then(b.cmp(&a))).unwrap();
            assert_eq!(p, labels[nn]);
        }
    }

    #[test]
    fn matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let train = unit_rows(30, 4, &mut rng);
        let labels: Vec<usize> = (0..30).map(|_| rng.random_range(0..2)).collect();
        let queries = unit_rows(25, 4, &mut rng);
        for k in [1, 3, 7, 30] {
            let pred = weighted_knn(&train, &labels, &queries, k, 0.5).unwrap();
            for (q, p) in queries.iter().zip(pred) {
                assert_eq!(p, naive_knn(&train, &labels, q, k, 0.5));
            }
        }
    }

    #[test]
    fn vote_ties_go_to_lower_class() {
        let train = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(weighted_knn(&train, &[1, 0], &[vec![1.0, 0.0]], 2, 0.07).unwrap(), vec![0]);
    }

    #[test]
    fn probe_separates_separable_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let make = |n: usize, rng: &mut ChaCha8Rng| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for i in 0..n {
                let c = i % 2;
                let x0 = if c == 0 { -1.0 } else { 1.0 } + 0.3 * rng.random::<f64>() * if c == 0 { -1.0 } else { 1.0 };
                xs.push(vec![x0, rng.random_range(-1.0..1.0)]);
                ys.push(c);
            }
            (xs, ys)
        };
        let (tx, ty) = make(200, &mut rng);
        let (vx, vy) = make(100, &mut rng);
        let acc = linear_probe(&tx, &ty, &vx, &vy, &ProbeConfig::default()).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn probe_on_random_labels_is_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tx = unit_rows(500, 4, &mut rng);
        let ty: Vec<usize> = (0..500).map(|_| rng.random_range(0..2)).collect();
        let vx = unit_rows(1000, 4, &mut rng);
        let vy: Vec<usize> = (0..1000).map(|_| rng.random_range(0..2)).collect();
        let acc = linear_probe(&tx, &ty, &vx, &vy, &ProbeConfig::default()).unwrap();
        let sigma = (0.25f64 / 1000.0).sqrt();
        assert!((acc - 0.5).abs() < 3.0 * sigma, "accuracy {acc}");
    }

    #[test]
    fn zero_epoch_probe_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tx = unit_rows(50, 3, &mut rng);
        let ty: Vec<usize> = (0..50).map(|i| i % 3).collect();
        let cfg = ProbeConfig { epochs: 0, ..ProbeConfig::default() };
        let a = linear_probe(&tx, &ty, &tx, &ty, &cfg).unwrap();
        assert_eq!(a, linear_probe(&tx, &ty, &tx, &ty, &cfg).unwrap());
    }

    #[test]
    fn identity_state_is_perfectly_precise() {
        let state = SimilarityState::init_identity(30).unwrap();
        let labels = GroundTruth::new((0..30).map(|i| i % 4).collect());
        let p = mining_precision(&state, &labels).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p["1"], 1.0);
        assert_eq!(mean_precision(&state, &labels).unwrap(), 1.0);
    }

    #[test]
    fn one_wrong_in_ten() {
        let labels = GroundTruth::new((0..20).map(|i| usize::from(i >= 10)).collect());
        let mut state = SimilarityState::init_identity(20).unwrap();
        for j in 1..9 {
            state.add_positive(0, j).unwrap();
        }
        state.add_positive(0, 15).unwrap();
        assert_eq!(set_precision(0, state.positives(0), &labels), 0.9);
        let p = mining_precision(&state, &labels).unwrap();
        assert_eq!(p["10+"], 0.9);
        assert_eq!(p["1"], 1.0);
    }

    #[test]
    fn random_sets_match_combinatorial_expectation() {
        let (n, c, s) = (600usize, 3usize, 10usize);
        let labels = GroundTruth::new((0..n).map(|i| i % c).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut state = SimilarityState::init_identity(n).unwrap();
        let mut others: Vec<usize> = Vec::new();
        for a in 0..n {
            others.clear();
            others.extend((0..n).filter(|&j| j != a));
            others.shuffle(&mut rng);
            for &j in &others[..s - 1] {
                state.add_positive(a, j).unwrap();
            }
        }
        // Self plus s-1 draws without replacement from the other n-1 points.
        let q = (n / c - 1) as f64 / (n - 1) as f64;
        let expected = (1.0 + (s - 1) as f64 * q) / s as f64;
        let per_anchor_var = (s - 1) as f64 * q * (1.0 - q) / (s * s) as f64;
        let sigma = (per_anchor_var / n as f64).sqrt();
        let got = mining_precision(&state, &labels).unwrap()["10+"];
        assert!((got - expected).abs() < 3.0 * sigma, "{got} vs {expected} (sigma {sigma})");
        assert!((expected - (1.0 / c as f64 + (1.0 - 1.0 / c as f64) / s as f64)).abs() < 2e-3);
    }

    #[test]
    fn euclidean_baseline_on_separated_clusters() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| if i < 10 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        let bank = MemoryBank::from_rows(&rows, 0.5).unwrap();
        let labels = GroundTruth::new((0..20).map(|i| usize::from(i >= 10)).collect());
        assert_eq!(euclidean_baseline_precision(&bank, &labels, 10).unwrap(), 1.0);
        let p = euclidean_baseline_precision(&bank, &labels, 15).unwrap();
        assert!((p - 10.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn precision_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let mut r = EvalReport { round: 2, ..EvalReport::default() };
        r.mining_precision_by_setsize.insert("1".into(), 1.0);
        r.mining_precision_by_setsize.insert("10+".into(), 0.75);
        write_precision_csv(&path, &[r.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "round,setsize,precision\n2,1,1\n2,10+,0.75\n");
        let json = dir.path().join("r.json");
        r.write_json(&json).unwrap();
        assert_eq!(EvalReport::read_json(&json).unwrap(), r);
    }

    proptest! {
        #[test]
        fn positive_rescaling_keeps_predictions(seed in 0u64..500, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<Vec<f64>> = (0..25).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let labels: Vec<usize> = (0..25).map(|_| rng.random_range(0..3)).collect();
            let norm = |rows: &[Vec<f64>], s: f64| rows.iter().map(|r| l2_normalize(&r.iter().map(|x| x * s).collect::<Vec<_>>())).collect::<Vec<_>>();
            let a = norm(&raw, 1.0);
            let b = norm(&raw, c);
            let pa = weighted_knn(&a[..15], &labels[..15], &a[15..], 5, 0.07).unwrap();
            let pb = weighted_knn(&b[..15], &labels[..15], &b[15..], 5, 0.07).unwrap();
            prop_assert_eq!(pa, pb);
        }
    }
}
