//! Positive-set enlargement from generated proxies.
//!
//! For each anchor, `m` real triplets yield `m` proxies; the one the
//! discriminator trusts most (as `T_s^p`) is kept. If its confidence exceeds
//! `h`, every bank feature strictly within radius `r` of it joins the anchor's
//! positive set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gan::GanPair;
use crate::similarity::{MemoryBank, SimilarityState, Triplet, TripletKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// Proxies sampled per anchor.
    pub m: usize,
    pub r: f64,
    pub h: f64,
    /// Score every anchor against the state as it was at the start of the pass.
    pub frozen_pass: bool,
    /// Also add the anchor to each new positive's own set.
    pub symmetric: bool,
    /// Most additions per anchor per pass; the closest candidates win.
    pub max_added_per_anchor: Option<usize>,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            m: 5,
            r: 1.0,
            h: 0.5,
            frozen_pass: false,
            symmetric: false,
            max_added_per_anchor: None,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("mining: m must be at least 1".into()));
        }
        if !(self.r > 0.0) {
            return Err(Error::Config(format!("mining: r must be positive, got {}", self.r)));
        }
        if !(0.0..=1.0).contains(&self.h) {
            return Err(Error::Config(format!("mining: h must lie in [0, 1], got {}", self.h)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyCandidate {
    pub anchor: usize,
    pub proxy: Vec<f64>,
    /// `D(T_s^p)` with the proxy in the positive slot of `source`.
    pub confidence: f64,
    pub source: Triplet,
}

impl ProxyCandidate {
    pub fn positive_triplet(&self) -> Triplet {
        self.source.synthetic(TripletKind::SyntheticPos, self.proxy.clone())
    }
}

/// `m` proxies from independently sampled real triplets. Empty when the
/// anchor has no negatives left.
pub fn generate_candidates<R: Rng + ?Sized>(
    anchor: usize,
    m: usize,
    state: &SimilarityState,
    bank: &MemoryBank,
    pair: &GanPair,
    rng: &mut R,
) -> Result<Vec<ProxyCandidate>> {
    if state.negative_count(anchor) == 0 {
        return Ok(Vec::new());
    }
    (0..m)
        .map(|_| {
            let source = state.sample_triplet(anchor, rng)?;
            let proxy = pair.generate_proxy(&source, bank)?;
            let confidence = pair.disc_score(&source.synthetic(TripletKind::SyntheticPos, proxy.clone()), bank)?;
            Ok(ProxyCandidate { anchor, proxy, confidence, source })
        })
        .collect()
}

/// Highest-confidence candidate; the earliest one wins ties.
pub fn select_optimal(candidates: &[ProxyCandidate]) -> Result<&ProxyCandidate> {
    let mut best = candidates.first().ok_or(Error::NoCandidates)?;
    for c in &candidates[1..] {
        if c.confidence > best.confidence {
            best = c;
        }
    }
    Ok(best)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices `j` not yet positive for `opt.anchor` with `|proxy - f_j| < r`,
/// ascending, or nothing when `opt.confidence <= h`. Pure; see [`enlarge`].
pub fn enlargement_set(opt: &ProxyCandidate, state: &SimilarityState, bank: &MemoryBank, r: f64, h: f64, cap: Option<usize>) -> Vec<usize> {
    if !(opt.confidence > h) {
        return Vec::new();
    }
    let r2 = r * r;
    let mut hits: Vec<(f64, usize)> = state
        .negatives(opt.anchor)
        .filter_map(|j| {
            let d2 = sq_dist(&opt.proxy, bank.row(j));
            (d2 < r2).then_some((d2, j))
        })
        .collect();
    if let Some(cap) = cap {
        if hits.len() > cap {
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            hits.truncate(cap);
        }
    }
    let mut added: Vec<usize> = hits.into_iter().map(|(_, j)| j).collect();
    added.sort_unstable();
    added
}

/// Applies [`enlargement_set`] to `state` and returns the indices added.
pub fn enlarge(opt: &ProxyCandidate, state: &mut SimilarityState, bank: &MemoryBank, r: f64, h: f64) -> Result<Vec<usize>> {
    let added = enlargement_set(opt, state, bank, r, h, None);
    for &j in &added {
        state.add_positive(opt.anchor, j)?;
    }
    Ok(added)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub round: usize,
    pub anchors_processed: usize,
    /// Anchors with no negatives left.
    pub skipped: Vec<usize>,
    pub total_added: usize,
    /// Mean confidence of the selected proxies.
    pub mean_confidence: f64,
    /// Mean positive-set precision after the pass, filled in by evaluation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    pub added_per_anchor: Vec<usize>,
}

struct AnchorOutcome {
    confidence: Option<f64>,
    added: Vec<usize>,
}

fn anchor_rng(base: u64, anchor: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(anchor as u64);
    rng
}

fn mine_anchor(anchor: usize, state: &SimilarityState, bank: &MemoryBank, pair: &GanPair, cfg: &MiningConfig, base: u64) -> Result<AnchorOutcome> {
    let candidates = generate_candidates(anchor, cfg.m, state, bank, pair, &mut anchor_rng(base, anchor))?;
    if candidates.is_empty() {
        return Ok(AnchorOutcome { confidence: None, added: Vec::new() });
    }
    let opt = select_optimal(&candidates)?;
    Ok(AnchorOutcome {
        confidence: Some(opt.confidence),
        added: enlargement_set(opt, state, bank, cfg.r, cfg.h, cfg.max_added_per_anchor),
    })
}

/// One mining pass over all anchors in ascending order.
///
/// In the default dynamic mode each anchor sees the additions already made
/// for earlier anchors. With `frozen_pass` every anchor is scored against the
/// starting state (in parallel) and additions are applied afterwards in
/// anchor order. Either way the result depends only on the seed drawn from
/// `rng`, not on thread count.
pub fn mine_all<R: Rng + ?Sized>(
    state: &mut SimilarityState,
    bank: &MemoryBank,
    pair: &GanPair,
    cfg: &MiningConfig,
    rng: &mut R,
) -> Result<MiningReport> {
    cfg.validate()?;
    if bank.len() != state.len() {
        return Err(Error::dim("mine_all bank", state.len(), bank.len()));
    }
    let base: u64 = rng.random();
    let n = state.len();
    let mut report = MiningReport {
        round: state.round,
        added_per_anchor: vec![0; n],
        ..MiningReport::default()
    };
    let mut apply = |anchor: usize, outcome: AnchorOutcome, state: &mut SimilarityState, conf_sum: &mut f64| -> Result<()> {
        let Some(c) = outcome.confidence else {
            report.skipped.push(anchor);
            return Ok(());
        };
        report.anchors_processed += 1;
        *conf_sum += c;
        let mut count = 0;
        for &j in &outcome.added {
            if state.add_positive(anchor, j)? {
                count += 1;
            }
            if cfg.symmetric {
                state.add_positive(j, anchor)?;
            }
        }
        report.added_per_anchor[anchor] = count;
        report.total_added += count;
        Ok(())
    };
    let mut conf_sum = 0.0;
    if cfg.frozen_pass {
        let snapshot = state.clone();
        let outcomes: Vec<AnchorOutcome> = (0..n)
            .into_par_iter()
            .map(|a| mine_anchor(a, &snapshot, bank, pair, cfg, base))
            .collect::<Result<_>>()?;
        for (a, o) in outcomes.into_iter().enumerate() {
            apply(a, o, state, &mut conf_sum)?;
        }
    } else {
        for a in 0..n {
            let o = mine_anchor(a, state, bank, pair, cfg, base)?;
            apply(a, o, state, &mut conf_sum)?;
        }
    }
    if report.anchors_processed > 0 {
        report.mean_confidence = conf_sum / report.anchors_processed as f64;
    }
    log::info!(
        "mining round {}: {} anchors, {} skipped, {} added, mean confidence {:.4}",
        report.round,
        report.anchors_processed,
        report.skipped.len(),
        report.total_added,
        report.mean_confidence
    );
    Ok(report)
}

/// The `k` bank indices nearest to `anchor` in Euclidean distance, nearest
/// first, ties by index. The anchor itself is included.
pub fn knn_neighborhood(anchor: usize, k: usize, bank: &MemoryBank) -> Result<Vec<usize>> {
    if anchor >= bank.len() {
        return Err(Error::Usage(format!("anchor {anchor} out of range for bank of {}", bank.len())));
    }
    if k >= bank.len() {
        return Err(Error::Usage(format!("k = {k} must be smaller than the bank size {}", bank.len())));
    }
    let f = bank.row(anchor);
    let mut order: Vec<(f64, usize)> = (0..bank.len()).map(|j| (sq_dist(f, bank.row(j)), j)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k > 0 {
        order.select_nth_unstable_by(k - 1, cmp);
    }
    order.truncate(k);
    order.sort_by(cmp);
    Ok(order.into_iter().map(|(_, j)| j).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::GanConfig;
    use crate::nn::l2_normalize;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_bank(n: usize, d: usize, seed: u64) -> MemoryBank {
        MemoryBank::random(n, d, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn candidate(anchor: usize, proxy: Vec<f64>, confidence: f64) -> ProxyCandidate {
        ProxyCandidate { anchor, proxy, confidence, source: Triplet::real(anchor, anchor, (anchor + 1) % 2) }
    }

    fn brute_force(anchor: usize, proxy: &[f64], conf: f64, state: &SimilarityState, bank: &MemoryBank, r: f64, h: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if conf <= h {
            return out;
        }
        for j in 0..bank.len() {
            let mut s = 0.0;
            for t in 0..bank.dim() {
                let diff = proxy[t] - bank.row(j)[t];
                s += diff * diff;
            }
            if s.sqrt() < r && !state.positives(anchor).contains(&j) {
                out.push(j);
            }
        }
        out
    }

    fn pair(d: usize, seed: u64) -> GanPair {
        GanPair::new(d, &GanConfig { hidden: 8, ..GanConfig::default() }, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn select_optimal_picks_max_then_first() {
        let mk = |cs: &[f64]| cs.iter().map(|&c| candidate(0, vec![1.0], c)).collect::<Vec<_>>();
        let c = mk(&[0.2, 0.9, 0.5]);
        assert!(std::ptr::eq(select_optimal(&c).unwrap(), &c[1]));
        let c = mk(&[0.4, 0.4, 0.4]);
        assert!(std::ptr::eq(select_optimal(&c).unwrap(), &c[0]));
        let c = mk(&[0.7]);
        assert!(std::ptr::eq(select_optimal(&c).unwrap(), &c[0]));
        assert!(matches!(select_optimal(&[]), Err(Error::NoCandidates)));
    }

    #[test]
    fn confidence_at_threshold_adds_nothing() {
        let bank = random_bank(30, 3, 1);
        let mut state = SimilarityState::init_identity(30).unwrap();
        let opt = candidate(0, bank.row(0).to_vec(), 0.5);
        assert!(enlarge(&opt, &mut state, &bank, 10.0, 0.5).unwrap().is_empty());
        assert_eq!(state.total_positive_pairs(), 30);
    }

    #[test]
    fn tiny_radius_adds_nothing() {
        let bank = random_bank(30, 3, 2);
        let mut state = SimilarityState::init_identity(30).unwrap();
        let proxy = l2_normalize(&[0.3, -0.2, 0.9]);
        assert!(enlarge(&candidate(4, proxy, 0.99), &mut state, &bank, 1e-12, 0.5).unwrap().is_empty());
    }

    #[test]
    fn enlarge_matches_brute_force_on_200_points() {
        let bank = random_bank(200, 4, 3);
        let mut state = SimilarityState::init_identity(200).unwrap();
        state.add_positive(7, 8).unwrap();
        let proxy = bank.row(8).to_vec();
        let expected = brute_force(7, &proxy, 0.8, &state, &bank, 0.9, 0.5);
        assert!(!expected.is_empty());
        let added = enlarge(&candidate(7, proxy, 0.8), &mut state, &bank, 0.9, 0.5).unwrap();
        assert_eq!(added, expected);
        for j in added {
            assert!(state.is_positive(7, j));
        }
    }

    #[test]
    fn cap_keeps_the_closest() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| l2_normalize(&[1.0, 0.1 * i as f64])).collect();
        let bank = MemoryBank::from_rows(&rows, 0.5).unwrap();
        let state = SimilarityState::init_identity(6).unwrap();
        let opt = candidate(5, vec![1.0, 0.0], 0.9);
        assert_eq!(enlargement_set(&opt, &state, &bank, 2.0, 0.5, Some(2)), vec![0, 1]);
        assert_eq!(enlargement_set(&opt, &state, &bank, 2.0, 0.5, None), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn candidates_recompute_bit_exactly() {
        let bank = random_bank(40, 3, 4);
        let state = SimilarityState::init_identity(40).unwrap();
        let p = pair(3, 5);
        let cands = generate_candidates(6, 5, &state, &bank, &p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(cands.len(), 5);
        for c in &cands {
            assert_eq!(c.proxy, p.generate_proxy(&c.source, &bank).unwrap());
            assert_eq!(c.confidence, p.disc_score(&c.positive_triplet(), &bank).unwrap());
        }
        let one = generate_candidates(6, 1, &state, &bank, &p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], cands[0]);
    }

    #[test]
    fn exhausted_anchor_yields_no_candidates() {
        let bank = random_bank(3, 2, 6);
        let mut state = SimilarityState::init_identity(3).unwrap();
        state.add_positive(0, 1).unwrap();
        state.add_positive(0, 2).unwrap();
        let p = pair(2, 7);
        assert!(generate_candidates(0, 5, &state, &bank, &p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().is_empty());
        let report = mine_all(&mut state, &bank, &p, &MiningConfig { h: 0.0, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(report.skipped, vec![0]);
        assert_eq!(report.anchors_processed, 2);
    }

    #[test]
    fn h_one_adds_nothing() {
        let bank = random_bank(50, 3, 8);
        let mut state = SimilarityState::init_identity(50).unwrap();
        let cfg = MiningConfig { h: 1.0, r: 2.5, ..Default::default() };
        let report = mine_all(&mut state, &bank, &pair(3, 9), &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(report.total_added, 0);
        assert_eq!(state.total_positive_pairs(), 50);
    }

    #[test]
    fn report_bookkeeping_and_determinism() {
        let bank = random_bank(80, 3, 10);
        let p = pair(3, 11);
        let cfg = MiningConfig { h: 0.0, r: 0.6, ..Default::default() };
        let run = |cfg: &MiningConfig| {
            let mut state = SimilarityState::init_identity(80).unwrap();
            let report = mine_all(&mut state, &bank, &p, cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            (state, report)
        };
        let (s1, r1) = run(&cfg);
        let (s2, r2) = run(&cfg);
        assert_eq!(s1, s2);
        assert_eq!(r1, r2);
        assert!(r1.total_added > 0);
        assert_eq!(r1.total_added, r1.added_per_anchor.iter().sum::<usize>());
        assert_eq!(s1.total_positive_pairs(), 80 + r1.total_added);

        // Asymmetric additions never touch other anchors' sets, so frozen and
        // dynamic passes agree.
        let (s3, r3) = run(&MiningConfig { frozen_pass: true, ..cfg.clone() });
        assert_eq!(s1, s3);
        assert_eq!(r1, r3);

        let (s4, _) = run(&MiningConfig { symmetric: true, ..cfg.clone() });
        for a in 0..80 {
            for &j in s4.positives(a) {
                assert!(s4.is_positive(j, a));
            }
        }
    }

    #[test]
    fn knn_neighborhood_cases() {
        let bank = random_bank(50, 3, 12);
        assert_eq!(knn_neighborhood(17, 1, &bank).unwrap(), vec![17]);
        let mut all = knn_neighborhood(3, 49, &bank).unwrap();
        all.sort_unstable();
        assert_eq!(all.len(), 49);
        assert!(knn_neighborhood(3, 50, &bank).is_err());

        let mut oracle: Vec<usize> = (0..50).collect();
        let f = bank.row(9);
        let dist = |j: usize| bank.row(j).iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        oracle.sort_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap().then(a.cmp(&b)));
        assert_eq!(knn_neighborhood(9, 12, &bank).unwrap(), oracle[..12].to_vec());
    }

    #[test]
    fn knn_ties_go_to_lower_index() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0], vec![0.0, 1.0]];
        let bank = MemoryBank::from_rows(&rows, 0.5).unwrap();
        assert_eq!(knn_neighborhood(0, 3, &bank).unwrap(), vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn enlarge_equals_oracle_and_is_monotone(seed in 0u64..10_000, n in 2usize..120, r in 0.05f64..2.0, h in 0.0f64..1.0, conf in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bank = MemoryBank::random(n, 3, 0.5, &mut rng).unwrap();
            let mut state = SimilarityState::init_identity(n).unwrap();
            for _ in 0..n / 3 {
                let (a, j) = (rng.random_range(0..n), rng.random_range(0..n));
                state.add_positive(a, j).unwrap();
            }
            let proxy = l2_normalize(&(0..3).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>());
            let anchor = rng.random_range(0..n);
            let expected = brute_force(anchor, &proxy, conf, &state, &bank, r, h);
            let before = state.clone();
            let added = enlarge(&candidate(anchor, proxy, conf), &mut state, &bank, r, h).unwrap();
            prop_assert_eq!(added, expected);
            for a in 0..n {
                for &j in before.positives(a) {
                    prop_assert!(state.is_positive(a, j));
                }
            }
        }
    }
}
