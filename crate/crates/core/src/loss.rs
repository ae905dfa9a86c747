//! Non-parametric softmax over the memory bank and the losses built on it.
//!
//! For an anchor feature `f` and bank rows `b_k`, `p_k = softmax_k(f . b_k / tau)`.
//! The positive-set loss is `-log sum_{k in P_i} p_k`; the hard-positive
//! term is `KL(p_i || p_i^hard)` where `p^hard` is the same softmax taken at
//! the hard positive's feature. Bank rows are constants throughout: gradients
//! only reach the batch features passed in.

use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentSpec};
use crate::nn::{dot, l2_normalize, Net};
use crate::similarity::{MemoryBank, SimilarityState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbRow {
    pub anchor: usize,
    pub tau: f64,
    pub p: Vec<f64>,
    pub log_p: Vec<f64>,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {tau}")))
    }
}

fn logits(f: &[f64], bank: &MemoryBank, tau: f64) -> Result<Vec<f64>> {
    if f.len() != bank.dim() {
        return Err(Error::dim("feature vs bank", bank.dim(), f.len()));
    }
    let inv = 1.0 / tau;
    Ok(bank.rows().map(|b| dot(b, f) * inv).collect())
}

/// `(log sum exp s, softmax(s))` with one exponential per entry.
fn softmax_parts(s: &[f64]) -> (f64, Vec<f64>) {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = p.iter().sum();
    let inv = 1.0 / sum;
    p.iter_mut().for_each(|v| *v *= inv);
    (max + sum.ln(), p)
}

fn log_sum_exp<I: IntoIterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn log_softmax(s: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(s.iter().copied());
    s.iter().map(|v| v - lse).collect()
}

/// Pulls a gradient on the logits back onto the feature: `sum_k g_k b_k / tau`.
fn logit_grad_to_feature(g: &[f64], bank: &MemoryBank, tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; bank.dim()];
    for (gk, b) in g.iter().zip(bank.rows()) {
        if *gk == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(b) {
            *o += gk * x;
        }
    }
    out.iter_mut().for_each(|o| *o /= tau);
    out
}

pub fn prob_row(anchor: usize, f: &[f64], bank: &MemoryBank, tau: f64) -> Result<ProbRow> {
    check_tau(tau)?;
    let log_p = log_softmax(&logits(f, bank, tau)?);
    Ok(ProbRow {
        anchor,
        tau,
        p: log_p.iter().map(|l| l.exp()).collect(),
        log_p,
    })
}

/// Value and feature gradient of one anchor's term.
#[derive(Debug, Clone, PartialEq)]
pub struct RowLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Value and logit gradient of `-log sum_{k in positives} p_k`, given the
/// logits `s` and their softmax parts.
fn positive_set_terms(s: &[f64], lse_all: f64, p: &[f64], positives: &[usize]) -> (f64, Vec<f64>) {
    let lse_pos = log_sum_exp(positives.iter().map(|&k| s[k]));
    // d/ds_k = p_k - [k in P] * p_k / sum_P p
    let mut g = p.to_vec();
    for &k in positives {
        g[k] -= (s[k] - lse_pos).exp();
    }
    (lse_all - lse_pos, g)
}

/// `KL(p || q)` from logits, with logit gradients for both sides.
fn kl_terms(s: &[f64], lse_p: f64, p: &[f64], s_hard: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (lse_q, q) = softmax_parts(s_hard);
    // log p_k - log q_k
    let diff: Vec<f64> = s.iter().zip(s_hard).map(|(a, b)| (a - lse_p) - (b - lse_q)).collect();
    let kl: f64 = p.iter().zip(&diff).map(|(pk, d)| pk * d).sum();
    let kl = kl.max(0.0);
    let g_anchor = p.iter().zip(&diff).map(|(pk, d)| pk * (d - kl)).collect();
    let g_hard = q.iter().zip(p).map(|(qk, pk)| qk - pk).collect();
    (kl, g_anchor, g_hard)
}

/// `-log sum_{k in positives} p_k` for one anchor.
pub fn positive_set_loss(f: &[f64], positives: &[usize], bank: &MemoryBank, tau: f64) -> Result<RowLoss> {
    check_tau(tau)?;
    if positives.is_empty() {
        return Err(Error::Usage("positive set is empty".into()));
    }
    let s = logits(f, bank, tau)?;
    let (lse, p) = softmax_parts(&s);
    let (value, g) = positive_set_terms(&s, lse, &p, positives);
    Ok(RowLoss { value, grad: logit_grad_to_feature(&g, bank, tau) })
}

/// `KL(p(f) || p(f_hard))` with gradients for both features.
pub fn hard_positive_kl(f: &[f64], f_hard: &[f64], bank: &MemoryBank, tau: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_tau(tau)?;
    let s = logits(f, bank, tau)?;
    let (lse, p) = softmax_parts(&s);
    let (kl, ga, gh) = kl_terms(&s, lse, &p, &logits(f_hard, bank, tau)?);
    Ok((kl, logit_grad_to_feature(&ga, bank, tau), logit_grad_to_feature(&gh, bank, tau)))
}

/// Sum of per-anchor losses and per-anchor feature gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Positive-set likelihood loss summed over a batch of anchors with current
/// features `feats[b]` for anchor `anchors[b]`.
pub fn loss_l1(anchors: &[usize], feats: &[Vec<f64>], state: &SimilarityState, bank: &MemoryBank, tau: f64) -> Result<BatchLoss> {
    if anchors.len() != feats.len() {
        return Err(Error::dim("loss_l1 batch", anchors.len(), feats.len()));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(anchors.len());
    for (&a, f) in anchors.iter().zip(feats) {
        let row = positive_set_loss(f, state.positives(a), bank, tau)?;
        value += row.value;
        grads.push(row.grad);
    }
    Ok(BatchLoss { value, grads })
}

/// Where an anchor's hard positive comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HardPositive {
    /// A mined positive's bank row (constant).
    Bank(usize),
    /// Encoding of an augmented anchor; gradients flow back into the encoder.
    Encoded(Vec<f64>),
}

/// Index of the positive (other than the anchor) with the smallest
/// probability under the anchor's feature; `None` when the set is trivial.
/// Ties go to the smallest index.
pub fn hardest_positive(anchor: usize, f: &[f64], state: &SimilarityState, bank: &MemoryBank) -> Result<Option<usize>> {
    if f.len() != bank.dim() {
        return Err(Error::dim("hardest_positive feature", bank.dim(), f.len()));
    }
    // p_ij is monotone in f . b_j, so comparing inner products suffices
    let mut best: Option<(usize, f64)> = None;
    for &j in state.positives(anchor) {
        if j == anchor {
            continue;
        }
        let dot: f64 = bank.row(j).iter().zip(f).map(|(x, y)| x * y).sum();
        if best.is_none_or(|(_, d)| dot < d) {
            best = Some((j, dot));
        }
    }
    Ok(best.map(|(j, _)| j))
}

/// Resolves the hard positive feature of `anchor`: the hardest mined
/// positive's bank row, or the normalized encoding of an augmented copy of
/// `x` when the positive set holds only the anchor.
#[allow(clippy::too_many_arguments)]
pub fn hard_positive(
    anchor: usize,
    f: &[f64],
    x: &[f64],
    state: &SimilarityState,
    bank: &MemoryBank,
    encoder: &Net,
    spec: &AugmentSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    match hardest_positive(anchor, f, state, bank)? {
        Some(j) => Ok(bank.row(j).to_vec()),
        None => {
            let xa = augment(x, spec, seed)?;
            Ok(l2_normalize(&encoder.predict(&xa)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardLoss {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
    /// Gradient on each encoded hard positive; `None` for bank positives.
    pub hard_grads: Vec<Option<Vec<f64>>>,
}

/// Hard-positive enhancement loss summed over a batch.
pub fn loss_l2(anchors: &[usize], feats: &[Vec<f64>], hard: &[HardPositive], bank: &MemoryBank, tau: f64) -> Result<HardLoss> {
    if anchors.len() != feats.len() || anchors.len() != hard.len() {
        return Err(Error::dim("loss_l2 batch", anchors.len(), feats.len().min(hard.len())));
    }
    let mut out = HardLoss {
        value: 0.0,
        grads: Vec::with_capacity(anchors.len()),
        hard_grads: Vec::with_capacity(anchors.len()),
    };
    for (f, h) in feats.iter().zip(hard) {
        let f_hard = match h {
            HardPositive::Bank(j) => bank.row(*j),
            HardPositive::Encoded(v) => v.as_slice(),
        };
        let (kl, g, gh) = hard_positive_kl(f, f_hard, bank, tau)?;
        out.value += kl;
        out.grads.push(g);
        out.hard_grads.push(matches!(h, HardPositive::Encoded(_)).then_some(gh));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub grads: Vec<Vec<f64>>,
    pub hard_grads: Vec<Option<Vec<f64>>>,
}

/// `L1 + lambda * L2`; with `hard = None` (enhancement off) this is `L1`.
pub fn total_loss(
    anchors: &[usize],
    feats: &[Vec<f64>],
    hard: Option<&[HardPositive]>,
    state: &SimilarityState,
    bank: &MemoryBank,
    tau: f64,
    lambda: f64,
) -> Result<TotalLoss> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let Some(hard) = hard else {
        let l1 = loss_l1(anchors, feats, state, bank, tau)?;
        return Ok(TotalLoss {
            l1: l1.value,
            l2: 0.0,
            total: l1.value,
            grads: l1.grads,
            hard_grads: vec![None; anchors.len()],
        });
    };
    check_tau(tau)?;
    if anchors.len() != feats.len() || anchors.len() != hard.len() {
        return Err(Error::dim("total_loss batch", anchors.len(), feats.len().min(hard.len())));
    }
    // One logits pass and one pullback per anchor: the two terms share p.
    let mut out = TotalLoss {
        l1: 0.0,
        l2: 0.0,
        total: 0.0,
        grads: Vec::with_capacity(anchors.len()),
        hard_grads: Vec::with_capacity(anchors.len()),
    };
    for ((&a, f), h) in anchors.iter().zip(feats).zip(hard) {
        let positives = state.positives(a);
        if positives.is_empty() {
            return Err(Error::Usage("positive set is empty".into()));
        }
        let s = logits(f, bank, tau)?;
        let (lse, p) = softmax_parts(&s);
        let (v1, g1) = positive_set_terms(&s, lse, &p, positives);
        let f_hard = match h {
            HardPositive::Bank(j) => bank.row(*j),
            HardPositive::Encoded(v) => v.as_slice(),
        };
        let (kl, ga, gh) = kl_terms(&s, lse, &p, &logits(f_hard, bank, tau)?);
        let g: Vec<f64> = g1.iter().zip(&ga).map(|(x, y)| x + lambda * y).collect();
        out.l1 += v1;
        out.l2 += kl;
        out.grads.push(logit_grad_to_feature(&g, bank, tau));
        out.hard_grads.push(match h {
            HardPositive::Encoded(_) => {
                let gh: Vec<f64> = gh.iter().map(|x| lambda * x).collect();
                Some(logit_grad_to_feature(&gh, bank, tau))
            }
            HardPositive::Bank(_) => None,
        });
    }
    out.total = out.l1 + lambda * out.l2;
    Ok(out)
}
