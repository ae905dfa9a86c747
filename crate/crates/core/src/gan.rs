//! Proxy generator and triplet discriminator.
//!
//! The generator maps a real triplet `[f_a | f_p | f_n]` to a unit-norm proxy
//! feature. The discriminator scores triplets; the proxy is substituted into
//! the positive slot (`T_s^p`) or the negative slot (`T_s^n`). The two play
//!
//! ```text
//! min_G max_D  log D(T_r) + log(1 - D(T_s^p)) + alpha * log(1 - D(T_s^n))
//! ```
//!
//! with log arguments clamped below at [`LOG_CLAMP`].

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{l2_normalize, l2_normalize_backward, sigmoid, Activation, Init, Net, Optimizer};
use crate::similarity::{MemoryBank, SimilarityState, Triplet, TripletKind};
use crate::{Error, Result};

pub const LOG_CLAMP: f64 = 1e-12;

#[inline]
fn clamped_ln(x: f64) -> f64 {
    x.max(LOG_CLAMP).ln()
}

/// d/dz log(sigmoid(z)) honoring the clamp.
#[inline]
fn dlog_s(s: f64) -> f64 {
    if s > LOG_CLAMP {
        1.0 - s
    } else {
        0.0
    }
}

/// d/dz log(1 - sigmoid(z)) honoring the clamp.
#[inline]
fn dlog_one_minus_s(s: f64) -> f64 {
    if 1.0 - s > LOG_CLAMP {
        -s
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    /// Width of both hidden layers of G and D.
    pub hidden: usize,
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Real triplets sampled per anchor per epoch.
    pub triplets_per_anchor: usize,
    pub max_epochs: usize,
    /// Relative change of the windowed mean generator loss that counts as converged.
    pub conv_tol: f64,
    pub conv_window: usize,
    pub d_steps: usize,
    pub g_steps: usize,
    /// Train G on `-log D(T_s)` instead of `log(1 - D(T_s))`.
    pub non_saturating: bool,
    /// Re-initialize G and D at the start of every round instead of warm-starting.
    pub reinit: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            alpha: 1.0,
            lr: 1e-4,
            batch_size: 128,
            triplets_per_anchor: 5,
            max_epochs: 200,
            conv_tol: 1e-3,
            conv_window: 5,
            d_steps: 1,
            g_steps: 1,
            non_saturating: false,
            reinit: false,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("gan: {m}")));
        if self.hidden == 0 || self.batch_size == 0 || self.triplets_per_anchor == 0 {
            return bad("hidden, batch_size and triplets_per_anchor must be positive");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be >= 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.conv_window == 0 || self.conv_tol < 0.0 {
            return bad("conv_window must be positive and conv_tol >= 0");
        }
        if self.d_steps == 0 || self.g_steps == 0 {
            return bad("d_steps and g_steps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanObjectives {
    /// Maximized by D.
    pub d_objective: f64,
    /// Minimized by G.
    pub g_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanPair {
    pub generator: Net,
    pub discriminator: Net,
    pub alpha: f64,
    pub g_opt: Optimizer,
    pub d_opt: Optimizer,
}

impl GanPair {
    /// Three fully connected layers each: G `3d -> h -> h -> d`, D `3d -> h -> h -> 1`.
    pub fn new<R: Rng + ?Sized>(dim: usize, cfg: &GanConfig, rng: &mut R) -> Result<Self> {
        let generator = Net::mlp(3 * dim, &[cfg.hidden, cfg.hidden, dim], Activation::Relu, Activation::Identity, Init::HeUniform, rng)?;
        let discriminator = Net::mlp(3 * dim, &[cfg.hidden, cfg.hidden, 1], Activation::Relu, Activation::Identity, Init::HeUniform, rng)?;
        Ok(Self::from_nets(generator, discriminator, cfg.alpha, cfg.lr))
    }

    pub fn from_nets(generator: Net, discriminator: Net, alpha: f64, lr: f64) -> Self {
        Self {
            g_opt: Optimizer::adam(generator.param_count(), lr),
            d_opt: Optimizer::adam(discriminator.param_count(), lr),
            generator,
            discriminator,
            alpha,
        }
    }

    pub fn dim(&self) -> usize {
        self.generator.output_dim()
    }

    /// `normalize(G([f_a | f_p | f_n]))` for a real triplet.
    pub fn generate_proxy(&self, t: &Triplet, bank: &MemoryBank) -> Result<Vec<f64>> {
        if t.kind != TripletKind::Real {
            return Err(Error::Usage("proxies are generated from real triplets".into()));
        }
        Ok(l2_normalize(&self.generator.predict(&t.concat_features(bank)?)?))
    }

    /// Confidence that `t` is real: `sigmoid(D([anchor | pos slot | neg slot]))`.
    pub fn disc_score(&self, t: &Triplet, bank: &MemoryBank) -> Result<f64> {
        Ok(sigmoid(self.discriminator.predict(&t.concat_features(bank)?)?[0]))
    }

    /// Both players' objectives on one real triplet.
    pub fn gan_loss(&self, t_r: &Triplet, bank: &MemoryBank, non_saturating: bool) -> Result<GanObjectives> {
        let proxy = self.generate_proxy(t_r, bank)?;
        let s_r = self.disc_score(t_r, bank)?;
        let s_p = self.disc_score(&t_r.synthetic(TripletKind::SyntheticPos, proxy.clone()), bank)?;
        let s_n = self.disc_score(&t_r.synthetic(TripletKind::SyntheticNeg, proxy), bank)?;
        Ok(objectives(s_r, s_p, s_n, self.alpha, non_saturating))
    }

    /// Mean D objective over `batch` and the gradient of its negation with
    /// respect to D's parameters (the proxy is held fixed).
    pub fn discriminator_gradient(&self, batch: &[Triplet], bank: &MemoryBank) -> Result<(f64, Vec<f64>)> {
        let mut grads = vec![0.0; self.discriminator.param_count()];
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut total = 0.0;
        for t in batch {
            let proxy = self.generate_proxy(t, bank)?;
            let sp = t.synthetic(TripletKind::SyntheticPos, proxy.clone());
            let sn = t.synthetic(TripletKind::SyntheticNeg, proxy);
            let (z_r, tape_r) = self.discriminator.forward(&t.concat_features(bank)?)?;
            let (z_p, tape_p) = self.discriminator.forward(&sp.concat_features(bank)?)?;
            let (z_n, tape_n) = self.discriminator.forward(&sn.concat_features(bank)?)?;
            let (s_r, s_p, s_n) = (sigmoid(z_r[0]), sigmoid(z_p[0]), sigmoid(z_n[0]));
            total += clamped_ln(s_r) + clamped_ln(1.0 - s_p) + self.alpha * clamped_ln(1.0 - s_n);
            let g_r = -dlog_s(s_r) * scale;
            let g_p = -dlog_one_minus_s(s_p) * scale;
            let g_n = -self.alpha * dlog_one_minus_s(s_n) * scale;
            self.discriminator.backward_accumulate(&tape_r, &[g_r], &mut grads)?;
            self.discriminator.backward_accumulate(&tape_p, &[g_p], &mut grads)?;
            self.discriminator.backward_accumulate(&tape_n, &[g_n], &mut grads)?;
        }
        Ok((total * scale, grads))
    }

    /// Mean G objective over `batch` and its gradient with respect to G's
    /// parameters (D held fixed).
    pub fn generator_gradient(&self, batch: &[Triplet], bank: &MemoryBank, non_saturating: bool) -> Result<(f64, Vec<f64>)> {
        let d = self.dim();
        let mut grads = vec![0.0; self.generator.param_count()];
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut total = 0.0;
        for t in batch {
            let (raw, g_tape) = self.generator.forward(&t.concat_features(bank)?)?;
            let proxy = l2_normalize(&raw);
            let sp = t.synthetic(TripletKind::SyntheticPos, proxy.clone());
            let sn = t.synthetic(TripletKind::SyntheticNeg, proxy);
            let (z_p, tape_p) = self.discriminator.forward(&sp.concat_features(bank)?)?;
            let (z_n, tape_n) = self.discriminator.forward(&sn.concat_features(bank)?)?;
            let (s_p, s_n) = (sigmoid(z_p[0]), sigmoid(z_n[0]));
            let (dz_p, dz_n) = if non_saturating {
                total += -clamped_ln(s_p) - self.alpha * clamped_ln(s_n);
                (-dlog_s(s_p), -self.alpha * dlog_s(s_n))
            } else {
                total += clamped_ln(1.0 - s_p) + self.alpha * clamped_ln(1.0 - s_n);
                (dlog_one_minus_s(s_p), self.alpha * dlog_one_minus_s(s_n))
            };
            let grad_p = self.discriminator.input_gradient(&tape_p, &[dz_p * scale])?;
            let grad_n = self.discriminator.input_gradient(&tape_n, &[dz_n * scale])?;
            let grad_proxy: Vec<f64> = grad_p[d..2 * d].iter().zip(&grad_n[2 * d..]).map(|(a, b)| a + b).collect();
            let grad_raw = l2_normalize_backward(&raw, &grad_proxy);
            self.generator.backward_accumulate(&g_tape, &grad_raw, &mut grads)?;
        }
        Ok((total * scale, grads))
    }

    fn d_step(&mut self, batch: &[Triplet], bank: &MemoryBank) -> Result<f64> {
        let (obj, grads) = self.discriminator_gradient(batch, bank)?;
        self.d_opt.step(self.discriminator.params_mut(), &grads)?;
        Ok(obj)
    }

    fn g_step(&mut self, batch: &[Triplet], bank: &MemoryBank, non_saturating: bool) -> Result<f64> {
        let (obj, grads) = self.generator_gradient(batch, bank, non_saturating)?;
        self.g_opt.step(self.generator.params_mut(), &grads)?;
        Ok(obj)
    }
}

fn objectives(s_r: f64, s_p: f64, s_n: f64, alpha: f64, non_saturating: bool) -> GanObjectives {
    let d_objective = clamped_ln(s_r) + clamped_ln(1.0 - s_p) + alpha * clamped_ln(1.0 - s_n);
    let g_objective = if non_saturating {
        -clamped_ln(s_p) - alpha * clamped_ln(s_n)
    } else {
        clamped_ln(1.0 - s_p) + alpha * clamped_ln(1.0 - s_n)
    };
    GanObjectives { d_objective, g_objective }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    pub epoch: usize,
    /// Negated mean D objective.
    pub d_loss: f64,
    /// Mean G objective.
    pub g_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GanTrainLog {
    pub epochs: Vec<GanEpoch>,
    pub converged: bool,
}

/// `triplets_per_anchor` real triplets for every anchor that still has
/// negatives, shuffled.
fn triplet_pool<R: Rng + ?Sized>(state: &SimilarityState, per_anchor: usize, rng: &mut R) -> Result<Vec<Triplet>> {
    let mut pool = Vec::with_capacity(state.len() * per_anchor);
    for anchor in 0..state.len() {
        if state.negative_count(anchor) == 0 {
            continue;
        }
        for _ in 0..per_anchor {
            pool.push(state.sample_triplet(anchor, rng)?);
        }
    }
    pool.shuffle(rng);
    Ok(pool)
}

fn windowed_converged(g_losses: &[f64], window: usize, tol: f64) -> bool {
    if g_losses.len() < 2 * window {
        return false;
    }
    let n = g_losses.len();
    let cur = g_losses[n - window..].iter().sum::<f64>() / window as f64;
    let prev = g_losses[n - 2 * window..n - window].iter().sum::<f64>() / window as f64;
    (cur - prev).abs() < tol * prev.abs().max(1e-12)
}

/// Alternating D/G training on a frozen bank until the generator loss
/// settles or `max_epochs` is reached.
///
/// Each epoch draws two independent triplet pools; minibatch `b` of the first
/// feeds the D-step(s) and minibatch `b` of the second the G-step(s).
pub fn train_gan<R: Rng + ?Sized>(
    pair: &mut GanPair,
    state: &SimilarityState,
    bank: &MemoryBank,
    cfg: &GanConfig,
    rng: &mut R,
) -> Result<GanTrainLog> {
    cfg.validate()?;
    if bank.len() != state.len() {
        return Err(Error::dim("train_gan bank", state.len(), bank.len()));
    }
    let mut log = GanTrainLog::default();
    let mut g_history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let d_pool = triplet_pool(state, cfg.triplets_per_anchor, rng)?;
        let g_pool = triplet_pool(state, cfg.triplets_per_anchor, rng)?;
        if d_pool.is_empty() {
            break;
        }
        let (mut d_sum, mut g_sum, mut batches) = (0.0, 0.0, 0usize);
        for (b, (d_batch, g_batch)) in d_pool.chunks(cfg.batch_size).zip(g_pool.chunks(cfg.batch_size)).enumerate() {
            let mut d_obj = 0.0;
            for _ in 0..cfg.d_steps {
                d_obj = pair.d_step(d_batch, bank)?;
            }
            let mut g_obj = 0.0;
            for _ in 0..cfg.g_steps {
                g_obj = pair.g_step(g_batch, bank, cfg.non_saturating)?;
            }
            if !d_obj.is_finite() || !g_obj.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gan loss at epoch {epoch} batch {b}: d_objective={d_obj} g_objective={g_obj}"
                )));
            }
            d_sum += d_obj;
            g_sum += g_obj;
            batches += 1;
        }
        let entry = GanEpoch {
            epoch,
            d_loss: -d_sum / batches as f64,
            g_loss: g_sum / batches as f64,
        };
        log::debug!("gan epoch {epoch}: d_loss={:.5} g_loss={:.5}", entry.d_loss, entry.g_loss);
        log.epochs.push(entry);
        g_history.push(entry.g_loss);
        if windowed_converged(&g_history, cfg.conv_window, cfg.conv_tol) {
            log.converged = true;
            break;
        }
    }
    Ok(log)
}
