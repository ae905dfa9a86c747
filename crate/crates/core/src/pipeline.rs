//! The iterative training protocol.
//!
//! Each round trains the encoder on the current positive sets, trains the
//! proxy GAN on the resulting memory bank, mines new positives, and evaluates.
//! Ground-truth labels are read only inside [`Trainer::evaluate`].

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, RunConfig};
use crate::data::{augment, gen_manifold, load_cifar10, AugmentSpec, Dataset, ManifoldKind};
use crate::eval::{
    accuracy, default_knn_k, euclidean_baseline_precision, linear_probe, mean_precision, mining_precision, weighted_knn,
    write_precision_csv, EvalReport,
};
use crate::gan::{train_gan, GanEpoch, GanPair};
use crate::loss::{hardest_positive, total_loss, HardPositive};
use crate::mining::{mine_all, MiningConfig, MiningReport};
use crate::nn::{l2_normalize, l2_normalize_backward, Activation, Init, Net, Optimizer, Tape};
use crate::similarity::{MemoryBank, SimilarityState};
use crate::{Error, Result};

/// Added to the run seed to generate the held-out split.
const TEST_SEED_OFFSET: u64 = 0x5EED_7E57;

/// Train and held-out splits.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_splits(cfg: &DatasetConfig, seed: u64) -> Result<Splits> {
    if cfg.kind == "cifar10" {
        let dir = cfg
            .cifar_dir
            .as_deref()
            .ok_or_else(|| Error::Config("dataset.cifar_dir is required for cifar10".into()))?;
        let mut s = load_cifar10(dir)?;
        if let Some(n) = cfg.cifar_limit {
            s.train = s.train.truncated(n)?;
            s.test = s.test.truncated((n / 5).max(1))?;
        }
        return Ok(Splits { train: s.train, test: s.test });
    }
    let kind: ManifoldKind = cfg.kind.parse()?;
    Ok(Splits {
        train: gen_manifold(kind, cfg.n_per_class, cfg.noise, seed)?,
        test: gen_manifold(kind, cfg.test_n_per_class.max(1), cfg.noise, seed.wrapping_add(TEST_SEED_OFFSET))?,
    })
}

/// Unit-norm encoder outputs.
pub fn embed(encoder: &Net, samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    samples.iter().map(|x| Ok(l2_normalize(&encoder.predict(x)?))).collect()
}

/// Terms of the representation objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub tau: f64,
    pub lambda: f64,
    pub hpe: bool,
    pub augment: AugmentSpec,
}

impl Objective {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self { tau: cfg.tau, lambda: cfg.lambda, hpe: cfg.hpe_enabled, augment: cfg.augment.clone() }
    }
}

/// Batch-mean losses and the gradient of the mean total loss with respect
/// to the encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub grads: Vec<f64>,
    /// Normalized features of the batch anchors.
    pub feats: Vec<Vec<f64>>,
}

/// Loss and encoder gradient on one minibatch. `aug_seeds[b]` seeds the
/// augmentation used when anchor `b` has no mined positive.
pub fn encoder_batch_gradient(
    encoder: &Net,
    samples: &[Vec<f64>],
    anchors: &[usize],
    aug_seeds: &[u64],
    state: &SimilarityState,
    bank: &MemoryBank,
    obj: &Objective,
) -> Result<BatchGradient> {
    if aug_seeds.len() != anchors.len() {
        return Err(Error::dim("augmentation seeds", anchors.len(), aug_seeds.len()));
    }
    let mut raws = Vec::with_capacity(anchors.len());
    let mut tapes = Vec::with_capacity(anchors.len());
    let mut feats = Vec::with_capacity(anchors.len());
    for &a in anchors {
        let (raw, tape) = encoder.forward(&samples[a])?;
        feats.push(l2_normalize(&raw));
        raws.push(raw);
        tapes.push(tape);
    }
    let mut hard_tapes: Vec<Option<(Vec<f64>, Tape)>> = Vec::new();
    let hard = if obj.hpe {
        let mut hard = Vec::with_capacity(anchors.len());
        for (b, &a) in anchors.iter().enumerate() {
            match hardest_positive(a, &feats[b], state, bank)? {
                Some(j) => {
                    hard.push(HardPositive::Bank(j));
                    hard_tapes.push(None);
                }
                None => {
                    let xa = augment(&samples[a], &obj.augment, aug_seeds[b])?;
                    let (raw, tape) = encoder.forward(&xa)?;
                    hard.push(HardPositive::Encoded(l2_normalize(&raw)));
                    hard_tapes.push(Some((raw, tape)));
                }
            }
        }
        Some(hard)
    } else {
        None
    };
    let loss = total_loss(anchors, &feats, hard.as_deref(), state, bank, obj.tau, obj.lambda)?;
    let scale = 1.0 / anchors.len().max(1) as f64;
    let mut grads = vec![0.0; encoder.param_count()];
    for b in 0..anchors.len() {
        let g: Vec<f64> = loss.grads[b].iter().map(|v| v * scale).collect();
        encoder.backward_accumulate(&tapes[b], &l2_normalize_backward(&raws[b], &g), &mut grads)?;
        if let (Some(gh), Some(Some((raw, tape)))) = (&loss.hard_grads[b], hard_tapes.get(b)) {
            let gh: Vec<f64> = gh.iter().map(|v| v * scale).collect();
            encoder.backward_accumulate(tape, &l2_normalize_backward(raw, &gh), &mut grads)?;
        }
    }
    Ok(BatchGradient {
        l1: loss.l1 * scale,
        l2: loss.l2 * scale,
        total: loss.total * scale,
        grads,
        feats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub round: usize,
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub lr: f64,
}

/// Everything needed to continue a run bit-exactly. Datasets are regenerated
/// from the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub rounds_completed: usize,
    pub encoder: Net,
    pub encoder_opt: Optimizer,
    pub bank: MemoryBank,
    pub state: SimilarityState,
    pub gan: GanPair,
    pub rng: ChaCha8Rng,
    pub train_log: Vec<TrainLogRow>,
    /// Epoch numbers run on across rounds.
    pub gan_log: Vec<GanEpoch>,
    pub reports: Vec<EvalReport>,
    pub mining_reports: Vec<MiningReport>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.into(), msg: e.to_string() })
    }
}

pub struct Trainer {
    pub ck: Checkpoint,
    pub splits: Splits,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let splits = load_splits(&config.dataset, config.seed)?;
        Self::with_splits(config, splits)
    }

    pub fn with_splits(config: RunConfig, splits: Splits) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = splits.train.len();
        let d = config.encoder.feature_dim;
        let mut widths = config.encoder.hidden.clone();
        widths.push(d);
        let encoder = Net::mlp(splits.train.dim(), &widths, config.encoder.activation, Activation::Identity, Init::HeUniform, &mut rng)?;
        let encoder_opt = Optimizer::sgd(encoder.param_count(), config.lr.base_lr, config.momentum);
        let mut bank = MemoryBank::random(n, d, config.eta, &mut rng)?;
        bank.renorm = config.renorm_bank;
        let gan = GanPair::new(d, &config.gan, &mut rng)?;
        let ck = Checkpoint {
            rounds_completed: 0,
            encoder,
            encoder_opt,
            bank,
            state: SimilarityState::init_identity(n)?,
            gan,
            rng,
            train_log: Vec::new(),
            gan_log: Vec::new(),
            reports: Vec::new(),
            mining_reports: Vec::new(),
            config,
        };
        Ok(Self { ck, splits })
    }

    /// Reloads a checkpoint together with the datasets its config describes.
    pub fn resume(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let splits = load_splits(&ck.config.dataset, ck.config.seed)?;
        Self::from_checkpoint(ck, splits)
    }

    pub fn from_checkpoint(ck: Checkpoint, splits: Splits) -> Result<Self> {
        if splits.train.len() != ck.state.len() {
            return Err(Error::dim("checkpoint vs dataset size", ck.state.len(), splits.train.len()));
        }
        if splits.train.dim() != ck.encoder.input_dim() || splits.test.dim() != ck.encoder.input_dim() {
            return Err(Error::dim("checkpoint vs dataset input dim", ck.encoder.input_dim(), splits.train.dim()));
        }
        Ok(Self { ck, splits })
    }

    pub fn config(&self) -> &RunConfig {
        &self.ck.config
    }

    pub fn is_finished(&self) -> bool {
        self.ck.rounds_completed >= self.ck.config.rounds
    }

    /// One encoder epoch over all instances in shuffled order.
    fn encoder_epoch(&mut self, round: usize, epoch: usize) -> Result<TrainLogRow> {
        let cfg = &self.ck.config;
        let lr = cfg.lr.lr_at(epoch, cfg.epochs_per_round);
        self.ck.encoder_opt.lr = lr;
        let obj = Objective::from_config(cfg);
        let batch_size = cfg.batch_size;
        let samples = self.splits.train.samples();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut self.ck.rng);
        let (mut l1, mut l2, mut total) = (0.0, 0.0, 0.0);
        for (b, batch) in order.chunks(batch_size).enumerate() {
            let seeds: Vec<u64> = if obj.hpe { batch.iter().map(|_| self.ck.rng.random()).collect() } else { vec![0; batch.len()] };
            let out = encoder_batch_gradient(&self.ck.encoder, samples, batch, &seeds, &self.ck.state, &self.ck.bank, &obj)?;
            if !out.total.is_finite() {
                return Err(Error::NonFinite(format!("encoder loss at round {round} epoch {epoch} batch {b}: {}", out.total)));
            }
            self.ck.encoder_opt.step(self.ck.encoder.params_mut(), &out.grads)?;
            for (&i, f) in batch.iter().zip(&out.feats) {
                self.ck.bank.update(i, f)?;
            }
            let w = batch.len() as f64;
            l1 += out.l1 * w;
            l2 += out.l2 * w;
            total += out.total * w;
        }
        let n = samples.len().max(1) as f64;
        Ok(TrainLogRow { round, epoch, l1: l1 / n, l2: l2 / n, total: total / n, lr })
    }

    /// Encoder training, GAN training, mining and evaluation for the next round.
    pub fn run_round(&mut self) -> Result<Option<EvalReport>> {
        let round = self.ck.rounds_completed + 1;
        log::info!("round {round}/{}", self.ck.config.rounds);
        if self.ck.config.reset_positives_each_round && round > 1 {
            let mut fresh = SimilarityState::init_identity(self.ck.state.len())?;
            fresh.round = self.ck.state.round;
            self.ck.state = fresh;
        }
        if self.ck.config.reset_optimizer_each_round {
            self.ck.encoder_opt.reset();
        }
        for epoch in 0..self.ck.config.epochs_per_round {
            let row = self.encoder_epoch(round, epoch)?;
            log::debug!("round {round} epoch {epoch}: l1={:.5} l2={:.5} lr={}", row.l1, row.l2, row.lr);
            self.ck.train_log.push(row);
        }

        if self.ck.config.gan.reinit && round > 1 {
            self.ck.gan = GanPair::new(self.ck.config.encoder.feature_dim, &self.ck.config.gan, &mut self.ck.rng)?;
        }
        let snapshot = self.ck.bank.clone();
        let gan_log = train_gan(&mut self.ck.gan, &self.ck.state, &snapshot, &self.ck.config.gan, &mut self.ck.rng)?;
        let offset = self.ck.gan_log.len();
        self.ck.gan_log.extend(gan_log.epochs.iter().map(|e| GanEpoch { epoch: offset + e.epoch, ..*e }));
        log::info!("gan: {} epochs, converged={}", gan_log.epochs.len(), gan_log.converged);

        self.ck.state.round = round;
        let mining_cfg = self.ck.config.mining.clone();
        let report = self.mine(&mining_cfg, &snapshot)?;
        self.ck.mining_reports.push(report);

        self.ck.rounds_completed = round;
        let eval = self.evaluate(round)?;
        if let Some(r) = &eval {
            self.ck.reports.push(r.clone());
        }
        Ok(eval)
    }

    fn mine(&mut self, cfg: &MiningConfig, bank: &MemoryBank) -> Result<MiningReport> {
        let mut report = mine_all(&mut self.ck.state, bank, &self.ck.gan, cfg, &mut self.ck.rng)?;
        if let Some(labels) = self.splits.train.ground_truth() {
            report.precision = Some(mean_precision(&self.ck.state, labels)?);
        }
        Ok(report)
    }

    /// A standalone mining pass with the current networks and bank.
    pub fn mine_once(&mut self, cfg: &MiningConfig) -> Result<MiningReport> {
        let bank = self.ck.bank.clone();
        let report = self.mine(cfg, &bank)?;
        self.ck.mining_reports.push(report.clone());
        Ok(report)
    }

    /// Train-split embeddings from the current encoder.
    pub fn embeddings(&self) -> Result<Vec<Vec<f64>>> {
        embed(&self.ck.encoder, self.splits.train.samples())
    }

    /// Labelled evaluation of the current encoder and positive sets; `None`
    /// when the dataset carries no labels.
    pub fn evaluate(&self, round: usize) -> Result<Option<EvalReport>> {
        let (Some(train_gt), Some(test_gt)) = (self.splits.train.ground_truth(), self.splits.test.ground_truth()) else {
            return Ok(None);
        };
        let cfg = &self.ck.config.eval;
        let train = self.embeddings()?;
        let test = embed(&self.ck.encoder, self.splits.test.samples())?;
        let k = cfg.knn_k.unwrap_or_else(|| default_knn_k(train.len()));
        let predicted = weighted_knn(&train, train_gt.as_slice(), &test, k, cfg.knn_tau)?;
        let linear_accuracy = if cfg.linear_probe {
            Some(linear_probe(&train, train_gt.as_slice(), &test, test_gt.as_slice(), &cfg.probe)?)
        } else {
            None
        };
        let feature_bank = MemoryBank::from_rows(&train, self.ck.config.eta)?;
        let baseline_k = cfg.baseline_k.min(train.len().saturating_sub(1)).max(1);
        Ok(Some(EvalReport {
            round,
            knn_accuracy: accuracy(&predicted, test_gt.as_slice()),
            linear_accuracy,
            mining_precision_by_setsize: mining_precision(&self.ck.state, train_gt)?,
            mean_precision: mean_precision(&self.ck.state, train_gt)?,
            euclidean_precision: if train.len() > 1 { euclidean_baseline_precision(&feature_bank, train_gt, baseline_k)? } else { 1.0 },
            total_positive_pairs: self.ck.state.total_positive_pairs(),
        }))
    }

    /// Runs the remaining rounds, writing artifacts after each one when `out`
    /// is given.
    pub fn run_to_completion(&mut self, out: Option<&Path>) -> Result<()> {
        if let Some(dir) = out {
            prepare_out_dir(dir)?;
            self.ck.config.save(&dir.join("config.toml"))?;
        }
        while !self.is_finished() {
            self.run_round()?;
            if let Some(dir) = out {
                self.write_artifacts(dir)?;
            }
        }
        Ok(())
    }

    /// Metrics, logs, mining reports, embeddings, positive sets and checkpoints.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        prepare_out_dir(dir)?;
        for r in &self.ck.reports {
            r.write_json(&dir.join("metrics").join(format!("round_{}.json", r.round)))?;
        }
        for m in &self.ck.mining_reports {
            let path = dir.join("mining").join(format!("round_{}.json", m.round));
            fs::write(&path, serde_json::to_string_pretty(m)? + "\n").map_err(|e| Error::io(&path, e))?;
        }
        write_precision_csv(&dir.join("metrics").join("precision.csv"), &self.ck.reports)?;
        write_train_log(&dir.join("logs").join("train.csv"), &self.ck.train_log)?;
        write_gan_log(&dir.join("logs").join("gan.csv"), &self.ck.gan_log)?;
        write_embeddings(&dir.join("embeddings.csv"), &self.embeddings()?)?;
        self.ck.state.write_jsonl(&dir.join("positives.jsonl"))?;
        let ck_dir = dir.join("checkpoints");
        self.ck.save(&ck_dir.join(format!("round_{}.json", self.ck.rounds_completed)))?;
        self.ck.save(&ck_dir.join("latest.json"))
    }
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    for sub in ["metrics", "logs", "mining", "checkpoints"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format { path: path.into(), msg: e.to_string() }
}

fn write_train_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["round", "epoch", "l1", "l2", "total", "lr"]).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([r.round.to_string(), r.epoch.to_string(), r.l1.to_string(), r.l2.to_string(), r.total.to_string(), r.lr.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_gan_log(path: &Path, rows: &[GanEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["epoch", "d_loss", "g_loss"]).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([r.epoch.to_string(), r.d_loss.to_string(), r.g_loss.to_string()]).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header `f0,...,f{d-1}`, one row per training instance.
pub fn write_embeddings(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let d = rows.first().map_or(0, Vec::len);
    w.write_record((0..d).map(|j| format!("f{j}"))).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r.iter().map(f64::to_string)).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A full run from scratch.
pub fn run_train(config: RunConfig, out: Option<&Path>) -> Result<Trainer> {
    let mut t = Trainer::new(config)?;
    t.run_to_completion(out)?;
    Ok(t)
}

/// Evaluates a saved checkpoint, on `splits` if given or on the datasets its
/// config describes.
pub fn run_eval(checkpoint: &Path, splits: Option<Splits>) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let splits = match splits {
        Some(s) => s,
        None => load_splits(&ck.config.dataset, ck.config.seed)?,
    };
    let round = ck.rounds_completed;
    let t = Trainer::from_checkpoint(ck, splits)?;
    t.evaluate(round)?
        .ok_or_else(|| Error::Usage("evaluation needs labelled train and test splits".into()))
}

/// One swept parameter and its values (TOML literals).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<String>,
}

impl SweepAxis {
    pub fn new<V: ToString>(param: &str, values: &[V]) -> Self {
        Self { param: param.into(), values: values.iter().map(ToString::to_string).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    /// `;`-joined parameter names of this cell.
    pub param: String,
    pub value: String,
    pub knn_accuracy: Option<f64>,
    /// Mean positive-set precision after the final round.
    pub precision: Option<f64>,
    pub error: Option<String>,
}

/// All cells of the cartesian product of `axes`, in row-major order with the
/// last axis varying fastest.
pub fn sweep_cells(axes: &[SweepAxis]) -> Vec<Vec<(String, String)>> {
    let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((axis.param.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    cells
}

/// One full run per grid cell with seed `base.seed + cell_index`. A failing
/// cell is recorded and the sweep continues.
pub fn run_sweep(base: &RunConfig, axes: &[SweepAxis], out: Option<&Path>) -> Result<Vec<SweepRow>> {
    if axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::Config("every sweep axis needs at least one value".into()));
    }
    let mut rows = Vec::new();
    for (i, cell) in sweep_cells(axes).into_iter().enumerate() {
        let param = cell.iter().map(|(p, _)| p.as_str()).collect::<Vec<_>>().join(";");
        let value = cell.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join(";");
        let overrides: Vec<String> = cell.iter().map(|(p, v)| format!("{p}={v}")).collect();
        let cell_out: Option<PathBuf> = out.map(|d| d.join(format!("cell_{i}")));
        let result = base
            .with_overrides(&overrides)
            .and_then(|c| c.with("seed", base.seed.wrapping_add(i as u64)))
            .and_then(|c| run_train(c, cell_out.as_deref()));
        let row = match result {
            Ok(t) => {
                let last = t.ck.reports.last();
                SweepRow {
                    cell: i,
                    param,
                    value,
                    knn_accuracy: last.map(|r| r.knn_accuracy),
                    precision: last.map(|r| r.mean_precision),
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("sweep cell {i} ({param}={value}) failed: {e}");
                SweepRow { cell: i, param, value, knn_accuracy: None, precision: None, error: Some(e.to_string()) }
            }
        };
        rows.push(row);
        if let Some(dir) = out {
            write_sweep(dir, &rows)?;
        }
    }
    Ok(rows)
}

/// `sweep.csv` (`param,value,knn_accuracy,precision`, blank metrics for failed
/// cells) and `sweep_failures.jsonl`.
pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["param", "value", "knn_accuracy", "precision"]).map_err(csv_err(&path))?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([r.param.clone(), r.value.clone(), fmt(r.knn_accuracy), fmt(r.precision)]).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let failures: Vec<String> = rows
        .iter()
        .filter(|r| r.error.is_some())
        .map(serde_json::to_string)
        .collect::<std::result::Result<_, _>>()?;
    let path = dir.join("sweep_failures.jsonl");
    let text = failures.iter().map(|l| format!("{l}\n")).collect::<String>();
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
