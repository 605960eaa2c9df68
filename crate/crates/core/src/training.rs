//! Minibatch training loop, evaluation, and resumable training state.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::EhrSample;
use crate::embeddings::EmbeddingProvider;
use crate::error::{LdamError, Result};
use crate::metrics::{roc_auc, Averaging, MetricsReport};
use crate::model::{batch_forward, build_context, label_term, Checkpoint, Ldam, ModelConfig, NameEmbeddings};
use crate::numerics::{AdamConfig, AdamState, Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Stop after this many epochs without a better validation micro AUC.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            shuffle: true,
            checkpoint_every: 0,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(LdamError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(LdamError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(LdamError::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.early_stop_patience == Some(0) {
            return Err(LdamError::Config("early_stop_patience must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("epochs".into(), self.epochs.to_string());
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("lr".into(), format!("{:?}", self.lr));
        m.insert("seed".into(), self.seed.to_string());
        m.insert("shuffle".into(), self.shuffle.to_string());
        m.insert("checkpoint_every".into(), self.checkpoint_every.to_string());
        if let Some(p) = self.early_stop_patience {
            m.insert("early_stop_patience".into(), p.to_string());
        }
        m
    }

    /// Overrides fields from `key=value` pairs; unknown keys are returned.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Vec<&'a str>> {
        fn parse<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| LdamError::Config(format!("bad value {v:?} for {k}")))
        }
        let mut unknown = Vec::new();
        for (k, v) in pairs {
            match k {
                "epochs" => self.epochs = parse(k, v)?,
                "batch_size" => self.batch_size = parse(k, v)?,
                "lr" => self.lr = parse(k, v)?,
                "seed" => self.seed = parse(k, v)?,
                "shuffle" => self.shuffle = parse(k, v)?,
                "checkpoint_every" => self.checkpoint_every = parse(k, v)?,
                "early_stop_patience" => {
                    self.early_stop_patience = match v.trim() {
                        "" | "none" | "off" => None,
                        s => Some(parse(k, s)?),
                    }
                }
                other => unknown.push(other),
            }
        }
        Ok(unknown)
    }
}

/// A sample with its note already embedded.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    /// `D×L`, absent when the model ignores text.
    pub note: Option<Tensor>,
    pub series: Tensor,
    pub labels: Vec<u8>,
}

pub fn prepare(model: &Ldam, provider: &EmbeddingProvider, samples: &[EhrSample]) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| {
            model.check_sample(s)?;
            let note =
                if model.config.mode.uses_text() { Some(model.embed_note(provider, &s.note_tokens)?) } else { None };
            Ok(PreparedSample { note, series: s.timeseries.clone(), labels: s.labels.clone() })
        })
        .collect()
}

/// Probabilities for every prepared sample.
const PREDICT_CHUNK: usize = 64;

pub fn predict(model: &Ldam, names: &NameEmbeddings, samples: &[PreparedSample]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(PREDICT_CHUNK) {
        let inputs: Vec<(Option<&Tensor>, &Tensor)> = chunk.iter().map(|s| (s.note.as_ref(), &s.series)).collect();
        out.extend(model.forward_batch(&inputs, names)?.into_iter().map(|o| o.y_hat));
    }
    Ok(out)
}

pub fn evaluate(
    model: &Ldam,
    names: &NameEmbeddings,
    samples: &[PreparedSample],
    threshold: f64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(LdamError::Empty("evaluation set is empty".into()));
    }
    if !model.params.check_finite() {
        return Err(LdamError::Config("model parameters are not finite".into()));
    }
    let scores = predict(model, names, samples)?;
    let y: Vec<Vec<u8>> = samples.iter().map(|s| s.labels.clone()).collect();
    MetricsReport::compute(&scores, &y, threshold)
}

fn micro_auc(model: &Ldam, names: &NameEmbeddings, samples: &[PreparedSample]) -> Result<Option<f64>> {
    let scores = predict(model, names, samples)?;
    let y: Vec<Vec<u8>> = samples.iter().map(|s| s.labels.clone()).collect();
    Ok(roc_auc(&scores, &y, Averaging::Micro).ok())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub term1: f64,
    pub term2: f64,
    pub val_micro_auc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,loss,term1,term2,val_micro_auc,seconds";

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAIN_LOG_HEADER}\n");
        for r in &self.records {
            let auc = r.val_micro_auc.map_or(String::new(), |a| format!("{a:?}"));
            out.push_str(&format!("{},{:?},{:?},{:?},{},{:.3}\n", r.epoch, r.loss, r.term1, r.term2, auc, r.seconds));
        }
        out
    }
}

/// Model, optimizer, and epoch counter; everything needed to resume.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Ldam,
    pub optimizer: AdamState,
    pub epochs_completed: usize,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Ldam::new(model_cfg)?;
        Ok(Self::with_model(model, config))
    }

    pub fn with_model(model: Ldam, config: TrainConfig) -> Self {
        let optimizer =
            AdamState::for_params(AdamConfig { lr: config.lr, ..Default::default() }, &model.params.tensors());
        Self { config, model, optimizer, epochs_completed: 0 }
    }

    /// Resumes from a checkpoint; a missing optimizer state starts fresh moments.
    pub fn from_checkpoint(ck: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Ldam::from_parts(ck.config, ck.params)?;
        let mut t = Self::with_model(model, config);
        if let Some(state) = ck.optimizer {
            if state.m.len() != t.optimizer.m.len() {
                return Err(LdamError::CorruptCheckpoint("optimizer state does not match the model".into()));
            }
            t.optimizer = AdamState { config: AdamConfig { lr: t.config.lr, ..state.config }, ..state };
        }
        t.epochs_completed = ck.epochs_completed;
        Ok(t)
    }

    pub fn checkpoint(&self, metadata: BTreeMap<String, String>) -> Checkpoint {
        Checkpoint {
            config: self.model.config.clone(),
            params: self.model.params.clone(),
            metadata,
            optimizer: Some(self.optimizer.clone()),
            epochs_completed: self.epochs_completed,
        }
    }

    /// Sample order for a 1-based epoch, drawn from a stream keyed by the epoch.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if self.config.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
        }
        order
    }

    /// One Adam step on the batch mean of the per-sample loss plus the label term.
    /// Returns `(total, term1, term2)`.
    pub fn train_batch(
        &mut self,
        names: &NameEmbeddings,
        batch: &[&PreparedSample],
        epoch: usize,
        batch_index: usize,
    ) -> Result<(f64, f64, f64)> {
        if batch.is_empty() {
            return Err(LdamError::Empty("empty minibatch".into()));
        }
        let cfg = &self.model.config;
        let mut g = Graph::new();
        let ctx = build_context(&mut g, &self.model.params, names, true)?;
        let notes: Vec<Option<Var>> = batch.iter().map(|s| s.note.as_ref().map(|n| g.constant(n.clone()))).collect();
        let series: Vec<Var> = batch.iter().map(|s| g.constant(s.series.clone())).collect();
        let svs = batch_forward(&mut g, cfg, &ctx, &notes, &series)?;
        let mut sum = None;
        for (s, sv) in batch.iter().zip(svs) {
            let targets: Vec<f64> = s.labels.iter().map(|&y| y as f64).collect();
            let bce = g.bce_mean(sv.y_hat, &targets)?;
            sum = Some(match sum {
                None => bce,
                Some(acc) => g.add(acc, bce)?,
            });
        }
        let term1 = g.scale(sum.expect("nonempty batch"), 1.0 / batch.len() as f64);
        let term2 = label_term(&mut g, &ctx)?;
        let weighted = g.scale(term2, cfg.lambda_label);
        let total = g.add(term1, weighted)?;

        let values = [("term1", term1), ("term2", term2), ("total", total)].map(|(k, v)| (k, g.value(v).data()[0]));
        if let Some(&(term, value)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(LdamError::NonFinite { epoch, batch: batch_index, term, value });
        }
        g.backward(total)?;
        let grads: Vec<Tensor> = ctx.params.to_vec().into_iter().map(|v| g.grad_tensor(v)).collect();
        let grad_refs: Vec<Option<&[f64]>> = grads.iter().map(|t| Some(t.data())).collect();
        self.optimizer.update(&mut self.model.params.tensors_mut(), &grad_refs)?;
        Ok((values[2].1, values[0].1, values[1].1))
    }

    /// Runs the next epoch and returns its record.
    pub fn run_epoch(
        &mut self,
        names: &NameEmbeddings,
        train: &[PreparedSample],
        val: Option<&[PreparedSample]>,
    ) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(LdamError::Empty("training set is empty".into()));
        }
        let start = Instant::now();
        let epoch = self.epochs_completed + 1;
        let order = self.epoch_order(epoch, train.len());
        let (mut loss, mut term1, mut term2) = (0.0, 0.0, 0.0);
        let mut n_batches = 0;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (l, t1, t2) = self.train_batch(names, &batch, epoch, b + 1)?;
            loss += l;
            term1 += t1;
            term2 += t2;
            n_batches += 1;
        }
        self.epochs_completed = epoch;
        let val_micro_auc = match val {
            Some(v) if !v.is_empty() => micro_auc(&self.model, names, v)?,
            _ => None,
        };
        let n = n_batches as f64;
        Ok(EpochRecord {
            epoch,
            loss: loss / n,
            term1: term1 / n,
            term2: term2 / n,
            val_micro_auc,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Trains until `config.epochs` epochs are complete or early stopping fires.
    /// `on_epoch` sees the trainer after every epoch, e.g. to write checkpoints.
    pub fn fit(
        &mut self,
        names: &NameEmbeddings,
        train: &[PreparedSample],
        val: Option<&[PreparedSample]>,
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<TrainLog> {
        names.check(&self.model.config)?;
        let mut log = TrainLog::default();
        let mut best: Option<f64> = None;
        let mut stale = 0;
        while self.epochs_completed < self.config.epochs {
            let rec = self.run_epoch(names, train, val)?;
            on_epoch(self, &rec)?;
            let auc = rec.val_micro_auc;
            log.records.push(rec);
            if let (Some(patience), Some(auc)) = (self.config.early_stop_patience, auc) {
                if best.is_none_or(|b| auc > b) {
                    best = Some(auc);
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= patience {
                        break;
                    }
                }
            }
        }
        Ok(log)
    }
}

/// Trains a fresh model on `dataset`, optionally tracking validation micro AUC.
pub fn train(
    dataset: &[EhrSample],
    val_dataset: Option<&[EhrSample]>,
    provider: &EmbeddingProvider,
    names: &NameEmbeddings,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Ldam, TrainLog)> {
    if dataset.is_empty() {
        return Err(LdamError::Empty("training set is empty".into()));
    }
    let mut trainer = Trainer::new(model_cfg.clone(), train_cfg.clone())?;
    let train_set = prepare(&trainer.model, provider, dataset)?;
    let val_set = val_dataset.map(|v| prepare(&trainer.model, provider, v)).transpose()?;
    let log = trainer.fit(names, &train_set, val_set.as_deref(), |_, _| Ok(()))?;
    Ok((trainer.model, log))
}
