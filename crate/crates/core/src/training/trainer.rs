use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{data_loss_on_tape, object_row, regularization};
use super::optim::{AdamW, L1Mode};
use super::schedule::one_cycle_lr_with_warmup;
use super::{LossConfig, TrainError};
use crate::encoder::{digest_of, TextEncoder};
use crate::graph::{Subtask, Trace};
use crate::network::{
    predict, prepare_inputs, register_params, read_output, trace_forward, Checkpoint, Inputs, ModelConfig,
    ModelParams,
};
use crate::tensor::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub warmup_frac: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l1_mode: L1Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-4,
            div_factor: 10.0,
            final_div_factor: 1e-4,
            warmup_frac: 0.3,
            iterations: 500,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l1_mode: L1Mode::Coupled,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("iterations and batch_size must be at least 1".into()));
        }
        if !(self.peak_lr > 0.0 && self.div_factor > 0.0 && self.final_div_factor > 0.0) {
            return Err(TrainError::Config("learning rate and div factors must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(TrainError::Config(format!("warmup_frac {} outside [0, 1]", self.warmup_frac)));
        }
        Ok(())
    }

    /// Learning rate used by iteration `i` (0-based): the first iteration
    /// uses the schedule start, the last one its end.
    pub fn lr_at(&self, i: usize) -> f64 {
        one_cycle_lr_with_warmup(
            i,
            self.iterations.saturating_sub(1),
            self.peak_lr,
            self.div_factor,
            self.final_div_factor,
            self.warmup_frac,
        )
    }
}

/// One training example: the graphs observed before a subtask.
#[derive(Clone, Debug)]
pub struct Sample {
    pub task: usize,
    pub stage: usize,
    pub inputs: Arc<Inputs<f64>>,
    pub target: Subtask,
    pub object_row: usize,
}

/// Embeds every stage of every trace.
pub fn build_samples(
    traces: &[Trace],
    encoder: &dyn TextEncoder,
    cfg: &ModelConfig,
) -> Result<Vec<Sample>, TrainError> {
    let per_task: Vec<Result<Vec<Sample>, TrainError>> = traces
        .par_iter()
        .enumerate()
        .map(|(task, tr)| {
            tr.stages
                .iter()
                .zip(&tr.subtasks)
                .enumerate()
                .map(|(stage, (st, &target))| {
                    let inputs = prepare_inputs(&tr.instruction, &st.robot, &st.scene, encoder, cfg)?;
                    let object_row = object_row(&inputs.scene_ids, target.object_id)?;
                    Ok(Sample {
                        task,
                        stage,
                        inputs: Arc::new(inputs),
                        target,
                        object_row,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in per_task {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_act: f64,
    pub loss_obj: f64,
    pub batch_sub_acc: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    train: TrainConfig,
    loss: LossConfig,
    iteration: usize,
    adam_t: u64,
    config_digest: String,
}

fn mix(seed: u64, x: u64) -> u64 {
    let mut z = seed ^ x.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateful training loop; everything it does is a function of the
/// configuration, the samples and the iteration counter, so a run resumed
/// from a checkpoint matches an uninterrupted one bit for bit.
pub struct Trainer {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub loss_cfg: LossConfig,
    pub params: ModelParams<f64>,
    pub optimizer: AdamW,
    pub iteration: usize,
    pub encoder_digest: String,
    epoch_cache: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        loss_cfg: LossConfig,
        encoder_digest: impl Into<String>,
    ) -> Result<Self, TrainError> {
        model_cfg.validate()?;
        train_cfg.validate()?;
        loss_cfg.validate()?;
        let params = ModelParams::init(&model_cfg, train_cfg.seed)?;
        let optimizer = AdamW::new(train_cfg.beta1, train_cfg.beta2, train_cfg.eps);
        Ok(Self {
            model_cfg,
            train_cfg,
            loss_cfg,
            params,
            optimizer,
            iteration: 0,
            encoder_digest: encoder_digest.into(),
            epoch_cache: None,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let meta: Meta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| TrainError::Config(format!("checkpoint has no resumable training state: {e}")))?;
        let mut opt = AdamW::new(meta.train.beta1, meta.train.beta2, meta.train.eps);
        opt.t = meta.adam_t;
        for (name, a) in &ck.extra {
            if let Some(n) = name.strip_prefix("adam_m/") {
                opt.m.insert(n.to_string(), a.clone());
            } else if let Some(n) = name.strip_prefix("adam_v/") {
                opt.v.insert(n.to_string(), a.clone());
            }
        }
        Ok(Self {
            model_cfg: ck.model.clone(),
            train_cfg: meta.train,
            loss_cfg: meta.loss,
            params: ck.params.clone(),
            optimizer: opt,
            iteration: meta.iteration,
            encoder_digest: ck.encoder_digest.clone(),
            epoch_cache: None,
        })
    }

    /// Digest over model, training and loss configuration.
    pub fn config_digest(&self) -> String {
        digest_of(&(&self.model_cfg, &self.train_cfg, &self.loss_cfg))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut extra = BTreeMap::new();
        for (n, a) in &self.optimizer.m {
            extra.insert(format!("adam_m/{n}"), a.clone());
        }
        for (n, a) in &self.optimizer.v {
            extra.insert(format!("adam_v/{n}"), a.clone());
        }
        let meta = Meta {
            train: self.train_cfg.clone(),
            loss: self.loss_cfg.clone(),
            iteration: self.iteration,
            adam_t: self.optimizer.t,
            config_digest: self.config_digest(),
        };
        Checkpoint {
            model: self.model_cfg.clone(),
            encoder_digest: self.encoder_digest.clone(),
            params: self.params.clone(),
            extra,
            meta: serde_json::to_value(meta).expect("serializable meta"),
        }
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.train_cfg.iterations
    }

    /// Sample index at global position `pos` of the shuffled epoch stream.
    fn sample_at(&mut self, pos: u64, n: usize) -> usize {
        let epoch = pos / n as u64;
        let fresh = !matches!(&self.epoch_cache, Some((e, _)) if *e == epoch);
        if fresh {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.train_cfg.seed, epoch)));
            self.epoch_cache = Some((epoch, perm));
        }
        self.epoch_cache.as_ref().unwrap().1[(pos % n as u64) as usize]
    }

    /// Runs one iteration over the next batch.
    pub fn step(&mut self, samples: &[Sample]) -> Result<MetricsRow, TrainError> {
        if samples.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let it = self.iteration;
        let b = self.train_cfg.batch_size;
        let base = (it * b) as u64;
        let batch: Vec<(u64, usize)> = (0..b as u64).map(|j| (base + j, self.sample_at(base + j, samples.len()))).collect();

        let params = &self.params;
        let cfg = &self.model_cfg;
        let loss_cfg = &self.loss_cfg;
        let seed = self.train_cfg.seed;
        let dropout = cfg.dropout > 0.0;
        let results: Vec<Result<(f64, f64, bool, BTreeMap<String, Array2<f64>>), TrainError>> = batch
            .par_iter()
            .map(|&(pos, idx)| {
                let s = &samples[idx];
                let tape = Tape::new();
                let vars = register_params(&tape, params);
                let rng = dropout.then(|| ChaCha8Rng::seed_from_u64(mix(seed ^ 0xd509, pos)));
                let out = trace_forward(&tape, &vars, cfg, &s.inputs, rng)?;
                let (total, ce_a, ce_o) = data_loss_on_tape(&tape, out, s.target.action.index(), s.object_row, loss_cfg);
                let pred = predict(&read_output(&tape, out, s.inputs.scene_ids.clone()));
                let mut g = tape.backward(total);
                let grads = vars
                    .iter()
                    .map(|(n, v)| {
                        let grad = g.take(*v).unwrap_or_else(|| Array2::zeros(params.get(n).dim()));
                        (n.clone(), grad)
                    })
                    .collect();
                Ok((tape.scalar(ce_a), tape.scalar(ce_o), pred == s.target, grads))
            })
            .collect();

        let inv = 1.0 / b as f64;
        let mut grads: BTreeMap<String, Array2<f64>> = BTreeMap::new();
        let (mut act, mut obj, mut correct) = (0.0, 0.0, 0usize);
        for r in results {
            let (a, o, ok, g) = r?;
            act += a * inv;
            obj += o * inv;
            correct += ok as usize;
            for (n, gi) in g {
                match grads.get_mut(&n) {
                    Some(acc) => acc.scaled_add(inv, &gi),
                    None => {
                        grads.insert(n, gi * inv);
                    }
                }
            }
        }
        let reg = regularization(&self.params, &self.loss_cfg);
        let loss = self.loss_cfg.alpha * act + self.loss_cfg.beta * obj + reg;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite {
                iteration: it,
                detail: format!("loss {loss} (action CE {act}, object CE {obj}, regularizer {reg})"),
            });
        }
        if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|x| !x.is_finite())) {
            return Err(TrainError::NonFinite {
                iteration: it,
                detail: format!("gradient of {name} is not finite"),
            });
        }
        let lr = self.train_cfg.lr_at(it);
        self.optimizer
            .step(&mut self.params, &grads, lr, &self.loss_cfg, self.train_cfg.l1_mode);
        self.iteration += 1;
        Ok(MetricsRow {
            iteration: it + 1,
            lr,
            loss,
            loss_act: act,
            loss_obj: obj,
            batch_sub_acc: correct as f64 / b as f64,
        })
    }

    /// Steps until `until` iterations are complete (capped at the configured
    /// total), handing every row to `on_row`.
    pub fn run_until(
        &mut self,
        samples: &[Sample],
        until: usize,
        mut on_row: impl FnMut(&MetricsRow) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        let until = until.min(self.train_cfg.iterations);
        while self.iteration < until {
            let row = self.step(samples)?;
            on_row(&row)?;
        }
        Ok(())
    }
}

/// Trains from scratch on `traces`; writes the metrics CSV when a path is
/// given. Returns the final checkpoint and all metric rows.
pub fn train(
    traces: &[Trace],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    encoder: &dyn TextEncoder,
    metrics_csv: Option<&Path>,
) -> Result<(Checkpoint, Vec<MetricsRow>), TrainError> {
    if traces.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut trainer = Trainer::new(model_cfg.clone(), train_cfg.clone(), loss_cfg.clone(), encoder.digest())?;
    let samples = build_samples(traces, encoder, model_cfg)?;
    let mut rows = Vec::with_capacity(train_cfg.iterations);
    let mut writer = match metrics_csv {
        Some(p) => Some(csv::Writer::from_path(p)?),
        None => None,
    };
    trainer.run_until(&samples, train_cfg.iterations, |row| {
        if let Some(w) = writer.as_mut() {
            w.serialize(row)?;
            w.flush()?;
        }
        rows.push(row.clone());
        Ok(())
    })?;
    Ok((trainer.checkpoint(), rows))
}
