//! Small-model training runs shared by the smoke tests.
#![allow(dead_code)]

use std::sync::Arc;

use grid_core::encoder::{TextEncoder, ToyEncoder};
use grid_core::eval::GridPlanner;
use grid_core::graph::Trace;
use grid_core::network::ModelConfig;
use grid_core::training::{build_samples, LossConfig, MetricsRow, TrainConfig, Trainer};

/// A narrower network than the default so a run fits on one CPU core.
pub fn compact_model() -> ModelConfig {
    ModelConfig {
        d: 32,
        heads: 4,
        l_gat: 2,
        l_enh: 2,
        l_encdec: 1,
        ff_dim: 64,
        head_hidden: 32,
        ..Default::default()
    }
}

/// One attention head at the encoder's default width. Node tokens average
/// several word vectors, and at d = 32 the category signal is too diluted to
/// ground unseen color/category pairs.
pub fn single_head_model() -> ModelConfig {
    ModelConfig {
        d: 64,
        heads: 1,
        ..compact_model()
    }
}

/// Regularization for the smoke runs. At the library defaults the penalty,
/// summed over every weight of even the compact model, outweighs the data
/// terms and the network cannot fit its training set.
pub fn smoke_loss() -> LossConfig {
    LossConfig {
        gamma: 1e-4,
        delta: 1e-4,
        ..Default::default()
    }
}

pub fn smoke_train(iterations: usize, peak_lr: f64) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 16,
        peak_lr,
        seed: 0,
        ..Default::default()
    }
}

/// Trains on every stage of `traces`, calling `log` on each metrics row.
pub fn train(
    traces: &[Trace],
    model: &ModelConfig,
    train: TrainConfig,
    loss: LossConfig,
    mut log: impl FnMut(&MetricsRow),
) -> GridPlanner {
    let enc = ToyEncoder::new(model.d).unwrap();
    let samples = build_samples(traces, &enc, model).unwrap();
    let iterations = train.iterations;
    let mut trainer = Trainer::new(model.clone(), train, loss, enc.digest()).unwrap();
    trainer
        .run_until(&samples, iterations, |row| {
            log(row);
            Ok(())
        })
        .unwrap();
    let encoder: Arc<dyn TextEncoder> = Arc::new(enc);
    GridPlanner {
        params: trainer.params.clone(),
        cfg: model.clone(),
        encoder,
    }
}
