//! Pair sampling, the pairwise objective, the optimiser and the training
//! loop.

mod optim;
mod pairs;

pub use optim::{init_params, RmsProp};
pub use pairs::{
    augment, sample_pairs, window, window_start, Augmentation, Label, Pair, PairBatch, CROP_MARGIN,
};

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::recurrent::Dropout;
use crate::tensor::{bce_value, clip_gradients, Tape, Tensor, Var};

/// Probabilities are kept this far from 0 and 1 inside the log.
pub const PROB_CLAMP: f64 = 1e-7;

const STREAM_INIT: u64 = 0;
const STREAM_SAMPLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

/// Independent random stream `stream` derived from one seed.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Negative log-likelihood of one pair: `-ln s` for similar pairs and
/// `-ln(1-s)` for dissimilar ones.
pub fn pair_loss(s: f64, label: Label) -> Result<f64> {
    bce_value(s, label.is_similar(), PROB_CLAMP)
}

/// Loss and summed parameter gradients of one batch.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: f64,
    pub grads: ModelParams,
    pub similarities: Vec<f64>,
}

/// Forward and backward over every pair of `batch` with shared parameters.
/// Gradients are summed over pairs.
pub fn batch_gradient(
    arch: &Architecture,
    params: &ModelParams,
    batch: &PairBatch,
    mut dropout: Option<&mut Dropout>,
) -> Result<BatchGradient> {
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut similarities = Vec::with_capacity(batch.len());
    for pair in &batch.pairs {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let xa: Vec<Var> = pair.a.iter().map(|f| tape.constant(f.clone())).collect();
        let xb: Vec<Var> = pair.b.iter().map(|f| tape.constant(f.clone())).collect();
        let s = arch.siamese(&bound).similarity(&mut tape, &xa, &xb, dropout.as_deref_mut())?;
        let l = tape.bce(s, pair.label.is_similar(), PROB_CLAMP)?;
        similarities.push(tape.value(s).item());
        loss += tape.value(l).item();
        tape.backward(l)?;
        let g = params.grads_from(&tape, &bound);
        for ((_, acc), (_, gi)) in grads.named_mut().into_iter().zip(g.named()) {
            for (a, x) in acc.data_mut().iter_mut().zip(gi.data()) {
                *a += x;
            }
        }
    }
    Ok(BatchGradient {
        loss,
        grads,
        similarities,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    Completed,
    /// The mean loss did not improve for `patience` epochs.
    Plateau { epoch: usize },
    /// A loss or gradient was not finite; parameters are those before the
    /// offending batch.
    NonFinite { epoch: usize, message: String },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean per-pair loss of each completed epoch.
    pub loss_history: Vec<f64>,
    pub stop: StopReason,
}

/// Progress notifications from [`train`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Epoch { epoch: usize, mean_loss: f64 },
    Checkpoint { epoch: usize, path: &'a std::path::Path },
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Checkpoints go to `<dir>/epoch_<n>` every `checkpoint_every` epochs,
    /// and to `<dir>/last_good` when training halts on a numeric failure.
    pub checkpoint_dir: Option<PathBuf>,
    /// Starting point; drawn from the seed when absent.
    pub initial: Option<ModelParams>,
    pub on_event: Option<&'a mut dyn FnMut(TrainEvent<'_>)>,
}

/// Siamese training on the identities `ids` of `ds`.
///
/// Each epoch draws `batches_per_epoch` balanced batches; each batch is
/// forwarded through both branches with the shared parameters, its summed
/// gradient is clipped element-wise and fed to RMSProp. Everything random is
/// derived from `config.seed`.
pub fn train(arch: &Architecture, ds: &Dataset, ids: &[String], mut opts: TrainOptions<'_>) -> Result<TrainOutcome> {
    let cfg = &arch.config;
    for id in ids {
        for cam in crate::data::Camera::BOTH {
            if ds.sequence(id, cam).is_none() {
                return Err(Error::Manifest(format!("training identity {id} has no {cam} sequence")));
            }
        }
    }
    let mut params = match opts.initial.take() {
        Some(p) => {
            arch.check(&p)?;
            p
        }
        None => init_params(arch, &mut rng_stream(cfg.seed, STREAM_INIT)),
    };
    let mut sampler = rng_stream(cfg.seed, STREAM_SAMPLE);
    let mut dropout = Dropout::new(cfg.dropout, rng_stream(cfg.seed, STREAM_DROPOUT));
    let mut opt = RmsProp::new(&params, cfg.lr, cfg.rho, cfg.eps);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut emit = |ev: TrainEvent<'_>| {
        if let Some(f) = opts.on_event.as_mut() {
            f(ev);
        }
    };

    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        let mut failure = None;
        for _ in 0..cfg.batches_per_epoch {
            let batch = sample_pairs(ds, ids, cfg.batch, cfg.seq_len, cfg.augment, &mut sampler)?;
            let mut bg = batch_gradient(arch, &params, &batch, Some(&mut dropout))?;
            if !bg.loss.is_finite() {
                failure = Some(format!("batch loss is {}", bg.loss));
                break;
            }
            clip_gradients(bg.grads.named_mut().into_iter().map(|(_, g)| g), -cfg.clip, cfg.clip);
            let mut next = params.clone();
            if let Err(e) = opt.step(&mut next, &bg.grads) {
                failure = Some(e.to_string());
                break;
            }
            if let Some((name, _)) = next.named().into_iter().find(|(_, t)| !t.is_finite()) {
                failure = Some(format!("parameter {name} became non-finite"));
                break;
            }
            params = next;
            total += bg.loss;
            count += batch.len();
        }
        if let Some(message) = failure {
            if let Some(dir) = &opts.checkpoint_dir {
                let path = dir.join("last_good");
                checkpoint::save(&path, cfg, &params)?;
                emit(TrainEvent::Checkpoint { epoch, path: &path });
            }
            return Ok(TrainOutcome {
                params,
                loss_history: history,
                stop: StopReason::NonFinite { epoch, message },
            });
        }
        let mean = total / count as f64;
        history.push(mean);
        emit(TrainEvent::Epoch { epoch, mean_loss: mean });
        if let Some(dir) = &opts.checkpoint_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("epoch_{epoch:05}"));
                checkpoint::save(&path, cfg, &params)?;
                emit(TrainEvent::Checkpoint { epoch, path: &path });
            }
        }
        if mean < best {
            best = mean;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                return Ok(TrainOutcome {
                    params,
                    loss_history: history,
                    stop: StopReason::Plateau { epoch },
                });
            }
        }
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
        stop: StopReason::Completed,
    })
}

/// Least-squares slope of `values` against their index.
pub fn trend(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Whether a loss history trends downward: negative fitted slope and a last
/// value below the first.
pub fn is_decreasing(values: &[f64]) -> bool {
    values.len() >= 2 && trend(values) < 0.0 && values.last() < values.first()
}

/// Eager similarity of two sequences without dropout.
pub fn pair_similarity(arch: &Architecture, params: &ModelParams, a: &[Tensor], b: &[Tensor]) -> Result<f64> {
    let fa = arch.feature_value(params, a)?;
    let fb = arch.feature_value(params, b)?;
    crate::aggregation::similarity_value(&fa, &fb, &params.similarity)
}
