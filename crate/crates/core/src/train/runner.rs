use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{backward, forward_loss, ModelConfig};
use super::params::Params;
use super::sgd::{sgd_step, SgdState, TrainConfig};
use crate::error::{check_dim, Error, Result};
use crate::scene::Scene;

/// One sample of the training curve, measured on the batch of that step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iter: usize,
    pub loss: f64,
    pub acc_overall: f64,
    pub acc_ambiguous: Option<f64>,
    pub per_class: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Params,
    pub curve: Vec<CurvePoint>,
}

struct StepStats {
    loss: f64,
    grads: Params,
    hits: Vec<(usize, bool, bool)>,
}

fn scene_step(scene: &Scene, params: &Params, model: &ModelConfig) -> Result<StepStats> {
    let (loss, tape) = forward_loss(scene, params, model, None)?;
    let grads = backward(&tape, params)?;
    let hits = scene
        .regions
        .iter()
        .zip(tape.predictions())
        .map(|(r, p)| (r.label, r.ambiguous, p == r.label))
        .collect();
    Ok(StepStats { loss, grads, hits })
}

fn curve_point(iter: usize, stats: &[StepStats], classes: usize) -> CurvePoint {
    let loss = stats.iter().map(|s| s.loss).sum::<f64>() / stats.len() as f64;
    let (mut total, mut correct, mut at, mut ac) = (0usize, 0usize, 0usize, 0usize);
    let mut ct = vec![0usize; classes];
    let mut cc = vec![0usize; classes];
    for &(label, amb, hit) in stats.iter().flat_map(|s| s.hits.iter()) {
        total += 1;
        correct += hit as usize;
        ct[label] += 1;
        cc[label] += hit as usize;
        if amb {
            at += 1;
            ac += hit as usize;
        }
    }
    let ratio = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    CurvePoint {
        iter,
        loss,
        acc_overall: ratio(correct, total).unwrap_or(0.0),
        acc_ambiguous: ratio(ac, at),
        per_class: (0..classes).map(|c| ratio(cc[c], ct[c])).collect(),
    }
}

/// Initializes parameters from `train_cfg.seed` and runs momentum SGD over
/// batches of whole scenes. Parameter initialization and batch order come
/// from one seeded stream, so runs that differ only in `model.mode` see the
/// same initial head and the same batches.
pub fn train(scenes: &[Scene], model: &ModelConfig, train_cfg: &TrainConfig) -> Result<TrainOutcome> {
    model.validate()?;
    train_cfg.validate()?;
    let first = scenes.first().ok_or(Error::Empty("no training scenes"))?;
    let (d, c) = (first.feature_dim(), first.num_classes());
    for s in scenes {
        check_dim("training scene feature dim", d, s.feature_dim())?;
        check_dim("training scene classes", c, s.num_classes())?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut params = Params::init(&mut rng, d, c, model.layers, model.slope)?;
    if train_cfg.zero_gcn {
        params.gcn.weights.iter_mut().for_each(|w| w.fill(0.0));
    }
    let mut state = SgdState::new(&params);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::new();

    for iter in 0..train_cfg.iterations {
        let mut batch = Vec::with_capacity(train_cfg.batch_size);
        while batch.len() < train_cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let stats: Vec<StepStats> = batch
            .par_iter()
            .map(|&k| scene_step(&scenes[k], &params, model))
            .collect::<Result<_>>()?;

        if iter % train_cfg.log_every == 0 {
            curve.push(curve_point(iter, &stats, c));
        }

        let mut grads = params.zeros_like();
        for s in &stats {
            grads.add_assign(&s.grads);
        }
        grads.scale(1.0 / stats.len() as f64);
        sgd_step(&mut params, &grads, &mut state, train_cfg, iter)?;
        if params.tensors().iter().any(|(_, t)| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("parameters after update"));
        }
    }
    Ok(TrainOutcome { params, curve })
}
