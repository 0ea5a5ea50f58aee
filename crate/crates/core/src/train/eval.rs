use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{forward_loss, ModelConfig};
use super::params::Params;
use crate::error::{Error, Result};
use crate::scene::Scene;

/// Region-level classification metrics pooled over scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean per-scene loss.
    pub loss: f64,
    pub acc_overall: f64,
    /// `None` when no ambiguous regions were evaluated.
    pub acc_ambiguous: Option<f64>,
    /// `None` for classes absent from the evaluated scenes.
    pub per_class: Vec<Option<f64>>,
    pub regions: usize,
    pub ambiguous_regions: usize,
}

#[derive(Default, Clone)]
struct Counts {
    loss: f64,
    total: usize,
    correct: usize,
    amb_total: usize,
    amb_correct: usize,
    class_total: Vec<usize>,
    class_correct: Vec<usize>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Scenes are evaluated in parallel; the reduction runs in scene order so
/// the result does not depend on thread scheduling.
pub fn evaluate(scenes: &[Scene], params: &Params, cfg: &ModelConfig) -> Result<Metrics> {
    if scenes.is_empty() {
        return Err(Error::Empty("no scenes to evaluate"));
    }
    let c = params.num_classes();
    let per_scene: Vec<Counts> = scenes
        .par_iter()
        .map(|scene| -> Result<Counts> {
            let (loss, tape) = forward_loss(scene, params, cfg, None)?;
            let mut k = Counts {
                loss,
                class_total: vec![0; c],
                class_correct: vec![0; c],
                ..Counts::default()
            };
            for (r, pred) in scene.regions.iter().zip(tape.predictions()) {
                let hit = (pred == r.label) as usize;
                k.total += 1;
                k.correct += hit;
                k.class_total[r.label] += 1;
                k.class_correct[r.label] += hit;
                if r.ambiguous {
                    k.amb_total += 1;
                    k.amb_correct += hit;
                }
            }
            Ok(k)
        })
        .collect::<Result<_>>()?;

    let mut acc = Counts {
        class_total: vec![0; c],
        class_correct: vec![0; c],
        ..Counts::default()
    };
    for k in &per_scene {
        acc.loss += k.loss;
        acc.total += k.total;
        acc.correct += k.correct;
        acc.amb_total += k.amb_total;
        acc.amb_correct += k.amb_correct;
        for j in 0..c {
            acc.class_total[j] += k.class_total[j];
            acc.class_correct[j] += k.class_correct[j];
        }
    }
    Ok(Metrics {
        loss: acc.loss / scenes.len() as f64,
        acc_overall: ratio(acc.correct, acc.total).unwrap_or(0.0),
        acc_ambiguous: ratio(acc.amb_correct, acc.amb_total),
        per_class: (0..c).map(|j| ratio(acc.class_correct[j], acc.class_total[j])).collect(),
        regions: acc.total,
        ambiguous_regions: acc.amb_total,
    })
}
