use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{Error, Result};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate at `reference_batch` scenes per step.
    pub base_lr: f64,
    /// Batch size the base rate refers to; the effective rate scales
    /// linearly with `batch_size / reference_batch`.
    pub reference_batch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Decay points as fractions of `iterations`.
    pub milestones: Vec<f64>,
    pub decay_factor: f64,
    pub iterations: usize,
    /// Scenes per step.
    pub batch_size: usize,
    pub seed: u64,
    /// Leave GCN weights untouched by the optimizer.
    pub freeze_gcn: bool,
    /// Start from all-zero GCN weights.
    pub zero_gcn: bool,
    /// Loss-curve sampling interval in iterations.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.02,
            reference_batch: 16,
            momentum: 0.9,
            weight_decay: 1e-4,
            milestones: vec![2.0 / 3.0, 8.0 / 9.0],
            decay_factor: 0.1,
            iterations: 900,
            batch_size: 16,
            seed: 0,
            freeze_gcn: false,
            zero_gcn: false,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be finite and >= 0".into());
        }
        if self.milestones.iter().any(|&m| !(m > 0.0 && m < 1.0))
            || self.milestones.windows(2).any(|w| w[0] >= w[1])
        {
            return bad(format!(
                "milestones must be strictly increasing in (0, 1), got {:?}",
                self.milestones
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay factor must lie in (0, 1]".into());
        }
        if self.batch_size == 0 || self.reference_batch == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1".into());
        }
        Ok(())
    }

    pub fn scaled_lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / self.reference_batch as f64
    }

    /// Learning rate at iteration `iter`, after milestone decays.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| iter >= (m * self.iterations as f64).floor() as usize)
            .count();
        self.scaled_lr() * self.decay_factor.powi(passed as i32)
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocity: Params,
}

impl SgdState {
    pub fn new(params: &Params) -> Self {
        Self {
            velocity: params.zeros_like(),
        }
    }
}

/// `v <- momentum v + grad + wd p`, `p <- p - lr(iter) v`.
pub fn sgd_step(
    params: &mut Params,
    grads: &Params,
    state: &mut SgdState,
    cfg: &TrainConfig,
    iter: usize,
) -> Result<()> {
    let lr = cfg.lr_at(iter);
    let (mu, wd) = (cfg.momentum, cfg.weight_decay);
    let p_tensors = params.tensors_mut();
    let g_tensors = grads.tensors();
    let v_tensors = state.velocity.tensors_mut();
    if p_tensors.len() != g_tensors.len() || p_tensors.len() != v_tensors.len() {
        return Err(Error::DimensionMismatch {
            context: "optimizer tensor count",
            expected: p_tensors.len(),
            got: g_tensors.len(),
        });
    }
    for (((name, p), (_, g)), (_, v)) in p_tensors.into_iter().zip(g_tensors).zip(v_tensors) {
        if p.dim() != g.dim() || p.dim() != v.dim() {
            return Err(Error::DimensionMismatch {
                context: "optimizer tensor shape",
                expected: p.len(),
                got: g.len(),
            });
        }
        if cfg.freeze_gcn && name.starts_with("gcn.") {
            continue;
        }
        ndarray::Zip::from(&mut *p).and(&mut *v).and(g).for_each(|p, v, &g| {
            *v = mu * *v + g + wd * *p;
            *p -= lr * *v;
        });
    }
    Ok(())
}
