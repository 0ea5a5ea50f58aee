//! Semantic relationship graph: a shared MLP encoder projects region
//! features into a latent space, pairwise inner products are squashed to
//! `[0, 1]`, highly overlapped pairs are masked and the top `K` partners of
//! every region are kept.

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::graph::{overlap_mask, topk_select, Adjacency, GraphConfig, OverlapMask, ScoreMatrix};
use crate::geometry::BBox;
use crate::init::{all_finite, fan_uniform, leaky_relu, leaky_relu_grad, sigmoid};

pub const DEFAULT_SLOPE: f64 = 0.01;

/// One affine layer, `x W + b`. The bias is stored as a `1 x out` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Dense {
    pub fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: fan_uniform(rng, fan_in, fan_out),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Region feature encoder, LeakyReLU between layers and none after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEncoder {
    pub layers: Vec<Dense>,
    pub slope: f64,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// Input of every layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Array2<f64>>,
}

impl EncoderCache {
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

impl SemanticEncoder {
    /// `dims = [D, h_1, ..., E]`.
    pub fn init<R: Rng>(rng: &mut R, dims: &[usize], slope: f64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "encoder dims must have at least two positive entries, got {dims:?}"
            )));
        }
        let layers = dims.windows(2).map(|w| Dense::init(rng, w[0], w[1])).collect();
        Ok(Self { layers, slope })
    }

    /// `D -> D -> D/2`.
    pub fn default_dims(feature_dim: usize) -> Vec<usize> {
        vec![feature_dim, feature_dim, (feature_dim / 2).max(1)]
    }

    /// Single linear layer with identity weights.
    pub fn identity(d: usize) -> Self {
        Self {
            layers: vec![Dense {
                weight: Array2::eye(d),
                bias: Array2::zeros((1, d)),
            }],
            slope: DEFAULT_SLOPE,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("encoder has layers").out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("encoder has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            check_dim("encoder layer chain", pair[0].out_dim(), pair[1].in_dim())?;
        }
        for l in &self.layers {
            check_dim("encoder bias", l.out_dim(), l.bias.ncols())?;
            if !all_finite(&l.weight) || !all_finite(&l.bias) {
                return Err(Error::NonFinite("encoder weights"));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, EncoderCache)> {
        check_dim("encoder input", self.input_dim(), x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            inputs.push(h);
            if l < last {
                h = z.mapv(|v| leaky_relu(v, self.slope));
                pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, EncoderCache { inputs, pre }))
    }

    /// Gradients of every layer given the gradient at the encoder output.
    pub fn backward(&self, cache: &EncoderCache, d_out: &Array2<f64>) -> Vec<Dense> {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut d = d_out.clone();
        for l in (0..self.layers.len()).rev() {
            if l < self.layers.len() - 1 {
                let z = &cache.pre[l];
                d.zip_mut_with(z, |g, &zv| *g *= leaky_relu_grad(zv, self.slope));
            }
            let weight = cache.inputs[l].t().dot(&d);
            let bias = d.sum_axis(Axis(0)).insert_axis(Axis(0));
            if l > 0 {
                d = d.dot(&self.layers[l].weight.t());
            }
            grads.push(Dense { weight, bias });
        }
        grads.reverse();
        grads
    }

    pub fn zeros_like(&self) -> Vec<Dense> {
        self.layers
            .iter()
            .map(|l| Dense {
                weight: Array2::zeros(l.weight.raw_dim()),
                bias: Array2::zeros(l.bias.raw_dim()),
            })
            .collect()
    }
}

/// Everything the semantic branch computes on the way to its scores.
#[derive(Debug, Clone)]
pub struct SemanticForward {
    pub latent: Array2<f64>,
    pub cache: EncoderCache,
    /// Unmasked inner products `<phi_i, phi_j>`.
    pub raw: Array2<f64>,
    pub scores: ScoreMatrix,
}

pub fn semantic_forward(
    features: &Array2<f64>,
    enc: &SemanticEncoder,
    mask: &OverlapMask,
) -> Result<SemanticForward> {
    check_dim("mask size", features.nrows(), mask.len())?;
    let (latent, cache) = enc.forward(features)?;
    let raw = latent.dot(&latent.t());
    if !all_finite(&raw) {
        return Err(Error::NonFinite("semantic scores"));
    }
    let mut s = raw.mapv(sigmoid);
    s.zip_mut_with(mask.as_array(), |v, &keep| {
        if !keep {
            *v = 0.0;
        }
    });
    Ok(SemanticForward {
        latent,
        cache,
        raw,
        scores: ScoreMatrix(s),
    })
}

/// `s_ij = mask_ij * sigmoid(<phi(p_i), phi(p_j)>)`.
pub fn semantic_scores(
    features: &Array2<f64>,
    enc: &SemanticEncoder,
    mask: &OverlapMask,
) -> Result<ScoreMatrix> {
    semantic_forward(features, enc, mask).map(|f| f.scores)
}

pub fn build_semantic_graph(
    boxes: &[BBox],
    features: &Array2<f64>,
    enc: &SemanticEncoder,
    cfg: &GraphConfig,
) -> Result<Adjacency> {
    check_dim("boxes vs features", features.nrows(), boxes.len())?;
    let mask = overlap_mask(boxes, cfg.overlap_threshold);
    let scores = semantic_scores(features, enc, &mask)?;
    Ok(topk_select(&scores, cfg.k))
}
