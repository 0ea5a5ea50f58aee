use ndarray::Array2;
use rand::Rng;

use crate::error::{check_dim, Result};
use crate::gcn::GcnParams;
use crate::semantic::{Dense, SemanticEncoder};

/// All trainable tensors: the semantic encoder, the GCN layers and the
/// classifier head. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub encoder: SemanticEncoder,
    pub gcn: GcnParams,
    pub head: Dense,
}

impl Params {
    /// Draws encoder, GCN and head in that order from `rng`.
    pub fn init<R: Rng>(
        rng: &mut R,
        feature_dim: usize,
        num_classes: usize,
        layers: usize,
        slope: f64,
    ) -> Result<Self> {
        let encoder = SemanticEncoder::init(rng, &SemanticEncoder::default_dims(feature_dim), slope)?;
        let gcn = GcnParams::init(rng, feature_dim, layers, slope)?;
        let head = Dense::init(rng, feature_dim, num_classes);
        Ok(Self { encoder, gcn, head })
    }

    pub fn feature_dim(&self) -> usize {
        self.head.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.gcn.validate()?;
        check_dim("encoder input vs head input", self.head.in_dim(), self.encoder.input_dim())?;
        check_dim("gcn dim vs head input", self.head.in_dim(), self.gcn.dim())?;
        check_dim("head bias", self.head.out_dim(), self.head.bias.ncols())?;
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.{l}.weight"), &layer.weight));
            out.push((format!("encoder.{l}.bias"), &layer.bias));
        }
        for (l, w) in self.gcn.weights.iter().enumerate() {
            out.push((format!("gcn.{l}.weight"), w));
        }
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.layers.iter_mut().enumerate() {
            out.push((format!("encoder.{l}.weight"), &mut layer.weight));
            out.push((format!("encoder.{l}.bias"), &mut layer.bias));
        }
        for (l, w) in self.gcn.weights.iter_mut().enumerate() {
            out.push((format!("gcn.{l}.weight"), w));
        }
        out.push(("head.weight".to_string(), &mut self.head.weight));
        out.push(("head.bias".to_string(), &mut self.head.bias));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (_, t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * c);
        }
    }
}
