use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{check_dim, Error, Result};
use crate::gcn::{
    gcn_backward, gcn_backward_with_laplacian, gcn_forward_with, laplacian_edge_grads, GcnTape,
    NormalizedLaplacian, DEFAULT_LAYERS,
};
use crate::graph::{fuse_graphs, overlap_mask, topk_select, Adjacency, GraphConfig, OverlapMask};
use crate::scene::Scene;
use crate::semantic::{semantic_forward, SemanticForward, DEFAULT_SLOPE};
use crate::spatial::spatial_scores;

/// Which relationship graphs feed the reasoning module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Classifier on the raw features, no reasoning.
    Baseline,
    #[serde(rename = "sem")]
    Semantic,
    #[serde(rename = "spa")]
    Spatial,
    Full,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::Semantic, Mode::Spatial, Mode::Full];

    pub fn uses_semantic(self) -> bool {
        matches!(self, Mode::Semantic | Mode::Full)
    }

    pub fn uses_spatial(self) -> bool {
        matches!(self, Mode::Spatial | Mode::Full)
    }

    pub fn reasons(self) -> bool {
        self != Mode::Baseline
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Semantic => "sem",
            Mode::Spatial => "spa",
            Mode::Full => "full",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "sem" | "semantic" => Ok(Mode::Semantic),
            "spa" | "spatial" => Ok(Mode::Spatial),
            "full" => Ok(Mode::Full),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    pub graph: GraphConfig,
    /// Number of GCN layers.
    pub layers: usize,
    /// LeakyReLU negative slope used throughout.
    pub slope: f64,
    /// Extension: weight fused edges by their semantic score so that the
    /// encoder receives gradients from the classification loss.
    pub soft_edges: bool,
    /// Weight of the pairwise same-class score regularizer on the encoder;
    /// zero disables it.
    pub aux_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            graph: GraphConfig::default(),
            layers: DEFAULT_LAYERS,
            slope: DEFAULT_SLOPE,
            soft_edges: false,
            aux_weight: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        if self.layers == 0 {
            return Err(Error::InvalidConfig("layers must be >= 1".into()));
        }
        if !(self.slope >= 0.0 && self.slope < 1.0) {
            return Err(Error::InvalidConfig(format!("slope must lie in [0, 1), got {}", self.slope)));
        }
        if !(self.aux_weight >= 0.0 && self.aux_weight.is_finite()) {
            return Err(Error::InvalidConfig("aux_weight must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn needs_semantic_forward(&self) -> bool {
        self.mode.uses_semantic()
    }

    fn soft(&self) -> bool {
        self.soft_edges && self.mode.uses_semantic()
    }
}

/// The discrete graph structure of one scene. It is rebuilt on every
/// forward pass during training and held fixed for gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    pub mask: OverlapMask,
    pub semantic: Option<Adjacency>,
    pub spatial: Option<Adjacency>,
    pub fused: Adjacency,
}

fn structure_from(
    scene: &Scene,
    cfg: &ModelConfig,
    sem: Option<&SemanticForward>,
    mask: OverlapMask,
) -> Result<Structure> {
    let n = scene.len();
    let semantic = match sem {
        Some(s) if cfg.mode.uses_semantic() => Some(topk_select(&s.scores, cfg.graph.k)),
        _ => None,
    };
    let spatial = if cfg.mode.uses_spatial() {
        let scores = spatial_scores(&scene.boxes(), &cfg.graph, &mask)?;
        Some(topk_select(&scores, cfg.graph.k))
    } else {
        None
    };
    let fused = match (&semantic, &spatial) {
        (Some(a), Some(b)) => fuse_graphs(a, b)?,
        (Some(a), None) => a.clone(),
        (None, Some(b)) => b.clone(),
        (None, None) => Adjacency::empty(n),
    };
    Ok(Structure {
        mask,
        semantic,
        spatial,
        fused,
    })
}

/// Builds the semantic, spatial and fused graphs selected by the mode.
pub fn build_structure(scene: &Scene, params: &Params, cfg: &ModelConfig) -> Result<Structure> {
    let mask = overlap_mask(&scene.boxes(), cfg.graph.overlap_threshold);
    let sem = if cfg.needs_semantic_forward() {
        Some(semantic_forward(&scene.features(), &params.encoder, &mask)?)
    } else {
        None
    };
    structure_from(scene, cfg, sem.as_ref(), mask)
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct Tape {
    cfg: ModelConfig,
    structure: Structure,
    semantic: Option<SemanticForward>,
    gcn: Option<GcnTape>,
    updated: Array2<f64>,
    probs: Array2<f64>,
    labels: Vec<usize>,
    /// Unordered pairs entering the score regularizer.
    aux_pairs: usize,
    ce_loss: f64,
    aux_loss: f64,
}

impl Tape {
    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    /// Features after the residual update.
    pub fn updated_features(&self) -> &Array2<f64> {
        &self.updated
    }

    pub fn probabilities(&self) -> &Array2<f64> {
        &self.probs
    }

    /// Arg-max class per region; ties go to the lower class index.
    pub fn predictions(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    pub fn classification_loss(&self) -> f64 {
        self.ce_loss
    }

    pub fn aux_loss(&self) -> f64 {
        self.aux_loss
    }

    /// Sign pattern of every piecewise-linear activation, used to detect
    /// finite-difference steps that straddle a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        if let Some(g) = &self.gcn {
            for z in g.pre_activations() {
                out.extend(z.iter().map(|&v| v > 0.0));
            }
        }
        if let Some(s) = &self.semantic {
            for z in s.cache.pre_activations() {
                out.extend(z.iter().map(|&v| v > 0.0));
            }
        }
        out
    }
}

/// Mean cross-entropy of the classifier over the scene's regions, plus the
/// optional encoder regularizer. With `frozen` the graph structure is taken
/// from the argument instead of being rebuilt from the current parameters.
pub fn forward_loss(
    scene: &Scene,
    params: &Params,
    cfg: &ModelConfig,
    frozen: Option<&Structure>,
) -> Result<(f64, Tape)> {
    let n = scene.len();
    if n == 0 {
        return Err(Error::Empty("scene has no regions"));
    }
    check_dim("scene feature dim", params.feature_dim(), scene.feature_dim())?;
    check_dim("scene classes", params.num_classes(), scene.num_classes())?;
    let features = scene.features();
    let labels = scene.labels();

    let mask = match frozen {
        Some(s) => s.mask.clone(),
        None => overlap_mask(&scene.boxes(), cfg.graph.overlap_threshold),
    };
    let semantic = if cfg.needs_semantic_forward() {
        Some(semantic_forward(&features, &params.encoder, &mask)?)
    } else {
        None
    };
    let structure = match frozen {
        Some(s) => s.clone(),
        None if cfg.mode.reasons() => structure_from(scene, cfg, semantic.as_ref(), mask)?,
        None => Structure {
            mask,
            semantic: None,
            spatial: None,
            fused: Adjacency::empty(n),
        },
    };

    let (updated, gcn) = if cfg.mode.reasons() {
        let lap = if cfg.soft() {
            let s = &semantic.as_ref().expect("semantic forward ran").scores;
            let w: Vec<f64> = structure.fused.edges().iter().map(|&(i, j)| s.get(i, j)).collect();
            NormalizedLaplacian::weighted(&structure.fused, &w)?
        } else {
            NormalizedLaplacian::new(&structure.fused)
        };
        let (out, tape) = gcn_forward_with(&features, lap, &params.gcn)?;
        (out, Some(tape))
    } else {
        (features, None)
    };

    let logits = params.head.apply(&updated);
    let probs = softmax_rows(&logits);
    let mut ce = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        // log p = logit - logsumexp, computed stably from the logits
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        ce += lse - row[y];
    }
    ce /= n as f64;

    let (aux_loss, aux_pairs) = match (&semantic, cfg.aux_weight > 0.0) {
        (Some(sem), true) => {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 0..n {
                for j in (i + 1)..n {
                    if !structure.mask.get(i, j) {
                        continue;
                    }
                    let raw = sem.raw[[i, j]];
                    // BCE(sigmoid(raw), y) = softplus(raw) - y * raw
                    let y = if labels[i] == labels[j] { 1.0 } else { 0.0 };
                    total += softplus(raw) - y * raw;
                    pairs += 1;
                }
            }
            let mean = if pairs > 0 { total / pairs as f64 } else { 0.0 };
            (cfg.aux_weight * mean, pairs)
        }
        _ => (0.0, 0),
    };

    let loss = ce + aux_loss;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((
        loss,
        Tape {
            cfg: cfg.clone(),
            structure,
            semantic,
            gcn,
            updated,
            probs,
            labels,
            aux_pairs,
            ce_loss: ce,
            aux_loss,
        },
    ))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Exact gradients of the loss recorded on `tape`.
pub fn backward(tape: &Tape, params: &Params) -> Result<Params> {
    let n = tape.labels.len();
    let mut grads = params.zeros_like();

    let mut d_logits = tape.probs.clone();
    for (i, &y) in tape.labels.iter().enumerate() {
        d_logits[[i, y]] -= 1.0;
    }
    d_logits.mapv_inplace(|v| v / n as f64);
    grads.head.weight = tape.updated.t().dot(&d_logits);
    grads.head.bias = d_logits.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_updated = d_logits.dot(&params.head.weight.t());

    // gradient w.r.t. the raw semantic inner products, symmetric
    let mut d_raw: Option<Array2<f64>> = None;

    if let Some(gtape) = &tape.gcn {
        if tape.cfg.soft() {
            let (g, d_vals) = gcn_backward_with_laplacian(gtape, &d_updated)?;
            grads.gcn.weights = g.weights;
            let edge_g = laplacian_edge_grads(gtape, &tape.structure.fused, &d_vals);
            let sem = tape.semantic.as_ref().expect("soft edges need semantic scores");
            let m = d_raw.get_or_insert_with(|| Array2::zeros((n, n)));
            for (&(i, j), &g) in tape.structure.fused.edges().iter().zip(&edge_g) {
                let s = sem.scores.get(i, j);
                let v = g * s * (1.0 - s);
                m[[i, j]] += v;
                m[[j, i]] += v;
            }
        } else {
            grads.gcn.weights = gcn_backward(gtape, &d_updated)?.weights;
        }
    }

    if tape.aux_pairs > 0 {
        let sem = tape.semantic.as_ref().expect("aux term needs semantic scores");
        let scale = tape.cfg.aux_weight / tape.aux_pairs as f64;
        let m = d_raw.get_or_insert_with(|| Array2::zeros((n, n)));
        for i in 0..n {
            for j in (i + 1)..n {
                if !tape.structure.mask.get(i, j) {
                    continue;
                }
                let y = if tape.labels[i] == tape.labels[j] { 1.0 } else { 0.0 };
                let s = crate::init::sigmoid(sem.raw[[i, j]]);
                let v = scale * (s - y);
                m[[i, j]] += v;
                m[[j, i]] += v;
            }
        }
    }

    if let Some(m) = d_raw {
        let sem = tape.semantic.as_ref().expect("checked above");
        let d_latent = m.dot(&sem.latent);
        grads.encoder.layers = params.encoder.backward(&sem.cache, &d_latent);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_scene(seed: u64) -> Scene {
        let cfg = SceneConfig {
            num_classes: 3,
            clusters_per_class: 2,
            regions_per_cluster: 3,
            feature_dim: 6,
            ..SceneConfig::default()
        };
        generate_scene(&cfg, seed).unwrap()
    }

    fn params(seed: u64) -> Params {
        Params::init(&mut ChaCha8Rng::seed_from_u64(seed), 6, 3, 2, DEFAULT_SLOPE).unwrap()
    }

    #[test]
    fn zero_logits_give_log_c() {
        let scene = small_scene(1);
        let mut p = params(0);
        p.head.weight.fill(0.0);
        for mode in Mode::ALL {
            let cfg = ModelConfig { mode, ..ModelConfig::default() };
            let (loss, _) = forward_loss(&scene, &p, &cfg, None).unwrap();
            assert!((loss - 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gcn_matches_baseline() {
        let scene = small_scene(2);
        let mut p = params(1);
        p.gcn.weights.iter_mut().for_each(|w| w.fill(0.0));
        let base = forward_loss(&scene, &p, &ModelConfig { mode: Mode::Baseline, ..Default::default() }, None)
            .unwrap()
            .0;
        let full = forward_loss(&scene, &p, &ModelConfig::default(), None).unwrap().0;
        assert_eq!(base, full);
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let scene = small_scene(3);
        let p = params(2);
        let cfg = ModelConfig { graph: GraphConfig { k: 3, ..Default::default() }, ..Default::default() };
        let (a, _) = forward_loss(&scene, &p, &cfg, None).unwrap();
        let perm: Vec<usize> = (0..scene.len()).rev().collect();
        let (b, _) = forward_loss(&scene.permuted(&perm), &p, &cfg, None).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mode_parsing() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        assert!("nope".parse::<Mode>().is_err());
    }

    #[test]
    fn baseline_has_no_graph() {
        let scene = small_scene(4);
        let cfg = ModelConfig { mode: Mode::Baseline, ..Default::default() };
        let (_, tape) = forward_loss(&scene, &params(0), &cfg, None).unwrap();
        assert_eq!(tape.structure().fused.num_edges(), 0);
        assert!(tape.activation_pattern().is_empty());
    }
}
