//! Synthetic multi-object scenes.
//!
//! A scene is a set of small boxes arranged in per-class spatial clusters,
//! each carrying a feature vector built from a class prototype. Prototypes
//! (feature directions and box shapes) are a property of the configuration,
//! so every scene generated from one [`SceneConfig`] shares the same label
//! semantics; the per-scene seed only drives layout, noise and ambiguity.
//!
//! On disk a scene is line-delimited JSON: a header record followed by one
//! record per region.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{shape_similarity, BBox};

pub const SCHEMA_VERSION: u64 = 1;
pub const DEFAULT_MAX_REGIONS: usize = 4096;

/// Rejection bound on pairwise dot products of feature prototypes.
const PROTOTYPE_MAX_DOT: f64 = 0.3;
/// Rejection bound on pairwise shape similarity of class shapes.
const PROTOTYPE_MAX_SHAPE_SIM: f64 = 0.75;
const PROTOTYPE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// `(width, height)` in pixels.
    pub image_size: (f64, f64),
    pub num_classes: usize,
    pub clusters_per_class: usize,
    pub regions_per_cluster: usize,
    /// Standard deviation of box centers around their cluster center, pixels.
    pub cluster_spread: f64,
    /// Bounds for box width and height, pixels.
    pub size_range: (f64, f64),
    /// Log-scale standard deviation of box extents around the class shape.
    pub shape_jitter: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub ambiguity_fraction: f64,
    /// Seed of the class prototypes shared by every scene of this config.
    pub prototype_seed: u64,
    pub max_regions: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: (1024.0, 1024.0),
            num_classes: 4,
            clusters_per_class: 3,
            regions_per_cluster: 8,
            cluster_spread: 24.0,
            size_range: (8.0, 32.0),
            shape_jitter: 0.08,
            feature_dim: 16,
            feature_noise: 0.3,
            ambiguity_fraction: 0.3,
            prototype_seed: 0,
            max_regions: DEFAULT_MAX_REGIONS,
        }
    }
}

impl SceneConfig {
    pub fn total_regions(&self) -> usize {
        self.num_classes
            .saturating_mul(self.clusters_per_class)
            .saturating_mul(self.regions_per_cluster)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let (iw, ih) = self.image_size;
        if !(iw.is_finite() && ih.is_finite() && iw > 0.0 && ih > 0.0) {
            return bad(format!("image_size must be positive, got {:?}", self.image_size));
        }
        if self.num_classes == 0
            || self.clusters_per_class == 0
            || self.regions_per_cluster == 0
            || self.feature_dim == 0
        {
            return bad("class, cluster, region and feature counts must be >= 1".into());
        }
        let (lo, hi) = self.size_range;
        if !(lo > 0.0 && lo <= hi && hi < iw.min(ih)) {
            return bad(format!(
                "size_range must satisfy 0 < min <= max < min(image_size), got {:?}",
                self.size_range
            ));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return bad("cluster_spread must be finite and >= 0".into());
        }
        if !(self.shape_jitter >= 0.0 && self.shape_jitter.is_finite()) {
            return bad("shape_jitter must be finite and >= 0".into());
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return bad("feature_noise must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.ambiguity_fraction) {
            return bad(format!(
                "ambiguity_fraction must lie in [0, 1], got {}",
                self.ambiguity_fraction
            ));
        }
        if self.ambiguity_fraction > 0.0 && self.num_classes < 2 {
            return bad("ambiguous regions need at least two classes".into());
        }
        let total = self.total_regions();
        if total > self.max_regions {
            return Err(Error::TooManyRegions {
                count: total,
                limit: self.max_regions,
            });
        }
        Ok(())
    }
}

/// Per-class feature direction and box shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub features: Vec<Vec<f64>>,
    pub shapes: Vec<(f64, f64)>,
}

impl Prototypes {
    pub fn for_config(cfg: &SceneConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.prototype_seed);
        let d = cfg.feature_dim;
        let mut features: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes);
        while features.len() < cfg.num_classes {
            let mut accepted = false;
            for _ in 0..PROTOTYPE_ATTEMPTS {
                let v = random_unit(&mut rng, d);
                if features.iter().all(|p| dot(p, &v) < PROTOTYPE_MAX_DOT) {
                    features.push(v);
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                return Err(Error::InvalidConfig(format!(
                    "cannot place {} class prototypes in dimension {d} with pairwise dot < {PROTOTYPE_MAX_DOT}",
                    cfg.num_classes
                )));
            }
        }

        let (lo, hi) = cfg.size_range;
        let mut shapes: Vec<(f64, f64)> = Vec::with_capacity(cfg.num_classes);
        while shapes.len() < cfg.num_classes {
            let mut candidate = (lo, lo);
            for _ in 0..PROTOTYPE_ATTEMPTS {
                candidate = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
                let cb = BBox::new(0.0, 0.0, candidate.0, candidate.1)?;
                let distinct = shapes.iter().all(|&(w, h)| {
                    let other = BBox::new(0.0, 0.0, w, h).expect("validated shape");
                    shape_similarity(&cb, &other) < PROTOTYPE_MAX_SHAPE_SIM
                });
                if distinct {
                    break;
                }
            }
            // A narrow size range may not admit distinct shapes; keep the last draw.
            shapes.push(candidate);
        }
        Ok(Self { features, shapes })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub bbox: BBox,
    pub label: usize,
    /// Feature blended toward another class prototype.
    pub ambiguous: bool,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cfg: SceneConfig,
    pub seed: u64,
    pub regions: Vec<Region>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.cfg.feature_dim
    }

    pub fn boxes(&self) -> Vec<BBox> {
        self.regions.iter().map(|r| r.bbox).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.regions.iter().map(|r| r.label).collect()
    }

    /// `N_r x D` feature matrix.
    pub fn features(&self) -> Array2<f64> {
        let d = self.feature_dim();
        Array2::from_shape_fn((self.len(), d), |(i, j)| self.regions[i].feature[j])
    }

    /// Reorders regions so that new position `k` holds old region `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Scene {
        Scene {
            cfg: self.cfg.clone(),
            seed: self.seed,
            regions: perm.iter().map(|&k| self.regions[k].clone()).collect(),
        }
    }
}

fn random_unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generates one scene. The result is a pure function of `(cfg, seed)`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let protos = Prototypes::for_config(cfg)?;
    generate_with_prototypes(cfg, &protos, seed)
}

/// Like [`generate_scene`] with prototypes computed once by the caller.
pub fn generate_with_prototypes(cfg: &SceneConfig, protos: &Prototypes, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (iw, ih) = cfg.image_size;
    let (lo, hi) = cfg.size_range;
    let margin = 0.5 * hi;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut geometry = Vec::with_capacity(cfg.total_regions());
    for label in 0..cfg.num_classes {
        let (pw, ph) = protos.shapes[label];
        for _ in 0..cfg.clusters_per_class {
            let cx = rng.random_range(margin..=(iw - margin).max(margin));
            let cy = rng.random_range(margin..=(ih - margin).max(margin));
            for _ in 0..cfg.regions_per_cluster {
                let w = (pw * (cfg.shape_jitter * normal(&mut rng)).exp()).clamp(lo, hi);
                let h = (ph * (cfg.shape_jitter * normal(&mut rng)).exp()).clamp(lo, hi);
                let x = (cx + cfg.cluster_spread * normal(&mut rng)).clamp(0.5 * w, iw - 0.5 * w);
                let y = (cy + cfg.cluster_spread * normal(&mut rng)).clamp(0.5 * h, ih - 0.5 * h);
                geometry.push((BBox::new(x, y, w, h)?, label));
            }
        }
    }

    let n = geometry.len();
    let n_ambiguous = (cfg.ambiguity_fraction * n as f64).round() as usize;
    let mut ambiguous = vec![false; n];
    for k in index::sample(&mut rng, n, n_ambiguous.min(n)).into_iter() {
        ambiguous[k] = true;
    }

    let d = cfg.feature_dim;
    let mut regions = Vec::with_capacity(n);
    for (k, (bbox, label)) in geometry.into_iter().enumerate() {
        let own = &protos.features[label];
        let mut feature: Vec<f64> = if ambiguous[k] {
            let mut other = rng.random_range(0..cfg.num_classes - 1);
            if other >= label {
                other += 1;
            }
            let theirs = &protos.features[other];
            (0..d).map(|j| 0.5 * own[j] + 0.5 * theirs[j]).collect()
        } else {
            own.clone()
        };
        if cfg.feature_noise > 0.0 {
            for v in feature.iter_mut() {
                *v += cfg.feature_noise * normal(&mut rng);
            }
        }
        regions.push(Region {
            bbox,
            label,
            ambiguous: ambiguous[k],
            feature,
        });
    }

    Ok(Scene {
        cfg: cfg.clone(),
        seed,
        regions,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u64,
    cfg: SceneConfig,
    seed: u64,
    num_regions: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionRecord {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    label: usize,
    feat: Vec<f64>,
    ambiguous: bool,
}

/// Serializes a scene to its line-delimited JSON text.
pub fn scene_to_string(s: &Scene) -> Result<String> {
    let header = Header {
        schema_version: SCHEMA_VERSION,
        cfg: s.cfg.clone(),
        seed: s.seed,
        num_regions: s.regions.len(),
    };
    let mut out = serde_json::to_string(&header).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    out.push('\n');
    for r in &s.regions {
        let rec = RegionRecord {
            x: r.bbox.x(),
            y: r.bbox.y(),
            w: r.bbox.w(),
            h: r.bbox.h(),
            label: r.label,
            feat: r.feature.clone(),
            ambiguous: r.ambiguous,
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::InvalidConfig(format!("region not serializable: {e}")))?;
        writeln!(out, "{line}").expect("writing to a String cannot fail");
    }
    Ok(out)
}

/// Parses a scene from its line-delimited JSON text.
pub fn scene_from_str(text: &str) -> Result<Scene> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(Error::Malformed {
        line: 1,
        reason: "missing header".into(),
    })?;
    let raw: serde_json::Value = serde_json::from_str(first).map_err(|e| Error::Malformed {
        line: 1,
        reason: e.to_string(),
    })?;
    let version = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or(Error::Malformed {
            line: 1,
            reason: "header lacks schema_version".into(),
        })?;
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::Malformed {
        line: 1,
        reason: e.to_string(),
    })?;
    header.cfg.validate().map_err(|e| Error::Malformed {
        line: 1,
        reason: e.to_string(),
    })?;

    let mut regions = Vec::with_capacity(header.num_regions);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::Malformed {
            line: lineno,
            reason,
        };
        let rec: RegionRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let bbox = BBox::new(rec.x, rec.y, rec.w, rec.h).map_err(|e| malformed(e.to_string()))?;
        if rec.label >= header.cfg.num_classes {
            return Err(malformed(format!("label {} out of range", rec.label)));
        }
        if rec.feat.len() != header.cfg.feature_dim {
            return Err(malformed(format!(
                "feature has {} entries, expected {}",
                rec.feat.len(),
                header.cfg.feature_dim
            )));
        }
        regions.push(Region {
            bbox,
            label: rec.label,
            ambiguous: rec.ambiguous,
            feature: rec.feat,
        });
    }
    if regions.len() != header.num_regions {
        return Err(Error::Malformed {
            line: regions.len() + 2,
            reason: format!(
                "expected {} regions, found {}",
                header.num_regions,
                regions.len()
            ),
        });
    }
    Ok(Scene {
        cfg: header.cfg,
        seed: header.seed,
        regions,
    })
}

pub fn save_scene(s: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let text = scene_to_string(s)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let text = std::fs::read_to_string(path)?;
    scene_from_str(&text)
}
