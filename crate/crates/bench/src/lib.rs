//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relgraph::graph::GraphConfig;
use relgraph::scene::{generate_scene, Scene, SceneConfig};
use relgraph::train::{ModelConfig, Mode, Params};

/// A scene of `4 * clusters * 16` regions with `dim`-dimensional features.
pub fn scene(clusters: usize, dim: usize) -> Scene {
    let cfg = SceneConfig {
        clusters_per_class: clusters,
        regions_per_cluster: 16,
        feature_dim: dim,
        ..SceneConfig::default()
    };
    generate_scene(&cfg, 1).expect("valid fixture config")
}

pub fn params(dim: usize) -> Params {
    Params::init(&mut ChaCha8Rng::seed_from_u64(0), dim, 4, 2, 0.01).expect("valid fixture params")
}

pub fn model(k: usize) -> ModelConfig {
    ModelConfig {
        mode: Mode::Full,
        graph: GraphConfig { k, ..GraphConfig::default() },
        ..ModelConfig::default()
    }
}
