use relgraph::graph::GraphConfig;
use relgraph::scene::{generate_scene, SceneConfig};
use relgraph::train::{train, ModelConfig, Mode, TrainConfig};

#[test]
fn loss_decreases_over_the_first_hundred_iterations() {
    let cfg = SceneConfig { clusters_per_class: 2, regions_per_cluster: 6, ..SceneConfig::default() };
    let scenes: Vec<_> = (0..24).map(|s| generate_scene(&cfg, s).unwrap()).collect();
    for mode in Mode::ALL {
        let model = ModelConfig { mode, graph: GraphConfig { k: 6, ..GraphConfig::default() }, ..ModelConfig::default() };
        for seed in 0..5 {
            let tc = TrainConfig { iterations: 101, batch_size: 4, log_every: 100, seed, ..TrainConfig::default() };
            let curve = train(&scenes, &model, &tc).unwrap().curve;
            assert_eq!(curve.len(), 2);
            assert_eq!(curve[1].iter, 100);
            assert!(
                curve[1].loss < curve[0].loss,
                "{mode} seed {seed}: {} -> {}",
                curve[0].loss,
                curve[1].loss
            );
        }
    }
}

#[test]
fn modes_share_initialization_and_batches() {
    let cfg = SceneConfig { clusters_per_class: 1, regions_per_cluster: 4, ..SceneConfig::default() };
    let scenes: Vec<_> = (0..6).map(|s| generate_scene(&cfg, s).unwrap()).collect();
    let tc = TrainConfig { iterations: 1, batch_size: 2, log_every: 1, seed: 9, ..TrainConfig::default() };
    let first: Vec<_> = Mode::ALL
        .into_iter()
        .map(|mode| {
            let model = ModelConfig { mode, ..ModelConfig::default() };
            train(&scenes, &model, &TrainConfig { iterations: 0, ..tc.clone() }).unwrap().params
        })
        .collect();
    for p in &first[1..] {
        assert_eq!(p, &first[0]);
    }
}
