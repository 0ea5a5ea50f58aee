//! Intrinsic relationship reasoning over region proposals.
//!
//! Two sparse graphs are built over the regions of a scene: a semantic graph
//! from a learned encoder's pairwise feature affinity and a spatial layout
//! graph from box shape similarity and center distance. Their union drives a
//! small graph convolutional network whose output is added back onto the
//! region features before classification.
//!
//! ```
//! use relgraph::prelude::*;
//!
//! let scene = generate_scene(&SceneConfig::default(), 7).unwrap();
//! let cfg = GraphConfig { k: 8, ..GraphConfig::default() };
//! let spatial = build_spatial_graph(&scene.boxes(), &cfg).unwrap();
//! assert_eq!(spatial.num_nodes(), scene.len());
//! ```

pub mod checkpoint;
pub mod error;
pub mod gcn;
pub mod geometry;
pub mod graph;
mod init;
pub mod scene;
pub mod semantic;
pub mod spatial;
pub mod train;

pub use error::{Error, Result};
pub use init::fan_uniform;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod prelude {
    pub use crate::gcn::{
        combinatorial_laplacian, gcn_backward, gcn_forward, normalized_laplacian, GcnGrads, GcnParams,
        GcnTape, NormalizedLaplacian,
    };
    pub use crate::geometry::{center_distance, distance_weight, iou, shape_similarity, BBox};
    pub use crate::graph::{
        fuse_graphs, overlap_mask, select_rows, symmetrize, topk_select, Adjacency, GraphConfig,
        OverlapMask, ScoreMatrix,
    };
    pub use crate::scene::{generate_scene, load_scene, save_scene, Scene, SceneConfig};
    pub use crate::semantic::{build_semantic_graph, semantic_scores, SemanticEncoder};
    pub use crate::spatial::{build_spatial_graph, spatial_scores};
    pub use crate::train::{
        evaluate, finite_diff_check, forward_loss, sgd_step, train, Metrics, ModelConfig, Mode, Params,
        TrainConfig,
    };
    pub use crate::{Error, Result};
}
