//! Spatial layout graph from box shape similarity and center distance.

use ndarray::Array2;

use crate::error::{check_dim, Result};
use crate::geometry::{center_distance, distance_weight, shape_similarity, BBox};
use crate::graph::{overlap_mask, topk_select, Adjacency, GraphConfig, OverlapMask, ScoreMatrix};

/// `s_ij = mask_ij * shape_similarity(i, j) * exp(-lambda * dist(i, j))`.
pub fn spatial_scores(boxes: &[BBox], cfg: &GraphConfig, mask: &OverlapMask) -> Result<ScoreMatrix> {
    let n = boxes.len();
    check_dim("mask size", n, mask.len())?;
    let mut s = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if !mask.get(i, j) {
                continue;
            }
            let (a, b) = (&boxes[i], &boxes[j]);
            let v = shape_similarity(a, b) * distance_weight(center_distance(a, b), cfg.lambda);
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
    }
    Ok(ScoreMatrix(s))
}

pub fn build_spatial_graph(boxes: &[BBox], cfg: &GraphConfig) -> Result<Adjacency> {
    let mask = overlap_mask(boxes, cfg.overlap_threshold);
    let scores = spatial_scores(boxes, cfg, &mask)?;
    Ok(topk_select(&scores, cfg.k))
}
