//! Graphviz export of a scene's region graph.

use std::fmt::Write as _;

use relgraph::graph::Adjacency;
use relgraph::scene::Scene;

use crate::error::{CliError, CliResult};

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

pub fn class_color(label: usize) -> &'static str {
    PALETTE[label % PALETTE.len()]
}

/// Undirected DOT graph over every region. Edges present in both graphs are
/// solid, edges from only one of them dashed.
pub fn to_dot(scene: &Scene, semantic: &Adjacency, spatial: &Adjacency) -> CliResult<String> {
    let n = scene.len();
    if semantic.num_nodes() != n || spatial.num_nodes() != n {
        return Err(CliError::Config(format!(
            "graph sizes {} and {} do not match scene with {n} regions",
            semantic.num_nodes(),
            spatial.num_nodes()
        )));
    }
    let both = semantic.intersection(spatial)?;
    let fused = semantic.union(spatial)?;
    let mut out = String::new();
    let _ = writeln!(out, "graph scene_{} {{", scene.seed);
    let _ = writeln!(out, "  node [shape=circle, style=filled, fontsize=8];");
    for (i, r) in scene.regions.iter().enumerate() {
        let b = &r.bbox;
        let _ = writeln!(
            out,
            "  n{i} [label=\"{i}\", class={}, ambiguous={}, fillcolor=\"{}\", pos=\"{},{}!\"];",
            r.label,
            r.ambiguous,
            class_color(r.label),
            b.x(),
            -b.y()
        );
    }
    for &(i, j) in fused.edges() {
        let style = if both.contains(i, j) { "solid" } else { "dashed" };
        let _ = writeln!(out, "  n{i} -- n{j} [style={style}];");
    }
    out.push_str("}\n");
    Ok(out)
}
