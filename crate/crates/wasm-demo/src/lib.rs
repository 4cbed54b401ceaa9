//! JSON-in, JSON-out bindings for the static demo page in `www/`.

use patchgt::bottleneck::{node_ratio, patch_ratio, BottleneckInstance, PatchWeights};
use patchgt::graph::GraphRecord;
use patchgt::spectral::{coarse_graph, eigendecompose, normalized_laplacian, segment_with};
use patchgt::wl::{wl_distinguishable, wl_refine};
use patchgt::Graph;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct SegmentView {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    /// Patch pairs joined by at least one edge, `a < b`.
    pub patch_edges: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize)]
pub struct WlView {
    pub distinguishable: bool,
    /// Stable colours under a shared naming, one list per graph.
    pub colors_a: Vec<usize>,
    pub colors_b: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct BottleneckView {
    pub node_ratio: f64,
    pub bound: f64,
    pub violations: usize,
    pub patch_ratio: f64,
}

fn parse_graph(json: &str) -> Result<Graph, String> {
    let record: GraphRecord =
        serde_json::from_str(json).map_err(|e| format!("bad graph JSON: {e}"))?;
    let (g, _) = record.into_graph().map_err(|e| e.to_string())?;
    Ok(g)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

pub fn segment_json(graph: &str, gamma: f64) -> Result<String, String> {
    let g = parse_graph(graph)?;
    let decomp = eigendecompose(&normalized_laplacian(&g)).map_err(|e| e.to_string())?;
    let part = segment_with(&decomp, gamma).map_err(|e| e.to_string())?;
    let coarse = coarse_graph(&g, &part).map_err(|e| e.to_string())?;
    let mut patch_edges = Vec::new();
    for a in 0..part.k {
        for b in a + 1..part.k {
            if coarse.coarse_adjacency[(a, b)] > 0.0 {
                patch_edges.push([a, b]);
            }
        }
    }
    to_json(&SegmentView {
        k: part.k,
        assignment: part.assignment,
        eigenvalues: decomp.eigenvalues,
        patch_edges,
    })
}

pub fn wl_json(a: &str, b: &str) -> Result<String, String> {
    let (ga, gb) = (parse_graph(a)?, parse_graph(b)?);
    let union = ga.disjoint_union(&gb).map_err(|e| e.to_string())?;
    let coloring = wl_refine(&union, None).map_err(|e| e.to_string())?;
    let (ca, cb) = coloring.colors.split_at(ga.num_nodes());
    to_json(&WlView {
        distinguishable: wl_distinguishable(&ga, &gb).map_err(|e| e.to_string())?,
        colors_a: ca.to_vec(),
        colors_b: cb.to_vec(),
    })
}

pub fn bottleneck_json(tau: usize, size: usize, m: usize, layers: usize) -> Result<String, String> {
    let inst = BottleneckInstance {
        tau,
        n_s: size,
        n_t: size,
        m,
        layers,
        epsilon: 1e-3,
        trials: 50,
        feature_dim: 4,
        seed: 0,
    };
    let node = node_ratio(&inst).map_err(|e| e.to_string())?;
    let patch = patch_ratio(&inst, PatchWeights::SizeRatio).map_err(|e| e.to_string())?;
    to_json(&BottleneckView {
        node_ratio: node.ratio,
        bound: node.bound,
        violations: node.violations,
        patch_ratio: patch.ratio,
    })
}

/// Segments one graph given as `{"num_nodes": n, "edges": [[i, j], ...]}`.
#[wasm_bindgen]
pub fn segment_graph(graph: &str, gamma: f64) -> Result<String, JsError> {
    segment_json(graph, gamma).map_err(|e| JsError::new(&e))
}

/// Runs 1-WL on two graphs with a shared colour naming.
#[wasm_bindgen]
pub fn wl_compare(a: &str, b: &str) -> Result<String, JsError> {
    wl_json(a, b).map_err(|e| JsError::new(&e))
}

/// Node and patch sensitivity ratios for one two-cluster regular graph.
#[wasm_bindgen]
pub fn bottleneck_sweep(
    tau: usize,
    size: usize,
    m: usize,
    layers: usize,
) -> Result<String, JsError> {
    bottleneck_json(tau, size, m, layers).map_err(|e| JsError::new(&e))
}
