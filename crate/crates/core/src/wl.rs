//! 1-WL color refinement.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WLColoring {
    /// Color id per node, contiguous from 0.
    pub colors: Vec<usize>,
    /// Number of rounds that refined the partition.
    pub rounds_to_stable: usize,
    /// Count of nodes per color id.
    pub histogram: BTreeMap<usize, usize>,
}

impl WLColoring {
    pub fn num_colors(&self) -> usize {
        self.histogram.len()
    }
}

/// Renames arbitrary keys to dense ids in ascending key order.
fn canonical_ids<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let order: BTreeSet<&K> = keys.iter().collect();
    let index: BTreeMap<&K, usize> = order.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
    keys.iter().map(|k| index[k]).collect()
}

/// Initial colors derived from node feature rows, compared bitwise.
pub fn feature_colors(g: &Graph) -> Vec<usize> {
    let rows: Vec<Vec<u64>> = (0..g.num_nodes())
        .map(|i| {
            g.node_features()
                .row(i)
                .iter()
                .map(|v| v.to_bits())
                .collect()
        })
        .collect();
    canonical_ids(&rows)
}

fn histogram(colors: &[usize]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for &c in colors {
        *h.entry(c).or_insert(0) += 1;
    }
    h
}

/// Refines until the color partition stops splitting.
///
/// Each round a node's signature is its own color followed by the sorted
/// colors of its neighbors; new ids follow the sorted order of signatures,
/// so the result does not depend on node numbering.
pub fn wl_refine(g: &Graph, initial_colors: Option<&[usize]>) -> Result<WLColoring> {
    let n = g.num_nodes();
    let mut colors = match initial_colors {
        Some(c) if c.len() != n => {
            return Err(Error::contract(format!(
                "initial colors cover {} nodes, graph has {n}",
                c.len()
            )))
        }
        Some(c) => canonical_ids(c),
        None => vec![0; n],
    };
    let neighbors = g.neighbors();
    let mut classes = colors.iter().collect::<BTreeSet<_>>().len();
    let mut rounds = 0;
    loop {
        let signatures: Vec<(usize, Vec<usize>)> = (0..n)
            .map(|v| {
                let mut nb: Vec<usize> = neighbors[v].iter().map(|&u| colors[u]).collect();
                nb.sort_unstable();
                (colors[v], nb)
            })
            .collect();
        let next = canonical_ids(&signatures);
        let next_classes = next.iter().collect::<BTreeSet<_>>().len();
        colors = next;
        if next_classes == classes {
            break;
        }
        classes = next_classes;
        rounds += 1;
    }
    Ok(WLColoring {
        histogram: histogram(&colors),
        colors,
        rounds_to_stable: rounds,
    })
}

/// Whether 1-WL tells the graphs apart, refined jointly on their disjoint union.
pub fn wl_distinguishable(g1: &Graph, g2: &Graph) -> Result<bool> {
    let (h1, h2) = joint_histograms(g1, g2)?;
    Ok(h1 != h2)
}

/// Stable color histograms of both graphs under a shared color naming.
pub fn joint_histograms(
    g1: &Graph,
    g2: &Graph,
) -> Result<(BTreeMap<usize, usize>, BTreeMap<usize, usize>)> {
    let union = g1.disjoint_union(g2)?;
    let coloring = wl_refine(&union, None)?;
    let (a, b) = coloring.colors.split_at(g1.num_nodes());
    Ok((histogram(a), histogram(b)))
}
