//! Graph data model, corpus ingestion and node permutations.
//!
//! Graphs are simple and undirected. Edges are stored once as `(min, max)`
//! pairs in lexicographic order so structurally identical ingests compare
//! equal. Missing task labels are encoded as `NaN`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Sentinel for a missing task label.
pub const MISSING_LABEL: f64 = f64::NAN;

pub fn is_missing(label: f64) -> bool {
    label.is_nan()
}

/// Counts of entries dropped while canonicalizing edge lists.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub self_loops_dropped: usize,
    pub duplicate_edges_dropped: usize,
}

impl IngestStats {
    fn absorb(&mut self, other: IngestStats) {
        self.self_loops_dropped += other.self_loops_dropped;
        self.duplicate_edges_dropped += other.duplicate_edges_dropped;
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_features: Matrix,
    edge_features: Option<Matrix>,
    labels: Vec<f64>,
}

impl Graph {
    /// Validates and canonicalizes a graph. Self-loops and repeated edges are
    /// dropped (the first occurrence keeps its edge features); when
    /// `node_features` is absent every node gets the scalar feature 1.
    pub fn from_parts(
        num_nodes: usize,
        edges: &[(usize, usize)],
        node_features: Option<Matrix>,
        edge_features: Option<Matrix>,
        labels: Vec<f64>,
    ) -> Result<(Graph, IngestStats)> {
        let node_features = match node_features {
            Some(f) => {
                if f.rows() != num_nodes {
                    return Err(Error::contract(format!(
                        "node_features has {} rows but graph has {} nodes",
                        f.rows(),
                        num_nodes
                    )));
                }
                f
            }
            None => Matrix::filled(num_nodes, 1, 1.0),
        };
        if let Some(ef) = &edge_features {
            if ef.rows() != edges.len() {
                return Err(Error::contract(format!(
                    "edge_features has {} rows but {} edges were given",
                    ef.rows(),
                    edges.len()
                )));
            }
        }

        let mut stats = IngestStats::default();
        let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (idx, &(a, b)) in edges.iter().enumerate() {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::contract(format!(
                    "edge {idx} ({a}, {b}) references a node >= {num_nodes}"
                )));
            }
            if a == b {
                stats.self_loops_dropped += 1;
                continue;
            }
            let key = (a.min(b), a.max(b));
            if seen.contains_key(&key) {
                stats.duplicate_edges_dropped += 1;
                continue;
            }
            seen.insert(key, idx);
        }
        if stats.self_loops_dropped + stats.duplicate_edges_dropped > 0 {
            log::warn!(
                "dropped {} self-loops and {} duplicate edges",
                stats.self_loops_dropped,
                stats.duplicate_edges_dropped
            );
        }

        let canonical: Vec<(usize, usize)> = seen.keys().copied().collect();
        let edge_features = edge_features.map(|ef| {
            let mut out = Matrix::zeros(canonical.len(), ef.cols());
            for (row, src) in seen.values().enumerate() {
                out.row_mut(row).copy_from_slice(ef.row(*src));
            }
            out
        });

        Ok((
            Graph {
                num_nodes,
                edges: canonical,
                node_features,
                edge_features,
                labels,
            },
            stats,
        ))
    }

    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        node_features: Option<Matrix>,
        edge_features: Option<Matrix>,
        labels: Vec<f64>,
    ) -> Result<Graph> {
        Self::from_parts(num_nodes, edges, node_features, edge_features, labels).map(|(g, _)| g)
    }

    /// Structure-only graph with default features and no labels.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Graph> {
        Self::new(num_nodes, edges, None, None, Vec::new())
    }

    pub fn cycle(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges).expect("cycle is valid")
    }

    pub fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges).expect("path is valid")
    }

    pub fn complete(n: usize) -> Graph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j));
            }
        }
        Self::from_edges(n, &edges).expect("complete graph is valid")
    }

    /// Star with node 0 as the center and `leaves` leaves.
    pub fn star(leaves: usize) -> Graph {
        let edges: Vec<_> = (1..=leaves).map(|i| (0, i)).collect();
        Self::from_edges(leaves + 1, &edges).expect("star is valid")
    }

    /// Disjoint union; node features must share a width. Labels are taken from `self`.
    pub fn disjoint_union(&self, other: &Graph) -> Result<Graph> {
        if self.feature_dim() != other.feature_dim() {
            return Err(Error::contract(
                "disjoint union of graphs with different feature widths",
            ));
        }
        let n = self.num_nodes;
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|&(a, b)| (a + n, b + n)));
        let mut feats = self.node_features.clone().into_vec();
        feats.extend_from_slice(other.node_features.as_slice());
        let features = Matrix::from_vec(n + other.num_nodes, self.feature_dim(), feats);
        let edge_features = match (&self.edge_features, &other.edge_features) {
            (Some(a), Some(b)) if a.cols() == b.cols() => {
                let mut data = a.clone().into_vec();
                data.extend_from_slice(b.as_slice());
                Some(Matrix::from_vec(a.rows() + b.rows(), a.cols(), data))
            }
            (None, None) => None,
            _ => {
                return Err(Error::contract(
                    "disjoint union with mismatched edge features",
                ))
            }
        };
        Graph::new(
            n + other.num_nodes,
            &edges,
            Some(features),
            edge_features,
            self.labels.clone(),
        )
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Graph {
        self.labels = labels;
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_features(&self) -> &Matrix {
        &self.node_features
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn edge_features(&self) -> Option<&Matrix> {
        self.edge_features.as_ref()
    }

    pub fn edge_feature_dim(&self) -> Option<usize> {
        self.edge_features.as_ref().map(Matrix::cols)
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Sorted neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Connected component id per node, numbered by smallest member.
    pub fn connected_components(&self) -> (usize, Vec<usize>) {
        let adj = self.neighbors();
        let mut comp = vec![usize::MAX; self.num_nodes];
        let mut count = 0;
        for start in 0..self.num_nodes {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            comp[start] = count;
            while let Some(v) = stack.pop() {
                for &u in &adj[v] {
                    if comp[u] == usize::MAX {
                        comp[u] = count;
                        stack.push(u);
                    }
                }
            }
            count += 1;
        }
        (count, comp)
    }

    /// SHA-256 over structure, features and edge features (labels excluded).
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_nodes as u64).to_le_bytes());
        h.update((self.edges.len() as u64).to_le_bytes());
        for &(a, b) in &self.edges {
            h.update((a as u64).to_le_bytes());
            h.update((b as u64).to_le_bytes());
        }
        h.update((self.node_features.cols() as u64).to_le_bytes());
        for v in self.node_features.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        if let Some(ef) = &self.edge_features {
            h.update((ef.cols() as u64).to_le_bytes());
            for v in ef.as_slice() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.to_bits() == y.to_bits() || x == y)
}

impl PartialEq for Graph {
    /// Bitwise on reals, so missing labels compare equal to each other.
    fn eq(&self, other: &Self) -> bool {
        self.num_nodes == other.num_nodes
            && self.edges == other.edges
            && self.node_features.cols() == other.node_features.cols()
            && bits_eq(
                self.node_features.as_slice(),
                other.node_features.as_slice(),
            )
            && match (&self.edge_features, &other.edge_features) {
                (None, None) => true,
                (Some(a), Some(b)) => a.cols() == b.cols() && bits_eq(a.as_slice(), b.as_slice()),
                _ => false,
            }
            && bits_eq(&self.labels, &other.labels)
    }
}

/// Dense symmetric 0/1 adjacency with zero diagonal.
pub fn adjacency_matrix(g: &Graph) -> Matrix {
    let n = g.num_nodes();
    let mut a = Matrix::zeros(n, n);
    for &(i, j) in g.edges() {
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    RocAuc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_tasks: usize,
    pub metric: Metric,
    pub ingest_stats: IngestStats,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<Graph>,
        num_tasks: usize,
        metric: Metric,
    ) -> Result<Self> {
        for (i, g) in graphs.iter().enumerate() {
            if g.labels().len() != num_tasks {
                return Err(Error::contract(format!(
                    "graph {i} carries {} labels, dataset has {num_tasks} tasks",
                    g.labels().len()
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            graphs,
            num_tasks,
            metric,
            ingest_stats: IngestStats::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(1, Graph::feature_dim)
    }

    pub fn edge_feature_dim(&self) -> Option<usize> {
        self.graphs.first().and_then(Graph::edge_feature_dim)
    }

    pub fn mean_nodes(&self) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        self.graphs
            .iter()
            .map(|g| g.num_nodes() as f64)
            .sum::<f64>()
            / self.graphs.len() as f64
    }

    /// Class id per graph: the label itself for one task, argmax otherwise.
    pub fn class_labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| class_of(g.labels())).collect()
    }
}

pub(crate) fn class_of(labels: &[f64]) -> usize {
    match labels.len() {
        0 => 0,
        1 => {
            if labels[0].is_nan() {
                0
            } else {
                labels[0].round().max(0.0) as usize
            }
        }
        _ => {
            let mut best = 0;
            for (i, v) in labels.iter().enumerate() {
                if !v.is_nan() && (labels[best].is_nan() || *v > labels[best]) {
                    best = i;
                }
            }
            best
        }
    }
}

// ---------------------------------------------------------------------------
// TU text format

fn read_lines(dir: &Path, file: &str, required: bool) -> Result<Option<Vec<String>>> {
    let path = dir.join(file);
    if !path.exists() {
        if required {
            return Err(Error::ingest(file, "mandatory file is missing"));
        }
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect(),
    ))
}

fn parse_int(file: &str, line_no: usize, s: &str) -> Result<i64> {
    s.trim()
        .parse::<i64>()
        .map_err(|_| Error::ingest(file, format!("line {line_no}: cannot parse integer {s:?}")))
}

fn one_hot(values: &[i64]) -> (Vec<Vec<f64>>, usize) {
    let distinct: BTreeSet<i64> = values.iter().copied().collect();
    let index: BTreeMap<i64, usize> = distinct.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let width = distinct.len();
    let rows = values
        .iter()
        .map(|v| {
            let mut row = vec![0.0; width];
            row[index[v]] = 1.0;
            row
        })
        .collect();
    (rows, width)
}

/// Loads `NAME_*.txt` files from `directory` in the TU benchmark layout.
pub fn load_tu_dataset(directory: impl AsRef<Path>, name: &str) -> Result<Dataset> {
    let dir = directory.as_ref();
    let a_file = format!("{name}_A.txt");
    let ind_file = format!("{name}_graph_indicator.txt");
    let gl_file = format!("{name}_graph_labels.txt");
    let nl_file = format!("{name}_node_labels.txt");
    let el_file = format!("{name}_edge_labels.txt");

    let a_lines = read_lines(dir, &a_file, true)?.unwrap_or_default();
    let ind_lines = read_lines(dir, &ind_file, true)?.unwrap_or_default();
    let gl_lines = read_lines(dir, &gl_file, true)?.unwrap_or_default();
    let nl_lines = read_lines(dir, &nl_file, false)?;
    let el_lines = read_lines(dir, &el_file, false)?;

    let num_graphs = gl_lines.len();
    let total_nodes = ind_lines.len();

    // Graph id and local index for every global node.
    let mut graph_of = Vec::with_capacity(total_nodes);
    let mut local_of = Vec::with_capacity(total_nodes);
    let mut sizes = vec![0usize; num_graphs];
    for (i, line) in ind_lines.iter().enumerate() {
        let gid = parse_int(&ind_file, i + 1, line)?;
        if gid < 1 || gid as usize > num_graphs {
            return Err(Error::ingest(
                &ind_file,
                format!("line {}: graph id {gid} outside 1..={num_graphs}", i + 1),
            ));
        }
        let g = gid as usize - 1;
        graph_of.push(g);
        local_of.push(sizes[g]);
        sizes[g] += 1;
    }

    let node_feats: Vec<Vec<f64>> = match &nl_lines {
        Some(lines) => {
            if lines.len() != total_nodes {
                return Err(Error::ingest(
                    &nl_file,
                    format!("{} lines but {total_nodes} nodes", lines.len()),
                ));
            }
            let vals = lines
                .iter()
                .enumerate()
                .map(|(i, l)| parse_int(&nl_file, i + 1, l))
                .collect::<Result<Vec<_>>>()?;
            one_hot(&vals).0
        }
        None => vec![vec![1.0]; total_nodes],
    };
    let feat_dim = node_feats.first().map_or(1, Vec::len);

    let edge_feats: Option<Vec<Vec<f64>>> = match &el_lines {
        Some(lines) => {
            if lines.len() != a_lines.len() {
                return Err(Error::ingest(
                    &el_file,
                    format!(
                        "{} lines but {} adjacency entries",
                        lines.len(),
                        a_lines.len()
                    ),
                ));
            }
            let vals = lines
                .iter()
                .enumerate()
                .map(|(i, l)| parse_int(&el_file, i + 1, l))
                .collect::<Result<Vec<_>>>()?;
            Some(one_hot(&vals).0)
        }
        None => None,
    };
    let edge_dim = edge_feats.as_ref().and_then(|e| e.first().map(Vec::len));

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    let mut edge_rows: Vec<Vec<f64>> = vec![Vec::new(); num_graphs];
    let mut pair_seen: Vec<BTreeMap<(usize, usize), u8>> = vec![BTreeMap::new(); num_graphs];
    let mut stats = IngestStats::default();
    for (i, line) in a_lines.iter().enumerate() {
        let line_no = i + 1;
        let mut parts = line.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::ingest(
                &a_file,
                format!("line {line_no}: expected `row, col`"),
            ));
        };
        let a = parse_int(&a_file, line_no, a)?;
        let b = parse_int(&a_file, line_no, b)?;
        for v in [a, b] {
            if v < 1 || v as usize > total_nodes {
                return Err(Error::ingest(
                    &a_file,
                    format!(
                        "line {line_no}: dangling node index {v} (nodes are 1..={total_nodes})"
                    ),
                ));
            }
        }
        let (a, b) = (a as usize - 1, b as usize - 1);
        let g = graph_of[a];
        if graph_of[b] != g {
            return Err(Error::ingest(
                &a_file,
                format!(
                    "line {line_no}: edge joins nodes of graphs {} and {}",
                    g + 1,
                    graph_of[b] + 1
                ),
            ));
        }
        let (la, lb) = (local_of[a], local_of[b]);
        // TU lists both directions of every undirected edge.
        let key = (la.min(lb), la.max(lb));
        let directed = if la <= lb { 1u8 } else { 2u8 };
        let entry = pair_seen[g].entry(key).or_insert(0);
        if *entry & directed != 0 {
            stats.duplicate_edges_dropped += 1;
            continue;
        }
        let first = *entry == 0;
        *entry |= directed;
        if !first {
            continue;
        }
        edges[g].push((la, lb));
        if let Some(ef) = &edge_feats {
            edge_rows[g].extend_from_slice(&ef[i]);
        }
    }

    let raw_labels = gl_lines
        .iter()
        .enumerate()
        .map(|(i, l)| parse_int(&gl_file, i + 1, l))
        .collect::<Result<Vec<_>>>()?;
    let classes: BTreeSet<i64> = raw_labels.iter().copied().collect();
    let class_index: BTreeMap<i64, usize> =
        classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let num_classes = classes.len();
    let num_tasks = if num_classes <= 2 { 1 } else { num_classes };

    let mut feats_by_graph: Vec<Vec<f64>> = vec![Vec::new(); num_graphs];
    for (node, row) in node_feats.iter().enumerate() {
        feats_by_graph[graph_of[node]].extend_from_slice(row);
    }

    let mut graphs = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        let class = class_index[&raw_labels[g]];
        let labels = if num_tasks == 1 {
            vec![class as f64]
        } else {
            (0..num_tasks)
                .map(|c| if c == class { 1.0 } else { 0.0 })
                .collect()
        };
        let features = Matrix::from_vec(sizes[g], feat_dim, std::mem::take(&mut feats_by_graph[g]));
        let ef = edge_dim
            .map(|w| Matrix::from_vec(edges[g].len(), w, std::mem::take(&mut edge_rows[g])));
        let (graph, s) = Graph::from_parts(sizes[g], &edges[g], Some(features), ef, labels)
            .map_err(|e| Error::ingest(&a_file, format!("graph {}: {e}", g + 1)))?;
        stats.absorb(s);
        graphs.push(graph);
    }

    let mut ds = Dataset::new(name, graphs, num_tasks, Metric::Accuracy)?;
    ds.ingest_stats = stats;
    Ok(ds)
}

// ---------------------------------------------------------------------------
// JSON graph format

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub num_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_features: Option<Vec<Vec<f64>>>,
    /// `null` marks a missing label.
    #[serde(default)]
    pub labels: Vec<Option<f64>>,
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, what: &str) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::contract(format!("{what} rows have unequal lengths")));
    }
    Ok(Matrix::from_rows(&rows))
}

impl GraphRecord {
    pub fn from_graph(g: &Graph) -> Self {
        Self {
            num_nodes: g.num_nodes(),
            edges: g.edges().iter().map(|&(a, b)| [a, b]).collect(),
            node_features: Some(g.node_features().to_rows()),
            edge_features: g.edge_features().map(Matrix::to_rows),
            labels: g
                .labels()
                .iter()
                .map(|&v| (!v.is_nan()).then_some(v))
                .collect(),
        }
    }

    pub fn into_graph(self) -> Result<(Graph, IngestStats)> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let nf = self
            .node_features
            .map(|r| {
                // An empty node list still needs a well-formed 0×d matrix.
                if r.is_empty() {
                    Ok(Matrix::zeros(0, 1))
                } else {
                    rows_to_matrix(r, "node_features")
                }
            })
            .transpose()?;
        let ef = self
            .edge_features
            .map(|r| rows_to_matrix(r, "edge_features"))
            .transpose()?;
        let labels = self
            .labels
            .into_iter()
            .map(|v| v.unwrap_or(MISSING_LABEL))
            .collect();
        Graph::from_parts(self.num_nodes, &edges, nf, ef, labels)
    }
}

pub fn parse_json_graphs(text: &str, name: &str) -> Result<Dataset> {
    let file = format!("{name}.json");
    let values: Vec<serde_json::Value> = serde_json::from_str(text)
        .map_err(|e| Error::ingest(&file, format!("malformed JSON: {e}")))?;
    let mut graphs = Vec::with_capacity(values.len());
    let mut stats = IngestStats::default();
    for (i, v) in values.into_iter().enumerate() {
        let rec: GraphRecord = serde_json::from_value(v)
            .map_err(|e| Error::ingest(&file, format!("object {i}: {e}")))?;
        let (g, s) = rec
            .into_graph()
            .map_err(|e| Error::ingest(&file, format!("object {i}: {e}")))?;
        stats.absorb(s);
        graphs.push(g);
    }
    let num_tasks = graphs.first().map_or(0, |g| g.labels().len());
    if let Some(i) = graphs.iter().position(|g| g.labels().len() != num_tasks) {
        return Err(Error::ingest(
            &file,
            format!("object {i}: expected {num_tasks} labels like object 0"),
        ));
    }
    let mut ds = Dataset::new(name, graphs, num_tasks, Metric::Accuracy)?;
    ds.ingest_stats = stats;
    Ok(ds)
}

/// Reads a JSON array of graph objects.
pub fn load_json_graphs(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("graphs");
    parse_json_graphs(&text, name)
}

pub fn graphs_to_json(graphs: &[Graph]) -> Result<String> {
    let records: Vec<GraphRecord> = graphs.iter().map(GraphRecord::from_graph).collect();
    Ok(serde_json::to_string(&records)?)
}

pub fn save_json_graphs(path: impl AsRef<Path>, graphs: &[Graph]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, graphs_to_json(graphs)?).map_err(|e| Error::io(path, e))
}

/// Loads a corpus: a TU directory (`NAME_A.txt` etc.) or a JSON graph file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if path.is_dir() {
        let name = path.file_name().and_then(|s| s.to_str()).ok_or_else(|| {
            Error::ingest(path.display().to_string(), "cannot derive dataset name")
        })?;
        load_tu_dataset(path, name)
    } else {
        load_json_graphs(path)
    }
}

// ---------------------------------------------------------------------------
// Permutations

/// Bijection on node indices: node `i` moves to position `mapping[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || seen[m] {
                return Err(Error::contract(format!("{mapping:?} is not a permutation")));
            }
            seen[m] = true;
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        Self { mapping }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Permutation { mapping: inv }
    }

    /// Permutation matrix with `P[i][p(i)] = 1`, so `Pᵀ A P` relabels `A`.
    pub fn matrix(&self) -> Matrix {
        let n = self.mapping.len();
        let mut p = Matrix::zeros(n, n);
        for (i, &m) in self.mapping.iter().enumerate() {
            p[(i, m)] = 1.0;
        }
        p
    }
}

/// Relabels nodes through `p`; labels are unchanged.
pub fn permute_graph(g: &Graph, p: &Permutation) -> Result<Graph> {
    if p.len() != g.num_nodes() {
        return Err(Error::contract(format!(
            "permutation of length {} applied to graph with {} nodes",
            p.len(),
            g.num_nodes()
        )));
    }
    let n = g.num_nodes();
    let mut feats = Matrix::zeros(n, g.feature_dim());
    for i in 0..n {
        feats
            .row_mut(p.apply(i))
            .copy_from_slice(g.node_features().row(i));
    }
    let edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .map(|&(a, b)| (p.apply(a), p.apply(b)))
        .collect();
    Graph::new(
        n,
        &edges,
        Some(feats),
        g.edge_features().cloned(),
        g.labels().to_vec(),
    )
}
