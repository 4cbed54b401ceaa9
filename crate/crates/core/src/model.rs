//! PatchGT forward computation.
//!
//! Node GNN over the whole graph, per-patch readout, a GNN over the coarse
//! patch graph, and a learnable query token that attends over the patch
//! embeddings before a linear prediction head.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::spectral::{coarse_graph, PatchPartition};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnKind {
    Gcn,
    Gin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Coordinatewise max scaled by the patch's share of nodes.
    MaxWeighted,
    Sum,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchGTConfig {
    pub gamma: f64,
    pub gnn_kind: GnnKind,
    /// Node-level GNN layers.
    pub l1: usize,
    /// Patch-level GNN layers.
    pub l2: usize,
    /// Query-token attention layers.
    pub l3: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub readout: Readout,
    pub mha_scale_by_k: bool,
    pub attention_dropout: f64,
    pub embedding_dropout: f64,
    /// Restricts node message passing to edges inside a patch.
    pub per_patch_gnn: bool,
    pub num_tasks: usize,
    pub node_feature_dim: usize,
    /// Edge feature width; 0 when edges carry no features.
    #[serde(default)]
    pub edge_feature_dim: usize,
    /// Starts the query token at zero instead of a small normal draw.
    #[serde(default)]
    pub zero_query_init: bool,
    /// When false the query-token stage is replaced by a mean over patches.
    #[serde(default = "default_true")]
    pub use_transformer: bool,
}

impl Default for PatchGTConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            gnn_kind: GnnKind::Gcn,
            l1: 4,
            l2: 2,
            l3: 2,
            hidden_dim: 64,
            heads: 4,
            readout: Readout::MaxWeighted,
            mha_scale_by_k: false,
            attention_dropout: 0.0,
            embedding_dropout: 0.0,
            per_patch_gnn: false,
            num_tasks: 1,
            node_feature_dim: 1,
            edge_feature_dim: 0,
            zero_query_init: false,
            use_transformer: true,
        }
    }
}

impl PatchGTConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            ));
        }
        for (name, r) in [
            ("attention_dropout", self.attention_dropout),
            ("embedding_dropout", self.embedding_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return fail(format!("{name} = {r} is outside [0, 1)"));
            }
        }
        if self.use_transformer && self.l3 == 0 {
            return fail("the query-token stage needs l3 >= 1".into());
        }
        if self.use_transformer
            && self.l1 + self.l2 == 0
            && !self.node_feature_dim.is_multiple_of(self.heads)
        {
            return fail(format!(
                "without GNN layers the feature width {} must be a multiple of heads {}",
                self.node_feature_dim, self.heads
            ));
        }
        if self.num_tasks == 0 || self.node_feature_dim == 0 {
            return fail("num_tasks and node_feature_dim must be positive".into());
        }
        if !self.gamma.is_finite() {
            return fail(format!("gamma {} is not finite", self.gamma));
        }
        Ok(())
    }

    /// Copies feature widths and task count from a corpus.
    pub fn fit_to(mut self, data: &crate::graph::Dataset) -> Self {
        self.node_feature_dim = data.feature_dim();
        self.edge_feature_dim = data.edge_feature_dim().unwrap_or(0);
        self.num_tasks = data.num_tasks;
        self
    }
}

// ---------------------------------------------------------------------------
// Parameters

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Xavier,
    Zero,
    Query,
}

#[derive(Debug, Clone)]
enum GnnIdx {
    Gcn {
        w1: usize,
        w2: usize,
        w3: Option<usize>,
    },
    Gin {
        eps: usize,
        w1: usize,
        b1: usize,
        w2: usize,
        b2: usize,
    },
}

#[derive(Debug, Clone)]
struct PoolIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    m1w: usize,
    m1b: usize,
    m2w: usize,
    m2b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    node: Vec<GnnIdx>,
    patch: Vec<GnnIdx>,
    pool: Vec<PoolIdx>,
    query: usize,
    ln_w: usize,
    ln_b: usize,
    head_w: usize,
    head_b: usize,
}

struct LayoutBuilder {
    specs: Vec<(String, usize, usize, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push((name, rows, cols, init));
        self.specs.len() - 1
    }

    fn gnn(
        &mut self,
        prefix: &str,
        kind: GnnKind,
        input: usize,
        d: usize,
        edge_dim: usize,
    ) -> GnnIdx {
        match kind {
            GnnKind::Gcn => GnnIdx::Gcn {
                w1: self.add(format!("{prefix}.w1"), d, input, Init::Xavier),
                w2: self.add(format!("{prefix}.w2"), d, input, Init::Xavier),
                w3: (edge_dim > 0)
                    .then(|| self.add(format!("{prefix}.w3"), d, edge_dim, Init::Xavier)),
            },
            GnnKind::Gin => GnnIdx::Gin {
                eps: self.add(format!("{prefix}.eps"), 1, 1, Init::Zero),
                w1: self.add(format!("{prefix}.mlp1.w"), d, input, Init::Xavier),
                b1: self.add(format!("{prefix}.mlp1.b"), 1, d, Init::Zero),
                w2: self.add(format!("{prefix}.mlp2.w"), d, d, Init::Xavier),
                b2: self.add(format!("{prefix}.mlp2.b"), 1, d, Init::Zero),
            },
        }
    }
}

fn layout(config: &PatchGTConfig) -> (Layout, Vec<(String, usize, usize, Init)>) {
    let d = config.hidden_dim;
    let mut b = LayoutBuilder { specs: Vec::new() };
    let mut node = Vec::new();
    let mut width = config.node_feature_dim;
    for l in 0..config.l1 {
        let edge_dim = if config.gnn_kind == GnnKind::Gcn {
            config.edge_feature_dim
        } else {
            0
        };
        node.push(b.gnn(&format!("node.{l}"), config.gnn_kind, width, d, edge_dim));
        width = d;
    }
    let mut patch = Vec::new();
    for l in 0..config.l2 {
        patch.push(b.gnn(&format!("patch.{l}"), config.gnn_kind, width, d, 0));
        width = d;
    }
    // Without node or patch layers the readout width is the raw feature width.
    let pool_width = width;
    let mut pool = Vec::new();
    if config.use_transformer {
        for l in 0..config.l3 {
            let p = format!("pool.{l}");
            pool.push(PoolIdx {
                wq: b.add(format!("{p}.wq"), pool_width, pool_width, Init::Xavier),
                wk: b.add(format!("{p}.wk"), pool_width, pool_width, Init::Xavier),
                wv: b.add(format!("{p}.wv"), pool_width, pool_width, Init::Xavier),
                wo: b.add(format!("{p}.wo"), pool_width, pool_width, Init::Xavier),
                m1w: b.add(format!("{p}.mlp1.w"), pool_width, pool_width, Init::Xavier),
                m1b: b.add(format!("{p}.mlp1.b"), 1, pool_width, Init::Zero),
                m2w: b.add(format!("{p}.mlp2.w"), pool_width, pool_width, Init::Xavier),
                m2b: b.add(format!("{p}.mlp2.b"), 1, pool_width, Init::Zero),
            });
        }
    }
    let query_init = if config.zero_query_init {
        Init::Zero
    } else {
        Init::Query
    };
    let query = b.add("query".into(), 1, pool_width, query_init);
    let ln_w = b.add("ln.w".into(), d, pool_width, Init::Xavier);
    let ln_b = b.add("ln.b".into(), 1, d, Init::Zero);
    let head_w = b.add("head.w".into(), config.num_tasks, d, Init::Xavier);
    let head_b = b.add("head.b".into(), 1, config.num_tasks, Init::Zero);
    (
        Layout {
            node,
            patch,
            pool,
            query,
            ln_w,
            ln_b,
            head_w,
            head_b,
        },
        b.specs,
    )
}

/// Named learnable tensors in a fixed order derived from the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub names: Vec<String>,
    pub values: Vec<Matrix>,
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases and GIN ε, query token ~ N(0, 0.02²).
    pub fn init<R: Rng + ?Sized>(config: &PatchGTConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (_, specs) = layout(config);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let mut names = Vec::with_capacity(specs.len());
        let mut values = Vec::with_capacity(specs.len());
        for (name, rows, cols, init) in specs {
            let mut m = Matrix::zeros(rows, cols);
            match init {
                Init::Zero => {}
                Init::Xavier => {
                    let bound = (6.0 / (rows + cols) as f64).sqrt();
                    for v in m.as_mut_slice() {
                        *v = rng.random_range(-bound..=bound);
                    }
                }
                Init::Query => {
                    for v in m.as_mut_slice() {
                        *v = normal.sample(rng);
                    }
                }
            }
            names.push(name);
            values.push(m);
        }
        Ok(Self { names, values })
    }

    /// A generic parameter draw: [`ModelParams::init`] followed by uniform
    /// biases and GIN ε in ±0.5. Zero biases make every layer positively
    /// homogeneous, which is a measure-zero special case.
    pub fn random<R: Rng + ?Sized>(config: &PatchGTConfig, rng: &mut R) -> Result<Self> {
        let mut params = Self::init(config, rng)?;
        for (name, m) in params.names.iter().zip(params.values.iter_mut()) {
            if name.ends_with(".b") || name.ends_with(".eps") {
                for v in m.as_mut_slice() {
                    *v = rng.random_range(-0.5..0.5);
                }
            }
        }
        Ok(params)
    }

    /// Checks names and shapes against the configuration.
    pub fn check(&self, config: &PatchGTConfig) -> Result<()> {
        let (_, specs) = layout(config);
        if specs.len() != self.values.len() || self.names.len() != self.values.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.values.len()
            )));
        }
        for ((name, rows, cols, _), (have, m)) in
            specs.iter().zip(self.names.iter().zip(&self.values))
        {
            if name != have || m.shape() != (*rows, *cols) {
                return Err(Error::contract(format!(
                    "parameter {have} {:?} does not match expected {name} ({rows}, {cols})",
                    m.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index_of(name).map(|i| &mut self.values[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.as_slice().len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Matrix> {
        self.values
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Inputs

/// Per-graph constants the forward pass needs, precomputed once per partition.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub features: Matrix,
    /// Node adjacency used for message passing (within-patch only in per-patch mode).
    pub adjacency: Matrix,
    /// Row `i` sums the features of edges incident to node `i`.
    pub edge_aggregate: Option<Matrix>,
    pub partition: PatchPartition,
    pub coarse_adjacency: Matrix,
}

impl GraphInput {
    pub fn new(g: &Graph, part: &PatchPartition, per_patch_gnn: bool) -> Result<Self> {
        let pg = coarse_graph(g, part)?;
        let n = g.num_nodes();
        let mut adjacency = Matrix::zeros(n, n);
        let mut agg = g.edge_features().map(|e| Matrix::zeros(n, e.cols()));
        for (idx, &(i, j)) in g.edges().iter().enumerate() {
            if per_patch_gnn && part.assignment[i] != part.assignment[j] {
                continue;
            }
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
            if let (Some(agg), Some(e)) = (agg.as_mut(), g.edge_features()) {
                for (c, &v) in e.row(idx).iter().enumerate() {
                    agg[(i, c)] += v;
                    agg[(j, c)] += v;
                }
            }
        }
        Ok(Self {
            features: g.node_features().clone(),
            adjacency,
            edge_aggregate: agg,
            partition: part.clone(),
            coarse_adjacency: pg.coarse_adjacency,
        })
    }
}

// ---------------------------------------------------------------------------
// Forward

/// Dropout source; `None` evaluates deterministically.
pub type DropoutRng<'a> = Option<&'a mut dyn rand::RngCore>;

/// Attention weights indexed `[layer][head][patch]`.
pub type AttentionWeights = Vec<Vec<Vec<f64>>>;

pub struct ForwardOutput {
    pub logits: Var,
    pub attention: AttentionWeights,
    /// Parameter leaves on the tape, in [`ModelParams`] order.
    pub params: Vec<Var>,
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut DropoutRng<'_>) -> Result<Var> {
    let Some(rng) = rng.as_mut() else {
        return Ok(x);
    };
    if rate == 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.shape(x);
    let keep = 1.0 / (1.0 - rate);
    let data = (0..r * c)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    tape.mask_mul(x, Matrix::from_vec(r, c, data))
}

/// One message-passing layer:
/// `σ(H W1ᵀ + A H W2ᵀ + M W3ᵀ)` for GCN, `σ(MLP((1+ε)H + A H))` for GIN.
fn gnn_layer(
    tape: &mut Tape,
    p: &[Var],
    idx: &GnnIdx,
    a: Var,
    edge_agg: Option<Var>,
    h: Var,
) -> Result<Var> {
    match *idx {
        GnnIdx::Gcn { w1, w2, w3 } => {
            let own = tape.matmul_t(h, p[w1])?;
            let msg = tape.matmul_t(h, p[w2])?;
            let nb = tape.matmul(a, msg)?;
            let mut sum = tape.add(own, nb)?;
            if let (Some(w3), Some(e)) = (w3, edge_agg) {
                let edge = tape.matmul_t(e, p[w3])?;
                sum = tape.add(sum, edge)?;
            }
            Ok(tape.relu(sum))
        }
        GnnIdx::Gin {
            eps,
            w1,
            b1,
            w2,
            b2,
        } => {
            let one = tape.constant(Matrix::filled(1, 1, 1.0));
            let factor = tape.add(one, p[eps])?;
            let own = tape.scale_by(h, factor)?;
            let nb = tape.matmul(a, h)?;
            let x = tape.add(own, nb)?;
            let hidden = tape.linear(x, p[w1], Some(p[b1]))?;
            let hidden = tape.relu(hidden);
            let out = tape.linear(hidden, p[w2], Some(p[b2]))?;
            Ok(tape.relu(out))
        }
    }
}

/// Multi-head attention of one query row over keys and values `z`.
fn mha(
    tape: &mut Tape,
    p: &[Var],
    idx: &PoolIdx,
    heads: usize,
    q: Var,
    z: Var,
    attention_dropout: f64,
    rng: &mut DropoutRng<'_>,
) -> Result<(Var, Vec<Vec<f64>>)> {
    let d = tape.shape(z).1;
    let dk = d / heads;
    let qp = tape.matmul_t(q, p[idx.wq])?;
    let kp = tape.matmul_t(z, p[idx.wk])?;
    let vp = tape.matmul_t(z, p[idx.wv])?;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (s, e) = (h * dk, (h + 1) * dk);
        let qh = tape.slice_cols(qp, s, e)?;
        let kh = tape.slice_cols(kp, s, e)?;
        let vh = tape.slice_cols(vp, s, e)?;
        let logits = tape.matmul_t(qh, kh)?;
        let logits = tape.scale(logits, 1.0 / (dk as f64).sqrt());
        let att = tape.softmax_last(logits)?;
        weights.push(tape.value(att).row(0).to_vec());
        let att = dropout(tape, att, attention_dropout, rng)?;
        outs.push(tape.matmul(att, vh)?);
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    Ok((tape.matmul_t(cat, p[idx.wo])?, weights))
}

/// Multi-head attention of a single query row over `z` with explicit
/// projections, outside any model. Returns the output row and per-head weights.
pub fn mha_eval(
    q: &Matrix,
    z: &Matrix,
    projections: [&Matrix; 4],
    heads: usize,
) -> Result<(Matrix, Vec<Vec<f64>>)> {
    let d = z.cols();
    if heads == 0 || !d.is_multiple_of(heads) || q.shape() != (1, d) {
        return Err(Error::contract(
            "query must be 1×d with d divisible by heads",
        ));
    }
    for w in projections {
        if w.shape() != (d, d) {
            return Err(Error::contract("attention projections must be d×d"));
        }
    }
    let mut tape = Tape::new();
    let p: Vec<Var> = projections
        .iter()
        .map(|w| tape.constant((*w).clone()))
        .collect();
    let idx = PoolIdx {
        wq: 0,
        wk: 1,
        wv: 2,
        wo: 3,
        m1w: 0,
        m1b: 0,
        m2w: 0,
        m2b: 0,
    };
    let qv = tape.constant(q.clone());
    let zv = tape.constant(z.clone());
    let (out, weights) = mha(&mut tape, &p, &idx, heads, qv, zv, 0.0, &mut None)?;
    Ok((tape.value(out).clone(), weights))
}

/// Records the full forward pass on `tape`.
pub fn forward_on_tape(
    tape: &mut Tape,
    input: &GraphInput,
    config: &PatchGTConfig,
    params: &ModelParams,
    rng: DropoutRng<'_>,
) -> Result<ForwardOutput> {
    params.check(config)?;
    let p: Vec<Var> = params
        .values
        .iter()
        .map(|m| tape.param(m.clone()))
        .collect();
    forward_with_vars(tape, input, config, p, rng)
}

/// Forward pass over parameter leaves already on the tape, in [`ModelParams`] order.
pub fn forward_with_vars(
    tape: &mut Tape,
    input: &GraphInput,
    config: &PatchGTConfig,
    p: Vec<Var>,
    mut rng: DropoutRng<'_>,
) -> Result<ForwardOutput> {
    let (lay, specs) = layout(config);
    if p.len() != specs.len() {
        return Err(Error::contract(format!(
            "expected {} parameter leaves, got {}",
            specs.len(),
            p.len()
        )));
    }
    let n = input.features.rows();
    if input.partition.num_nodes() != n || input.adjacency.shape() != (n, n) {
        return Err(Error::contract(
            "graph input and partition disagree on node count",
        ));
    }
    if input.features.cols() != config.node_feature_dim {
        return Err(Error::contract(format!(
            "graph has {} node features, model expects {}",
            input.features.cols(),
            config.node_feature_dim
        )));
    }
    let a = tape.constant(input.adjacency.clone());
    let edge_agg = match (&input.edge_aggregate, config.edge_feature_dim) {
        (Some(e), dim) if dim > 0 => {
            if e.cols() != dim {
                return Err(Error::contract(format!(
                    "graph has {} edge features, model expects {dim}",
                    e.cols()
                )));
            }
            Some(tape.constant(e.clone()))
        }
        _ => None,
    };
    let mut h = tape.constant(input.features.clone());
    for idx in &lay.node {
        h = gnn_layer(tape, &p, idx, a, edge_agg, h)?;
    }

    let part = &input.partition;
    let mut z = match config.readout {
        Readout::MaxWeighted => {
            let m = tape.segment_max(h, &part.assignment, part.k)?;
            let factors: Vec<f64> = part
                .patch_sizes
                .iter()
                .map(|&s| s as f64 / n as f64)
                .collect();
            tape.scale_rows(m, &factors)?
        }
        Readout::Sum => tape.segment_sum(h, &part.assignment, part.k)?,
    };
    z = dropout(tape, z, config.embedding_dropout, &mut rng)?;

    let coarse = tape.constant(input.coarse_adjacency.clone());
    for idx in &lay.patch {
        z = gnn_layer(tape, &p, idx, coarse, None, z)?;
    }

    let mut attention = Vec::new();
    let pooled = if config.use_transformer {
        let mut q = p[lay.query];
        for idx in &lay.pool {
            let (mut qp, w) = mha(
                tape,
                &p,
                idx,
                config.heads,
                q,
                z,
                config.attention_dropout,
                &mut rng,
            )?;
            attention.push(w);
            if config.mha_scale_by_k {
                qp = tape.scale(qp, part.k as f64);
            }
            let hidden = tape.linear(qp, p[idx.m1w], Some(p[idx.m1b]))?;
            let hidden = tape.relu(hidden);
            let mlp = tape.linear(hidden, p[idx.m2w], Some(p[idx.m2b]))?;
            q = tape.add(mlp, q)?;
        }
        q
    } else {
        let total = tape.segment_sum(z, &vec![0; part.k], 1)?;
        tape.scale(total, 1.0 / part.k as f64)
    };
    let g = tape.linear(pooled, p[lay.ln_w], Some(p[lay.ln_b]))?;
    let logits = tape.linear(g, p[lay.head_w], Some(p[lay.head_b]))?;
    Ok(ForwardOutput {
        logits,
        attention,
        params: p,
    })
}

/// Evaluation-mode logits and attention weights for one graph.
pub fn forward_detailed(
    g: &Graph,
    part: &PatchPartition,
    config: &PatchGTConfig,
    params: &ModelParams,
) -> Result<(Vec<f64>, AttentionWeights)> {
    let input = GraphInput::new(g, part, config.per_patch_gnn)?;
    let mut tape = Tape::new();
    let out = forward_on_tape(&mut tape, &input, config, params, None)?;
    Ok((tape.value(out.logits).row(0).to_vec(), out.attention))
}

/// Evaluation-mode logits, one per task.
pub fn forward(
    g: &Graph,
    part: &PatchPartition,
    config: &PatchGTConfig,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    forward_detailed(g, part, config, params).map(|(l, _)| l)
}

/// Attention export for one graph: patch assignment plus `[layer][head][patch]` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub patch_assignment: Vec<usize>,
    pub attention: AttentionWeights,
    pub logits: Vec<f64>,
}

pub fn export_attention(
    g: &Graph,
    part: &PatchPartition,
    config: &PatchGTConfig,
    params: &ModelParams,
) -> Result<AttentionExport> {
    let (logits, attention) = forward_detailed(g, part, config, params)?;
    Ok(AttentionExport {
        patch_assignment: part.assignment.clone(),
        attention,
        logits,
    })
}

/// DOT rendering of the coarse graph; node labels carry the attention
/// each patch received, averaged over heads of the last layer.
pub fn coarse_graph_dot(
    part: &PatchPartition,
    coarse_adjacency: &Matrix,
    attention: &AttentionWeights,
) -> String {
    let mut mean = vec![0.0; part.k];
    if let Some(last) = attention.last() {
        for head in last {
            for (m, w) in mean.iter_mut().zip(head) {
                *m += w / last.len() as f64;
            }
        }
    }
    let mut out = String::from("graph patches {\n");
    for (p, (&size, w)) in part.patch_sizes.iter().zip(&mean).enumerate() {
        out.push_str(&format!(
            "  p{p} [label=\"patch {p}\\nsize {size}\\nattn {w:.4}\"];\n"
        ));
    }
    for i in 0..part.k {
        for j in i..part.k {
            if coarse_adjacency[(i, j)] > 0.0 {
                out.push_str(&format!("  p{i} -- p{j};\n"));
            }
        }
    }
    out.push_str("}\n");
    out
}

/// Parameter counts per name prefix, for reporting.
pub fn parameter_summary(params: &ModelParams) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (name, m) in params.names.iter().zip(&params.values) {
        let prefix = name.split('.').next().unwrap_or(name).to_string();
        *out.entry(prefix).or_insert(0) += m.as_slice().len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_gcn(l1: usize, l2: usize) -> PatchGTConfig {
        PatchGTConfig {
            l1,
            l2,
            l3: 1,
            hidden_dim: 1,
            heads: 1,
            ..PatchGTConfig::default()
        }
    }

    fn set(params: &mut ModelParams, name: &str, rows: &[Vec<f64>]) {
        *params.get_mut(name).unwrap_or_else(|| panic!("{name}")) = Matrix::from_rows(rows);
    }

    fn run_layer(config: &PatchGTConfig, params: &ModelParams, a: Matrix, h: Matrix) -> Matrix {
        let (lay, _) = layout(config);
        let mut tape = Tape::new();
        let p: Vec<Var> = params
            .values
            .iter()
            .map(|m| tape.param(m.clone()))
            .collect();
        let a = tape.constant(a);
        let h = tape.constant(h);
        let out = gnn_layer(&mut tape, &p, &lay.node[0], a, None, h).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn gcn_layer_examples() {
        let config = scalar_gcn(1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::init(&config, &mut rng).unwrap();
        set(&mut params, "node.0.w1", &[vec![1.0]]);
        set(&mut params, "node.0.w2", &[vec![1.0]]);
        let path = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let h = Matrix::from_rows(&[vec![1.0], vec![2.0]]);
        assert_eq!(
            run_layer(&config, &params, path.clone(), h.clone()).as_slice(),
            &[3.0, 3.0]
        );
        assert_eq!(
            run_layer(&config, &params, Matrix::zeros(2, 2), h.clone()).as_slice(),
            &[1.0, 2.0]
        );
        set(&mut params, "node.0.w1", &[vec![0.0]]);
        set(&mut params, "node.0.w2", &[vec![0.0]]);
        assert_eq!(run_layer(&config, &params, path, h).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn gin_layer_examples() {
        let config = PatchGTConfig {
            gnn_kind: GnnKind::Gin,
            ..scalar_gcn(1, 0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::init(&config, &mut rng).unwrap();
        assert_eq!(params.get("node.0.eps").unwrap().as_slice(), &[0.0]);
        set(&mut params, "node.0.mlp1.w", &[vec![1.0]]);
        set(&mut params, "node.0.mlp2.w", &[vec![1.0]]);
        let path = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let h = Matrix::from_rows(&[vec![1.0], vec![2.0]]);
        assert_eq!(
            run_layer(&config, &params, path.clone(), h.clone()).as_slice(),
            &[3.0, 3.0]
        );
        let iso = run_layer(
            &config,
            &params,
            Matrix::zeros(1, 1),
            Matrix::from_rows(&[vec![4.0]]),
        );
        assert_eq!(iso.as_slice(), &[4.0]);
        set(&mut params, "node.0.mlp1.w", &[vec![0.0]]);
        set(&mut params, "node.0.mlp2.w", &[vec![0.0]]);
        assert_eq!(run_layer(&config, &params, path, h).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        let bad = PatchGTConfig {
            hidden_dim: 10,
            heads: 4,
            ..PatchGTConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = PatchGTConfig {
            attention_dropout: 1.0,
            ..PatchGTConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(PatchGTConfig::default().validate().is_ok());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let config = PatchGTConfig::default();
        let a = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let w = a.get("node.1.w1").unwrap();
        let bound = (6.0f64 / 128.0).sqrt();
        assert!(w.as_slice().iter().all(|v| v.abs() <= bound));
        assert!(a.get("ln.b").unwrap().as_slice().iter().all(|&v| v == 0.0));
        a.check(&config).unwrap();
    }
}
