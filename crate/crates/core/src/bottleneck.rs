//! Perturbation experiments on two-cluster regular graphs.
//!
//! A τ-regular graph is split into clusters `S` and `T` joined by `m` edges.
//! The node-level ratio compares how much a perturbation on `S` moves the GNN
//! outputs on `T` against a perturbation on `T` itself. The patch-level ratio
//! repeats the comparison after pooling each cluster into one patch and
//! applying one GNN layer on the two-patch graph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{adjacency_matrix, Graph};
use crate::matrix::Matrix;
use crate::seed::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckInstance {
    pub tau: usize,
    pub n_s: usize,
    pub n_t: usize,
    pub m: usize,
    pub layers: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl BottleneckInstance {
    /// `2mL/|T|`.
    pub fn bound(&self) -> f64 {
        node_ratio_bound(self.m, self.layers, self.n_t)
    }

    pub fn graph(&self) -> Result<Graph> {
        build_two_cluster_regular(self.tau, self.n_s, self.n_t, self.m)
    }
}

pub fn node_ratio_bound(m: usize, layers: usize, n_t: usize) -> f64 {
    2.0 * m as f64 * layers as f64 / n_t as f64
}

/// Parity requirement for one cluster: `τ·n − m` must be even.
fn cluster_parity(tau: usize, n: usize, m: usize) -> Option<String> {
    ((tau * n) % 2 != m % 2).then(|| {
        format!("tau*n - m = {tau}*{n} - {m} is odd, so a cluster of {n} nodes cannot reach degree {tau} with {m} cut edges")
    })
}

/// Edges of one cluster on nodes `offset..offset+n`: every node has degree `τ`
/// except nodes `offset..offset+m`, which have `τ − 1`.
fn cluster_edges(tau: usize, n: usize, m: usize, offset: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = std::collections::BTreeSet::new();
    let add = |a: usize,
               b: usize,
               edges: &mut std::collections::BTreeSet<(usize, usize)>|
     -> Result<()> {
        let e = (a.min(b), a.max(b));
        if a == b || !edges.insert(e) {
            return Err(Error::Infeasible(format!(
                "circulant construction repeats edge {e:?} for tau={tau}, n={n}, m={m}"
            )));
        }
        Ok(())
    };
    let half = tau / 2;
    for i in 0..n {
        for s in 1..=half {
            add(i, (i + s) % n, &mut edges)?;
        }
    }
    if tau % 2 == 1 {
        if n.is_multiple_of(2) {
            for i in 0..n / 2 {
                add(i, i + n / 2, &mut edges)?;
            }
        } else {
            // Nodes m..n pair up across half the remaining range.
            let span = (n - m) / 2;
            for j in m..m + span {
                add(j, j + span, &mut edges)?;
            }
        }
    }
    if tau.is_multiple_of(2) || n.is_multiple_of(2) {
        // Drop a matching among the first m nodes to free one degree each.
        for i in 0..m / 2 {
            let e = (2 * i, 2 * i + 1);
            if !edges.remove(&e) {
                return Err(Error::Infeasible(format!(
                    "matching edge {e:?} missing for tau={tau}, n={n}"
                )));
            }
        }
    }
    Ok(edges
        .into_iter()
        .map(|(a, b)| (a + offset, b + offset))
        .collect())
}

/// τ-regular graph on `S = 0..nS` and `T = nS..nS+nT` with exactly `m` cut edges.
pub fn build_two_cluster_regular(tau: usize, n_s: usize, n_t: usize, m: usize) -> Result<Graph> {
    let mut problems = Vec::new();
    if tau == 0 {
        problems.push("tau must be at least 1".to_string());
    }
    if m > n_s.min(n_t) {
        problems.push(format!("m = {m} exceeds min(|S|, |T|) = {}", n_s.min(n_t)));
    }
    for (name, n) in [("S", n_s), ("T", n_t)] {
        if n <= tau {
            problems.push(format!("|{name}| = {n} is too small for degree {tau}"));
        }
        if let Some(p) = cluster_parity(tau, n, m) {
            problems.push(format!("{name}: {p}"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Infeasible(problems.join("; ")));
    }
    let mut edges = cluster_edges(tau, n_s, m, 0)?;
    edges.extend(cluster_edges(tau, n_t, m, n_s)?);
    edges.extend((0..m).map(|i| (i, n_s + i)));
    let g = Graph::from_edges(n_s + n_t, &edges)?;

    let degrees = g.degrees();
    if let Some((v, d)) = degrees.iter().enumerate().find(|(_, &d)| d != tau) {
        return Err(Error::Infeasible(format!(
            "degree audit failed: node {v} has degree {d}, expected {tau}"
        )));
    }
    let cut = cut_size(&g, n_s);
    if cut != m {
        return Err(Error::Infeasible(format!(
            "cut audit failed: {cut} edges cross, expected {m}"
        )));
    }
    Ok(g)
}

/// Number of edges with exactly one endpoint below `n_s`.
pub fn cut_size(g: &Graph, n_s: usize) -> usize {
    g.edges()
        .iter()
        .filter(|&&(a, b)| (a < n_s) != (b < n_s))
        .count()
}

// ---------------------------------------------------------------------------
// GNN propagation

/// Weights for one layer of `σ(H W1ᵀ + A H W2ᵀ)`.
#[derive(Debug, Clone)]
struct LayerWeights {
    w1: Matrix,
    w2: Matrix,
}

/// Random weights with every column scaled to unit L1 norm, so `‖W‖₁→₁ = 1`.
fn random_unit_columns<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    let mut w = Matrix::zeros(d, d);
    for v in w.as_mut_slice() {
        *v = rng.random_range(-1.0..1.0);
    }
    for j in 0..d {
        let norm: f64 = (0..d).map(|i| w[(i, j)].abs()).sum();
        for i in 0..d {
            w[(i, j)] /= norm;
        }
    }
    w
}

/// Largest column L1 norm.
pub fn induced_l1_norm(w: &Matrix) -> f64 {
    (0..w.cols())
        .map(|j| (0..w.rows()).map(|i| w[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn propagate(a: &Matrix, x: &Matrix, layers: &[LayerWeights]) -> Matrix {
    let mut h = x.clone();
    for l in layers {
        let mut next = h.matmul_t(&l.w1);
        next.add_assign(&a.matmul(&h).matmul_t(&l.w2));
        h = next.map(|v| v.max(0.0));
    }
    h
}

/// `Σ_{i∈rows} ‖out_i − base_i‖₁`.
fn l1_change(out: &Matrix, base: &Matrix, rows: std::ops::Range<usize>) -> f64 {
    rows.map(|i| {
        out.row(i)
            .iter()
            .zip(base.row(i))
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    })
    .sum()
}

fn perturbed(
    x: &Matrix,
    rows: std::ops::Range<usize>,
    delta: impl Fn(usize, usize) -> f64,
) -> Matrix {
    let mut out = x.clone();
    for i in rows {
        for j in 0..x.cols() {
            out[(i, j)] += delta(i, j);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRatioReport {
    pub ratio: f64,
    pub bound: f64,
    /// Largest response on `T` to a perturbation on `S`.
    pub numerator: f64,
    /// Largest response on `T` to a perturbation on `T`.
    pub denominator: f64,
    /// Response of the identity-weight construction to `β = ε` on `T`.
    pub identity_denominator: f64,
    /// Trials whose numerator over the denominator exceeds the bound.
    pub violations: usize,
    /// Random `β` draws with zero response, excluded from the denominator.
    pub discarded: usize,
    pub trials: usize,
}

/// Response on `T` of the identity-weight GNN to `β = ε` on every entry of `T`.
pub fn identity_response(inst: &BottleneckInstance) -> Result<f64> {
    let g = inst.graph()?;
    let a = adjacency_matrix(&g);
    let d = inst.feature_dim;
    let id = LayerWeights {
        w1: Matrix::identity(d),
        w2: Matrix::identity(d),
    };
    let layers = vec![id; inst.layers];
    let mut rng = stream(&[inst.seed, 0]);
    let n = g.num_nodes();
    let x = Matrix::from_vec(
        n,
        d,
        (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect(),
    );
    let t = inst.n_s..n;
    let base = propagate(&a, &x, &layers);
    let out = propagate(&a, &perturbed(&x, t.clone(), |_, _| inst.epsilon), &layers);
    Ok(l1_change(&out, &base, t))
}

/// Sampled estimate of the node-level ratio `δ_{S→T} / δ_{T→T}`.
pub fn node_ratio(inst: &BottleneckInstance) -> Result<NodeRatioReport> {
    let g = inst.graph()?;
    let a = adjacency_matrix(&g);
    let n = g.num_nodes();
    let d = inst.feature_dim;
    let s = 0..inst.n_s;
    let t = inst.n_s..n;
    let trial = |k: usize| -> (f64, f64) {
        let mut rng = stream(&[inst.seed, 1, k as u64]);
        let layers: Vec<LayerWeights> = (0..inst.layers)
            .map(|_| LayerWeights {
                w1: random_unit_columns(d, &mut rng),
                w2: random_unit_columns(d, &mut rng),
            })
            .collect();
        let x = Matrix::from_vec(
            n,
            d,
            (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect(),
        );
        let signs: Vec<f64> = (0..n * d)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let eps = inst.epsilon;
        let base = propagate(&a, &x, &layers);
        let from_s = propagate(
            &a,
            &perturbed(&x, s.clone(), |i, j| eps * signs[i * d + j]),
            &layers,
        );
        let from_t = propagate(
            &a,
            &perturbed(&x, t.clone(), |i, j| eps * signs[i * d + j]),
            &layers,
        );
        (
            l1_change(&from_s, &base, t.clone()),
            l1_change(&from_t, &base, t.clone()),
        )
    };
    #[cfg(feature = "parallel")]
    let samples: Vec<(f64, f64)> = {
        use rayon::prelude::*;
        (0..inst.trials).into_par_iter().map(trial).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let samples: Vec<(f64, f64)> = (0..inst.trials).map(trial).collect();

    let identity = identity_response(inst)?;
    let discarded = samples.iter().filter(|(_, b)| *b == 0.0).count();
    if discarded > 0 {
        log::info!(
            "{discarded} of {} trials had a zero T response and were discarded",
            inst.trials
        );
    }
    let denominator = samples.iter().map(|(_, b)| *b).fold(identity, f64::max);
    if denominator == 0.0 {
        return Err(Error::Numeric {
            message: "every perturbation of T left T unchanged".into(),
            residual: 0.0,
        });
    }
    let numerator = samples.iter().map(|(a, _)| *a).fold(0.0, f64::max);
    let bound = inst.bound();
    let violations = samples
        .iter()
        .filter(|(a, _)| a / denominator > bound + 1e-9)
        .count();
    Ok(NodeRatioReport {
        ratio: numerator / denominator,
        bound,
        numerator,
        denominator,
        identity_denominator: identity,
        violations,
        discarded,
        trials: inst.trials,
    })
}

// ---------------------------------------------------------------------------
// Patch level

/// How the two coarse-graph weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchWeights {
    /// `W1 = (|S|/|T|)·I`, `W2 = I`.
    SizeRatio,
    /// `W1 = c·I`, `W2 = I` with `c` solving for equal responses, which also
    /// accounts for signal that leaks across the cut.
    Calibrated,
    /// Explicit scalar multiples of the identity.
    Scalars { w1: f64, w2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRatioReport {
    pub ratio: f64,
    pub eta_s_to_t: f64,
    pub eta_t_to_t: f64,
    pub w1: f64,
    pub w2: f64,
}

/// `η_{S→T} / η_{T→T}` for identity node layers, mean-pooled patches and one
/// coarse layer `g_T = σ(z_T W1ᵀ + z_S W2ᵀ)`.
pub fn patch_ratio(inst: &BottleneckInstance, weights: PatchWeights) -> Result<PatchRatioReport> {
    let g = inst.graph()?;
    let a = adjacency_matrix(&g);
    let n = g.num_nodes();
    let d = inst.feature_dim;
    let id = LayerWeights {
        w1: Matrix::identity(d),
        w2: Matrix::identity(d),
    };
    let layers = vec![id; inst.layers];
    let mut rng = stream(&[inst.seed, 2]);
    let x = Matrix::from_vec(
        n,
        d,
        (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect(),
    );
    let (s, t) = (0..inst.n_s, inst.n_s..n);
    let pool = |h: &Matrix, rows: std::ops::Range<usize>| -> Vec<f64> {
        let mut z = vec![0.0; d];
        for i in rows {
            for (zj, v) in z.iter_mut().zip(h.row(i)) {
                *zj += v / n as f64;
            }
        }
        z
    };
    let eps = inst.epsilon;
    let base = propagate(&a, &x, &layers);
    let from_s = propagate(&a, &perturbed(&x, s.clone(), |_, _| eps), &layers);
    let from_t = propagate(&a, &perturbed(&x, t.clone(), |_, _| eps), &layers);
    let (zs, zt) = (pool(&base, s.clone()), pool(&base, t.clone()));
    let shift = |h: &Matrix| -> (f64, f64) {
        let ds: f64 = pool(h, s.clone()).iter().zip(&zs).map(|(a, b)| a - b).sum();
        let dt: f64 = pool(h, t.clone()).iter().zip(&zt).map(|(a, b)| a - b).sum();
        (ds, dt)
    };
    let (s_alpha, t_alpha) = shift(&from_s);
    let (s_beta, t_beta) = shift(&from_t);
    let (w1, w2) = match weights {
        PatchWeights::SizeRatio => (inst.n_s as f64 / inst.n_t as f64, 1.0),
        PatchWeights::Calibrated => {
            let denom = t_beta - t_alpha;
            if denom <= 0.0 {
                return Err(Error::Numeric {
                    message: "perturbing T moved z_T no more than perturbing S".into(),
                    residual: denom,
                });
            }
            ((s_alpha - s_beta) / denom, 1.0)
        }
        PatchWeights::Scalars { w1, w2 } => (w1, w2),
    };
    // Coarse layer with scalar-identity weights on nonnegative inputs.
    let g_t = |dz_s: &[f64], dz_t: &[f64]| -> Vec<f64> {
        zt.iter()
            .zip(&zs)
            .zip(dz_t.iter().zip(dz_s))
            .map(|((t, s), (dt, ds))| (w1 * (t + dt) + w2 * (s + ds)).max(0.0))
            .collect()
    };
    let diff = |h: &Matrix| -> Vec<(f64, f64)> {
        pool(h, s.clone())
            .iter()
            .zip(&zs)
            .zip(pool(h, t.clone()).iter().zip(&zt))
            .map(|((a, b), (c, e))| (a - b, c - e))
            .collect()
    };
    let eta = |h: &Matrix| -> f64 {
        let dz = diff(h);
        let ds: Vec<f64> = dz.iter().map(|p| p.0).collect();
        let dt: Vec<f64> = dz.iter().map(|p| p.1).collect();
        let zero = vec![0.0; d];
        g_t(&ds, &dt)
            .iter()
            .zip(g_t(&zero, &zero))
            .map(|(a, b)| (a - b).abs())
            .sum()
    };
    let eta_s_to_t = eta(&from_s);
    let eta_t_to_t = eta(&from_t);
    if eta_t_to_t == 0.0 {
        return Err(Error::Numeric {
            message: "zero response of T to its own perturbation".into(),
            residual: 0.0,
        });
    }
    Ok(PatchRatioReport {
        ratio: eta_s_to_t / eta_t_to_t,
        eta_s_to_t,
        eta_t_to_t,
        w1,
        w2,
    })
}

// ---------------------------------------------------------------------------
// Grid

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BottleneckGrid {
    pub taus: Vec<usize>,
    pub ms: Vec<usize>,
    pub layers: Vec<usize>,
    /// Cluster sizes; `|S| = |T|`.
    pub sizes: Vec<usize>,
    pub epsilon: f64,
    pub trials: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for BottleneckGrid {
    fn default() -> Self {
        Self {
            taus: vec![2, 3, 4],
            ms: vec![2, 4],
            layers: vec![2, 3, 5],
            sizes: vec![10, 20],
            epsilon: 1e-3,
            trials: 200,
            feature_dim: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub instance: BottleneckInstance,
    pub node: NodeRatioReport,
    pub patch: PatchRatioReport,
    pub patch_calibrated: PatchRatioReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedInstance {
    pub tau: usize,
    pub size: usize,
    pub m: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckReport {
    pub grid: BottleneckGrid,
    pub instances: Vec<InstanceReport>,
    pub skipped: Vec<SkippedInstance>,
    pub total_trials: usize,
    pub total_violations: usize,
    /// Mean node ratio per cut size, in grid order.
    pub mean_ratio_by_m: Vec<(usize, f64)>,
    pub limitation: String,
}

pub fn run_grid(grid: &BottleneckGrid) -> Result<BottleneckReport> {
    if grid.trials == 0 || grid.feature_dim == 0 || !(grid.epsilon > 0.0) {
        return Err(Error::Config(
            "bottleneck grid needs trials, feature_dim and epsilon > 0".into(),
        ));
    }
    let mut instances = Vec::new();
    let mut skipped = Vec::new();
    let mut index = 0u64;
    for &tau in &grid.taus {
        for &m in &grid.ms {
            for &size in &grid.sizes {
                if let Err(e) = build_two_cluster_regular(tau, size, size, m) {
                    skipped.push(SkippedInstance {
                        tau,
                        size,
                        m,
                        reason: e.to_string(),
                    });
                    continue;
                }
                for &layers in &grid.layers {
                    let inst = BottleneckInstance {
                        tau,
                        n_s: size,
                        n_t: size,
                        m,
                        layers,
                        epsilon: grid.epsilon,
                        trials: grid.trials,
                        feature_dim: grid.feature_dim,
                        seed: crate::seed::derive_seed(&[grid.seed, index]),
                    };
                    index += 1;
                    let node = node_ratio(&inst)?;
                    let patch = patch_ratio(&inst, PatchWeights::SizeRatio)?;
                    let patch_calibrated = patch_ratio(&inst, PatchWeights::Calibrated)?;
                    instances.push(InstanceReport {
                        instance: inst,
                        node,
                        patch,
                        patch_calibrated,
                    });
                }
            }
        }
    }
    let mean_ratio_by_m = grid
        .ms
        .iter()
        .filter_map(|&m| {
            let rs: Vec<f64> = instances
                .iter()
                .filter(|r| r.instance.m == m)
                .map(|r| r.node.ratio)
                .collect();
            (!rs.is_empty()).then(|| (m, rs.iter().sum::<f64>() / rs.len() as f64))
        })
        .collect();
    Ok(BottleneckReport {
        total_trials: instances.iter().map(|r| r.node.trials).sum(),
        total_violations: instances.iter().map(|r| r.node.violations).sum(),
        instances,
        skipped,
        mean_ratio_by_m,
        grid: grid.clone(),
        limitation:
            "random search lower-bounds both maxima; it can confirm the bound is not violated \
                     on the sampled parameters but says nothing about how tight it is"
                .into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(tau: usize, n: usize, m: usize, layers: usize) -> BottleneckInstance {
        BottleneckInstance {
            tau,
            n_s: n,
            n_t: n,
            m,
            layers,
            epsilon: 1e-3,
            trials: 50,
            feature_dim: 4,
            seed: 7,
        }
    }

    #[test]
    fn construction_examples() {
        let g = build_two_cluster_regular(2, 6, 6, 0).unwrap();
        let (count, _) = g.connected_components();
        assert_eq!(count, 2);
        assert_eq!(g.num_edges(), 12);
        let g = build_two_cluster_regular(3, 8, 8, 2).unwrap();
        assert!(g.degrees().iter().all(|&d| d == 3));
        assert_eq!(cut_size(&g, 8), 2);
        let g = build_two_cluster_regular(3, 9, 9, 1).unwrap();
        assert!(g.degrees().iter().all(|&d| d == 3));
        assert_eq!(cut_size(&g, 9), 1);
    }

    #[test]
    fn parity_violation_is_reported() {
        match build_two_cluster_regular(3, 10, 10, 1) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("odd"), "{msg}"),
            other => panic!("expected infeasible, got {other:?}"),
        }
        assert!(build_two_cluster_regular(2, 10, 10, 1).is_err());
        assert!(build_two_cluster_regular(4, 4, 4, 0).is_err());
        assert!(build_two_cluster_regular(2, 6, 6, 8).is_err());
    }

    #[test]
    fn random_weights_have_unit_induced_norm() {
        let mut rng = stream(&[1]);
        for _ in 0..20 {
            let w = random_unit_columns(5, &mut rng);
            assert!((induced_l1_norm(&w) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_arithmetic() {
        assert!((node_ratio_bound(1, 3, 10) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn disconnected_clusters_give_zero_ratio() {
        let r = node_ratio(&inst(2, 10, 0, 3)).unwrap();
        assert_eq!(r.ratio, 0.0);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn identity_denominator_closed_form() {
        for (tau, layers) in [(2, 2), (3, 3), (4, 5)] {
            let i = inst(tau, 10, 0, layers);
            let want = ((1 + tau) as f64).powi(layers as i32) * 1e-3 * 10.0 * 4.0;
            let got = identity_response(&i).unwrap();
            assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn patch_ratio_examples() {
        let r = patch_ratio(&inst(3, 10, 2, 3), PatchWeights::SizeRatio).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
        let mut uneven = inst(2, 20, 0, 3);
        uneven.n_t = 10;
        let r = patch_ratio(&uneven, PatchWeights::SizeRatio).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-6, "{}", r.ratio);
        let r = patch_ratio(
            &inst(2, 10, 0, 2),
            PatchWeights::Scalars { w1: 1.0, w2: 0.0 },
        )
        .unwrap();
        assert_eq!(r.ratio, 0.0);
        let mut leaky = inst(2, 20, 2, 3);
        leaky.n_t = 10;
        let r = patch_ratio(&leaky, PatchWeights::Calibrated).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-9, "{}", r.ratio);
    }
}
