//! Finite-difference checks for every differentiable operation and for the
//! full model loss.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::model::{forward_with_vars, GnnKind, GraphInput, ModelParams, PatchGTConfig, Readout};
use crate::seed::stream;
use crate::spectral::segment;
use crate::tensor::{gradcheck, Tape, Var};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCheck {
    pub op: String,
    pub instances: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Uniform entries whose magnitude stays at least `gap` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize, gap: f64) -> Matrix {
    let data = (0..r * c)
        .map(|_| {
            let v = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Matrix::from_vec(r, c, data)
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(
        r,
        c,
        (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

/// Distinct values spaced at least 0.02 apart, in random positions.
fn distinct(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    let mut vals: Vec<f64> = (0..r * c)
        .map(|i| -1.0 + 0.02 * i as f64 + rng.random_range(0.0..0.005))
        .collect();
    vals.shuffle(rng);
    Matrix::from_vec(r, c, vals)
}

/// Scalar probe `Σ out ⊙ R` with a fixed random `R`, so every output entry matters.
fn probe(tape: &mut Tape, out: Var, weights: &Matrix) -> Result<Var> {
    let r = tape.constant(weights.clone());
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

type Case = (Vec<Matrix>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

fn case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    let n = rng.random_range(1..5);
    let m = rng.random_range(1..5);
    let p = rng.random_range(1..5);
    let probe_nm = uniform(rng, n, m);
    match op {
        "matmul" => {
            let probe_np = uniform(rng, n, p);
            (
                vec![uniform(rng, n, m), uniform(rng, m, p)],
                Box::new(move |t, v| {
                    let o = t.matmul(v[0], v[1])?;
                    probe(t, o, &probe_np)
                }),
            )
        }
        "linear" => {
            let probe_np = uniform(rng, n, p);
            (
                vec![uniform(rng, n, m), uniform(rng, p, m), uniform(rng, 1, p)],
                Box::new(move |t, v| {
                    let o = t.linear(v[0], v[1], Some(v[2]))?;
                    probe(t, o, &probe_np)
                }),
            )
        }
        "add" => (
            vec![uniform(rng, n, m), uniform(rng, n, m)],
            Box::new(move |t, v| {
                let o = t.add(v[0], v[1])?;
                probe(t, o, &probe_nm)
            }),
        ),
        "mul" => (
            vec![uniform(rng, n, m), uniform(rng, n, m)],
            Box::new(move |t, v| {
                let o = t.mul(v[0], v[1])?;
                probe(t, o, &probe_nm)
            }),
        ),
        "scale" => {
            let c = rng.random_range(-2.0..2.0);
            (
                vec![uniform(rng, n, m)],
                Box::new(move |t, v| {
                    let o = t.scale(v[0], c);
                    probe(t, o, &probe_nm)
                }),
            )
        }
        "scale_by" => (
            vec![uniform(rng, n, m), uniform(rng, 1, 1)],
            Box::new(move |t, v| {
                let o = t.scale_by(v[0], v[1])?;
                probe(t, o, &probe_nm)
            }),
        ),
        "relu" => (
            vec![away_from_zero(rng, n, m, 0.01)],
            Box::new(move |t, v| {
                let o = t.relu(v[0]);
                probe(t, o, &probe_nm)
            }),
        ),
        "sigmoid" => (
            vec![uniform(rng, n, m)],
            Box::new(move |t, v| {
                let o = t.sigmoid(v[0]);
                probe(t, o, &probe_nm)
            }),
        ),
        "softmax_last" => (
            vec![uniform(rng, n, m)],
            Box::new(move |t, v| {
                let o = t.softmax_last(v[0])?;
                probe(t, o, &probe_nm)
            }),
        ),
        "segment_max" | "segment_sum" => {
            let k = rng.random_range(1..=n);
            let mut seg: Vec<usize> = (0..n)
                .map(|i| if i < k { i } else { rng.random_range(0..k) })
                .collect();
            seg.shuffle(rng);
            let probe_km = uniform(rng, k, m);
            let is_max = op == "segment_max";
            let x = if is_max {
                distinct(rng, n, m)
            } else {
                uniform(rng, n, m)
            };
            (
                vec![x],
                Box::new(move |t, v| {
                    let o = if is_max {
                        t.segment_max(v[0], &seg, k)?
                    } else {
                        t.segment_sum(v[0], &seg, k)?
                    };
                    probe(t, o, &probe_km)
                }),
            )
        }
        "scale_rows" => {
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            (
                vec![uniform(rng, n, m)],
                Box::new(move |t, v| {
                    let o = t.scale_rows(v[0], &f)?;
                    probe(t, o, &probe_nm)
                }),
            )
        }
        "mean" => {
            let w = uniform(rng, n, m);
            (
                vec![uniform(rng, n, m)],
                Box::new(move |t, v| {
                    let r = t.constant(w.clone());
                    let prod = t.mul(v[0], r)?;
                    let sq = t.mul(prod, prod)?;
                    t.mean(sq)
                }),
            )
        }
        "sum" => (
            vec![uniform(rng, n, m)],
            Box::new(move |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            }),
        ),
        "concat_cols" => {
            let probe_cat = uniform(rng, n, m + p);
            (
                vec![uniform(rng, n, m), uniform(rng, n, p)],
                Box::new(move |t, v| {
                    let o = t.concat_cols(&[v[0], v[1]])?;
                    probe(t, o, &probe_cat)
                }),
            )
        }
        "slice_cols" => {
            let cols = m + 2;
            let start = rng.random_range(0..cols);
            let end = rng.random_range(start + 1..=cols);
            let probe_s = uniform(rng, n, end - start);
            (
                vec![uniform(rng, n, cols)],
                Box::new(move |t, v| {
                    let o = t.slice_cols(v[0], start, end)?;
                    probe(t, o, &probe_s)
                }),
            )
        }
        "transpose" => {
            let probe_t = uniform(rng, m, n);
            (
                vec![uniform(rng, n, m)],
                Box::new(move |t, v| {
                    let o = t.transpose(v[0]);
                    probe(t, o, &probe_t)
                }),
            )
        }
        "mask_mul" => {
            let mask = Matrix::from_vec(
                n,
                m,
                (0..n * m)
                    .map(|_| if rng.random_bool(0.3) { 0.0 } else { 1.25 })
                    .collect(),
            );
            (
                vec![uniform(rng, n, m)],
                Box::new(move |t, v| {
                    let o = t.mask_mul(v[0], mask.clone())?;
                    probe(t, o, &probe_nm)
                }),
            )
        }
        "bce_masked" => {
            let targets: Vec<f64> = (0..n * m)
                .map(|i| match (i, rng.random_range(0..3)) {
                    (0, _) => 1.0,
                    (_, 0) => f64::NAN,
                    (_, 1) => 0.0,
                    _ => 1.0,
                })
                .collect();
            (
                vec![uniform(rng, n, m)],
                Box::new(move |t, v| {
                    let scaled = t.scale(v[0], 3.0);
                    t.bce_masked(scaled, &targets)
                }),
            )
        }
        other => unreachable!("unknown op {other}"),
    }
}

pub const OPS: [&str; 20] = [
    "matmul",
    "linear",
    "add",
    "mul",
    "scale",
    "scale_by",
    "relu",
    "sigmoid",
    "softmax_last",
    "segment_max",
    "segment_sum",
    "scale_rows",
    "mean",
    "sum",
    "concat_cols",
    "slice_cols",
    "transpose",
    "mask_mul",
    "bce_masked",
    "add_row",
];

fn add_row_case(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.random_range(1..5);
    let m = rng.random_range(1..5);
    let w = uniform(rng, n, m);
    (
        vec![uniform(rng, n, m), uniform(rng, 1, m)],
        Box::new(move |t, v| {
            let o = t.add_row(v[0], v[1])?;
            probe(t, o, &w)
        }),
    )
}

/// Checks every operation on `instances` random inputs.
pub fn check_ops(seed: u64, instances: usize) -> Result<Vec<OpCheck>> {
    let mut out = Vec::new();
    for (i, op) in OPS.iter().enumerate() {
        let mut rng = stream(&[seed, 10, i as u64]);
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let (inputs, f) = if *op == "add_row" {
                add_row_case(&mut rng)
            } else {
                case(op, &mut rng)
            };
            let report = gradcheck(&inputs, STEP, |t, v| f(t, v))?;
            worst = worst.max(report.max_relative_error);
        }
        out.push(OpCheck {
            op: op.to_string(),
            instances,
            max_relative_error: worst,
            passed: worst < TOLERANCE,
        });
    }
    Ok(out)
}

/// Random connected graph: a random tree plus extra edges.
pub fn random_connected_graph(
    rng: &mut ChaCha8Rng,
    n: usize,
    extra: f64,
    feature_dim: usize,
) -> Graph {
    let mut edges = std::collections::BTreeSet::new();
    for v in 1..n {
        edges.insert((rng.random_range(0..v), v));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(extra) {
                edges.insert((i, j));
            }
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let feats = Matrix::from_vec(
        n,
        feature_dim,
        (0..n * feature_dim)
            .map(|_| rng.random_range(0.0..1.0))
            .collect(),
    );
    Graph::from_parts(n, &edges, Some(feats), None, vec![1.0])
        .expect("valid random graph")
        .0
}

/// Full forward plus BCE gradient against finite differences on a 10-node graph.
pub fn check_model(seed: u64, gnn_kind: GnnKind, readout: Readout) -> Result<OpCheck> {
    let mut rng = stream(&[seed, 11]);
    let g = random_connected_graph(&mut rng, 10, 0.15, 3);
    let config = PatchGTConfig {
        gamma: 0.5,
        gnn_kind,
        readout,
        l1: 2,
        l2: 1,
        l3: 2,
        hidden_dim: 4,
        heads: 2,
        node_feature_dim: 3,
        mha_scale_by_k: readout == Readout::Sum,
        ..PatchGTConfig::default()
    };
    let params = ModelParams::random(&config, &mut rng)?;
    let part = segment(&g, config.gamma)?;
    let input = GraphInput::new(&g, &part, false)?;
    let report = gradcheck(&params.values, STEP, |tape, vars| {
        let out = forward_with_vars(tape, &input, &config, vars.to_vec(), None)?;
        tape.bce_masked(out.logits, &[1.0])
    })?;
    Ok(OpCheck {
        op: format!(
            "model {}/{}",
            serde_json::to_value(gnn_kind)?.as_str().unwrap_or_default(),
            serde_json::to_value(readout)?.as_str().unwrap_or_default()
        ),
        instances: 1,
        max_relative_error: report.max_relative_error,
        passed: report.max_relative_error < TOLERANCE,
    })
}

/// Every operation plus both model variants.
pub fn full_suite(seed: u64, instances: usize) -> Result<Vec<OpCheck>> {
    let mut out = check_ops(seed, instances)?;
    out.push(check_model(seed, GnnKind::Gcn, Readout::MaxWeighted)?);
    out.push(check_model(seed, GnnKind::Gin, Readout::Sum)?);
    Ok(out)
}
