//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use patchgt::bottleneck::{
    patch_ratio, run_grid, BottleneckGrid, BottleneckInstance, PatchWeights,
};
use patchgt::gradcheck::{full_suite, random_connected_graph, TOLERANCE};
use patchgt::graph::{load_tu_dataset, permute_graph};
use patchgt::model::{forward, GnnKind, ModelParams, PatchGTConfig, Readout};
use patchgt::seed::stream;
use patchgt::spectral::{eigendecompose, normalized_laplacian, segment, segment_all};
use patchgt::train::{cross_validate_with, roc_auc, TrainConfig};
use patchgt::wl::wl_distinguishable;
use patchgt::{Dataset, Graph, Permutation};
use rand::Rng;

type Outcome = Result<String, String>;

fn data_dir() -> PathBuf {
    std::env::var_os("PATCHGT_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn mutag() -> Result<Dataset, String> {
    load_tu_dataset(data_dir().join("MUTAG"), "MUTAG")
        .map_err(|e| format!("MUTAG unavailable ({e}); run `patchgt fetch MUTAG`"))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 10-fold cross-validation of the desk-scale setup on MUTAG.
fn mutag_accuracy() -> Outcome {
    let data = mutag()?;
    let config = TrainConfig::desk_tu(0);
    let start = Instant::now();
    let run = cross_validate_with(&data, &config, |f| {
        eprintln!(
            "  fold {}: gamma {} test {:.4} ({:.0?})",
            f.fold,
            f.selected.gamma,
            f.selected.test_metric,
            start.elapsed()
        )
    })
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        run.mean >= 0.80 && elapsed <= Duration::from_secs(45 * 60),
        format!(
            "mean accuracy {:.4} ± {:.4} (need ≥ 0.80), {:.1} min (limit 45)",
            run.mean,
            run.std,
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

/// Mean patch count over the threshold ladder, with exact endpoint checks.
fn gamma_ablation() -> Outcome {
    let data = mutag()?;
    let ladder = [0.0, 0.1, 0.4, 0.8, 2.0];
    let mut means = Vec::new();
    for &gamma in &ladder {
        let parts = segment_all(&data.graphs, gamma).map_err(|e| e.to_string())?;
        for (g, p) in data.graphs.iter().zip(&parts) {
            if gamma == 0.0 && g.connected_components().0 == 1 && p.k != 1 {
                return Err(format!(
                    "connected graph with {} nodes has k = {} at gamma 0",
                    g.num_nodes(),
                    p.k
                ));
            }
            if gamma == 2.0 && p.k != g.num_nodes() {
                return Err(format!(
                    "graph with {} nodes has k = {} at gamma 2",
                    g.num_nodes(),
                    p.k
                ));
            }
        }
        means.push(parts.iter().map(|p| p.k as f64).sum::<f64>() / parts.len() as f64);
    }
    let monotone = means.windows(2).all(|w| w[0] <= w[1]);
    let shown: Vec<String> = ladder
        .iter()
        .zip(&means)
        .map(|(g, m)| format!("{g}:{m:.3}"))
        .collect();
    check(monotone, format!("mean k by gamma {}", shown.join(" ")))
}

/// Segmentation and forward pass commute with node relabelling.
fn permutation_invariance() -> Outcome {
    let mut rng = stream(&[3, 3]);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let n = rng.random_range(2..=40);
        let extra = rng.random_range(0.02..0.2);
        let g = random_connected_graph(&mut rng, n, extra, 3);
        let p = Permutation::random(n, &mut rng);
        let h = permute_graph(&g, &p).map_err(|e| e.to_string())?;
        let gamma = [0.1, 0.2, 0.4, 0.5, 0.8][trial % 5];
        let config = PatchGTConfig {
            gamma,
            gnn_kind: if trial % 2 == 0 {
                GnnKind::Gcn
            } else {
                GnnKind::Gin
            },
            readout: if trial % 3 == 0 {
                Readout::Sum
            } else {
                Readout::MaxWeighted
            },
            hidden_dim: 16,
            node_feature_dim: 3,
            ..PatchGTConfig::default()
        };
        let params = ModelParams::random(&config, &mut rng).map_err(|e| e.to_string())?;
        let pg = segment(&g, gamma).map_err(|e| e.to_string())?;
        let ph = segment(&h, gamma).map_err(|e| e.to_string())?;
        let mut mapped: Vec<Vec<usize>> = pg
            .as_set_partition()
            .into_iter()
            .map(|s| {
                let mut t: Vec<usize> = s.into_iter().map(|i| p.apply(i)).collect();
                t.sort_unstable();
                t
            })
            .collect();
        mapped.sort();
        if mapped != ph.as_set_partition() {
            return Err(format!(
                "trial {trial}: partitions differ on a {n}-node graph"
            ));
        }
        let a = forward(&g, &pg, &config, &params).map_err(|e| e.to_string())?;
        let b = forward(&h, &ph, &config, &params).map_err(|e| e.to_string())?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    check(
        worst <= 1e-8,
        format!("50 triples, partitions equal, max logit gap {worst:.2e} (limit 1e-8)"),
    )
}

/// A 1-WL-equivalent pair separated by the patch model.
fn expressiveness() -> Outcome {
    let c6 = Graph::cycle(6);
    let two = Graph::cycle(3)
        .disjoint_union(&Graph::cycle(3))
        .map_err(|e| e.to_string())?;
    if wl_distinguishable(&c6, &two).map_err(|e| e.to_string())? {
        return Err("1-WL separates the hexagon from two triangles".into());
    }
    let config = PatchGTConfig {
        gamma: 0.1,
        gnn_kind: GnnKind::Gin,
        readout: Readout::Sum,
        mha_scale_by_k: true,
        zero_query_init: true,
        l3: 1,
        ..PatchGTConfig::default()
    };
    let pa = segment(&c6, 0.1).map_err(|e| e.to_string())?;
    let pb = segment(&two, 0.1).map_err(|e| e.to_string())?;
    let mut separated = 0;
    for draw in 0..100u64 {
        let params =
            ModelParams::random(&config, &mut stream(&[4, draw])).map_err(|e| e.to_string())?;
        let a = forward(&c6, &pa, &config, &params).map_err(|e| e.to_string())?;
        let b = forward(&two, &pb, &config, &params).map_err(|e| e.to_string())?;
        if a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6) {
            separated += 1;
        }
    }
    check(
        separated >= 99,
        format!(
            "1-WL equivalent; k = {} vs {}; separated in {separated}/100 draws",
            pa.k, pb.k
        ),
    )
}

/// Node ratio never exceeds its bound and the patch construction reaches 1.
fn bottleneck() -> Outcome {
    let start = Instant::now();
    let grid = BottleneckGrid {
        ms: vec![1, 2, 4],
        ..BottleneckGrid::default()
    };
    let report = run_grid(&grid).map_err(|e| e.to_string())?;
    let patch_gap = report
        .instances
        .iter()
        .map(|r| {
            (r.patch.ratio - 1.0)
                .abs()
                .max((r.patch_calibrated.ratio - 1.0).abs())
        })
        .fold(0.0f64, f64::max);
    let unequal = BottleneckInstance {
        tau: 3,
        n_s: 20,
        n_t: 10,
        m: 2,
        layers: 3,
        epsilon: 1e-3,
        trials: 1,
        feature_dim: 4,
        seed: 9,
    };
    let unequal_gap = (patch_ratio(&unequal, PatchWeights::Calibrated)
        .map_err(|e| e.to_string())?
        .ratio
        - 1.0)
        .abs();
    let elapsed = start.elapsed();
    check(
        report.instances.len() >= 18
            && report.total_violations == 0
            && patch_gap <= 1e-6
            && unequal_gap <= 1e-6
            && elapsed <= Duration::from_secs(300),
        format!(
            "{} instances ({} infeasible skipped), {} trials, {} violations, patch ratio gap {:.1e} / {:.1e} (|S| = 2|T|), {:.2} s",
            report.instances.len(),
            report.skipped.len(),
            report.total_trials,
            report.total_violations,
            patch_gap,
            unequal_gap,
            elapsed.as_secs_f64()
        ),
    )
}

/// Mann-Whitney pair count: wins plus half of ties over all positive-negative pairs.
fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0f64, 0.0f64);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Analytic spectra, finite-difference gradients and exact ROC-AUC.
fn numerics() -> Outcome {
    let mut worst_spectrum: f64 = 0.0;
    let mut worst_recon: f64 = 0.0;
    let mut fixtures: Vec<(Graph, Vec<f64>)> = (2..=10)
        .map(|n| {
            let mut ev = vec![n as f64 / (n as f64 - 1.0); n];
            ev[0] = 0.0;
            (Graph::complete(n), ev)
        })
        .collect();
    let mut c6: Vec<f64> = (0..6)
        .map(|j| 1.0 - (std::f64::consts::TAU * j as f64 / 6.0).cos())
        .collect();
    c6.sort_by(f64::total_cmp);
    fixtures.push((Graph::cycle(6), c6));
    for (g, expected) in &fixtures {
        let l = normalized_laplacian(g);
        let dec = eigendecompose(&l).map_err(|e| e.to_string())?;
        worst_recon = worst_recon
            .max(dec.reconstruct().max_abs_diff(&l))
            .max(dec.orthonormality_error());
        for (x, y) in dec.eigenvalues.iter().zip(expected) {
            worst_spectrum = worst_spectrum.max((x - y).abs());
        }
    }
    let grads = full_suite(0, 50).map_err(|e| e.to_string())?;
    let worst_grad = grads
        .iter()
        .map(|r| r.max_relative_error)
        .fold(0.0f64, f64::max);
    let mut rng = stream(&[6]);
    let mut auc_mismatch = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..30);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        // Coarse scores force plenty of ties.
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..6) as f64 / 4.0)
            .collect();
        let got = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        if got.to_bits() != brute_auc(&scores, &labels).to_bits() {
            auc_mismatch += 1;
        }
    }
    check(
        worst_spectrum <= 1e-8 && worst_recon <= 1e-8 && worst_grad < TOLERANCE && auc_mismatch == 0,
        format!(
            "spectra gap {worst_spectrum:.1e}, reconstruction {worst_recon:.1e}, {} gradient checks max rel {worst_grad:.1e}, AUC mismatches {auc_mismatch}/100",
            grads.len()
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_patchgt"))
        .args(args)
        .current_dir(dir)
        .env("PATCHGT_DATA_DIR", data_dir())
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!(
            "`patchgt {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&o.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

/// Every manifest reproduces its outputs byte for byte.
fn replay() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    mutag()?;
    let runs: [(&[&str], &str); 5] = [
        (
            &[
                "segment",
                "--dataset",
                "MUTAG",
                "--gamma",
                "0.4",
                "--cache-dir",
                "cache",
                "--out",
                "seg.json",
            ],
            "seg.json.manifest.json",
        ),
        (
            &["bottleneck", "--out", "bottleneck.json"],
            "bottleneck.json.manifest.json",
        ),
        (
            &["gradcheck", "--instances", "5", "--out", "grad.json"],
            "grad.json.manifest.json",
        ),
        (
            &[
                "train",
                "--dataset",
                "MUTAG",
                "--folds",
                "3",
                "--epochs",
                "2",
                "--seed",
                "7",
                "--out",
                "run",
            ],
            "run/manifest.json",
        ),
        (
            &[
                "attention-export",
                "--dataset",
                "MUTAG",
                "--run",
                "run",
                "--limit",
                "3",
                "--out",
                "att",
            ],
            "att/manifest.json",
        ),
    ];
    let mut files = 0;
    for (args, manifest) in runs {
        run_cli(dir, args)?;
        let out = run_cli(dir, &["--jobs", "1", "replay", manifest])?;
        if !out.contains("replay: bit-identical") {
            return Err(format!("{manifest}: {out}"));
        }
        files += out.lines().filter(|l| l.starts_with("identical")).count();
    }
    Ok(format!(
        "5 manifests re-run, {files} output files bit-identical"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 MUTAG desk-scale accuracy", mutag_accuracy),
        ("2 gamma ablation shape", gamma_ablation),
        ("3 permutation invariance", permutation_invariance),
        ("4 expressiveness beyond 1-WL", expressiveness),
        ("5 bottleneck bound", bottleneck),
        ("6 numerics", numerics),
        ("7 CLI replay", replay),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        match run() {
            Ok(detail) => println!("PASS  criterion {name}: {detail} [{:.1?}]", start.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail} [{:.1?}]", start.elapsed());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
