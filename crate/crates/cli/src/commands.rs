use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use patchgt::bottleneck::{run_grid, BottleneckGrid};
use patchgt::checkpoint;
use patchgt::gradcheck::full_suite;
use patchgt::graph::{load_dataset, load_json_graphs, Dataset};
use patchgt::model::{coarse_graph_dot, export_attention, GraphInput};
use patchgt::spectral::{coarse_graph, segment, segment_all, SegmentCache};
use patchgt::train::{cross_validate_with, predict, score, split_for_fold, TrainConfig, TrainRun};
use patchgt::wl::{joint_histograms, wl_distinguishable};

use crate::fetch::fetch;
use crate::manifest::Manifest;
use crate::Command;

pub fn dispatch(command: Command, data_dir: &Path) -> Result<()> {
    match command {
        Command::Replay { manifest } => replay(&manifest),
        Command::Fetch { name, from, url } => {
            let dir = fetch(&name, from.as_deref(), url.as_deref(), data_dir)?;
            let data = load_dataset(&dir)?;
            println!("{}: {} graphs in {}", data.name, data.len(), dir.display());
            Ok(())
        }
        other => {
            let resolved = resolve(other, data_dir)?;
            let outputs = execute(&resolved)?;
            if let Some(path) = manifest_path(&resolved) {
                Manifest::new(resolved, &outputs)?.write(&path)?;
                println!("manifest: {}", path.display());
            }
            Ok(())
        }
    }
}

/// Absolute form of a path that may not exist yet.
fn absolute(path: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(path)?)
}

fn existing(path: &Path) -> Result<PathBuf> {
    path.canonicalize()
        .with_context(|| format!("{} does not exist", path.display()))
}

/// A corpus path, or a name under the data directory.
fn resolve_dataset(spec: &str, data_dir: &Path) -> Result<String> {
    let direct = Path::new(spec);
    let path = if direct.exists() {
        direct.to_path_buf()
    } else if data_dir.join(spec).exists() {
        data_dir.join(spec)
    } else {
        bail!(
            "dataset {spec} not found as a path or under {}; try `patchgt fetch {spec}`",
            data_dir.display()
        );
    };
    Ok(existing(&path)?.display().to_string())
}

/// Replaces every relative path and dataset name with an absolute path.
fn resolve(command: Command, data_dir: &Path) -> Result<Command> {
    let opt = |p: Option<PathBuf>| p.as_deref().map(absolute).transpose();
    Ok(match command {
        Command::Segment {
            input,
            dataset,
            gamma,
            cache_dir,
            out,
        } => Command::Segment {
            input: input.as_deref().map(existing).transpose()?,
            dataset: dataset.map(|d| resolve_dataset(&d, data_dir)).transpose()?,
            gamma,
            cache_dir: opt(cache_dir)?,
            out: opt(out)?,
        },
        Command::WlCompare { a, b, out } => Command::WlCompare {
            a: existing(&a)?,
            b: existing(&b)?,
            out: opt(out)?,
        },
        Command::Train {
            dataset,
            gamma,
            config,
            seed,
            folds,
            epochs,
            out,
        } => Command::Train {
            dataset: resolve_dataset(&dataset, data_dir)?,
            gamma,
            config: config.as_deref().map(existing).transpose()?,
            seed,
            folds,
            epochs,
            out: absolute(&out)?,
        },
        Command::Eval {
            dataset,
            run,
            fold,
            out,
        } => Command::Eval {
            dataset: resolve_dataset(&dataset, data_dir)?,
            run: existing(&run)?,
            fold,
            out: opt(out)?,
        },
        Command::Bottleneck { grid, out } => Command::Bottleneck {
            grid: grid.as_deref().map(existing).transpose()?,
            out: absolute(&out)?,
        },
        Command::AttentionExport {
            dataset,
            run,
            fold,
            graphs,
            limit,
            out,
        } => Command::AttentionExport {
            dataset: resolve_dataset(&dataset, data_dir)?,
            run: existing(&run)?,
            fold,
            graphs,
            limit,
            out: absolute(&out)?,
        },
        other => other,
    })
}

/// Where the manifest goes: inside an output directory, or beside an output file.
fn manifest_path(command: &Command) -> Option<PathBuf> {
    let beside = |p: &Path| {
        let mut name = p.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        p.with_file_name(name)
    };
    match command {
        Command::Train { out, .. } | Command::AttentionExport { out, .. } => {
            Some(out.join("manifest.json"))
        }
        Command::Bottleneck { out, .. } => Some(beside(out)),
        Command::Segment { out, .. }
        | Command::WlCompare { out, .. }
        | Command::Eval { out, .. }
        | Command::Gradcheck { out, .. } => out.as_deref().map(beside),
        Command::Replay { .. } | Command::Fetch { .. } => None,
    }
}

fn replay(path: &Path) -> Result<()> {
    let manifest = Manifest::read(path)?;
    execute(&manifest.command)?;
    manifest.verify()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// Writes to `out` when given, otherwise prints.
fn emit(out: Option<&Path>, value: &impl Serialize) -> Result<Vec<PathBuf>> {
    match out {
        Some(p) => {
            write_json(p, value)?;
            Ok(vec![p.to_path_buf()])
        }
        None => {
            use std::io::Write;
            let text = serde_json::to_string_pretty(value)?;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(vec![]),
            }
        }
    }
}

fn read_run(run_dir: &Path) -> Result<TrainRun> {
    let path = run_dir.join("run.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn first_graph(path: &Path) -> Result<patchgt::Graph> {
    let data = load_json_graphs(path)?;
    data.graphs
        .into_iter()
        .next()
        .with_context(|| format!("{} holds no graphs", path.display()))
}

/// Runs a resolved command and returns the files it wrote.
fn execute(command: &Command) -> Result<Vec<PathBuf>> {
    match command {
        Command::Segment {
            input,
            dataset,
            gamma,
            cache_dir,
            out,
        } => {
            let data: Dataset = match (input, dataset) {
                (Some(p), _) => load_json_graphs(p)?,
                (None, Some(d)) => load_dataset(d)?,
                (None, None) => bail!("segment needs --input or --dataset"),
            };
            let parts = match cache_dir {
                Some(dir) => {
                    let cache = SegmentCache::new(dir)?;
                    data.graphs
                        .iter()
                        .map(|g| cache.segment(g, *gamma))
                        .collect::<patchgt::Result<Vec<_>>>()?
                }
                None => segment_all(&data.graphs, *gamma)?,
            };
            let mut records = Vec::with_capacity(parts.len());
            for (i, (g, part)) in data.graphs.iter().zip(&parts).enumerate() {
                let coarse = coarse_graph(g, part)?;
                records.push(json!({
                    "index": i,
                    "num_nodes": g.num_nodes(),
                    "k": part.k,
                    "k_requested": part.k_requested,
                    "assignment": part.assignment,
                    "patch_sizes": part.patch_sizes,
                    "coarse_adjacency": coarse.coarse_adjacency.to_rows(),
                }));
            }
            let mean_k = parts.iter().map(|p| p.k as f64).sum::<f64>() / parts.len().max(1) as f64;
            eprintln!(
                "{} graphs at gamma {gamma}: mean k {mean_k:.4}",
                parts.len()
            );
            emit(
                out.as_deref(),
                &json!({ "dataset": data.name, "gamma": gamma, "mean_k": mean_k, "graphs": records }),
            )
        }
        Command::WlCompare { a, b, out } => {
            let (ga, gb) = (first_graph(a)?, first_graph(b)?);
            let distinguishable = wl_distinguishable(&ga, &gb)?;
            let (ha, hb) = joint_histograms(&ga, &gb)?;
            println!("distinguishable: {distinguishable}");
            println!("a: {}", serde_json::to_string(&ha)?);
            println!("b: {}", serde_json::to_string(&hb)?);
            match out {
                Some(p) => {
                    write_json(
                        p,
                        &json!({ "distinguishable": distinguishable, "histogram_a": ha, "histogram_b": hb }),
                    )?;
                    Ok(vec![p.clone()])
                }
                None => Ok(vec![]),
            }
        }
        Command::Train {
            dataset,
            gamma,
            config,
            seed,
            folds,
            epochs,
            out,
        } => {
            let data = load_dataset(dataset)?;
            let mut cfg = match config {
                Some(p) => {
                    let text = fs::read_to_string(p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<TrainConfig>(&text)
                        .with_context(|| format!("parsing {}", p.display()))?
                }
                None => TrainConfig::desk_tu(*seed),
            };
            cfg.seed = *seed;
            if let Some(g) = gamma {
                cfg.model.gamma = *g;
                cfg.gamma_grid.clear();
            }
            if let Some(f) = folds {
                cfg.folds = *f;
            }
            if let Some(e) = epochs {
                cfg.max_epochs = *e;
            }
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let mut written = Vec::new();
            let run = cross_validate_with(&data, &cfg, |f| {
                println!(
                    "fold {}: gamma {} best epoch {} val {:.4} test {:.4}",
                    f.fold,
                    f.selected.gamma,
                    f.selected.best_epoch,
                    f.selected.val_metric,
                    f.selected.test_metric
                );
            })?;
            for f in &run.folds {
                let path = out.join(format!("fold-{}.ckpt", f.fold));
                let params = f
                    .selected
                    .params
                    .as_ref()
                    .context("fold result lost its parameters")?;
                checkpoint::save(&path, params)?;
                written.push(path);
            }
            let config_path = out.join("config.json");
            write_json(&config_path, &run.config)?;
            let run_path = out.join("run.json");
            write_json(&run_path, &run)?;
            written.push(config_path);
            written.push(run_path);
            println!(
                "{}: mean {:.4} ± {:.4} over {} folds",
                run.dataset,
                run.mean,
                run.std,
                run.folds.len()
            );
            Ok(written)
        }
        Command::Eval {
            dataset,
            run,
            fold,
            out,
        } => {
            let data = load_dataset(dataset)?;
            let record = read_run(run)?;
            let fold_result = record
                .folds
                .get(*fold)
                .with_context(|| format!("run has no fold {fold}"))?;
            if record.fold_assignment.len() != data.len() {
                bail!(
                    "run covers {} graphs but the dataset has {}",
                    record.fold_assignment.len(),
                    data.len()
                );
            }
            let params = checkpoint::load(run.join(format!("fold-{fold}.ckpt")))?;
            let mut model = record.config.model.clone();
            model.gamma = fold_result.selected.gamma;
            let split = split_for_fold(&record.fold_assignment, record.config.folds, *fold);
            let inputs = split
                .test
                .iter()
                .map(|&i| {
                    let g = &data.graphs[i];
                    GraphInput::new(g, &segment(g, model.gamma)?, model.per_patch_gnn)
                })
                .collect::<patchgt::Result<Vec<_>>>()?;
            let idx: Vec<usize> = (0..inputs.len()).collect();
            let logits = predict(&inputs, &idx, &model, &params)?;
            let labels: Vec<&[f64]> = split
                .test
                .iter()
                .map(|&i| data.graphs[i].labels())
                .collect();
            let metric = score(data.metric, &logits, &labels)?;
            println!(
                "fold {fold}: test {:?} {metric:.4} (recorded {:.4})",
                data.metric, fold_result.selected.test_metric
            );
            emit(
                out.as_deref(),
                &json!({
                    "fold": fold,
                    "gamma": model.gamma,
                    "metric": data.metric,
                    "test_metric": metric,
                    "recorded_test_metric": fold_result.selected.test_metric,
                    "test_indices": split.test,
                    "logits": logits,
                }),
            )
        }
        Command::Bottleneck { grid, out } => {
            let grid: BottleneckGrid = match grid {
                Some(p) => {
                    let text = fs::read_to_string(p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("parsing {}", p.display()))?
                }
                None => BottleneckGrid::default(),
            };
            let report = run_grid(&grid)?;
            for s in &report.skipped {
                println!(
                    "skipped tau {} size {} m {}: {}",
                    s.tau, s.size, s.m, s.reason
                );
            }
            println!(
                "{} instances, {} trials, {} violations",
                report.instances.len(),
                report.total_trials,
                report.total_violations
            );
            write_json(out, &report)?;
            Ok(vec![out.clone()])
        }
        Command::AttentionExport {
            dataset,
            run,
            fold,
            graphs,
            limit,
            out,
        } => {
            let data = load_dataset(dataset)?;
            let record = read_run(run)?;
            let fold_result = record
                .folds
                .get(*fold)
                .with_context(|| format!("run has no fold {fold}"))?;
            let params = checkpoint::load(run.join(format!("fold-{fold}.ckpt")))?;
            let mut model = record.config.model.clone();
            model.gamma = fold_result.selected.gamma;
            let chosen: Vec<usize> = if graphs.is_empty() {
                (0..data.len().min(*limit)).collect()
            } else {
                graphs.clone()
            };
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let mut written = Vec::new();
            for &i in &chosen {
                let g = data
                    .graphs
                    .get(i)
                    .with_context(|| format!("no graph {i} in {}", data.name))?;
                let part = segment(g, model.gamma)?;
                let export = export_attention(g, &part, &model, &params)?;
                let coarse = coarse_graph(g, &part)?;
                let json_path = out.join(format!("graph-{i}.json"));
                write_json(&json_path, &export)?;
                let dot_path = out.join(format!("graph-{i}.dot"));
                fs::write(
                    &dot_path,
                    coarse_graph_dot(&part, &coarse.coarse_adjacency, &export.attention),
                )
                .with_context(|| format!("writing {}", dot_path.display()))?;
                written.push(json_path);
                written.push(dot_path);
            }
            println!("exported {} graphs to {}", chosen.len(), out.display());
            Ok(written)
        }
        Command::Gradcheck {
            seed,
            instances,
            out,
        } => {
            let reports = full_suite(*seed, *instances)?;
            for r in &reports {
                println!(
                    "{:<22} {:>4} instances  max rel err {:.3e}  {}",
                    r.op,
                    r.instances,
                    r.max_relative_error,
                    if r.passed { "ok" } else { "FAIL" }
                );
            }
            let mut written = Vec::new();
            if let Some(p) = out {
                write_json(p, &reports)?;
                written.push(p.clone());
            }
            if let Some(bad) = reports.iter().find(|r| !r.passed) {
                bail!("gradient check failed for {}", bad.op);
            }
            Ok(written)
        }
        Command::Replay { .. } | Command::Fetch { .. } => {
            bail!("command cannot be nested in a manifest")
        }
    }
}
