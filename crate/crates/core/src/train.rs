//! Losses, metrics, Adam, and the stratified cross-validation protocol.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{class_of, is_missing, Dataset, Graph, Metric};
use crate::matrix::Matrix;
use crate::model::{forward_on_tape, GraphInput, ModelParams, PatchGTConfig};
use crate::seed::derive_seed;
use crate::spectral::{decompose_all, segment_with, SpectralDecomposition};
use crate::tensor::{bce_sum, Tape};

/// Mean BCE on logits over non-missing targets; 0 when all are missing.
pub fn bce_loss_masked(logits: &[f64], targets: &[f64]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::contract(format!(
            "{} logits for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let (sum, count) = bce_sum(logits, targets);
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::contract("accuracy: length mismatch"));
    }
    if labels.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of zero examples".into()));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Probability that a random positive outranks a random negative, ties counting ½.
///
/// Counts are kept in half-units so the result equals the pairwise
/// definition exactly.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract("roc_auc: length mismatch"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("roc_auc: NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC-AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut half_units: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut q) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        half_units += 2 * p * neg_below + p * q;
        neg_below += q;
        i = j;
    }
    Ok(half_units as f64 / (2 * pos * neg) as f64)
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(
            "adam_step: parameter, gradient and state counts differ",
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        if p.shape() != g.shape() {
            return Err(Error::contract("adam_step: gradient shape mismatch"));
        }
        for (((p, &g), m), v) in p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Configuration and records

fn default_folds() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: PatchGTConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Candidate thresholds chosen per fold on validation; empty means `model.gamma`.
    #[serde(default)]
    pub gamma_grid: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: PatchGTConfig::default(),
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            seed: 0,
            folds: 10,
            gamma_grid: Vec::new(),
        }
    }
}

/// Thresholds searched on validation for TU corpora.
pub const TU_GAMMA_GRID: [f64; 5] = [0.1, 0.2, 0.4, 0.5, 0.8];

impl TrainConfig {
    /// Desk-scale TU setup: four node layers, two patch layers, two attention
    /// layers, width 64 and four heads, dropout 0.1 on embeddings and attention.
    ///
    /// Batch size and learning rate are smaller and larger than the reference
    /// values so that roughly 150 training graphs still yield enough updates in
    /// 50 epochs.
    pub fn desk_tu(seed: u64) -> Self {
        Self {
            model: PatchGTConfig {
                gamma: 0.1,
                l1: 4,
                l2: 2,
                l3: 2,
                hidden_dim: 64,
                heads: 4,
                attention_dropout: 0.1,
                embedding_dropout: 0.1,
                ..PatchGTConfig::default()
            },
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            seed,
            folds: 10,
            gamma_grid: TU_GAMMA_GRID.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.folds < 3 {
            return Err(Error::Config(format!(
                "{} folds leave no room for train, validation and test",
                self.folds
            )));
        }
        if self.gamma_grid.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("gamma grid has a non-finite value".into()));
        }
        Ok(())
    }

    pub fn gammas(&self) -> Vec<f64> {
        if self.gamma_grid.is_empty() {
            vec![self.model.gamma]
        } else {
            self.gamma_grid.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub test_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Outcome of training one configuration on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub gamma: f64,
    pub best_epoch: usize,
    /// Mean training loss of the initial parameters.
    pub initial_loss: f64,
    pub val_metric: f64,
    pub val_loss: f64,
    pub test_metric: f64,
    pub curve: Vec<EpochRecord>,
    #[serde(skip)]
    pub params: Option<ModelParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCandidate {
    pub gamma: f64,
    pub val_metric: f64,
    pub val_loss: f64,
    pub test_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub selected: FitResult,
    pub candidates: Vec<GammaCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub dataset: String,
    pub metric: Metric,
    /// Fold id per graph.
    pub fold_assignment: Vec<usize>,
    pub folds: Vec<FoldResult>,
    pub fold_metrics: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub std: f64,
}

// ---------------------------------------------------------------------------
// Folds

/// Stratified fold ids: each class is shuffled and dealt round-robin, with the
/// dealing position carried across classes so fold sizes differ by at most one.
pub fn stratified_folds(classes: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds == 0 {
        return Err(Error::Config("zero folds".into()));
    }
    let num_classes = classes.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); num_classes];
    for (i, &c) in classes.iter().enumerate() {
        members[c].push(i);
    }
    if let Some(small) = members.iter().filter(|m| !m.is_empty()).map(Vec::len).min() {
        if small < folds {
            return Err(Error::Config(format!(
                "{folds} folds exceed the support of the smallest class ({small} graphs)"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; classes.len()];
    let mut next = 0;
    for group in &mut members {
        group.shuffle(&mut rng);
        for &i in group.iter() {
            out[i] = next % folds;
            next += 1;
        }
    }
    Ok(out)
}

/// Test fold `f`, validation fold `f + 1`, training on the rest.
pub fn split_for_fold(assignment: &[usize], folds: usize, fold: usize) -> Split {
    let val_fold = (fold + 1) % folds;
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, &f) in assignment.iter().enumerate() {
        if f == fold {
            split.test.push(i);
        } else if f == val_fold {
            split.val.push(i);
        } else {
            split.train.push(i);
        }
    }
    split
}

// ---------------------------------------------------------------------------
// Training

/// Forward inputs for a corpus at one threshold.
pub fn prepare_inputs(
    graphs: &[Graph],
    spectra: &[SpectralDecomposition],
    gamma: f64,
    per_patch_gnn: bool,
) -> Result<Vec<GraphInput>> {
    let one = |(g, d): (&Graph, &SpectralDecomposition)| -> Result<GraphInput> {
        let part = segment_with(d, gamma)?;
        GraphInput::new(g, &part, per_patch_gnn)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        graphs.par_iter().zip(spectra.par_iter()).map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        graphs.iter().zip(spectra.iter()).map(one).collect()
    }
}

/// Loss and parameter gradients for one graph.
pub fn graph_gradients(
    input: &GraphInput,
    labels: &[f64],
    config: &PatchGTConfig,
    params: &ModelParams,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let out = forward_on_tape(
        &mut tape,
        input,
        config,
        params,
        rng.as_mut().map(|r| r as &mut dyn rand::RngCore),
    )?;
    let loss = tape.bce_masked(out.logits, labels)?;
    tape.backward(loss)?;
    let grads = out.params.iter().map(|&v| tape.grad_or_zeros(v)).collect();
    Ok((tape.value(loss)[(0, 0)], grads))
}

/// Evaluation-mode logits for a set of graphs.
pub fn predict(
    inputs: &[GraphInput],
    idx: &[usize],
    config: &PatchGTConfig,
    params: &ModelParams,
) -> Result<Vec<Vec<f64>>> {
    let one = |&i: &usize| -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = forward_on_tape(&mut tape, &inputs[i], config, params, None)?;
        Ok(tape.value(out.logits).row(0).to_vec())
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        idx.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        idx.iter().map(one).collect()
    }
}

/// Predicted class: the sign of a single logit, otherwise the argmax (lowest index on ties).
pub fn predicted_class(logits: &[f64]) -> usize {
    if logits.len() == 1 {
        return usize::from(logits[0] > 0.0);
    }
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Dataset metric over the given logits; ROC-AUC is averaged over tasks with both classes.
pub fn score(metric: Metric, logits: &[Vec<f64>], labels: &[&[f64]]) -> Result<f64> {
    match metric {
        Metric::Accuracy => {
            let preds: Vec<usize> = logits.iter().map(|l| predicted_class(l)).collect();
            let truth: Vec<usize> = labels.iter().map(|l| class_of(l)).collect();
            accuracy(&preds, &truth)
        }
        Metric::RocAuc => {
            let tasks = labels.first().map_or(0, |l| l.len());
            let mut total = 0.0;
            let mut used = 0;
            for t in 0..tasks {
                let mut s = Vec::new();
                let mut y = Vec::new();
                for (l, z) in labels.iter().zip(logits) {
                    if !is_missing(l[t]) {
                        s.push(z[t]);
                        y.push(l[t] > 0.5);
                    }
                }
                match roc_auc(&s, &y) {
                    Ok(v) => {
                        total += v;
                        used += 1;
                    }
                    Err(Error::UndefinedMetric(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            if used == 0 {
                return Err(Error::UndefinedMetric("no task has both classes".into()));
            }
            Ok(total / used as f64)
        }
    }
}

fn evaluate(
    data: &Dataset,
    inputs: &[GraphInput],
    idx: &[usize],
    config: &PatchGTConfig,
    params: &ModelParams,
) -> Result<(f64, f64)> {
    let logits = predict(inputs, idx, config, params)?;
    let labels: Vec<&[f64]> = idx.iter().map(|&i| data.graphs[i].labels()).collect();
    let mut loss = 0.0;
    for (z, y) in logits.iter().zip(&labels) {
        loss += bce_loss_masked(z, y)?;
    }
    let loss = loss / idx.len().max(1) as f64;
    Ok((score(data.metric, &logits, &labels)?, loss))
}

/// Trains one model on one split and selects the best validation epoch.
///
/// Ties on the validation metric go to the lower validation loss, then the earlier epoch.
pub fn train(
    data: &Dataset,
    inputs: &[GraphInput],
    config: &TrainConfig,
    split: &Split,
    seed: u64,
) -> Result<FitResult> {
    config.validate()?;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::Config(
            "every split part needs at least one graph".into(),
        ));
    }
    let model = &config.model;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0]));
    let mut params = ModelParams::init(model, &mut init_rng)?;
    let mut adam = AdamState::new(&params.values);
    let mut order = split.train.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 1]));
    let dropout_on = model.attention_dropout > 0.0 || model.embedding_dropout > 0.0;
    let mut initial_loss = 0.0;
    for (z, &i) in predict(inputs, &split.train, model, &params)?
        .iter()
        .zip(&split.train)
    {
        initial_loss += bce_loss_masked(z, data.graphs[i].labels())?;
    }
    let initial_loss = initial_loss / split.train.len() as f64;

    let mut curve = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(f64, f64, usize, ModelParams, f64)> = None;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let work = |&i: &usize| {
                let ds = dropout_on.then(|| derive_seed(&[seed, 2, epoch as u64, i as u64]));
                graph_gradients(&inputs[i], data.graphs[i].labels(), model, &params, ds)
            };
            #[cfg(feature = "parallel")]
            let results: Vec<Result<(f64, Vec<Matrix>)>> = {
                use rayon::prelude::*;
                batch.par_iter().map(work).collect()
            };
            #[cfg(not(feature = "parallel"))]
            let results: Vec<Result<(f64, Vec<Matrix>)>> = batch.iter().map(work).collect();

            // Fixed-order reduction keeps the update independent of scheduling.
            let mut total = params.zeros_like();
            for r in results {
                let (loss, grads) = r?;
                epoch_loss += loss;
                for (t, g) in total.iter_mut().zip(&grads) {
                    t.add_assign(g);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for t in &mut total {
                t.scale(inv);
            }
            adam_step(&mut params.values, &total, &mut adam, config.learning_rate)?;
        }
        let train_loss = epoch_loss / order.len() as f64;
        let (val_metric, val_loss) = evaluate(data, inputs, &split.val, model, &params)?;
        let (test_metric, _) = evaluate(data, inputs, &split.test, model, &params)?;
        if !train_loss.is_finite() {
            return Err(Error::Numeric {
                message: format!("training loss diverged at epoch {epoch}"),
                residual: train_loss,
            });
        }
        log::debug!(
            "epoch {epoch}: loss {train_loss:.5} val {val_metric:.4} test {test_metric:.4}"
        );
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metric,
            test_metric,
        });
        let better = match &best {
            None => true,
            Some((m, l, ..)) => val_metric > *m || (val_metric == *m && val_loss < *l),
        };
        if better {
            best = Some((val_metric, val_loss, epoch, params.clone(), test_metric));
        }
    }
    let (val_metric, val_loss, best_epoch, best_params, test_metric) =
        best.ok_or_else(|| Error::Config("max_epochs must be at least 1".into()))?;
    Ok(FitResult {
        gamma: model.gamma,
        best_epoch,
        initial_loss,
        val_metric,
        val_loss,
        test_metric,
        curve,
        params: Some(best_params),
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Cross-validation with per-fold threshold selection on the validation fold.
///
/// `progress` is called after each fold with its result.
pub fn cross_validate_with(
    data: &Dataset,
    config: &TrainConfig,
    mut progress: impl FnMut(&FoldResult),
) -> Result<TrainRun> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let model = config.model.clone().fit_to(data);
    model.validate()?;
    let classes = data.class_labels();
    let assignment = stratified_folds(&classes, config.folds, config.seed)?;
    let spectra = decompose_all(&data.graphs)?;
    let gammas = config.gammas();
    let mut inputs_by_gamma = Vec::with_capacity(gammas.len());
    for &g in &gammas {
        inputs_by_gamma.push(prepare_inputs(
            &data.graphs,
            &spectra,
            g,
            model.per_patch_gnn,
        )?);
    }

    let mut folds = Vec::with_capacity(config.folds);
    for fold in 0..config.folds {
        let split = split_for_fold(&assignment, config.folds, fold);
        let mut selected: Option<FitResult> = None;
        let mut candidates = Vec::new();
        for (gi, &gamma) in gammas.iter().enumerate() {
            let mut cfg = config.clone();
            cfg.model = model.clone();
            cfg.model.gamma = gamma;
            let fit = train(
                data,
                &inputs_by_gamma[gi],
                &cfg,
                &split,
                derive_seed(&[config.seed, fold as u64, gi as u64]),
            )?;
            candidates.push(GammaCandidate {
                gamma,
                val_metric: fit.val_metric,
                val_loss: fit.val_loss,
                test_metric: fit.test_metric,
            });
            let better = match &selected {
                None => true,
                Some(s) => {
                    fit.val_metric > s.val_metric
                        || (fit.val_metric == s.val_metric && fit.val_loss < s.val_loss)
                }
            };
            if better {
                selected = Some(fit);
            }
        }
        let result = FoldResult {
            fold,
            selected: selected.expect("gamma grid is nonempty"),
            candidates,
        };
        progress(&result);
        folds.push(result);
    }
    let fold_metrics: Vec<f64> = folds.iter().map(|f| f.selected.test_metric).collect();
    let (mean, std) = mean_std(&fold_metrics);
    let mut config = config.clone();
    config.model = model;
    Ok(TrainRun {
        config,
        dataset: data.name.clone(),
        metric: data.metric,
        fold_assignment: assignment,
        folds,
        fold_metrics,
        mean,
        std,
    })
}

pub fn cross_validate(data: &Dataset, config: &TrainConfig) -> Result<TrainRun> {
    cross_validate_with(data, config, |_| {})
}
