//! Alternating-minimization training.
//!
//! Each mini-batch runs three sequential sub-steps:
//! 1. encoder weights, biases and skip projections against the full
//!    combined objective, with the metric and classifier frozen;
//! 2. the pseudo-metric against the Mahalanobis term alone;
//! 3. the classifier weights against -lambda1 * MI alone.
//!
//! Every parameter group has its own Adam state. A fixed seed makes the
//! whole trajectory reproducible.

use std::time::Instant;

use crate::data::DataBatch;
use crate::error::{Error, Result};
use crate::losses::{self, CosineMode, LossBreakdown, PseudoMetric};
use crate::model::{CosmosModel, LossGrads, Skip};
use crate::optim::AdamState;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which loss terms are active. The Euclidean toggle contributes a fixed
/// identity-metric quadratic term; it accumulates into the `mahalanobis`
/// slot of the breakdown, of which it is the M = I special case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossToggles {
    pub euclidean: bool,
    pub cosine: bool,
    pub mahalanobis: bool,
    pub mutual_info: bool,
}

impl LossToggles {
    /// The full supervised COSMOS objective.
    pub fn cosmos() -> Self {
        LossToggles {
            euclidean: false,
            cosine: true,
            mahalanobis: true,
            mutual_info: true,
        }
    }

    /// Plain reconstruction autoencoder.
    pub fn euclidean_only() -> Self {
        LossToggles {
            euclidean: true,
            cosine: false,
            mahalanobis: false,
            mutual_info: false,
        }
    }

    pub fn any_reconstruction(&self) -> bool {
        self.euclidean || self.cosine || self.mahalanobis
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr_w: f64,
    pub lr_m: f64,
    pub lr_omega: f64,
    pub dropout_rate: f64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub convergence_tol: f64,
    pub lambda_decay: f64,
    pub cosine_mode: CosineMode,
    pub seed: u64,
    pub toggles: LossToggles,
    /// Consecutive quiet epochs before the loss-plateau stop fires.
    pub patience: usize,
    /// Row renormalization threshold for the learned metric.
    pub metric_cap: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda1: 0.01,
            lambda2: 1e-4,
            lr_w: 1e-3,
            lr_m: 1e-4,
            lr_omega: 1e-3,
            dropout_rate: 0.0,
            max_iters: 50,
            batch_size: 128,
            convergence_tol: 1e-6,
            lambda_decay: 0.0,
            cosine_mode: CosineMode::Standard,
            seed: 0,
            toggles: LossToggles::cosmos(),
            patience: 10,
            metric_cap: 1e3,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda_decay < 0.0 {
            return Err(Error::Invalid("lambdas and decay must be nonnegative".into()));
        }
        if self.lr_w <= 0.0 || self.lr_m <= 0.0 || self.lr_omega <= 0.0 {
            return Err(Error::Invalid("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > n_train {
            return Err(Error::Invalid(format!(
                "batch size {} invalid for {} training samples",
                self.batch_size, n_train
            )));
        }
        if self.convergence_tol <= 0.0 {
            return Err(Error::Invalid("convergence tolerance must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidDropout(self.dropout_rate));
        }
        if !self.toggles.any_reconstruction() {
            return Err(Error::Invalid(
                "at least one reconstruction loss must be enabled".into(),
            ));
        }
        Ok(())
    }
}

/// Decayed regularization constants for an epoch:
/// lambda / (1 + lambda_decay * epoch). Decay 0 recovers the constants.
pub fn lambda_schedule(hyper: &Hyperparams, epoch: usize) -> (f64, f64) {
    let f = 1.0 + hyper.lambda_decay * epoch as f64;
    (hyper.lambda1 / f, hyper.lambda2 / f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    /// |delta total| stayed under the tolerance for `patience` epochs.
    Converged,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::MaxIters => "max_iters",
            StopReason::Converged => "converged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub breakdown: LossBreakdown,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub best_val_accuracy: f64,
    pub best_epoch: Option<usize>,
    pub hyper: Hyperparams,
}

impl TrainReport {
    /// Line-delimited log, one record per epoch.
    pub fn log_lines(&self) -> String {
        let mut out = String::from("epoch,cosine,mahalanobis,mi,reg,total,val_acc,seconds\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.3}\n",
                r.epoch,
                r.breakdown.cosine,
                r.breakdown.mahalanobis,
                r.breakdown.mutual_info,
                r.breakdown.regularizer,
                r.breakdown.total,
                r.val_accuracy,
                r.seconds
            ));
        }
        out
    }
}

/// Adam state for every parameter group of one model.
#[derive(Debug, Clone)]
pub struct OptimizerBundle {
    weights: Vec<AdamState>,
    biases: Vec<AdamState>,
    skips: Vec<Option<AdamState>>,
    metric: AdamState,
    omega: AdamState,
}

impl OptimizerBundle {
    pub fn new(model: &CosmosModel, hyper: &Hyperparams) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..model.n_layers() {
            let w = &model.weights()[k];
            weights.push(AdamState::new(w.rows(), w.cols(), hyper.lr_w)?);
            biases.push(AdamState::new(1, model.biases()[k].cols(), hyper.lr_w)?);
        }
        let mut skips = Vec::new();
        for s in model.skips() {
            skips.push(match s {
                Skip::Identity => None,
                Skip::Projection(p) => Some(AdamState::new(p.rows(), p.cols(), hyper.lr_w)?),
            });
        }
        let d = model.metric().dim();
        Ok(OptimizerBundle {
            weights,
            biases,
            skips,
            metric: AdamState::new(d, d, hyper.lr_m)?,
            omega: AdamState::new(model.code_dim(), model.n_classes(), hyper.lr_omega)?,
        })
    }
}

fn step_seed(seed: u64, epoch: usize, batch: usize, sub_step: u64) -> u64 {
    Rng::derive(
        seed,
        (epoch as u64)
            .wrapping_mul(0x9e37)
            .wrapping_add(batch as u64)
            .wrapping_mul(8)
            .wrapping_add(sub_step),
    )
    .next_u64()
}

/// Loss terms and output-gradients for a batch under the active toggles.
/// Disabled terms report zero and cost nothing.
fn assemble_loss(
    model: &CosmosModel,
    x: &Tensor,
    reconstruction: &Tensor,
    probs: &losses::SoftPrediction,
    labels: &[usize],
    hyper: &Hyperparams,
    lambdas: (f64, f64),
    with_grads: bool,
) -> Result<(LossBreakdown, LossGrads)> {
    let (lambda1, lambda2) = lambdas;
    let n = x.rows();
    let dim = x.cols();
    let mut grad_recon = Tensor::zeros(n, dim);
    let mut grad_metric = Tensor::zeros(dim, dim);
    let mut grad_probs = Tensor::zeros(n, model.n_classes());

    let mut quad = 0.0;
    if hyper.toggles.euclidean {
        if with_grads {
            let (v, g) = losses::euclidean_loss_grad(x, reconstruction)?;
            quad += v;
            grad_recon.add_assign(&g)?;
        } else {
            quad += losses::euclidean_loss(x, reconstruction)?;
        }
    }
    if hyper.toggles.mahalanobis {
        if with_grads {
            // the metric is frozen wherever these grads are consumed
            let (v, gx) = losses::mahalanobis_loss_grad_xhat(x, reconstruction, model.metric())?;
            quad += v;
            grad_recon.add_assign(&gx)?;
        } else {
            quad += losses::mahalanobis_loss(x, reconstruction, model.metric())?;
        }
    }

    let mut cos = 0.0;
    if hyper.toggles.cosine {
        if with_grads {
            let (v, g) = losses::cosine_loss_grad_masked(x, reconstruction, hyper.cosine_mode)?;
            cos = v;
            grad_recon.add_assign(&g.scale(-1.0)?)?;
        } else {
            cos = losses::cosine_loss_masked(x, reconstruction, hyper.cosine_mode)?;
        }
    }

    let mut mi = 0.0;
    if hyper.toggles.mutual_info {
        if with_grads && lambda1 > 0.0 {
            let (v, g) = losses::soft_mutual_information_grad(probs.tensor(), labels)?;
            mi = v;
            grad_probs.add_assign(&g.scale(-lambda1)?)?;
        } else {
            mi = losses::soft_mutual_information(probs.tensor(), labels)?;
        }
    }

    let reg = model.weight_norm_sq();
    let breakdown = LossBreakdown::new(cos, quad, mi, reg, lambda1, lambda2);
    Ok((
        breakdown,
        LossGrads {
            wrt_reconstruction: grad_recon,
            wrt_metric: grad_metric,
            wrt_class_probs: grad_probs,
        },
    ))
}

fn check_breakdown_finite(b: &LossBreakdown, epoch: usize) -> Result<()> {
    for (value, term) in [
        (b.cosine, "cosine"),
        (b.mahalanobis, "mahalanobis"),
        (b.mutual_info, "mutual_info"),
        (b.regularizer, "regularizer"),
        (b.total, "total"),
    ] {
        if !value.is_finite() {
            return Err(Error::Divergence { epoch, term });
        }
    }
    Ok(())
}

/// Step 1: weights, biases and skip projections against the full objective.
fn step_update_weights(
    model: &mut CosmosModel,
    opt: &mut OptimizerBundle,
    x: &Tensor,
    labels: &[usize],
    hyper: &Hyperparams,
    lambdas: (f64, f64),
    seed: u64,
) -> Result<()> {
    let trace = model.forward(x, true, seed)?;
    let (_, mut lgrads) = assemble_loss(
        model,
        x,
        &trace.reconstruction,
        &trace.class_probs,
        labels,
        hyper,
        lambdas,
        true,
    )?;
    // metric and classifier are frozen in this step
    lgrads.wrt_metric = Tensor::zeros(lgrads.wrt_metric.rows(), lgrads.wrt_metric.cols());
    let grads = model.backward(&trace, &lgrads)?;
    let lambda2 = lambdas.1;
    for k in 0..model.n_layers() {
        let mut gw = grads.weights[k].clone();
        if lambda2 > 0.0 {
            gw.add_assign(&model.weights()[k].scale(2.0 * lambda2)?)?;
        }
        let new_w = opt.weights[k].step(&model.weights()[k], &gw)?;
        model.set_weight(k, new_w);
        let new_b = opt.biases[k].step(&model.biases()[k], &grads.biases[k])?;
        model.set_bias(k, new_b);
    }
    for j in 0..model.skips().len() {
        if let (Skip::Projection(p), Some(g), Some(state)) = (
            &model.skips()[j],
            &grads.skips[j],
            opt.skips[j].as_mut(),
        ) {
            let mut gs = g.clone();
            if lambda2 > 0.0 {
                gs.add_assign(&p.scale(2.0 * lambda2)?)?;
            }
            let new_p = state.step(p, &gs)?;
            model.set_skip_projection(j, new_p);
        }
    }
    Ok(())
}

/// Step 2: the pseudo-metric against the Mahalanobis term alone.
fn step_update_metric(
    model: &mut CosmosModel,
    opt: &mut OptimizerBundle,
    x: &Tensor,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<()> {
    if !hyper.toggles.mahalanobis {
        return Ok(());
    }
    let trace = model.forward(x, true, seed)?;
    let grad_m = losses::mahalanobis_metric_grad(x, &trace.reconstruction)?;
    let mut m = opt.metric.step(model.metric().tensor(), &grad_m)?;
    if m.max_abs() > hyper.metric_cap {
        for r in 0..m.rows() {
            let row = m.row_mut(r);
            let ma = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if ma > 0.0 {
                row.iter_mut().for_each(|v| *v /= ma);
            }
        }
    }
    model.set_metric(PseudoMetric::new(m)?);
    Ok(())
}

/// Step 3: the classifier weights against -lambda1 * MI alone.
fn step_update_omega(
    model: &mut CosmosModel,
    opt: &mut OptimizerBundle,
    x: &Tensor,
    labels: &[usize],
    hyper: &Hyperparams,
    lambda1: f64,
    seed: u64,
) -> Result<()> {
    if !hyper.toggles.mutual_info || lambda1 == 0.0 {
        return Ok(());
    }
    let trace = model.forward(x, true, seed)?;
    let (_, grad_mi) =
        losses::soft_mutual_information_grad(trace.class_probs.tensor(), labels)?;
    let grad_probs = grad_mi.scale(-lambda1)?;
    let grad_omega = model.classifier_grad(&trace, &grad_probs)?;
    let new_omega = opt.omega.step(model.omega(), &grad_omega)?;
    model.set_omega(new_omega);
    Ok(())
}

/// One epoch of the three-step loop over shuffled mini-batches.
///
/// The returned breakdown is a fresh eval-mode evaluation of the full
/// training set at the post-epoch parameters.
pub fn alt_min_epoch(
    model: &mut CosmosModel,
    opt: &mut OptimizerBundle,
    data: &DataBatch,
    hyper: &Hyperparams,
    epoch_index: usize,
) -> Result<LossBreakdown> {
    let lambdas = lambda_schedule(hyper, epoch_index);
    let mut order: Vec<usize> = (0..data.len()).collect();
    Rng::derive(hyper.seed, 0xba7c ^ epoch_index as u64).shuffle(&mut order);

    let promote = |e: Error| match e {
        Error::NonFinite(op) => Error::Divergence {
            epoch: epoch_index,
            term: op,
        },
        other => other,
    };

    for (bi, chunk) in order.chunks(hyper.batch_size).enumerate() {
        let batch = data.subset(chunk)?;
        step_update_weights(
            model,
            opt,
            &batch.x,
            &batch.y,
            hyper,
            lambdas,
            step_seed(hyper.seed, epoch_index, bi, 1),
        )
        .map_err(promote)?;
        step_update_metric(
            model,
            opt,
            &batch.x,
            hyper,
            step_seed(hyper.seed, epoch_index, bi, 2),
        )
        .map_err(promote)?;
        step_update_omega(
            model,
            opt,
            &batch.x,
            &batch.y,
            hyper,
            lambdas.0,
            step_seed(hyper.seed, epoch_index, bi, 3),
        )
        .map_err(promote)?;
    }

    let breakdown = evaluate_breakdown(model, data, hyper, epoch_index).map_err(promote)?;
    check_breakdown_finite(&breakdown, epoch_index)?;
    Ok(breakdown)
}

/// Eval-mode loss breakdown of a dataset under an epoch's lambdas.
pub fn evaluate_breakdown(
    model: &CosmosModel,
    data: &DataBatch,
    hyper: &Hyperparams,
    epoch_index: usize,
) -> Result<LossBreakdown> {
    let trace = model.forward(&data.x, false, 0)?;
    let (breakdown, _) = assemble_loss(
        model,
        &data.x,
        &trace.reconstruction,
        &trace.class_probs,
        &data.y,
        hyper,
        lambda_schedule(hyper, epoch_index),
        false,
    )?;
    Ok(breakdown)
}

/// Classification accuracy of the model's own classifier head.
pub fn head_accuracy(model: &CosmosModel, data: &DataBatch) -> Result<f64> {
    let trace = model.forward(&data.x, false, 0)?;
    let probs = trace.class_probs.tensor();
    let correct = (0..data.len())
        .filter(|&r| argmax(probs.row(r)) == data.y[r])
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Head accuracy under the best greedy bijection between predicted and true
/// classes. MI never pins the class order (any permutation has the same
/// mutual information), so validation scoring of MI-trained models has to be
/// permutation-blind.
pub fn aligned_head_accuracy(model: &CosmosModel, data: &DataBatch) -> Result<f64> {
    let trace = model.forward(&data.x, false, 0)?;
    let probs = trace.class_probs.tensor();
    let c = model.n_classes();
    let mut confusion = vec![0usize; c * c];
    for r in 0..data.len() {
        confusion[argmax(probs.row(r)) * c + data.y[r]] += 1;
    }
    // greedy assignment: repeatedly take the largest unused cell
    let mut used_pred = vec![false; c];
    let mut used_true = vec![false; c];
    let mut matched = 0usize;
    for _ in 0..c {
        let mut best = 0usize;
        let mut best_cell = None;
        for j in 0..c {
            if used_pred[j] {
                continue;
            }
            for k in 0..c {
                if used_true[k] {
                    continue;
                }
                if best_cell.is_none() || confusion[j * c + k] > best {
                    best = confusion[j * c + k];
                    best_cell = Some((j, k));
                }
            }
        }
        if let Some((j, k)) = best_cell {
            used_pred[j] = true;
            used_true[k] = true;
            matched += confusion[j * c + k];
        }
    }
    Ok(matched as f64 / data.len() as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Run the alternating loop until max_iters or loss plateau; returns the
/// validation-best model and the full report.
pub fn train(
    model: CosmosModel,
    train_data: &DataBatch,
    val_data: &DataBatch,
    hyper: &Hyperparams,
) -> Result<(CosmosModel, TrainReport)> {
    hyper.validate(train_data.len())?;
    if train_data.feature_dim() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "train(data)",
            lhs: (train_data.len(), train_data.feature_dim()),
            rhs: (train_data.len(), model.input_dim()),
        });
    }
    let mut model = model;
    let mut opt = OptimizerBundle::new(&model, hyper)?;
    let mut history = Vec::new();
    let mut best_model = model.clone();
    let mut best_val = 0.0f64;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut quiet_epochs = 0usize;
    let mut prev_total: Option<f64> = None;
    let mut stop_reason = StopReason::MaxIters;

    for epoch in 0..hyper.max_iters {
        let started = Instant::now();
        let breakdown = alt_min_epoch(&mut model, &mut opt, train_data, hyper, epoch)?;
        let val_accuracy = aligned_head_accuracy(&model, val_data)?;
        history.push(EpochRecord {
            epoch,
            breakdown,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        });
        // checkpoint on the validation objective itself; head accuracy is
        // meaningless when the MI term is off and plateaus early otherwise
        let score = -evaluate_breakdown(&model, val_data, hyper, epoch)?.total;
        if score > best_score {
            best_score = score;
            best_val = val_accuracy;
            best_epoch = Some(epoch);
            best_model = model.clone();
        }
        if let Some(prev) = prev_total {
            if (breakdown.total - prev).abs() < hyper.convergence_tol {
                quiet_epochs += 1;
            } else {
                quiet_epochs = 0;
            }
            if quiet_epochs >= hyper.patience {
                stop_reason = StopReason::Converged;
                break;
            }
        }
        prev_total = Some(breakdown.total);
    }

    if best_epoch.is_none() {
        best_model = model;
    }
    Ok((
        best_model,
        TrainReport {
            history,
            stop_reason,
            best_val_accuracy: best_val.max(0.0),
            best_epoch,
            hyper: hyper.clone(),
        },
    ))
}

/// Short-budget sweep over (lambda1, lambda2) pairs; best validation
/// accuracy wins, ties broken by smaller lambda1+lambda2, then grid order.
/// A diverging point scores zero instead of failing the sweep.
pub fn grid_search_lambdas<F>(
    model_factory: F,
    train_data: &DataBatch,
    val_data: &DataBatch,
    base: &Hyperparams,
    grid: &[(f64, f64)],
    budget_epochs: usize,
) -> Result<Hyperparams>
where
    F: Fn() -> Result<CosmosModel> + Sync,
{
    if grid.is_empty() {
        return Err(Error::Invalid("lambda grid is empty".into()));
    }
    use rayon::prelude::*;
    let scores: Vec<f64> = grid
        .par_iter()
        .map(|&(l1, l2)| {
            let mut hyper = base.clone();
            hyper.lambda1 = l1;
            hyper.lambda2 = l2;
            hyper.max_iters = budget_epochs;
            match model_factory()
                .and_then(|m| train(m, train_data, val_data, &hyper))
            {
                Ok((_, report)) => report.best_val_accuracy,
                Err(_) => 0.0,
            }
        })
        .collect();

    let mut best = 0usize;
    for i in 1..grid.len() {
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best]
                && grid[i].0 + grid[i].1 < grid[best].0 + grid[best].1);
        if better {
            best = i;
        }
    }
    let mut out = base.clone();
    out.lambda1 = grid[best].0;
    out.lambda2 = grid[best].1;
    Ok(out)
}
