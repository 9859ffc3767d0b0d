//! Baseline training schemes and transition-matrix estimators: plain CE on
//! noisy labels, fine-tuning on the meta split, anchor-point estimation
//! (Forward), clean-set averaging (GLC), and the jointly trained S-Model.

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::meta::{MlpConfig, STREAM_INIT, STREAM_META_BATCH, STREAM_TRAIN_BATCH};
use crate::mlp::{forward, init_mlp, sgd_step, MlpParams};
use crate::objective::{
    ce_loss_and_grads, check_divergence, noisy_loss_and_grads, BatchScheduler,
};
use crate::rng::SeededRng;
use crate::transition::{
    from_logits, grad_wrt_logits, logits_from_estimate, TransitionState, DEFAULT_LOGIT_EPS,
};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ForwardAnchor,
    Glc,
    SModel,
    Oracle,
}

#[derive(Debug, Clone)]
pub struct EstimatorOutput {
    pub t_hat: Matrix,
    pub provenance: Provenance,
    /// Anchor sample indices (Forward) per class.
    pub anchors: Option<Vec<usize>>,
    /// Per-class meta sample counts (GLC).
    pub class_counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.1,
            epochs: 30,
            batch: 64,
        }
    }
}

fn plain_sgd(
    x: &Matrix,
    labels: &[usize],
    mut params: MlpParams,
    lr: f64,
    steps: usize,
    batch: usize,
    sched_rng: SeededRng,
) -> Result<(MlpParams, Vec<f64>)> {
    let mut sched = BatchScheduler::new((0..labels.len()).collect(), sched_rng)?;
    let mut losses = Vec::with_capacity(steps);
    for iter in 0..steps {
        let idx = sched.next_batch(batch);
        let bx = Matrix::from_fn(idx.len(), x.cols(), |i, j| x.get(idx[i], j));
        let by: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (loss, grads) = ce_loss_and_grads(&params, &bx, &by)?;
        check_divergence(loss, iter)?;
        params = sgd_step(&params, &grads, lr)?;
        losses.push(loss);
    }
    Ok((params, losses))
}

fn steps_for(epochs: usize, n: usize, batch: usize) -> usize {
    epochs * (n / batch.min(n)).max(1)
}

/// Mini-batch SGD with CE loss on the (noisy) training split.
pub fn train_ce(
    dataset: &LabeledDataset,
    mlp_config: &MlpConfig,
    cfg: &SgdConfig,
    seed: u64,
) -> Result<(MlpParams, Vec<f64>)> {
    let train_idx = dataset.indices_of(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::invalid_config("dataset has no train split"));
    }
    let dims = mlp_config.layer_dims(dataset.feature_dim(), dataset.num_classes);
    let params = init_mlp(
        &dims,
        mlp_config.init_scale,
        &mut SeededRng::derive(seed, STREAM_INIT),
    )?;
    let x = dataset.features_at(&train_idx);
    let y = dataset.training_labels_at(&train_idx);
    plain_sgd(
        &x,
        &y,
        params,
        cfg.lr,
        steps_for(cfg.epochs, y.len(), cfg.batch),
        cfg.batch,
        SeededRng::derive(seed, STREAM_TRAIN_BATCH),
    )
}

/// Continues CE SGD on the clean meta split only.
pub fn finetune(
    params: &MlpParams,
    dataset: &LabeledDataset,
    cfg: &SgdConfig,
    seed: u64,
) -> Result<(MlpParams, Vec<f64>)> {
    let meta_idx = dataset.indices_of(Split::Meta);
    if meta_idx.is_empty() {
        return Err(Error::invalid_config("dataset has no meta split"));
    }
    let x = dataset.features_at(&meta_idx);
    let y = dataset.clean_labels_at(&meta_idx);
    plain_sgd(
        &x,
        &y,
        params.clone(),
        cfg.lr,
        steps_for(cfg.epochs, y.len(), cfg.batch),
        cfg.batch,
        SeededRng::derive(seed, STREAM_META_BATCH),
    )
}

fn renormalize_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let sum: f64 = m.row(i).iter().sum();
        if sum > 0.0 {
            for v in m.row_mut(i) {
                *v /= sum;
            }
        }
    }
}

/// Anchor-point estimator: the anchor for class i is the training sample
/// maximizing p̂(Ỹ=i|x); row i of T̂ is the full softmax output there.
/// Ties break to the lowest sample index.
pub fn estimate_forward(
    params_ce: &MlpParams,
    train_features: &Matrix,
) -> Result<EstimatorOutput> {
    if train_features.rows() == 0 {
        return Err(Error::invalid_config("empty train set"));
    }
    let probs = forward(params_ce, train_features)?.probs;
    let c = probs.cols();
    let mut anchors = Vec::with_capacity(c);
    let mut t_hat = Matrix::zeros(c, c);
    for class in 0..c {
        let mut best = 0usize;
        for i in 1..probs.rows() {
            if probs.get(i, class) > probs.get(best, class) {
                best = i;
            }
        }
        anchors.push(best);
        t_hat.row_mut(class).copy_from_slice(probs.row(best));
    }
    renormalize_rows(&mut t_hat);
    Ok(EstimatorOutput {
        t_hat,
        provenance: Provenance::ForwardAnchor,
        anchors: Some(anchors),
        class_counts: None,
    })
}

/// Clean-set estimator: row i of T̂ is the mean softmax output over meta
/// samples with clean label i.
pub fn estimate_glc(
    params_ce: &MlpParams,
    meta_features: &Matrix,
    meta_labels: &[usize],
) -> Result<EstimatorOutput> {
    let c = params_ce.num_classes();
    let probs = forward(params_ce, meta_features)?.probs;
    let mut t_hat = Matrix::zeros(c, c);
    let mut counts = vec![0usize; c];
    for (i, &y) in meta_labels.iter().enumerate() {
        if y >= c {
            return Err(Error::invalid_input(format!("meta label {y} out of range")));
        }
        counts[y] += 1;
        for j in 0..c {
            t_hat.set(y, j, t_hat.get(y, j) + probs.get(i, j));
        }
    }
    for (class, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::Coverage { class });
        }
        for v in t_hat.row_mut(class) {
            *v /= count as f64;
        }
    }
    renormalize_rows(&mut t_hat);
    Ok(EstimatorOutput {
        t_hat,
        provenance: Provenance::Glc,
        anchors: None,
        class_counts: Some(counts),
    })
}

pub struct SModelOutput {
    pub params: MlpParams,
    pub transition: TransitionState,
    /// Batch noisy loss at every step.
    pub losses: Vec<f64>,
}

/// Joint SGD on the empirical noisy risk: every step updates both the
/// classifier weights (rate `lr_w`) and the transition logits (rate
/// `lr_theta`) from the same batch gradients. No meta data involved; the
/// transition layer is dropped at prediction time.
///
/// Uses the same seed-derived init and batch streams as the meta trainer,
/// so lr_theta = 0 here reproduces the meta trainer's β = 0 trajectory
/// bit for bit.
pub fn train_smodel(
    dataset: &LabeledDataset,
    mlp_config: &MlpConfig,
    theta_init: &Matrix,
    lr_w: f64,
    lr_theta: f64,
    iters: usize,
    batch: usize,
    seed: u64,
) -> Result<SModelOutput> {
    let train_idx = dataset.indices_of(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::invalid_config("dataset has no train split"));
    }
    let dims = mlp_config.layer_dims(dataset.feature_dim(), dataset.num_classes);
    let mut params = init_mlp(
        &dims,
        mlp_config.init_scale,
        &mut SeededRng::derive(seed, STREAM_INIT),
    )?;
    let mut t_state = from_logits(theta_init)?;
    if t_state.classes() != dataset.num_classes {
        return Err(Error::shape("theta_init class count mismatch"));
    }
    let mut sched = BatchScheduler::new(
        train_idx,
        SeededRng::derive(seed, STREAM_TRAIN_BATCH),
    )?;
    let mut losses = Vec::with_capacity(iters);
    for iter in 0..iters {
        let idx = sched.next_batch(batch);
        let bx = dataset.features_at(&idx);
        let by = dataset.training_labels_at(&idx);
        let out = noisy_loss_and_grads(&params, t_state.matrix(), &bx, &by)?;
        check_divergence(out.loss, iter)?;
        params = sgd_step(&params, &out.weight_grads, lr_w)?;
        if lr_theta > 0.0 {
            let dtheta = grad_wrt_logits(&t_state, &out.transition_grad)?;
            let mut logits = t_state.logits().clone();
            logits.axpy(-lr_theta, &dtheta)?;
            t_state = from_logits(&logits)?;
        }
        losses.push(out.loss);
    }
    Ok(SModelOutput {
        params,
        transition: t_state,
        losses,
    })
}

/// Second stage of the Forward/GLC pipelines: train a classifier from
/// scratch against a frozen estimated transition matrix (the meta trainer's
/// classifier step with Θ frozen at log T̂).
pub fn train_with_fixed_transition(
    dataset: &LabeledDataset,
    mlp_config: &MlpConfig,
    t_hat: &Matrix,
    lr: f64,
    iters: usize,
    batch: usize,
    seed: u64,
) -> Result<SModelOutput> {
    let theta = logits_from_estimate(t_hat, DEFAULT_LOGIT_EPS)?;
    train_smodel(dataset, mlp_config, &theta, lr, 0.0, iters, batch, seed)
}
