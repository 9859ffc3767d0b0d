//! The bi-level training loop: at every iteration the transition logits Θ
//! take a meta-gradient step through a one-step virtual update Ŵ(T(Θ)) of
//! the classifier, then the classifier takes an SGD step against the
//! refreshed transition matrix.
//!
//! The meta loss is plain CE on the clean head f — the transition layer is
//! never applied to meta data.

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, estimation_error};
use crate::mlp::{forward, forward_jvp, init_mlp, predict, sgd_step, MlpParams};
use crate::objective::{check_divergence, noisy_loss_and_grads, BatchScheduler, CE_EPS};
use crate::rng::SeededRng;
use crate::transition::{from_logits, grad_wrt_logits, TransitionState};
use crate::Matrix;

// rng stream ids shared with the S-Model trainer so the β = 0 trajectory is
// bit-identical to S-Model with a frozen transition layer
pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_TRAIN_BATCH: u64 = 1;
pub(crate) const STREAM_META_BATCH: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitSource {
    Glc,
    Forward,
    Uniform,
    IdentityIsh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypergradMode {
    Exact,
    FdTrick,
}

/// Step size used by the fd-trick mode for the weight-space perturbation.
pub const FD_TRICK_EPS: f64 = 1e-4;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    /// Inner / classifier step size (α).
    pub alpha: f64,
    /// Meta step size for the transition logits (β).
    pub beta: f64,
    /// Train mini-batch size (n).
    pub train_batch: usize,
    /// Meta mini-batch size (m).
    pub meta_batch: usize,
    /// Total iterations.
    pub iters: usize,
    pub seed: u64,
    pub init_source: InitSource,
    pub hypergrad_mode: HypergradMode,
    /// Trace logging interval in iterations.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            beta: 0.1,
            train_batch: 64,
            meta_batch: 16,
            iters: 1000,
            seed: 0,
            init_source: InitSource::Glc,
            hypergrad_mode: HypergradMode::Exact,
            log_every: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::invalid_config("step sizes must be nonnegative"));
        }
        if self.train_batch == 0 || self.meta_batch == 0 {
            return Err(Error::invalid_config("batch sizes must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid_config("log_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MlpConfig {
    /// Hidden layer widths; input and class dims come from the data.
    pub hidden: Vec<usize>,
    pub init_scale: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![32, 32],
            init_scale: 0.5,
        }
    }
}

impl MlpConfig {
    pub fn layer_dims(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(classes);
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    pub noisy_loss: f64,
    pub meta_loss: f64,
    pub est_error: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub entries: Vec<TraceEntry>,
}

impl TrainTrace {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "iter,noisy_loss,meta_loss,est_error,test_acc")?;
        for e in &self.entries {
            let opt = |v: Option<f64>| v.map(crate::io::fmt_f64).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{}",
                e.iter,
                crate::io::fmt_f64(e.noisy_loss),
                crate::io::fmt_f64(e.meta_loss),
                opt(e.est_error),
                opt(e.test_acc)
            )?;
        }
        Ok(())
    }
}

/// Mean CE of the clean head on a batch, with its gradient w.r.t. W.
fn meta_loss_and_grads(
    params: &MlpParams,
    x: &Matrix,
    labels: &[usize],
) -> Result<(f64, Vec<Matrix>)> {
    crate::objective::ce_loss_and_grads(params, x, labels)
}

/// One-step virtual image of the classifier weights as a function of T:
/// Ŵ = W − α·∇_W ℓ̃(W, T) on the given train batch.
pub fn virtual_update(
    params: &MlpParams,
    t_state: &TransitionState,
    x: &Matrix,
    labels: &[usize],
    alpha: f64,
) -> Result<MlpParams> {
    let grads = noisy_loss_and_grads(params, t_state.matrix(), x, labels)?;
    sgd_step(params, &grads.weight_grads, alpha)
}

/// Gradient of the meta objective g(Θ) = meta-batch CE of f(·; Ŵ(T(Θ)))
/// with respect to the transition logits. Returns (∇Θ, meta loss at Ŵ).
///
/// Exact mode computes the mixed second derivative analytically through a
/// forward-mode JVP of the train-batch softmax outputs along the meta
/// gradient direction. Fd-trick mode central-differences the train-batch
/// T-gradient at W ± r·v.
pub fn hypergradient(
    t_state: &TransitionState,
    params: &MlpParams,
    train_x: &Matrix,
    train_y: &[usize],
    meta_x: &Matrix,
    meta_y: &[usize],
    alpha: f64,
    mode: HypergradMode,
) -> Result<(Matrix, f64)> {
    let c = t_state.classes();
    if train_y.is_empty() || meta_y.is_empty() {
        return Err(Error::invalid_input("empty batch"));
    }
    // virtual step
    let train_grads = noisy_loss_and_grads(params, t_state.matrix(), train_x, train_y)?;
    let virtual_params = sgd_step(params, &train_grads.weight_grads, alpha)?;
    // v = ∇_Ŵ L_M at the virtual point; meta loss uses the clean head only
    let (meta_loss, v) = meta_loss_and_grads(&virtual_params, meta_x, meta_y)?;
    if alpha == 0.0 {
        // Ŵ does not depend on Θ
        return Ok((Matrix::zeros(c, c), meta_loss));
    }
    let dtheta = match mode {
        HypergradMode::Exact => {
            let dt = exact_hypergrad_wrt_t(t_state.matrix(), params, train_x, train_y, &v, alpha)?;
            grad_wrt_logits(t_state, &dt)?
        }
        HypergradMode::FdTrick => {
            let mut vnorm_sq = 0.0;
            for g in &v {
                let f = g.frobenius_norm();
                vnorm_sq += f * f;
            }
            let vnorm = vnorm_sq.sqrt();
            let r = FD_TRICK_EPS / (vnorm + FD_TRICK_EPS);
            let mut plus = params.clone();
            let mut minus = params.clone();
            for l in 0..params.num_layers() {
                plus.weights[l].axpy(r, &v[l])?;
                minus.weights[l].axpy(-r, &v[l])?;
            }
            let gp = noisy_loss_and_grads(&plus, t_state.matrix(), train_x, train_y)?;
            let gm = noisy_loss_and_grads(&minus, t_state.matrix(), train_x, train_y)?;
            let mut dt = gp.transition_grad.clone();
            dt.axpy(-1.0, &gm.transition_grad)?;
            dt.scale(-alpha / (2.0 * r));
            grad_wrt_logits(t_state, &dt)?
        }
    };
    Ok((dtheta, meta_loss))
}

/// Analytic ∇_T [ g(Θ) ] = −α·∇_T [ v · ∇_W ℓ̃(W, T) ].
///
/// With q_i = (Tᵀf_i)_{y_i}, J_{ik} = v·∇_W f_{ik} (a JVP along v), and
/// u_i = Σ_k T_{k,y_i} J_{ik}:
///   ∂/∂T_{k,j} = (α/n)·Σ_{i: y_i=j} ( J_{ik}/q_i − u_i f_{ik}/q_i² ).
fn exact_hypergrad_wrt_t(
    t: &Matrix,
    params: &MlpParams,
    train_x: &Matrix,
    train_y: &[usize],
    v: &[Matrix],
    alpha: f64,
) -> Result<Matrix> {
    let c = t.rows();
    let n = train_y.len();
    let (probs, jvp) = forward_jvp(params, train_x, v)?;
    let noisy_posteriors = crate::transition::apply(t, &probs)?;
    let mut dt = Matrix::zeros(c, c);
    let scale = alpha / n as f64;
    for (i, &y) in train_y.iter().enumerate() {
        let q = noisy_posteriors.get(i, y);
        if q <= CE_EPS {
            continue;
        }
        let f = probs.row(i);
        let j = jvp.row(i);
        let mut u = 0.0;
        for k in 0..c {
            u += t.get(k, y) * j[k];
        }
        for k in 0..c {
            let contrib = scale * (j[k] / q - u * f[k] / (q * q));
            dt.set(k, y, dt.get(k, y) + contrib);
        }
    }
    Ok(dt)
}

/// Θ' = Θ − β·hypergradient. Returns the new state plus the meta loss seen.
pub fn meta_step(
    t_state: &TransitionState,
    params: &MlpParams,
    train_x: &Matrix,
    train_y: &[usize],
    meta_x: &Matrix,
    meta_y: &[usize],
    alpha: f64,
    beta: f64,
    mode: HypergradMode,
) -> Result<(TransitionState, f64)> {
    let (dtheta, meta_loss) = hypergradient(
        t_state, params, train_x, train_y, meta_x, meta_y, alpha, mode,
    )?;
    let mut logits = t_state.logits().clone();
    logits.axpy(-beta, &dtheta)?;
    Ok((from_logits(&logits)?, meta_loss))
}

/// W' = W − α·∇_W ℓ̃(W, T) at the current (freshly updated) T.
/// Returns (new params, batch noisy loss).
pub fn classifier_step(
    params: &MlpParams,
    t_state: &TransitionState,
    x: &Matrix,
    labels: &[usize],
    alpha: f64,
) -> Result<(MlpParams, f64)> {
    let grads = noisy_loss_and_grads(params, t_state.matrix(), x, labels)?;
    Ok((sgd_step(params, &grads.weight_grads, alpha)?, grads.loss))
}

pub struct MetaRunOutput {
    pub params: MlpParams,
    pub transition: TransitionState,
    pub trace: TrainTrace,
}

/// Runs the full alternating loop from a given Θ initialization. Batch
/// schedules, weight init, and meta sampling use independent rng streams
/// derived from the config seed, so two runs with the same config produce
/// identical traces.
pub fn run_meta_adaptation(
    dataset: &LabeledDataset,
    config: &TrainConfig,
    mlp_config: &MlpConfig,
    theta_init: &Matrix,
    true_t: Option<&Matrix>,
) -> Result<MetaRunOutput> {
    config.validate()?;
    let train_idx = dataset.indices_of(Split::Train);
    let meta_idx = dataset.indices_of(Split::Meta);
    if train_idx.is_empty() {
        return Err(Error::invalid_config("dataset has no train split"));
    }
    if meta_idx.is_empty() {
        return Err(Error::invalid_config("dataset has no meta split"));
    }
    let c = dataset.num_classes;
    let dims = mlp_config.layer_dims(dataset.feature_dim(), c);
    let mut init_rng = SeededRng::derive(config.seed, STREAM_INIT);
    let mut params = init_mlp(&dims, mlp_config.init_scale, &mut init_rng)?;
    let mut t_state = from_logits(theta_init)?;
    if t_state.classes() != c {
        return Err(Error::shape("theta_init class count mismatch"));
    }

    let mut train_sched = BatchScheduler::new(
        train_idx.clone(),
        SeededRng::derive(config.seed, STREAM_TRAIN_BATCH),
    )?;
    let mut meta_sched = BatchScheduler::new(
        meta_idx.clone(),
        SeededRng::derive(config.seed, STREAM_META_BATCH),
    )?;

    let test_idx = dataset.indices_of(Split::Test);
    let test_x = dataset.features_at(&test_idx);
    let test_y = dataset.clean_labels_at(&test_idx);

    let mut trace = TrainTrace::default();
    let mut log = |iter: usize,
                   noisy_loss: f64,
                   meta_loss: f64,
                   params: &MlpParams,
                   t_state: &TransitionState|
     -> Result<()> {
        let est_error = true_t.map(|t| estimation_error(t, t_state.matrix()).unwrap());
        let test_acc = if test_idx.is_empty() {
            None
        } else {
            let preds = predict(params, &test_x)?;
            Some(accuracy(&preds, &test_y)?)
        };
        trace.entries.push(TraceEntry {
            iter,
            noisy_loss,
            meta_loss,
            est_error,
            test_acc,
        });
        Ok(())
    };

    for iter in 0..config.iters {
        let train_batch = train_sched.next_batch(config.train_batch);
        let meta_batch = meta_sched.next_batch(config.meta_batch);
        let bx = dataset.features_at(&train_batch);
        let by = dataset.training_labels_at(&train_batch);
        let mx = dataset.features_at(&meta_batch);
        let my = dataset.clean_labels_at(&meta_batch);

        let meta_loss = if config.beta > 0.0 && config.alpha > 0.0 {
            let (next_t, meta_loss) = meta_step(
                &t_state,
                &params,
                &bx,
                &by,
                &mx,
                &my,
                config.alpha,
                config.beta,
                config.hypergrad_mode,
            )?;
            t_state = next_t;
            meta_loss
        } else {
            meta_loss_and_grads(&params, &mx, &my)?.0
        };
        let (next_params, noisy_loss) =
            classifier_step(&params, &t_state, &bx, &by, config.alpha)?;
        params = next_params;
        check_divergence(noisy_loss, iter)?;
        check_divergence(meta_loss, iter)?;

        if (iter + 1) % config.log_every == 0 || iter + 1 == config.iters {
            log(iter + 1, noisy_loss, meta_loss, &params, &t_state)?;
        }
    }
    Ok(MetaRunOutput {
        params,
        transition: t_state,
        trace,
    })
}

/// Direct central finite difference of the meta objective g(Θ), used as the
/// independent oracle for the hypergradient. Stays on the definition: for
/// each Θ entry, rebuild T, redo the virtual step, and evaluate the meta CE.
pub fn meta_objective(
    theta: &Matrix,
    params: &MlpParams,
    train_x: &Matrix,
    train_y: &[usize],
    meta_x: &Matrix,
    meta_y: &[usize],
    alpha: f64,
) -> Result<f64> {
    let state = from_logits(theta)?;
    let virtual_params = virtual_update(params, &state, train_x, train_y, alpha)?;
    let cache = forward(&virtual_params, meta_x)?;
    let mut loss = 0.0;
    for (i, &y) in meta_y.iter().enumerate() {
        loss += -cache.probs.get(i, y).max(CE_EPS).ln();
    }
    Ok(loss / meta_y.len() as f64)
}
