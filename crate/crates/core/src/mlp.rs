//! Fully connected ReLU network with a softmax head, bias-free, with
//! analytic forward/backward passes and a forward-mode JVP used by the
//! meta trainer's exact hypergradient.

use crate::error::{Error, Result};
use crate::matrix::softmax_rows;
use crate::rng::SeededRng;
use crate::Matrix;

/// Weights of a depth-d MLP: `weights[l]` has shape `dims[l+1] x dims[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Matrix>,
}

/// Per-layer bookkeeping from a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// activations[0] is the input batch; activations[l] the post-ReLU
    /// output of hidden layer l.
    pub activations: Vec<Matrix>,
    /// pre_activations[l] is the linear output of layer l.
    pub pre_activations: Vec<Matrix>,
    /// Row-stochastic softmax probabilities, batch x classes.
    pub probs: Matrix,
}

impl MlpParams {
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn zeros_like(&self) -> Vec<Matrix> {
        self.weights
            .iter()
            .map(|w| Matrix::zeros(w.rows(), w.cols()))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

/// Weights i.i.d. uniform in [−scale, scale], deterministic per seed.
pub fn init_mlp(layer_dims: &[usize], scale: f64, rng: &mut SeededRng) -> Result<MlpParams> {
    if layer_dims.len() < 2 {
        return Err(Error::invalid_config(
            "layer_dims needs at least input and output dims",
        ));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid_config("zero-sized layer"));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::invalid_config("init scale must be nonnegative"));
    }
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    for l in 0..layer_dims.len() - 1 {
        let (out_d, in_d) = (layer_dims[l + 1], layer_dims[l]);
        let mut w = Matrix::zeros(out_d, in_d);
        for i in 0..out_d {
            for j in 0..in_d {
                w.set(i, j, rng.uniform_in(-scale, scale));
            }
        }
        weights.push(w);
    }
    Ok(MlpParams {
        layer_dims: layer_dims.to_vec(),
        weights,
    })
}

/// Hidden layers apply ReLU(z W^T); the final layer is linear then softmax.
pub fn forward(params: &MlpParams, x: &Matrix) -> Result<ForwardCache> {
    if x.cols() != params.input_dim() {
        return Err(Error::shape(format!(
            "input dim {} != {}",
            x.cols(),
            params.input_dim()
        )));
    }
    let num_layers = params.num_layers();
    let mut activations = vec![x.clone()];
    let mut pre_activations = Vec::with_capacity(num_layers);
    for (l, w) in params.weights.iter().enumerate() {
        let z = activations[l].matmul_transpose(w)?;
        pre_activations.push(z.clone());
        if l + 1 < num_layers {
            activations.push(z.map(|v| if v > 0.0 { v } else { 0.0 }));
        }
    }
    let mut probs = pre_activations.last().unwrap().clone();
    softmax_rows(&mut probs)?;
    Ok(ForwardCache {
        activations,
        pre_activations,
        probs,
    })
}

/// Backprop for the batch loss whose gradient w.r.t. the softmax
/// probabilities is `dloss_dprobs`. Chains through the softmax Jacobian
/// diag(f) − f fᵀ per row and the ReLU mask; returns one gradient matrix
/// per layer. ReLU subgradient at 0 is 0.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    dloss_dprobs: &Matrix,
) -> Result<Vec<Matrix>> {
    let n = cache.probs.rows();
    let c = cache.probs.cols();
    if dloss_dprobs.rows() != n || dloss_dprobs.cols() != c {
        return Err(Error::shape("upstream gradient shape mismatch"));
    }
    if cache.activations[0].cols() != params.input_dim() {
        return Err(Error::shape("stale cache"));
    }
    // softmax Jacobian: dz_j = f_j (dp_j − f·dp)
    let mut dz = Matrix::zeros(n, c);
    for i in 0..n {
        let f = cache.probs.row(i);
        let dp = dloss_dprobs.row(i);
        let mut inner = 0.0;
        for j in 0..c {
            inner += f[j] * dp[j];
        }
        let out = dz.row_mut(i);
        for j in 0..c {
            out[j] = f[j] * (dp[j] - inner);
        }
    }
    let num_layers = params.num_layers();
    let mut grads = vec![Matrix::zeros(0, 0); num_layers];
    for l in (0..num_layers).rev() {
        grads[l] = dz.transpose().matmul(&cache.activations[l])?;
        if l > 0 {
            let da = dz.matmul(&params.weights[l])?;
            let z_prev = &cache.pre_activations[l - 1];
            dz = Matrix::from_fn(da.rows(), da.cols(), |i, j| {
                if z_prev.get(i, j) > 0.0 {
                    da.get(i, j)
                } else {
                    0.0
                }
            });
        }
    }
    Ok(grads)
}

/// Forward pass together with the directional derivative of the softmax
/// output along a weight-space direction `tangent` (one matrix per layer).
/// Returns (probs, d probs / d t where W(t) = W + t·tangent at t = 0).
pub fn forward_jvp(
    params: &MlpParams,
    x: &Matrix,
    tangent: &[Matrix],
) -> Result<(Matrix, Matrix)> {
    if tangent.len() != params.num_layers() {
        return Err(Error::shape("tangent layer count mismatch"));
    }
    let num_layers = params.num_layers();
    let mut a = x.clone();
    let mut ta = Matrix::zeros(x.rows(), x.cols());
    let mut z_last = Matrix::zeros(0, 0);
    let mut tz_last = Matrix::zeros(0, 0);
    for l in 0..num_layers {
        let w = &params.weights[l];
        let v = &tangent[l];
        if v.rows() != w.rows() || v.cols() != w.cols() {
            return Err(Error::shape("tangent shape mismatch"));
        }
        let z = a.matmul_transpose(w)?;
        let mut tz = ta.matmul_transpose(w)?;
        tz.axpy(1.0, &a.matmul_transpose(v)?)?;
        if l + 1 < num_layers {
            ta = Matrix::from_fn(tz.rows(), tz.cols(), |i, j| {
                if z.get(i, j) > 0.0 {
                    tz.get(i, j)
                } else {
                    0.0
                }
            });
            a = z.map(|val| if val > 0.0 { val } else { 0.0 });
        } else {
            z_last = z;
            tz_last = tz;
        }
    }
    let mut probs = z_last.clone();
    softmax_rows(&mut probs)?;
    // d softmax: tf_j = f_j (tz_j − f·tz)
    let tf = {
        let n = probs.rows();
        let c = probs.cols();
        let mut tf = Matrix::zeros(n, c);
        for i in 0..n {
            let f = probs.row(i);
            let tz = tz_last.row(i);
            let mut inner = 0.0;
            for j in 0..c {
                inner += f[j] * tz[j];
            }
            let out = tf.row_mut(i);
            for j in 0..c {
                out[j] = f[j] * (tz[j] - inner);
            }
        }
        tf
    };
    Ok((probs, tf))
}

/// W ← W − lr·grad, elementwise; returns new params.
pub fn sgd_step(params: &MlpParams, grads: &[Matrix], lr: f64) -> Result<MlpParams> {
    if grads.len() != params.num_layers() {
        return Err(Error::shape("gradient layer count mismatch"));
    }
    let mut weights = Vec::with_capacity(params.num_layers());
    for (w, g) in params.weights.iter().zip(grads.iter()) {
        let mut nw = w.clone();
        nw.axpy(-lr, g)?;
        weights.push(nw);
    }
    Ok(MlpParams {
        layer_dims: params.layer_dims.clone(),
        weights,
    })
}

/// Argmax over softmax outputs per row; ties break to the lowest index.
pub fn predict(params: &MlpParams, x: &Matrix) -> Result<Vec<usize>> {
    let cache = forward(params, x)?;
    Ok(argmax_rows(&cache.probs))
}

pub fn argmax_rows(probs: &Matrix) -> Vec<usize> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
