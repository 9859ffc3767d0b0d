//! Batch objectives and their analytic gradients: plain cross-entropy and
//! the transition-corrected noisy risk ℓ(Tᵀf(x), ỹ), plus the seeded batch
//! scheduler every training loop shares.

use crate::error::{Error, Result};
use crate::mlp::{backward, forward, MlpParams};
use crate::rng::SeededRng;
use crate::transition::apply;
use crate::Matrix;

/// Probability floor inside the log; keeps losses finite when a class
/// posterior collapses.
pub const CE_EPS: f64 = 1e-12;

/// Mean CE over the batch with gradients per layer.
pub fn ce_loss_and_grads(
    params: &MlpParams,
    x: &Matrix,
    labels: &[usize],
) -> Result<(f64, Vec<Matrix>)> {
    let n = labels.len();
    if n == 0 || x.rows() != n {
        return Err(Error::invalid_input("empty or mismatched batch"));
    }
    let c = params.num_classes();
    let cache = forward(params, x)?;
    let mut loss = 0.0;
    let mut dprobs = Matrix::zeros(n, c);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::invalid_input(format!("label {y} out of range")));
        }
        let p = cache.probs.get(i, y);
        loss += -p.max(CE_EPS).ln();
        if p > CE_EPS {
            dprobs.set(i, y, -1.0 / (n as f64 * p));
        }
    }
    let grads = backward(params, &cache, &dprobs)?;
    Ok((loss / n as f64, grads))
}

/// Loss, per-layer weight gradients, and the c×c gradient w.r.t. T of the
/// empirical noisy risk (1/n)·Σ −log((Tᵀf(xᵢ))_{ỹᵢ}).
///
/// Per sample: ∂ℓ/∂f_k = −T_{k,ỹ}/(Tᵀf)_{ỹ} and ∂ℓ/∂T_{k,ỹ} = −f_k/(Tᵀf)_{ỹ}
/// with all other T columns zero.
pub struct NoisyLossGrads {
    pub loss: f64,
    pub weight_grads: Vec<Matrix>,
    pub transition_grad: Matrix,
    /// Softmax outputs f(xᵢ) of the batch, batch x classes.
    pub probs: Matrix,
}

pub fn noisy_loss_and_grads(
    params: &MlpParams,
    t: &Matrix,
    x: &Matrix,
    labels: &[usize],
) -> Result<NoisyLossGrads> {
    let n = labels.len();
    if n == 0 || x.rows() != n {
        return Err(Error::invalid_input("empty or mismatched batch"));
    }
    let c = params.num_classes();
    if t.rows() != c || t.cols() != c {
        return Err(Error::shape("transition matrix shape mismatch"));
    }
    let cache = forward(params, x)?;
    let noisy_posteriors = apply(t, &cache.probs)?;
    let mut loss = 0.0;
    let mut dprobs = Matrix::zeros(n, c);
    let mut dt = Matrix::zeros(c, c);
    let inv_n = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::invalid_input(format!("label {y} out of range")));
        }
        let q = noisy_posteriors.get(i, y);
        loss += -q.max(CE_EPS).ln();
        if q > CE_EPS {
            let f = cache.probs.row(i);
            let dp = dprobs.row_mut(i);
            for k in 0..c {
                dp[k] = -t.get(k, y) / q * inv_n;
            }
            for k in 0..c {
                dt.set(k, y, dt.get(k, y) - f[k] / q * inv_n);
            }
        }
    }
    let weight_grads = backward(params, &cache, &dprobs)?;
    Ok(NoisyLossGrads {
        loss: loss * inv_n,
        weight_grads,
        transition_grad: dt,
        probs: cache.probs,
    })
}

/// Deterministic epoch-style mini-batch scheduler: shuffles the index pool
/// per pass and reshuffles on wraparound, dropping short remainders.
pub struct BatchScheduler {
    pool: Vec<usize>,
    pos: usize,
    rng: SeededRng,
}

impl BatchScheduler {
    pub fn new(indices: Vec<usize>, mut rng: SeededRng) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid_config("empty index pool"));
        }
        let mut pool = indices;
        rng.shuffle(&mut pool);
        Ok(BatchScheduler { pool, pos: 0, rng })
    }

    /// Returns the next `size` indices (clamped to the pool size).
    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.pool.len());
        if self.pos + size > self.pool.len() {
            self.rng.shuffle(&mut self.pool);
            self.pos = 0;
        }
        let batch = self.pool[self.pos..self.pos + size].to_vec();
        self.pos += size;
        batch
    }
}

/// Aborts training when the loss leaves the finite regime.
pub fn check_divergence(loss: f64, iter: usize) -> Result<()> {
    if !loss.is_finite() || loss > 1e6 {
        return Err(Error::Divergence {
            iter,
            what: format!("loss {loss}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::init_mlp;
    use crate::transition::{random_row_stochastic, symmetric_matrix};

    #[test]
    fn identity_transition_reduces_to_plain_ce() {
        let mut rng = SeededRng::new(1);
        let params = init_mlp(&[3, 4, 3], 0.5, &mut rng).unwrap();
        let x = Matrix::from_fn(5, 3, |_, _| rng.uniform_in(-1.0, 1.0));
        let ys = vec![0, 2, 1, 1, 0];
        let (plain_loss, plain_grads) = ce_loss_and_grads(&params, &x, &ys).unwrap();
        let noisy = noisy_loss_and_grads(&params, &Matrix::identity(3), &x, &ys).unwrap();
        assert!((plain_loss - noisy.loss).abs() < 1e-14);
        for (a, b) in plain_grads.iter().zip(noisy.weight_grads.iter()) {
            assert!(a.max_abs_diff(b) < 1e-14);
        }
    }

    #[test]
    fn transition_grad_identity_case() {
        let mut rng = SeededRng::new(2);
        let params = init_mlp(&[2, 3], 0.5, &mut rng).unwrap();
        let x = Matrix::from_fn(1, 2, |_, _| rng.uniform_in(-1.0, 1.0));
        let y = 1usize;
        let noisy = noisy_loss_and_grads(&params, &Matrix::identity(3), &x, &[y]).unwrap();
        let f = noisy.probs.row(0);
        for k in 0..3 {
            let expect = -f[k] / f[y];
            assert!((noisy.transition_grad.get(k, y) - expect).abs() < 1e-12);
            for j in 0..3 {
                if j != y {
                    assert_eq!(noisy.transition_grad.get(k, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn near_perfect_prediction_near_zero_gradients() {
        // single layer driven to a confident correct output
        let params = MlpParams {
            layer_dims: vec![2, 2],
            weights: vec![Matrix::from_rows(&[vec![20.0, 0.0], vec![0.0, 20.0]]).unwrap()],
        };
        let x = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let out = noisy_loss_and_grads(&params, &Matrix::identity(2), &x, &[0]).unwrap();
        assert!(out.loss < 1e-6);
        for g in &out.weight_grads {
            assert!(g.frobenius_norm() < 1e-6);
        }
    }

    #[test]
    fn noisy_grads_match_finite_differences() {
        let mut rng = SeededRng::new(7);
        let params = init_mlp(&[4, 6, 3], 0.6, &mut rng).unwrap();
        let t = symmetric_matrix(3, 0.3).unwrap();
        let n = 4;
        let x = Matrix::from_fn(n, 4, |_, _| rng.uniform_in(-1.0, 1.0));
        let ys: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let out = noisy_loss_and_grads(&params, &t, &x, &ys).unwrap();
        let h = 1e-5;

        // weight block
        for l in 0..params.num_layers() {
            for i in 0..params.weights[l].rows() {
                for j in 0..params.weights[l].cols() {
                    let mut p = params.clone();
                    let cur = p.weights[l].get(i, j);
                    p.weights[l].set(i, j, cur + h);
                    let lp = noisy_loss_and_grads(&p, &t, &x, &ys).unwrap().loss;
                    let mut m = params.clone();
                    let cur = m.weights[l].get(i, j);
                    m.weights[l].set(i, j, cur - h);
                    let lm = noisy_loss_and_grads(&m, &t, &x, &ys).unwrap().loss;
                    let fd = (lp - lm) / (2.0 * h);
                    let an = out.weight_grads[l].get(i, j);
                    let denom = an.abs().max(fd.abs()).max(1e-6);
                    assert!(((an - fd) / denom).abs() < 1e-5, "W[{l}]({i},{j}) {an} vs {fd}");
                }
            }
        }
        // transition block
        for k in 0..3 {
            for j in 0..3 {
                let mut tp = t.clone();
                tp.set(k, j, tp.get(k, j) + h);
                let lp = noisy_loss_and_grads(&params, &tp, &x, &ys).unwrap().loss;
                let mut tm = t.clone();
                tm.set(k, j, tm.get(k, j) - h);
                let lm = noisy_loss_and_grads(&params, &tm, &x, &ys).unwrap().loss;
                let fd = (lp - lm) / (2.0 * h);
                let an = out.transition_grad.get(k, j);
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(((an - fd) / denom).abs() < 1e-5, "T({k},{j}) {an} vs {fd}");
            }
        }
    }

    #[test]
    fn smodel_style_t_column_grad_matches_fd() {
        // one sample with noisy label j: ∂ℓ/∂T_{k,j} = −f_k/(Tᵀf)_j
        let mut rng = SeededRng::new(11);
        let params = init_mlp(&[2, 3], 0.8, &mut rng).unwrap();
        let t = random_row_stochastic(3, &mut rng);
        let x = Matrix::from_fn(1, 2, |_, _| rng.uniform_in(-1.0, 1.0));
        let y = 2usize;
        let out = noisy_loss_and_grads(&params, &t, &x, &[y]).unwrap();
        let q = apply(&t, &out.probs).unwrap().get(0, y);
        for k in 0..3 {
            let expect = -out.probs.get(0, k) / q;
            assert!((out.transition_grad.get(k, y) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn scheduler_deterministic_and_covers_pool() {
        let mk = || BatchScheduler::new((0..10).collect(), SeededRng::new(3)).unwrap();
        let mut a = mk();
        let mut b = mk();
        for _ in 0..20 {
            assert_eq!(a.next_batch(3), b.next_batch(3));
        }
        let mut s = mk();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..4 {
            seen.extend(s.next_batch(3));
        }
        assert!(seen.len() >= 9);
    }
}
