//! Row-stochastic transition matrices: noise-model constructors, softmax
//! logit parametrization, application to class posteriors, and the chain
//! rule through the row-softmax.

use crate::error::{Error, Result};
use crate::matrix::{softmax, softmax_rows};
use crate::rng::SeededRng;
use crate::Matrix;

/// Transition logits and the induced row-stochastic matrix; `matrix` is
/// recomputed from `logits` on every mutation, never allowed to drift.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionState {
    logits: Matrix,
    matrix: Matrix,
}

impl TransitionState {
    pub fn classes(&self) -> usize {
        self.matrix.rows()
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

/// Which corruption to apply, and at what rate.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Symmetric { rate: f64 },
    AsymmetricPairs { rate: f64, pairs: Vec<(usize, usize)> },
}

impl NoiseSpec {
    pub fn rate(&self) -> f64 {
        match self {
            NoiseSpec::Symmetric { rate } => *rate,
            NoiseSpec::AsymmetricPairs { rate, .. } => *rate,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NoiseSpec::Symmetric { .. } => "symmetric",
            NoiseSpec::AsymmetricPairs { .. } => "pairs",
        }
    }

    pub fn build_matrix(&self, c: usize) -> Result<Matrix> {
        match self {
            NoiseSpec::Symmetric { rate } => symmetric_matrix(c, *rate),
            NoiseSpec::AsymmetricPairs { rate, pairs } => pairflip_matrix(c, *rate, pairs),
        }
    }
}

/// The CIFAR-10 style pair preset: truck→automobile, bird→airplane,
/// deer→horse, cat→dog, by the usual class indices.
pub fn cifar10_pairs() -> Vec<(usize, usize)> {
    vec![(9, 1), (2, 0), (4, 7), (3, 5)]
}

/// Uniform-flip matrix: diagonal 1−η, off-diagonal η/(c−1).
pub fn symmetric_matrix(c: usize, eta: f64) -> Result<Matrix> {
    if c < 2 {
        return Err(Error::invalid_config("need at least 2 classes"));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid_config(format!("eta {eta} outside [0,1]")));
    }
    let off = eta / (c as f64 - 1.0);
    Ok(Matrix::from_fn(c, c, |i, j| {
        if i == j {
            1.0 - eta
        } else {
            off
        }
    }))
}

/// Pair-flip matrix: each (i→j) pair gets T_ii = 1−r, T_ij = r; untouched
/// classes keep identity rows.
pub fn pairflip_matrix(c: usize, r: f64, pairs: &[(usize, usize)]) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid_config(format!("rate {r} outside [0,1]")));
    }
    let mut seen = vec![false; c];
    for &(src, dst) in pairs {
        if src >= c || dst >= c {
            return Err(Error::invalid_config(format!(
                "pair ({src}->{dst}) out of range for {c} classes"
            )));
        }
        if src == dst {
            return Err(Error::invalid_config("pair target equals source"));
        }
        if seen[src] {
            return Err(Error::invalid_config(format!("duplicate pair source {src}")));
        }
        seen[src] = true;
    }
    let mut t = Matrix::identity(c);
    for &(src, dst) in pairs {
        t.set(src, src, 1.0 - r);
        t.set(src, dst, r);
    }
    Ok(t)
}

/// Builds the state from logits; T row = softmax(Θ row).
pub fn from_logits(logits: &Matrix) -> Result<TransitionState> {
    if logits.rows() != logits.cols() {
        return Err(Error::shape(format!(
            "logits must be square, got {}x{}",
            logits.rows(),
            logits.cols()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::invalid_input("non-finite logits"));
    }
    let mut matrix = logits.clone();
    softmax_rows(&mut matrix)?;
    Ok(TransitionState {
        logits: logits.clone(),
        matrix,
    })
}

/// Θ_ij = log(T̂_ij + eps). Round-trips through `from_logits` within
/// O(eps·c) for row-stochastic T̂.
pub fn logits_from_estimate(estimate: &Matrix, eps: f64) -> Result<Matrix> {
    if estimate.rows() != estimate.cols() {
        return Err(Error::shape("estimate must be square"));
    }
    if eps <= 0.0 {
        return Err(Error::invalid_config("eps must be positive"));
    }
    for i in 0..estimate.rows() {
        let mut sum = 0.0;
        for &v in estimate.row(i) {
            if v < 0.0 {
                return Err(Error::invalid_input(format!("negative entry in row {i}")));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid_input(format!(
                "row {i} sums to {sum}, not row-stochastic"
            )));
        }
    }
    Ok(estimate.map(|v| (v + eps).ln()))
}

pub const DEFAULT_LOGIT_EPS: f64 = 1e-8;

/// Computes q = Tᵀf for every row of the batch: output = F · T.
pub fn apply(t: &Matrix, posteriors: &Matrix) -> Result<Matrix> {
    if t.rows() != t.cols() || posteriors.cols() != t.rows() {
        return Err(Error::shape(format!(
            "apply: posteriors {}x{} vs T {}x{}",
            posteriors.rows(),
            posteriors.cols(),
            t.rows(),
            t.cols()
        )));
    }
    posteriors.matmul(t)
}

/// Chain rule through the row-softmax: per row k,
/// ∂L/∂Θ_{k,l} = T_{k,l}·(G_{k,l} − Σ_j G_{k,j}·T_{k,j}).
pub fn grad_wrt_logits(state: &TransitionState, dloss_dt: &Matrix) -> Result<Matrix> {
    let c = state.classes();
    if dloss_dt.rows() != c || dloss_dt.cols() != c {
        return Err(Error::shape("dloss_dt shape mismatch"));
    }
    let t = state.matrix();
    let mut out = Matrix::zeros(c, c);
    for k in 0..c {
        let trow = t.row(k);
        let grow = dloss_dt.row(k);
        let mut inner = 0.0;
        for j in 0..c {
            inner += grow[j] * trow[j];
        }
        let orow = out.row_mut(k);
        for l in 0..c {
            orow[l] = trow[l] * (grow[l] - inner);
        }
    }
    Ok(out)
}

pub fn is_row_stochastic(m: &Matrix, tol: f64) -> bool {
    if m.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return false;
    }
    (0..m.rows()).all(|i| {
        let sum: f64 = m.row(i).iter().sum();
        (sum - 1.0).abs() <= tol
    })
}

/// A random strictly positive row-stochastic matrix, for tests and
/// randomized property checks.
pub fn random_row_stochastic(c: usize, rng: &mut SeededRng) -> Matrix {
    let mut m = Matrix::zeros(c, c);
    for i in 0..c {
        let logits: Vec<f64> = (0..c).map(|_| rng.uniform_in(-1.5, 1.5)).collect();
        m.row_mut(i).copy_from_slice(&softmax(&logits).unwrap());
    }
    m
}
