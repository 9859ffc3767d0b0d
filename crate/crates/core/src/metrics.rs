//! Evaluation metrics and the closed-form Rademacher generalization bound.

use crate::error::{Error, Result};
use crate::mlp::MlpParams;
use crate::Matrix;

/// Fraction of exact matches.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::invalid_input("length mismatch or empty"));
    }
    let hits = predictions
        .iter()
        .zip(labels.iter())
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// ‖T − T̂‖₁ / ‖T‖₁ with ‖·‖₁ the entrywise absolute sum; for a
/// row-stochastic c×c matrix the denominator is c.
pub fn estimation_error(t: &Matrix, t_hat: &Matrix) -> Result<f64> {
    if t.rows() != t_hat.rows() || t.cols() != t_hat.cols() {
        return Err(Error::shape("estimation_error shape mismatch"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in t.data().iter().zip(t_hat.data().iter()) {
        num += (a - b).abs();
        den += a.abs();
    }
    if den == 0.0 {
        return Err(Error::invalid_input("zero-norm reference matrix"));
    }
    Ok(num / den)
}

/// Inputs to the generalization bound: depth-d network over ‖x‖ ≤ B with
/// per-layer Frobenius bounds Mᵢ, loss range bound M, train size N, c
/// classes, confidence δ.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    pub input_norm: f64,
    pub depth: usize,
    pub layer_norms: Vec<f64>,
    pub train_size: usize,
    pub classes: usize,
    pub loss_bound: f64,
    pub delta: f64,
}

/// 2cMB(√(2·ln2·d)+1)·∏Mᵢ/√N + 3M·√(ln(2/δ)/(2N)); logs are natural.
pub fn rademacher_bound(inputs: &BoundInputs) -> Result<f64> {
    if !(inputs.delta > 0.0 && inputs.delta < 1.0) {
        return Err(Error::invalid_config("delta must lie in (0,1)"));
    }
    if inputs.train_size == 0
        || inputs.classes == 0
        || inputs.depth == 0
        || inputs.layer_norms.len() != inputs.depth
        || inputs.input_norm <= 0.0
        || inputs.loss_bound <= 0.0
        || inputs.layer_norms.iter().any(|&m| m <= 0.0)
    {
        return Err(Error::invalid_config("bound inputs must be positive"));
    }
    let n = inputs.train_size as f64;
    let prod: f64 = inputs.layer_norms.iter().product();
    let complexity = 2.0
        * inputs.classes as f64
        * inputs.loss_bound
        * inputs.input_norm
        * ((2.0 * std::f64::consts::LN_2 * inputs.depth as f64).sqrt() + 1.0)
        * prod
        / n.sqrt();
    let confidence = 3.0 * inputs.loss_bound * ((2.0 / inputs.delta).ln() / (2.0 * n)).sqrt();
    Ok(complexity + confidence)
}

/// Per-layer Frobenius norms Mᵢ of the weights.
pub fn frobenius_norms(params: &MlpParams) -> Vec<f64> {
    params.weights.iter().map(|w| w.frobenius_norm()).collect()
}

/// B: the largest Euclidean row norm over the feature matrix.
pub fn input_norm_bound(features: &Matrix) -> f64 {
    let mut best = 0.0f64;
    for i in 0..features.rows() {
        let mut sq = 0.0;
        for &v in features.row(i) {
            sq += v * v;
        }
        best = best.max(sq.sqrt());
    }
    best
}
