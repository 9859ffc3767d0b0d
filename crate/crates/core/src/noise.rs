//! Label corruption: sample noisy labels from a ground-truth transition
//! matrix and measure empirical flip frequencies.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::transition::is_row_stochastic;
use crate::Matrix;

#[derive(Debug, Clone)]
pub struct CorruptionReport {
    pub ground_truth: Matrix,
    pub empirical: Matrix,
    pub per_class_counts: Vec<usize>,
}

/// Resamples each label independently from categorical(T row label).
/// Deterministic per seed; one uniform draw per label.
pub fn corrupt_labels(
    clean_labels: &[usize],
    t: &Matrix,
    rng: &mut SeededRng,
) -> Result<(Vec<usize>, CorruptionReport)> {
    if t.rows() != t.cols() {
        return Err(Error::invalid_input("transition matrix must be square"));
    }
    if !is_row_stochastic(t, 1e-9) {
        return Err(Error::invalid_input("transition matrix not row-stochastic"));
    }
    let c = t.rows();
    let mut noisy = Vec::with_capacity(clean_labels.len());
    for &y in clean_labels {
        if y >= c {
            return Err(Error::invalid_input(format!("label {y} out of range")));
        }
        noisy.push(rng.categorical(t.row(y)));
    }
    let empirical = empirical_transition(clean_labels, &noisy, c)?;
    let mut per_class_counts = vec![0usize; c];
    for &y in clean_labels {
        per_class_counts[y] += 1;
    }
    Ok((
        noisy,
        CorruptionReport {
            ground_truth: t.clone(),
            empirical,
            per_class_counts,
        },
    ))
}

/// Row i = normalized histogram of noisy labels among samples with clean
/// label i; rows with zero count are uniform by convention.
pub fn empirical_transition(
    clean_labels: &[usize],
    noisy_labels: &[usize],
    c: usize,
) -> Result<Matrix> {
    if clean_labels.len() != noisy_labels.len() {
        return Err(Error::invalid_input("label arrays differ in length"));
    }
    let mut counts = vec![vec![0usize; c]; c];
    for (&y, &yn) in clean_labels.iter().zip(noisy_labels.iter()) {
        if y >= c || yn >= c {
            return Err(Error::invalid_input(format!(
                "label out of range: clean {y}, noisy {yn}, c {c}"
            )));
        }
        counts[y][yn] += 1;
    }
    let mut m = Matrix::zeros(c, c);
    for i in 0..c {
        let total: usize = counts[i].iter().sum();
        if total == 0 {
            for j in 0..c {
                m.set(i, j, 1.0 / c as f64);
            }
        } else {
            for j in 0..c {
                m.set(i, j, counts[i][j] as f64 / total as f64);
            }
        }
    }
    Ok(m)
}
