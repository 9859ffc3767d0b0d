//! Synthetic datasets with a known Bayes posterior, and train/meta/test
//! splitting. Corruption applies only to the training split; meta and test
//! labels stay clean.

use crate::error::{Error, Result};
use crate::noise::corrupt_labels;
use crate::rng::SeededRng;
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Meta,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Meta => "meta",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "meta" => Some(Split::Meta),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub clean_labels: Vec<usize>,
    pub noisy_labels: Option<Vec<usize>>,
    pub split: Vec<Split>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn features_at(&self, indices: &[usize]) -> Matrix {
        Matrix::from_fn(indices.len(), self.feature_dim(), |i, j| {
            self.features.get(indices[i], j)
        })
    }

    pub fn clean_labels_at(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.clean_labels[i]).collect()
    }

    /// Training label for row i: noisy when corruption was applied, clean
    /// otherwise.
    pub fn training_labels_at(&self, indices: &[usize]) -> Vec<usize> {
        match &self.noisy_labels {
            Some(noisy) => indices.iter().map(|&i| noisy[i]).collect(),
            None => self.clean_labels_at(indices),
        }
    }

    /// Corrupts training-split labels in place from transition matrix `t`;
    /// meta and test rows keep their clean labels.
    pub fn corrupt_train_split(
        &mut self,
        t: &Matrix,
        rng: &mut SeededRng,
    ) -> Result<crate::noise::CorruptionReport> {
        let train_idx = self.indices_of(Split::Train);
        let clean: Vec<usize> = train_idx.iter().map(|&i| self.clean_labels[i]).collect();
        let (noisy_train, report) = corrupt_labels(&clean, t, rng)?;
        let mut noisy = self.clean_labels.clone();
        for (pos, &i) in train_idx.iter().enumerate() {
            noisy[i] = noisy_train[pos];
        }
        self.noisy_labels = Some(noisy);
        Ok(report)
    }
}

/// Isotropic Gaussian mixture with uniform class priors.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub std: f64,
    pub per_class: usize,
}

impl MixtureSpec {
    /// Desk-scale reference task: 3 classes at 120° around the origin,
    /// radius 2.5, unit variance. Overlapping enough that no sample has a
    /// one-hot clean posterior.
    pub fn reference(per_class: usize) -> MixtureSpec {
        let r = 2.5;
        let means = (0..3)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                vec![r * angle.cos(), r * angle.sin()]
            })
            .collect();
        MixtureSpec {
            means,
            std: 1.0,
            per_class,
        }
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() < 2 {
            return Err(Error::invalid_config("need at least 2 classes"));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::invalid_config("mean vectors must share a nonzero dim"));
        }
        for (i, a) in self.means.iter().enumerate() {
            for b in self.means.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::invalid_config("class means must be distinct"));
                }
            }
        }
        if !(self.std > 0.0) {
            return Err(Error::invalid_config("std must be positive"));
        }
        if self.per_class == 0 {
            return Err(Error::invalid_config("per_class must be positive"));
        }
        Ok(())
    }

    /// Closed-form class posterior p(Y|X=x) under the mixture.
    pub fn bayes_posterior(&self, x: &[f64]) -> Vec<f64> {
        let log_dens: Vec<f64> = self
            .means
            .iter()
            .map(|m| {
                let mut sq = 0.0;
                for (xi, mi) in x.iter().zip(m.iter()) {
                    sq += (xi - mi) * (xi - mi);
                }
                -sq / (2.0 * self.std * self.std)
            })
            .collect();
        crate::matrix::softmax(&log_dens).unwrap()
    }
}

/// Draws `per_class` samples around each class mean; deterministic per seed.
/// All rows start tagged `train`; use `split_dataset` to assign splits.
pub fn generate_mixture(spec: &MixtureSpec, rng: &mut SeededRng) -> Result<LabeledDataset> {
    spec.validate()?;
    let c = spec.classes();
    let d = spec.means[0].len();
    let n = c * spec.per_class;
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for class in 0..c {
        for s in 0..spec.per_class {
            let row = class * spec.per_class + s;
            for j in 0..d {
                features.set(row, j, spec.means[class][j] + spec.std * rng.normal());
            }
            labels.push(class);
        }
    }
    Ok(LabeledDataset {
        features,
        clean_labels: labels,
        noisy_labels: None,
        split: vec![Split::Train; n],
        num_classes: c,
    })
}

/// Selects n_train + n_meta + n_test rows, stratified per class (exact
/// balance when counts divide by c), and returns them as a tagged dataset.
/// Deterministic per seed.
pub fn split_dataset(
    dataset: &LabeledDataset,
    n_train: usize,
    n_meta: usize,
    n_test: usize,
    rng: &mut SeededRng,
) -> Result<LabeledDataset> {
    let c = dataset.num_classes;
    let total = n_train + n_meta + n_test;
    if total > dataset.len() {
        return Err(Error::invalid_config(format!(
            "requested {total} rows, dataset has {}",
            dataset.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for i in 0..dataset.len() {
        by_class[dataset.clean_labels[i]].push(i);
    }
    for pool in by_class.iter_mut() {
        rng.shuffle(pool);
    }
    // per-class quota: count/c, with the remainder spread over the lowest
    // class indices
    let quota = |count: usize, class: usize| count / c + usize::from(class < count % c);
    let mut cursor = vec![0usize; c];
    let take = |count: usize,
                    cursor: &mut Vec<usize>,
                    split: Split|
     -> Result<Vec<(usize, Split)>> {
        let mut out = Vec::with_capacity(count);
        for class in 0..c {
            let q = quota(count, class);
            if cursor[class] + q > by_class[class].len() {
                return Err(Error::invalid_config(format!(
                    "class {class} has too few samples for the requested split"
                )));
            }
            for _ in 0..q {
                out.push((by_class[class][cursor[class]], split));
                cursor[class] += 1;
            }
        }
        Ok(out)
    };
    let mut picked = take(n_train, &mut cursor, Split::Train)?;
    picked.extend(take(n_meta, &mut cursor, Split::Meta)?);
    picked.extend(take(n_test, &mut cursor, Split::Test)?);

    let indices: Vec<usize> = picked.iter().map(|&(i, _)| i).collect();
    let split: Vec<Split> = picked.iter().map(|&(_, s)| s).collect();
    Ok(LabeledDataset {
        features: dataset.features_at(&indices),
        clean_labels: dataset.clean_labels_at(&indices),
        noisy_labels: dataset
            .noisy_labels
            .as_ref()
            .map(|n| indices.iter().map(|&i| n[i]).collect()),
        split,
        num_classes: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_spec() -> MixtureSpec {
        MixtureSpec {
            means: vec![vec![-2.0, 0.0], vec![2.0, 0.0]],
            std: 1.0,
            per_class: 500,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = two_class_spec();
        let a = generate_mixture(&spec, &mut SeededRng::new(5)).unwrap();
        let b = generate_mixture(&spec, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a.features.data(), b.features.data());
        assert_eq!(a.clean_labels, b.clean_labels);
    }

    #[test]
    fn tiny_std_concentrates_at_means() {
        let mut spec = two_class_spec();
        spec.std = 1e-12;
        spec.per_class = 100;
        let ds = generate_mixture(&spec, &mut SeededRng::new(1)).unwrap();
        for i in 0..ds.len() {
            let m = &spec.means[ds.clean_labels[i]];
            for j in 0..2 {
                assert!((ds.features.get(i, j) - m[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = two_class_spec();
        spec.std = 0.0;
        assert!(generate_mixture(&spec, &mut SeededRng::new(1)).is_err());
        let mut spec = two_class_spec();
        spec.means[1] = spec.means[0].clone();
        assert!(generate_mixture(&spec, &mut SeededRng::new(1)).is_err());
        let mut spec = two_class_spec();
        spec.per_class = 0;
        assert!(generate_mixture(&spec, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn bayes_posterior_sums_to_one_and_prefers_near_mean() {
        let spec = two_class_spec();
        let p = spec.bayes_posterior(&[-2.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > 0.9);
    }

    #[test]
    fn split_stratification_exact_when_divisible() {
        let spec = two_class_spec();
        let ds = generate_mixture(&spec, &mut SeededRng::new(3)).unwrap();
        let tagged = split_dataset(&ds, 600, 20, 100, &mut SeededRng::new(4)).unwrap();
        assert_eq!(tagged.len(), 720);
        for split in [Split::Train, Split::Meta, Split::Test] {
            let idx = tagged.indices_of(split);
            let per_class: Vec<usize> = (0..2)
                .map(|c| idx.iter().filter(|&&i| tagged.clean_labels[i] == c).count())
                .collect();
            assert_eq!(per_class[0], per_class[1], "{split:?}");
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let spec = two_class_spec();
        let ds = generate_mixture(&spec, &mut SeededRng::new(3)).unwrap();
        let a = split_dataset(&ds, 100, 10, 50, &mut SeededRng::new(8)).unwrap();
        let b = split_dataset(&ds, 100, 10, 50, &mut SeededRng::new(8)).unwrap();
        assert_eq!(a.features.data(), b.features.data());
        assert_eq!(
            a.indices_of(Split::Train).len()
                + a.indices_of(Split::Meta).len()
                + a.indices_of(Split::Test).len(),
            160
        );
    }

    #[test]
    fn split_insufficient_samples_errors() {
        let mut spec = two_class_spec();
        spec.per_class = 10;
        let ds = generate_mixture(&spec, &mut SeededRng::new(3)).unwrap();
        assert!(split_dataset(&ds, 100, 0, 0, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn corruption_leaves_meta_and_test_clean() {
        let spec = two_class_spec();
        let ds = generate_mixture(&spec, &mut SeededRng::new(3)).unwrap();
        let mut tagged = split_dataset(&ds, 400, 40, 200, &mut SeededRng::new(4)).unwrap();
        let t = crate::transition::symmetric_matrix(2, 0.5).unwrap();
        tagged.corrupt_train_split(&t, &mut SeededRng::new(5)).unwrap();
        let noisy = tagged.noisy_labels.as_ref().unwrap();
        for split in [Split::Meta, Split::Test] {
            for i in tagged.indices_of(split) {
                assert_eq!(noisy[i], tagged.clean_labels[i]);
            }
        }
        let train_idx = tagged.indices_of(Split::Train);
        let flipped = train_idx
            .iter()
            .filter(|&&i| noisy[i] != tagged.clean_labels[i])
            .count();
        assert!(flipped > 100, "expected substantial corruption, got {flipped}");
    }
}
