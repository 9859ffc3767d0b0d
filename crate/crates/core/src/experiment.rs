//! End-to-end pipelines per method and the results-CSV record format.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_forward, estimate_glc, finetune, train_ce, train_smodel,
    train_with_fixed_transition, SgdConfig,
};
use crate::meta::{run_meta_adaptation, InitSource, MlpConfig, TrainConfig, TrainTrace};
use crate::metrics::{
    accuracy, estimation_error, frobenius_norms, input_norm_bound, rademacher_bound, BoundInputs,
};
use crate::mlp::{predict, MlpParams};
use crate::objective::CE_EPS;
use crate::transition::{
    logits_from_estimate, symmetric_matrix, TransitionState, DEFAULT_LOGIT_EPS,
};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ce,
    Finetune,
    Forward,
    Glc,
    Smodel,
    Meta,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ce,
        Method::Finetune,
        Method::Forward,
        Method::Glc,
        Method::Smodel,
        Method::Meta,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::Finetune => "finetune",
            Method::Forward => "forward",
            Method::Glc => "glc",
            Method::Smodel => "smodel",
            Method::Meta => "meta",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.iter().copied().find(|m| m.as_str() == s)
    }

    pub fn needs_meta_split(&self) -> bool {
        matches!(self, Method::Finetune | Method::Glc | Method::Meta)
    }

    /// Methods that produce a transition-matrix estimate.
    pub fn estimates_transition(&self) -> bool {
        matches!(self, Method::Forward | Method::Glc | Method::Smodel | Method::Meta)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub method: Method,
    pub noise_kind: String,
    pub rate: f64,
    pub seed: u64,
    pub test_accuracy: f64,
    pub estimation_error: Option<f64>,
    pub bound_value: Option<f64>,
    pub wall_time_seconds: f64,
}

pub const RECORD_HEADER: &str =
    "method,noise_kind,rate,seed,test_accuracy,estimation_error,bound_value,wall_time_seconds";

impl ExperimentRecord {
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(crate::io::fmt_f64).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method,
            self.noise_kind,
            crate::io::fmt_f64(self.rate),
            self.seed,
            crate::io::fmt_f64(self.test_accuracy),
            opt(self.estimation_error),
            opt(self.bound_value),
            crate::io::fmt_f64(self.wall_time_seconds),
        )
    }

    pub fn parse_csv_row(line: &str, line_no: usize) -> Result<ExperimentRecord> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad number {s:?}"),
            })
        };
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                parse_f(s).map(Some)
            }
        };
        Ok(ExperimentRecord {
            method: Method::parse(fields[0]).ok_or(Error::Parse {
                line: line_no,
                msg: format!("unknown method {:?}", fields[0]),
            })?,
            noise_kind: fields[1].to_string(),
            rate: parse_f(fields[2])?,
            seed: fields[3].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad seed {:?}", fields[3]),
            })?,
            test_accuracy: parse_f(fields[4])?,
            estimation_error: parse_opt(fields[5])?,
            bound_value: parse_opt(fields[6])?,
            wall_time_seconds: parse_f(fields[7])?,
        })
    }

    /// Resume key for sweeps.
    pub fn key(&self) -> (Method, String, String, u64) {
        (
            self.method,
            self.noise_kind.clone(),
            format!("{:.6}", self.rate),
            self.seed,
        )
    }
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        out.push(ExperimentRecord::parse_csv_row(line, idx + 1)?);
    }
    Ok(out)
}

pub fn append_record(path: &Path, record: &ExperimentRecord) -> Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if fresh {
        writeln!(file, "{RECORD_HEADER}")?;
    }
    writeln!(file, "{}", record.to_csv_row())?;
    Ok(())
}

/// Everything a single run needs beyond the dataset.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunSettings {
    pub mlp: MlpConfig,
    /// First-stage CE training (also the CE baseline itself).
    pub ce: SgdConfig,
    /// Fine-tuning passes over the meta split.
    pub finetune: SgdConfig,
    pub train: TrainConfig,
    /// Iterations for S-Model and for Forward/GLC second-stage retraining.
    pub smodel_iters: usize,
    /// Warm-start the Forward/GLC second stage from the CE model instead of
    /// retraining from scratch.
    pub warm_start: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            mlp: MlpConfig::default(),
            ce: SgdConfig::default(),
            finetune: SgdConfig {
                lr: 0.02,
                epochs: 200,
                batch: 16,
            },
            train: TrainConfig::default(),
            // same step budget as the meta trainer, for a fair comparison
            smodel_iters: 1000,
            warm_start: false,
        }
    }
}

pub struct RunArtifacts {
    pub params: MlpParams,
    pub t_hat: Option<Matrix>,
    pub trace: Option<TrainTrace>,
}

fn identity_ish_logits(c: usize) -> Result<Matrix> {
    // near-identity but soft enough for gradients to move it
    logits_from_estimate(&symmetric_matrix(c, 0.05)?, DEFAULT_LOGIT_EPS)
}

fn test_accuracy(params: &MlpParams, dataset: &LabeledDataset) -> Result<f64> {
    let idx = dataset.indices_of(Split::Test);
    if idx.is_empty() {
        return Err(Error::invalid_config("dataset has no test split"));
    }
    let preds = predict(params, &dataset.features_at(&idx))?;
    accuracy(&preds, &dataset.clean_labels_at(&idx))
}

fn bound_for(params: &MlpParams, dataset: &LabeledDataset) -> Result<f64> {
    let train_idx = dataset.indices_of(Split::Train);
    let features = dataset.features_at(&train_idx);
    rademacher_bound(&BoundInputs {
        input_norm: input_norm_bound(&features),
        depth: params.num_layers(),
        layer_norms: frobenius_norms(params),
        train_size: train_idx.len(),
        classes: dataset.num_classes,
        loss_bound: -CE_EPS.ln(),
        delta: 0.05,
    })
}

/// Resolves the transition-logit initialization named in the config.
/// GLC and Forward both first train a CE model on the noisy data.
pub fn resolve_theta_init(
    dataset: &LabeledDataset,
    settings: &RunSettings,
    seed: u64,
) -> Result<Matrix> {
    let c = dataset.num_classes;
    match settings.train.init_source {
        InitSource::Uniform => Ok(Matrix::zeros(c, c)),
        InitSource::IdentityIsh => identity_ish_logits(c),
        InitSource::Glc => {
            let (ce_params, _) = train_ce(dataset, &settings.mlp, &settings.ce, seed)?;
            let meta_idx = dataset.indices_of(Split::Meta);
            if meta_idx.is_empty() {
                return Err(Error::invalid_config("glc init needs a meta split"));
            }
            let est = estimate_glc(
                &ce_params,
                &dataset.features_at(&meta_idx),
                &dataset.clean_labels_at(&meta_idx),
            )?;
            logits_from_estimate(&est.t_hat, DEFAULT_LOGIT_EPS)
        }
        InitSource::Forward => {
            let (ce_params, _) = train_ce(dataset, &settings.mlp, &settings.ce, seed)?;
            let train_idx = dataset.indices_of(Split::Train);
            let est = estimate_forward(&ce_params, &dataset.features_at(&train_idx))?;
            logits_from_estimate(&est.t_hat, DEFAULT_LOGIT_EPS)
        }
    }
}

/// Runs one method end to end and returns its record plus artifacts.
/// `noise_kind`/`rate` annotate the record; `true_t` enables estimation
/// error and meta-trace diagnostics.
pub fn run_method(
    dataset: &LabeledDataset,
    method: Method,
    settings: &RunSettings,
    seed: u64,
    noise_kind: &str,
    rate: f64,
    true_t: Option<&Matrix>,
) -> Result<(ExperimentRecord, RunArtifacts)> {
    if method.needs_meta_split() && dataset.indices_of(Split::Meta).is_empty() {
        return Err(Error::invalid_config(format!(
            "method {method} requires a meta split"
        )));
    }
    let start = Instant::now();
    let mut settings = settings.clone();
    settings.train.seed = seed;

    let (params, t_hat, trace): (MlpParams, Option<Matrix>, Option<TrainTrace>) = match method {
        Method::Ce => {
            let (params, _) = train_ce(dataset, &settings.mlp, &settings.ce, seed)?;
            (params, None, None)
        }
        Method::Finetune => {
            let (ce_params, _) = train_ce(dataset, &settings.mlp, &settings.ce, seed)?;
            let (params, _) = finetune(&ce_params, dataset, &settings.finetune, seed)?;
            (params, None, None)
        }
        Method::Forward | Method::Glc => {
            let (ce_params, _) = train_ce(dataset, &settings.mlp, &settings.ce, seed)?;
            let est = if method == Method::Forward {
                let train_idx = dataset.indices_of(Split::Train);
                estimate_forward(&ce_params, &dataset.features_at(&train_idx))?
            } else {
                let meta_idx = dataset.indices_of(Split::Meta);
                estimate_glc(
                    &ce_params,
                    &dataset.features_at(&meta_idx),
                    &dataset.clean_labels_at(&meta_idx),
                )?
            };
            let params = if settings.warm_start {
                // continue from the CE model against the fixed estimate
                let theta = logits_from_estimate(&est.t_hat, DEFAULT_LOGIT_EPS)?;
                let state = crate::transition::from_logits(&theta)?;
                warm_retrain(dataset, ce_params, &state, &settings)?
            } else {
                train_with_fixed_transition(
                    dataset,
                    &settings.mlp,
                    &est.t_hat,
                    settings.train.alpha,
                    settings.smodel_iters,
                    settings.train.train_batch,
                    seed,
                )?
                .params
            };
            (params, Some(est.t_hat), None)
        }
        Method::Smodel => {
            let theta = identity_ish_logits(dataset.num_classes)?;
            let out = train_smodel(
                dataset,
                &settings.mlp,
                &theta,
                settings.train.alpha,
                settings.train.alpha,
                settings.smodel_iters,
                settings.train.train_batch,
                seed,
            )?;
            (out.params, Some(out.transition.matrix().clone()), None)
        }
        Method::Meta => {
            let theta = resolve_theta_init(dataset, &settings, seed)?;
            let out = run_meta_adaptation(dataset, &settings.train, &settings.mlp, &theta, true_t)?;
            (
                out.params,
                Some(out.transition.matrix().clone()),
                Some(out.trace),
            )
        }
    };

    let est_error = match (&t_hat, true_t) {
        (Some(t_hat), Some(t)) => Some(estimation_error(t, t_hat)?),
        _ => None,
    };
    let record = ExperimentRecord {
        method,
        noise_kind: noise_kind.to_string(),
        rate,
        seed,
        test_accuracy: test_accuracy(&params, dataset)?,
        estimation_error: est_error,
        bound_value: Some(bound_for(&params, dataset)?),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((
        record,
        RunArtifacts {
            params,
            t_hat,
            trace,
        },
    ))
}

fn warm_retrain(
    dataset: &LabeledDataset,
    mut params: MlpParams,
    t_state: &TransitionState,
    settings: &RunSettings,
) -> Result<MlpParams> {
    use crate::objective::{check_divergence, noisy_loss_and_grads, BatchScheduler};
    let train_idx = dataset.indices_of(Split::Train);
    let mut sched = BatchScheduler::new(
        train_idx,
        crate::SeededRng::derive(settings.train.seed, crate::meta::STREAM_TRAIN_BATCH),
    )?;
    for iter in 0..settings.smodel_iters {
        let idx = sched.next_batch(settings.train.train_batch);
        let bx = dataset.features_at(&idx);
        let by = dataset.training_labels_at(&idx);
        let out = noisy_loss_and_grads(&params, t_state.matrix(), &bx, &by)?;
        check_divergence(out.loss, iter)?;
        params = crate::mlp::sgd_step(&params, &out.weight_grads, settings.train.alpha)?;
    }
    Ok(params)
}
