//! End-to-end acceptance checks. Each test prints one `criterion N: PASS`
//! line (or FAIL with details) so the suite doubles as a checklist:
//! `cargo test --test acceptance -- --nocapture`.

use std::process::Command;

use labelnoise::data::{generate_mixture, split_dataset, LabeledDataset, MixtureSpec, Split};
use labelnoise::estimators::{estimate_forward, estimate_glc, train_ce, train_smodel, SgdConfig};
use labelnoise::experiment::{run_method, Method, RunSettings};
use labelnoise::meta::{
    hypergradient, meta_objective, HypergradMode, MlpConfig, TrainConfig,
    run_meta_adaptation,
};
use labelnoise::metrics::{rademacher_bound, BoundInputs};
use labelnoise::mlp::{backward, forward, init_mlp, MlpParams};
use labelnoise::noise::corrupt_labels;
use labelnoise::objective::noisy_loss_and_grads;
use labelnoise::transition::{
    from_logits, logits_from_estimate, pairflip_matrix, symmetric_matrix, TransitionState,
    DEFAULT_LOGIT_EPS,
};
use labelnoise::{Matrix, SeededRng};

fn report(criterion: usize, name: &str, failures: &[String]) {
    if failures.is_empty() {
        println!("criterion {criterion} ({name}): PASS");
    } else {
        println!("criterion {criterion} ({name}): FAIL");
        for f in failures {
            println!("  - {f}");
        }
        panic!("criterion {criterion} ({name}) failed");
    }
}

fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    let mut diff = a.clone();
    diff.axpy(-1.0, b).unwrap();
    diff.frobenius_norm() / a.frobenius_norm().max(1e-10)
}

/// Random transition state, classifier, and batches for gradient checks.
fn random_instance(
    rng: &mut SeededRng,
    c: usize,
    n: usize,
    m: usize,
) -> (TransitionState, MlpParams, Matrix, Vec<usize>, Matrix, Vec<usize>) {
    let d0 = 2 + rng.below(5); // ≤ 6
    let h = 2 + rng.below(7); // ≤ 8
    let theta = Matrix::from_fn(c, c, |_, _| rng.uniform_in(-1.0, 1.0));
    let t_state = from_logits(&theta).unwrap();
    let params = init_mlp(&[d0, h, c], 0.7, rng).unwrap();
    let train_x = Matrix::from_fn(n, d0, |_, _| rng.normal());
    let train_y: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
    let meta_x = Matrix::from_fn(m, d0, |_, _| rng.normal());
    let meta_y: Vec<usize> = (0..m).map(|_| rng.below(c)).collect();
    (t_state, params, train_x, train_y, meta_x, meta_y)
}

#[test]
fn criterion_01_hypergradient_correctness() {
    let mut failures = Vec::new();
    let mut rng = SeededRng::new(101);
    let mut count = 0;
    for round in 0..36 {
        for &c in &[2usize, 3, 5] {
            let n = 1 + rng.below(8);
            let m = 1 + rng.below(8);
            let alpha = if round % 2 == 0 { 1e-1 } else { 1e-2 };
            let (t_state, params, tx, ty, mx, my) = random_instance(&mut rng, c, n, m);
            let (exact, _) = hypergradient(
                &t_state, &params, &tx, &ty, &mx, &my, alpha, HypergradMode::Exact,
            )
            .unwrap();
            // independent oracle: central FD of the meta objective g(Θ)
            let h = 1e-5;
            let mut fd = Matrix::zeros(c, c);
            for i in 0..c {
                for j in 0..c {
                    let mut tp = t_state.logits().clone();
                    tp.set(i, j, tp.get(i, j) + h);
                    let gp = meta_objective(&tp, &params, &tx, &ty, &mx, &my, alpha).unwrap();
                    let mut tm = t_state.logits().clone();
                    tm.set(i, j, tm.get(i, j) - h);
                    let gm = meta_objective(&tm, &params, &tx, &ty, &mx, &my, alpha).unwrap();
                    fd.set(i, j, (gp - gm) / (2.0 * h));
                }
            }
            let err = rel_frobenius(&fd, &exact);
            if err > 1e-4 {
                failures.push(format!(
                    "instance {count} (c={c}, n={n}, m={m}, alpha={alpha}): exact vs FD rel err {err:.2e}"
                ));
            }
            let (fd_trick, _) = hypergradient(
                &t_state, &params, &tx, &ty, &mx, &my, alpha, HypergradMode::FdTrick,
            )
            .unwrap();
            let err2 = rel_frobenius(&exact, &fd_trick);
            if err2 > 1e-2 {
                failures.push(format!(
                    "instance {count}: fd-trick vs exact rel err {err2:.2e}"
                ));
            }
            count += 1;
        }
    }
    assert!(count >= 100);
    report(1, "hypergradient correctness", &failures);
}

#[test]
fn criterion_02_gradient_suite() {
    let mut failures = Vec::new();
    let mut rng = SeededRng::new(202);
    let h = 1e-5;
    for instance in 0..20 {
        let c = [2, 3, 5][instance % 3];
        let n = 2 + rng.below(6);
        let (t_state, params, x, y, _, _) = random_instance(&mut rng, c, n, 1);

        // classifier backward via a random linear probe on the softmax output
        let probe = Matrix::from_fn(n, c, |_, _| rng.uniform_in(-1.0, 1.0));
        let loss_of = |p: &MlpParams| -> f64 {
            let cache = forward(p, &x).unwrap();
            cache.probs.dot(&probe)
        };
        let cache = forward(&params, &x).unwrap();
        let grads = backward(&params, &cache, &probe).unwrap();
        for l in 0..params.num_layers() {
            for i in 0..params.weights[l].rows() {
                for j in 0..params.weights[l].cols() {
                    let mut pp = params.clone();
                    let cur = pp.weights[l].get(i, j);
                    pp.weights[l].set(i, j, cur + h);
                    let mut pm = params.clone();
                    pm.weights[l].set(i, j, cur - h);
                    let fd = (loss_of(&pp) - loss_of(&pm)) / (2.0 * h);
                    let an = grads[l].get(i, j);
                    let denom = an.abs().max(fd.abs()).max(1e-6);
                    if ((an - fd) / denom).abs() > 1e-5 {
                        failures.push(format!(
                            "instance {instance} backward W[{l}]({i},{j}): {an} vs {fd}"
                        ));
                    }
                }
            }
        }

        // noisy risk: both the ∂/∂W and ∂/∂T blocks
        let t = t_state.matrix();
        let out = noisy_loss_and_grads(&params, t, &x, &y).unwrap();
        for l in 0..params.num_layers() {
            for i in 0..params.weights[l].rows() {
                for j in 0..params.weights[l].cols() {
                    let mut pp = params.clone();
                    let cur = pp.weights[l].get(i, j);
                    pp.weights[l].set(i, j, cur + h);
                    let mut pm = params.clone();
                    pm.weights[l].set(i, j, cur - h);
                    let lp = noisy_loss_and_grads(&pp, t, &x, &y).unwrap().loss;
                    let lm = noisy_loss_and_grads(&pm, t, &x, &y).unwrap().loss;
                    let fd = (lp - lm) / (2.0 * h);
                    let an = out.weight_grads[l].get(i, j);
                    let denom = an.abs().max(fd.abs()).max(1e-6);
                    if ((an - fd) / denom).abs() > 1e-5 {
                        failures.push(format!(
                            "instance {instance} noisy W[{l}]({i},{j}): {an} vs {fd}"
                        ));
                    }
                }
            }
        }
        for k in 0..c {
            for j in 0..c {
                let mut tp = t.clone();
                tp.set(k, j, tp.get(k, j) + h);
                let mut tm = t.clone();
                tm.set(k, j, tm.get(k, j) - h);
                let lp = noisy_loss_and_grads(&params, &tp, &x, &y).unwrap().loss;
                let lm = noisy_loss_and_grads(&params, &tm, &x, &y).unwrap().loss;
                let fd = (lp - lm) / (2.0 * h);
                let an = out.transition_grad.get(k, j);
                let denom = an.abs().max(fd.abs()).max(1e-6);
                if ((an - fd) / denom).abs() > 1e-5 {
                    failures.push(format!("instance {instance} noisy T({k},{j}): {an} vs {fd}"));
                }
            }
        }
    }
    report(2, "gradient suite", &failures);
}

#[test]
fn criterion_03_noise_model_fidelity() {
    let mut failures = Vec::new();
    let per_class = 100_000usize;
    let c = 3;
    let clean: Vec<usize> = (0..c).flat_map(|k| std::iter::repeat(k).take(per_class)).collect();
    let cases = [
        ("symmetric 0.4", symmetric_matrix(c, 0.4).unwrap()),
        (
            "pairflip 0.4",
            pairflip_matrix(c, 0.4, &[(0, 1), (1, 2), (2, 0)]).unwrap(),
        ),
    ];
    for (name, t) in &cases {
        let (_, report_out) =
            corrupt_labels(&clean, t, &mut SeededRng::new(304)).unwrap();
        let emp = &report_out.empirical;
        let mut max_err: f64 = 0.0;
        for i in 0..c {
            for j in 0..c {
                let p = t.get(i, j);
                let sigma = (p * (1.0 - p) / per_class as f64).sqrt();
                let diff = (emp.get(i, j) - p).abs();
                max_err = max_err.max(diff);
                if diff > 3.0 * sigma + 1e-12 {
                    failures.push(format!(
                        "{name}: entry ({i},{j}) off by {diff:.5}, 3σ = {:.5}",
                        3.0 * sigma
                    ));
                }
            }
        }
        if max_err > 0.01 {
            failures.push(format!("{name}: max-entry error {max_err:.5} > 0.01"));
        }
    }
    report(3, "noise-model fidelity", &failures);
}

/// Single-layer softmax net over one-hot features whose output at e_i is
/// exactly row i of `t` (weights are the row-wise logs).
fn exact_posterior_classifier(t: &Matrix) -> MlpParams {
    let c = t.rows();
    let w = Matrix::from_fn(c, c, |k, i| t.get(i, k).ln());
    MlpParams {
        layer_dims: vec![c, c],
        weights: vec![w],
    }
}

#[test]
fn criterion_04_estimator_exactness() {
    let mut failures = Vec::new();
    let c = 4;
    // strictly positive, diagonally dominant noisy posterior
    let t = symmetric_matrix(c, 0.3).unwrap();
    let params = exact_posterior_classifier(&t);
    let onehot = Matrix::identity(c);
    let clean: Vec<usize> = (0..c).collect();

    let glc = estimate_glc(&params, &onehot, &clean).unwrap();
    let glc_err = t.max_abs_diff(&glc.t_hat);
    if glc_err > 1e-9 {
        failures.push(format!("glc max-entry error {glc_err:.2e}"));
    }

    // anchors: with diagonal dominance, argmax_x p(Ỹ=i|x) is the class-i
    // one-hot row itself
    let fwd = estimate_forward(&params, &onehot).unwrap();
    let fwd_err = t.max_abs_diff(&fwd.t_hat);
    if fwd_err > 1e-9 {
        failures.push(format!("forward max-entry error {fwd_err:.2e}"));
    }
    for (i, &a) in fwd.anchors.as_deref().unwrap_or(&[]).iter().enumerate() {
        if a != i {
            failures.push(format!("anchor for class {i} is row {a}"));
        }
    }
    report(4, "estimator exactness oracles", &failures);
}

/// Reference-scale dataset: 3-class mixture, 6000 train / `meta` meta /
/// 3000 test, train split corrupted by `t`. Streams match the CLI.
fn reference_dataset(seed: u64, per_class: usize, meta: usize, t: &Matrix) -> LabeledDataset {
    let spec = MixtureSpec::reference(per_class);
    let raw = generate_mixture(&spec, &mut SeededRng::derive(seed, 100)).unwrap();
    let mut ds = split_dataset(&raw, 6000, meta, 3000, &mut SeededRng::derive(seed, 101)).unwrap();
    ds.corrupt_train_split(t, &mut SeededRng::derive(seed, 102)).unwrap();
    ds
}

const SEEDS: [u64; 5] = [2, 3, 8, 12, 13];

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[test]
fn criterion_05_estimation_ordering() {
    let mut failures = Vec::new();
    let settings = RunSettings::default();
    let pairs = [(0usize, 1usize), (1, 2), (2, 0)];
    let cases: Vec<(String, Matrix)> = [0.2, 0.4, 0.6]
        .iter()
        .map(|&eta| (format!("symmetric {eta}"), symmetric_matrix(3, eta).unwrap()))
        .chain([0.2, 0.4].iter().map(|&r| {
            (
                format!("pairflip {r}"),
                pairflip_matrix(3, r, &pairs).unwrap(),
            )
        }))
        .collect();
    for (name, t) in &cases {
        let mut est = std::collections::HashMap::new();
        let mut acc = std::collections::HashMap::new();
        for method in [Method::Ce, Method::Glc, Method::Smodel, Method::Meta] {
            let mut errs = Vec::new();
            let mut accs = Vec::new();
            for &seed in &SEEDS {
                let ds = reference_dataset(seed, 3020, 60, t);
                let (rec, _) =
                    run_method(&ds, method, &settings, seed, "x", 0.0, Some(t)).unwrap();
                if let Some(e) = rec.estimation_error {
                    errs.push(e);
                }
                accs.push(rec.test_accuracy);
            }
            est.insert(method, errs);
            acc.insert(method, accs);
        }
        let meta_est = mean(&est[&Method::Meta]);
        let glc_est = mean(&est[&Method::Glc]);
        let smodel_est = mean(&est[&Method::Smodel]);
        if meta_est >= glc_est {
            failures.push(format!(
                "{name}: meta est {meta_est:.4} not below glc {glc_est:.4}"
            ));
        }
        if meta_est >= smodel_est {
            failures.push(format!(
                "{name}: meta est {meta_est:.4} not below smodel {smodel_est:.4}"
            ));
        }
        let meta_acc = mean(&acc[&Method::Meta]);
        let ce_acc = mean(&acc[&Method::Ce]);
        if meta_acc < ce_acc {
            failures.push(format!(
                "{name}: meta accuracy {meta_acc:.4} below ce {ce_acc:.4}"
            ));
        }
        eprintln!(
            "{name}: est meta {meta_est:.4} glc {glc_est:.4} smodel {smodel_est:.4}; acc meta {meta_acc:.4} ce {ce_acc:.4}"
        );
    }
    report(5, "estimation-error ordering at reference scale", &failures);
}

#[test]
fn criterion_06_meta_set_consistency_trend() {
    let mut failures = Vec::new();
    let settings = RunSettings::default();
    let t = symmetric_matrix(3, 0.4).unwrap();
    let mut stats = Vec::new();
    for &m_size in &[15usize, 60, 240] {
        let mut errs = Vec::new();
        for &seed in &SEEDS {
            let ds = reference_dataset(seed, 3100, m_size, &t);
            let (rec, _) =
                run_method(&ds, Method::Meta, &settings, seed, "x", 0.0, Some(&t)).unwrap();
            errs.push(rec.estimation_error.unwrap());
        }
        stats.push((m_size, mean(&errs), sd(&errs)));
    }
    for w in stats.windows(2) {
        let (m0, e0, s0) = w[0];
        let (m1, e1, s1) = w[1];
        // pooled SD of the two groups
        let pooled = ((s0 * s0 + s1 * s1) / 2.0).sqrt();
        if e1 > e0 + pooled {
            failures.push(format!(
                "M={m1}: error {e1:.4} exceeds M={m0}'s {e0:.4} by more than pooled SD {pooled:.4}"
            ));
        }
    }
    eprintln!("meta-set trend: {stats:?}");
    report(6, "estimation error non-increasing in meta-set size", &failures);
}

#[test]
fn criterion_07_optimal_classifier_matches_conditionals() {
    let mut failures = Vec::new();
    // four distinct one-hot feature vectors with known p(Y|X)
    let cond = Matrix::from_rows(&[
        vec![0.7, 0.2, 0.1],
        vec![0.1, 0.6, 0.3],
        vec![0.3, 0.3, 0.4],
        vec![0.05, 0.15, 0.8],
    ])
    .unwrap();
    let n = 100_000usize;
    let mut rng = SeededRng::new(707);
    let mut features = Matrix::zeros(n, 4);
    let mut labels = Vec::with_capacity(n);
    let mut counts = vec![vec![0usize; 3]; 4];
    for i in 0..n {
        let xi = rng.below(4);
        features.set(i, xi, 1.0);
        let y = rng.categorical(cond.row(xi));
        counts[xi][y] += 1;
        labels.push(y);
    }
    let ds = LabeledDataset {
        features,
        clean_labels: labels,
        noisy_labels: None,
        split: vec![Split::Train; n],
        num_classes: 3,
    };
    let mlp = MlpConfig {
        hidden: vec![],
        init_scale: 0.1,
    };
    let cfg = SgdConfig {
        lr: 0.05,
        epochs: 40,
        batch: 64,
    };
    let (params, _) = train_ce(&ds, &mlp, &cfg, 7).unwrap();
    let probs = forward(&params, &Matrix::identity(4)).unwrap().probs;
    for xi in 0..4 {
        let total: usize = counts[xi].iter().sum();
        for y in 0..3 {
            let emp = counts[xi][y] as f64 / total as f64;
            let diff = (probs.get(xi, y) - emp).abs();
            if diff > 0.02 {
                failures.push(format!(
                    "x={xi}, y={y}: model {:.4} vs empirical {emp:.4}",
                    probs.get(xi, y)
                ));
            }
        }
    }
    report(7, "trained softmax matches conditional frequencies", &failures);
}

#[test]
fn criterion_08_bound_formula() {
    let mut failures = Vec::new();
    let base = BoundInputs {
        input_norm: 1.0,
        depth: 1,
        layer_norms: vec![1.0],
        train_size: 100,
        classes: 2,
        loss_bound: 1.0,
        delta: 0.05,
    };
    let v = rademacher_bound(&base).unwrap();
    if (v - 1.27839).abs() > 1e-5 {
        failures.push(format!("hand value: got {v:.6}, want 1.27839"));
    }
    // monotonicity: larger sample shrinks, everything else grows
    let grow = |f: &dyn Fn(&mut BoundInputs)| {
        let mut b = base.clone();
        f(&mut b);
        rademacher_bound(&b).unwrap()
    };
    if grow(&|b| b.train_size = 400) >= v {
        failures.push("bound did not shrink with N".into());
    }
    if grow(&|b| b.classes = 10) <= v {
        failures.push("bound did not grow with c".into());
    }
    if grow(&|b| b.input_norm = 3.0) <= v {
        failures.push("bound did not grow with B".into());
    }
    if grow(&|b| b.loss_bound = 2.0) <= v {
        failures.push("bound did not grow with M".into());
    }
    if grow(&|b| b.layer_norms = vec![2.0]) <= v {
        failures.push("bound did not grow with M₁".into());
    }
    report(8, "generalization bound formula", &failures);
}

#[test]
fn criterion_09_beta_zero_matches_smodel() {
    let mut failures = Vec::new();
    let t = symmetric_matrix(3, 0.4).unwrap();
    let spec = MixtureSpec::reference(200);
    let raw = generate_mixture(&spec, &mut SeededRng::new(9)).unwrap();
    let mut ds = split_dataset(&raw, 420, 30, 120, &mut SeededRng::new(10)).unwrap();
    ds.corrupt_train_split(&t, &mut SeededRng::new(11)).unwrap();

    let theta = logits_from_estimate(&symmetric_matrix(3, 0.3).unwrap(), DEFAULT_LOGIT_EPS)
        .unwrap();
    let mlp = MlpConfig::default();
    let config = TrainConfig {
        beta: 0.0,
        iters: 400,
        log_every: 50,
        seed: 42,
        ..TrainConfig::default()
    };
    let meta_out = run_meta_adaptation(&ds, &config, &mlp, &theta, Some(&t)).unwrap();
    let smodel_out = train_smodel(
        &ds,
        &mlp,
        &theta,
        config.alpha,
        0.0,
        config.iters,
        config.train_batch,
        config.seed,
    )
    .unwrap();
    for entry in &meta_out.trace.entries {
        let smodel_loss = smodel_out.losses[entry.iter - 1];
        if entry.noisy_loss.to_bits() != smodel_loss.to_bits() {
            failures.push(format!(
                "iter {}: meta loss {} vs smodel loss {}",
                entry.iter, entry.noisy_loss, smodel_loss
            ));
        }
    }
    // the frozen transitions agree bitwise too
    for (a, b) in meta_out
        .transition
        .matrix()
        .data()
        .iter()
        .zip(smodel_out.transition.matrix().data())
    {
        if a.to_bits() != b.to_bits() {
            failures.push("final transition differs".into());
            break;
        }
    }
    report(9, "β = 0 degenerates to fixed-T training bitwise", &failures);
}

fn run_cli(args: &[&str], dir: &std::path::Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_labelnoise"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn criterion_10_determinism_and_round_trips() {
    let mut failures = Vec::new();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let read = |name: &str| std::fs::read(dir.join(name)).unwrap();

    // identical flags → identical bytes, for every pipeline stage
    for out in ["a.csv", "b.csv"] {
        let st = run_cli(
            &[
                "generate", "--per-class", "120", "--seed", "5", "--train", "240", "--meta",
                "30", "--test", "90", "--out", out,
            ],
            dir,
        );
        assert!(st.status.success(), "generate failed");
    }
    if read("a.csv") != read("b.csv") {
        failures.push("generate is not deterministic".into());
    }
    for out in ["an.csv", "bn.csv"] {
        let st = run_cli(
            &[
                "corrupt", "--data", "a.csv", "--kind", "symmetric", "--rate", "0.4", "--seed",
                "2", "--out", out, "--matrix-out", "t.csv",
            ],
            dir,
        );
        assert!(st.status.success(), "corrupt failed");
    }
    if read("an.csv") != read("bn.csv") {
        failures.push("corrupt is not deterministic".into());
    }
    for sub in ["r1", "r2"] {
        let st = run_cli(
            &[
                "train", "--data", "an.csv", "--method", "meta", "--seed", "3", "--true-t",
                "t.csv", "--noise-kind", "symmetric", "--rate", "0.4", "--iters", "60",
                "--ce-epochs", "4", "--log-every", "20", "--out-dir", sub,
            ],
            dir,
        );
        assert!(st.status.success(), "train failed: {:?}", st);
    }
    for artifact in [
        "meta_symmetric_0.4_3.ckpt",
        "meta_symmetric_0.4_3.that.csv",
        "meta_symmetric_0.4_3.trace.csv",
        "meta_symmetric_0.4_3.config.toml",
    ] {
        if read(&format!("r1/{artifact}")) != read(&format!("r2/{artifact}")) {
            failures.push(format!("train artifact {artifact} differs between runs"));
        }
    }

    // round-trips through every file format
    let ds = labelnoise::io::read_dataset_csv(&dir.join("an.csv")).unwrap();
    labelnoise::io::write_dataset_csv(&ds, &dir.join("rt.csv")).unwrap();
    if read("an.csv") != read("rt.csv") {
        failures.push("dataset CSV round-trip not lossless".into());
    }
    let t = labelnoise::io::read_transition_csv(&dir.join("t.csv")).unwrap();
    labelnoise::io::write_transition_csv(&t, &dir.join("t2.csv")).unwrap();
    if read("t.csv") != read("t2.csv") {
        failures.push("transition CSV round-trip not lossless".into());
    }
    let ckpt = dir.join("r1/meta_symmetric_0.4_3.ckpt");
    let params = labelnoise::io::read_checkpoint(&ckpt).unwrap();
    labelnoise::io::write_checkpoint(&params, &dir.join("ckpt2")).unwrap();
    if std::fs::read(&ckpt).unwrap() != read("ckpt2") {
        failures.push("checkpoint round-trip not lossless".into());
    }
    report(10, "determinism and file round-trips", &failures);
}
