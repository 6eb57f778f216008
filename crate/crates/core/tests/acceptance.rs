//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any fails.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use emotech::data::{generate_synthetic_corpus, load_manifest, Origin, SyntheticCorpusSpec, NUM_CLASSES};
use emotech::dsp::{mfcc, MfccExtractor, MfccParams};
use emotech::model::{count_parameters, read_checkpoint, write_checkpoint, CheckpointMeta, EmoTech, Modality, ModelConfig};
use emotech::nn::{
    batch_norm, bilstm, conv1d, conv2d, dense, dropout, embedding, global_max_pool, max_pool2d, Activation, ForwardCtx,
};
use emotech::tensor::gradcheck::{central_difference, check_gradients, relative_error, Differentiable};
use emotech::tensor::{Graph, NormMode, ParamKey, Real, Tensor, TensorError, Var};
use emotech::train::{
    ablation_grid, build_dataset, build_vocabulary, evaluate, f1_score, fold_class_counts, kfold_split, render_ablation,
    train, CvOptions, Dataset, EpochLog, MetricsReport, PlateauConfig, PlateauScheduler, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 1 ----

fn shapes() -> Outcome {
    let cfg = ModelConfig::default();
    let model = EmoTech::<f32>::new(cfg.clone(), 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mfcc = Tensor::from_fn(&[1, 740, 13], |_| rng.random_range(-20.0f32..20.0));
    let tokens: Vec<usize> = (0..98).map(|i| if i < 30 { rng.random_range(2..2843) } else { 0 }).collect();
    let start = Instant::now();
    let mut g = Graph::new();
    let out = model
        .forward(&mut g, &mut ForwardCtx::inference(), &mfcc, &tokens)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let flat = model.audio_block().map(|b| b.flat_dim()).unwrap_or(0);
    let audio = out.audio.map(|v| g.shape(v).to_vec()).unwrap_or_default();
    let text = out.text.map(|v| g.shape(v).to_vec()).unwrap_or_default();
    let fused = g.shape(out.fused).to_vec();
    let probs = g.shape(out.probs).to_vec();
    let detail = format!(
        "flatten {flat}, audio {audio:?}, text {text:?}, fused {fused:?}, logits {probs:?}, forward {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    );
    ensure(
        flat == 11776
            && audio == [1, 256]
            && text == [1, 256]
            && fused == [1, 512]
            && probs == [1, 5]
            && elapsed < Duration::from_secs(1),
        detail,
    )
}

// ---- 2 ----

fn parameter_count() -> Outcome {
    let model = EmoTech::<f32>::new(ModelConfig::with_vocab_size(2843), 0).map_err(|e| e.to_string())?;
    let report = count_parameters(&model);
    let text = report.render();
    let audio_dense = report.block("audio/dense");
    let classifier = report.block("classifier");
    let detail = format!(
        "total {} vs 7,295,821 ({:+.3}%), audio dense {audio_dense}, classifier {classifier}",
        report.total,
        100.0 * report.relative_difference()
    );
    ensure(
        report.relative_difference().abs() < 0.01
            && audio_dense == 6_095_488
            && classifier == 172_805
            && text.contains("reference total 7,295,821")
            && text.contains("embedding rows"),
        detail,
    )
}

// ---- 3 ----

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn contract<T: Real>(g: &mut Graph<'_, T>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(random(g.shape(y), &mut rng).cast())?;
    let p = g.mul(y, r)?;
    g.sum(p)
}

struct DenseCase;
impl Differentiable for DenseCase {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, v: &[Var]) -> Result<Var, TensorError> {
        let y = dense(g, v[0], v[1], v[2], Activation::Tanh)?;
        contract(g, y, 1)
    }
}

struct ConvPoolCase;
impl Differentiable for ConvPoolCase {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, v: &[Var]) -> Result<Var, TensorError> {
        let y = conv2d(g, v[0], v[1], v[2])?;
        let y = g.relu(y)?;
        let y = max_pool2d(g, y)?;
        contract(g, y, 2)
    }
}

struct Conv1dCase;
impl Differentiable for Conv1dCase {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, v: &[Var]) -> Result<Var, TensorError> {
        let y = conv1d(g, v[0], v[1], v[2], Activation::Relu)?;
        let y = global_max_pool(g, y)?;
        contract(g, y, 3)
    }
}

struct BatchNormCase;
impl Differentiable for BatchNormCase {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, v: &[Var]) -> Result<Var, TensorError> {
        let (y, _) = batch_norm(g, v[0], v[1], v[2], NormMode::Train { eps: T::of(1e-3) })?;
        contract(g, y, 4)
    }
}

struct BiLstmCase;
impl Differentiable for BiLstmCase {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, v: &[Var]) -> Result<Var, TensorError> {
        let seq = bilstm(g, v[0], [v[1], v[2], v[3]], Some([v[4], v[5], v[6]]), true)?;
        let last = bilstm(g, seq, [v[7], v[8], v[9]], Some([v[10], v[11], v[12]]), false)?;
        contract(g, last, 5)
    }
}

struct EmbeddingCase;
impl Differentiable for EmbeddingCase {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, v: &[Var]) -> Result<Var, TensorError> {
        let e = embedding(g, v[0], &[1, 3, 2, 3, 2, 4], &[2, 3], Some(0))?;
        let y = g.tanh(e)?;
        contract(g, y, 6)
    }
}

struct DropoutSoftmaxCase;
impl Differentiable for DropoutSoftmaxCase {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, v: &[Var]) -> Result<Var, TensorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = dropout(g, v[0], 0.2, true, &mut rng)?;
        let p = g.softmax(y)?;
        let labels = Tensor::from_fn(&[3, 5], |i| T::of(f64::from(i % 5 == (i / 5 + 1) % 5)));
        g.cross_entropy(p, &labels)
    }
}

/// Five-point stencil step: truncation error grows like h^4 and roundoff like
/// eps/h, balanced near eps^(1/5) in f64.
const SMOOTH_STEP: f64 = 1e-3;
/// ReLU and max selections must not switch inside the stencil.
const PIECEWISE_STEP: f64 = 1e-4;

fn layer_checks() -> Result<Vec<(&'static str, f64)>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut out = Vec::new();
    let dense_in = [random(&[3, 4], &mut rng), random(&[4, 5], &mut rng), random(&[5], &mut rng)];
    out.push(("dense", check_gradients::<f64, _>(&DenseCase, &dense_in, SMOOTH_STEP)?.max_rel_error));
    let conv_in = [random(&[2, 6, 5, 2], &mut rng), random(&[3, 3, 2, 3], &mut rng), random(&[3], &mut rng)];
    out.push(("conv2d+relu+maxpool", check_gradients::<f64, _>(&ConvPoolCase, &conv_in, PIECEWISE_STEP)?.max_rel_error));
    let c1_in = [random(&[2, 7, 3], &mut rng), random(&[5, 3, 4], &mut rng), random(&[4], &mut rng)];
    out.push(("conv1d+globalmax", check_gradients::<f64, _>(&Conv1dCase, &c1_in, PIECEWISE_STEP)?.max_rel_error));
    let bn_in = [random(&[3, 2, 2, 3], &mut rng), random(&[3], &mut rng), random(&[3], &mut rng)];
    out.push(("batchnorm", check_gradients::<f64, _>(&BatchNormCase, &bn_in, SMOOTH_STEP)?.max_rel_error));
    let (i, h) = (2, 3);
    let mut lstm_in = vec![random(&[2, 4, i], &mut rng)];
    for inp in [i, i, 2 * h, 2 * h] {
        lstm_in.push(random(&[inp, 4 * h], &mut rng));
        lstm_in.push(random(&[h, 4 * h], &mut rng));
        lstm_in.push(random(&[4 * h], &mut rng));
    }
    out.push(("stacked bilstm", check_gradients::<f64, _>(&BiLstmCase, &lstm_in, SMOOTH_STEP)?.max_rel_error));
    let emb_in = [random(&[5, 3], &mut rng)];
    out.push(("embedding", check_gradients::<f64, _>(&EmbeddingCase, &emb_in, SMOOTH_STEP)?.max_rel_error));
    let ds_in = [random(&[3, 5], &mut rng)];
    out.push(("dropout+softmax+xent", check_gradients::<f64, _>(&DropoutSoftmaxCase, &ds_in, SMOOTH_STEP)?.max_rel_error));
    Ok(out)
}

fn one_hot<T: Real>(labels: &[usize]) -> Tensor<T> {
    Tensor::from_fn(&[labels.len(), NUM_CLASSES], |i| T::of(f64::from(labels[i / NUM_CLASSES] == i % NUM_CLASSES)))
}

fn loss_and_grads(model: &EmoTech<f64>, mfcc: &Tensor<f64>, tokens: &[usize], labels: &[usize]) -> (f64, HashMap<ParamKey, Tensor<f64>>) {
    let mut g = Graph::new();
    let out = model.forward(&mut g, &mut ForwardCtx::training(17), mfcc, tokens).unwrap();
    let loss = g.cross_entropy(out.probs, &one_hot(labels)).unwrap();
    let value = g.value(loss).item().unwrap();
    (value, g.backward(loss).unwrap().into_params())
}

/// Directional derivatives of the full-size fused model along unit-norm random
/// directions, against five-point central differences.
fn full_model_probes() -> Vec<f64> {
    let cfg = ModelConfig::default();
    let mut model = EmoTech::<f64>::new(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    // Zero-initialized biases put identical values on ReLU kinks and pooling
    // ties; move the weights to a generic point.
    for e in model.store_mut().entries_mut().iter_mut().filter(|e| e.trainable) {
        for v in e.value.data_mut() {
            *v += 0.05 * rng.sample::<f64, _>(StandardNormal);
        }
        if e.name.ends_with("/embeddings") {
            e.value.data_mut()[..cfg.embed_dim].fill(0.0);
        }
    }
    let mfcc = Tensor::from_fn(&[2, cfg.frames, cfg.n_mfcc], |_| rng.sample::<f64, _>(StandardNormal));
    let tokens: Vec<usize> = (0..2 * cfg.max_tokens).map(|_| rng.random_range(1..cfg.vocab_size)).collect();
    let labels = [2, 4];
    let (_, grads) = loss_and_grads(&model, &mfcc, &tokens, &labels);
    let mut errors = Vec::new();
    for _ in 0..8 {
        let mut dirs: Vec<Option<Tensor<f64>>> = model
            .store()
            .entries()
            .iter()
            .map(|e| {
                e.trainable.then(|| {
                    let mut d = Tensor::from_fn(e.value.shape(), |_| rng.sample::<f64, _>(StandardNormal));
                    if e.name.ends_with("/embeddings") {
                        d.data_mut()[..cfg.embed_dim].fill(0.0);
                    }
                    d
                })
            })
            .collect();
        let norm = dirs
            .iter()
            .flatten()
            .map(|d| d.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        for d in dirs.iter_mut().flatten() {
            d.data_mut().iter_mut().for_each(|x| *x /= norm);
        }
        let analytic: f64 = model
            .store()
            .keys()
            .filter_map(|k| Some((grads.get(&k)?, dirs[k.0].as_ref()?)))
            .map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let numeric = central_difference(
            |t| {
                let mut m = model.clone();
                for (e, d) in m.store_mut().entries_mut().iter_mut().zip(&dirs) {
                    if let Some(d) = d {
                        e.value.data_mut().iter_mut().zip(d.data()).for_each(|(v, dv)| *v += t * dv);
                    }
                }
                Ok::<_, ()>(loss_and_grads(&m, &mfcc, &tokens, &labels).0)
            },
            // Along a unit direction over ~10^6 ReLU and pooling units, steps of
            // 1e-4 and up already cross selection switches.
            1e-5,
        )
        .unwrap();
        errors.push(relative_error(analytic, numeric));
    }
    errors
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let layers = layer_checks().map_err(|e| e.to_string())?;
    let worst_layer = layers.iter().map(|l| l.1).fold(0.0, f64::max);
    let probes = full_model_probes();
    let worst_probe = probes.iter().copied().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let names: Vec<String> = layers.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    ensure(
        worst_layer < 1e-7 && worst_probe < 1e-5 && elapsed < Duration::from_secs(300),
        format!(
            "layers [{}]; full model max over 8 probes {worst_probe:.1e}; {:.0} s",
            names.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

// ---- 4 ----

fn mfcc_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let fixtures = common::mfcc_fixtures();
    for (name, w) in &fixtures {
        let fast = mfcc(w).map_err(|e| format!("{name}: {e}"))?;
        let slow = common::slow_mfcc(&w.samples);
        if fast.valid_frames != slow.len() {
            return Err(format!("{name}: {} frames vs {}", fast.valid_frames, slow.len()));
        }
        for (t, row) in slow.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                worst = worst.max((fast.row(t)[k] as f64 - v).abs());
            }
        }
    }
    ensure(fixtures.len() == 10 && worst < 1e-4, format!("{} fixtures, max abs diff {worst:.2e}", fixtures.len()))
}

// ---- 5 / 6 ----

struct Overfit {
    model: EmoTech<f32>,
    history: Vec<EpochLog>,
}

fn synthetic_corpus() -> Result<(tempfile::TempDir, Dataset), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = generate_synthetic_corpus(&SyntheticCorpusSpec::default(), dir.path()).map_err(|e| e.to_string())?;
    let records = load_manifest(&manifest).map_err(|e| e.to_string())?;
    let vocab = build_vocabulary(&records).map_err(|e| e.to_string())?;
    let data = build_dataset(&records, &MfccExtractor::new(MfccParams::default()), None, &vocab).map_err(|e| e.to_string())?;
    Ok((dir, data))
}

fn overfit(slot: &mut Option<Overfit>) -> Outcome {
    let (_dir, data) = synthetic_corpus()?;
    let vocab_size = (0..data.len()).flat_map(|i| data.tokens(i).to_vec()).max().unwrap_or(1) + 1;
    let mut model = EmoTech::<f32>::new(ModelConfig::with_vocab_size(vocab_size), 0).map_err(|e| e.to_string())?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 32,
        lr0: 1e-3,
        target_train_accuracy: Some(0.95),
        ..TrainConfig::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = pool
        .install(|| train(&mut model, &data, &idx, &[], &cfg, 0, &mut |_| {}))
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let last = outcome.history.last().ok_or("no epochs ran")?;
    let inference = evaluate(&model, &data, &idx).map_err(|e| e.to_string())?.accuracy;
    let detail = format!(
        "{} samples, train accuracy {:.3} at epoch {}, inference accuracy {inference:.3}, {:.0} s on one thread",
        data.len(),
        last.train_acc,
        last.epoch,
        elapsed.as_secs_f64()
    );
    let ok = data.len() == 100 && outcome.reached_target && last.epoch <= 200 && elapsed < Duration::from_secs(900);
    *slot = Some(Overfit {
        model,
        history: outcome.history,
    });
    ensure(ok, detail)
}

fn lr_contract(overfit: Option<&Overfit>) -> Outcome {
    let mut logged: Vec<f64> = overfit.map(|o| o.history.iter().map(|l| l.lr).collect()).unwrap_or_default();
    // A run that cannot learn (shuffled labels) so the plateau rule keeps cutting.
    let cfg = ModelConfig {
        modality: Modality::Text,
        max_tokens: 6,
        vocab_size: 20,
        embed_dim: 4,
        lstm_units: 2,
        text_conv_filters: 4,
        text_conv_kernel: 3,
        head_units: vec![4, 4, 4],
        frames: 8,
        n_mfcc: 4,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut data = Dataset::new(cfg.frames, cfg.n_mfcc, cfg.max_tokens);
    for i in 0..40 {
        let tokens: Vec<usize> = (0..6).map(|_| rng.random_range(1..20)).collect();
        data.push(format!("r{i}"), rng.random_range(0..NUM_CLASSES), Origin::Original, None, &[0.0; 32], &tokens)
            .map_err(|e| e.to_string())?;
    }
    let mut model = EmoTech::<f32>::new(cfg, 1).map_err(|e| e.to_string())?;
    let idx: Vec<usize> = (0..40).collect();
    let tc = TrainConfig {
        epochs: 120,
        batch_size: 8,
        plateau_patience: 1,
        early_stop_patience: 1000,
        ..TrainConfig::default()
    };
    let out = train(&mut model, &data, &idx[..30], &idx[30..], &tc, 0, &mut |_| {}).map_err(|e| e.to_string())?;
    logged.extend(out.history.iter().map(|l| l.lr));
    let mut sched = PlateauScheduler::new(1e-3, PlateauConfig::default());
    logged.extend((0..500).map(|_| sched.observe(1.0)));
    let max = logged.iter().copied().fold(f64::MIN, f64::max);
    let min = logged.iter().copied().fold(f64::MAX, f64::min);
    ensure(
        !logged.is_empty() && max <= 1e-3 && min >= 1e-6,
        format!("{} logged rates in [{min:.1e}, {max:.1e}]", logged.len()),
    )
}

// ---- 7 ----

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..NUM_CLASSES)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.random_bool(0.5) { t } else { rng.random_range(0..NUM_CLASSES) })
            .collect();
        let r = MetricsReport::from_predictions(&truth, &pred);
        let hits = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
        worst = worst.max((r.accuracy - hits as f64 / n as f64).abs());
        for k in 0..NUM_CLASSES {
            let tp = truth.iter().zip(&pred).filter(|&(&t, &p)| t == k && p == k).count() as f64;
            let fp = truth.iter().zip(&pred).filter(|&(&t, &p)| t != k && p == k).count() as f64;
            let fneg = truth.iter().zip(&pred).filter(|&(&t, &p)| t == k && p != k).count() as f64;
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rc = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            let f = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fneg) } else { 0.0 };
            let c = &r.per_class[k];
            worst = worst.max((c.precision - p).abs()).max((c.recall - rc).abs()).max((c.f1 - f).abs());
        }
    }
    let f1 = format!("{:.4}", f1_score(0.9641, 0.9729));
    ensure(worst < 1e-9 && f1 == "0.9685", format!("1000 sets, max deviation {worst:.1e}; F1(0.9641, 0.9729) = {f1}"))
}

// ---- 8 ----

fn checkpoint_round_trip(overfit: Option<&Overfit>) -> Outcome {
    let model = match overfit {
        Some(o) => o.model.clone(),
        None => EmoTech::<f32>::new(ModelConfig::default(), 5).map_err(|e| e.to_string())?,
    };
    let bytes = write_checkpoint(&model, &CheckpointMeta::default());
    let (loaded, _) = read_checkpoint(&bytes).map_err(|e| e.to_string())?;
    let cfg = model.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let mut identical = 0;
    for _ in 0..8 {
        let mfcc = Tensor::from_fn(&[1, cfg.frames, cfg.n_mfcc], |_| rng.random_range(-30.0f32..30.0));
        let tokens: Vec<usize> = (0..cfg.max_tokens).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
        let a = model.predict(&mfcc, &tokens).map_err(|e| e.to_string())?;
        let b = loaded.predict(&mfcc, &tokens).map_err(|e| e.to_string())?;
        if a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()) {
            identical += 1;
        }
    }
    ensure(
        identical == 8 && loaded.store() == model.store(),
        format!("{identical}/8 inputs bitwise identical, {} bytes", bytes.len()),
    )
}

// ---- 9 ----

fn cv_partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    // Imbalanced labels, roughly the shape of a real five-class corpus.
    let weights = [0.19, 0.18, 0.11, 0.30, 0.22];
    let labels: Vec<usize> = (0..5633)
        .map(|_| {
            let mut u: f64 = rng.random();
            weights.iter().position(|&w| {
                u -= w;
                u < 0.0
            })
            .unwrap_or(4)
        })
        .collect();
    let folds = kfold_split(&labels, 5, 0, true).map_err(|e| e.to_string())?;
    let mut sizes: Vec<usize> = folds.iter().map(|f| f.val.len()).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let mut seen = vec![0usize; labels.len()];
    for f in &folds {
        f.val.iter().for_each(|&i| seen[i] += 1);
    }
    let disjoint = folds.iter().all(|f| {
        let val: std::collections::HashSet<_> = f.val.iter().collect();
        f.train.len() + f.val.len() == labels.len() && f.train.iter().all(|i| !val.contains(i))
    });
    let imbalance = (0..NUM_CLASSES)
        .map(|c| {
            let counts: Vec<usize> = folds.iter().map(|f| fold_class_counts(&labels, f)[c]).collect();
            counts.iter().max().unwrap() - counts.iter().min().unwrap()
        })
        .max()
        .unwrap();
    ensure(
        sizes == [1127, 1127, 1127, 1126, 1126] && seen.iter().all(|&c| c == 1) && disjoint && imbalance <= 1,
        format!("fold sizes {sizes:?}, exact partition {}, max per-class imbalance {imbalance}", disjoint && seen.iter().all(|&c| c == 1)),
    )
}

// ---- 10 ----

fn runbook_and_ablation() -> Outcome {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).map_err(|e| format!("README: {e}"))?;
    let steps = ["emotech features", "emotech augment", "emotech train", "emotech eval", "--ablation"];
    let missing: Vec<&str> = steps.iter().copied().filter(|s| !readme.contains(s)).collect();
    if !missing.is_empty() {
        return Err(format!("runbook is missing {missing:?}"));
    }
    let cfg = ModelConfig {
        frames: 16,
        n_mfcc: 8,
        max_tokens: 5,
        vocab_size: 12,
        embed_dim: 4,
        lstm_units: 2,
        conv_filters: vec![2, 2, 2],
        audio_dense: [4, 4],
        text_conv_filters: 4,
        text_conv_kernel: 3,
        head_units: vec![4, 4, 4],
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut data = Dataset::new(16, 8, 5);
    for i in 0..25 {
        let label = i % NUM_CLASSES;
        let tokens: Vec<usize> = (0..5).map(|_| rng.random_range(1..12)).collect();
        let audio: Vec<f32> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        data.push(format!("u{i}"), label, Origin::Original, None, &audio, &tokens).map_err(|e| e.to_string())?;
        data.push(format!("u{i}_aug0000"), label, Origin::Augmented, Some(format!("u{i}")), &audio, &tokens)
            .map_err(|e| e.to_string())?;
    }
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let reports = ablation_grid(&data, &cfg, &tc, CvOptions::default(), &mut |_| {}).map_err(|e| e.to_string())?;
    let table = render_ablation(&reports);
    let cells = reports.len();
    ensure(
        cells == 6 && table.lines().count() == 7,
        format!(
            "runbook documented, ablation grid emits {cells} cells; the 0.8352 corpus accuracy itself needs the licensed recordings and is not attempted"
        ),
    )
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n:>2} {tag} {name}: {detail} [{:.1} s]", start.elapsed().as_secs_f64());
    result.is_ok()
}

fn main() {
    // Under `cargo test` the harness flags land here; listing must succeed quietly.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut overfit_run = None;
    let results = [
        run(1, "shape reproduction", shapes),
        run(2, "parameter count", parameter_count),
        run(3, "gradient correctness", gradients),
        run(4, "MFCC oracle equivalence", mfcc_oracle),
        run(5, "overfit smoke", || overfit(&mut overfit_run)),
        run(6, "learning-rate contract", || lr_contract(overfit_run.as_ref())),
        run(7, "metric identities", metric_identities),
        run(8, "checkpoint round-trip", || checkpoint_round_trip(overfit_run.as_ref())),
        run(9, "CV partition", cv_partition),
        run(10, "desk-scale scope (runbook + ablation grid)", runbook_and_ablation),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
