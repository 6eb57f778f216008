use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use emotech::augment::{balance_classes, BalancePolicy};
use emotech::data::{
    class_histogram, generate_synthetic_corpus, load_manifest, write_manifest, Emotion, ManifestRecord, Origin,
    SyntheticCorpusSpec, Utterance,
};
use emotech::dsp::{extract_features, read_wav, write_wav, FeatureCache, MfccExtractor, MfccParams};
use emotech::model::{count_parameters, load_checkpoint, load_checkpoint_for, EmoTech, ModelConfig};
use emotech::tensor::{Real, Tensor};
use emotech::text::{encode, normalize, Lexicon, Vocabulary};
use emotech::train::{
    ablation_grid, build_dataset, build_vocabulary, cross_validate_as, evaluate, render_ablation, CvOptions, CvOutput,
    CvReport, Dataset, EpochLog, TrainConfig,
};
use rayon::prelude::*;
use serde_json::json;

use crate::{AugmentArgs, EvalArgs, FeaturesArgs, InspectArgs, Precision, PredictArgs, SynthArgs, TrainArgs};

const CACHE_ENV: &str = "EMOTECH_CACHE_DIR";

fn load_records(manifest: &Path) -> Result<Vec<ManifestRecord>> {
    let records = load_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let hist = class_histogram(&records);
    let summary: Vec<String> = Emotion::ALL.iter().map(|e| format!("{e} {}", hist[e.index()])).collect();
    log::info!("{} records: {}", records.len(), summary.join(", "));
    Ok(records)
}

fn cache_dir(explicit: Option<&Path>, manifest: &Path) -> PathBuf {
    if let Some(d) = explicit {
        return d.to_path_buf();
    }
    if let Some(d) = std::env::var_os(CACHE_ENV).filter(|d| !d.is_empty()) {
        return PathBuf::from(d);
    }
    manifest.parent().unwrap_or(Path::new(".")).join(".emotech-cache")
}

fn vocab_beside(checkpoint: &Path, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join("vocab.tsv"))
}

fn featurize(records: &[ManifestRecord], vocab: &Vocabulary, cache: &Path) -> Result<Dataset> {
    let params = MfccParams::default();
    let cache = FeatureCache::open(cache, &params).with_context(|| format!("opening feature cache {}", cache.display()))?;
    Ok(build_dataset(records, &MfccExtractor::new(params), Some(&cache), vocab)?)
}

fn write_json(path: &Path, value: serde_json::Value) -> Result<()> {
    let mut body = serde_json::to_vec_pretty(&value)?;
    body.push(b'\n');
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(a: SynthArgs) -> Result<()> {
    if !(a.min_secs > 0.0 && a.min_secs <= a.max_secs) {
        bail!("need 0 < --min-secs <= --max-secs");
    }
    let spec = SyntheticCorpusSpec {
        counts: [a.per_class as usize; 5],
        min_secs: a.min_secs,
        max_secs: a.max_secs,
        seed: a.seed,
        ..SyntheticCorpusSpec::default()
    };
    let manifest = generate_synthetic_corpus(&spec, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn features(a: FeaturesArgs) -> Result<()> {
    let records = load_records(&a.manifest)?;
    let dir = cache_dir(a.cache_dir.as_deref(), &a.manifest);
    let vocab = build_vocabulary(&records)?;
    let data = featurize(&records, &vocab, &dir)?;
    vocab.save(dir.join("vocab.tsv"))?;
    let mut tokens = BufWriter::new(fs::File::create(dir.join("tokens.jsonl"))?);
    for i in 0..data.len() {
        let ids: Vec<usize> = data.tokens(i).iter().copied().take_while(|&t| t != 0).collect();
        serde_json::to_writer(&mut tokens, &json!({ "id": data.ids[i], "tokens": ids }))?;
        tokens.write_all(b"\n")?;
    }
    tokens.flush()?;
    println!("{} utterances cached in {} (vocabulary {})", data.len(), dir.display(), vocab.len());
    Ok(())
}

pub fn augment(a: AugmentArgs) -> Result<()> {
    let records = load_records(&a.manifest)?;
    let originals: Vec<&ManifestRecord> = records.iter().filter(|r| r.origin == Origin::Original).collect();
    let utterances: Vec<Utterance> = originals
        .par_iter()
        .map(|r| Utterance::load(r).with_context(|| format!("decoding {}", r.wav_path.display())))
        .collect::<Result<_>>()?;
    let hist = class_histogram(&records);
    let target = a.target.unwrap_or_else(|| hist.iter().copied().max().unwrap_or(0));
    let lexicon_path = a
        .lexicon
        .clone()
        .or_else(|| Some(a.manifest.parent()?.join("lexicon.tsv")).filter(|p| p.exists()));
    let lexicon = match &lexicon_path {
        Some(p) => Lexicon::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => Lexicon::new(),
    };
    if lexicon.is_empty() {
        log::warn!("no synonym lexicon; synonym-based text operators are disabled");
    }
    let policy = BalancePolicy {
        text_rate: a.text_rate,
        ..BalancePolicy::default()
    };
    let balanced = balance_classes(&utterances, &[target; 5], &policy, a.seed, &lexicon)?;

    let wav_dir = a.out.join("wavs");
    fs::create_dir_all(&wav_dir)?;
    let synthetic = &balanced.utterances[utterances.len()..];
    synthetic
        .par_iter()
        .map(|u| Ok(write_wav(wav_dir.join(format!("{}.wav", u.id)), &u.waveform)?))
        .collect::<Result<()>>()?;

    let mut out: Vec<ManifestRecord> = originals
        .iter()
        .map(|r| {
            let mut r = (*r).clone();
            r.wav_path = fs::canonicalize(&r.wav_path)?;
            Ok(r)
        })
        .collect::<Result<_>>()?;
    for (u, p) in synthetic.iter().zip(&balanced.provenance) {
        out.push(ManifestRecord {
            id: u.id.clone(),
            wav_path: PathBuf::from("wavs").join(format!("{}.wav", u.id)),
            transcript: u.transcript.clone(),
            label: u.label,
            origin: Origin::Augmented,
            source_id: Some(p.source_id.clone()),
        });
    }
    let manifest = a.out.join("manifest.jsonl");
    write_manifest(&manifest, &out)?;
    let mut prov = BufWriter::new(fs::File::create(a.out.join("provenance.jsonl"))?);
    for p in &balanced.provenance {
        serde_json::to_writer(&mut prov, p)?;
        prov.write_all(b"\n")?;
    }
    prov.flush()?;
    println!("{} originals + {} augmented -> {}", originals.len(), synthetic.len(), manifest.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let records = load_records(&a.manifest)?;
    fs::create_dir_all(&a.out)?;
    let vocab = match &a.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => build_vocabulary(&records)?,
    };
    vocab.save(a.out.join("vocab.tsv"))?;
    let data = featurize(&records, &vocab, &cache_dir(a.cache_dir.as_deref(), &a.manifest))?;
    let cfg = TrainConfig {
        epochs: a.epochs as usize,
        batch_size: a.batch_size as usize,
        lr0: a.lr,
        folds: a.folds as usize,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let model_cfg = ModelConfig::with_vocab_size(vocab.len());
    let opts = CvOptions {
        split_before_augment: a.split_before_augment,
    };

    let mut log_file = BufWriter::new(fs::File::create(a.out.join("train_log.jsonl"))?);
    let mut log_err = None;
    let mut on_epoch = |l: &EpochLog| {
        log::info!(
            "fold {} epoch {}: lr {:.2e} loss {:.4} acc {:.4}{}",
            l.fold,
            l.epoch,
            l.lr,
            l.train_loss,
            l.train_acc,
            l.val_loss.map_or(String::new(), |v| format!(" val_loss {v:.4} val_acc {:.4}", l.val_acc.unwrap_or(0.0)))
        );
        let line = serde_json::to_string(l).map_err(std::io::Error::from);
        if let Err(e) = line.and_then(|s| writeln!(log_file, "{s}")) {
            log_err.get_or_insert(e);
        }
    };

    if a.ablation {
        if a.precision == Precision::F64 {
            log::warn!("the ablation grid always trains in f32");
        }
        let reports = ablation_grid(&data, &model_cfg, &cfg, opts, &mut on_epoch)?;
        let table = render_ablation(&reports);
        fs::write(a.out.join("ablation.txt"), &table)?;
        write_json(&a.out.join("ablation.json"), serde_json::to_value(&reports)?)?;
        print!("{table}");
    } else {
        let output = CvOutput {
            dir: &a.out,
            vocab_digest: Some(vocab.digest()),
        };
        let report = match a.precision {
            Precision::F32 => cross_validate_as::<f32>(&data, &model_cfg, &cfg, opts, Some(&output), &mut on_epoch)?,
            Precision::F64 => cross_validate_as::<f64>(&data, &model_cfg, &cfg, opts, Some(&output), &mut on_epoch)?,
        };
        write_report(&a.out, &report, &cfg, &model_cfg)?;
        print!("{}", report.render());
    }
    if let Some(e) = log_err {
        return Err(e).context("writing train_log.jsonl");
    }
    log_file.flush()?;
    Ok(())
}

fn write_report(out: &Path, report: &CvReport, cfg: &TrainConfig, model_cfg: &ModelConfig) -> Result<()> {
    fs::copy(out.join(format!("fold{}.emtc", report.best_fold)), out.join("best.emtc"))?;
    write_json(
        &out.join("report.json"),
        json!({ "train_config": cfg, "model_config": model_cfg, "report": report }),
    )?;
    fs::write(out.join("report.txt"), report.render())?;
    fs::write(out.join("confusion.csv"), report.mean.confusion.to_csv())?;
    if let Some(best) = report.best() {
        fs::write(out.join("confusion_best_fold.csv"), best.metrics.confusion.to_csv())?;
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let vocab_path = vocab_beside(&a.checkpoint, a.vocab.as_deref());
    let vocab = Vocabulary::load(&vocab_path).with_context(|| format!("reading {}", vocab_path.display()))?;
    let (model, meta) = load_checkpoint_for(&a.checkpoint, &vocab)?;
    let records = load_records(&a.manifest)?;
    let data = featurize(&records, &vocab, &cache_dir(a.cache_dir.as_deref(), &a.manifest))?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let report = evaluate(&model, &data, &idx)?;
    print!("{}", report.render_table());
    println!("accuracy {:.4}", report.accuracy);
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("eval.json"), json!({ "checkpoint": meta, "metrics": report }))?;
        fs::write(out.join("confusion.csv"), report.confusion.to_csv())?;
    }
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let vocab_path = vocab_beside(&a.checkpoint, a.vocab.as_deref());
    let vocab = Vocabulary::load(&vocab_path).with_context(|| format!("reading {}", vocab_path.display()))?;
    let (model, _) = load_checkpoint_for(&a.checkpoint, &vocab)?;
    let params = MfccParams::default();
    let wav = read_wav(&a.wav).with_context(|| format!("decoding {}", a.wav.display()))?;
    let m = extract_features(&wav, &MfccExtractor::new(params))?;
    let mfcc = Tensor::new(vec![1, m.frames, m.coeffs], m.values)?;
    let tokens = encode(&vocab, &normalize(&a.transcript)).ids;
    let probs = model.predict(&mfcc, &tokens)?;
    let probs: Vec<f64> = probs.data().iter().map(|p| p.as_f64()).collect();
    let mut best = 0;
    for (k, e) in Emotion::ALL.iter().enumerate() {
        println!("{:<8} {:.6}", e.name(), probs[k]);
        if probs[k] > probs[best] {
            best = k;
        }
    }
    println!("predicted {}", Emotion::ALL[best]);
    Ok(())
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let report = match &a.checkpoint {
        Some(p) => count_parameters(&load_checkpoint(p)?.0),
        None => count_parameters(&EmoTech::<f32>::new(ModelConfig::with_vocab_size(a.vocab_size as usize), 0)?),
    };
    print!("{}", report.render());
    Ok(())
}
