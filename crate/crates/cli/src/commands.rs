use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use spoofdet::archive::{
    backend_from_file, backend_to_file, gmm_from_file, gmm_to_file, read_features, sad_to_file, write_features,
    xresnet_from_file, xresnet_to_file, ModelFile,
};
use spoofdet::audio::{read_wav, write_wav, DatasetManifest, Label, ManifestEntry, Partition};
use spoofdet::backend::{Backend, GmmModel, GmmPair, UtteranceEmbeddings};
use spoofdet::config::PipelineConfig;
use spoofdet::features::{extract_features, FeatureKind, FeatureMatrix};
use spoofdet::nnet::{extract_embeddings, train, Example, XResNet};
use spoofdet::pipeline::{score_gmm, Detector, UtteranceScore};
use spoofdet::sad::{apply_mask, detect_speech, frame_accuracy, train_sad, SadExample};
use spoofdet::scoring::{compute_eer, format_score_dump, parse_score_dump, ScoreLine};
use spoofdet::Error;

use crate::args::*;
use crate::files::{all, artifact_path, ensure_parent, load_sad, masked_features, par_map, write_text, Corpus};
use crate::UsageError;

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if cli.common.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.common.jobs)
            .build_global()
            .context("starting worker threads")?;
    }
    match cli.command {
        Command::ExtractFeatures(a) => cmd_extract_features(&cfg, &a),
        Command::TrainSad(a) => cmd_train_sad(&cfg, &a),
        Command::RunSad(a) => cmd_run_sad(&cfg, &a),
        Command::Augment(a) => cmd_augment(&cfg, &a),
        Command::TrainModel(a) => cmd_train_model(&cfg, &a),
        Command::ExtractEmbeddings(a) => cmd_extract_embeddings(&cfg, &a),
        Command::TrainBackend(a) => cmd_train_backend(&cfg, &a),
        Command::TrainGmm(a) => cmd_train_gmm(&cfg, &a),
        Command::Score(a) => cmd_score(&cfg, &a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

/// Logs every failed file and fails with the first error if there was one.
fn finish_per_file<T>(results: Vec<Result<T>>, what: &str) -> Result<Vec<T>> {
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut first = None;
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                log::error!("{e:#}");
                failed += 1;
                first.get_or_insert(e);
            }
        }
    }
    match first {
        Some(e) => Err(e.context(format!("{what}: {failed} of {total} files failed"))),
        None => Ok(ok),
    }
}

fn read_model(path: &Path, what: &str) -> Result<ModelFile> {
    ModelFile::read(path).with_context(|| format!("loading {what} {}", path.display()))
}

fn cmd_extract_features(cfg: &PipelineConfig, a: &ExtractFeatures) -> Result<()> {
    let corpus = Corpus::load(&a.input.manifest)?;
    let kind: FeatureKind = a.kind.map(Into::into).unwrap_or(cfg.features.kind).into();
    let entries = corpus.entries(a.input.partition);
    let results = par_map(&entries, |e| {
        let feats = extract_features(&corpus.audio(e)?, kind)?;
        let path = artifact_path(&a.out, &e.audio_path, "spdf");
        ensure_parent(&path)?;
        write_features(&path, &feats)?;
        Ok(())
    });
    let done = finish_per_file(results, "feature extraction")?;
    println!("wrote {} {:?} feature archives to {}", done.len(), kind, a.out.display());
    Ok(())
}

fn cmd_train_sad(cfg: &PipelineConfig, a: &TrainSad) -> Result<()> {
    let corpus = Corpus::load(&a.manifest)?;
    let examples = |p: Partition| {
        all(par_map(&corpus.entries(Some(p)), |e| {
            Ok(SadExample::from_audio(&corpus.audio(e)?, &cfg.sad, cfg.sad_train.label_range_db)?)
        }))
    };
    let train_set = examples(Partition::Train)?;
    let (model, losses) = train_sad(&train_set, &cfg.sad_train, cfg.seed)?;
    ensure_parent(&a.out)?;
    sad_to_file(&model).write(&a.out)?;
    for (epoch, loss) in losses.iter().enumerate() {
        log::info!("SAD epoch {}: loss {loss:.5}", epoch + 1);
    }
    let dev_set = examples(Partition::Dev)?;
    let dev = if dev_set.is_empty() {
        String::new()
    } else {
        format!(", dev frame accuracy {:.2}%", 100.0 * frame_accuracy(&model, &dev_set)?)
    };
    println!("trained SAD on {} utterances{dev}", train_set.len());
    Ok(())
}

fn cmd_run_sad(cfg: &PipelineConfig, a: &RunSad) -> Result<()> {
    let corpus = Corpus::load(&a.input.manifest)?;
    let model = spoofdet::archive::sad_from_file(&read_model(&a.sad, "SAD model")?)?;
    let results = par_map(&corpus.entries(a.input.partition), |e| {
        let segments = detect_speech(&model, &corpus.audio(e)?, &cfg.sad)?;
        write_text(&artifact_path(&a.out, &e.audio_path, "seg"), &segments.to_string())?;
        Ok(segments.total_duration())
    });
    let speech = finish_per_file(results, "speech detection")?;
    println!("wrote {} segment files, {:.1} s of speech", speech.len(), speech.iter().sum::<f64>());
    Ok(())
}

fn cmd_augment(cfg: &PipelineConfig, a: &Augment) -> Result<()> {
    let corpus = Corpus::load(&a.manifest)?;
    let noises = a
        .noise
        .iter()
        .map(|p| read_wav(p).with_context(|| format!("reading noise {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let snr_db = a.snr_db.unwrap_or(cfg.augment.snr_db);
    let entries = corpus.entries(Some(a.partition));
    // draw every choice up front so the output does not depend on --jobs
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plan: Vec<(usize, u64)> = entries.iter().map(|_| (rng.random_range(0..noises.len()), rng.random())).collect();
    let results: Vec<Result<ManifestEntry>> = entries
        .par_iter()
        .zip(plan)
        .map(|(e, (noise, seed))| -> Result<ManifestEntry> {
            let mix = spoofdet::augment::mix_at_snr(&corpus.audio(e)?, &noises[noise], snr_db, seed)?;
            let rel = artifact_path(Path::new(""), &e.audio_path, "wav");
            let path = a.out.join(&rel);
            ensure_parent(&path)?;
            write_wav(&path, &mix.audio)?;
            Ok(ManifestEntry::new(rel.to_string_lossy(), e.label, e.class_id.clone(), e.partition))
        })
        .zip(&entries)
        .map(|(r, e)| r.with_context(|| e.audio_path.clone()))
        .collect();
    let written = finish_per_file(results, "augmentation")?;
    let manifest = DatasetManifest::new(written)?;
    let path = a.out.join("manifest.tsv");
    write_text(&path, &manifest.serialize())?;
    println!("wrote {} noisy utterances at {snr_db} dB SNR; manifest {}", manifest.len(), path.display());
    Ok(())
}

fn load_examples(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    features: &Path,
    sad: Option<&spoofdet::sad::SadModel<f32>>,
    partition: Partition,
) -> Result<Vec<Example>> {
    all(par_map(&corpus.entries(Some(partition)), |e| {
        Ok(Example {
            features: masked_features(corpus, e, features, sad, &cfg.sad)?,
            label: e.label.target(),
        })
    }))
}

fn cmd_train_model(cfg: &PipelineConfig, a: &TrainModel) -> Result<()> {
    let corpus = Corpus::load(&a.manifest)?;
    let sad = load_sad(&a.sad)?;
    let train_set = load_examples(cfg, &corpus, &a.features, sad.as_ref(), Partition::Train)?;
    let dev_set = load_examples(cfg, &corpus, &a.features, sad.as_ref(), Partition::Dev)?;
    let model = XResNet::build(&cfg.model, cfg.seed)?;
    let (best, log) = train(model, &train_set, &dev_set, &cfg.train, cfg.seed)?;
    ensure_parent(&a.out)?;
    xresnet_to_file(&best).write(&a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log"));
    write_text(&log_path, &log.to_string())?;
    println!(
        "best epoch {} of {}, dev EER {:.2}%; log {}",
        log.best_epoch,
        log.epochs.len(),
        100.0 * log.best_eer,
        log_path.display()
    );
    Ok(())
}

fn cmd_extract_embeddings(cfg: &PipelineConfig, a: &ExtractEmbeddings) -> Result<()> {
    let corpus = Corpus::load(&a.input.manifest)?;
    let sad = load_sad(&a.sad)?;
    let net = xresnet_from_file(&read_model(&a.model, "network")?)?;
    let results = par_map(&corpus.entries(a.input.partition), |e| {
        let feats = masked_features(&corpus, e, &a.features, sad.as_ref(), &cfg.sad)?;
        let embeddings = extract_embeddings(&net, &feats, &cfg.embedding)?;
        let dim = embeddings[0].vector.len();
        let values: Vec<f64> = embeddings.iter().flat_map(|x| x.vector.iter().copied()).collect();
        let m = FeatureMatrix::new(values, embeddings.len(), dim, FeatureKind::Generic)?;
        let path = artifact_path(&a.out, &e.audio_path, "emb");
        ensure_parent(&path)?;
        write_features(&path, &m)?;
        Ok(m.n_frames())
    });
    let counts = finish_per_file(results, "embedding extraction")?;
    println!("wrote {} embedding archives ({} windows)", counts.len(), counts.iter().sum::<usize>());
    Ok(())
}

fn cmd_train_backend(cfg: &PipelineConfig, a: &TrainBackend) -> Result<()> {
    let corpus = Corpus::load(&a.manifest)?;
    let utts = all(par_map(&corpus.entries(Some(Partition::Train)), |e| {
        let path = artifact_path(&a.embeddings, &e.audio_path, "emb");
        let m = read_features(&path).with_context(|| format!("reading embeddings {}", path.display()))?;
        Ok(UtteranceEmbeddings {
            embeddings: m.rows().map(<[f64]>::to_vec).collect(),
            label: e.label.target(),
            class_id: e.class_id.clone(),
        })
    }))?;
    let (backend, log) = Backend::train(&utts, &cfg.backend, cfg.seed)?;
    ensure_parent(&a.out)?;
    backend_to_file(&backend).write(&a.out)?;
    let mut text = format!(
        "# seed {}\n# lda_dim {}\n# plda_rank {}\n# train_utterances {}\n# enroll_utterances {}\niteration\tlog_likelihood\n",
        cfg.seed, log.lda_dim, log.plda_rank, log.n_train_utterances, log.n_enroll_utterances
    );
    for (i, ll) in log.plda.log_likelihood.iter().enumerate() {
        text.push_str(&format!("{}\t{ll:?}\n", i + 1));
    }
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log"));
    write_text(&log_path, &text)?;
    println!(
        "backend: LDA {} dims, PLDA rank {}, {} training and {} enrollment utterances",
        log.lda_dim, log.plda_rank, log.n_train_utterances, log.n_enroll_utterances
    );
    Ok(())
}

fn cmd_train_gmm(cfg: &PipelineConfig, a: &TrainGmm) -> Result<()> {
    let corpus = Corpus::load(&a.manifest)?;
    let sad = load_sad(&a.sad)?;
    let examples = load_examples(cfg, &corpus, &a.features, sad.as_ref(), Partition::Train)?;
    let frames = |label: u8| -> Vec<&[f64]> {
        examples.iter().filter(|e| e.label == label).flat_map(|e| e.features.rows()).collect()
    };
    let (spoof_frames, pristine_frames) = (frames(Label::Spoof.target()), frames(Label::Pristine.target()));
    let (k, iters) = (cfg.backend.gmm_components, cfg.backend.gmm_iters);
    let (spoof, _) = GmmModel::train_em(&spoof_frames, k, iters, cfg.seed).context("spoof GMM")?;
    let (pristine, _) = GmmModel::train_em(&pristine_frames, k, iters, cfg.seed.wrapping_add(1)).context("pristine GMM")?;
    ensure_parent(&a.out)?;
    gmm_to_file(&GmmPair { spoof, pristine }).write(&a.out)?;
    println!(
        "GMMs with {k} components on {} spoof and {} pristine frames",
        spoof_frames.len(),
        pristine_frames.len()
    );
    Ok(())
}

enum System {
    Network(Box<Detector>),
    Gmm(GmmPair, Option<spoofdet::sad::SadModel<f32>>),
}

fn cmd_score(cfg: &PipelineConfig, a: &Score) -> Result<()> {
    let corpus = Corpus::load(&a.manifest)?;
    let sad = load_sad(&a.sad)?;
    let system = match (&a.system.model, &a.system.backend, &a.system.gmm) {
        (Some(model), Some(backend), None) => System::Network(Box::new(Detector {
            sad,
            sad_config: cfg.sad,
            network: xresnet_from_file(&read_model(model, "network")?)?,
            window: cfg.embedding,
            backend: backend_from_file(&read_model(backend, "backend")?)?,
            pooling: cfg.pooling,
        })),
        (None, None, Some(gmm)) => System::Gmm(gmm_from_file(&read_model(gmm, "GMM pair")?)?, sad),
        _ => return Err(UsageError("score needs either --model with --backend, or --gmm".into()).into()),
    };
    let results = par_map(&corpus.entries(Some(a.partition)), |e| {
        let audio = corpus.audio(e)?;
        let score: UtteranceScore = match &system {
            System::Network(d) => d.score_utterance(&audio)?,
            System::Gmm(pair, sad) => {
                let mut feats = extract_features(&audio, cfg.features.kind.into())?;
                if let Some(model) = sad {
                    feats = apply_mask(&feats, &detect_speech(model, &audio, &cfg.sad)?)?;
                }
                score_gmm(pair, &feats, &cfg.pooling)?
            }
        };
        if let Some(dir) = &a.series {
            let v = &score.series.values;
            let path = artifact_path(dir, &e.audio_path, "series");
            ensure_parent(&path)?;
            write_features(&path, &FeatureMatrix::new(v.clone(), v.len(), 1, FeatureKind::Generic)?)?;
        }
        Ok(ScoreLine {
            path: e.audio_path.clone(),
            avg: score.avg,
            interleaved: score.interleaved,
        })
    });
    let lines = finish_per_file(results, "scoring")?;
    write_text(&a.out, &format_score_dump(&lines))?;
    println!("scored {} utterances into {}", lines.len(), a.out.display());
    Ok(())
}

fn cmd_eval(a: &Eval) -> Result<()> {
    let corpus = Corpus::load(&a.manifest)?;
    let text = std::fs::read_to_string(&a.scores).with_context(|| format!("reading {}", a.scores.display()))?;
    let lines = parse_score_dump(&text).with_context(|| format!("parsing {}", a.scores.display()))?;
    let labels: HashMap<&str, Label> = corpus
        .manifest
        .entries()
        .iter()
        .map(|e| (e.audio_path.as_str(), e.label))
        .collect();
    let (mut spoof, mut pristine) = (Vec::new(), Vec::new());
    for line in &lines {
        let label = labels
            .get(line.path.as_str())
            .ok_or_else(|| anyhow!(Error::MissingScores(format!("{} is not in the manifest", line.path))))?;
        match label {
            Label::Spoof => spoof.push(line.pooled(a.pooling)),
            Label::Pristine => pristine.push(line.pooled(a.pooling)),
        }
    }
    let report = compute_eer(&spoof, &pristine)?;
    let text = format!("pooling\t{:?}\n{report}\n", a.pooling);
    print!("{text}");
    if let Some(out) = &a.out {
        write_text(out, &text)?;
    }
    Ok(())
}
