//! Pipeline stages. Each stage reads its inputs from manifests and model
//! files and writes only under its `out_dir`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DVector;
use spkx_core::backend::{BackendModel, BackendTrainLog, LabelledFeatures};
use spkx_core::eval::{self, DcfParams, Report, ScoreSet, ScoredTrial};
use spkx_core::extractor::{self, ExtractorModel, TrainingExample, Variant};
use spkx_core::frontend::{verification_features, FrontendConfig, Mfcc};
use spkx_core::manifest::{read_jsonl, relativize, resolve, write_jsonl};
use spkx_core::mat::Mat;
use spkx_core::mixsim::{self, CorpusManifest, MixtureRecord, Split};
use spkx_core::signal::{load_wav, save_wav, Waveform};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const CORPUS_MANIFEST: &str = "corpus.jsonl";
pub const MIXTURE_MANIFEST: &str = "mixtures.jsonl";
pub const EXTRACTED_MANIFEST: &str = "extracted.jsonl";
pub const MIXTURE_TRIALS: &str = "trials_mixture.txt";
pub const CLEAN_TRIALS: &str = "trials_clean.txt";
pub const EXTRACTOR_MODEL: &str = "extractor.bin";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const BACKEND_MODEL: &str = "backend.bin";
pub const BACKEND_LOG: &str = "backend_log.json";
pub const SCORES: &str = "scores.txt";
pub const REPORT: &str = "report.json";
pub const DET_CSV: &str = "det.csv";
const LOCK: &str = ".spkx.lock";

/// Exclusive claim on an output directory for the lifetime of a command.
pub struct OutDirLock {
    path: PathBuf,
}

impl OutDirLock {
    pub fn acquire(out_dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", out_dir.display())))?;
        let path = out_dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Input(format!(
                    "{} is locked by another spkx process (remove {} if stale)",
                    out_dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(CliError::Input(format!(
                "cannot lock {}: {e}",
                out_dir.display()
            ))),
        }
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}

pub fn load_corpus(path: &Path, cfg: &PipelineConfig) -> CliResult<CorpusManifest> {
    require_file(path, "corpus manifest")?;
    Ok(CorpusManifest::load(path, cfg.corpus.test_speakers)?)
}

pub fn load_mixtures(path: &Path) -> CliResult<Vec<MixtureRecord>> {
    require_file(path, "mixture manifest")?;
    Ok(read_jsonl(path)?)
}

/// Path of `target` relative to `base`, both taken as absolute paths.
fn relative_to(base: &Path, target: &Path) -> String {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let (base, target) = (abs(base), abs(target));
    pathdiff::diff_paths(&target, &base)
        .unwrap_or(target)
        .to_string_lossy()
        .replace('\\', "/")
}

/// `synth-corpus`: synthetic speakers into `out_dir`.
pub fn synth_corpus(cfg: &PipelineConfig, out_dir: &Path) -> CliResult<PathBuf> {
    let _lock = OutDirLock::acquire(out_dir)?;
    let c = &cfg.corpus;
    info!(
        "synthesising {} speakers x {} utterances",
        c.speakers, c.utts_per_speaker
    );
    mixsim::synth_corpus(c.speakers, c.utts_per_speaker, c.seed, out_dir)?;
    Ok(out_dir.join(CORPUS_MANIFEST))
}

pub struct Simulated {
    pub mixtures: PathBuf,
    pub mixture_trials: PathBuf,
    pub clean_trials: PathBuf,
}

/// `simulate`: mixtures for all splits plus the mixture and clean trial lists
/// over the test split.
pub fn simulate(cfg: &PipelineConfig, corpus_path: &Path, out_dir: &Path) -> CliResult<Simulated> {
    let corpus = load_corpus(corpus_path, cfg)?;
    let _lock = OutDirLock::acquire(out_dir)?;
    let m = &cfg.mixtures;
    let specs =
        mixsim::build_dataset_with_snr(&corpus, m.counts(), (m.snr_min_db, m.snr_max_db), m.seed)?;
    info!("rendering {} mixtures", specs.len());
    mixsim::render_dataset(&corpus, &specs, out_dir)?;
    let test: Vec<_> = specs
        .into_iter()
        .filter(|s| s.split == Split::Test)
        .collect();
    let trials =
        eval::generate_trials(&test, &corpus, cfg.trials.nontarget_ratio, cfg.trials.seed)?;
    let clean = eval::clean_trials(&trials, &test)?;
    let out = Simulated {
        mixtures: out_dir.join(MIXTURE_MANIFEST),
        mixture_trials: out_dir.join(MIXTURE_TRIALS),
        clean_trials: out_dir.join(CLEAN_TRIALS),
    };
    eval::write_trials(&out.mixture_trials, &trials)?;
    eval::write_trials(&out.clean_trials, &clean)?;
    Ok(out)
}

fn corpus_wav(corpus: &CorpusManifest, utt: &str) -> CliResult<Waveform> {
    let rec = corpus
        .record(utt)
        .ok_or_else(|| CliError::Input(format!("utterance {utt} not in corpus manifest")))?;
    Ok(load_wav(corpus.path_of(rec))?)
}

fn training_examples(
    corpus: &CorpusManifest,
    manifest: &Path,
    rows: &[MixtureRecord],
    split: Split,
) -> CliResult<Vec<TrainingExample>> {
    rows.iter()
        .filter(|r| r.split == split)
        .map(|r| {
            let mix = load_wav(resolve(manifest, &r.path))?;
            let reference = load_wav(resolve(manifest, &r.ref_path))?;
            let aux = corpus_wav(corpus, &r.aux)?;
            Ok(TrainingExample::from_waveforms(&mix, &reference, &aux)?)
        })
        .collect()
}

/// `train-extractor`: trains on the train split, early-stops on dev, keeps the
/// best-dev checkpoint. Writes the model and a JSON-lines epoch log.
pub fn train_extractor(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    mixtures_path: &Path,
    out_dir: &Path,
) -> CliResult<PathBuf> {
    let corpus = load_corpus(corpus_path, cfg)?;
    let rows = load_mixtures(mixtures_path)?;
    let _lock = OutDirLock::acquire(out_dir)?;
    let train = training_examples(&corpus, mixtures_path, &rows, Split::Train)?;
    let dev = training_examples(&corpus, mixtures_path, &rows, Split::Dev)?;
    info!(
        "training {} on {} mixtures ({} dev)",
        cfg.extractor.variant,
        train.len(),
        dev.len()
    );
    let model_path = out_dir.join(EXTRACTOR_MODEL);
    let outcome = extractor::train(&cfg.extractor, &train, &dev, Some(&model_path))?;
    extractor::save_model(&model_path, &outcome.model)?;
    write_jsonl(out_dir.join(TRAIN_LOG), &outcome.log)?;
    info!("best dev epoch {}", outcome.best_epoch);
    Ok(model_path)
}

/// Loads an extractor, checking the variant if one is expected.
pub fn load_extractor(path: &Path, expect: Option<Variant>) -> CliResult<ExtractorModel> {
    require_file(path, "extractor model")?;
    let model = extractor::load_model(path)?;
    if let Some(v) = expect {
        if model.variant() != v {
            return Err(CliError::Input(format!(
                "model {} is {}, but {v} was requested",
                path.display(),
                model.variant()
            )));
        }
    }
    Ok(model)
}

/// `extract`: runs the extractor over one split. Output rows mirror the
/// mixture rows with `path` pointing at the extracted audio.
pub fn extract(
    model_path: &Path,
    expect: Option<Variant>,
    corpus: &CorpusManifest,
    mixtures_path: &Path,
    split: Split,
    out_dir: &Path,
) -> CliResult<PathBuf> {
    let model = load_extractor(model_path, expect)?;
    let rows = load_mixtures(mixtures_path)?;
    let _lock = OutDirLock::acquire(out_dir)?;
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", wav_dir.display())))?;
    let mut out_rows = Vec::new();
    for r in rows.iter().filter(|r| r.split == split) {
        let mix = load_wav(resolve(mixtures_path, &r.path))?;
        let aux = corpus_wav(corpus, &r.aux)?;
        let est = model.extract(&mix, &aux)?;
        let path = wav_dir.join(format!("{}.wav", r.mix_id));
        save_wav(&path, &est)?;
        out_rows.push(MixtureRecord {
            path: relativize(out_dir, &path),
            ref_path: relative_to(out_dir, &resolve(mixtures_path, &r.ref_path)),
            ..r.clone()
        });
    }
    info!("extracted {} mixtures", out_rows.len());
    let manifest = out_dir.join(EXTRACTED_MANIFEST);
    write_jsonl(&manifest, &out_rows)?;
    Ok(manifest)
}

fn features(mfcc: &Mfcc, fe: &FrontendConfig, w: &Waveform) -> CliResult<Mat> {
    Ok(verification_features(mfcc, fe, w)?)
}

/// `train-backend`: clean utterances of the training speakers, pooled with
/// any extracted manifests given (the "clean+ext" condition).
pub fn train_backend(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    extracted: &[PathBuf],
    out_dir: &Path,
) -> CliResult<PathBuf> {
    let corpus = load_corpus(corpus_path, cfg)?;
    let mut ext_rows = Vec::new();
    for p in extracted {
        require_file(p, "extracted manifest")?;
        let rows: Vec<MixtureRecord> = read_jsonl(p)?;
        ext_rows.extend(rows.into_iter().map(|r| (p.clone(), r)));
    }
    let _lock = OutDirLock::acquire(out_dir)?;
    let mfcc = Mfcc::new();
    let fe = &cfg.frontend;
    let spk_of: BTreeMap<&str, &str> = corpus
        .records
        .iter()
        .map(|r| (r.utt.as_str(), r.spk.as_str()))
        .collect();
    let mut data: Vec<(String, Mat)> = Vec::new();
    for spk in corpus.speakers_for(Split::Train) {
        for rec in corpus.utterances_of(spk) {
            data.push((
                spk.to_string(),
                features(&mfcc, fe, &load_wav(corpus.path_of(rec))?)?,
            ));
        }
    }
    let n_clean = data.len();
    for (manifest, r) in &ext_rows {
        let spk = spk_of.get(r.target.as_str()).ok_or_else(|| {
            CliError::Input(format!(
                "extracted row {}: unknown target {}",
                r.mix_id, r.target
            ))
        })?;
        let w = load_wav(resolve(manifest, &r.path))?;
        data.push((spk.to_string(), features(&mfcc, fe, &w)?));
    }
    info!(
        "back-end training on {n_clean} clean + {} extracted utterances",
        data.len() - n_clean
    );
    let items: Vec<LabelledFeatures> = data
        .iter()
        .map(|(s, f)| LabelledFeatures {
            features: f,
            speaker: s,
        })
        .collect();
    let (model, log): (BackendModel, BackendTrainLog) =
        BackendModel::train(&cfg.backend, fe, &items)?;
    let path = out_dir.join(BACKEND_MODEL);
    model.save(&path)?;
    let log_path = out_dir.join(BACKEND_LOG);
    let text = serde_json::to_string_pretty(&log).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(&log_path, text + "\n")
        .map_err(|e| CliError::Input(format!("{}: {e}", log_path.display())))?;
    Ok(path)
}

/// Whether test audio passes through an extractor before scoring.
#[derive(Clone, Debug, PartialEq)]
pub enum Tse {
    None,
    Model(PathBuf),
}

impl std::str::FromStr for Tse {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            Ok(Tse::None)
        } else if s.is_empty() {
            Err("expected `none` or an extractor model path".into())
        } else {
            Ok(Tse::Model(PathBuf::from(s)))
        }
    }
}

/// `score`: PLDA LLR for every trial. Enrollment ids are corpus utterances;
/// test ids are corpus utterances or mixture ids. With an extractor, mixture
/// test audio is extracted using the mixture's aux utterance first.
pub fn score(
    cfg: &PipelineConfig,
    backend_path: &Path,
    corpus_path: &Path,
    mixtures_path: &Path,
    trials_path: &Path,
    tse: &Tse,
    out_dir: &Path,
) -> CliResult<PathBuf> {
    let corpus = load_corpus(corpus_path, cfg)?;
    let rows = load_mixtures(mixtures_path)?;
    require_file(backend_path, "back-end model")?;
    require_file(trials_path, "trial list")?;
    let backend = BackendModel::load(backend_path)?;
    let extractor = match tse {
        Tse::None => None,
        Tse::Model(p) => Some(load_extractor(p, None)?),
    };
    let trials = eval::read_trials(trials_path)?;
    let mixtures: BTreeMap<&str, &MixtureRecord> =
        rows.iter().map(|r| (r.mix_id.as_str(), r)).collect();

    let enroll_ids: BTreeSet<&str> = trials.iter().map(|t| t.enroll.as_str()).collect();
    let test_ids: BTreeSet<&str> = trials.iter().map(|t| t.test.as_str()).collect();
    let mut missing: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for t in &trials {
        if corpus.record(&t.enroll).is_none() && seen.insert(&t.enroll) {
            missing.push(format!("enrollment {}", t.enroll));
        }
        if corpus.record(&t.test).is_none()
            && !mixtures.contains_key(t.test.as_str())
            && seen.insert(&t.test)
        {
            missing.push(format!("test {}", t.test));
        }
    }
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(10).map(String::as_str).collect();
        return Err(CliError::Input(format!(
            "{} trial audio reference(s) missing: {}",
            missing.len(),
            shown.join(", ")
        )));
    }
    let _lock = OutDirLock::acquire(out_dir)?;
    let mfcc = Mfcc::new();
    let embedder = backend.embedder()?;
    let mut enroll: BTreeMap<&str, DVector<f64>> = BTreeMap::new();
    let mut test: BTreeMap<&str, DVector<f64>> = BTreeMap::new();
    for &id in &enroll_ids {
        let w = corpus_wav(&corpus, id)?;
        enroll.insert(
            id,
            embedder.embed(&features(&mfcc, &backend.frontend, &w)?)?,
        );
    }
    for &id in &test_ids {
        let w = match (mixtures.get(id), &extractor) {
            (Some(r), Some(model)) => {
                let mix = load_wav(resolve(mixtures_path, &r.path))?;
                model.extract(&mix, &corpus_wav(&corpus, &r.aux)?)?
            }
            (Some(r), None) => load_wav(resolve(mixtures_path, &r.path))?,
            (None, _) => corpus_wav(&corpus, id)?,
        };
        test.insert(
            id,
            embedder.embed(&features(&mfcc, &backend.frontend, &w)?)?,
        );
    }
    let records = trials
        .iter()
        .map(|t| ScoredTrial {
            trial: t.clone(),
            score: embedder.score(&enroll[t.enroll.as_str()], &test[t.test.as_str()]),
        })
        .collect();
    let path = out_dir.join(SCORES);
    eval::write_scores(&path, &ScoreSet { records })?;
    info!("scored {} trials", trials.len());
    Ok(path)
}

/// `report`: EER and both minimum DCFs as JSON, plus DET points as CSV.
pub fn report(
    scores_path: &Path,
    dcf08: DcfParams,
    dcf10: DcfParams,
    out_dir: &Path,
) -> CliResult<Report> {
    require_file(scores_path, "score file")?;
    let scores = eval::read_scores(scores_path)?;
    let _lock = OutDirLock::acquire(out_dir)?;
    let r = eval::report(&scores, dcf08, dcf10)?;
    let text = serde_json::to_string_pretty(&r).map_err(|e| CliError::Internal(e.to_string()))?;
    let path = out_dir.join(REPORT);
    std::fs::write(&path, text + "\n")
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    eval::write_det_csv(out_dir.join(DET_CSV), &eval::det_points(&scores)?)?;
    Ok(r)
}
