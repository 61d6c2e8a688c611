//! Per-word HMM training, maximum-likelihood recognition, evaluation and the
//! `*.hasr.json` model file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{read_wav, AudioClip, AudioError, DatasetIndex, Split};
use crate::features::{FeatureConfig, FeatureError, FeatureMatrix, MfccExtractor};
use crate::hmm::{baum_welch, forward_scaled, BaumWelchConfig, BaumWelchResult, Hmm, HmmError};
use crate::vq::{pool_frames, train_codebook, Codebook, SymbolSequence, VqError};

pub const FORMAT_VERSION: u32 = 1;
pub const MIN_TRAIN_CLIPS: usize = 10;

#[derive(Debug, Error)]
pub enum RecognizerError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("word {word:?} has {got} training clips, need at least {MIN_TRAIN_CLIPS}")]
    InsufficientData { word: String, got: usize },
    #[error("word {0:?} has no test clips")]
    MissingTestData(String),
    #[error("label {0:?} is not in the model set")]
    UnknownLabel(String),
    #[error("invalid model file: {0}")]
    ModelFile(String),
    #[error("{path}: {source}")]
    Clip {
        path: String,
        #[source]
        source: FeatureError,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Vq(#[from] VqError),
    #[error("training word {word:?}: {source}")]
    Hmm {
        word: String,
        #[source]
        source: HmmError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T, E = RecognizerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub words: Vec<String>,
    pub n_states: usize,
    /// Largest forward jump: 1 allows self-loop and next, 2 adds skip-one.
    pub skip: usize,
    pub codebook_k: usize,
    pub seed: u64,
    pub baum_welch: BaumWelchConfig,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            words: Vec::new(),
            n_states: 5,
            skip: 2,
            codebook_k: 64,
            seed: 17,
            baum_welch: BaumWelchConfig::default(),
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_words<S: AsRef<str>>(words: &[S]) -> Self {
        Self { words: words.iter().map(|w| w.as_ref().to_string()).collect(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RecognizerError::Config(m));
        if self.words.is_empty() {
            return bad("word list is empty".into());
        }
        let unique: BTreeSet<_> = self.words.iter().collect();
        if unique.len() != self.words.len() {
            return bad("word list contains duplicates".into());
        }
        if self.words.iter().any(|w| w.is_empty()) {
            return bad("empty word label".into());
        }
        if self.n_states < 2 {
            return bad(format!("n_states must be at least 2, got {}", self.n_states));
        }
        if !(1..=2).contains(&self.skip) {
            return bad(format!("skip must be 1 or 2, got {}", self.skip));
        }
        if self.codebook_k == 0 {
            return bad("codebook_k must be positive".into());
        }
        if !(self.baum_welch.floor >= 0.0 && self.baum_welch.floor < 1.0) {
            return bad("baum_welch.floor must be in [0, 1)".into());
        }
        self.features.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordModel {
    pub label: String,
    pub hmm: Hmm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordModelSet {
    pub codebook: Codebook,
    /// In training word-list order.
    pub models: Vec<WordModel>,
    pub feature_cfg: FeatureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordTrainSummary {
    pub word: String,
    pub n_clips: usize,
    pub iterations: usize,
    pub initial_log_likelihood: f64,
    pub final_log_likelihood: f64,
}

/// Outcome of recognizing one clip.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Word(String),
    Rejected,
}

impl Decision {
    pub fn word(&self) -> Option<&str> {
        match self {
            Decision::Word(w) => Some(w),
            Decision::Rejected => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recognition {
    pub best_word: Decision,
    /// Per-frame log-likelihood per word; `-inf` when the model rules the
    /// clip out.
    pub scores: BTreeMap<String, f64>,
    pub t_frames: usize,
}

impl Recognition {
    pub fn best_score(&self) -> f64 {
        self.scores.values().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Picks the highest score; equal scores go to the lexicographically first
/// word. A best score below `threshold` is rejected.
pub fn decide(scores: &BTreeMap<String, f64>, threshold: Option<f64>) -> Decision {
    let mut best: Option<(&String, f64)> = None;
    for (w, &s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((w, s));
        }
    }
    match best {
        None => Decision::Rejected,
        Some((_, s)) if threshold.is_some_and(|th| !(s >= th)) => Decision::Rejected,
        Some((w, _)) => Decision::Word(w.clone()),
    }
}

/// Left-right initial model plus Baum-Welch for one word's sequences.
pub fn train_word_hmm(
    sequences: &[SymbolSequence],
    n_symbols: usize,
    cfg: &TrainConfig,
) -> std::result::Result<BaumWelchResult, HmmError> {
    let h0 = Hmm::left_right(cfg.n_states, n_symbols, cfg.skip);
    baum_welch(&h0, sequences, &cfg.baum_welch)
}

/// Trains from labelled in-memory clips.
pub fn train_from_clips(
    clips: &[(String, AudioClip)],
    cfg: &TrainConfig,
) -> Result<(WordModelSet, Vec<WordTrainSummary>)> {
    cfg.validate()?;
    for w in &cfg.words {
        let got = clips.iter().filter(|(l, _)| l == w).count();
        if got < MIN_TRAIN_CLIPS {
            return Err(RecognizerError::InsufficientData { word: w.clone(), got });
        }
    }
    if let Some((l, _)) = clips.iter().find(|(l, _)| !cfg.words.contains(l)) {
        return Err(RecognizerError::UnknownLabel(l.clone()));
    }

    let extractor = MfccExtractor::new(&cfg.features)?;
    let features: Vec<FeatureMatrix> = clips
        .par_iter()
        .map(|(_, clip)| {
            extractor.extract(clip).map_err(|source| RecognizerError::Clip {
                path: clip.source_path.clone().unwrap_or_else(|| "<memory>".into()),
                source,
            })
        })
        .collect::<Result<_>>()?;

    let pooled = pool_frames(&features);
    let codebook = train_codebook(pooled.view(), cfg.codebook_k, cfg.seed)?;
    let symbols: Vec<SymbolSequence> = features
        .iter()
        .map(|fm| codebook.quantize_rows(fm.frames.view()))
        .collect::<std::result::Result<_, _>>()?;

    let mut models = Vec::with_capacity(cfg.words.len());
    let mut summaries = Vec::with_capacity(cfg.words.len());
    for word in &cfg.words {
        let seqs: Vec<SymbolSequence> = clips
            .iter()
            .zip(&symbols)
            .filter(|((l, _), _)| l == word)
            .map(|(_, s)| s.clone())
            .collect();
        let r = train_word_hmm(&seqs, codebook.k(), cfg)
            .map_err(|source| RecognizerError::Hmm { word: word.clone(), source })?;
        summaries.push(WordTrainSummary {
            word: word.clone(),
            n_clips: seqs.len(),
            iterations: r.iterations,
            initial_log_likelihood: r.history[0],
            final_log_likelihood: *r.history.last().expect("history is never empty"),
        });
        models.push(WordModel { label: word.clone(), hmm: r.model });
    }
    Ok((WordModelSet { codebook, models, feature_cfg: cfg.features.clone() }, summaries))
}

fn load_clips<'a>(entries: impl IntoIterator<Item = &'a crate::audio::DatasetEntry>) -> Result<Vec<(String, AudioClip)>> {
    let entries: Vec<_> = entries.into_iter().collect();
    entries
        .par_iter()
        .map(|e| Ok((e.label.clone(), read_wav(&e.path)?)))
        .collect()
}

/// Trains on the Train split of `index`.
pub fn train_word_models_with_summary(
    index: &DatasetIndex,
    cfg: &TrainConfig,
) -> Result<(WordModelSet, Vec<WordTrainSummary>)> {
    cfg.validate()?;
    let entries = index.split(Split::Train).filter(|e| cfg.words.contains(&e.label));
    train_from_clips(&load_clips(entries)?, cfg)
}

pub fn train_word_models(index: &DatasetIndex, cfg: &TrainConfig) -> Result<WordModelSet> {
    train_word_models_with_summary(index, cfg).map(|(set, _)| set)
}

/// A model set bound to a ready feature extractor.
#[derive(Debug)]
pub struct Recognizer<'a> {
    models: &'a WordModelSet,
    extractor: MfccExtractor,
}

impl<'a> Recognizer<'a> {
    pub fn new(models: &'a WordModelSet) -> Result<Self> {
        Ok(Self { extractor: MfccExtractor::new(&models.feature_cfg)?, models })
    }

    pub fn symbols(&self, clip: &AudioClip) -> Result<SymbolSequence> {
        let fm = self.extractor.extract(clip)?;
        Ok(self.models.codebook.quantize_rows(fm.frames.view())?)
    }

    /// Scores a symbol string under every word model.
    pub fn score_symbols(&self, obs: &SymbolSequence, threshold: Option<f64>) -> Result<Recognition> {
        let t = obs.len();
        let mut scores = BTreeMap::new();
        for m in &self.models.models {
            let score = match forward_scaled(&m.hmm, obs) {
                Ok(f) => f.log_likelihood / t as f64,
                Err(HmmError::ZeroProbabilitySequence { .. }) => f64::NEG_INFINITY,
                Err(source) => return Err(RecognizerError::Hmm { word: m.label.clone(), source }),
            };
            scores.insert(m.label.clone(), score);
        }
        Ok(Recognition { best_word: decide(&scores, threshold), scores, t_frames: t })
    }

    pub fn recognize(&self, clip: &AudioClip, threshold: Option<f64>) -> Result<Recognition> {
        self.score_symbols(&self.symbols(clip)?, threshold)
    }
}

pub fn recognize(ms: &WordModelSet, clip: &AudioClip, threshold: Option<f64>) -> Result<Recognition> {
    Recognizer::new(ms)?.recognize(clip, threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n_test: usize,
    /// Row and column order of `confusion`.
    pub words: Vec<String>,
    /// `confusion[truth][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub per_word_accuracy: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn from_pairs(words: &[String], pairs: &[(String, String)]) -> Result<Self> {
        let pos = |w: &str| {
            words
                .iter()
                .position(|x| x == w)
                .ok_or_else(|| RecognizerError::UnknownLabel(w.to_string()))
        };
        let mut confusion = vec![vec![0; words.len()]; words.len()];
        for (truth, pred) in pairs {
            confusion[pos(truth)?][pos(pred)?] += 1;
        }
        let n_test = pairs.len();
        let correct: usize = (0..words.len()).map(|i| confusion[i][i]).sum();
        let per_word_accuracy = words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let row: usize = confusion[i].iter().sum();
                let acc = if row == 0 { 0.0 } else { confusion[i][i] as f64 / row as f64 };
                (w.clone(), acc)
            })
            .collect();
        Ok(Self {
            accuracy: if n_test == 0 { 0.0 } else { correct as f64 / n_test as f64 },
            n_test,
            words: words.to_vec(),
            confusion,
            per_word_accuracy,
        })
    }
}

/// Recognizes labelled clips with no rejection threshold and tabulates.
pub fn evaluate_clips(ms: &WordModelSet, clips: &[(String, AudioClip)]) -> Result<EvalReport> {
    let words = ms.words();
    for w in &words {
        if !clips.iter().any(|(l, _)| l == w) {
            return Err(RecognizerError::MissingTestData(w.clone()));
        }
    }
    let rec = Recognizer::new(ms)?;
    let pairs: Vec<(String, String)> = clips
        .par_iter()
        .map(|(label, clip)| {
            let r = rec.recognize(clip, None)?;
            let pred = r.best_word.word().expect("no threshold, never rejected").to_string();
            Ok((label.clone(), pred))
        })
        .collect::<Result<_>>()?;
    EvalReport::from_pairs(&words, &pairs)
}

/// Evaluates on the Test split of `index` for the model set's words.
pub fn evaluate(ms: &WordModelSet, index: &DatasetIndex) -> Result<EvalReport> {
    let words = ms.words();
    let entries = index.split(Split::Test).filter(|e| words.contains(&e.label));
    evaluate_clips(ms, &load_clips(entries)?)
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    k: usize,
    dim: usize,
    #[serde(default)]
    training_distortion: f64,
    centroids: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct WordFile {
    label: String,
    pi: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    feature_cfg: FeatureConfig,
    codebook: CodebookFile,
    words: Vec<WordFile>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl WordModelSet {
    pub fn words(&self) -> Vec<String> {
        self.models.iter().map(|m| m.label.clone()).collect()
    }

    pub fn model(&self, word: &str) -> Option<&Hmm> {
        self.models.iter().find(|m| m.label == word).map(|m| &m.hmm)
    }

    pub fn feature_cfg_hash(&self) -> String {
        self.feature_cfg.config_hash()
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            feature_cfg: self.feature_cfg.clone(),
            codebook: CodebookFile {
                k: self.codebook.k(),
                dim: self.codebook.dim(),
                training_distortion: self.codebook.training_distortion,
                centroids: rows(&self.codebook.centroids),
            },
            words: self
                .models
                .iter()
                .map(|m| WordFile {
                    label: m.label.clone(),
                    pi: m.hmm.pi.to_vec(),
                    a: rows(&m.hmm.a),
                    b: rows(&m.hmm.b),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    /// Parses and validates a model file.
    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |m: String| RecognizerError::ModelFile(m);
        let file: ModelFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if file.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format_version {}", file.format_version)));
        }
        file.feature_cfg.validate().map_err(|e| bad(e.to_string()))?;
        let cb = &file.codebook;
        if cb.centroids.len() != cb.k || cb.k == 0 {
            return Err(bad(format!("codebook declares k={} but has {} rows", cb.k, cb.centroids.len())));
        }
        if cb.dim != file.feature_cfg.n_ceps || cb.centroids.iter().any(|r| r.len() != cb.dim) {
            return Err(bad(format!("codebook rows must have dim {} = n_ceps", cb.dim)));
        }
        let centroids = Array2::from_shape_vec((cb.k, cb.dim), cb.centroids.concat())
            .map_err(|e| bad(e.to_string()))?;
        let mut codebook = Codebook::from_centroids(centroids).map_err(|e| bad(e.to_string()))?;
        codebook.training_distortion = cb.training_distortion;

        if file.words.is_empty() {
            return Err(bad("no word models".into()));
        }
        let mut seen = BTreeSet::new();
        let mut models = Vec::with_capacity(file.words.len());
        for w in file.words {
            if !seen.insert(w.label.clone()) {
                return Err(bad(format!("duplicate word {:?}", w.label)));
            }
            let hmm = Hmm::from_rows(&w.pi, &w.a, &w.b).map_err(|e| bad(format!("{}: {e}", w.label)))?;
            let violations = hmm.validate();
            if !violations.is_empty() {
                return Err(bad(format!("{}: {}", w.label, HmmError::Invalid(violations))));
            }
            if hmm.n_symbols() != codebook.k() {
                return Err(bad(format!(
                    "{}: {} symbols but codebook has {}",
                    w.label,
                    hmm.n_symbols(),
                    codebook.k()
                )));
            }
            models.push(WordModel { label: w.label, hmm });
        }
        Ok(Self { codebook, models, feature_cfg: file.feature_cfg })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
