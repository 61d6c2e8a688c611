//! Python bindings for `hasr-core`.
//!
//! Audio is passed as lists of int16 samples at 16 kHz. Protocol messages
//! cross the boundary as dicts in the same shape as the golden-vector JSON.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use hasr_core::audio::{self, AudioClip, SAMPLE_RATE};
use hasr_core::endpoint::{self, EndpointConfig};
use hasr_core::features::{mfcc as core_mfcc, FeatureConfig};
use hasr_core::hmm::{self, BaumWelchConfig};
use hasr_core::protocol::{self, Decoded, WireMessage};
use hasr_core::recognizer::{self, TrainConfig, WordModelSet};
use hasr_core::vq::SymbolSequence;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn clip(pcm: &[i16]) -> AudioClip {
    AudioClip::from_i16(pcm, SAMPLE_RATE)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn py_to_json(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

/// Reads a 16 kHz mono 16-bit WAV file as int16 samples.
#[pyfunction]
fn read_wav(path: PathBuf) -> PyResult<Vec<i16>> {
    audio::read_wav(&path).map(|c| c.to_i16()).map_err(|e| match e {
        audio::AudioError::NotFound(_) | audio::AudioError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => value_err(other),
    })
}

#[pyfunction]
fn write_wav(path: PathBuf, pcm: Vec<i16>) -> PyResult<()> {
    audio::write_wav(&path, &pcm).map_err(|e| PyOSError::new_err(e.to_string()))
}

/// MFCC matrix (frames x 13) with the default configuration.
#[pyfunction]
#[pyo3(signature = (pcm, cmn = true))]
fn mfcc(pcm: Vec<i16>, cmn: bool) -> PyResult<Vec<Vec<f64>>> {
    let cfg = FeatureConfig { cmn, ..Default::default() };
    let fm = core_mfcc(&clip(&pcm), &cfg).map_err(value_err)?;
    Ok(fm.frames.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Energy endpointing; returns `(start_sample, end_sample, peak_energy)`.
#[pyfunction]
#[pyo3(signature = (pcm, threshold_ratio = 4.0))]
fn segment(pcm: Vec<i16>, threshold_ratio: f64) -> PyResult<Vec<(usize, usize, f64)>> {
    let cfg = EndpointConfig { threshold_ratio, ..Default::default() };
    let segs = endpoint::segment(&clip(&pcm), &cfg).map_err(value_err)?;
    Ok(segs.iter().map(|s| (s.start_sample, s.end_sample, s.peak_energy)).collect())
}

/// One clip of the synthetic word generator.
#[pyfunction]
fn synth_pcm(label: &str, index: u64, seed: u64) -> Vec<i16> {
    hasr_core::synth::synth_pcm(label, index, seed)
}

/// Hex SHA-256 of the little-endian PCM bytes, as returned by the echo mock.
#[pyfunction]
fn pcm_digest(pcm: Vec<i16>) -> String {
    hasr_core::server::pcm_digest(&pcm)
}

/// Encodes a message dict such as `{"type": "UttStart", "utt_id": 7}`.
#[pyfunction]
fn encode<'py>(py: Python<'py>, message: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyBytes>> {
    let msg: WireMessage = serde_json::from_str(&py_to_json(message)?).map_err(value_err)?;
    let bytes = protocol::encode(&msg).map_err(value_err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// Decodes the first frame in `data`. Returns `(message, consumed)` or
/// `None` when more bytes are needed; malformed input raises ValueError.
#[pyfunction]
fn decode<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Option<(Bound<'py, PyAny>, usize)>> {
    match protocol::decode(data).map_err(|e| value_err(format!("{}: {e}", e.kind())))? {
        Decoded::NeedMoreData => Ok(None),
        Decoded::Message(m, used) => {
            let text = serde_json::to_string(&m).expect("message serializes");
            Ok(Some((json_to_py(py, &text)?, used)))
        }
    }
}

/// The protocol conformance vectors as a dict.
#[pyfunction]
fn golden_vectors(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    json_to_py(py, &serde_json::to_string(&protocol::golden_vectors()).expect("vectors serialize"))
}

/// Discrete HMM with initial distribution `pi`, transitions `a` and
/// emissions `b`.
#[pyclass(name = "Hmm", module = "hasr", skip_from_py_object)]
#[derive(Clone)]
struct PyHmm {
    inner: hmm::Hmm,
}

#[pymethods]
impl PyHmm {
    #[new]
    fn new(pi: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = hmm::Hmm::from_rows(&pi, &a, &b).map_err(value_err)?;
        let violations = inner.validate();
        if !violations.is_empty() {
            return Err(value_err(hmm::HmmError::Invalid(violations)));
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (n_states, n_symbols, skip = 2))]
    fn left_right(n_states: usize, n_symbols: usize, skip: usize) -> Self {
        Self { inner: hmm::Hmm::left_right(n_states, n_symbols, skip) }
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_symbols(&self) -> usize {
        self.inner.n_symbols()
    }

    #[getter]
    fn pi(&self) -> Vec<f64> {
        self.inner.pi.to_vec()
    }

    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        self.inner.a.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[getter]
    fn b(&self) -> Vec<Vec<f64>> {
        self.inner.b.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn log_likelihood(&self, obs: Vec<usize>) -> PyResult<f64> {
        hmm::log_likelihood(&self.inner, &SymbolSequence(obs)).map_err(value_err)
    }

    /// Best state path and its log probability.
    fn viterbi(&self, obs: Vec<usize>) -> PyResult<(Vec<usize>, f64)> {
        let v = hmm::viterbi(&self.inner, &SymbolSequence(obs)).map_err(value_err)?;
        Ok((v.path, v.log_prob))
    }

    fn sample(&self, length: usize, seed: u64) -> Vec<usize> {
        hmm::sample(&self.inner, length, seed).0
    }

    /// Re-estimates from `sequences`; returns the new model and the
    /// log-likelihood history.
    #[pyo3(signature = (sequences, max_iters = 40, tol = 1e-4))]
    fn baum_welch(&self, sequences: Vec<Vec<usize>>, max_iters: usize, tol: f64) -> PyResult<(PyHmm, Vec<f64>)> {
        let seqs: Vec<SymbolSequence> = sequences.into_iter().map(SymbolSequence).collect();
        let cfg = BaumWelchConfig { max_iters, tol, ..Default::default() };
        let r = hmm::baum_welch(&self.inner, &seqs, &cfg).map_err(value_err)?;
        Ok((PyHmm { inner: r.model }, r.history))
    }

    fn __repr__(&self) -> String {
        format!("Hmm(n_states={}, n_symbols={})", self.inner.n_states(), self.inner.n_symbols())
    }
}

/// A trained keyword model set (`*.hasr.json`).
#[pyclass(name = "WordModels", module = "hasr")]
struct PyWordModels {
    inner: WordModelSet,
}

#[pymethods]
impl PyWordModels {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        WordModelSet::load(&path).map(|inner| Self { inner }).map_err(value_err)
    }

    /// Trains on the Train split of `data_dir/<word>/*.wav`.
    #[staticmethod]
    #[pyo3(signature = (data_dir, words, n_states = 5, codebook_k = 64, seed = 17))]
    fn train(py: Python<'_>, data_dir: PathBuf, words: Vec<String>, n_states: usize, codebook_k: usize, seed: u64) -> PyResult<Self> {
        let cfg = TrainConfig { n_states, codebook_k, seed, ..TrainConfig::with_words(&words) };
        py.detach(|| {
            let index = audio::scan_dataset(&data_dir, &cfg.words).map_err(|e| e.to_string())?;
            recognizer::train_word_models(&index, &cfg).map_err(|e| e.to_string())
        })
        .map(|inner| Self { inner })
        .map_err(PyRuntimeError::new_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(|e| PyOSError::new_err(e.to_string()))
    }

    #[getter]
    fn words(&self) -> Vec<String> {
        self.inner.words()
    }

    fn hmm(&self, word: &str) -> PyResult<PyHmm> {
        self.inner
            .model(word)
            .map(|h| PyHmm { inner: h.clone() })
            .ok_or_else(|| value_err(format!("no model for {word:?}")))
    }

    /// Returns `{"best_word": str | None, "scores": {word: float}, "t_frames": int}`.
    /// Scores of words that cannot produce the clip are `-inf`.
    #[pyo3(signature = (pcm, threshold = None))]
    fn recognize<'py>(&self, py: Python<'py>, pcm: Vec<i16>, threshold: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
        let r = recognizer::recognize(&self.inner, &clip(&pcm), threshold).map_err(value_err)?;
        let out = PyDict::new(py);
        out.set_item("best_word", r.best_word.word())?;
        let scores = PyDict::new(py);
        for (w, s) in &r.scores {
            scores.set_item(w, s)?;
        }
        out.set_item("scores", scores)?;
        out.set_item("t_frames", r.t_frames)?;
        Ok(out)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!("WordModels(words={:?}, codebook_k={})", self.inner.words(), self.inner.codebook.k())
    }
}

#[pymodule]
fn hasr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SAMPLE_RATE", SAMPLE_RATE)?;
    m.add("PROTO_VERSION", protocol::PROTO_VERSION)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(mfcc, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(synth_pcm, m)?)?;
    m.add_function(wrap_pyfunction!(pcm_digest, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(golden_vectors, m)?)?;
    m.add_class::<PyHmm>()?;
    m.add_class::<PyWordModels>()?;
    Ok(())
}
