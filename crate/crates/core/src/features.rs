//! MFCC front end: pre-emphasis, Hamming-windowed framing, power spectrum,
//! HTK-style mel filterbank, log compression, orthonormal DCT-II and optional
//! cepstral mean normalization.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::AudioClip;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("clip has {got} samples, need at least {need} for one frame")]
    ClipTooShort { got: usize, need: usize },
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub n_mel: usize,
    pub n_ceps: usize,
    pub preemphasis: f64,
    pub cmn: bool,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_len: 400,
            hop: 160,
            fft_size: 512,
            n_mel: 26,
            n_ceps: 13,
            preemphasis: 0.97,
            cmn: true,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.to_string()));
        if self.sample_rate == 0 || self.frame_len < 2 || self.hop == 0 {
            return bad("sample_rate, hop must be positive and frame_len at least 2");
        }
        if self.frame_len > self.fft_size {
            return bad("frame_len exceeds fft_size");
        }
        if self.n_ceps == 0 || self.n_ceps > self.n_mel {
            return bad("n_ceps must be in 1..=n_mel");
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad("preemphasis must be in [0, 1)");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    /// Short stable identifier: first 16 hex digits of SHA-256 over the
    /// config's JSON encoding.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Number of frames for `n` samples, or 0 when `n < frame_len`.
    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.frame_len {
            0
        } else {
            1 + (n - self.frame_len) / self.hop
        }
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }
}

/// T×D matrix of cepstral frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Array2<f64>,
    pub frame_rate: f64,
    pub config_hash: String,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over `[0, sample_rate / 2]` with centers equally spaced
/// in mel. Weights are evaluated at exact bin frequencies `k * sr / fft_size`
/// (no rounding of edges to bins).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// n_mel × (fft_size/2 + 1)
    pub weights: Array2<f64>,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mel: usize, fft_size: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let mut edges: Vec<f64> = (0..n_mel + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mel + 1) as f64))
            .collect();
        // Pin the outer edges so the mel round trip cannot shift them.
        edges[0] = 0.0;
        edges[n_mel + 1] = nyquist;
        let n_bins = fft_size / 2 + 1;
        let mut weights = Array2::zeros((n_mel, n_bins));
        for m in 0..n_mel {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * sample_rate as f64 / fft_size as f64;
                weights[[m, k]] = if f >= lo && f <= c && c > lo {
                    (f - lo) / (c - lo)
                } else if f > c && f <= hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
            }
        }
        Self { weights, centers_hz: edges[1..=n_mel].to_vec() }
    }
}

/// Precomputed window, filterbank, DCT basis and FFT plan for one config.
/// Cheap to share across threads.
pub struct MfccExtractor {
    cfg: FeatureConfig,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    dct: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
    hash: String,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor").field("cfg", &self.cfg).finish()
    }
}

impl MfccExtractor {
    pub fn new(cfg: &FeatureConfig) -> Result<Self, FeatureError> {
        cfg.validate()?;
        let l = cfg.frame_len;
        let window = (0..l)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (l - 1) as f64).cos())
            .collect();
        let m = cfg.n_mel;
        let dct = Array2::from_shape_fn((cfg.n_ceps, m), |(q, j)| {
            let scale = if q == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
            scale * (PI * q as f64 * (j as f64 + 0.5) / m as f64).cos()
        });
        Ok(Self {
            window,
            filterbank: MelFilterbank::new(cfg.n_mel, cfg.fft_size, cfg.sample_rate),
            dct,
            fft: FftPlanner::new().plan_fft_forward(cfg.fft_size),
            hash: cfg.config_hash(),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    fn preemphasize(&self, x: &[f32]) -> Vec<f64> {
        let a = self.cfg.preemphasis;
        let mut y = Vec::with_capacity(x.len());
        if let Some(&first) = x.first() {
            y.push(first as f64);
        }
        y.extend(x.windows(2).map(|w| w[1] as f64 - a * w[0] as f64));
        y
    }

    /// Power spectrum `|X[k]|^2`, `k = 0..=fft_size/2`, of each windowed frame.
    pub fn power_spectra(&self, clip: &AudioClip) -> Result<Array2<f64>, FeatureError> {
        let n = clip.len();
        let t = self.cfg.frame_count(n);
        if t == 0 {
            return Err(FeatureError::ClipTooShort { got: n, need: self.cfg.frame_len });
        }
        let y = self.preemphasize(&clip.samples);
        let n_bins = self.cfg.fft_size / 2 + 1;
        let mut out = Array2::zeros((t, n_bins));
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let start = i * self.cfg.hop;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (j, (s, w)) in y[start..start + self.cfg.frame_len].iter().zip(&self.window).enumerate() {
                buf[j].re = s * w;
            }
            self.fft.process(&mut buf);
            for (k, v) in row.iter_mut().enumerate() {
                *v = buf[k].norm_sqr();
            }
        }
        Ok(out)
    }

    /// Mel filterbank energies (before the log), T × n_mel.
    pub fn mel_energies(&self, clip: &AudioClip) -> Result<Array2<f64>, FeatureError> {
        Ok(self.power_spectra(clip)?.dot(&self.filterbank.weights.t()))
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMatrix, FeatureError> {
        let floor = self.cfg.log_floor;
        let log_mel = self.mel_energies(clip)?.mapv(|e| e.max(floor).ln());
        let frames = log_mel.dot(&self.dct.t());
        let fm = FeatureMatrix {
            frames,
            frame_rate: self.cfg.frame_rate(),
            config_hash: self.hash.clone(),
        };
        Ok(if self.cfg.cmn { cmn(fm) } else { fm })
    }
}

pub fn mfcc(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    MfccExtractor::new(cfg)?.extract(clip)
}

/// Subtracts each coefficient's per-utterance mean.
///
/// The mean is accumulated relative to the first frame, so identical frames
/// come out exactly zero.
pub fn cmn(mut fm: FeatureMatrix) -> FeatureMatrix {
    if fm.frames.nrows() == 0 {
        return fm;
    }
    let first: Array1<f64> = fm.frames.row(0).to_owned();
    let offset = (&fm.frames - &first).mean_axis(Axis(0)).expect("non-empty");
    let mean = first + offset;
    fm.frames -= &mean;
    fm
}
