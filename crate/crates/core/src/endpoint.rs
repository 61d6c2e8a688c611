//! Energy-based utterance endpointing.
//!
//! Frame energy is the mean squared sample over a 400-sample window with a
//! 160-sample hop. The noise floor is the median energy of the first ten
//! frames (never below 1e-8). A frame is loud when its energy exceeds
//! `floor * threshold_ratio`. Speech opens at the first frame of a run of
//! at least `min_speech_ms` loud frames and closes once `hangover_ms` of
//! quiet frames follow; the segment ends with the last loud frame. Each
//! segment is then widened by `pad_ms` on both sides (clamped to the clip),
//! and segments that touch after padding are merged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;

pub const NOISE_FRAMES: usize = 10;
pub const MIN_NOISE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum EndpointError {
    #[error("clip has {frames} frames, endpointing needs at least {NOISE_FRAMES}")]
    ClipTooShort { frames: usize },
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub threshold_ratio: f64,
    pub min_speech_ms: u32,
    pub hangover_ms: u32,
    pub pad_ms: u32,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            frame_len: 400,
            hop: 160,
            threshold_ratio: 4.0,
            min_speech_ms: 100,
            hangover_ms: 300,
            pad_ms: 100,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), EndpointError> {
        if self.frame_len == 0 || self.hop == 0 {
            return Err(EndpointError::InvalidConfig("frame_len and hop must be positive"));
        }
        if !(self.threshold_ratio > 0.0) {
            return Err(EndpointError::InvalidConfig("threshold_ratio must be positive"));
        }
        if self.min_speech_ms == 0 || self.hangover_ms == 0 || self.pad_ms == 0 {
            return Err(EndpointError::InvalidConfig("durations must be positive"));
        }
        Ok(())
    }

    /// Milliseconds to whole frames at this hop (at least one).
    fn frames(&self, ms: u32, sample_rate: u32) -> usize {
        let samples = ms as f64 * sample_rate as f64 / 1000.0;
        ((samples / self.hop as f64).round() as usize).max(1)
    }
}

/// Half-open sample range `[start_sample, end_sample)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_sample: usize,
    pub end_sample: usize,
    pub peak_energy: f64,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end_sample - self.start_sample
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn frame_energies(samples: &[f32], frame_len: usize, hop: usize) -> Vec<f64> {
    if samples.len() < frame_len {
        return Vec::new();
    }
    let n_frames = 1 + (samples.len() - frame_len) / hop;
    (0..n_frames)
        .map(|t| {
            let frame = &samples[t * hop..t * hop + frame_len];
            frame.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / frame_len as f64
        })
        .collect()
}

pub fn noise_floor(energies: &[f64]) -> f64 {
    let mut lead: Vec<f64> = energies.iter().take(NOISE_FRAMES).copied().collect();
    lead.sort_by(f64::total_cmp);
    let n = lead.len();
    let median = if n % 2 == 1 {
        lead[n / 2]
    } else {
        (lead[n / 2 - 1] + lead[n / 2]) / 2.0
    };
    median.max(MIN_NOISE_FLOOR)
}

pub fn segment(clip: &AudioClip, cfg: &EndpointConfig) -> Result<Vec<Segment>, EndpointError> {
    cfg.validate()?;
    let energies = frame_energies(&clip.samples, cfg.frame_len, cfg.hop);
    if energies.len() < NOISE_FRAMES {
        return Err(EndpointError::ClipTooShort { frames: energies.len() });
    }
    let threshold = noise_floor(&energies) * cfg.threshold_ratio;
    let min_run = cfg.frames(cfg.min_speech_ms, clip.sample_rate);
    let hangover = cfg.frames(cfg.hangover_ms, clip.sample_rate);

    // (first loud frame, last loud frame), inclusive
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut run_start: Option<usize> = None;
    let mut open: Option<(usize, usize)> = None;
    for (t, &e) in energies.iter().enumerate() {
        let loud = e > threshold;
        match open.as_mut() {
            Some((_, last)) => {
                if loud {
                    *last = t;
                } else if t - *last >= hangover {
                    spans.push(open.take().unwrap());
                }
            }
            None => {
                if loud {
                    let s = *run_start.get_or_insert(t);
                    if t + 1 - s >= min_run {
                        open = Some((s, t));
                        run_start = None;
                    }
                } else {
                    run_start = None;
                }
            }
        }
    }
    spans.extend(open);

    let pad = (cfg.pad_ms as u64 * clip.sample_rate as u64 / 1000) as usize;
    let n = clip.len();
    let mut out: Vec<Segment> = Vec::new();
    for (first, last) in spans {
        let peak_energy = energies[first..=last].iter().copied().fold(0.0, f64::max);
        let seg = Segment {
            start_sample: (first * cfg.hop).saturating_sub(pad),
            end_sample: (last * cfg.hop + cfg.frame_len + pad).min(n),
            peak_energy,
        };
        match out.last_mut() {
            Some(prev) if seg.start_sample <= prev.end_sample => {
                prev.end_sample = prev.end_sample.max(seg.end_sample);
                prev.peak_energy = prev.peak_energy.max(seg.peak_energy);
            }
            _ => out.push(seg),
        }
    }
    Ok(out)
}
