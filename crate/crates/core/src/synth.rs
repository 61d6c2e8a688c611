//! Seeded synthetic word surrogates built from tones, sweeps and band noise.
//!
//! Every label maps to a fixed template of two to four segments derived from
//! a hash of the label. Each rendered clip jitters timing, pitch, level and
//! background noise, so a label's clips form a family that a small HMM
//! recognizer can learn without any recorded speech.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use crate::audio::{write_wav, AudioClip, AudioError, SAMPLE_RATE};
use crate::rng::SplitMix64;

/// Length of one rendered clip in samples (1 s).
pub const CLIP_SAMPLES: usize = SAMPLE_RATE as usize;
/// Quiet gap placed between clips by [`synth_sequence`].
pub const SEQUENCE_GAP_SAMPLES: usize = 8000;

const RAMP_SAMPLES: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    Tone { f1: f64, f2: f64 },
    Sweep { from: f64, to: f64 },
    Noise { center: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSegment {
    pub kind: SegmentKind,
    pub weight: f64,
    pub amp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordTemplate {
    pub segments: Vec<TemplateSegment>,
}

fn label_seed(label: &str) -> u64 {
    // FNV-1a
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn word_template(label: &str) -> WordTemplate {
    let mut rng = SplitMix64::new(label_seed(label));
    let n = 2 + rng.below(3);
    let segments = (0..n)
        .map(|_| {
            let kind = match rng.below(3) {
                0 => SegmentKind::Tone { f1: rng.uniform(250.0, 900.0), f2: rng.uniform(1000.0, 3000.0) },
                1 => SegmentKind::Sweep { from: rng.uniform(300.0, 2500.0), to: rng.uniform(300.0, 2500.0) },
                _ => SegmentKind::Noise { center: rng.uniform(1500.0, 6000.0) },
            };
            TemplateSegment { kind, weight: rng.uniform(0.6, 1.4), amp: rng.uniform(0.5, 1.0) }
        })
        .collect();
    WordTemplate { segments }
}

fn clip_rng(label: &str, index: u64, seed: u64) -> SplitMix64 {
    let mut mix = SplitMix64::new(seed ^ label_seed(label));
    let base = mix.next_u64();
    SplitMix64::new(base.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

fn ramp(i: usize, len: usize) -> f64 {
    let edge = i.min(len - 1 - i);
    if edge >= RAMP_SAMPLES {
        1.0
    } else {
        0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / RAMP_SAMPLES as f64).cos()
    }
}

fn quantize(x: &[f64]) -> Vec<i16> {
    x.iter().map(|&v| (v * 32767.0).round().clamp(-32768.0, 32767.0) as i16).collect()
}

fn background(rng: &mut SplitMix64, level: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| level * rng.gaussian()).collect()
}

/// Renders clip `index` of `label` as int16 PCM, 1 s at 16 kHz.
///
/// The word occupies 0.35 to 0.6 s and starts no earlier than 0.15 s, with
/// at least 0.1 s of background noise after it.
pub fn synth_pcm(label: &str, index: u64, seed: u64) -> Vec<i16> {
    let template = word_template(label);
    let mut rng = clip_rng(label, index, seed);
    let sr = SAMPLE_RATE as f64;

    let dur = rng.uniform(0.35, 0.6);
    let onset = rng.uniform(0.15, 1.0 - dur - 0.1);
    let level = rng.uniform(0.15, 0.5);
    let pitch = rng.uniform(0.92, 1.08);
    let noise_level = rng.uniform(0.001, 0.004);

    let weights: Vec<f64> = template.segments.iter().map(|s| s.weight * rng.uniform(0.8, 1.2)).collect();
    let total: f64 = weights.iter().sum();
    let word_len = (dur * sr) as usize;
    let mut out = background(&mut rng, noise_level, CLIP_SAMPLES);

    let mut pos = (onset * sr) as usize;
    for (seg, w) in template.segments.iter().zip(&weights) {
        let len = ((w / total) * word_len as f64) as usize;
        if len < 2 * RAMP_SAMPLES {
            continue;
        }
        let (mut p1, mut p2) = (rng.uniform(0.0, TAU), rng.uniform(0.0, TAU));
        for i in 0..len {
            let frac = i as f64 / len as f64;
            let v = match seg.kind {
                SegmentKind::Tone { f1, f2 } => {
                    p1 += TAU * f1 * pitch / sr;
                    p2 += TAU * f2 * pitch / sr;
                    0.6 * p1.sin() + 0.4 * p2.sin()
                }
                SegmentKind::Sweep { from, to } => {
                    p1 += TAU * (from + (to - from) * frac) * pitch / sr;
                    p1.sin()
                }
                SegmentKind::Noise { center } => {
                    p1 += TAU * center * pitch / sr;
                    0.5 * rng.gaussian() * p1.sin()
                }
            };
            out[pos + i] += level * seg.amp * ramp(i, len) * v;
        }
        pos += len;
    }
    quantize(&out)
}

pub fn synth_clip(label: &str, index: u64, seed: u64) -> AudioClip {
    AudioClip::from_i16(&synth_pcm(label, index, seed), SAMPLE_RATE)
}

/// Concatenates one clip per label, separated by quiet gaps, and returns the
/// stream plus the sample range each clip occupies.
pub fn synth_sequence(labels: &[(&str, u64)], seed: u64) -> (AudioClip, Vec<(usize, usize)>) {
    let mut rng = SplitMix64::new(seed ^ 0x5eed);
    let mut pcm = quantize(&background(&mut rng, 0.002, SEQUENCE_GAP_SAMPLES));
    let mut spans = Vec::with_capacity(labels.len());
    for &(label, index) in labels {
        let start = pcm.len();
        pcm.extend(synth_pcm(label, index, seed));
        spans.push((start, pcm.len()));
        pcm.extend(quantize(&background(&mut rng, 0.002, SEQUENCE_GAP_SAMPLES)));
    }
    (AudioClip::from_i16(&pcm, SAMPLE_RATE), spans)
}

/// Writes `per_word` clips per label as `root/<label>/<label>_NNNN.wav`.
pub fn write_dataset(
    root: impl AsRef<Path>,
    words: &[String],
    per_word: usize,
    seed: u64,
) -> Result<usize, AudioError> {
    let root = root.as_ref();
    let mut written = 0;
    for word in words {
        let dir = root.join(word);
        fs::create_dir_all(&dir).map_err(|source| AudioError::Io { path: dir.clone(), source })?;
        for i in 0..per_word {
            write_wav(dir.join(format!("{word}_{i:04}.wav")), &synth_pcm(word, i as u64, seed))?;
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::{segment, EndpointConfig};

    #[test]
    fn deterministic_per_seed_and_index() {
        assert_eq!(synth_pcm("go", 3, 17), synth_pcm("go", 3, 17));
        assert_ne!(synth_pcm("go", 3, 17), synth_pcm("go", 4, 17));
        assert_ne!(synth_pcm("go", 3, 17), synth_pcm("go", 3, 18));
        assert_ne!(synth_pcm("go", 3, 17), synth_pcm("stop", 3, 17));
        assert_eq!(synth_pcm("yes", 0, 1).len(), CLIP_SAMPLES);
    }

    #[test]
    fn templates_differ_between_default_words() {
        let t: Vec<_> = ["go", "stop", "yes"].iter().map(|w| word_template(w)).collect();
        assert_ne!(t[0], t[1]);
        assert_ne!(t[1], t[2]);
        assert_ne!(t[0], t[2]);
    }

    #[test]
    fn every_clip_is_one_segment() {
        let cfg = EndpointConfig::default();
        for w in ["go", "stop", "yes"] {
            for i in 0..20 {
                let segs = segment(&synth_clip(w, i, 17), &cfg).unwrap();
                assert_eq!(segs.len(), 1, "{w} #{i}: {segs:?}");
            }
        }
    }

    #[test]
    fn sequence_segments_once_per_clip() {
        let labels: Vec<(&str, u64)> = (0..6).map(|i| (["go", "stop", "yes"][i % 3], i as u64)).collect();
        let (clip, spans) = synth_sequence(&labels, 9);
        let segs = segment(&clip, &EndpointConfig::default()).unwrap();
        assert_eq!(segs.len(), labels.len());
        for (s, (lo, hi)) in segs.iter().zip(&spans) {
            assert!(s.start_sample >= *lo && s.end_sample <= *hi, "{s:?} outside {lo}..{hi}");
        }
    }
}
