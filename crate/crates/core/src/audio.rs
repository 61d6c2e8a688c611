//! WAV loading and directory-per-word dataset scanning.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The only sample rate admitted to the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported WAV format in {path}: {property}")]
    UnsupportedFormat { path: PathBuf, property: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("missing directory for word {0:?}")]
    MissingWordDirectory(String),
    #[error("no .wav files for word {0:?}")]
    EmptyWordDirectory(String),
}

/// Mono audio normalized to `[-1.0, 1.0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_path: Option<String>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self { samples, sample_rate, source_path: None }
    }

    /// Builds a clip from signed 16-bit PCM, mapping `v` to `v / 32768`.
    pub fn from_i16(pcm: &[i16], sample_rate: u32) -> Self {
        Self::new(pcm.iter().map(|&v| v as f32 / 32768.0).collect(), sample_rate)
    }

    /// Decodes little-endian int16 bytes. A trailing odd byte is dropped.
    pub fn from_le_bytes(bytes: &[u8], sample_rate: u32) -> Self {
        let pcm: Vec<i16> = bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        Self::from_i16(&pcm, sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Inverse of the load mapping; exact for every clip that came from int16.
    pub fn to_i16(&self) -> Vec<i16> {
        self.samples
            .iter()
            .map(|&s| (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
            .collect()
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        pcm_to_le_bytes(&self.to_i16())
    }

    pub fn slice(&self, start: usize, end: usize) -> AudioClip {
        AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
            source_path: self.source_path.clone(),
        }
    }
}

pub fn pcm_to_le_bytes(pcm: &[i16]) -> Vec<u8> {
    pcm.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioError::NotFound(path.to_path_buf()));
    }
    let unsupported = |property: String| AudioError::UnsupportedFormat {
        path: path.to_path_buf(),
        property,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => AudioError::Io { path: path.to_path_buf(), source },
        other => unsupported(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(unsupported("sample format is float, expected integer PCM".into()));
    }
    if spec.channels != 1 {
        return Err(unsupported(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.bits_per_sample != 16 {
        return Err(unsupported(format!(
            "{} bits per sample, expected 16",
            spec.bits_per_sample
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(unsupported(format!(
            "sample rate {} Hz, expected {SAMPLE_RATE}",
            spec.sample_rate
        )));
    }
    let pcm = reader
        .samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| unsupported(e.to_string()))?;
    let mut clip = AudioClip::from_i16(&pcm, SAMPLE_RATE);
    clip.source_path = Some(path.display().to_string());
    Ok(clip)
}

/// Writes 16 kHz mono int16 PCM.
pub fn write_wav(path: impl AsRef<Path>, pcm: &[i16]) -> Result<(), AudioError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => AudioError::Io { path: path.to_path_buf(), source },
        other => AudioError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(other.to_string()),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in pcm {
        writer.write_sample(s).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub label: String,
    pub path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub entries: Vec<DatasetEntry>,
}

impl DatasetIndex {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, label: &str, split: Split) -> usize {
        self.split(split).filter(|e| e.label == label).count()
    }
}

/// Position-in-word rule: every fifth file (sorted order) is held out.
pub fn split_for_position(i: usize) -> Split {
    if i % 5 == 4 {
        Split::Test
    } else {
        Split::Train
    }
}

/// Indexes `root/<word>/*.wav` for each requested word.
pub fn scan_dataset(root: impl AsRef<Path>, words: &[String]) -> Result<DatasetIndex, AudioError> {
    let root = root.as_ref();
    let mut entries = Vec::new();
    for word in words {
        let dir = root.join(word);
        if !dir.is_dir() {
            return Err(AudioError::MissingWordDirectory(word.clone()));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|source| AudioError::Io { path: dir.clone(), source })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension().and_then(|x| x.to_str()).map(|x| x.eq_ignore_ascii_case("wav"))
                        == Some(true)
            })
            .collect();
        if files.is_empty() {
            return Err(AudioError::EmptyWordDirectory(word.clone()));
        }
        files.sort();
        entries.extend(files.into_iter().enumerate().map(|(i, path)| DatasetEntry {
            label: word.clone(),
            path,
            split: split_for_position(i),
        }));
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetIndex { entries })
}
