//! Hybrid edge/server isolated-word speech recognition.
//!
//! The edge side turns audio into MFCC frames, quantizes them against a
//! k-means codebook and scores the symbol string under one left-right
//! discrete HMM per keyword. Whole utterances can also be streamed over a
//! small framed TCP protocol to a transcription server with pluggable
//! backends.

pub mod audio;
pub mod cli;
pub mod client;
pub mod edge;
pub mod endpoint;
pub mod features;
pub mod hmm;
pub mod protocol;
pub mod recognizer;
pub mod rng;
pub mod server;
pub mod synth;
pub mod vq;
