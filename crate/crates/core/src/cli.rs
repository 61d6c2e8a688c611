//! Command-line front end. [`run`] returns the process exit code.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::audio::{read_wav, scan_dataset, AudioClip, AudioError, SAMPLE_RATE};
use crate::edge::{run_edge, EdgeConfig, EdgeError, EdgePolicy};
use crate::protocol::golden_vectors;
use crate::recognizer::{
    evaluate, train_word_models_with_summary, Decision, Recognition, RecognizerError, TrainConfig, WordModelSet,
};
use crate::server::{spawn_server, MockTranscriber, ServerConfig, ServerError};
use crate::synth::write_dataset;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_ACCEPTANCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hasr", version, about = "Hybrid edge/server keyword recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one HMM per word from DIR/<word>/*.wav and write a model file.
    Train {
        /// Dataset root with one directory per word.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated word list.
        #[arg(long, value_delimiter = ',', required = true)]
        words: Vec<String>,
        /// Output model file (*.hasr.json).
        #[arg(long)]
        out: PathBuf,
        /// HMM states per word.
        #[arg(long, default_value_t = 5)]
        states: usize,
        /// Codebook size.
        #[arg(long, default_value_t = 64)]
        codebook: usize,
        /// Seed for codebook initialization.
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Largest forward state jump (1 or 2).
        #[arg(long, default_value_t = 2)]
        skip: usize,
    },
    /// Recognize one WAV file and print the scores as JSON.
    Recognize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        /// Reject when the best per-frame log-likelihood is below this.
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
    },
    /// Evaluate on the Test split of DIR and print the report as JSON.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Exit with status 3 when accuracy falls below this.
        #[arg(long)]
        min_accuracy: Option<f64>,
    },
    /// Run the transcription server.
    Serve {
        /// Address to listen on, e.g. 127.0.0.1:7070.
        #[arg(long)]
        listen: String,
        /// mock:fixed:TEXT, mock:table:FILE or mock:echohash.
        #[arg(long)]
        backend: String,
        /// Append transcripts to this JSON-lines file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Segment audio, spot keywords locally and/or forward to a server.
    Edge {
        /// Model file; required for local and hybrid.
        #[arg(long)]
        model: Option<PathBuf>,
        /// WAV file, or - for raw 16 kHz int16 little-endian PCM on stdin.
        #[arg(long)]
        input: String,
        /// local, remote or hybrid.
        #[arg(long)]
        policy: EdgePolicy,
        /// Server address; required for remote and hybrid.
        #[arg(long)]
        connect: Option<String>,
        /// Keyword rejection threshold (per-frame log-likelihood).
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
    },
    /// Write a synthetic dataset of word surrogates.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        words: Vec<String>,
        #[arg(long, default_value_t = 300)]
        per_word: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Write the protocol golden vectors as JSON.
    ExportVectors {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
    Acceptance(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
            Failure::Acceptance(_) => EXIT_ACCEPTANCE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) | Failure::Acceptance(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn recognizer_failure(e: RecognizerError) -> Failure {
    match e {
        RecognizerError::Config(_) => Failure::Usage(e.to_string()),
        other => runtime(other),
    }
}

fn load_model(path: &PathBuf) -> Result<WordModelSet, Failure> {
    WordModelSet::load(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn recognition_json(r: &Recognition) -> Value {
    let scores: serde_json::Map<String, Value> = r.scores.iter().map(|(w, s)| (w.clone(), finite_or_null(*s))).collect();
    json!({
        "best_word": r.best_word.word(),
        "rejected": r.best_word == Decision::Rejected,
        "scores": scores,
        "t_frames": r.t_frames,
    })
}

fn print_json(out: &mut (dyn Write + Send), v: &impl serde::Serialize) -> Result<(), Failure> {
    let s = serde_json::to_string(v).expect("output serializes");
    writeln!(out, "{s}").map_err(runtime)
}

fn read_input(input: &str) -> Result<AudioClip, Failure> {
    if input == "-" {
        let mut bytes = Vec::new();
        std::io::stdin().read_to_end(&mut bytes).map_err(runtime)?;
        Ok(AudioClip::from_le_bytes(&bytes, SAMPLE_RATE))
    } else {
        read_wav(input).map_err(runtime)
    }
}

fn execute(cmd: Command, out: &mut (dyn Write + Send)) -> Result<(), Failure> {
    match cmd {
        Command::Train { data, words, out: model_path, states, codebook, seed, skip } => {
            let cfg = TrainConfig { n_states: states, codebook_k: codebook, seed, skip, ..TrainConfig::with_words(&words) };
            cfg.validate().map_err(recognizer_failure)?;
            let index = scan_dataset(&data, &cfg.words).map_err(runtime)?;
            let (set, summary) = train_word_models_with_summary(&index, &cfg).map_err(recognizer_failure)?;
            set.save(&model_path).map_err(|e| Failure::Runtime(format!("{}: {e}", model_path.display())))?;
            print_json(
                out,
                &json!({
                    "model": model_path.display().to_string(),
                    "codebook_k": set.codebook.k(),
                    "training_distortion": set.codebook.training_distortion,
                    "words": summary,
                }),
            )
        }
        Command::Recognize { model, wav, threshold } => {
            let set = load_model(&model)?;
            let clip = read_wav(&wav).map_err(runtime)?;
            let r = crate::recognizer::recognize(&set, &clip, threshold).map_err(runtime)?;
            print_json(out, &recognition_json(&r))
        }
        Command::Evaluate { model, data, min_accuracy } => {
            if let Some(m) = min_accuracy {
                if !(0.0..=1.0).contains(&m) {
                    return Err(Failure::Usage(format!("--min-accuracy must be in [0, 1], got {m}")));
                }
            }
            let set = load_model(&model)?;
            let index = scan_dataset(&data, &set.words()).map_err(runtime)?;
            let report = evaluate(&set, &index).map_err(runtime)?;
            print_json(out, &report)?;
            match min_accuracy {
                Some(m) if report.accuracy < m => Err(Failure::Acceptance(format!(
                    "accuracy {:.4} is below the required {m}",
                    report.accuracy
                ))),
                _ => Ok(()),
            }
        }
        Command::Serve { listen, backend, log } => {
            let backend = MockTranscriber::from_spec(&backend).map_err(|e| match e {
                ServerError::BackendSpec { .. } => Failure::Usage(e.to_string()),
                other => runtime(other),
            })?;
            let handle = spawn_server(&listen, Arc::new(backend), &ServerConfig { log_path: log }).map_err(runtime)?;
            eprintln!("listening on {}", handle.local_addr());
            handle.join();
            Ok(())
        }
        Command::Edge { model, input, policy, connect, threshold } => {
            if policy.local() && model.is_none() {
                return Err(Failure::Usage(format!("--model is required for policy {policy:?}")));
            }
            if policy.remote() && connect.is_none() {
                return Err(Failure::Usage(format!("--connect is required for policy {policy:?}")));
            }
            let set = model.as_ref().map(load_model).transpose()?;
            let clip = read_input(&input)?;
            let cfg = EdgeConfig { server: connect, threshold, ..EdgeConfig::new(policy) };
            run_edge(&clip, set.as_ref(), &cfg, &mut *out).map_err(|e| match e {
                EdgeError::MissingModel | EdgeError::MissingServer => Failure::Usage(e.to_string()),
                other => runtime(other),
            })?;
            Ok(())
        }
        Command::Synth { out: root, words, per_word, seed } => {
            if per_word == 0 {
                return Err(Failure::Usage("--per-word must be positive".into()));
            }
            let written = write_dataset(&root, &words, per_word, seed).map_err(|e: AudioError| runtime(e))?;
            print_json(out, &json!({ "root": root.display().to_string(), "written": written }))
        }
        Command::ExportVectors { out: path } => {
            let mut text = serde_json::to_string_pretty(&golden_vectors()).expect("vectors serialize");
            text.push('\n');
            std::fs::write(&path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            print_json(out, &json!({ "out": path.display().to_string() }))
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}
