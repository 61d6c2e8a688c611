//! Transcription server: accepts protocol sessions, reassembles utterance
//! audio and hands it to a pluggable backend.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{pcm_to_le_bytes, SAMPLE_RATE};
use crate::protocol::{codes, read_message, write_message, FrameError, WireMessage, ENCODING_PCM_S16LE, PROTO_VERSION};

/// 30 s of 16 kHz audio.
pub const MAX_UTTERANCE_SAMPLES: usize = 960_000;
pub const FULL_CONFIDENCE_BP: u16 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcription {
    pub text: String,
    pub confidence_bp: u16,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("no transcript for this audio")]
    UnknownAudio,
    #[error("backend failed: {0}")]
    Failed(String),
}

impl BackendError {
    pub fn wire_code(&self) -> u16 {
        match self {
            BackendError::UnknownAudio => codes::UNKNOWN_UTTERANCE,
            BackendError::Failed(_) => codes::BACKEND_FAILURE,
        }
    }
}

pub trait TranscriberBackend: Send + Sync {
    fn transcribe(&self, pcm: &[i16]) -> Result<Transcription, BackendError>;

    /// Whether `transcribe` may run on several sessions at once. The server
    /// serializes calls when this is false.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Lowercase hex SHA-256 of the little-endian PCM bytes.
pub fn pcm_digest(pcm: &[i16]) -> String {
    hex::encode(Sha256::digest(pcm_to_le_bytes(pcm)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockTranscriber {
    Fixed { text: String },
    /// Keyed by [`pcm_digest`].
    Table(HashMap<String, String>),
    EchoHash,
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("bad backend spec {spec:?}: {reason}")]
    BackendSpec { spec: String, reason: String },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MockTranscriber {
    /// Parses `mock:fixed:TEXT`, `mock:table:FILE` or `mock:echohash`.
    /// A table file is a JSON object mapping PCM digests to texts.
    pub fn from_spec(spec: &str) -> Result<Self, ServerError> {
        let bad = |reason: &str| ServerError::BackendSpec { spec: spec.to_string(), reason: reason.to_string() };
        let rest = spec.strip_prefix("mock:").ok_or_else(|| bad("expected a mock:<mode> backend"))?;
        let (mode, arg) = match rest.split_once(':') {
            Some((m, a)) => (m, Some(a)),
            None => (rest, None),
        };
        match (mode, arg) {
            ("fixed", Some(text)) => Ok(MockTranscriber::Fixed { text: text.to_string() }),
            ("table", Some(path)) if !path.is_empty() => Self::table_from_file(path),
            ("echohash", None) => Ok(MockTranscriber::EchoHash),
            ("fixed", None) => Err(bad("fixed mode needs a text: mock:fixed:TEXT")),
            ("table", _) => Err(bad("table mode needs a file: mock:table:FILE")),
            ("echohash", Some(_)) => Err(bad("echohash takes no argument")),
            _ => Err(bad("unknown mode; use fixed, table or echohash")),
        }
    }

    pub fn table_from_file(path: impl AsRef<Path>) -> Result<Self, ServerError> {
        let path = path.as_ref();
        let file_err = |source| ServerError::File { path: path.to_path_buf(), source };
        let text = std::fs::read_to_string(path).map_err(file_err)?;
        let map: HashMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| file_err(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
        Ok(MockTranscriber::Table(map))
    }
}

impl TranscriberBackend for MockTranscriber {
    fn transcribe(&self, pcm: &[i16]) -> Result<Transcription, BackendError> {
        if pcm.is_empty() {
            return Err(BackendError::Failed("empty utterance".into()));
        }
        let text = match self {
            MockTranscriber::Fixed { text } => text.clone(),
            MockTranscriber::Table(map) => map.get(&pcm_digest(pcm)).cloned().ok_or(BackendError::UnknownAudio)?,
            MockTranscriber::EchoHash => pcm_digest(pcm),
        };
        Ok(Transcription { text, confidence_bp: FULL_CONFIDENCE_BP })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Append-only JSON-lines transcript log.
    pub log_path: Option<PathBuf>,
}

#[derive(Serialize)]
struct LogLine<'a> {
    timestamp: f64,
    peer: String,
    utt_id: u32,
    text: &'a str,
    confidence: f64,
}

struct Shared {
    backend: Arc<dyn TranscriberBackend>,
    serial: Mutex<()>,
    log: Option<Mutex<File>>,
}

impl Shared {
    fn transcribe(&self, pcm: &[i16]) -> Result<Transcription, BackendError> {
        if self.backend.concurrent() {
            self.backend.transcribe(pcm)
        } else {
            let _guard = self.serial.lock().unwrap_or_else(|e| e.into_inner());
            self.backend.transcribe(pcm)
        }
    }

    fn log(&self, peer: SocketAddr, utt_id: u32, t: &Transcription) {
        let Some(log) = &self.log else { return };
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let line = LogLine {
            timestamp,
            peer: peer.to_string(),
            utt_id,
            text: &t.text,
            confidence: t.confidence_bp as f64 / FULL_CONFIDENCE_BP as f64,
        };
        let mut json = serde_json::to_string(&line).expect("log line serializes");
        json.push('\n');
        let mut f = log.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = f.write_all(json.as_bytes()) {
            eprintln!("transcript log write failed: {e}");
        }
    }
}

struct OpenUtterance {
    next_seq: u32,
    pcm: Vec<u8>,
}

/// How a session ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionEnd {
    ClientClosed,
    Violation(u16),
    Io(String),
}

fn hello_supported(msg: &WireMessage) -> bool {
    matches!(
        msg,
        WireMessage::Hello { proto_version: PROTO_VERSION, sample_rate: SAMPLE_RATE, channels: 1, bits: 16, encoding: ENCODING_PCM_S16LE }
    )
}

fn error(code: u16, msg: impl Into<String>) -> WireMessage {
    WireMessage::Error { code, msg: msg.into() }
}

fn run_session(stream: TcpStream, shared: &Shared) -> SessionEnd {
    let peer = stream.peer_addr().unwrap_or_else(|_| SocketAddr::from(([0, 0, 0, 0], 0)));
    let _ = stream.set_nodelay(true);
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(e) => return SessionEnd::Io(e.to_string()),
    };
    let mut reader = BufReader::new(stream);
    let mut send = |msg: WireMessage| write_message(&mut writer, &msg);
    macro_rules! reply {
        ($msg:expr) => {
            if let Err(e) = send($msg) {
                return SessionEnd::Io(e.to_string());
            }
        };
    }
    macro_rules! violate {
        ($code:expr, $($fmt:tt)*) => {{
            let _ = send(error($code, format!($($fmt)*)));
            return SessionEnd::Violation($code);
        }};
    }

    let mut greeted = false;
    let mut open: HashMap<u32, OpenUtterance> = HashMap::new();
    let mut used: HashSet<u32> = HashSet::new();
    loop {
        let msg = match read_message(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) => return SessionEnd::ClientClosed,
            Err(FrameError::Protocol(e)) => violate!(codes::PROTOCOL_VIOLATION, "{e}"),
            Err(e) => return SessionEnd::Io(e.to_string()),
        };
        if !greeted {
            match msg {
                WireMessage::Hello { .. } if hello_supported(&msg) => {
                    greeted = true;
                    reply!(WireMessage::HelloAck { accepted: true, proto_version: PROTO_VERSION });
                    continue;
                }
                WireMessage::Hello { .. } => {
                    reply!(WireMessage::HelloAck { accepted: false, proto_version: PROTO_VERSION });
                    violate!(codes::UNSUPPORTED_AUDIO, "only 16000 Hz mono 16-bit PCM is supported");
                }
                other => violate!(codes::PROTOCOL_VIOLATION, "expected Hello, got {}", other.name()),
            }
        }
        match msg {
            WireMessage::UttStart { utt_id } => {
                if !used.insert(utt_id) {
                    violate!(codes::PROTOCOL_VIOLATION, "utt_id {utt_id} already used in this session");
                }
                open.insert(utt_id, OpenUtterance { next_seq: 0, pcm: Vec::new() });
            }
            WireMessage::AudioChunk { utt_id, seq, pcm } => {
                let Some(u) = open.get_mut(&utt_id) else {
                    reply!(error(codes::UNKNOWN_UTTERANCE, format!("utt_id {utt_id} is not open")));
                    continue;
                };
                if seq != u.next_seq {
                    violate!(codes::PROTOCOL_VIOLATION, "utt_id {utt_id}: expected seq {}, got {seq}", u.next_seq);
                }
                if (u.pcm.len() + pcm.len()) / 2 > MAX_UTTERANCE_SAMPLES {
                    violate!(codes::UNSUPPORTED_AUDIO, "utt_id {utt_id} exceeds {MAX_UTTERANCE_SAMPLES} samples");
                }
                u.next_seq += 1;
                u.pcm.extend_from_slice(&pcm);
            }
            WireMessage::UttEnd { utt_id } => {
                let Some(u) = open.remove(&utt_id) else {
                    reply!(error(codes::UNKNOWN_UTTERANCE, format!("utt_id {utt_id} is not open")));
                    continue;
                };
                let samples: Vec<i16> = u.pcm.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
                match shared.transcribe(&samples) {
                    Ok(t) => {
                        shared.log(peer, utt_id, &t);
                        reply!(WireMessage::Transcript { utt_id, text: t.text, confidence_bp: t.confidence_bp });
                    }
                    Err(e) => reply!(error(e.wire_code(), format!("utt_id {utt_id}: {e}"))),
                }
            }
            WireMessage::Ping => reply!(WireMessage::Pong),
            WireMessage::Pong => {}
            other => violate!(codes::PROTOCOL_VIOLATION, "unexpected {} from client", other.name()),
        }
    }
}

/// A running server. Dropping the handle leaves it running; call
/// [`ServerHandle::shutdown`] to stop accepting connections.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops the accept loop. Sessions already in progress run to completion.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `listen` and serves on a background thread, one thread per
/// connection.
pub fn spawn_server(
    listen: &str,
    backend: Arc<dyn TranscriberBackend>,
    cfg: &ServerConfig,
) -> Result<ServerHandle, ServerError> {
    let listener = TcpListener::bind(listen).map_err(|source| ServerError::Bind { addr: listen.to_string(), source })?;
    let addr = listener.local_addr()?;
    let log = match &cfg.log_path {
        Some(path) => Some(Mutex::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| ServerError::File { path: path.clone(), source })?,
        )),
        None => None,
    };
    let shared = Arc::new(Shared { backend, serial: Mutex::new(()), log });
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let thread = thread::spawn(move || {
        for conn in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let shared = Arc::clone(&shared);
            thread::spawn(move || {
                run_session(stream, &shared);
            });
        }
    });
    Ok(ServerHandle { addr, stop, thread: Some(thread) })
}

/// Serves until the process is killed.
pub fn run_server(listen: &str, backend: Arc<dyn TranscriberBackend>, cfg: &ServerConfig) -> Result<(), ServerError> {
    spawn_server(listen, backend, cfg)?.join();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_mode_ignores_audio() {
        let m = MockTranscriber::from_spec("mock:fixed:hello world").unwrap();
        let t = m.transcribe(&[1, 2, 3]).unwrap();
        assert_eq!(t, Transcription { text: "hello world".into(), confidence_bp: 10_000 });
        assert_eq!(m.transcribe(&[9; 100]).unwrap().text, "hello world");
    }

    #[test]
    fn empty_table_is_unknown_audio() {
        let m = MockTranscriber::Table(HashMap::new());
        let e = m.transcribe(&[1, 2]).unwrap_err();
        assert_eq!(e, BackendError::UnknownAudio);
        assert_eq!(e.wire_code(), 1004);
    }

    #[test]
    fn table_hit() {
        let pcm = [5i16, -5, 7];
        let m = MockTranscriber::Table(HashMap::from([(pcm_digest(&pcm), "yes".to_string())]));
        assert_eq!(m.transcribe(&pcm).unwrap().text, "yes");
    }

    #[test]
    fn echo_hash_is_deterministic_and_distinguishing() {
        let m = MockTranscriber::EchoHash;
        let a = m.transcribe(&[1, 2, 3]).unwrap().text;
        assert_eq!(a, m.transcribe(&[1, 2, 3]).unwrap().text);
        assert_ne!(a, m.transcribe(&[1, 2, 4]).unwrap().text);
        // Bytes 01 00 02 00.
        assert_eq!(pcm_digest(&[1, 2]), hex::encode(Sha256::digest([1u8, 0, 2, 0])));
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(MockTranscriber::from_spec("mock:echohash").unwrap(), MockTranscriber::EchoHash);
        assert_eq!(
            MockTranscriber::from_spec("mock:fixed:a:b").unwrap(),
            MockTranscriber::Fixed { text: "a:b".into() }
        );
        for bad in ["", "mock", "mock:", "fixed:x", "mock:fixed", "mock:table:", "mock:echohash:x", "mock:other:1"] {
            assert!(
                matches!(MockTranscriber::from_spec(bad), Err(ServerError::BackendSpec { .. })),
                "{bad:?} should be rejected"
            );
        }
        assert!(matches!(
            MockTranscriber::from_spec("mock:table:/nonexistent/table.json"),
            Err(ServerError::File { .. })
        ));
    }
}
