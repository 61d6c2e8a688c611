//! Edge runtime: segment audio, decide keywords locally and forward
//! utterances to a transcription server.
//!
//! The calling thread segments and recognizes. Segments bound for the server
//! go to a forwarder thread that cuts them into chunk messages on a bounded
//! queue; a sender thread drains that queue onto the socket and a reader
//! thread turns replies into events. Every event passes through one emitter
//! thread, so output order matches the order events were produced.

use std::collections::VecDeque;
use std::io::{BufReader, Write};
use std::net::{Shutdown, TcpStream};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, Sender, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::audio::AudioClip;
use crate::client::{Client, ClientError};
use crate::endpoint::{segment, EndpointConfig, EndpointError, Segment};
use crate::protocol::{codes, read_message, write_message, WireMessage, DEFAULT_CHUNK_BYTES};
use crate::recognizer::{Decision, Recognizer, WordModelSet};

/// Capacity of the chunk queue between the forwarder and the sender.
pub const QUEUE_CHUNKS: usize = 64;
pub const DEFAULT_REPLY_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgePolicy {
    LocalOnly,
    RemoteOnly,
    Hybrid,
}

impl EdgePolicy {
    pub fn local(self) -> bool {
        self != EdgePolicy::RemoteOnly
    }

    pub fn remote(self) -> bool {
        self != EdgePolicy::LocalOnly
    }
}

impl FromStr for EdgePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(EdgePolicy::LocalOnly),
            "remote" => Ok(EdgePolicy::RemoteOnly),
            "hybrid" => Ok(EdgePolicy::Hybrid),
            _ => Err(format!("unknown policy {s:?}; use local, remote or hybrid")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Keyword,
    Transcript,
    Rejected,
    Error,
}

/// One output event. Absent fields are omitted from the JSON line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeEvent {
    pub kind: EventKind,
    pub utt_id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub word: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code: Option<u16>,
    /// Per-frame log-likelihood of the best word; `None` when no model
    /// could produce the segment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compute_ms: Option<f64>,
    /// Milliseconds from the moment the segmenter closed this utterance.
    pub wall_ms_since_utt_end: f64,
}

impl EdgeEvent {
    fn new(kind: EventKind, utt_id: u32, since: Instant) -> Self {
        Self {
            kind,
            utt_id,
            word: None,
            text: None,
            code: None,
            score: None,
            compute_ms: None,
            wall_ms_since_utt_end: ms(since.elapsed()),
        }
    }

    fn error(utt_id: u32, since: Instant, code: Option<u16>, msg: String) -> Self {
        Self { code, text: Some(msg), ..Self::new(EventKind::Error, utt_id, since) }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

#[derive(Debug, Clone)]
pub struct EdgeConfig {
    pub policy: EdgePolicy,
    pub server: Option<String>,
    pub endpoint: EndpointConfig,
    /// Keyword rejection threshold on the per-frame score.
    pub threshold: Option<f64>,
    pub chunk_bytes: usize,
    pub reply_timeout: Duration,
}

impl EdgeConfig {
    pub fn new(policy: EdgePolicy) -> Self {
        Self {
            policy,
            server: None,
            endpoint: EndpointConfig::default(),
            threshold: None,
            chunk_bytes: DEFAULT_CHUNK_BYTES,
            reply_timeout: DEFAULT_REPLY_TIMEOUT,
        }
    }
}

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("policy needs a model")]
    MissingModel,
    #[error("policy needs a server address")]
    MissingServer,
    #[error("connect failed: {0}")]
    ConnectFailed(#[source] ClientError),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error("writing events: {0}")]
    Output(#[source] std::io::Error),
}

/// Segments `input` and returns the segments in order. Clips too short to
/// estimate a noise floor have none.
pub fn find_segments(input: &AudioClip, cfg: &EndpointConfig) -> Result<Vec<Segment>, EndpointError> {
    match segment(input, cfg) {
        Err(EndpointError::ClipTooShort { .. }) => Ok(Vec::new()),
        other => other,
    }
}

struct Job {
    utt_id: u32,
    pcm: Vec<u8>,
    closed_at: Instant,
}

/// Utterances sent and still waiting for a reply, oldest first.
type Pending = Arc<Mutex<VecDeque<(u32, Instant)>>>;

fn emitter<W: Write>(rx: Receiver<EdgeEvent>, mut out: W) -> Result<Vec<EdgeEvent>, std::io::Error> {
    let mut all = Vec::new();
    let mut failed = None;
    for ev in rx {
        if failed.is_none() {
            let r = writeln!(out, "{}", ev.to_json()).and_then(|_| out.flush());
            failed = r.err();
        }
        all.push(ev);
    }
    match failed {
        Some(e) => Err(e),
        None => Ok(all),
    }
}

fn forwarder(jobs: Receiver<Job>, queue: SyncSender<WireMessage>, pending: Pending, chunk_bytes: usize) {
    let chunk_bytes = (chunk_bytes & !1).max(2);
    for job in jobs {
        pending.lock().expect("pending lock").push_back((job.utt_id, job.closed_at));
        let utt_id = job.utt_id;
        let mut msgs = vec![WireMessage::UttStart { utt_id }];
        msgs.extend(
            job.pcm
                .chunks(chunk_bytes)
                .enumerate()
                .map(|(seq, c)| WireMessage::AudioChunk { utt_id, seq: seq as u32, pcm: c.to_vec() }),
        );
        msgs.push(WireMessage::UttEnd { utt_id });
        for m in msgs {
            // Blocks while the queue is full. A closed queue means the
            // sender gave up; leftovers are failed after the join.
            if queue.send(m).is_err() {
                break;
            }
        }
    }
}

fn sender(queue: Receiver<WireMessage>, mut stream: TcpStream) {
    for m in queue {
        if write_message(&mut stream, &m).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Write);
}

fn reader(mut stream: BufReader<TcpStream>, pending: Pending, events: Sender<EdgeEvent>) {
    loop {
        let msg = match read_message(&mut stream) {
            Ok(Some(m)) => m,
            _ => return,
        };
        let mut p = pending.lock().expect("pending lock");
        match msg {
            WireMessage::Transcript { utt_id, text, .. } => {
                let Some(pos) = p.iter().position(|(id, _)| *id == utt_id) else { continue };
                let (_, closed_at) = p.remove(pos).expect("index in range");
                let ev = EdgeEvent { text: Some(text), ..EdgeEvent::new(EventKind::Transcript, utt_id, closed_at) };
                let _ = events.send(ev);
            }
            WireMessage::Error { code, msg } => {
                // Replies come back in request order, so an Error answers the
                // oldest open request.
                if let Some((utt_id, closed_at)) = p.pop_front() {
                    let _ = events.send(EdgeEvent::error(utt_id, closed_at, Some(code), msg));
                }
                if code == codes::PROTOCOL_VIOLATION || code == codes::UNSUPPORTED_AUDIO {
                    return;
                }
            }
            _ => {}
        }
    }
}

/// Runs the edge pipeline over `input`, writing one JSON line per event to
/// `out`, and returns the events in output order.
pub fn run_edge<W: Write + Send>(
    input: &AudioClip,
    models: Option<&WordModelSet>,
    cfg: &EdgeConfig,
    out: W,
) -> Result<Vec<EdgeEvent>, EdgeError> {
    let policy = cfg.policy;
    if policy.local() && models.is_none() {
        return Err(EdgeError::MissingModel);
    }
    let recognizer = match models {
        Some(m) if policy.local() => Some(Recognizer::new(m).map_err(|_| EdgeError::MissingModel)?),
        _ => None,
    };
    let client = if policy.remote() {
        let addr = cfg.server.as_deref().ok_or(EdgeError::MissingServer)?;
        match Client::connect(addr) {
            Ok(c) => Ok(c),
            Err(e) if policy == EdgePolicy::RemoteOnly => return Err(EdgeError::ConnectFailed(e)),
            Err(e) => Err(e.to_string()),
        }
    } else {
        Err(String::new())
    };
    let segments = find_segments(input, &cfg.endpoint)?;

    let (ev_tx, ev_rx) = mpsc::channel::<EdgeEvent>();
    thread::scope(|s| {
        let emit = s.spawn(move || emitter(ev_rx, out));

        let offline = match &client {
            Err(reason) if policy.remote() => Some(format!("server unavailable: {reason}")),
            _ => None,
        };
        let remote = match client {
            Ok(c) if policy.remote() => {
                let (write_half, read_half) = c.into_split();
                let _ = write_half.set_read_timeout(Some(cfg.reply_timeout));
                let pending: Pending = Arc::default();
                let (job_tx, job_rx) = mpsc::channel::<Job>();
                let (q_tx, q_rx) = mpsc::sync_channel::<WireMessage>(QUEUE_CHUNKS);
                let fwd = {
                    let pending = Arc::clone(&pending);
                    s.spawn(move || forwarder(job_rx, q_tx, pending, cfg.chunk_bytes))
                };
                let snd = s.spawn(move || sender(q_rx, write_half));
                let rdr = {
                    let (pending, ev_tx) = (Arc::clone(&pending), ev_tx.clone());
                    s.spawn(move || reader(read_half, pending, ev_tx))
                };
                Some((job_tx, pending, [fwd, snd, rdr]))
            }
            _ => None,
        };

        for (i, seg) in segments.iter().enumerate() {
            let utt_id = i as u32 + 1;
            let closed_at = Instant::now();
            let clip = input.slice(seg.start_sample, seg.end_sample);
            if let Some(rec) = &recognizer {
                let t0 = Instant::now();
                let result = rec.recognize(&clip, cfg.threshold);
                let compute_ms = Some(ms(t0.elapsed()));
                let ev = match result {
                    Ok(r) => {
                        let score = Some(r.best_score()).filter(|s| s.is_finite());
                        match r.best_word {
                            Decision::Word(w) => EdgeEvent {
                                word: Some(w),
                                score,
                                compute_ms,
                                ..EdgeEvent::new(EventKind::Keyword, utt_id, closed_at)
                            },
                            Decision::Rejected => EdgeEvent {
                                score,
                                compute_ms,
                                ..EdgeEvent::new(EventKind::Rejected, utt_id, closed_at)
                            },
                        }
                    }
                    Err(e) => EdgeEvent { compute_ms, ..EdgeEvent::error(utt_id, closed_at, None, e.to_string()) },
                };
                let _ = ev_tx.send(ev);
            }
            if let Some((jobs, _, _)) = &remote {
                let _ = jobs.send(Job { utt_id, pcm: clip.to_le_bytes(), closed_at });
            } else if let Some(reason) = &offline {
                let _ = ev_tx.send(EdgeEvent::error(utt_id, closed_at, Some(codes::BACKEND_FAILURE), reason.clone()));
            }
        }

        if let Some((jobs, pending, handles)) = remote {
            drop(jobs);
            for h in handles {
                let _ = h.join();
            }
            for (utt_id, closed_at) in pending.lock().expect("pending lock").drain(..) {
                let msg = "no reply from server".to_string();
                let _ = ev_tx.send(EdgeEvent::error(utt_id, closed_at, Some(codes::BACKEND_FAILURE), msg));
            }
        }
        drop(ev_tx);
        emit.join().expect("emitter thread").map_err(EdgeError::Output)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_parsing() {
        assert_eq!("hybrid".parse::<EdgePolicy>().unwrap(), EdgePolicy::Hybrid);
        assert_eq!("local".parse::<EdgePolicy>().unwrap(), EdgePolicy::LocalOnly);
        assert_eq!("remote".parse::<EdgePolicy>().unwrap(), EdgePolicy::RemoteOnly);
        assert!("both".parse::<EdgePolicy>().is_err());
    }

    #[test]
    fn event_json_key_order() {
        let ev = EdgeEvent {
            word: Some("go".into()),
            score: Some(-3.5),
            compute_ms: Some(1.25),
            wall_ms_since_utt_end: 2.0,
            ..EdgeEvent::new(EventKind::Keyword, 4, Instant::now())
        };
        assert_eq!(
            ev.to_json(),
            r#"{"kind":"Keyword","utt_id":4,"word":"go","score":-3.5,"compute_ms":1.25,"wall_ms_since_utt_end":2.0}"#
        );
    }

    #[test]
    fn remote_policy_needs_server() {
        let cfg = EdgeConfig::new(EdgePolicy::RemoteOnly);
        let silent = AudioClip::new(vec![0.0; 16000], 16000);
        assert!(matches!(run_edge(&silent, None, &cfg, Vec::new()), Err(EdgeError::MissingServer)));
    }

    #[test]
    fn empty_and_short_input_have_no_segments() {
        let cfg = EndpointConfig::default();
        assert!(find_segments(&AudioClip::new(vec![], 16000), &cfg).unwrap().is_empty());
        assert!(find_segments(&AudioClip::new(vec![0.1; 500], 16000), &cfg).unwrap().is_empty());
    }
}
