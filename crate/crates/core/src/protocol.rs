//! Framed wire codec for the edge <-> server channel.
//!
//! Every frame is `[length: u32 BE][type: u8][payload]`, where `length`
//! counts the type byte plus the payload. All integers are big-endian.
//!
//! | type | message     | payload                                              |
//! |------|-------------|------------------------------------------------------|
//! | 0x01 | Hello       | version u8, sample_rate u32, channels u8, bits u8, encoding u8 |
//! | 0x02 | HelloAck    | accepted u8 (0/1), version u8                        |
//! | 0x10 | UttStart    | utt_id u32                                           |
//! | 0x11 | AudioChunk  | utt_id u32, seq u32, pcm bytes (even length)         |
//! | 0x12 | UttEnd      | utt_id u32                                           |
//! | 0x20 | Transcript  | utt_id u32, text_len u32, text, confidence_bp u16    |
//! | 0x30 | Error       | code u16, msg_len u32, msg                           |
//! | 0x40 | Ping        | (empty)                                              |
//! | 0x41 | Pong        | (empty)                                              |

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTO_VERSION: u8 = 1;
pub const ENCODING_PCM_S16LE: u8 = 0;
/// Largest payload (excluding the type byte) a frame may carry.
pub const MAX_PAYLOAD: usize = 1 << 20;
pub const MAX_CONFIDENCE_BP: u16 = 10_000;
/// 100 ms of 16 kHz int16 audio.
pub const DEFAULT_CHUNK_BYTES: usize = 3200;

pub mod codes {
    pub const PROTOCOL_VIOLATION: u16 = 1001;
    pub const UNSUPPORTED_AUDIO: u16 = 1002;
    pub const BACKEND_FAILURE: u16 = 1003;
    pub const UNKNOWN_UTTERANCE: u16 = 1004;
}

pub mod msg_type {
    pub const HELLO: u8 = 0x01;
    pub const HELLO_ACK: u8 = 0x02;
    pub const UTT_START: u8 = 0x10;
    pub const AUDIO_CHUNK: u8 = 0x11;
    pub const UTT_END: u8 = 0x12;
    pub const TRANSCRIPT: u8 = 0x20;
    pub const ERROR: u8 = 0x30;
    pub const PING: u8 = 0x40;
    pub const PONG: u8 = 0x41;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum WireMessage {
    Hello { proto_version: u8, sample_rate: u32, channels: u8, bits: u8, encoding: u8 },
    HelloAck { accepted: bool, proto_version: u8 },
    UttStart { utt_id: u32 },
    AudioChunk {
        utt_id: u32,
        seq: u32,
        #[serde(with = "hex_bytes")]
        pcm: Vec<u8>,
    },
    UttEnd { utt_id: u32 },
    Transcript { utt_id: u32, text: String, confidence_bp: u16 },
    Error { code: u16, msg: String },
    Ping,
    Pong,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

impl WireMessage {
    /// Hello for 16 kHz mono int16 PCM.
    pub fn hello_default() -> Self {
        WireMessage::Hello {
            proto_version: PROTO_VERSION,
            sample_rate: 16_000,
            channels: 1,
            bits: 16,
            encoding: ENCODING_PCM_S16LE,
        }
    }

    pub fn type_code(&self) -> u8 {
        use msg_type::*;
        match self {
            WireMessage::Hello { .. } => HELLO,
            WireMessage::HelloAck { .. } => HELLO_ACK,
            WireMessage::UttStart { .. } => UTT_START,
            WireMessage::AudioChunk { .. } => AUDIO_CHUNK,
            WireMessage::UttEnd { .. } => UTT_END,
            WireMessage::Transcript { .. } => TRANSCRIPT,
            WireMessage::Error { .. } => ERROR,
            WireMessage::Ping => PING,
            WireMessage::Pong => PONG,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WireMessage::Hello { .. } => "Hello",
            WireMessage::HelloAck { .. } => "HelloAck",
            WireMessage::UttStart { .. } => "UttStart",
            WireMessage::AudioChunk { .. } => "AudioChunk",
            WireMessage::UttEnd { .. } => "UttEnd",
            WireMessage::Transcript { .. } => "Transcript",
            WireMessage::Error { .. } => "Error",
            WireMessage::Ping => "Ping",
            WireMessage::Pong => "Pong",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte frame limit")]
    OversizeFrame(usize),
    #[error("invalid field: {0}")]
    InvalidField(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolError {
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("bad length: {0}")]
    BadLength(String),
    #[error("text field is not valid UTF-8")]
    InvalidUtf8,
    #[error("declared frame length {0} exceeds the limit")]
    Oversize(u32),
    #[error("invalid field: {0}")]
    InvalidField(String),
}

impl ProtocolError {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolError::UnknownType(_) => "UnknownType",
            ProtocolError::BadLength(_) => "BadLength",
            ProtocolError::InvalidUtf8 => "InvalidUtf8",
            ProtocolError::Oversize(_) => "Oversize",
            ProtocolError::InvalidField(_) => "InvalidField",
        }
    }
}

fn check_confidence(bp: u16) -> Result<(), String> {
    if bp > MAX_CONFIDENCE_BP {
        Err(format!("confidence_bp {bp} exceeds {MAX_CONFIDENCE_BP}"))
    } else {
        Ok(())
    }
}

fn text_len(s: &str) -> Result<u32, EncodeError> {
    u32::try_from(s.len()).map_err(|_| EncodeError::OversizeFrame(s.len()))
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, EncodeError> {
    let mut p = Vec::new();
    match msg {
        WireMessage::Hello { proto_version, sample_rate, channels, bits, encoding } => {
            p.push(*proto_version);
            p.extend_from_slice(&sample_rate.to_be_bytes());
            p.extend_from_slice(&[*channels, *bits, *encoding]);
        }
        WireMessage::HelloAck { accepted, proto_version } => {
            p.extend_from_slice(&[u8::from(*accepted), *proto_version]);
        }
        WireMessage::UttStart { utt_id } | WireMessage::UttEnd { utt_id } => {
            p.extend_from_slice(&utt_id.to_be_bytes());
        }
        WireMessage::AudioChunk { utt_id, seq, pcm } => {
            if pcm.len() % 2 != 0 {
                return Err(EncodeError::InvalidField(format!(
                    "pcm length {} is odd",
                    pcm.len()
                )));
            }
            p.extend_from_slice(&utt_id.to_be_bytes());
            p.extend_from_slice(&seq.to_be_bytes());
            p.extend_from_slice(pcm);
        }
        WireMessage::Transcript { utt_id, text, confidence_bp } => {
            check_confidence(*confidence_bp).map_err(EncodeError::InvalidField)?;
            p.extend_from_slice(&utt_id.to_be_bytes());
            p.extend_from_slice(&text_len(text)?.to_be_bytes());
            p.extend_from_slice(text.as_bytes());
            p.extend_from_slice(&confidence_bp.to_be_bytes());
        }
        WireMessage::Error { code, msg } => {
            p.extend_from_slice(&code.to_be_bytes());
            p.extend_from_slice(&text_len(msg)?.to_be_bytes());
            p.extend_from_slice(msg.as_bytes());
        }
        WireMessage::Ping | WireMessage::Pong => {}
    }
    if p.len() > MAX_PAYLOAD {
        return Err(EncodeError::OversizeFrame(p.len()));
    }
    let mut frame = Vec::with_capacity(5 + p.len());
    frame.extend_from_slice(&(p.len() as u32 + 1).to_be_bytes());
    frame.push(msg.type_code());
    frame.extend_from_slice(&p);
    Ok(frame)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    /// A complete message and the number of bytes it occupied.
    Message(WireMessage, usize),
    /// The buffer holds only part of a frame; nothing was consumed.
    NeedMoreData,
}

/// Bounds-checked big-endian reader over one payload.
struct Cursor<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.buf.len() < n {
            return Err(ProtocolError::BadLength(format!("{} payload truncated", self.what)));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn text(&mut self) -> Result<String, ProtocolError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| ProtocolError::InvalidUtf8)
    }

    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }

    fn finish(self) -> Result<(), ProtocolError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(ProtocolError::BadLength(format!(
                "{} payload has {} trailing bytes",
                self.what,
                self.buf.len()
            )))
        }
    }
}

fn decode_payload(ty: u8, payload: &[u8]) -> Result<WireMessage, ProtocolError> {
    use msg_type::*;
    let what = match ty {
        HELLO => "Hello",
        HELLO_ACK => "HelloAck",
        UTT_START => "UttStart",
        AUDIO_CHUNK => "AudioChunk",
        UTT_END => "UttEnd",
        TRANSCRIPT => "Transcript",
        ERROR => "Error",
        PING => "Ping",
        PONG => "Pong",
        other => return Err(ProtocolError::UnknownType(other)),
    };
    let mut c = Cursor { buf: payload, what };
    let msg = match ty {
        HELLO => WireMessage::Hello {
            proto_version: c.u8()?,
            sample_rate: c.u32()?,
            channels: c.u8()?,
            bits: c.u8()?,
            encoding: c.u8()?,
        },
        HELLO_ACK => {
            let accepted = match c.u8()? {
                0 => false,
                1 => true,
                v => return Err(ProtocolError::InvalidField(format!("HelloAck accepted byte {v}"))),
            };
            WireMessage::HelloAck { accepted, proto_version: c.u8()? }
        }
        UTT_START => WireMessage::UttStart { utt_id: c.u32()? },
        UTT_END => WireMessage::UttEnd { utt_id: c.u32()? },
        AUDIO_CHUNK => {
            let utt_id = c.u32()?;
            let seq = c.u32()?;
            let pcm = c.rest().to_vec();
            if pcm.len() % 2 != 0 {
                return Err(ProtocolError::BadLength(format!("pcm length {} is odd", pcm.len())));
            }
            WireMessage::AudioChunk { utt_id, seq, pcm }
        }
        TRANSCRIPT => {
            let utt_id = c.u32()?;
            let text = c.text()?;
            let confidence_bp = c.u16()?;
            check_confidence(confidence_bp).map_err(ProtocolError::InvalidField)?;
            WireMessage::Transcript { utt_id, text, confidence_bp }
        }
        ERROR => WireMessage::Error { code: c.u16()?, msg: c.text()? },
        PING => WireMessage::Ping,
        _ => WireMessage::Pong,
    };
    c.finish()?;
    Ok(msg)
}

/// Validates a declared frame length (type byte + payload).
fn check_declared_len(len: u32) -> Result<usize, ProtocolError> {
    if len == 0 {
        return Err(ProtocolError::BadLength("frame length 0 leaves no room for the type byte".into()));
    }
    if len as usize > MAX_PAYLOAD + 1 {
        return Err(ProtocolError::Oversize(len));
    }
    Ok(len as usize)
}

/// Decodes the first frame in `buf`. Never reads past the declared length.
pub fn decode(buf: &[u8]) -> Result<Decoded, ProtocolError> {
    if buf.len() < 4 {
        return Ok(Decoded::NeedMoreData);
    }
    let len = check_declared_len(u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]))?;
    if buf.len() < 4 + len {
        return Ok(Decoded::NeedMoreData);
    }
    let msg = decode_payload(buf[4], &buf[5..4 + len])?;
    Ok(Decoded::Message(msg, 4 + len))
}

/// Decodes every complete frame in `buf`, returning the messages and the
/// number of bytes consumed.
pub fn decode_all(buf: &[u8]) -> Result<(Vec<WireMessage>, usize), ProtocolError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Decoded::Message(m, used) = decode(&buf[pos..])? {
        out.push(m);
        pos += used;
    }
    Ok((out, pos))
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("connection closed mid-frame")]
    Truncated,
}

/// Reads one frame from a stream. `Ok(None)` on a clean end of stream
/// between frames.
pub fn read_message(r: &mut impl Read) -> Result<Option<WireMessage>, FrameError> {
    let mut header = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(FrameError::Truncated),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = check_declared_len(u32::from_be_bytes(header))?;
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e),
    })?;
    Ok(Some(decode_payload(body[0], &body[1..])?))
}

pub fn write_message(w: &mut impl Write, msg: &WireMessage) -> Result<(), FrameError> {
    w.write_all(&encode(msg)?)?;
    Ok(())
}

/// A frame fixture: a named message and its exact encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenFrame {
    pub name: String,
    pub hex: String,
    pub message: WireMessage,
}

/// A byte string that must not decode to a message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenRejection {
    pub name: String,
    pub hex: String,
    /// `NeedMoreData` or a [`ProtocolError::kind`] name.
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenVectors {
    pub proto_version: u8,
    pub frames: Vec<GoldenFrame>,
    pub rejections: Vec<GoldenRejection>,
}

/// Conformance vectors for independent implementations of the codec.
pub fn golden_vectors() -> GoldenVectors {
    let pcm: Vec<u8> = [0i16, 1, -1, 16384, -32768, 32767]
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let messages = [
        ("ping", WireMessage::Ping),
        ("pong", WireMessage::Pong),
        ("hello_16k_mono_s16le", WireMessage::hello_default()),
        ("hello_8k", WireMessage::Hello { proto_version: 1, sample_rate: 8000, channels: 1, bits: 16, encoding: 0 }),
        ("hello_ack_accepted", WireMessage::HelloAck { accepted: true, proto_version: 1 }),
        ("hello_ack_rejected", WireMessage::HelloAck { accepted: false, proto_version: 1 }),
        ("utt_start_7", WireMessage::UttStart { utt_id: 7 }),
        ("audio_chunk", WireMessage::AudioChunk { utt_id: 7, seq: 0, pcm }),
        ("audio_chunk_empty", WireMessage::AudioChunk { utt_id: 7, seq: 1, pcm: Vec::new() }),
        ("utt_end_7", WireMessage::UttEnd { utt_id: 7 }),
        ("transcript_go", WireMessage::Transcript { utt_id: 1, text: "go".into(), confidence_bp: 9000 }),
        ("transcript_utf8", WireMessage::Transcript { utt_id: 0xDEAD_BEEF, text: "héllo wörld ✓".into(), confidence_bp: 0 }),
        ("error_1001", WireMessage::Error { code: codes::PROTOCOL_VIOLATION, msg: "protocol violation".into() }),
        ("error_empty_msg", WireMessage::Error { code: codes::BACKEND_FAILURE, msg: String::new() }),
    ];
    let frames = messages
        .into_iter()
        .map(|(name, message)| GoldenFrame {
            name: name.into(),
            hex: hex::encode(encode(&message).expect("fixture encodes")),
            message,
        })
        .collect();
    let rejections = [
        ("ping_header_only_3_bytes", "000000", "NeedMoreData"),
        ("utt_start_missing_payload_byte", "0000000510000000", "NeedMoreData"),
        ("unknown_type_0x77", "0000000177", "UnknownType"),
        ("zero_length", "00000000", "BadLength"),
        ("oversize_length", "00100002", "Oversize"),
        ("utt_start_short_payload", "0000000410000000", "BadLength"),
        ("ping_with_payload", "000000024000", "BadLength"),
        ("audio_chunk_odd_pcm", "0000000a1100000001000000000a", "BadLength"),
        ("transcript_invalid_utf8", "0000000c200000000100000001ff0000", "InvalidUtf8"),
        ("transcript_confidence_over_10000", "0000000b2000000001000000002711", "InvalidField"),
        ("hello_ack_bad_flag", "00000003020201", "InvalidField"),
    ];
    let rejections = rejections
        .into_iter()
        .map(|(name, hex, outcome)| GoldenRejection {
            name: name.into(),
            hex: hex.into(),
            outcome: outcome.into(),
        })
        .collect();
    GoldenVectors { proto_version: PROTO_VERSION, frames, rejections }
}
