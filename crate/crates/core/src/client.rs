//! Blocking protocol client.

use std::io::BufReader;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use crate::protocol::{read_message, write_message, FrameError, WireMessage, DEFAULT_CHUNK_BYTES};

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server rejected the session: {0}")]
    Rejected(String),
    #[error("server closed the connection")]
    Closed,
    #[error("unexpected {0} from server")]
    Unexpected(&'static str),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

pub struct Client {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl Client {
    /// Opens a TCP connection without any handshake.
    pub fn connect_raw(addr: &str) -> Result<Self, ClientError> {
        let err = |source| ClientError::Connect { addr: addr.to_string(), source };
        let mut last = std::io::Error::new(std::io::ErrorKind::NotFound, "address resolved to nothing");
        for sa in addr.to_socket_addrs().map_err(err)? {
            match TcpStream::connect_timeout(&sa, CONNECT_TIMEOUT) {
                Ok(stream) => {
                    stream.set_nodelay(true).map_err(err)?;
                    let reader = BufReader::new(stream.try_clone().map_err(err)?);
                    return Ok(Self { writer: stream, reader });
                }
                Err(e) => last = e,
            }
        }
        Err(err(last))
    }

    /// Connects and completes the Hello/HelloAck exchange with default
    /// audio parameters.
    pub fn connect(addr: &str) -> Result<Self, ClientError> {
        let mut c = Self::connect_raw(addr)?;
        c.send(&WireMessage::hello_default())?;
        match c.recv()? {
            WireMessage::HelloAck { accepted: true, .. } => Ok(c),
            WireMessage::HelloAck { accepted: false, .. } => {
                let detail = match c.recv() {
                    Ok(WireMessage::Error { code, msg }) => format!("{code}: {msg}"),
                    _ => "HelloAck(accepted=0)".to_string(),
                };
                Err(ClientError::Rejected(detail))
            }
            WireMessage::Error { code, msg } => Err(ClientError::Rejected(format!("{code}: {msg}"))),
            other => Err(ClientError::Unexpected(other.name())),
        }
    }

    pub fn send(&mut self, msg: &WireMessage) -> Result<(), ClientError> {
        write_message(&mut self.writer, msg)?;
        Ok(())
    }

    /// Next message; a clean close is [`ClientError::Closed`].
    pub fn recv(&mut self) -> Result<WireMessage, ClientError> {
        read_message(&mut self.reader)?.ok_or(ClientError::Closed)
    }

    /// Splits into the write half and the buffered read half.
    pub fn into_split(self) -> (TcpStream, BufReader<TcpStream>) {
        (self.writer, self.reader)
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> std::io::Result<()> {
        self.writer.set_read_timeout(t)
    }

    /// Sends one utterance in `chunk_bytes` pieces and waits for its
    /// Transcript or Error, answering nothing else in between.
    pub fn transcribe(&mut self, utt_id: u32, pcm: &[u8], chunk_bytes: usize) -> Result<WireMessage, ClientError> {
        self.send_utterance(utt_id, pcm, chunk_bytes)?;
        loop {
            match self.recv()? {
                WireMessage::Pong => continue,
                reply @ (WireMessage::Transcript { .. } | WireMessage::Error { .. }) => return Ok(reply),
                other => return Err(ClientError::Unexpected(other.name())),
            }
        }
    }

    pub fn send_utterance(&mut self, utt_id: u32, pcm: &[u8], chunk_bytes: usize) -> Result<(), ClientError> {
        let chunk_bytes = if chunk_bytes == 0 { DEFAULT_CHUNK_BYTES } else { chunk_bytes & !1 }.max(2);
        self.send(&WireMessage::UttStart { utt_id })?;
        for (seq, chunk) in pcm.chunks(chunk_bytes).enumerate() {
            self.send(&WireMessage::AudioChunk { utt_id, seq: seq as u32, pcm: chunk.to_vec() })?;
        }
        self.send(&WireMessage::UttEnd { utt_id })
    }
}
