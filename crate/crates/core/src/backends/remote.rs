//! Byte-stream wire protocol to remote model servers.
//!
//! Every message, in either direction, is one frame:
//!
//! ```text
//! u32 BE header length | JSON header | u64 BE payload length | payload
//! ```
//!
//! Request headers carry `op`, `text` and numeric `params`; the payload is a
//! WAV file or empty. Response headers carry `status` (`"ok"` or `"error"`)
//! plus `error`, `text`, `score` or `stems` as the operation requires. A
//! separation response concatenates one WAV per stem in the payload, with
//! names and byte lengths listed in `stems`.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{BackendError, Capability, MusicBackend};
use crate::audio::{decode_wav, encode_wav, AudioBuffer, BitDepth};

const MAX_HEADER_BYTES: u32 = 1 << 20;
const MAX_PAYLOAD_BYTES: u64 = 1 << 30;
const MAX_IDLE_CONNECTIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RequestHeader {
    op: Capability,
    #[serde(default)]
    text: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StemEntry {
    name: String,
    bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ResponseHeader {
    status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    stems: Vec<StemEntry>,
}

fn write_frame(w: &mut impl Write, header: &impl Serialize, payload: &[u8]) -> io::Result<()> {
    let header = serde_json::to_vec(header).map_err(io::Error::other)?;
    let mut buf = Vec::with_capacity(12 + header.len() + payload.len());
    buf.extend_from_slice(&(header.len() as u32).to_be_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(payload.len() as u64).to_be_bytes());
    buf.extend_from_slice(payload);
    w.write_all(&buf)?;
    w.flush()
}

fn read_frame<H: for<'de> Deserialize<'de>>(r: &mut impl Read) -> io::Result<(H, Vec<u8>)> {
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4)?;
    let header_len = u32::from_be_bytes(len4);
    if header_len > MAX_HEADER_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "header too large"));
    }
    let mut header = vec![0u8; header_len as usize];
    r.read_exact(&mut header)?;
    let header: H = serde_json::from_slice(&header)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("bad header: {e}")))?;
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let payload_len = u64::from_be_bytes(len8);
    if payload_len > MAX_PAYLOAD_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "payload too large"));
    }
    let mut payload = vec![0u8; payload_len as usize];
    r.read_exact(&mut payload)?;
    Ok((header, payload))
}

/// Client for a backend server speaking the frame protocol.
///
/// Idle connections are pooled and reused; each call is one request/response
/// round trip bounded by the configured timeout.
pub struct RemoteBackend {
    endpoint: String,
    timeout: Duration,
    capabilities: Vec<Capability>,
    pool: Mutex<Vec<TcpStream>>,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("timeout", &self.timeout)
            .field("capabilities", &self.capabilities)
            .finish()
    }
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, capabilities: Vec<Capability>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
            capabilities,
            pool: Mutex::new(Vec::new()),
        }
    }

    fn io_error(&self, e: io::Error) -> BackendError {
        match e.kind() {
            io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => BackendError::Timeout(self.timeout),
            _ => BackendError::Transport(format!("{}: {e}", self.endpoint)),
        }
    }

    fn connect(&self) -> Result<TcpStream, BackendError> {
        let addrs = self
            .endpoint
            .to_socket_addrs()
            .map_err(|e| BackendError::Transport(format!("cannot resolve {}: {e}", self.endpoint)))?;
        let mut last = None;
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, self.timeout) {
                Ok(s) => {
                    s.set_read_timeout(Some(self.timeout)).map_err(|e| self.io_error(e))?;
                    s.set_write_timeout(Some(self.timeout)).map_err(|e| self.io_error(e))?;
                    s.set_nodelay(true).ok();
                    return Ok(s);
                }
                Err(e) => last = Some(e),
            }
        }
        Err(match last {
            Some(e) => self.io_error(e),
            None => BackendError::Transport(format!("no address for {}", self.endpoint)),
        })
    }

    fn round_trip(&self, stream: &mut TcpStream, req: &RequestHeader, payload: &[u8]) -> io::Result<(ResponseHeader, Vec<u8>)> {
        write_frame(stream, req, payload)?;
        read_frame(stream)
    }

    fn call(
        &self,
        op: Capability,
        text: &str,
        params: &[(&str, f64)],
        audio: Option<&AudioBuffer>,
    ) -> Result<(ResponseHeader, Vec<u8>), BackendError> {
        // Capability gate before any network activity.
        if !self.supports(op) {
            return Err(self.unsupported(op));
        }
        let req = RequestHeader {
            op,
            text: text.to_owned(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        let payload = match audio {
            Some(buf) => encode_wav(buf, BitDepth::Float32)?,
            None => Vec::new(),
        };

        // A pooled connection may have been closed by the server; retry once
        // on a fresh one in that case.
        let pooled = self.pool.lock().pop();
        let (stream, result) = match pooled {
            Some(mut s) => match self.round_trip(&mut s, &req, &payload) {
                Ok(r) => (s, Ok(r)),
                Err(e) if e.kind() == io::ErrorKind::TimedOut || e.kind() == io::ErrorKind::WouldBlock => {
                    return Err(self.io_error(e))
                }
                Err(_) => {
                    let mut fresh = self.connect()?;
                    let r = self.round_trip(&mut fresh, &req, &payload);
                    (fresh, r)
                }
            },
            None => {
                let mut fresh = self.connect()?;
                let r = self.round_trip(&mut fresh, &req, &payload);
                (fresh, r)
            }
        };
        let (header, body) = match result {
            Ok(r) => r,
            Err(e) => {
                stream.shutdown(Shutdown::Both).ok();
                return Err(self.io_error(e));
            }
        };
        {
            let mut pool = self.pool.lock();
            if pool.len() < MAX_IDLE_CONNECTIONS {
                pool.push(stream);
            }
        }
        if header.status != "ok" {
            return Err(BackendError::Remote(
                header.error.unwrap_or_else(|| format!("status {:?}", header.status)),
            ));
        }
        Ok((header, body))
    }

    fn audio_call(
        &self,
        op: Capability,
        text: &str,
        params: &[(&str, f64)],
        audio: Option<&AudioBuffer>,
    ) -> Result<AudioBuffer, BackendError> {
        let (_, body) = self.call(op, text, params, audio)?;
        Ok(decode_wav(&body)?)
    }
}

impl MusicBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.endpoint
    }

    fn capabilities(&self) -> &[Capability] {
        &self.capabilities
    }

    fn generate(&self, desc: &str, duration_s: f64) -> Result<AudioBuffer, BackendError> {
        self.audio_call(Capability::Generate, desc, &[("duration_s", duration_s)], None)
    }

    fn continue_audio(
        &self,
        prefix: &AudioBuffer,
        desc: &str,
        total_s: f64,
        variant: u32,
    ) -> Result<AudioBuffer, BackendError> {
        if total_s < prefix.duration_seconds() {
            return Err(BackendError::InvalidRequest(format!(
                "total {total_s}s is shorter than the prefix"
            )));
        }
        self.audio_call(
            Capability::Continue,
            desc,
            &[("total_s", total_s), ("variant", variant as f64)],
            Some(prefix),
        )
    }

    fn inpaint_region(
        &self,
        buf: &AudioBuffer,
        start_s: f64,
        end_s: f64,
        desc: &str,
    ) -> Result<AudioBuffer, BackendError> {
        super::check_region(buf, start_s, end_s)?;
        self.audio_call(
            Capability::Inpaint,
            desc,
            &[("start_s", start_s), ("end_s", end_s)],
            Some(buf),
        )
    }

    fn separate(&self, buf: &AudioBuffer) -> Result<BTreeMap<String, AudioBuffer>, BackendError> {
        let (header, body) = self.call(Capability::Separate, "", &[], Some(buf))?;
        let mut stems = BTreeMap::new();
        let mut at = 0usize;
        for entry in header.stems {
            let end = at
                .checked_add(entry.bytes as usize)
                .filter(|&e| e <= body.len())
                .ok_or_else(|| BackendError::Remote(format!("stem {} overruns payload", entry.name)))?;
            stems.insert(entry.name, decode_wav(&body[at..end])?);
            at = end;
        }
        Ok(stems)
    }

    fn caption_audio(&self, buf: &AudioBuffer) -> Result<String, BackendError> {
        let (header, _) = self.call(Capability::Caption, "", &[], Some(buf))?;
        header
            .text
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| BackendError::Remote("caption response without text".into()))
    }

    fn similarity(&self, buf: &AudioBuffer, desc: &str) -> Result<f64, BackendError> {
        let (header, _) = self.call(Capability::Similarity, desc, &[], Some(buf))?;
        match header.score {
            Some(s) if s.is_finite() => Ok(s.clamp(0.0, 1.0)),
            _ => Err(BackendError::Remote("similarity response without score".into())),
        }
    }

    fn rearrange(&self, source: &AudioBuffer, style: &str) -> Result<AudioBuffer, BackendError> {
        self.audio_call(Capability::Rearrange, style, &[], Some(source))
    }

    fn vary(&self, source: &AudioBuffer, conditioning: &str) -> Result<AudioBuffer, BackendError> {
        self.audio_call(Capability::Vary, conditioning, &[], Some(source))
    }
}

fn param(req: &RequestHeader, name: &str) -> Result<f64, BackendError> {
    req.params
        .get(name)
        .copied()
        .ok_or_else(|| BackendError::InvalidRequest(format!("missing parameter {name}")))
}

fn handle(backend: &dyn MusicBackend, req: &RequestHeader, payload: &[u8]) -> Result<(ResponseHeader, Vec<u8>), BackendError> {
    let audio = || -> Result<AudioBuffer, BackendError> { Ok(decode_wav(payload)?) };
    let ok = ResponseHeader {
        status: "ok".into(),
        ..Default::default()
    };
    let wav = |b: AudioBuffer| -> Result<(ResponseHeader, Vec<u8>), BackendError> {
        Ok((ok.clone(), encode_wav(&b, BitDepth::Float32)?))
    };
    match req.op {
        Capability::Generate => wav(backend.generate(&req.text, param(req, "duration_s")?)?),
        Capability::Continue => wav(backend.continue_audio(
            &audio()?,
            &req.text,
            param(req, "total_s")?,
            req.params.get("variant").copied().unwrap_or(0.0) as u32,
        )?),
        Capability::Inpaint => wav(backend.inpaint_region(
            &audio()?,
            param(req, "start_s")?,
            param(req, "end_s")?,
            &req.text,
        )?),
        Capability::Separate => {
            let mut header = ok.clone();
            let mut body = Vec::new();
            for (name, stem) in backend.separate(&audio()?)? {
                let bytes = encode_wav(&stem, BitDepth::Float32)?;
                header.stems.push(StemEntry {
                    name,
                    bytes: bytes.len() as u64,
                });
                body.extend(bytes);
            }
            Ok((header, body))
        }
        Capability::Caption => Ok((
            ResponseHeader {
                text: Some(backend.caption_audio(&audio()?)?),
                ..ok.clone()
            },
            Vec::new(),
        )),
        Capability::Similarity => Ok((
            ResponseHeader {
                score: Some(backend.similarity(&audio()?, &req.text)?),
                ..ok.clone()
            },
            Vec::new(),
        )),
        Capability::Rearrange => wav(backend.rearrange(&audio()?, &req.text)?),
        Capability::Vary => wav(backend.vary(&audio()?, &req.text)?),
    }
}

fn serve_connection(mut stream: TcpStream, backend: Arc<dyn MusicBackend>) {
    loop {
        let (req, payload) = match read_frame::<RequestHeader>(&mut stream) {
            Ok(frame) => frame,
            Err(e) => {
                if e.kind() != io::ErrorKind::UnexpectedEof {
                    tracing::debug!("backend connection closed: {e}");
                }
                return;
            }
        };
        let (header, body) = handle(backend.as_ref(), &req, &payload).unwrap_or_else(|e| {
            (
                ResponseHeader {
                    status: "error".into(),
                    error: Some(e.to_string()),
                    ..Default::default()
                },
                Vec::new(),
            )
        });
        if write_frame(&mut stream, &header, &body).is_err() {
            return;
        }
    }
}

/// Serves `backend` over the frame protocol, one thread per connection.
///
/// This is the adapter a model server wraps around its own inference code;
/// it also lets tests exercise [`RemoteBackend`] end to end. Blocks for the
/// lifetime of `listener`.
pub fn serve_backend(listener: TcpListener, backend: Arc<dyn MusicBackend>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let backend = backend.clone();
        thread::spawn(move || serve_connection(stream, backend));
    }
    Ok(())
}
