//! The generative-model boundary: one trait covering generation,
//! continuation, inpainting, separation, captioning and text-audio
//! similarity, with deterministic mocks and a remote client.

mod mock;
mod remote;
mod scripted;

pub use mock::{stem_bands, MockBackend};
pub use remote::{serve_backend, RemoteBackend};
pub use scripted::ScriptedSimilarity;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioBuffer, AudioError};
use crate::dsp::DspError;

/// Default loop length when a request does not name one.
pub const DEFAULT_DURATION_SECONDS: f64 = 8.0;

/// Longest audio any backend is asked to produce.
pub const MAX_DURATION_SECONDS: f64 = 600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Generate,
    Continue,
    Inpaint,
    Separate,
    Caption,
    Similarity,
    /// Regeneration conditioned on a source loop and a style text.
    Rearrange,
    /// Whole-loop variation of a source.
    Vary,
}

impl Capability {
    pub const ALL: [Capability; 8] = [
        Capability::Generate,
        Capability::Continue,
        Capability::Inpaint,
        Capability::Separate,
        Capability::Caption,
        Capability::Similarity,
        Capability::Rearrange,
        Capability::Vary,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Capability::Generate => "generate",
            Capability::Continue => "continue",
            Capability::Inpaint => "inpaint",
            Capability::Separate => "separate",
            Capability::Caption => "caption",
            Capability::Similarity => "similarity",
            Capability::Rearrange => "rearrange",
            Capability::Vary => "vary",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend {backend} does not support {capability}")]
    Unsupported {
        backend: String,
        capability: Capability,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("remote backend reported: {0}")]
    Remote(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// A model service reachable through this interface.
///
/// Every method defaults to [`BackendError::Unsupported`]; implementations
/// override exactly the operations listed by [`capabilities`](Self::capabilities).
pub trait MusicBackend: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> &[Capability];

    fn generate(&self, _desc: &str, _duration_s: f64) -> Result<AudioBuffer, BackendError> {
        Err(self.unsupported(Capability::Generate))
    }

    /// Extends `prefix` to `total_s` seconds guided by `desc`. `variant`
    /// selects a different sample for retries.
    fn continue_audio(
        &self,
        _prefix: &AudioBuffer,
        _desc: &str,
        _total_s: f64,
        _variant: u32,
    ) -> Result<AudioBuffer, BackendError> {
        Err(self.unsupported(Capability::Continue))
    }

    fn inpaint_region(
        &self,
        _buf: &AudioBuffer,
        _start_s: f64,
        _end_s: f64,
        _desc: &str,
    ) -> Result<AudioBuffer, BackendError> {
        Err(self.unsupported(Capability::Inpaint))
    }

    /// Returns all six stems keyed by name.
    fn separate(&self, _buf: &AudioBuffer) -> Result<BTreeMap<String, AudioBuffer>, BackendError> {
        Err(self.unsupported(Capability::Separate))
    }

    fn caption_audio(&self, _buf: &AudioBuffer) -> Result<String, BackendError> {
        Err(self.unsupported(Capability::Caption))
    }

    /// Text-audio agreement in [0, 1].
    fn similarity(&self, _buf: &AudioBuffer, _desc: &str) -> Result<f64, BackendError> {
        Err(self.unsupported(Capability::Similarity))
    }

    fn rearrange(&self, _source: &AudioBuffer, _style: &str) -> Result<AudioBuffer, BackendError> {
        Err(self.unsupported(Capability::Rearrange))
    }

    fn vary(&self, _source: &AudioBuffer, _conditioning: &str) -> Result<AudioBuffer, BackendError> {
        Err(self.unsupported(Capability::Vary))
    }

    fn unsupported(&self, capability: Capability) -> BackendError {
        BackendError::Unsupported {
            backend: self.name().to_owned(),
            capability,
        }
    }

    fn supports(&self, capability: Capability) -> bool {
        self.capabilities().contains(&capability)
    }
}

pub(crate) fn check_duration(seconds: f64) -> Result<(), BackendError> {
    if seconds.is_finite() && seconds > 0.0 && seconds <= MAX_DURATION_SECONDS {
        Ok(())
    } else {
        Err(BackendError::InvalidRequest(format!(
            "duration {seconds}s is outside (0, {MAX_DURATION_SECONDS}]"
        )))
    }
}

/// Checks `0 <= start < end <= duration` (with a one-sample slack on the end).
pub(crate) fn check_region(buf: &AudioBuffer, start_s: f64, end_s: f64) -> Result<(), BackendError> {
    let dur = buf.duration_seconds();
    let slack = 1.0 / buf.sample_rate() as f64;
    if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || start_s >= end_s || end_s > dur + slack {
        return Err(BackendError::InvalidRequest(format!(
            "region {start_s}s-{end_s}s is not within 0s-{dur:.2}s with start before end"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

/// How to reach one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// `host:port` of a remote backend.
    pub endpoint: Option<String>,
    pub timeout_seconds: f64,
    /// Seed of a mock backend.
    pub seed: Option<u64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            timeout_seconds: 120.0,
            seed: Some(0),
        }
    }
}

impl BackendConfig {
    pub fn mock(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..Self::default()
        }
    }

    pub fn remote(endpoint: impl Into<String>, timeout_seconds: f64) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            timeout_seconds,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::Mock if self.seed.is_none() => {
                Err(BackendError::Config("mock backend requires a seed".into()))
            }
            BackendKind::Remote if self.endpoint.as_deref().is_none_or(str::is_empty) => {
                Err(BackendError::Config("remote backend requires an endpoint".into()))
            }
            BackendKind::Remote if !(self.timeout_seconds.is_finite() && self.timeout_seconds > 0.0) => {
                Err(BackendError::Config(format!(
                    "timeout must be positive, got {}",
                    self.timeout_seconds
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn MusicBackend>, BackendError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Mock => Arc::new(MockBackend::new(self.seed.unwrap_or_default())),
            BackendKind::Remote => Arc::new(RemoteBackend::new(
                self.endpoint.clone().unwrap_or_default(),
                Duration::from_secs_f64(self.timeout_seconds),
                Capability::ALL.to_vec(),
            )),
        })
    }
}

/// Backend selection per capability: a default plus optional overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsConfig {
    pub default: BackendConfig,
    pub overrides: BTreeMap<Capability, BackendConfig>,
}

/// One backend instance per capability.
#[derive(Clone)]
pub struct Backends {
    slots: BTreeMap<Capability, Arc<dyn MusicBackend>>,
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for (cap, b) in &self.slots {
            m.entry(&cap.as_str(), &b.name());
        }
        m.finish()
    }
}

impl Backends {
    /// Routes every capability to `backend`.
    pub fn uniform(backend: Arc<dyn MusicBackend>) -> Self {
        Self {
            slots: Capability::ALL.iter().map(|&c| (c, backend.clone())).collect(),
        }
    }

    pub fn mock(seed: u64) -> Self {
        Self::uniform(Arc::new(MockBackend::new(seed)))
    }

    pub fn from_config(config: &BackendsConfig) -> Result<Self, BackendError> {
        let default = config.default.build()?;
        let mut backends = Self::uniform(default);
        for (&cap, cfg) in &config.overrides {
            backends = backends.with(cap, cfg.build()?);
        }
        Ok(backends)
    }

    /// Replaces the backend serving `capability`.
    pub fn with(mut self, capability: Capability, backend: Arc<dyn MusicBackend>) -> Self {
        self.slots.insert(capability, backend);
        self
    }

    /// Returns the backend for `capability`, failing fast when it does not
    /// advertise that capability.
    pub fn get(&self, capability: Capability) -> Result<&Arc<dyn MusicBackend>, BackendError> {
        let backend = &self.slots[&capability];
        if backend.supports(capability) {
            Ok(backend)
        } else {
            Err(backend.unsupported(capability))
        }
    }

    pub fn generate(&self, desc: &str, duration_s: f64) -> Result<AudioBuffer, BackendError> {
        self.get(Capability::Generate)?.generate(desc, duration_s)
    }

    pub fn continue_audio(
        &self,
        prefix: &AudioBuffer,
        desc: &str,
        total_s: f64,
        variant: u32,
    ) -> Result<AudioBuffer, BackendError> {
        self.get(Capability::Continue)?
            .continue_audio(prefix, desc, total_s, variant)
    }

    pub fn inpaint_region(
        &self,
        buf: &AudioBuffer,
        start_s: f64,
        end_s: f64,
        desc: &str,
    ) -> Result<AudioBuffer, BackendError> {
        self.get(Capability::Inpaint)?
            .inpaint_region(buf, start_s, end_s, desc)
    }

    pub fn separate(&self, buf: &AudioBuffer) -> Result<BTreeMap<String, AudioBuffer>, BackendError> {
        self.get(Capability::Separate)?.separate(buf)
    }

    pub fn caption_audio(&self, buf: &AudioBuffer) -> Result<String, BackendError> {
        self.get(Capability::Caption)?.caption_audio(buf)
    }

    pub fn similarity(&self, buf: &AudioBuffer, desc: &str) -> Result<f64, BackendError> {
        self.get(Capability::Similarity)?.similarity(buf, desc)
    }

    pub fn rearrange(&self, source: &AudioBuffer, style: &str) -> Result<AudioBuffer, BackendError> {
        self.get(Capability::Rearrange)?.rearrange(source, style)
    }

    pub fn vary(&self, source: &AudioBuffer, conditioning: &str) -> Result<AudioBuffer, BackendError> {
        self.get(Capability::Vary)?.vary(source, conditioning)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct CaptionOnly;

    impl MusicBackend for CaptionOnly {
        fn name(&self) -> &str {
            "caption-only"
        }
        fn capabilities(&self) -> &[Capability] {
            &[Capability::Caption]
        }
        fn caption_audio(&self, _buf: &AudioBuffer) -> Result<String, BackendError> {
            Ok("ok".into())
        }
    }

    #[test]
    fn unadvertised_capability_fails_fast() {
        let b = Backends::uniform(Arc::new(CaptionOnly));
        let buf = AudioBuffer::mono(vec![0.0; 10], 44_100).unwrap();
        assert_eq!(b.caption_audio(&buf).unwrap(), "ok");
        assert!(matches!(
            b.generate("x", 1.0),
            Err(BackendError::Unsupported { capability: Capability::Generate, .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig::mock(1).validate().is_ok());
        let no_seed = BackendConfig { seed: None, ..BackendConfig::default() };
        assert!(no_seed.validate().is_err());
        let no_endpoint = BackendConfig { kind: BackendKind::Remote, endpoint: None, ..BackendConfig::default() };
        assert!(no_endpoint.validate().is_err());
        assert!(BackendConfig::remote("127.0.0.1:9", 1.0).validate().is_ok());
    }
}
