//! Independent measurement oracles and call-recording doubles shared by the
//! integration tests. Nothing here uses the crate's own DSP code.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;

use loopsmith_core::audio::{AssetStore, AudioBuffer, IdMode};
use loopsmith_core::backends::{BackendError, Backends, Capability, MockBackend, MusicBackend};
use loopsmith_core::handler::{Engine, EngineConfig};
use loopsmith_core::llm::{LanguageModel, LlmError, ScriptedPlanner};
use loopsmith_core::tools::ToolRegistry;

pub const SR: u32 = 44_100;

pub fn sine(freq: f64, seconds: f64, amp: f64) -> Vec<f32> {
    let n = (seconds * SR as f64).round() as usize;
    (0..n)
        .map(|i| (amp * (2.0 * PI * freq * i as f64 / SR as f64).sin()) as f32)
        .collect()
}

pub fn db(ratio: f64) -> f64 {
    20.0 * ratio.log10()
}

/// Dominant frequency of the 4096-sample Hann-windowed frame centred in
/// `samples`, refined by parabolic interpolation of the log magnitudes
/// around the peak bin. Uses a direct DFT over bins up to `max_hz`.
pub fn dominant_frequency(samples: &[f32], sample_rate: u32, max_hz: f64) -> f64 {
    const N: usize = 4096;
    assert!(samples.len() >= N, "need at least {N} samples");
    let start = (samples.len() - N) / 2;
    let frame: Vec<f64> = (0..N)
        .map(|i| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / N as f64).cos();
            samples[start + i] as f64 * w
        })
        .collect();
    let bin_hz = sample_rate as f64 / N as f64;
    let last = ((max_hz / bin_hz) as usize + 2).min(N / 2);
    let mags: Vec<f64> = (0..=last)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            let step = 2.0 * PI * k as f64 / N as f64;
            for (i, x) in frame.iter().enumerate() {
                let a = step * i as f64;
                re += x * a.cos();
                im -= x * a.sin();
            }
            (re * re + im * im).sqrt().max(1e-300)
        })
        .collect();
    let k = (1..last)
        .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
        .expect("non-empty spectrum");
    let (l, c, r) = (mags[k - 1].ln(), mags[k].ln(), mags[k + 1].ln());
    let denom = l - 2.0 * c + r;
    let offset = if denom.abs() < 1e-12 { 0.0 } else { 0.5 * (l - r) / denom };
    (k as f64 + offset) * bin_hz
}

/// Amplitude of the `freq` component of `samples` (Goertzel).
pub fn tone_amplitude(samples: &[f32], sample_rate: u32, freq: f64) -> f64 {
    let w = 2.0 * PI * freq / sample_rate as f64;
    let coeff = 2.0 * w.cos();
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for &x in samples {
        let s0 = x as f64 + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    let power = s1 * s1 + s2 * s2 - coeff * s1 * s2;
    2.0 * power.max(0.0).sqrt() / samples.len() as f64
}

pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / samples.len() as f64).sqrt()
}

/// One observed call across the model and the backends, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum Call {
    Llm { prompt: String, output: String },
    Generate { desc: String },
    Continue { desc: String, variant: u32 },
    Similarity { score: f64 },
    Other(Capability),
}

pub type CallLog = Arc<Mutex<Vec<Call>>>;

pub struct RecordingLlm {
    pub inner: Arc<dyn LanguageModel>,
    pub log: CallLog,
}

impl LanguageModel for RecordingLlm {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let out = self.inner.complete(prompt)?;
        self.log.lock().push(Call::Llm {
            prompt: prompt.to_owned(),
            output: out.clone(),
        });
        Ok(out)
    }
}

pub struct RecordingBackend {
    pub inner: Arc<dyn MusicBackend>,
    pub log: CallLog,
}

impl MusicBackend for RecordingBackend {
    fn name(&self) -> &str {
        "recording"
    }

    fn capabilities(&self) -> &[Capability] {
        self.inner.capabilities()
    }

    fn generate(&self, desc: &str, duration_s: f64) -> Result<AudioBuffer, BackendError> {
        self.log.lock().push(Call::Generate { desc: desc.to_owned() });
        self.inner.generate(desc, duration_s)
    }

    fn continue_audio(
        &self,
        prefix: &AudioBuffer,
        desc: &str,
        total_s: f64,
        variant: u32,
    ) -> Result<AudioBuffer, BackendError> {
        self.log.lock().push(Call::Continue {
            desc: desc.to_owned(),
            variant,
        });
        self.inner.continue_audio(prefix, desc, total_s, variant)
    }

    fn inpaint_region(&self, buf: &AudioBuffer, s: f64, e: f64, desc: &str) -> Result<AudioBuffer, BackendError> {
        self.log.lock().push(Call::Other(Capability::Inpaint));
        self.inner.inpaint_region(buf, s, e, desc)
    }

    fn separate(&self, buf: &AudioBuffer) -> Result<BTreeMap<String, AudioBuffer>, BackendError> {
        self.log.lock().push(Call::Other(Capability::Separate));
        self.inner.separate(buf)
    }

    fn caption_audio(&self, buf: &AudioBuffer) -> Result<String, BackendError> {
        self.log.lock().push(Call::Other(Capability::Caption));
        self.inner.caption_audio(buf)
    }

    fn similarity(&self, buf: &AudioBuffer, desc: &str) -> Result<f64, BackendError> {
        let score = self.inner.similarity(buf, desc)?;
        self.log.lock().push(Call::Similarity { score });
        Ok(score)
    }

    fn rearrange(&self, source: &AudioBuffer, style: &str) -> Result<AudioBuffer, BackendError> {
        self.log.lock().push(Call::Other(Capability::Rearrange));
        self.inner.rearrange(source, style)
    }

    fn vary(&self, source: &AudioBuffer, conditioning: &str) -> Result<AudioBuffer, BackendError> {
        self.log.lock().push(Call::Other(Capability::Vary));
        self.inner.vary(source, conditioning)
    }
}

/// Planner + mock backends, both recorded into one log.
pub fn recorded_engine(root: &Path, seed: u64, similarity: Option<Arc<dyn MusicBackend>>) -> (Engine, CallLog) {
    recorded_engine_with(root, seed, similarity, EngineConfig::default())
}

pub fn recorded_engine_with(
    root: &Path,
    seed: u64,
    similarity: Option<Arc<dyn MusicBackend>>,
    config: EngineConfig,
) -> (Engine, CallLog) {
    let log: CallLog = Arc::default();
    let llm = Arc::new(RecordingLlm {
        inner: Arc::new(ScriptedPlanner::builtin(&ToolRegistry::builtin())),
        log: log.clone(),
    });
    let mock: Arc<dyn MusicBackend> = Arc::new(RecordingBackend {
        inner: Arc::new(MockBackend::new(seed)),
        log: log.clone(),
    });
    let mut backends = Backends::uniform(mock);
    if let Some(scorer) = similarity {
        backends = backends.with(
            Capability::Similarity,
            Arc::new(RecordingBackend {
                inner: scorer,
                log: log.clone(),
            }),
        );
    }
    let store = Arc::new(AssetStore::open(root, IdMode::Seeded(seed)).expect("store opens"));
    let engine = Engine::new(llm, backends, store, config).expect("valid engine");
    (engine, log)
}
