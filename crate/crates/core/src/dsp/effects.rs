use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::biquad::{Biquad, FilterKind};
use super::{check_range, clamp_unit, non_empty, DspError};
use crate::audio::AudioBuffer;

/// One effect with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum EffectParams {
    /// `room_size` and `wet` in [0, 1].
    Reverb { room_size: f64, wet: f64 },
    HighPass { cutoff_hz: f64 },
    LowPass { cutoff_hz: f64 },
    /// LFO rate in (0, 20] Hz, modulation depth in (0, 50] ms.
    Chorus { rate_hz: f64, depth_ms: f64 },
    /// [-60, 24] dB.
    Gain { db: f64 },
}

impl EffectParams {
    pub fn validate(&self, sample_rate: u32) -> Result<(), DspError> {
        let nyquist = sample_rate as f64 / 2.0;
        match *self {
            EffectParams::Reverb { room_size, wet } => {
                check_range("room_size", room_size, 0.0, 1.0)?;
                check_range("wet", wet, 0.0, 1.0)
            }
            EffectParams::HighPass { cutoff_hz } | EffectParams::LowPass { cutoff_hz } => {
                check_range("cutoff_hz", cutoff_hz, 10.0, nyquist * 0.95)
            }
            EffectParams::Chorus { rate_hz, depth_ms } => {
                check_range("rate_hz", rate_hz, 0.01, 20.0)?;
                check_range("depth_ms", depth_ms, 0.1, 50.0)
            }
            EffectParams::Gain { db } => check_range("gain_db", db, -60.0, 24.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EffectParams::Reverb { .. } => "reverb",
            EffectParams::HighPass { .. } => "high-pass filter",
            EffectParams::LowPass { .. } => "low-pass filter",
            EffectParams::Chorus { .. } => "chorus",
            EffectParams::Gain { .. } => "gain",
        }
    }
}

/// Applies one effect. Reverb appends its decay tail; every other effect
/// keeps the length.
pub fn apply_effect(buf: &AudioBuffer, params: &EffectParams) -> Result<AudioBuffer, DspError> {
    non_empty(buf)?;
    params.validate(buf.sample_rate())?;
    let sr = buf.sample_rate() as f64;
    let mut out = match *params {
        EffectParams::Gain { db } => {
            let g = 10f64.powf(db / 20.0) as f32;
            buf.scaled(g)
        }
        EffectParams::HighPass { cutoff_hz } => filter(buf, FilterKind::HighPass, cutoff_hz)?,
        EffectParams::LowPass { cutoff_hz } => filter(buf, FilterKind::LowPass, cutoff_hz)?,
        EffectParams::Chorus { rate_hz, depth_ms } => chorus(buf, rate_hz, depth_ms)?,
        EffectParams::Reverb { room_size, wet } => reverb(buf, room_size, wet, sr)?,
    }
    .into_channels();
    for ch in &mut out {
        clamp_unit(ch);
    }
    Ok(AudioBuffer::new(out, buf.sample_rate())?)
}

fn filter(buf: &AudioBuffer, kind: FilterKind, cutoff: f64) -> Result<AudioBuffer, DspError> {
    let sr = buf.sample_rate() as f64;
    Ok(buf.map_channels(|c| Biquad::butterworth(kind, cutoff, sr).process_block(c))?)
}

fn chorus(buf: &AudioBuffer, rate_hz: f64, depth_ms: f64) -> Result<AudioBuffer, DspError> {
    let sr = buf.sample_rate() as f64;
    let depth = depth_ms * 1e-3 * sr;
    // Centre delay sits clear of zero so the modulated tap never reads ahead.
    let centre = depth + 0.005 * sr;
    let mix = std::f32::consts::FRAC_1_SQRT_2;
    let channels = buf
        .channels()
        .iter()
        .enumerate()
        .map(|(ch_idx, c)| {
            let phase = ch_idx as f64 * PI / 2.0;
            (0..c.len())
                .map(|i| {
                    let lfo = (2.0 * PI * rate_hz * i as f64 / sr + phase).sin();
                    let t = i as f64 - (centre + depth * lfo);
                    let delayed = if t < 0.0 {
                        0.0
                    } else {
                        let j = t.floor() as usize;
                        let frac = (t - j as f64) as f32;
                        let a = c[j];
                        let b = c.get(j + 1).copied().unwrap_or(a);
                        a + (b - a) * frac
                    };
                    mix * (c[i] + delayed)
                })
                .collect()
        })
        .collect();
    Ok(AudioBuffer::new(channels, buf.sample_rate())?)
}

const COMB_TUNING: [usize; 8] = [1116, 1188, 1277, 1356, 1422, 1491, 1557, 1617];
const ALLPASS_TUNING: [usize; 4] = [556, 441, 341, 225];
const STEREO_SPREAD: usize = 23;
const DAMPING: f64 = 0.2;
/// With the per-room `sqrt(1 - feedback²)` factor, brings the wet path to
/// roughly unity RMS gain on broadband material.
const WET_NORMALIZE: f64 = 0.088;
const MAX_TAIL_SECONDS: f64 = 4.0;

struct Comb {
    buf: Vec<f64>,
    idx: usize,
    store: f64,
    feedback: f64,
}

impl Comb {
    fn process(&mut self, x: f64) -> f64 {
        let y = self.buf[self.idx];
        self.store = y * (1.0 - DAMPING) + self.store * DAMPING;
        self.buf[self.idx] = x + self.store * self.feedback;
        self.idx = (self.idx + 1) % self.buf.len();
        y
    }
}

struct Allpass {
    buf: Vec<f64>,
    idx: usize,
}

impl Allpass {
    fn process(&mut self, x: f64) -> f64 {
        let b = self.buf[self.idx];
        self.buf[self.idx] = x + b * 0.5;
        self.idx = (self.idx + 1) % self.buf.len();
        b - x
    }
}

fn reverb_feedback(room_size: f64) -> f64 {
    room_size * 0.28 + 0.7
}

/// Seconds for the comb feedback loop to decay by 60 dB.
fn tail_seconds(room_size: f64) -> f64 {
    let loop_seconds = COMB_TUNING.iter().sum::<usize>() as f64 / COMB_TUNING.len() as f64 / 44_100.0;
    let per_pass_db = -20.0 * reverb_feedback(room_size).log10();
    (60.0 / per_pass_db * loop_seconds).min(MAX_TAIL_SECONDS)
}

/// Schroeder-Moorer network: eight damped combs in parallel feeding four
/// allpasses in series, with an equal-power dry/wet blend.
fn reverb(buf: &AudioBuffer, room_size: f64, wet: f64, sr: f64) -> Result<AudioBuffer, DspError> {
    let scale = sr / 44_100.0;
    let tail = (tail_seconds(room_size) * sr) as usize;
    let out_len = buf.len() + tail;
    let feedback = reverb_feedback(room_size);
    let dry_gain = (wet * PI / 2.0).cos();
    // A comb with feedback g amplifies white noise by 1/sqrt(1 - g²).
    let wet_gain = (wet * PI / 2.0).sin() * WET_NORMALIZE * (1.0 - feedback * feedback).sqrt();

    let channels = buf
        .channels()
        .iter()
        .enumerate()
        .map(|(ch_idx, c)| {
            let spread = ch_idx * STEREO_SPREAD;
            let sized = |n: usize| (((n + spread) as f64 * scale) as usize).max(1);
            let mut combs: Vec<Comb> = COMB_TUNING
                .iter()
                .map(|&n| Comb {
                    buf: vec![0.0; sized(n)],
                    idx: 0,
                    store: 0.0,
                    feedback,
                })
                .collect();
            let mut allpasses: Vec<Allpass> = ALLPASS_TUNING
                .iter()
                .map(|&n| Allpass {
                    buf: vec![0.0; sized(n)],
                    idx: 0,
                })
                .collect();
            (0..out_len)
                .map(|i| {
                    let x = c.get(i).copied().unwrap_or(0.0) as f64;
                    let mut y: f64 = combs.iter_mut().map(|cb| cb.process(x)).sum();
                    for ap in allpasses.iter_mut() {
                        y = ap.process(y);
                    }
                    (dry_gain * x + wet_gain * y) as f32
                })
                .collect()
        })
        .collect();
    Ok(AudioBuffer::new(channels, buf.sample_rate())?)
}
