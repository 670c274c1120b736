//! Tempo and pitch changes.
//!
//! Time stretching is waveform-similarity overlap-add (WSOLA): Hann-windowed
//! frames are laid out at a fixed synthesis hop and each frame's read
//! position is nudged within a tolerance so it lines up with the natural
//! continuation of the previous frame. Pitch shifting resamples and then
//! stretches back to the original length.

use std::f64::consts::PI;

use super::{check_range, clamp_unit, non_empty, DspError};
use crate::audio::AudioBuffer;
use crate::gat::{MAX_SPEED, MAX_TRANSPOSE, MIN_SPEED};

/// Correlation is evaluated on every `DECIMATE`-th sample during the coarse search.
const DECIMATE: usize = 4;

fn frame_len(sample_rate: u32) -> usize {
    // ~46 ms at 44.1 kHz
    let target = (sample_rate as f64 * 0.046) as usize;
    target.next_power_of_two().clamp(256, 8192)
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn correlation(a: &[f32], a_at: usize, b: &[f32], b_at: usize, len: usize, step: usize) -> f64 {
    let mut acc = 0.0f64;
    let mut i = 0;
    while i < len {
        acc += a[a_at + i] as f64 * b[b_at + i] as f64;
        i += step;
    }
    acc
}

/// WSOLA core: reads `input` at `speed` times real time, producing exactly
/// `out_len` frames.
fn wsola(buf: &AudioBuffer, speed: f64, out_len: usize) -> Result<AudioBuffer, DspError> {
    let n = frame_len(buf.sample_rate());
    let hop = n / 4;
    let centre = n / 2;
    let tolerance = hop as i64;
    let window = hann(n);

    // Generous zero padding keeps every candidate read in bounds.
    let pad = 6 * n;
    let padded: Vec<Vec<f32>> = buf
        .channels()
        .iter()
        .map(|c| {
            let mut v = vec![0.0f32; pad];
            v.extend_from_slice(c);
            v.resize(v.len() + pad, 0.0);
            v
        })
        .collect();
    let guide: Vec<f32> = {
        let k = padded.len() as f32;
        (0..padded[0].len())
            .map(|i| padded.iter().map(|c| c[i]).sum::<f32>() / k)
            .collect()
    };
    let last_start = (buf.len() as i64 - n as i64).max(-(centre as i64));
    let at = |p: i64| (p + pad as i64) as usize;

    // Accumulator index j holds output sample j - centre.
    let total = out_len + centre + n;
    let mut acc = vec![vec![0.0f64; total]; padded.len()];
    let mut wsum = vec![0.0f64; total];

    let mut prev: Option<i64> = None;
    let mut k = 0usize;
    while k * hop < out_len + centre {
        let nominal = (((k * hop) as f64 * speed).round() as i64 - centre as i64)
            .clamp(-(centre as i64), last_start);
        let pos = match prev {
            None => nominal,
            Some(p) => {
                let target = at(p + hop as i64);
                let lo = nominal - tolerance;
                let hi = nominal + tolerance;
                let score = |c: i64, step: usize| correlation(&guide, at(c), &guide, target, n, step);
                let mut best = nominal;
                let mut best_score = f64::NEG_INFINITY;
                let mut c = lo;
                while c <= hi {
                    let s = score(c, DECIMATE);
                    if s > best_score {
                        best_score = s;
                        best = c;
                    }
                    c += DECIMATE as i64;
                }
                let coarse = best;
                best_score = f64::NEG_INFINITY;
                for c in (coarse - DECIMATE as i64).max(lo)..=(coarse + DECIMATE as i64).min(hi) {
                    let s = score(c, 1);
                    if s > best_score {
                        best_score = s;
                        best = c;
                    }
                }
                best
            }
        };
        let read = at(pos);
        let write = k * hop;
        for (ch, src) in acc.iter_mut().zip(&padded) {
            for i in 0..n {
                ch[write + i] += window[i] * src[read + i] as f64;
            }
        }
        for i in 0..n {
            wsum[write + i] += window[i];
        }
        prev = Some(pos);
        k += 1;
    }

    let channels = acc
        .iter()
        .map(|ch| {
            let mut out: Vec<f32> = (centre..centre + out_len)
                .map(|j| {
                    if wsum[j] > 1e-9 {
                        (ch[j] / wsum[j]) as f32
                    } else {
                        0.0
                    }
                })
                .collect();
            clamp_unit(&mut out);
            out
        })
        .collect();
    Ok(AudioBuffer::new(channels, buf.sample_rate())?)
}

/// Changes playback speed without changing pitch. `speed` 2.0 halves the
/// duration.
pub fn time_stretch_buffer(buf: &AudioBuffer, speed: f64) -> Result<AudioBuffer, DspError> {
    check_range("speed", speed, MIN_SPEED, MAX_SPEED)?;
    non_empty(buf)?;
    if speed == 1.0 {
        return Ok(buf.clone());
    }
    let out_len = (buf.len() as f64 / speed).round().max(1.0) as usize;
    wsola(buf, speed, out_len)
}

/// Linear-interpolation resampling that reads the input `ratio` times
/// faster (pitch and tempo both scale by `ratio`).
pub fn resample_linear(buf: &AudioBuffer, ratio: f64) -> Result<AudioBuffer, DspError> {
    non_empty(buf)?;
    let len = buf.len();
    let out_len = (((len - 1) as f64 / ratio).floor() as usize) + 1;
    let channels = buf
        .channels()
        .iter()
        .map(|c| {
            (0..out_len)
                .map(|i| {
                    let t = i as f64 * ratio;
                    let j = t.floor() as usize;
                    let frac = (t - j as f64) as f32;
                    let a = c[j.min(len - 1)];
                    let b = c[(j + 1).min(len - 1)];
                    a + (b - a) * frac
                })
                .collect()
        })
        .collect();
    Ok(AudioBuffer::new(channels, buf.sample_rate())?)
}

/// Shifts pitch by `semitones`, keeping the length.
pub fn pitch_shift_buffer(buf: &AudioBuffer, semitones: i32) -> Result<AudioBuffer, DspError> {
    check_range(
        "semitones",
        semitones as f64,
        -MAX_TRANSPOSE as f64,
        MAX_TRANSPOSE as f64,
    )?;
    non_empty(buf)?;
    if semitones == 0 {
        return Ok(buf.clone());
    }
    let ratio = 2f64.powf(semitones as f64 / 12.0);
    let resampled = resample_linear(buf, ratio)?;
    let speed = resampled.len() as f64 / buf.len() as f64;
    wsola(&resampled, speed, buf.len())
}
