//! Spectral and length contracts of the signal-processing primitives,
//! measured with the shared oracle helpers.

mod common;

use common::{db, dominant_frequency, rms, sine, tone_amplitude, SR};
use loopsmith_core::audio::AudioBuffer;
use loopsmith_core::dsp::{apply_effect, band_split, pitch_shift_buffer, time_stretch_buffer, DspError, EffectParams};

fn tone(freq: f64, seconds: f64) -> AudioBuffer {
    AudioBuffer::mono(sine(freq, seconds, 0.5), SR).unwrap()
}

fn cents(a: f64, b: f64) -> f64 {
    1200.0 * (a / b).log2()
}

#[test]
fn zero_shift_and_unit_speed_are_exact_copies() {
    let b = AudioBuffer::stereo_from_mono(sine(440.0, 1.0, 0.5), SR).unwrap();
    assert_eq!(pitch_shift_buffer(&b, 0).unwrap(), b);
    assert_eq!(time_stretch_buffer(&b, 1.0).unwrap(), b);
}

#[test]
fn octave_shifts_move_the_peak() {
    let up = pitch_shift_buffer(&tone(440.0, 1.0), 12).unwrap();
    let peak = dominant_frequency(up.channel(0), SR, 4_000.0);
    assert!((peak - 880.0).abs() <= 8.8, "up {peak}");

    let down = pitch_shift_buffer(&tone(880.0, 1.0), -12).unwrap();
    let peak = dominant_frequency(down.channel(0), SR, 4_000.0);
    assert!((peak - 440.0).abs() <= 4.4, "down {peak}");
    assert!((down.len() as f64 - 44_100.0).abs() <= 441.0, "length {}", down.len());
}

#[test]
fn pitch_shift_range_is_bounded() {
    assert!(matches!(pitch_shift_buffer(&tone(440.0, 0.2), 25), Err(DspError::OutOfRange { .. })));
}

#[test]
fn stretch_lengths() {
    let four = tone(440.0, 4.0);
    let half = time_stretch_buffer(&four, 2.0).unwrap();
    assert!((half.duration_seconds() - 2.0).abs() <= 0.04, "{}", half.duration_seconds());
    let six = tone(440.0, 6.0);
    let fast = time_stretch_buffer(&six, 1.5).unwrap();
    assert!((fast.duration_seconds() - 4.0).abs() <= 0.08);
    assert!(time_stretch_buffer(&six, 0.2).is_err());
    assert!(time_stretch_buffer(&six, 4.5).is_err());
}

#[test]
fn slow_stretch_keeps_pitch() {
    let slow = time_stretch_buffer(&tone(440.0, 2.0), 0.5).unwrap();
    assert!((slow.duration_seconds() - 4.0).abs() <= 0.08);
    let peak = dominant_frequency(slow.channel(0), SR, 2_000.0);
    assert!(cents(peak, 440.0).abs() <= 50.0, "{peak}");
}

#[test]
fn unity_gain_leaves_level_alone() {
    let b = tone(440.0, 0.5);
    let out = apply_effect(&b, &EffectParams::Gain { db: 0.0 }).unwrap();
    assert!(db(out.rms() / b.rms()).abs() <= 0.1);
    let quiet = apply_effect(&b, &EffectParams::Gain { db: -6.0 }).unwrap();
    assert!((db(quiet.rms() / b.rms()) + 6.0).abs() <= 0.5);
}

#[test]
fn high_pass_separates_two_tones() {
    let mixed: Vec<f32> = sine(100.0, 1.0, 0.4)
        .iter()
        .zip(sine(4_000.0, 1.0, 0.4))
        .map(|(a, b)| a + b)
        .collect();
    let buf = AudioBuffer::mono(mixed, SR).unwrap();
    let out = apply_effect(&buf, &EffectParams::HighPass { cutoff_hz: 1_000.0 }).unwrap();
    // Skip the filter's start-up transient.
    let settled = &out.channel(0)[4_410..];
    let low = tone_amplitude(settled, SR, 100.0);
    let high = tone_amplitude(settled, SR, 4_000.0);
    assert!(db(high / low) >= 20.0, "{} dB", db(high / low));
}

#[test]
fn filters_fall_at_least_twelve_db_per_octave() {
    for (params, pass, stop) in [
        (EffectParams::HighPass { cutoff_hz: 1_000.0 }, 4_000.0, 250.0),
        (EffectParams::LowPass { cutoff_hz: 1_000.0 }, 250.0, 4_000.0),
    ] {
        let measure = |f: f64| {
            let out = apply_effect(&tone(f, 1.0), &params).unwrap();
            tone_amplitude(&out.channel(0)[4_410..], SR, f)
        };
        // Two octaves past the cutoff: ≥ 24 dB below the passband.
        let drop = db(measure(pass) / measure(stop));
        assert!(drop >= 24.0, "{} {drop} dB", params.name());
    }
}

#[test]
fn reverb_leaves_a_tail_after_an_impulse() {
    let buf = AudioBuffer::mono(vec![1.0], SR).unwrap();
    for room in [0.5, 0.75, 1.0] {
        let out = apply_effect(&buf, &EffectParams::Reverb { room_size: room, wet: 0.33 }).unwrap();
        assert!(out.len() > buf.len(), "room {room}: no tail appended");
        let n = buf.len();
        let window = &out.channel(0)[n..(n + SR as usize / 5).min(out.len())];
        let level = db(rms(window));
        assert!(level > -60.0, "room {room}: tail at {level} dBFS");
    }
}

#[test]
fn chorus_keeps_duration() {
    let b = tone(440.0, 2.0);
    let out = apply_effect(&b, &EffectParams::Chorus { rate_hz: 1.5, depth_ms: 7.0 }).unwrap();
    assert!((out.len() as f64 - b.len() as f64).abs() <= b.len() as f64 * 0.01);
    assert_ne!(out, b);
}

#[test]
fn effect_parameters_are_range_checked() {
    let b = tone(440.0, 0.1);
    for bad in [
        EffectParams::Reverb { room_size: 1.5, wet: 0.3 },
        EffectParams::Reverb { room_size: 0.5, wet: -0.1 },
        EffectParams::HighPass { cutoff_hz: 30_000.0 },
        EffectParams::LowPass { cutoff_hz: 1.0 },
        EffectParams::Chorus { rate_hz: 0.0, depth_ms: 7.0 },
        EffectParams::Gain { db: 60.0 },
    ] {
        assert!(apply_effect(&b, &bad).is_err(), "{bad:?}");
    }
    let empty = AudioBuffer::mono(Vec::new(), SR).unwrap();
    assert!(apply_effect(&empty, &EffectParams::Gain { db: 0.0 }).is_err());
}

#[test]
fn single_band_is_identity() {
    let b = AudioBuffer::stereo_from_mono(sine(440.0, 0.5, 0.5), SR).unwrap();
    let parts = band_split(&b, &[(0.0, SR as f64 / 2.0)]).unwrap();
    assert_eq!(parts.len(), 1);
    let residual: Vec<f32> = parts[0].channel(0).iter().zip(b.channel(0)).map(|(a, b)| a - b).collect();
    assert!(db(rms(&residual) / b.rms()) <= -60.0);
}

#[test]
fn low_tone_lands_in_the_low_band() {
    let b = tone(100.0, 1.0);
    let parts = band_split(&b, &[(0.0, 1_000.0), (1_000.0, SR as f64 / 2.0)]).unwrap();
    let low = parts[0].rms().powi(2);
    let high = parts[1].rms().powi(2);
    assert!(low / (low + high) >= 0.95);
}

#[test]
fn three_bands_sum_back_to_the_input() {
    let mixed: Vec<f32> = sine(110.0, 1.0, 0.3)
        .iter()
        .zip(sine(1_500.0, 1.0, 0.3))
        .zip(sine(7_000.0, 1.0, 0.3))
        .map(|((a, b), c)| a + b + c)
        .collect();
    let b = AudioBuffer::mono(mixed, SR).unwrap();
    let parts = band_split(&b, &[(0.0, 500.0), (500.0, 4_000.0), (4_000.0, SR as f64 / 2.0)]).unwrap();
    let residual: Vec<f32> = (0..b.len())
        .map(|i| parts.iter().map(|p| p.channel(0)[i]).sum::<f32>() - b.channel(0)[i])
        .collect();
    assert!(db(rms(&residual) / b.rms()) <= -40.0);
}

#[test]
fn bad_band_layouts_are_rejected() {
    let b = tone(100.0, 0.1);
    let ny = SR as f64 / 2.0;
    for bands in [
        vec![],
        vec![(0.0, 1_000.0), (900.0, ny)],
        vec![(0.0, 1_000.0), (1_100.0, ny)],
        vec![(10.0, ny)],
        vec![(0.0, 1_000.0)],
    ] {
        assert!(matches!(band_split(&b, &bands), Err(DspError::Bands(_))), "{bands:?}");
    }
}
