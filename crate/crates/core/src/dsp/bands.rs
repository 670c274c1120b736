use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{non_empty, DspError};
use crate::audio::AudioBuffer;

fn check_layout(bands: &[(f64, f64)], nyquist: f64) -> Result<(), DspError> {
    let fail = |msg: String| Err(DspError::Bands(msg));
    let Some(first) = bands.first() else {
        return fail("no bands given".into());
    };
    if first.0 != 0.0 {
        return fail(format!("first band starts at {} Hz instead of 0", first.0));
    }
    for (i, &(lo, hi)) in bands.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return fail(format!("band {i} ({lo}, {hi}) is empty or inverted"));
        }
        if let Some(&(next_lo, _)) = bands.get(i + 1) {
            if next_lo < hi {
                return fail(format!("band {} overlaps band {i} at {next_lo} Hz", i + 1));
            }
            if next_lo > hi {
                return fail(format!("gap between {hi} Hz and {next_lo} Hz"));
            }
        }
    }
    let last = bands[bands.len() - 1].1;
    if last < nyquist {
        return fail(format!("bands stop at {last} Hz, below Nyquist {nyquist} Hz"));
    }
    Ok(())
}

/// Splits `buf` into contiguous frequency bands with an FFT brick-wall mask
/// over the whole signal.
///
/// Every bin belongs to exactly one band, so the outputs sum back to the
/// input up to floating-point rounding.
pub fn band_split(buf: &AudioBuffer, bands: &[(f64, f64)]) -> Result<Vec<AudioBuffer>, DspError> {
    non_empty(buf)?;
    let sr = buf.sample_rate() as f64;
    check_layout(bands, sr / 2.0)?;

    let n = buf.len();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    // band_of[k] for the non-negative frequency of bin k (mirrored bins share it).
    let band_of: Vec<usize> = (0..n)
        .map(|k| {
            let k = k.min(n - k);
            let freq = k as f64 * sr / n as f64;
            bands
                .iter()
                .position(|&(lo, hi)| freq >= lo && freq < hi)
                .unwrap_or(bands.len() - 1)
        })
        .collect();

    let mut per_band: Vec<Vec<Vec<f32>>> = vec![Vec::with_capacity(buf.num_channels()); bands.len()];
    for channel in buf.channels() {
        let mut spectrum: Vec<Complex<f64>> =
            channel.iter().map(|&x| Complex::new(x as f64, 0.0)).collect();
        forward.process(&mut spectrum);
        for (b, out) in per_band.iter_mut().enumerate() {
            let mut masked: Vec<Complex<f64>> = spectrum
                .iter()
                .zip(&band_of)
                .map(|(&c, &owner)| if owner == b { c } else { Complex::new(0.0, 0.0) })
                .collect();
            inverse.process(&mut masked);
            out.push(masked.iter().map(|c| (c.re / n as f64) as f32).collect());
        }
    }
    per_band
        .into_iter()
        .map(|chs| Ok(AudioBuffer::new(chs, buf.sample_rate())?))
        .collect()
}
