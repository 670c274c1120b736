use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use sha2::{Digest, Sha256};

use super::{check_duration, check_region, BackendError, Capability, MusicBackend};
use crate::audio::{AudioBuffer, DEFAULT_CHANNELS, DEFAULT_SAMPLE_RATE};
use crate::dsp::{band_split, Biquad, FilterKind};
use crate::gat::STEM_NAMES;

/// Semitone offsets above A2 of a minor-pentatonic scale over three octaves.
const PENTATONIC: [f64; 15] = {
    let mut t = [0.0; 15];
    let steps = [0, 3, 5, 7, 10];
    let mut i = 0;
    while i < 15 {
        t[i] = (12 * (i / 5) + steps[i % 5]) as f64;
        i += 1;
    }
    t
};

const BASE_HZ: f64 = 110.0;

/// Half-width of the window counted as "at" an oscillator frequency when
/// scoring similarity; wide enough to hold the envelope's sidebands.
const SIMILARITY_HALF_WIDTH_HZ: f64 = 12.0;

/// Stem-to-band layout used by the mock separator, in frequency order.
const STEM_LAYOUT: [(&str, f64); 6] = [
    ("bass", 150.0),
    ("drums", 400.0),
    ("piano", 1000.0),
    ("guitar", 2500.0),
    ("vocals", 6000.0),
    ("other", f64::INFINITY),
];

/// Frequency band of each stem at `sample_rate`; stems whose band lies
/// above Nyquist get an empty band and come out silent.
pub fn stem_bands(sample_rate: u32) -> Vec<(&'static str, Option<(f64, f64)>)> {
    let nyquist = sample_rate as f64 / 2.0;
    let mut lo = 0.0;
    STEM_LAYOUT
        .iter()
        .map(|&(name, hi)| {
            let band = if lo >= nyquist {
                None
            } else if hi >= nyquist || name == "other" {
                Some((lo, nyquist))
            } else {
                Some((lo, hi))
            };
            lo = hi;
            (name, band)
        })
        .collect()
}

struct Voice {
    freqs: Vec<f64>,
    bpm: f64,
    decay: f64,
}

/// Deterministic stand-in for every model capability.
///
/// Output is a pure function of the seed and the call's inputs: a
/// description hashes to a set of 2-4 pentatonic oscillators under a
/// pulsing envelope, so distinct prompts sound (and measure) distinct.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    sample_rate: u32,
    channels: usize,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            sample_rate: DEFAULT_SAMPLE_RATE,
            channels: DEFAULT_CHANNELS,
        }
    }

    pub fn with_format(mut self, sample_rate: u32, channels: usize) -> Self {
        self.sample_rate = sample_rate;
        self.channels = channels;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn rng(&self, parts: &[&[u8]]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    fn voice(&self, desc: &str) -> Voice {
        let mut rng = self.rng(&[b"voice", desc.trim().to_lowercase().as_bytes()]);
        let count = rng.random_range(2..=4);
        let mut idx: Vec<usize> = Vec::with_capacity(count);
        while idx.len() < count {
            let i = rng.random_range(0..PENTATONIC.len());
            if !idx.contains(&i) {
                idx.push(i);
            }
        }
        idx.sort_unstable();
        Voice {
            freqs: idx
                .iter()
                .map(|&i| BASE_HZ * 2f64.powf(PENTATONIC[i] / 12.0))
                .collect(),
            bpm: rng.random_range(80.0..140.0),
            decay: rng.random_range(2.0..6.0),
        }
    }

    /// Synthesizes `len` frames of `desc`'s voice. `variant` changes the
    /// phases and amplitude balance but not the oscillator set.
    fn synth(&self, desc: &str, variant: u32, len: usize, sample_rate: u32, channels: usize) -> AudioBuffer {
        let voice = self.voice(desc);
        let mut rng = self.rng(&[
            b"synth",
            desc.trim().to_lowercase().as_bytes(),
            &variant.to_le_bytes(),
        ]);
        let phases: Vec<f64> = voice.freqs.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let raw: Vec<f64> = voice.freqs.iter().map(|_| rng.random_range(0.5..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let amps: Vec<f64> = raw.iter().map(|a| 0.6 * a / total).collect();
        let sr = sample_rate as f64;
        let beat = 60.0 / voice.bpm;
        let samples: Vec<f32> = (0..len)
            .map(|i| {
                let t = i as f64 / sr;
                let env = 0.4 + 0.6 * (-(t % beat) * voice.decay).exp();
                let s: f64 = voice
                    .freqs
                    .iter()
                    .zip(&phases)
                    .zip(&amps)
                    .map(|((f, p), a)| a * (2.0 * PI * f * t + p).sin())
                    .sum();
                (s * env) as f32
            })
            .collect();
        AudioBuffer::new(vec![samples; channels], sample_rate).expect("synth produces a valid buffer")
    }

    fn fingerprint(buf: &AudioBuffer) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(buf.sample_rate().to_le_bytes());
        for ch in buf.channels() {
            for x in ch {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().to_vec()
    }

    /// `a * x + b * y` samplewise, clamped; both buffers share a shape.
    fn blend(x: &AudioBuffer, a: f32, y: &AudioBuffer, b: f32) -> Result<AudioBuffer, BackendError> {
        Ok(crate::audio::mix(&[x.clone(), y.clone()], &[a, b])?)
    }
}

impl MusicBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn capabilities(&self) -> &[Capability] {
        &Capability::ALL
    }

    fn generate(&self, desc: &str, duration_s: f64) -> Result<AudioBuffer, BackendError> {
        if desc.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty description".into()));
        }
        check_duration(duration_s)?;
        let len = (duration_s * self.sample_rate as f64).round() as usize;
        Ok(self.synth(desc, 0, len, self.sample_rate, self.channels))
    }

    /// Copies the prefix verbatim, then fills the rest with an even blend of
    /// the looped prefix and newly synthesized material.
    fn continue_audio(
        &self,
        prefix: &AudioBuffer,
        desc: &str,
        total_s: f64,
        variant: u32,
    ) -> Result<AudioBuffer, BackendError> {
        if prefix.is_empty() {
            return Err(BackendError::InvalidRequest("empty prefix".into()));
        }
        check_duration(total_s)?;
        let sr = prefix.sample_rate();
        let total = (total_s * sr as f64).round() as usize;
        if total < prefix.len() {
            return Err(BackendError::InvalidRequest(format!(
                "total {total_s}s is shorter than the {:.2}s prefix",
                prefix.duration_seconds()
            )));
        }
        let tail_len = total - prefix.len();
        let fresh = self.synth(desc, variant, tail_len, sr, prefix.num_channels());
        let channels = prefix
            .channels()
            .iter()
            .zip(fresh.channels())
            .map(|(p, f)| {
                let mut out = p.clone();
                out.extend(
                    f.iter()
                        .enumerate()
                        .map(|(i, &x)| (0.5 * p[i % p.len()] + 0.5 * x).clamp(-1.0, 1.0)),
                );
                out
            })
            .collect();
        Ok(AudioBuffer::new(channels, sr)?)
    }

    /// Replaces `[start, end)` with seeded white noise at the region's RMS.
    fn inpaint_region(
        &self,
        buf: &AudioBuffer,
        start_s: f64,
        end_s: f64,
        desc: &str,
    ) -> Result<AudioBuffer, BackendError> {
        check_region(buf, start_s, end_s)?;
        let sr = buf.sample_rate() as f64;
        let a = ((start_s * sr).round() as usize).min(buf.len());
        let b = ((end_s * sr).round() as usize).min(buf.len());
        let rms = buf.slice(a, b).rms();
        // Uniform noise on [-1, 1] has RMS 1/sqrt(3).
        let scale = (rms * 3f64.sqrt()) as f32;
        let fp = Self::fingerprint(buf);
        let mut rng = self.rng(&[
            b"inpaint",
            desc.as_bytes(),
            &(a as u64).to_le_bytes(),
            &(b as u64).to_le_bytes(),
            &fp,
        ]);
        let channels = buf
            .channels()
            .iter()
            .map(|c| {
                let mut out = c.clone();
                for x in &mut out[a..b] {
                    *x = (rng.random_range(-1.0f32..=1.0) * scale).clamp(-1.0, 1.0);
                }
                out
            })
            .collect();
        Ok(AudioBuffer::new(channels, buf.sample_rate())?)
    }

    /// Brick-wall band split along the fixed stem layout, so the stems
    /// partition the input exactly.
    fn separate(&self, buf: &AudioBuffer) -> Result<BTreeMap<String, AudioBuffer>, BackendError> {
        if buf.is_empty() {
            return Err(BackendError::InvalidRequest("empty buffer".into()));
        }
        let layout = stem_bands(buf.sample_rate());
        let bands: Vec<(f64, f64)> = layout.iter().filter_map(|(_, b)| *b).collect();
        let mut split = band_split(buf, &bands)?.into_iter();
        let mut stems = BTreeMap::new();
        for (name, band) in layout {
            let stem = match band {
                Some(_) => split.next().expect("one output per band"),
                None => AudioBuffer::silence(buf.len(), buf.num_channels(), buf.sample_rate())?,
            };
            stems.insert(name.to_owned(), stem);
        }
        debug_assert!(STEM_NAMES.iter().all(|s| stems.contains_key(*s)));
        Ok(stems)
    }

    fn caption_audio(&self, buf: &AudioBuffer) -> Result<String, BackendError> {
        Ok(format!(
            "synthetic loop, duration {:.2}s, energy {:.3}",
            buf.duration_seconds(),
            buf.rms()
        ))
    }

    /// Square root of the share of spectral energy lying near the
    /// description's oscillator frequencies.
    fn similarity(&self, buf: &AudioBuffer, desc: &str) -> Result<f64, BackendError> {
        if buf.is_empty() {
            return Ok(0.0);
        }
        let mono = buf.to_mono();
        let n = mono.len();
        let mut spectrum: Vec<Complex<f64>> = mono.iter().map(|&x| Complex::new(x as f64, 0.0)).collect();
        FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut spectrum);
        let bin_hz = buf.sample_rate() as f64 / n as f64;
        let freqs = self.voice(desc).freqs;
        let mut near = 0.0;
        let mut total = 0.0;
        for (k, c) in spectrum.iter().take(n / 2 + 1).enumerate() {
            let e = c.norm_sqr();
            total += e;
            let f = k as f64 * bin_hz;
            if freqs.iter().any(|&g| (f - g).abs() <= SIMILARITY_HALF_WIDTH_HZ) {
                near += e;
            }
        }
        if total <= f64::MIN_POSITIVE {
            return Ok(0.0);
        }
        Ok((near / total).sqrt().clamp(0.0, 1.0))
    }

    /// Keeps the source's low register and lays the style's voice over it.
    fn rearrange(&self, source: &AudioBuffer, style: &str) -> Result<AudioBuffer, BackendError> {
        if source.is_empty() || style.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty source or style".into()));
        }
        let sr = source.sample_rate();
        let bed = source.map_channels(|c| Biquad::butterworth(FilterKind::LowPass, 500.0, sr as f64).process_block(c))?;
        let fresh = self.synth(style, 0, source.len(), sr, source.num_channels());
        Self::blend(&bed, 0.5, &fresh, 0.5)
    }

    fn vary(&self, source: &AudioBuffer, conditioning: &str) -> Result<AudioBuffer, BackendError> {
        if source.is_empty() {
            return Err(BackendError::InvalidRequest("empty source".into()));
        }
        let fp = Self::fingerprint(source);
        let hex: String = fp.iter().take(8).map(|b| format!("{b:02x}")).collect();
        let fresh = self.synth(
            &format!("{conditioning}#{hex}"),
            0,
            source.len(),
            source.sample_rate(),
            source.num_channels(),
        );
        Self::blend(source, 0.5, &fresh, 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::mix;

    fn mock() -> MockBackend {
        MockBackend::new(7)
    }

    #[test]
    fn generate_is_deterministic_and_sized() {
        let a = mock().generate("rock", 8.0).unwrap();
        let b = mock().generate("rock", 8.0).unwrap();
        assert_eq!(a, b);
        assert!((a.duration_seconds() - 8.0).abs() <= 0.4);
        assert_eq!(a.num_channels(), 2);
        assert!(a.peak() <= 1.0);
    }

    #[test]
    fn seed_changes_output() {
        let a = MockBackend::new(1).generate("rock", 1.0).unwrap();
        let b = MockBackend::new(2).generate("rock", 1.0).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn continuation_copies_prefix() {
        let m = mock();
        let prefix = m.generate("drums", 2.0).unwrap();
        let out = m.continue_audio(&prefix, "rock with guitar", 4.0, 0).unwrap();
        assert_eq!(out.len(), 2 * prefix.len());
        for ch in 0..2 {
            assert_eq!(&out.channel(ch)[..prefix.len()], prefix.channel(ch));
        }
        assert!(m.continue_audio(&prefix, "x", 1.0, 0).is_err());
        assert_ne!(
            m.continue_audio(&prefix, "x", 4.0, 0).unwrap(),
            m.continue_audio(&prefix, "x", 4.0, 1).unwrap()
        );
    }

    #[test]
    fn inpaint_touches_only_the_region() {
        let m = mock();
        let buf = m.generate("pop", 8.0).unwrap();
        let out = m.inpaint_region(&buf, 3.0, 5.0, "").unwrap();
        let (a, b) = (3 * 44_100, 5 * 44_100);
        assert_eq!(&out.channel(0)[..a], &buf.channel(0)[..a]);
        assert_eq!(&out.channel(0)[b..], &buf.channel(0)[b..]);
        let before = buf.slice(a, b).rms();
        let after = out.slice(a, b).rms();
        assert!((20.0 * (after / before).log10()).abs() <= 3.0);
        assert!(m.inpaint_region(&buf, 5.0, 3.0, "").is_err());
        assert!(m.inpaint_region(&buf, 3.0, 9.0, "").is_err());
    }

    #[test]
    fn stems_partition_the_input() {
        let m = mock();
        let buf = m.generate("funk with bass and piano", 2.0).unwrap();
        let stems = m.separate(&buf).unwrap();
        assert_eq!(stems.len(), 6);
        let parts: Vec<AudioBuffer> = stems.values().cloned().collect();
        let sum = mix(&parts, &[1.0; 6]).unwrap();
        let residual = mix(&[sum, buf.clone()], &[1.0, -1.0]).unwrap();
        assert!(20.0 * (residual.rms() / buf.rms()).log10() <= -40.0);
    }

    #[test]
    fn low_sample_rate_stems_still_complete() {
        let layout = stem_bands(8_000);
        assert_eq!(layout.len(), 6);
        assert!(layout.iter().any(|(_, b)| b.is_none()));
        let m = MockBackend::new(1).with_format(8_000, 1);
        let buf = m.generate("x", 0.5).unwrap();
        assert_eq!(m.separate(&buf).unwrap().len(), 6);
    }

    #[test]
    fn similarity_prefers_matching_description() {
        let m = mock();
        let buf = m.generate("smooth jazz", 2.0).unwrap();
        let own = m.similarity(&buf, "smooth jazz").unwrap();
        assert!(own > 0.9, "{own}");
        assert_eq!(own, m.similarity(&buf, "smooth jazz").unwrap());
        for desc in ["metal", "ambient pads", "a", ""] {
            let s = m.similarity(&buf, desc).unwrap();
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn caption_reports_duration() {
        let m = mock();
        let buf = m.generate("x", 3.0).unwrap();
        let c = m.caption_audio(&buf).unwrap();
        assert!(c.starts_with("synthetic loop, duration 3.00s, energy "), "{c}");
    }

    #[test]
    fn rearrange_and_vary_keep_length_and_differ() {
        let m = mock();
        let buf = m.generate("rock", 2.0).unwrap();
        let r = m.rearrange(&buf, "jazz with sax solo").unwrap();
        assert_eq!(r.len(), buf.len());
        assert_ne!(r, buf);
        let v = m.vary(&buf, "").unwrap();
        assert_eq!(v.len(), buf.len());
        assert_ne!(v, buf);
        assert_eq!(v, m.vary(&buf, "").unwrap());
    }
}
