//! Audio buffers, WAV I/O and the on-disk asset store shared by every tool.

mod store;
mod wav;

pub use store::{AssetId, AssetStore, AudioAsset, IdMode};
pub use wav::{decode_wav, encode_wav, BitDepth};

use thiserror::Error;

/// Sample rate used for everything the engine synthesizes itself.
pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

/// Channel count used for everything the engine synthesizes itself.
pub const DEFAULT_CHANNELS: usize = 2;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("invalid wav: {field}: {detail}")]
    Decode { field: &'static str, detail: String },
    #[error("cannot encode an empty buffer")]
    EmptyBuffer,
    #[error("invalid buffer: {0}")]
    InvalidBuffer(String),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("channel count mismatch: {0} vs {1}")]
    ChannelMismatch(usize, usize),
    #[error("asset storage: {0}")]
    Storage(#[from] std::io::Error),
    #[error("nonexistent file: {0}")]
    UnknownAsset(String),
}

/// Planar floating-point audio. Amplitudes are nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    channels: Vec<Vec<f32>>,
    sample_rate: u32,
}

impl AudioBuffer {
    /// Builds a buffer, checking the channel count, equal channel lengths and
    /// a positive sample rate.
    pub fn new(channels: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidBuffer("sample rate must be positive".into()));
        }
        if channels.is_empty() || channels.len() > 2 {
            return Err(AudioError::InvalidBuffer(format!(
                "expected 1 or 2 channels, got {}",
                channels.len()
            )));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(AudioError::InvalidBuffer("channels have unequal lengths".into()));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![samples], sample_rate)
    }

    /// Duplicates `samples` into both channels.
    pub fn stereo_from_mono(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![samples.clone(), samples], sample_rate)
    }

    /// All-zero buffer of `len` frames.
    pub fn silence(len: usize, channels: usize, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![vec![0.0; len]; channels], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Frames per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, idx: usize) -> &[f32] {
        &self.channels[idx]
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f32>> {
        self.channels
    }

    /// Average of all channels.
    pub fn to_mono(&self) -> Vec<f32> {
        if self.channels.len() == 1 {
            return self.channels[0].clone();
        }
        let n = self.channels.len() as f32;
        (0..self.len())
            .map(|i| self.channels.iter().map(|c| c[i]).sum::<f32>() / n)
            .collect()
    }

    /// Applies `f` to each channel, keeping the sample rate.
    pub fn map_channels<F>(&self, mut f: F) -> Result<Self, AudioError>
    where
        F: FnMut(&[f32]) -> Vec<f32>,
    {
        Self::new(self.channels.iter().map(|c| f(c)).collect(), self.sample_rate)
    }

    /// Frames `[start, end)`, clamped to the buffer.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.len());
        let start = start.min(end);
        Self {
            channels: self.channels.iter().map(|c| c[start..end].to_vec()).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Root-mean-square over all channels.
    pub fn rms(&self) -> f64 {
        let total = self.len() * self.channels.len();
        if total == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .channels
            .iter()
            .flat_map(|c| c.iter())
            .map(|&x| (x as f64) * (x as f64))
            .sum();
        (sum / total as f64).sqrt()
    }

    pub fn peak(&self) -> f32 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f32, |m, &x| m.max(x.abs()))
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&x| x * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Converts to `channels` channels by duplicating mono or averaging stereo.
    pub fn with_channel_count(&self, channels: usize) -> Result<Self, AudioError> {
        match (self.channels.len(), channels) {
            (a, b) if a == b => Ok(self.clone()),
            (1, 2) => Self::stereo_from_mono(self.channels[0].clone(), self.sample_rate),
            (2, 1) => Self::mono(self.to_mono(), self.sample_rate),
            (_, n) => Err(AudioError::InvalidBuffer(format!("unsupported channel count {n}"))),
        }
    }
}

/// Weighted samplewise sum of `buffers`, zero-padded to the longest input.
///
/// Results are hard-clamped to [-1, 1] only where the sum leaves that range.
pub fn mix(buffers: &[AudioBuffer], gains: &[f32]) -> Result<AudioBuffer, AudioError> {
    let first = buffers
        .first()
        .ok_or_else(|| AudioError::InvalidBuffer("nothing to mix".into()))?;
    if gains.len() != buffers.len() {
        return Err(AudioError::InvalidBuffer(format!(
            "{} buffers but {} gains",
            buffers.len(),
            gains.len()
        )));
    }
    for b in &buffers[1..] {
        if b.sample_rate != first.sample_rate {
            return Err(AudioError::SampleRateMismatch(first.sample_rate, b.sample_rate));
        }
        if b.num_channels() != first.num_channels() {
            return Err(AudioError::ChannelMismatch(first.num_channels(), b.num_channels()));
        }
    }
    let len = buffers.iter().map(AudioBuffer::len).max().unwrap_or(0);
    let mut out = vec![vec![0.0f32; len]; first.num_channels()];
    for (buf, &gain) in buffers.iter().zip(gains) {
        for (dst, src) in out.iter_mut().zip(&buf.channels) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s * gain;
            }
        }
    }
    for ch in &mut out {
        for x in ch.iter_mut() {
            if x.abs() > 1.0 {
                *x = x.clamp(-1.0, 1.0);
            }
        }
    }
    AudioBuffer::new(out, first.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, sr: u32) -> AudioBuffer {
        let a: Vec<f32> = (0..n).map(|i| (i as f32 / n as f32) - 0.5).collect();
        let b: Vec<f32> = a.iter().map(|x| -x * 0.5).collect();
        AudioBuffer::new(vec![a, b], sr).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(AudioBuffer::new(vec![], 44_100).is_err());
        assert!(AudioBuffer::new(vec![vec![0.0]; 3], 44_100).is_err());
        assert!(AudioBuffer::new(vec![vec![0.0; 2], vec![0.0; 3]], 44_100).is_err());
        assert!(AudioBuffer::mono(vec![0.0], 0).is_err());
    }

    #[test]
    fn duration_follows_length() {
        let b = AudioBuffer::silence(22_050, 2, 44_100).unwrap();
        assert_eq!(b.duration_seconds(), 0.5);
    }

    #[test]
    fn mix_identity() {
        let b = ramp(1000, 44_100);
        assert_eq!(mix(std::slice::from_ref(&b), &[1.0]).unwrap(), b);
    }

    #[test]
    fn mix_cancellation() {
        let b = ramp(1000, 44_100);
        let out = mix(&[b.clone(), b.scaled(-1.0)], &[1.0, 1.0]).unwrap();
        assert!(out.channels().iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn mix_pads_to_longest_and_checks_rates() {
        let a = ramp(100, 44_100);
        let b = ramp(300, 44_100);
        assert_eq!(mix(&[a.clone(), b], &[1.0, 1.0]).unwrap().len(), 300);
        let c = ramp(100, 48_000);
        assert!(matches!(
            mix(&[a, c], &[1.0, 1.0]),
            Err(AudioError::SampleRateMismatch(44_100, 48_000))
        ));
    }

    #[test]
    fn mix_clamps_only_overflow() {
        let a = AudioBuffer::mono(vec![0.8, -0.8, 0.2], 8_000).unwrap();
        let out = mix(&[a.clone(), a], &[1.0, 1.0]).unwrap();
        assert_eq!(out.channel(0), &[1.0, -1.0, 0.4]);
    }
}
