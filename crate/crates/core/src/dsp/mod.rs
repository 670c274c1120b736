//! Deterministic signal processing behind the effect, pitch and tempo tools.
//!
//! Every operation is a pure function of its inputs and clamps its output to
//! [-1, 1].

mod bands;
mod biquad;
mod effects;
mod stretch;

pub use bands::band_split;
pub use biquad::{Biquad, FilterKind};
pub use effects::{apply_effect, EffectParams};
pub use stretch::{pitch_shift_buffer, resample_linear, time_stretch_buffer};

use thiserror::Error;

use crate::audio::{AudioBuffer, AudioError};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("cannot process an empty buffer")]
    EmptyBuffer,
    #[error("{name} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid band layout: {0}")]
    Bands(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

pub(crate) fn check_range(name: &'static str, value: f64, min: f64, max: f64) -> Result<(), DspError> {
    if value.is_finite() && (min..=max).contains(&value) {
        Ok(())
    } else {
        Err(DspError::OutOfRange { name, value, min, max })
    }
}

pub(crate) fn clamp_unit(samples: &mut [f32]) {
    for x in samples {
        *x = x.clamp(-1.0, 1.0);
    }
}

fn non_empty(buf: &AudioBuffer) -> Result<(), DspError> {
    if buf.is_empty() {
        Err(DspError::EmptyBuffer)
    } else {
        Ok(())
    }
}
