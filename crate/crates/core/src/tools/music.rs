//! The twelve music tasks.
//!
//! Each task validates its arguments, reads its source asset from the
//! store, calls a backend or the DSP layer, stores the result and reports
//! the attribute changes it implies.

use std::sync::OnceLock;

use regex::Regex;

use super::{extract_attributes, extract_instrument, ToolContext, ToolError, ToolResult};
use crate::audio::{mix, AudioAsset, AudioBuffer};
use crate::backends::BackendError;
use crate::dsp::{apply_effect, pitch_shift_buffer, time_stretch_buffer, EffectParams};
use crate::gat::{format_bpm, scale_bpm, transpose_key, AttributeUpdates, Key, MAX_SPEED, MAX_TRANSPOSE, MIN_SPEED, STEM_NAMES};
use crate::llm::translate_impression;

/// Effects the sound-effect tool can route to.
pub const SUPPORTED_EFFECTS: [&str; 4] = ["reverb", "high-pass filter", "low-pass filter", "chorus"];

fn backend(stage: &'static str) -> impl FnOnce(BackendError) -> ToolError {
    move |source| ToolError::Backend { stage, source }
}

fn non_empty<'a>(value: &'a str, what: &str) -> Result<&'a str, ToolError> {
    let v = value.trim();
    if v.is_empty() {
        Err(ToolError::Invalid(format!("{what} is empty")))
    } else {
        Ok(v)
    }
}

fn load(ctx: &ToolContext<'_>, raw: &str) -> Result<(AudioAsset, AudioBuffer), ToolError> {
    let asset = ctx.resolve(raw)?;
    let buf = ctx.store.load(&asset)?;
    Ok((asset, buf))
}

/// Stores `buf` as the new current loop and builds the observation.
fn produced(
    ctx: &ToolContext<'_>,
    buf: &AudioBuffer,
    summary: impl FnOnce(&str) -> String,
    mut updates: AttributeUpdates,
) -> Result<ToolResult, ToolError> {
    let asset = ctx.store.store(buf)?;
    updates.mix = Some(asset.clone());
    Ok(ToolResult::ok(summary(&asset.relative_path), Some(asset), updates))
}

fn fresh_draft(desc: &str) -> AttributeUpdates {
    AttributeUpdates {
        reset: true,
        description: Some(desc.to_owned()),
        ..extract_attributes(desc).into_updates()
    }
}

/// Generates a new loop from a text description.
pub fn text_to_music(ctx: &ToolContext<'_>, desc: &str) -> Result<ToolResult, ToolError> {
    let desc = non_empty(desc, "text description")?;
    let buf = ctx
        .backends
        .generate(desc, ctx.config.duration_seconds)
        .map_err(backend("generation"))?;
    produced(
        ctx,
        &buf,
        |path| format!("Generated music for \"{desc}\": {path}"),
        fresh_draft(desc),
    )
}

/// Continues a drum recording into a full loop guided by `desc`.
pub fn drum_pattern_to_music(ctx: &ToolContext<'_>, drum_asset: &str, desc: &str) -> Result<ToolResult, ToolError> {
    let (_, drums) = load(ctx, drum_asset)?;
    let desc = non_empty(desc, "text description")?;
    let total = ctx.config.duration_seconds.max(2.0 * drums.duration_seconds());
    let buf = ctx
        .backends
        .continue_audio(&drums, desc, total, 0)
        .map_err(backend("continuation"))?;
    let mut updates = fresh_draft(desc);
    if let Some(list) = updates.instruments.as_mut() {
        if !list.iter().any(|i| i.contains("drum") || i == "percussion") {
            list.push("drums".into());
        }
    }
    produced(
        ctx,
        &buf,
        |path| format!("Generated music for \"{desc}\" on the drum pattern {}: {path}", drum_asset.trim()),
        updates,
    )
}

/// Two-stage chain: the language model turns a title into a feature
/// description, which then drives generation.
pub fn impression_to_music(ctx: &ToolContext<'_>, title: &str, desc_hint: &str) -> Result<ToolResult, ToolError> {
    let title = non_empty(title, "impression title")?;
    let description = translate_impression(ctx.llm, title).map_err(|source| ToolError::Llm {
        stage: "impression translation",
        source,
    })?;
    let buf = ctx
        .backends
        .generate(&description, ctx.config.duration_seconds)
        .map_err(backend("generation"))?;
    let hint = desc_hint.trim();
    produced(
        ctx,
        &buf,
        |path| {
            let hint = if hint.is_empty() { String::new() } else { format!(" (request: {hint})") };
            format!("Translated \"{title}\" into \"{description}\"{hint} and generated: {path}")
        },
        fresh_draft(&description),
    )
}

/// Regenerates a loop in a new style.
pub fn stylistic_rearrangement(ctx: &ToolContext<'_>, asset: &str, style: &str) -> Result<ToolResult, ToolError> {
    let (source, buf) = load(ctx, asset)?;
    let style = non_empty(style, "style description")?;
    let out = ctx.backends.rearrange(&buf, style).map_err(backend("rearrangement"))?;
    let v = extract_attributes(style);
    let updates = AttributeUpdates {
        genre: v.genre,
        mood: v.mood,
        bpm: v.bpm,
        key: v.key,
        add_instruments: v.instruments,
        description: Some(style.to_owned()),
        ..AttributeUpdates::default()
    };
    produced(
        ctx,
        &out,
        |path| format!("Rearranged {} as \"{style}\": {path}", source.relative_path),
        updates,
    )
}

/// A fresh take on a loop, conditioned on the current attributes.
pub fn music_variation(ctx: &ToolContext<'_>, asset: &str) -> Result<ToolResult, ToolError> {
    let (source, buf) = load(ctx, asset)?;
    let out = ctx
        .backends
        .vary(&buf, &ctx.gat.render_context())
        .map_err(backend("variation"))?;
    produced(
        ctx,
        &out,
        |path| format!("Generated a variation of {}: {path}", source.relative_path),
        AttributeUpdates::default(),
    )
}

/// Continuation under a similarity gate: candidates are drawn until one
/// scores at least the threshold against the request, up to `max_retries`.
///
/// The candidate is the continued segment after the original loop, i.e. the
/// full new mix of old and new material, at the original length.
pub fn add_track(ctx: &ToolContext<'_>, asset: &str, track_desc: &str) -> Result<ToolResult, ToolError> {
    let (source, prefix) = load(ctx, asset)?;
    let desc = non_empty(track_desc, "track description")?;
    let instrument = extract_instrument(desc);
    let total = 2.0 * prefix.duration_seconds();
    let threshold = ctx.config.similarity_threshold;
    let mut best = f64::NEG_INFINITY;
    for attempt in 0..ctx.config.max_retries {
        let continued = ctx
            .backends
            .continue_audio(&prefix, desc, total, attempt)
            .map_err(backend("continuation"))?;
        if continued.len() <= prefix.len() {
            return Err(ToolError::Invalid("continuation produced no new material".into()));
        }
        let end = continued.len().min(2 * prefix.len());
        let candidate = continued.slice(prefix.len(), end);
        let score = ctx
            .backends
            .similarity(&candidate, desc)
            .map_err(backend("similarity scoring"))?;
        best = best.max(score);
        if score >= threshold {
            let what = instrument.clone().unwrap_or_else(|| "the new track".into());
            let updates = AttributeUpdates {
                add_instruments: instrument.into_iter().collect(),
                ..AttributeUpdates::default()
            };
            return produced(
                ctx,
                &candidate,
                |path| {
                    format!(
                        "Added {what} to {} (similarity {score:.2} on attempt {}): {path}",
                        source.relative_path,
                        attempt + 1
                    )
                },
                updates,
            );
        }
    }
    Err(ToolError::GateFailed {
        attempts: ctx.config.max_retries,
        best: best.max(0.0),
        threshold,
    })
}

/// Separates a loop and either keeps one stem (`extract`) or everything
/// else (`remove`).
pub fn remove_track(ctx: &ToolContext<'_>, asset: &str, stem: &str, mode: &str) -> Result<ToolResult, ToolError> {
    let (source, buf) = load(ctx, asset)?;
    let stem = stem.trim().trim_matches(['\'', '"']).to_lowercase();
    if !STEM_NAMES.contains(&stem.as_str()) {
        return Err(ToolError::Invalid(format!(
            "track name must be one of 'vocals', 'drums', 'bass', 'guitar', 'piano' or 'other', got {stem:?}"
        )));
    }
    let mode = mode.trim().trim_matches(['\'', '"']).to_lowercase();
    if mode != "extract" && mode != "remove" {
        return Err(ToolError::Invalid(format!("mode must be 'extract' or 'remove', got {mode:?}")));
    }
    let mut stems = ctx.backends.separate(&buf).map_err(backend("separation"))?;
    let Some(target) = stems.remove(&stem) else {
        return Err(ToolError::Backend {
            stage: "separation",
            source: BackendError::Remote(format!("no {stem} stem returned")),
        });
    };

    if mode == "extract" {
        let asset = ctx.store.store(&target)?;
        let updates = AttributeUpdates {
            stems: vec![(stem.clone(), asset.clone())],
            ..AttributeUpdates::default()
        };
        let text = format!("Extracted the {stem} track from {}: {}", source.relative_path, asset.relative_path);
        return Ok(ToolResult::ok(text, Some(asset), updates));
    }

    let rest: Vec<AudioBuffer> = stems.into_values().collect();
    let out = mix(&rest, &vec![1.0; rest.len()])?;
    let removed: Vec<String> = ctx
        .gat
        .instruments
        .iter()
        .filter(|i| **i == stem || i.ends_with(&format!(" {stem}")))
        .cloned()
        .collect();
    let updates = AttributeUpdates {
        remove_instruments: if removed.is_empty() { vec![stem.clone()] } else { removed },
        ..AttributeUpdates::default()
    };
    produced(
        ctx,
        &out,
        |path| format!("Removed the {stem} track from {}: {path}", source.relative_path),
        updates,
    )
}

fn parse_seconds(raw: &str, what: &str) -> Result<f64, ToolError> {
    let t = raw.trim().to_lowercase();
    let t = ["seconds", "second", "secs", "sec", "s"]
        .iter()
        .find_map(|suffix| t.strip_suffix(suffix))
        .unwrap_or(&t)
        .trim();
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ToolError::Invalid(format!("{what} {raw:?} is not a number of seconds")))
}

/// Regenerates `[start, end)` seconds of a loop.
pub fn inpaint(ctx: &ToolContext<'_>, asset: &str, start: &str, end: &str) -> Result<ToolResult, ToolError> {
    let (source, buf) = load(ctx, asset)?;
    let start_s = parse_seconds(start, "start time")?;
    let end_s = parse_seconds(end, "end time")?;
    let duration = buf.duration_seconds();
    if start_s < 0.0 || start_s >= end_s || end_s > duration + 1e-9 {
        return Err(ToolError::Invalid(format!(
            "region {start_s}s-{end_s}s must satisfy 0 <= start < end <= {duration:.2}s"
        )));
    }
    let out = ctx
        .backends
        .inpaint_region(&buf, start_s, end_s, &ctx.gat.render_context())
        .map_err(backend("inpainting"))?;
    produced(
        ctx,
        &out,
        |path| format!("Re-generated {start_s}s-{end_s}s of {}: {path}", source.relative_path),
        AttributeUpdates::default(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EffectKind {
    Reverb,
    HighPass,
    LowPass,
    Chorus,
}

const EFFECT_KEYWORDS: [(&str, EffectKind); 11] = [
    ("reverb", EffectKind::Reverb),
    ("high pass", EffectKind::HighPass),
    ("high-pass", EffectKind::HighPass),
    ("highpass", EffectKind::HighPass),
    ("hpf", EffectKind::HighPass),
    ("low pass", EffectKind::LowPass),
    ("low-pass", EffectKind::LowPass),
    ("lowpass", EffectKind::LowPass),
    ("lpf", EffectKind::LowPass),
    ("chorus", EffectKind::Chorus),
    ("choir-like chorus", EffectKind::Chorus),
];

fn cutoff_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d+(?:\.\d+)?)\s*(khz|hz)\b").expect("static regex"))
}

fn has_word(text: &str, words: &[&str]) -> bool {
    text.split(|c: char| !c.is_alphanumeric())
        .any(|w| words.contains(&w))
}

/// Keyword routing plus qualifier overrides on the per-effect defaults.
fn route_effect(request: &str, ctx: &ToolContext<'_>) -> Result<EffectParams, ToolError> {
    let lower = request.to_lowercase();
    let mut kinds: Vec<EffectKind> = Vec::new();
    for (kw, kind) in EFFECT_KEYWORDS {
        if lower.contains(kw) && !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    let supported = SUPPORTED_EFFECTS.join(", ");
    let kind = match kinds.as_slice() {
        [one] => *one,
        [] => {
            return Err(ToolError::Invalid(format!(
                "no supported effect named in {request:?}; supported effects: {supported}"
            )))
        }
        _ => {
            return Err(ToolError::Invalid(format!(
                "{request:?} names more than one effect; add one of {supported} at a time"
            )))
        }
    };
    let d = &ctx.config.effects;
    let cutoff = cutoff_regex().captures(&lower).and_then(|c| {
        let v: f64 = c[1].parse().ok()?;
        Some(if &c[2] == "khz" { v * 1000.0 } else { v })
    });
    Ok(match kind {
        EffectKind::Reverb => {
            let room_size = if has_word(&lower, &["small", "studio", "room", "booth", "tight"]) {
                0.3
            } else if has_word(&lower, &["large", "hall", "church", "cathedral", "arena", "huge"]) {
                0.85
            } else {
                d.reverb_room_size
            };
            let wet = if has_word(&lower, &["subtle", "light", "little", "touch", "slight"]) {
                0.2
            } else if has_word(&lower, &["heavy", "lots", "drenched", "wet", "massive"]) {
                0.5
            } else {
                d.reverb_wet
            };
            EffectParams::Reverb { room_size, wet }
        }
        EffectKind::HighPass => EffectParams::HighPass {
            cutoff_hz: cutoff.unwrap_or(d.highpass_hz),
        },
        EffectKind::LowPass => EffectParams::LowPass {
            cutoff_hz: cutoff.unwrap_or(d.lowpass_hz),
        },
        EffectKind::Chorus => EffectParams::Chorus {
            rate_hz: if has_word(&lower, &["fast", "quick"]) {
                3.0
            } else if has_word(&lower, &["slow"]) {
                0.8
            } else {
                d.chorus_rate_hz
            },
            depth_ms: if has_word(&lower, &["deep", "wide", "thick"]) {
                12.0
            } else if has_word(&lower, &["subtle", "light"]) {
                3.0
            } else {
                d.chorus_depth_ms
            },
        },
    })
}

/// Folds anything past `len` back onto the start so a loop stays seamless.
fn wrap_to_length(buf: AudioBuffer, len: usize) -> Result<AudioBuffer, ToolError> {
    if buf.len() <= len {
        return Ok(buf);
    }
    let sr = buf.sample_rate();
    let channels = buf
        .into_channels()
        .into_iter()
        .map(|c| {
            let mut out = c[..len].to_vec();
            for (i, x) in c[len..].iter().enumerate() {
                out[i % len] += x;
            }
            out.iter().map(|x| x.clamp(-1.0, 1.0)).collect()
        })
        .collect();
    Ok(AudioBuffer::new(channels, sr)?)
}

/// Applies the single effect named in the user's message.
pub fn add_sound_effect(ctx: &ToolContext<'_>, asset: &str, request: &str) -> Result<ToolResult, ToolError> {
    let (source, buf) = load(ctx, asset)?;
    let params = route_effect(request, ctx)?;
    let out = wrap_to_length(apply_effect(&buf, &params)?, buf.len())?;
    produced(
        ctx,
        &out,
        |path| format!("Added {} to {}: {path}", params.name(), source.relative_path),
        AttributeUpdates::default(),
    )
}

/// Reads a semitone count, or a target key relative to the current one.
fn parse_semitones(raw: &str, current: Option<Key>) -> Result<i32, ToolError> {
    let t = raw.trim().to_lowercase();
    let number = ["semitones", "semitone", "st"]
        .iter()
        .find_map(|s| t.strip_suffix(s))
        .unwrap_or(&t)
        .trim()
        .trim_start_matches('+');
    if let Ok(n) = number.parse::<i32>() {
        return Ok(n);
    }
    if let Ok(f) = number.parse::<f64>() {
        return Err(ToolError::Invalid(format!("pitch shift must be a whole number of semitones, got {f}")));
    }
    let target: Key = raw
        .trim()
        .trim_start_matches("to ")
        .parse()
        .map_err(|_| ToolError::Invalid(format!("pitch shift value {raw:?} is neither semitones nor a key")))?;
    let Some(current) = current else {
        return Err(ToolError::Invalid(format!(
            "the current key is unknown, so {target} cannot be reached; give the shift in semitones"
        )));
    };
    if current.mode() != target.mode() {
        return Err(ToolError::Invalid(format!(
            "pitch shifting keeps the mode; cannot turn {current} into {target}"
        )));
    }
    let up = (target.pitch_class() as i32 - current.pitch_class() as i32).rem_euclid(12);
    Ok(if up > 6 { up - 12 } else { up })
}

/// Transposes a loop and the recorded key together.
pub fn pitch_shift(ctx: &ToolContext<'_>, asset: &str, value: &str) -> Result<ToolResult, ToolError> {
    let (source, buf) = load(ctx, asset)?;
    let semitones = parse_semitones(value, ctx.gat.key)?;
    if semitones.abs() > MAX_TRANSPOSE {
        return Err(ToolError::Invalid(format!(
            "pitch shift of {semitones} semitones exceeds ±{MAX_TRANSPOSE}"
        )));
    }
    // Bookkeeping is computed first so audio and key change together or not at all.
    let key = transpose_key(ctx.gat.key, semitones)?;
    let out = pitch_shift_buffer(&buf, semitones)?;
    let updates = AttributeUpdates {
        key: key.map(|k| k.to_string()),
        ..AttributeUpdates::default()
    };
    let key_note = key.map(|k| format!(", now in {k}")).unwrap_or_default();
    produced(
        ctx,
        &out,
        |path| format!("Shifted {} by {semitones:+} semitones{key_note}: {path}", source.relative_path),
        updates,
    )
}

fn parse_ratio(raw: &str) -> Result<f64, ToolError> {
    let t = raw.trim().to_lowercase();
    let t = t.strip_suffix("times").unwrap_or(&t).trim();
    let t = t.trim_start_matches('x').trim_end_matches('x').trim();
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ToolError::Invalid(format!("time stretch value {raw:?} is not a number")))
}

/// Changes playback speed (factor > 1 is faster) and rescales the tempo.
pub fn time_stretch(ctx: &ToolContext<'_>, asset: &str, value: &str) -> Result<ToolResult, ToolError> {
    let (source, buf) = load(ctx, asset)?;
    let factor = parse_ratio(value)?;
    if !(MIN_SPEED..=MAX_SPEED).contains(&factor) {
        return Err(ToolError::Invalid(format!(
            "time stretch value {factor} is outside [{MIN_SPEED}, {MAX_SPEED}]"
        )));
    }
    let bpm = ctx.gat.bpm.map(|b| scale_bpm(b, factor)).transpose()?;
    let out = time_stretch_buffer(&buf, factor)?;
    let updates = AttributeUpdates {
        bpm: bpm.map(|b| b.bpm),
        ..AttributeUpdates::default()
    };
    let tempo_note = match bpm {
        Some(b) if b.clamped => format!(", tempo clamped to {} bpm", format_bpm(b.bpm)),
        Some(b) => format!(", now {} bpm", format_bpm(b.bpm)),
        None => String::new(),
    };
    produced(
        ctx,
        &out,
        |path| format!("Changed the speed of {} by {factor}x{tempo_note}: {path}", source.relative_path),
        updates,
    )
}

/// Describes a loop; fills in the description only if none is recorded.
pub fn caption(ctx: &ToolContext<'_>, asset: &str) -> Result<ToolResult, ToolError> {
    let (source, buf) = load(ctx, asset)?;
    let text = ctx.backends.caption_audio(&buf).map_err(backend("captioning"))?;
    let updates = AttributeUpdates {
        description: ctx.gat.description.is_empty().then(|| text.clone()),
        ..AttributeUpdates::default()
    };
    Ok(ToolResult::ok(format!("{}: {text}", source.relative_path), None, updates))
}
