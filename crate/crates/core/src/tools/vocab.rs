//! Attribute extraction from free-text descriptions by fixed vocabularies.

use std::sync::OnceLock;

use regex::Regex;

use crate::gat::{AttributeUpdates, Key, MAX_BPM, MIN_BPM};

const GENRES: &[&str] = &[
    "rock", "pop", "jazz", "blues", "funk", "hip hop", "hip-hop", "rap", "r&b", "soul", "electronic",
    "edm", "house", "techno", "trance", "drum and bass", "dubstep", "ambient", "classical", "country",
    "folk", "metal", "punk", "reggae", "latin", "bossa nova", "disco", "lo-fi", "lofi", "trap",
    "gospel", "swing", "orchestral", "cinematic", "indie", "grunge", "ska", "synthwave",
];

const MOODS: &[&str] = &[
    "smooth", "happy", "sad", "uplifting", "melancholic", "energetic", "calm", "relaxing", "relaxed",
    "chill", "dark", "bright", "aggressive", "romantic", "dreamy", "epic", "mellow", "upbeat",
    "peaceful", "groovy", "tense", "joyful", "nostalgic", "funky", "gentle", "angry", "hopeful",
];

/// Instrument terms and their canonical spelling.
const INSTRUMENTS: &[(&str, &str)] = &[
    ("acoustic guitar", "acoustic guitar"),
    ("electric guitar", "electric guitar"),
    ("bass guitar", "bass guitar"),
    ("guitar", "guitar"),
    ("bass", "bass"),
    ("snare drums", "snare drums"),
    ("snare drum", "snare drums"),
    ("snare", "snare drums"),
    ("kick drum", "kick drum"),
    ("hi-hats", "hi-hats"),
    ("hi-hat", "hi-hats"),
    ("drum kit", "drums"),
    ("drums", "drums"),
    ("percussion", "percussion"),
    ("electric piano", "electric piano"),
    ("piano", "piano"),
    ("keyboard", "keyboard"),
    ("synthesizer", "synth"),
    ("synth", "synth"),
    ("organ", "organ"),
    ("saxophone", "saxophone"),
    ("sax", "saxophone"),
    ("trumpet", "trumpet"),
    ("trombone", "trombone"),
    ("violin", "violin"),
    ("viola", "viola"),
    ("cello", "cello"),
    ("strings", "strings"),
    ("flute", "flute"),
    ("clarinet", "clarinet"),
    ("harp", "harp"),
    ("ukulele", "ukulele"),
    ("banjo", "banjo"),
    ("mandolin", "mandolin"),
    ("vocals", "vocals"),
    ("choir", "choir"),
    ("harmonica", "harmonica"),
    ("accordion", "accordion"),
    ("xylophone", "xylophone"),
    ("marimba", "marimba"),
    ("vibraphone", "vibraphone"),
    ("bells", "bells"),
    ("tabla", "tabla"),
    ("sitar", "sitar"),
];

/// Words skipped when guessing an instrument outside the vocabulary.
const FILLER: &[&str] = &[
    "new", "solo", "track", "part", "line", "layer", "some", "more", "the", "a", "an", "nice", "little",
    "cool", "simple", "extra", "another",
];

/// Attributes recognised in a text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    pub genre: Option<String>,
    pub mood: Option<String>,
    pub instruments: Vec<String>,
    pub bpm: Option<f64>,
    pub key: Option<String>,
}

impl Vocabulary {
    /// Scalar fields plus `instruments` as a full replacement list.
    pub fn into_updates(self) -> AttributeUpdates {
        AttributeUpdates {
            genre: self.genre,
            mood: self.mood,
            bpm: self.bpm,
            key: self.key,
            instruments: Some(self.instruments),
            ..AttributeUpdates::default()
        }
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'&'
}

/// Whether `text[at..at+len]` is bounded by non-word characters.
fn bounded(text: &str, at: usize, len: usize) -> bool {
    let bytes = text.as_bytes();
    let before = at == 0 || !is_word_byte(bytes[at - 1]);
    let after = at + len >= bytes.len() || !is_word_byte(bytes[at + len]);
    before && after
}

/// Earliest whole-word occurrence of any term; ties go to the longer term.
fn first_term<'a>(text: &str, terms: &[&'a str]) -> Option<&'a str> {
    let mut best: Option<(usize, usize, &str)> = None;
    for term in terms {
        let mut from = 0;
        while let Some(pos) = text[from..].find(term) {
            let at = from + pos;
            if bounded(text, at, term.len()) {
                let better = match best {
                    None => true,
                    Some((b_at, b_len, _)) => at < b_at || (at == b_at && term.len() > b_len),
                };
                if better {
                    best = Some((at, term.len(), term));
                }
                break;
            }
            from = at + term.len();
        }
    }
    best.map(|(_, _, t)| t)
}

/// All instruments in order of appearance, longest match first, deduplicated.
fn instruments_in(text: &str) -> Vec<String> {
    let mut found = Vec::new();
    let mut i = 0;
    let bytes = text.as_bytes();
    while i < bytes.len() {
        if i > 0 && is_word_byte(bytes[i - 1]) {
            i += 1;
            continue;
        }
        let hit = INSTRUMENTS
            .iter()
            .filter(|(term, _)| text[i..].starts_with(term) && bounded(text, i, term.len()))
            .max_by_key(|(term, _)| term.len());
        match hit {
            Some((term, canonical)) => {
                if !found.iter().any(|f: &String| f == canonical) {
                    found.push((*canonical).to_owned());
                }
                i += term.len();
            }
            None => i += 1,
        }
        while i < bytes.len() && !text.is_char_boundary(i) {
            i += 1;
        }
    }
    found
}

fn bpm_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d{2,3}(?:\.\d+)?)\s*bpm\b").expect("static regex"))
}

fn key_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b([A-G])\s*(#|♯|b|♭|-flat|-sharp| flat| sharp)?\s*(major|minor|maj|min)\b").expect("static regex")
    })
}

/// Recognises genre, mood, instruments, tempo (`N bpm`) and key in `text`.
pub fn extract_attributes(text: &str) -> Vocabulary {
    let lower = text.to_lowercase();
    let bpm = bpm_regex()
        .captures(&lower)
        .and_then(|c| c[1].parse::<f64>().ok())
        .filter(|b| (MIN_BPM..=MAX_BPM).contains(b));
    let key = key_regex().captures(text).and_then(|c| {
        let accidental = c.get(2).map(|m| m.as_str().trim_start_matches(['-', ' '])).unwrap_or("");
        let spelled = format!("{}{} {}", &c[1], accidental, &c[3]);
        spelled.parse::<Key>().ok().map(|k| k.to_string())
    });
    Vocabulary {
        genre: first_term(&lower, GENRES).map(str::to_owned),
        mood: first_term(&lower, MOODS).map(str::to_owned),
        instruments: instruments_in(&lower),
        bpm,
        key,
    }
}

/// The instrument a track request asks for.
///
/// A known instrument term wins; otherwise the last non-filler word between
/// "add a/an/some" and "to"/"track" is taken.
pub fn extract_instrument(request: &str) -> Option<String> {
    let lower = request.to_lowercase();
    if let Some(first) = instruments_in(&lower).into_iter().next() {
        return Some(first);
    }
    let start = lower.find("add ")? + 4;
    let tail = &lower[start..];
    let stop = [" to ", " track", " into ", " on ", ",", "."]
        .iter()
        .filter_map(|s| tail.find(s))
        .min()
        .unwrap_or(tail.len());
    tail[..stop]
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .rfind(|w| !w.is_empty() && !FILLER.contains(w))
        .map(str::to_owned)
}
