use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GatError;

/// Largest transposition accepted, in semitones either way.
pub const MAX_TRANSPOSE: i32 = 24;

const SPELLING: [&str; 12] = [
    "C", "D♭", "D", "E♭", "E", "F", "F♯", "G", "A♭", "A", "B♭", "B",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Major => "major",
            Mode::Minor => "minor",
        })
    }
}

/// Tonic pitch class (0 = C) plus mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Key {
    pitch_class: u8,
    mode: Mode,
}

impl Key {
    pub fn new(pitch_class: u8, mode: Mode) -> Self {
        Self {
            pitch_class: pitch_class % 12,
            mode,
        }
    }

    pub fn pitch_class(&self) -> u8 {
        self.pitch_class
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Every key this type can represent.
    pub fn all() -> impl Iterator<Item = Key> {
        [Mode::Major, Mode::Minor]
            .into_iter()
            .flat_map(|m| (0..12).map(move |pc| Key::new(pc, m)))
    }

    /// Moves the tonic by `semitones`, keeping the mode.
    pub fn transposed(&self, semitones: i32) -> Result<Key, GatError> {
        if semitones.abs() > MAX_TRANSPOSE {
            return Err(GatError::TransposeRange(semitones));
        }
        let pc = (self.pitch_class as i32 + semitones).rem_euclid(12) as u8;
        Ok(Key::new(pc, self.mode))
    }
}

/// Transposes an optional key; an unset key stays unset.
pub fn transpose_key(key: Option<Key>, semitones: i32) -> Result<Option<Key>, GatError> {
    if semitones.abs() > MAX_TRANSPOSE {
        return Err(GatError::TransposeRange(semitones));
    }
    key.map(|k| k.transposed(semitones)).transpose()
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", SPELLING[self.pitch_class as usize], self.mode)
    }
}

fn letter_class(c: char) -> Option<i32> {
    Some(match c.to_ascii_uppercase() {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return None,
    })
}

impl FromStr for Key {
    type Err = GatError;

    /// Accepts spellings such as `E♭ major`, `Eb major`, `F# minor`, `g`,
    /// `C sharp minor`. A bare tonic means major.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GatError::UnknownKey(s.to_owned());
        let lower = s.trim().to_lowercase();
        let mut words: Vec<&str> = lower.split_whitespace().collect();
        if words.is_empty() {
            return Err(bad());
        }

        let mode = match words.last().copied() {
            Some("major") | Some("maj") => {
                words.pop();
                Mode::Major
            }
            Some("minor") | Some("min") => {
                words.pop();
                Mode::Minor
            }
            _ => Mode::Major,
        };

        let mut tonic: String = words.concat();
        for (word, sym) in [("sharp", "#"), ("flat", "b")] {
            if let Some(stripped) = tonic.strip_suffix(word) {
                tonic = format!("{stripped}{sym}");
            }
        }
        let mut chars = tonic.chars();
        let letter = chars.next().ok_or_else(bad)?;
        let mut pc = letter_class(letter).ok_or_else(bad)?;
        for c in chars {
            match c {
                '#' | '♯' => pc += 1,
                'b' | '♭' => pc -= 1,
                _ => return Err(bad()),
            }
        }
        Ok(Key::new(pc.rem_euclid(12) as u8, mode))
    }
}

impl TryFrom<String> for Key {
    type Error = GatError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Key> for String {
    fn from(k: Key) -> Self {
        k.to_string()
    }
}
