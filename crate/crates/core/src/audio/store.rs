use std::collections::HashMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{decode_wav, encode_wav, AudioBuffer, AudioError, BitDepth};

/// Subdirectory of the asset root that holds every loop file.
pub const MUSIC_DIR: &str = "music";

/// Eight lowercase hex characters naming one stored loop.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AssetId(String);

impl AssetId {
    pub fn parse(s: &str) -> Option<Self> {
        let ok = s.len() == 8 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        ok.then(|| Self(s.to_owned()))
    }

    fn from_u32(v: u32) -> Self {
        Self(format!("{v:08x}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// `music/<id>.wav`
    pub fn relative_path(&self) -> String {
        format!("{MUSIC_DIR}/{}.wav", self.0)
    }

    /// Extracts the id from a `music/<id>.wav` reference.
    pub fn from_relative_path(path: &str) -> Option<Self> {
        path.strip_prefix("music/")
            .and_then(|rest| rest.strip_suffix(".wav"))
            .and_then(Self::parse)
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for AssetId {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value).ok_or_else(|| format!("invalid asset id {value:?}"))
    }
}

impl From<AssetId> for String {
    fn from(id: AssetId) -> Self {
        id.0
    }
}

/// A loop file recorded in an [`AssetStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioAsset {
    pub id: AssetId,
    pub relative_path: String,
    pub sample_rate: u32,
    pub channels: usize,
    pub duration_seconds: f64,
}

impl AudioAsset {
    fn describe(id: AssetId, buf: &AudioBuffer) -> Self {
        Self {
            relative_path: id.relative_path(),
            id,
            sample_rate: buf.sample_rate(),
            channels: buf.num_channels(),
            duration_seconds: buf.duration_seconds(),
        }
    }
}

/// How fresh asset ids are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdMode {
    /// Reproducible sequence for fixtures and replays.
    Seeded(u64),
    /// OS-seeded CSPRNG.
    Random,
}

struct Index {
    rng: Box<dyn RngCore + Send>,
    assets: HashMap<AssetId, AudioAsset>,
}

/// Append-only store of loop files under `<root>/music/<id>.wav`.
///
/// Files are written as 32-bit float WAV so a stored buffer loads back
/// bit-identical.
pub struct AssetStore {
    root: PathBuf,
    index: Mutex<Index>,
}

impl fmt::Debug for AssetStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AssetStore").field("root", &self.root).finish()
    }
}

impl AssetStore {
    /// Opens (creating if needed) the store rooted at `root` and indexes any
    /// loop files already present.
    pub fn open(root: impl Into<PathBuf>, mode: IdMode) -> Result<Self, AudioError> {
        let root = root.into();
        let music = root.join(MUSIC_DIR);
        fs::create_dir_all(&music)?;

        let mut assets = HashMap::new();
        for entry in fs::read_dir(&music)? {
            let entry = entry?;
            let name = entry.file_name();
            let Some(id) = name
                .to_str()
                .and_then(|n| n.strip_suffix(".wav"))
                .and_then(AssetId::parse)
            else {
                continue;
            };
            match fs::read(entry.path()).map_err(AudioError::from).and_then(|b| decode_wav(&b)) {
                Ok(buf) => {
                    assets.insert(id.clone(), AudioAsset::describe(id, &buf));
                }
                Err(e) => tracing::warn!(file = ?entry.path(), error = %e, "skipping unreadable asset"),
            }
        }

        let rng: Box<dyn RngCore + Send> = match mode {
            IdMode::Seeded(seed) => Box::new(ChaCha8Rng::seed_from_u64(seed)),
            IdMode::Random => Box::new(StdRng::from_os_rng()),
        };
        Ok(Self {
            root,
            index: Mutex::new(Index { rng, assets }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `buf` under a fresh id. Existing files are never overwritten.
    pub fn store(&self, buf: &AudioBuffer) -> Result<AudioAsset, AudioError> {
        let bytes = encode_wav(buf, BitDepth::Float32)?;
        let mut index = self.index.lock();
        loop {
            let id = AssetId::from_u32(index.rng.random());
            if index.assets.contains_key(&id) {
                continue;
            }
            let path = self.root.join(id.relative_path());
            let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(f) => f,
                // Written by someone else since we indexed; draw again.
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            };
            file.write_all(&bytes)?;
            file.sync_data()?;
            let asset = AudioAsset::describe(id.clone(), buf);
            index.assets.insert(id, asset.clone());
            return Ok(asset);
        }
    }

    /// Decodes and stores an uploaded WAV file.
    pub fn import_wav(&self, bytes: &[u8]) -> Result<AudioAsset, AudioError> {
        let buf = decode_wav(bytes)?;
        self.store(&buf)
    }

    /// Exact lookup of a `music/<id>.wav` reference.
    pub fn resolve(&self, relative_path: &str) -> Result<AudioAsset, AudioError> {
        AssetId::from_relative_path(relative_path)
            .and_then(|id| self.index.lock().assets.get(&id).cloned())
            .ok_or_else(|| AudioError::UnknownAsset(relative_path.to_owned()))
    }

    pub fn contains(&self, asset: &AudioAsset) -> bool {
        self.index.lock().assets.contains_key(&asset.id)
    }

    pub fn load(&self, asset: &AudioAsset) -> Result<AudioBuffer, AudioError> {
        if !self.contains(asset) {
            return Err(AudioError::UnknownAsset(asset.relative_path.clone()));
        }
        let bytes = fs::read(self.path_of(asset))?;
        decode_wav(&bytes)
    }

    /// Raw file bytes of a stored asset.
    pub fn read_bytes(&self, asset: &AudioAsset) -> Result<Vec<u8>, AudioError> {
        if !self.contains(asset) {
            return Err(AudioError::UnknownAsset(asset.relative_path.clone()));
        }
        Ok(fs::read(self.path_of(asset))?)
    }

    pub fn path_of(&self, asset: &AudioAsset) -> PathBuf {
        self.root.join(&asset.relative_path)
    }

    pub fn len(&self) -> usize {
        self.index.lock().assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use regex::Regex;
    use std::collections::HashSet;

    fn tone() -> AudioBuffer {
        let s: Vec<f32> = (0..4410).map(|i| (i as f32 * 0.05).sin() * 0.3).collect();
        AudioBuffer::stereo_from_mono(s, 44_100).unwrap()
    }

    #[test]
    fn same_buffer_twice_gets_two_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path(), IdMode::Seeded(7)).unwrap();
        let a = store.store(&tone()).unwrap();
        let b = store.store(&tone()).unwrap();
        assert_ne!(a.id, b.id);
        assert!(dir.path().join(&a.relative_path).is_file());
        assert!(dir.path().join(&b.relative_path).is_file());
    }

    #[test]
    fn ids_have_the_canonical_shape() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path(), IdMode::Random).unwrap();
        let re = Regex::new(r"^[0-9a-f]{8}$").unwrap();
        let asset = store.store(&tone()).unwrap();
        assert!(re.is_match(asset.id.as_str()));
        assert_eq!(asset.relative_path, format!("music/{}.wav", asset.id));
    }

    #[test]
    fn load_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path(), IdMode::Seeded(1)).unwrap();
        let asset = store.store(&tone()).unwrap();
        assert_eq!(store.load(&asset).unwrap(), tone());
        assert!((asset.duration_seconds - 0.1).abs() < 1e-9);
    }

    #[test]
    fn no_id_reuse_over_ten_thousand_stores() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path(), IdMode::Seeded(99)).unwrap();
        let tiny = AudioBuffer::mono(vec![0.0], 8_000).unwrap();
        let mut seen = HashSet::new();
        for _ in 0..10_000 {
            assert!(seen.insert(store.store(&tiny).unwrap().id));
        }
    }

    #[test]
    fn seeded_ids_are_reproducible_and_reopen_indexes_files() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let s1 = AssetStore::open(d1.path(), IdMode::Seeded(5)).unwrap();
        let s2 = AssetStore::open(d2.path(), IdMode::Seeded(5)).unwrap();
        let a1 = s1.store(&tone()).unwrap();
        assert_eq!(a1.id, s2.store(&tone()).unwrap().id);

        drop(s1);
        let reopened = AssetStore::open(d1.path(), IdMode::Seeded(5)).unwrap();
        assert_eq!(reopened.resolve(&a1.relative_path).unwrap(), a1);
        // Same seed again, but the first id is taken on disk.
        assert_ne!(reopened.store(&tone()).unwrap().id, a1.id);
    }

    #[test]
    fn resolve_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path(), IdMode::Seeded(3)).unwrap();
        let asset = store.store(&tone()).unwrap();
        assert!(store.resolve(&asset.relative_path).is_ok());
        assert!(store.resolve("music/deadbeef.wav").is_err());
        assert!(store.resolve(&format!(" {}", asset.relative_path)).is_err());
        assert!(store.resolve(&format!("./{}", asset.relative_path)).is_err());
    }
}
