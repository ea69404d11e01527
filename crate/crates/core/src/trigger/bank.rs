use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::audio::{load_wav, save_wav, AudioClip, CANONICAL_RATE};
use crate::error::{Error, Result};

use super::OverlayKind;

/// Name of the index file inside an overlay bank directory.
pub const INDEX_FILE: &str = "index.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayEntry {
    pub clip: AudioClip,
    pub kind: OverlayKind,
}

/// Named additive overlays (environmental noises and nonverbal affect
/// bursts), all canonical 16 kHz mono.
///
/// On disk: a directory of WAVs plus `index.txt` with one `id,path,kind`
/// line per entry (`#` starts a comment).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverlayBank {
    entries: BTreeMap<String, OverlayEntry>,
}

impl OverlayBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, clip: AudioClip, kind: OverlayKind) -> Result<()> {
        let id = id.into();
        if id.is_empty() || id.contains(',') || id.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("bad overlay id `{id}`")));
        }
        if clip.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if clip.sample_rate() != CANONICAL_RATE {
            return Err(Error::RateMismatch {
                expected: CANONICAL_RATE,
                got: clip.sample_rate(),
            });
        }
        self.entries.insert(id, OverlayEntry { clip, kind });
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&OverlayEntry> {
        self.entries
            .get(id)
            .ok_or_else(|| Error::UnknownOverlay(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let index_path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let mut bank = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [id, rel, kind] = fields.as_slice() else {
                return Err(Error::format(
                    index_path.display().to_string(),
                    format!("line {}: expected `id,path,kind`", lineno + 1),
                ));
            };
            let clip = load_wav(dir.join(rel))?;
            bank.insert(*id, clip, kind.parse()?)?;
        }
        if bank.is_empty() {
            return Err(Error::format(
                index_path.display().to_string(),
                "overlay bank has no entries",
            ));
        }
        Ok(bank)
    }

    /// Writes every entry as `<id>.wav` plus the index file.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = String::from("# id,path,kind\n");
        for (id, entry) in &self.entries {
            let file = format!("{id}.wav");
            save_wav(&entry.clip, dir.join(&file))?;
            index.push_str(&format!("{id},{file},{}\n", entry.kind.as_str()));
        }
        let index_path = dir.join(INDEX_FILE);
        fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))
    }
}
