//! Dataset manifests and clip access.
//!
//! A manifest is a CSV of `(path, class, duration_secs)` rows next to the
//! audio it describes. Tests can also build datasets straight from
//! in-memory clips.

use crate::audio::{wav, AudioClip};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub path: String,
    pub class: usize,
    pub duration_secs: f64,
}

#[derive(Debug, Clone)]
enum ClipSource {
    /// Paths in entries resolve relative to this directory.
    Disk(PathBuf),
    Memory(Vec<AudioClip>),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    entries: Vec<ClipEntry>,
    source: ClipSource,
}

impl Dataset {
    pub fn from_manifest(manifest_path: &Path) -> Result<Self> {
        let base = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let mut reader = csv::Reader::from_path(manifest_path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", manifest_path.display())))?;
        let mut entries = Vec::new();
        for row in reader.deserialize() {
            let entry: ClipEntry =
                row.map_err(|e| Error::Manifest(format!("{}: {e}", manifest_path.display())))?;
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(Error::Manifest(format!(
                "{}: manifest lists no clips",
                manifest_path.display()
            )));
        }
        Ok(Self {
            entries,
            source: ClipSource::Disk(base),
        })
    }

    /// In-memory dataset; every clip must carry a label.
    pub fn from_clips(clips: Vec<AudioClip>) -> Result<Self> {
        let mut entries = Vec::with_capacity(clips.len());
        for (i, clip) in clips.iter().enumerate() {
            let class = clip.label.ok_or_else(|| {
                Error::Manifest(format!("in-memory clip {i} has no class label"))
            })?;
            entries.push(ClipEntry {
                path: String::new(),
                class,
                duration_secs: clip.duration_secs(),
            });
        }
        if entries.is_empty() {
            return Err(Error::Manifest("empty in-memory dataset".into()));
        }
        Ok(Self {
            entries,
            source: ClipSource::Memory(clips),
        })
    }

    pub fn entries(&self) -> &[ClipEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of classes, taken as `max class id + 1`.
    pub fn class_count(&self) -> usize {
        self.entries.iter().map(|e| e.class).max().map_or(0, |c| c + 1)
    }

    /// Clip indices per class id.
    pub fn by_class(&self) -> Vec<Vec<usize>> {
        let mut buckets = vec![Vec::new(); self.class_count()];
        for (i, e) in self.entries.iter().enumerate() {
            buckets[e.class].push(i);
        }
        buckets
    }

    pub fn load_clip(&self, index: usize) -> Result<AudioClip> {
        let entry = &self.entries[index];
        match &self.source {
            ClipSource::Memory(clips) => Ok(clips[index].clone()),
            ClipSource::Disk(base) => {
                let mut clip = wav::read_wav(&base.join(&entry.path))?;
                clip.label = Some(entry.class);
                Ok(clip)
            }
        }
    }
}

/// Writes a manifest CSV for entries already on disk.
pub fn write_manifest(path: &Path, entries: &[ClipEntry]) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    for e in entries {
        writer
            .serialize(e)
            .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
