use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use super::decode::is_image;
use super::{Label, VideoSample};
use crate::error::{Error, IoContext, Result};

/// Manifest file looked for in the dataset root.
pub const MANIFEST_FILE: &str = "manifest.csv";

const VIDEO_EXTENSIONS: &[&str] = &[
    "y4m", "gif", "mp4", "avi", "mov", "mkv", "webm", "mpg", "mpeg", "m4v", "wmv", "flv", "3gp",
];

/// Maps class directory names to labels.
#[derive(Clone, Debug)]
pub struct LabelRule {
    pub directories: BTreeMap<String, Label>,
}

impl Default for LabelRule {
    fn default() -> Self {
        let mut directories = BTreeMap::new();
        directories.insert("Violence".to_string(), Label::Violent);
        directories.insert("NonViolence".to_string(), Label::NonViolent);
        Self { directories }
    }
}

#[derive(serde::Deserialize, serde::Serialize)]
struct Row {
    id: String,
    path: String,
    label: String,
}

/// Discover the videos under `root`: from `root/manifest.csv` when present,
/// otherwise one subdirectory per class. Ids are relative paths with `/`
/// separators, so they are stable across machines.
pub fn load_manifest(root: &Path, rule: &LabelRule) -> Result<Vec<VideoSample>> {
    if !root.is_dir() {
        return Err(Error::Config(format!("dataset root {} is not a directory", root.display())));
    }
    let manifest = root.join(MANIFEST_FILE);
    let samples = if manifest.is_file() {
        read_manifest_file(root, &manifest)?
    } else {
        scan_directories(root, rule)?
    };
    if samples.is_empty() {
        log::warn!("no videos found under {}", root.display());
    }
    let mut seen = HashSet::new();
    for s in &samples {
        if !seen.insert(&s.id) {
            return Err(Error::Config(format!("duplicate video id {}", s.id)));
        }
    }
    Ok(samples)
}

fn read_manifest_file(root: &Path, manifest: &Path) -> Result<Vec<VideoSample>> {
    let mut reader = csv::Reader::from_path(manifest)?;
    let mut samples = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        let label: Label = row.label.parse().map_err(|_| {
            Error::Config(format!(
                "{}: video {} has unmappable label {:?}",
                manifest.display(),
                row.path,
                row.label
            ))
        })?;
        let path = PathBuf::from(&row.path);
        let path = if path.is_absolute() { path } else { root.join(path) };
        samples.push(VideoSample {
            id: row.id,
            path,
            label,
            frame_count: None,
        });
    }
    Ok(samples)
}

fn is_video(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| VIDEO_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn is_frame_dir(path: &Path) -> Result<bool> {
    if !path.is_dir() {
        return Ok(false);
    }
    Ok(std::fs::read_dir(path)
        .at(path)?
        .filter_map(|e| e.ok())
        .any(|e| is_image(&e.path())))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')))
        .collect();
    entries.sort();
    Ok(entries)
}

fn scan_directories(root: &Path, rule: &LabelRule) -> Result<Vec<VideoSample>> {
    let mut samples = Vec::new();
    for entry in sorted_entries(root)? {
        let name = entry.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if entry.is_file() {
            if is_video(&entry) {
                return Err(Error::Config(format!(
                    "video {} is not inside a class directory ({}); cannot map its label",
                    entry.display(),
                    rule.directories.keys().cloned().collect::<Vec<_>>().join(", ")
                )));
            }
            continue;
        }
        let Some(&label) = rule.directories.get(&name) else {
            let stray: Vec<PathBuf> = sorted_entries(&entry)?.into_iter().filter(|p| is_video(p)).collect();
            if let Some(first) = stray.first() {
                return Err(Error::Config(format!(
                    "video {} is in unknown class directory {name:?}; cannot map its label",
                    first.display()
                )));
            }
            log::debug!("ignoring directory {}", entry.display());
            continue;
        };
        for video in sorted_entries(&entry)? {
            if is_video(&video) || is_frame_dir(&video)? {
                let file = video.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                samples.push(VideoSample {
                    id: format!("{name}/{file}"),
                    path: video,
                    label,
                    frame_count: None,
                });
            } else {
                log::warn!("skipping {}: not a recognised video", video.display());
            }
        }
    }
    Ok(samples)
}

/// Write samples as a manifest CSV (`id,path,label`); paths are written
/// relative to `root` when possible.
pub fn write_manifest(samples: &[VideoSample], root: &Path, out: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(out)?;
    for s in samples {
        let path = s.path.strip_prefix(root).unwrap_or(&s.path);
        writer.serialize(Row {
            id: s.id.clone(),
            path: path.to_string_lossy().replace('\\', "/"),
            label: s.label.as_str().to_string(),
        })?;
    }
    writer.flush().at(out)
}
