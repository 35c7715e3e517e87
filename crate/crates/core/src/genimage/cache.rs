//! On-disk image cache: `<cache_dir>/<dataset>/<split>/<sample_id>.png` plus
//! `<cache_dir>/<dataset>/index.json`.
//!
//! Each PNG carries its fingerprint in a `tEXt` chunk, so a cached file can be
//! validated without consulting the index. Files and the index are written to
//! a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GenerateError, GeneratedImage, ImageSize};
use crate::corpus::Split;

pub const FINGERPRINT_KEY: &str = "genpriv-fingerprint";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub split: Split,
    /// Relative to the dataset directory.
    pub path: PathBuf,
    pub fingerprint: String,
}

/// Snapshot of the generator configuration an index was built with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSnapshot {
    pub backend: String,
    pub version: String,
    pub deterministic: bool,
    pub seed: u64,
    pub size: ImageSize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageIndex {
    pub dataset: String,
    pub generator: GeneratorSnapshot,
    pub entries: BTreeMap<String, IndexEntry>,
}

impl ImageIndex {
    pub fn new(dataset: impl Into<String>, generator: GeneratorSnapshot) -> Self {
        Self { dataset: dataset.into(), generator, entries: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&IndexEntry> {
        self.entries.get(sample_id)
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.entries.contains_key(sample_id)
    }
}

/// Cache rooted at `<cache_dir>/<dataset>`.
#[derive(Debug, Clone)]
pub struct ImageCache {
    root: PathBuf,
}

fn file_stem(sample_id: &str) -> String {
    let safe: String = sample_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if safe == sample_id && !safe.starts_with('.') && !safe.is_empty() {
        safe
    } else {
        // keep distinct ids distinct after sanitizing
        let h = hex::encode(Sha256::digest(sample_id.as_bytes()));
        format!("{safe}-{}", &h[..10])
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), GenerateError> {
    let dir = path.parent().expect("cache paths have a parent");
    fs::create_dir_all(dir).map_err(|e| GenerateError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| GenerateError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| GenerateError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| GenerateError::io(path, e))?;
    tmp.persist(path).map_err(|e| GenerateError::io(path, e.error))?;
    Ok(())
}

pub fn encode_png(pixels: &RgbImage, fingerprint: &str) -> Result<Vec<u8>, GenerateError> {
    let protocol = |e: png::EncodingError| GenerateError::Protocol(format!("png encoding: {e}"));
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, pixels.width(), pixels.height());
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk(FINGERPRINT_KEY.into(), fingerprint.into()).map_err(protocol)?;
    let mut writer = enc.write_header().map_err(protocol)?;
    writer.write_image_data(pixels.as_raw()).map_err(protocol)?;
    writer.finish().map_err(protocol)?;
    Ok(out)
}

/// Decodes a cached PNG; returns its fingerprint and, when `want` is `None` or
/// matches, its pixels.
fn decode_png(path: &Path, bytes: &[u8], want: Option<&str>) -> Result<(String, Option<RgbImage>), GenerateError> {
    let integrity = |reason: String| GenerateError::Integrity { path: path.to_path_buf(), reason };
    let mut reader =
        png::Decoder::new(Cursor::new(bytes)).read_info().map_err(|e| integrity(format!("unreadable header: {e}")))?;
    let info = reader.info();
    let fingerprint = info
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == FINGERPRINT_KEY)
        .map(|c| c.text.clone())
        .ok_or_else(|| integrity("no fingerprint chunk".into()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(integrity(format!("unexpected pixel format {:?}/{:?}", info.color_type, info.bit_depth)));
    }
    let (w, h) = (info.width, info.height);
    if want.is_some_and(|f| f != fingerprint) {
        return Ok((fingerprint, None));
    }
    let len = reader.output_buffer_size().ok_or_else(|| integrity("image too large".into()))?;
    let mut buf = vec![0u8; len];
    let frame = reader.next_frame(&mut buf).map_err(|e| integrity(format!("truncated or corrupt data: {e}")))?;
    buf.truncate(frame.buffer_size());
    reader.finish().map_err(|e| integrity(format!("truncated trailer: {e}")))?;
    let img = RgbImage::from_raw(w, h, buf).ok_or_else(|| integrity("pixel buffer size mismatch".into()))?;
    Ok((fingerprint, Some(img)))
}

impl ImageCache {
    pub fn new(cache_dir: &Path, dataset: &str) -> Self {
        Self { root: cache_dir.join(file_stem(dataset)) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn relative_path(split: Split, sample_id: &str) -> PathBuf {
        PathBuf::from(split.as_str()).join(format!("{}.png", file_stem(sample_id)))
    }

    pub fn path_for(&self, split: Split, sample_id: &str) -> PathBuf {
        self.root.join(Self::relative_path(split, sample_id))
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join(INDEX_FILE)
    }

    /// Writes the image atomically and returns the index entry for it.
    pub fn store(&self, split: Split, image: &GeneratedImage) -> Result<IndexEntry, GenerateError> {
        let path = self.path_for(split, &image.sample_id);
        write_atomic(&path, &encode_png(&image.pixels, &image.fingerprint)?)?;
        Ok(IndexEntry {
            split,
            path: Self::relative_path(split, &image.sample_id),
            fingerprint: image.fingerprint.clone(),
        })
    }

    /// Cached image for `sample_id` iff one exists with exactly `fingerprint`.
    /// A stale fingerprint is a miss; an unreadable file is an integrity error.
    pub fn lookup(&self, split: Split, sample_id: &str, fingerprint: &str) -> Result<Option<GeneratedImage>, GenerateError> {
        let path = self.path_for(split, sample_id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GenerateError::io(path, e)),
        };
        let (found, pixels) = decode_png(&path, &bytes, Some(fingerprint))?;
        Ok(pixels.map(|pixels| GeneratedImage { sample_id: sample_id.to_string(), pixels, fingerprint: found }))
    }

    /// Loads the image behind an index entry, verifying its fingerprint.
    pub fn load(&self, sample_id: &str, entry: &IndexEntry) -> Result<RgbImage, GenerateError> {
        let path = self.root.join(&entry.path);
        let bytes = fs::read(&path).map_err(|e| GenerateError::io(&path, e))?;
        match decode_png(&path, &bytes, Some(&entry.fingerprint))? {
            (_, Some(img)) => Ok(img),
            (found, None) => Err(GenerateError::Integrity {
                path,
                reason: format!("sample {sample_id}: fingerprint {found} does not match index {}", entry.fingerprint),
            }),
        }
    }

    pub fn write_index(&self, index: &ImageIndex) -> Result<(), GenerateError> {
        let path = self.index_path();
        let mut json = serde_json::to_vec_pretty(index).expect("index serializes");
        json.push(b'\n');
        write_atomic(&path, &json)
    }

    pub fn read_index(&self) -> Result<Option<ImageIndex>, GenerateError> {
        let path = self.index_path();
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| GenerateError::Integrity { path, reason: e.to_string() }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(GenerateError::io(path, e)),
        }
    }
}

/// Free-function form of [`ImageCache::lookup`].
pub fn cache_lookup(
    cache: &ImageCache,
    split: Split,
    sample_id: &str,
    fingerprint: &str,
) -> Result<Option<GeneratedImage>, GenerateError> {
    cache.lookup(split, sample_id, fingerprint)
}
