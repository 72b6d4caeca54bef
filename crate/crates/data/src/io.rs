//! On-disk corpus: `manifest.json`, `vocab.txt`, and one binary file per clip.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clip::{Clip, Corpus, Split};
use crate::render::NUM_KEYPOINTS;
use crate::DataError;

pub const CLIP_MAGIC: &[u8; 8] = b"STMCCLIP";
pub const CLIP_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub canvas: usize,
    pub keypoints: usize,
    pub vocabulary: Vec<String>,
    pub clips: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub frames: usize,
    pub glosses: Vec<String>,
    /// CRC-32 of the clip file, lowercase hex.
    pub checksum: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

pub fn encode_clip(clip: &Clip) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * (clip.frames.len() + clip.keypoints.len()));
    out.extend_from_slice(CLIP_MAGIC);
    for v in [CLIP_VERSION, clip.len() as u32, clip.size as u32, NUM_KEYPOINTS as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in clip.frames.iter().chain(&clip.keypoints) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse a clip payload; returns (T, S, frames, keypoints).
pub fn decode_clip(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>, Vec<f32>), DataError> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != CLIP_MAGIC {
        return Err(DataError::BadHeader { path: path.to_path_buf(), detail: "missing STMCCLIP magic".into() });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (version, t, s, k) = (word(0) as u32, word(1), word(2), word(3));
    if version != CLIP_VERSION {
        return Err(DataError::BadHeader { path: path.to_path_buf(), detail: format!("unsupported version {version}") });
    }
    if k != NUM_KEYPOINTS || s == 0 || t == 0 {
        return Err(DataError::BadHeader { path: path.to_path_buf(), detail: format!("bad dims T={t} S={s} K={k}") });
    }
    let nf = t * 3 * s * s;
    let nk = t * k * 2;
    let expected = HEADER_LEN + 4 * (nf + nk);
    if bytes.len() != expected {
        return Err(DataError::Truncated { path: path.to_path_buf(), expected, found: bytes.len() });
    }
    let floats: Vec<f32> =
        bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let (frames, kps) = floats.split_at(nf);
    Ok((t, s, frames.to_vec(), kps.to_vec()))
}

fn clip_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("clips").join(format!("{id}.bin"))
}

pub fn write_dataset(corpus: &Corpus, dir: &Path) -> Result<Manifest, DataError> {
    let size = corpus.clips.first().map_or(0, |c| c.size);
    fs::create_dir_all(dir.join("clips")).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(corpus.clips.len());
    for clip in &corpus.clips {
        if clip.size != size {
            return Err(DataError::ShapeMismatch { id: clip.id.clone(), detail: "mixed canvas sizes".into() });
        }
        let glosses = clip
            .glosses
            .iter()
            .map(|&g| corpus.vocabulary.get(g).cloned().ok_or(DataError::UnknownGloss(g)))
            .collect::<Result<_, _>>()?;
        let bytes = encode_clip(clip);
        let path = clip_path(dir, &clip.id);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        entries.push(ManifestEntry {
            id: clip.id.clone(),
            split: clip.split,
            frames: clip.len(),
            glosses,
            checksum: format!("{:08x}", crc32fast::hash(&bytes)),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        canvas: size,
        keypoints: NUM_KEYPOINTS,
        vocabulary: corpus.vocabulary.clone(),
        clips: entries,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(io_err(&path))?;
    let path = dir.join("vocab.txt");
    fs::write(&path, corpus.vocabulary.join("\n") + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DataError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(DataError::Manifest(format!("unsupported manifest version {}", manifest.version)));
    }
    let path = dir.join("vocab.txt");
    let vocab = fs::read_to_string(&path).map_err(io_err(&path))?;
    let vocab: Vec<&str> = vocab.lines().filter(|l| !l.trim().is_empty()).collect();
    if vocab != manifest.vocabulary {
        return Err(DataError::VocabularyMismatch(format!(
            "vocab.txt has {} entries, manifest {}",
            vocab.len(),
            manifest.vocabulary.len()
        )));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Corpus, DataError> {
    let manifest = read_manifest(dir)?;
    let mut clips = Vec::with_capacity(manifest.clips.len());
    for e in &manifest.clips {
        let path = clip_path(dir, &e.id);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let (t, s, frames, keypoints) = decode_clip(&bytes, &path)?;
        let found = format!("{:08x}", crc32fast::hash(&bytes));
        if found != e.checksum {
            return Err(DataError::Checksum { id: e.id.clone(), expected: e.checksum.clone(), found });
        }
        if t != e.frames || s != manifest.canvas {
            return Err(DataError::ShapeMismatch {
                id: e.id.clone(),
                detail: format!("file has T={t} S={s}, manifest T={} S={}", e.frames, manifest.canvas),
            });
        }
        let glosses = e
            .glosses
            .iter()
            .map(|g| {
                manifest.vocabulary.iter().position(|v| v == g).ok_or_else(|| {
                    DataError::VocabularyMismatch(format!("clip {} uses unknown gloss '{g}'", e.id))
                })
            })
            .collect::<Result<_, _>>()?;
        clips.push(Clip { id: e.id.clone(), split: e.split, size: s, frames, keypoints, glosses });
    }
    Ok(Corpus { vocabulary: manifest.vocabulary, clips })
}
