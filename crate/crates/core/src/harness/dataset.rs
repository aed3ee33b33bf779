//! LUSV1 clip container.
//!
//! Binary file, little-endian:
//!
//! ```text
//! "LUSV1"  u32 clip_count
//! per clip: u32 T, u32 H, u32 W, u8 representation (0 Cartesian, 1 polar),
//!           T*H*W f32 pixels, frame-major then row-major
//! ```
//!
//! A JSON manifest sits next to it (`<file>.json`) with per-clip labels and
//! geometry, the generating configuration and seed, and the FNV-1a 64 hash of
//! the binary file.

use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fs;
use crate::geometry::FrustumGeometry;
use crate::rng::RNG_ID;
use crate::synthgen::{generate_dataset, ClipLabels, PhantomConfig, Representation, VideoClip};

pub const MAGIC: &[u8; 5] = b"LUSV1";
pub const GENERATOR_VERSION: &str = concat!("bline-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub geometry: FrustumGeometry,
    pub labels: ClipLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub generator_version: String,
    pub rng: String,
    /// Master seed, when the clips were generated.
    pub seed: Option<u64>,
    pub phantom: Option<PhantomConfig>,
    /// FNV-1a 64 of the binary file, lowercase hex.
    pub checksum: String,
    pub clips: Vec<ClipEntry>,
}

/// Clips, their labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub clips: Vec<VideoClip>,
    pub labels: Vec<ClipLabels>,
    pub seed: Option<u64>,
    pub phantom: Option<PhantomConfig>,
}

impl Dataset {
    pub fn generate(phantom: &PhantomConfig, n_clips: usize, seed: u64) -> Result<Self> {
        let (clips, labels) = generate_dataset(phantom, n_clips, seed)?.into_iter().unzip();
        Ok(Self {
            clips,
            labels,
            seed: Some(seed),
            phantom: Some(phantom.clone()),
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn class_labels(&self) -> Vec<bool> {
        self.labels.iter().map(ClipLabels::is_bline).collect()
    }

    /// FNV-1a 64 of the encoded binary; identical clips give identical
    /// fingerprints.
    pub fn fingerprint(&self) -> String {
        checksum_hex(&encode_clips(&self.clips))
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

fn checksum_hex(bytes: &[u8]) -> String {
    let mut h = FnvHasher::default();
    h.write(bytes);
    format!("{:016x}", h.finish())
}

fn encode_clips(clips: &[VideoClip]) -> Vec<u8> {
    let payload: usize = clips.iter().map(|c| 13 + 4 * c.n_frames() * c.height * c.width).sum();
    let mut out = Vec::with_capacity(9 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(clips.len() as u32).to_le_bytes());
    for c in clips {
        for v in [c.n_frames(), c.height, c.width] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(c.representation.flag());
        for f in &c.frames {
            for p in f {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(field, format!("truncated at byte {}", self.bytes.len())))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }
}

struct RawClip {
    representation: Representation,
    height: usize,
    width: usize,
    frames: Vec<Vec<f32>>,
}

fn decode_clips(bytes: &[u8], entries: &[ClipEntry]) -> Result<Vec<RawClip>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::format("magic", "not a LUSV1 file"));
    }
    let count = r.u32("clip_count")? as usize;
    if count != entries.len() {
        return Err(Error::format(
            "clip_count",
            format!("binary holds {count} clips, manifest lists {}", entries.len()),
        ));
    }
    let mut clips = Vec::with_capacity(count);
    for (i, entry) in entries.iter().enumerate() {
        let field = format!("clip[{i}]");
        let t = r.u32(&format!("{field}.frames"))? as usize;
        let h = r.u32(&format!("{field}.height"))? as usize;
        let w = r.u32(&format!("{field}.width"))? as usize;
        let flag = r.take(1, &format!("{field}.representation"))?[0];
        let rep = Representation::from_flag(flag)
            .ok_or_else(|| Error::format(format!("{field}.representation"), format!("unknown flag {flag}")))?;
        let n = t
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::format(format!("{field}.pixels"), "size overflow"))?;
        let raw = r.take(n, &format!("{field}.pixels"))?;
        let frame_len = h * w;
        let frames: Vec<Vec<f32>> = (0..t)
            .map(|k| {
                raw[k * frame_len * 4..(k + 1) * frame_len * 4]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect()
            })
            .collect();
        if entry.labels.frame_mask.len() != t {
            return Err(Error::format(format!("manifest.clips[{i}].labels"), "frame count mismatch"));
        }
        clips.push(RawClip {
            representation: rep,
            height: h,
            width: w,
            frames,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing", format!("{} unexpected bytes", bytes.len() - r.pos)));
    }
    Ok(clips)
}

/// Writes the binary and its manifest, each atomically.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<Manifest> {
    if dataset.clips.len() != dataset.labels.len() {
        return Err(Error::domain("clips and labels differ in length"));
    }
    let bytes = encode_clips(&dataset.clips);
    let manifest = Manifest {
        format: "LUSV1".into(),
        generator_version: GENERATOR_VERSION.into(),
        rng: RNG_ID.into(),
        seed: dataset.seed,
        phantom: dataset.phantom.clone(),
        checksum: checksum_hex(&bytes),
        clips: dataset
            .clips
            .iter()
            .zip(&dataset.labels)
            .map(|(c, l)| ClipEntry {
                geometry: c.geometry,
                labels: l.clone(),
            })
            .collect(),
    };
    fs::write_atomic(path, &bytes)?;
    fs::write_atomic(&manifest_path(path), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let mpath = manifest_path(path);
    let text = fs::read(&mpath)?;
    serde_json::from_slice(&text).map_err(|e| Error::format("manifest", e.to_string()))
}

/// Reads and verifies a dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = load_manifest(path)?;
    if manifest.format != "LUSV1" {
        return Err(Error::format("manifest.format", format!("unexpected {:?}", manifest.format)));
    }
    let bytes = fs::read(path)?;
    let raw = decode_clips(&bytes, &manifest.clips)?;
    let sum = checksum_hex(&bytes);
    if sum != manifest.checksum {
        return Err(Error::format(
            "checksum",
            format!("binary hashes to {sum}, manifest records {}", manifest.checksum),
        ));
    }
    let clips = raw
        .into_iter()
        .zip(&manifest.clips)
        .enumerate()
        .map(|(i, (r, e))| {
            VideoClip::new(r.representation, e.geometry, r.height, r.width, r.frames)
                .map_err(|err| Error::format(format!("clip[{i}].pixels"), err.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        clips,
        labels: manifest.clips.into_iter().map(|e| e.labels).collect(),
        seed: manifest.seed,
        phantom: manifest.phantom,
    })
}
