//! On-disk formats and the dataset manifest.
//!
//! All binary formats are little-endian with a 4-byte magic:
//!
//! | format | header                                                    | payload                       |
//! |--------|-----------------------------------------------------------|-------------------------------|
//! | RVF1   | 64 bytes: magic, u32 depth/height/width, f32 dz/dy/dx, 36 reserved zero bytes | i16 voxels, z-major (z, y, x) |
//! | MNT1   | 8 bytes: magic, u32 side                                  | f32 pixels, row-major         |
//! | EMB1   | 12 bytes: magic, u32 count, u32 dim                       | f32 rows, record order        |
//!
//! MNT and EMB files carry a JSON sidecar at `<file>.json` (montage
//! provenance, embedding ids). The manifest is one JSON document.
//!
//! Concurrent writes to a single path are a caller error; every writer goes
//! through a temp-file-and-rename so readers never observe a torn file.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RVF_MAGIC: &[u8; 4] = b"RVF1";
pub const MNT_MAGIC: &[u8; 4] = b"MNT1";
pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const RVF_HEADER_LEN: usize = 64;
pub const MNT_HEADER_LEN: usize = 8;
pub const EMB_HEADER_LEN: usize = 12;

/// Norm tolerance applied when reading embeddings back from disk.
pub const EMB_NORM_TOLERANCE: f64 = 1e-4;

// ---------------------------------------------------------------------------
// CT volumes

/// A 3-D grid of signed intensities (Hounsfield-like units).
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    dims: [usize; 3],
    spacing: [f32; 3],
    voxels: Vec<i16>,
}

impl CtVolume {
    /// `dims` is `(depth, height, width)`, `spacing` is `(dz, dy, dx)` in mm.
    pub fn new(dims: [usize; 3], spacing: [f32; 3], voxels: Vec<i16>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::MalformedHeader(format!("zero dimension in {dims:?}")));
        }
        let expected = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::MalformedHeader(format!("dimensions {dims:?} overflow")))?;
        if voxels.len() != expected {
            return Err(Error::SizeMismatch {
                expected: expected * 2,
                found: voxels.len() * 2,
            });
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::NonPositiveSpacing(spacing));
        }
        Ok(Self {
            dims,
            spacing,
            voxels,
        })
    }

    pub fn depth(&self) -> usize {
        self.dims[0]
    }
    pub fn height(&self) -> usize {
        self.dims[1]
    }
    pub fn width(&self) -> usize {
        self.dims[2]
    }
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }
    pub fn voxels(&self) -> &[i16] {
        &self.voxels
    }

    pub fn slice(&self, z: usize) -> &[i16] {
        let n = self.dims[1] * self.dims[2];
        &self.voxels[z * n..(z + 1) * n]
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> i16 {
        self.voxels[(z * self.dims[1] + y) * self.dims[2] + x]
    }
}

pub fn encode_volume(volume: &CtVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(RVF_HEADER_LEN + volume.voxels.len() * 2);
    out.extend_from_slice(RVF_MAGIC);
    for d in volume.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in volume.spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.resize(RVF_HEADER_LEN, 0);
    for v in &volume.voxels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<CtVolume> {
    if bytes.len() < RVF_HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "RVF header needs {RVF_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != RVF_MAGIC {
        return Err(Error::MalformedHeader("bad RVF magic".into()));
    }
    let dims = [
        read_u32(bytes, 4) as usize,
        read_u32(bytes, 8) as usize,
        read_u32(bytes, 12) as usize,
    ];
    let spacing = [read_f32(bytes, 16), read_f32(bytes, 20), read_f32(bytes, 24)];
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::MalformedHeader(format!("zero dimension in {dims:?}")));
    }
    let expected = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .and_then(|v| v.checked_mul(2))
        .ok_or_else(|| Error::MalformedHeader(format!("dimensions {dims:?} overflow")))?;
    let payload = &bytes[RVF_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::NonPositiveSpacing(spacing));
    }
    let voxels = payload
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    CtVolume::new(dims, spacing, voxels)
}

pub fn save_volume(volume: &CtVolume, path: &Path) -> Result<()> {
    write_atomic(path, &encode_volume(volume))
}

pub fn load_volume(path: &Path) -> Result<CtVolume> {
    decode_volume(&read_file(path)?)
}

// ---------------------------------------------------------------------------
// Montages

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MontageProvenance {
    pub patient_id: String,
    pub repeat_index: u32,
    pub slice_indices: Vec<usize>,
    pub seed: u64,
}

/// Square single-channel image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Montage {
    side: usize,
    pixels: Vec<f32>,
    pub provenance: MontageProvenance,
}

impl Montage {
    pub fn new(side: usize, pixels: Vec<f32>, provenance: MontageProvenance) -> Result<Self> {
        if side == 0 || Some(pixels.len()) != side.checked_mul(side) {
            return Err(Error::SizeMismatch {
                expected: side.saturating_mul(side).saturating_mul(4),
                found: pixels.len() * 4,
            });
        }
        check_pixels(&pixels)?;
        if provenance.slice_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::MalformedSidecar {
                path: PathBuf::new(),
                reason: format!(
                    "slice indices {:?} not strictly increasing",
                    provenance.slice_indices
                ),
            });
        }
        Ok(Self {
            side,
            pixels,
            provenance,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Identifier used for embedding files: `<patient_id>#<repeat_index>`.
    pub fn id(&self) -> String {
        montage_id(&self.provenance.patient_id, self.provenance.repeat_index)
    }
}

pub fn montage_id(patient_id: &str, repeat_index: u32) -> String {
    format!("{patient_id}#{repeat_index}")
}

fn check_pixels(pixels: &[f32]) -> Result<()> {
    match pixels
        .iter()
        .position(|p| !(p.is_finite() && (0.0..=1.0).contains(p)))
    {
        Some(index) => Err(Error::PixelOutOfRange {
            index,
            value: pixels[index],
        }),
        None => Ok(()),
    }
}

pub fn encode_montage_payload(montage: &Montage) -> Vec<u8> {
    let mut out = Vec::with_capacity(MNT_HEADER_LEN + montage.pixels.len() * 4);
    out.extend_from_slice(MNT_MAGIC);
    out.extend_from_slice(&(montage.side as u32).to_le_bytes());
    for p in &montage.pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Parses the binary part of an MNT file into `(side, pixels)`.
pub fn decode_montage_payload(bytes: &[u8]) -> Result<(usize, Vec<f32>)> {
    if bytes.len() < MNT_HEADER_LEN || &bytes[..4] != MNT_MAGIC {
        return Err(Error::MalformedHeader("bad MNT magic".into()));
    }
    let side = read_u32(bytes, 4) as usize;
    if side == 0 {
        return Err(Error::MalformedHeader("zero montage side".into()));
    }
    let expected = side
        .checked_mul(side)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader(format!("montage side {side} overflows")))?;
    let payload = &bytes[MNT_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    let pixels: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    check_pixels(&pixels)?;
    Ok((side, pixels))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_montage(montage: &Montage, path: &Path) -> Result<()> {
    let sidecar = serde_json::to_vec_pretty(&montage.provenance)
        .map_err(|e| Error::MalformedSidecar {
            path: sidecar_path(path),
            reason: e.to_string(),
        })?;
    write_atomic(path, &encode_montage_payload(montage))?;
    write_atomic(&sidecar_path(path), &sidecar)
}

pub fn load_montage(path: &Path) -> Result<Montage> {
    let (side, pixels) = decode_montage_payload(&read_file(path)?)?;
    let sc = sidecar_path(path);
    let provenance: MontageProvenance =
        serde_json::from_slice(&read_file(&sc)?).map_err(|e| Error::MalformedSidecar {
            path: sc.clone(),
            reason: e.to_string(),
        })?;
    Montage::new(side, pixels, provenance).map_err(|e| match e {
        Error::MalformedSidecar { reason, .. } => Error::MalformedSidecar { path: sc, reason },
        other => other,
    })
}

// ---------------------------------------------------------------------------
// Embeddings

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbSidecar {
    ids: Vec<String>,
}

pub fn encode_embeddings(records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    if records.is_empty() || dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    let mut out = Vec::with_capacity(EMB_HEADER_LEN + records.len() * dim * 4);
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in records {
        if r.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.vector.len(),
            });
        }
        for v in &r.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses the binary part of an EMB file into rows; norm checks happen in
/// [`read_embeddings`] where ids are known.
pub fn decode_embedding_payload(bytes: &[u8]) -> Result<(usize, Vec<Vec<f32>>)> {
    if bytes.len() < EMB_HEADER_LEN || &bytes[..4] != EMB_MAGIC {
        return Err(Error::MalformedHeader("bad EMB magic".into()));
    }
    let count = read_u32(bytes, 4) as usize;
    let dim = read_u32(bytes, 8) as usize;
    if dim == 0 {
        return Err(Error::MalformedHeader("zero embedding dimension".into()));
    }
    let expected = count
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader("embedding header overflows".into()))?;
    let payload = &bytes[EMB_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    let rows = payload
        .chunks_exact(dim * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        })
        .collect();
    Ok((dim, rows))
}

pub fn write_embeddings(records: &[EmbeddingRecord], path: &Path) -> Result<()> {
    let payload = encode_embeddings(records)?;
    let sidecar = EmbSidecar {
        ids: records.iter().map(|r| r.id.clone()).collect(),
    };
    let sidecar = serde_json::to_vec_pretty(&sidecar).expect("ids serialize");
    write_atomic(path, &payload)?;
    write_atomic(&sidecar_path(path), &sidecar)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let (_, rows) = decode_embedding_payload(&read_file(path)?)?;
    let sc = sidecar_path(path);
    let sidecar: EmbSidecar =
        serde_json::from_slice(&read_file(&sc)?).map_err(|e| Error::MalformedSidecar {
            path: sc.clone(),
            reason: e.to_string(),
        })?;
    if sidecar.ids.len() != rows.len() {
        return Err(Error::MalformedSidecar {
            path: sc,
            reason: format!("{} ids for {} rows", sidecar.ids.len(), rows.len()),
        });
    }
    sidecar
        .ids
        .into_iter()
        .zip(rows)
        .map(|(id, vector)| {
            let norm = l2_norm_f32(&vector);
            if !norm.is_finite() || (norm - 1.0).abs() > EMB_NORM_TOLERANCE {
                return Err(Error::NonUnitNorm { id, norm });
            }
            Ok(EmbeddingRecord { id, vector })
        })
        .collect()
}

fn l2_norm_f32(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub volume_path: PathBuf,
    pub report_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
    #[serde(default)]
    pub split: Split,
}

/// Patients with their volume, report, optional labels and split.
///
/// Relative paths are resolved against the manifest file's directory by
/// [`DatasetManifest::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Checks id uniqueness, label arity/values and split disjointness.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.patient_id.as_str()) {
                return Err(Error::DuplicatePatientId(e.patient_id.clone()));
            }
            if let Some(labels) = &e.labels {
                if labels.len() != num_classes {
                    return Err(Error::LabelArityMismatch {
                        patient_id: e.patient_id.clone(),
                        expected: num_classes,
                        found: labels.len(),
                    });
                }
                if labels.iter().any(|&b| b > 1) {
                    return Err(Error::MalformedManifest(format!(
                        "patient {:?} has non-binary labels",
                        e.patient_id
                    )));
                }
            }
        }
        let train: HashSet<_> = self
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.patient_id.as_str())
            .collect();
        if let Some(e) = self
            .entries
            .iter()
            .find(|e| e.split == Split::Test && train.contains(e.patient_id.as_str()))
        {
            return Err(Error::SplitLeak(e.patient_id.clone()));
        }
        Ok(())
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Rewrites relative entry paths to be relative to `base`.
    pub fn resolve(mut self, base: &Path) -> Self {
        for e in &mut self.entries {
            if e.volume_path.is_relative() {
                e.volume_path = base.join(&e.volume_path);
            }
            if e.report_path.is_relative() {
                e.report_path = base.join(&e.report_path);
            }
        }
        self
    }
}

pub fn parse_manifest(text: &str, num_classes: usize) -> Result<DatasetManifest> {
    let manifest: DatasetManifest =
        serde_json::from_str(text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
    manifest.validate(num_classes)?;
    Ok(manifest)
}

/// Loads and validates a manifest; paths stay as written in the file.
pub fn load_manifest(path: &Path, num_classes: usize) -> Result<DatasetManifest> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::MalformedManifest(format!("not UTF-8: {e}")))?;
    parse_manifest(text, num_classes)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let text = serde_json::to_vec_pretty(manifest)
        .map_err(|e| Error::MalformedManifest(e.to_string()))?;
    write_atomic(path, &text)
}

// ---------------------------------------------------------------------------
// helpers

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use sha2::{Digest, Sha256};

    fn prov(pid: &str) -> MontageProvenance {
        MontageProvenance {
            patient_id: pid.into(),
            repeat_index: 0,
            slice_indices: vec![1, 5, 9, 13],
            seed: 3,
        }
    }

    #[test]
    fn zero_volume_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.rvf");
        let v = CtVolume::new([4, 4, 4], [1.0, 0.7, 0.7], vec![0; 64]).unwrap();
        save_volume(&v, &p).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back.dims(), [4, 4, 4]);
        assert!(back.voxels().iter().all(|&x| x == 0));
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 64 + 128);
    }

    #[test]
    fn truncated_rvf_payload_is_size_mismatch() {
        let v = CtVolume::new([2, 2, 2], [1.0; 3], vec![7; 8]).unwrap();
        let mut bytes = encode_volume(&v);
        bytes.truncate(RVF_HEADER_LEN + 7 * 2);
        assert!(matches!(
            decode_volume(&bytes),
            Err(Error::SizeMismatch {
                expected: 16,
                found: 14
            })
        ));
    }

    #[test]
    fn rvf_rejects_non_positive_spacing() {
        let v = CtVolume::new([1, 1, 1], [1.0; 3], vec![0]).unwrap();
        let mut bytes = encode_volume(&v);
        bytes[20..24].copy_from_slice(&0.0f32.to_le_bytes());
        assert!(matches!(
            decode_volume(&bytes),
            Err(Error::NonPositiveSpacing(_))
        ));
        bytes[..4].copy_from_slice(b"RVF2");
        assert!(matches!(decode_volume(&bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn random_volume_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let voxels: Vec<i16> = (0..512).map(|_| rng.random()).collect();
        let v = CtVolume::new([8, 8, 8], [2.5, 0.6, 0.6], voxels.clone()).unwrap();
        let bytes = encode_volume(&v);
        let original: Vec<u8> = voxels.iter().flat_map(|x| x.to_le_bytes()).collect();
        assert_eq!(&bytes[RVF_HEADER_LEN..], &original[..]);
        let back = decode_volume(&bytes).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn half_montage_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mnt");
        let m = Montage::new(224, vec![0.5; 224 * 224], prov("P1")).unwrap();
        save_montage(&m, &p).unwrap();
        assert_eq!(load_montage(&p).unwrap(), m);
        assert!(sidecar_path(&p).exists());
    }

    #[test]
    fn montage_pixel_out_of_range_on_load() {
        let m = Montage::new(2, vec![0.5; 4], prov("P1")).unwrap();
        let mut bytes = encode_montage_payload(&m);
        bytes[MNT_HEADER_LEN + 4..MNT_HEADER_LEN + 8].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(
            decode_montage_payload(&bytes),
            Err(Error::PixelOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn hundred_random_montages_hash_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..100 {
            let px: Vec<f32> = (0..32 * 32).map(|_| rng.random::<f32>()).collect();
            let m = Montage::new(32, px, prov(&format!("P{i}"))).unwrap();
            let p = dir.path().join(format!("{i}.mnt"));
            save_montage(&m, &p).unwrap();
            let before = Sha256::digest(encode_montage_payload(&m));
            let after = Sha256::digest(encode_montage_payload(&load_montage(&p).unwrap()));
            assert_eq!(before, after);
        }
    }

    #[test]
    fn single_embedding_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.emb");
        let recs = vec![EmbeddingRecord {
            id: "a".into(),
            vector: vec![1.0, 0.0],
        }];
        write_embeddings(&recs, &p).unwrap();
        assert_eq!(read_embeddings(&p).unwrap(), recs);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let recs = vec![
            EmbeddingRecord {
                id: "a".into(),
                vector: vec![1.0, 0.0],
            },
            EmbeddingRecord {
                id: "b".into(),
                vector: vec![1.0, 0.0, 0.0],
            },
        ];
        assert!(matches!(
            encode_embeddings(&recs),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
    }

    #[test]
    fn non_unit_embedding_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.emb");
        let recs = vec![EmbeddingRecord {
            id: "a".into(),
            vector: vec![0.5, 0.0],
        }];
        write_embeddings(&recs, &p).unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::NonUnitNorm { .. })));
    }

    #[test]
    fn thousand_unit_vectors_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.emb");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let recs: Vec<_> = (0..1000)
            .map(|i| {
                let v: Vec<f64> = (0..128).map(|_| rng.random::<f64>() - 0.5).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                EmbeddingRecord {
                    id: format!("r{i}"),
                    vector: v.iter().map(|x| (x / n) as f32).collect(),
                }
            })
            .collect();
        write_embeddings(&recs, &p).unwrap();
        let original: Vec<u8> = recs
            .iter()
            .flat_map(|r| r.vector.iter().flat_map(|x| x.to_le_bytes()))
            .collect();
        let file = std::fs::read(&p).unwrap();
        assert_eq!(&file[EMB_HEADER_LEN..], &original[..]);
        assert_eq!(read_u32(&file, 4), 1000);
        assert_eq!(read_u32(&file, 8), 128);
        assert_eq!(read_embeddings(&p).unwrap(), recs);
    }

    fn entry(pid: &str, labels: Option<Vec<u8>>, split: Split) -> ManifestEntry {
        ManifestEntry {
            patient_id: pid.into(),
            volume_path: format!("{pid}.rvf").into(),
            report_path: format!("{pid}.txt").into(),
            labels,
            split,
        }
    }

    #[test]
    fn duplicate_patient_id_rejected() {
        let m = DatasetManifest {
            classes: vec![],
            entries: vec![
                entry("P1", None, Split::Unassigned),
                entry("P1", None, Split::Unassigned),
            ],
        };
        let text = serde_json::to_string(&m).unwrap();
        assert!(matches!(
            parse_manifest(&text, 5),
            Err(Error::DuplicatePatientId(id)) if id == "P1"
        ));
    }

    #[test]
    fn label_arity_checked() {
        let m = DatasetManifest {
            classes: vec![],
            entries: vec![entry("P1", Some(vec![0, 1, 0, 1]), Split::Test)],
        };
        assert!(matches!(
            m.validate(5),
            Err(Error::LabelArityMismatch {
                expected: 5,
                found: 4,
                ..
            })
        ));
    }

    #[test]
    fn valid_manifest_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        let m = DatasetManifest {
            classes: vec![],
            entries: vec![
                entry("P3", Some(vec![0, 1, 0, 1, 1]), Split::Train),
                entry("P1", None, Split::Test),
                entry("P2", None, Split::Unassigned),
            ],
        };
        save_manifest(&m, &p).unwrap();
        let back = load_manifest(&p, 5).unwrap();
        assert_eq!(back.entries.len(), 3);
        let ids: Vec<_> = back.entries.iter().map(|e| e.patient_id.as_str()).collect();
        assert_eq!(ids, ["P3", "P1", "P2"]);
        assert_eq!(back, m);
    }

    #[test]
    fn unknown_manifest_keys_rejected() {
        let text = r#"{"entries": [], "extra": 1}"#;
        assert!(matches!(
            parse_manifest(text, 5),
            Err(Error::MalformedManifest(_))
        ));
    }
}
