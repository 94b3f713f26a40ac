//! CT volume to 2-D montage preprocessing.
//!
//! The pipeline per scan is: axial trim, spatial crop to the foreground
//! bounding box, partition of the remaining slices into contiguous blocks,
//! and for each repeat one uniformly drawn slice per block, windowed to
//! `[0, 1]`, resized and tiled into a square grid.
//!
//! Slice draws come from a generator keyed by `(master_seed, patient_id,
//! repeat_index)`, so generation order and parallelism never change output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpusio::{CtVolume, Montage, MontageProvenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub axial_trim_fraction: f64,
    pub num_blocks: usize,
    pub repeats_per_scan: usize,
    pub output_side: usize,
    pub crop_threshold: f64,
    pub window: (f64, f64),
    pub master_seed: u64,
    /// Target voxel spacing for resampling. Accepted for config
    /// compatibility; resampling is not performed and a set value is
    /// rejected by [`PreprocessConfig::validate`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample_spacing: Option<[f32; 3]>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            axial_trim_fraction: 0.10,
            num_blocks: 4,
            repeats_per_scan: 10,
            output_side: 224,
            crop_threshold: -500.0,
            window: (-1000.0, 400.0),
            master_seed: 0,
            resample_spacing: None,
        }
    }
}

impl PreprocessConfig {
    /// Side length of the square grid (`num_blocks` must be a perfect square).
    pub fn grid_side(&self) -> usize {
        (self.num_blocks as f64).sqrt().round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPreprocess(m));
        if !(0.0..=0.4).contains(&self.axial_trim_fraction) {
            return bad(format!(
                "axial_trim_fraction {} outside [0, 0.4]",
                self.axial_trim_fraction
            ));
        }
        if self.num_blocks == 0 {
            return bad("num_blocks must be at least 1".into());
        }
        let g = self.grid_side();
        if g * g != self.num_blocks {
            return bad(format!("num_blocks {} is not a perfect square", self.num_blocks));
        }
        if self.output_side == 0 || self.output_side % g != 0 {
            return bad(format!(
                "output_side {} not divisible by grid side {g}",
                self.output_side
            ));
        }
        if self.repeats_per_scan == 0 {
            return bad("repeats_per_scan must be at least 1".into());
        }
        if self.window.0 >= self.window.1 {
            return Err(Error::BadWindow {
                lo: self.window.0,
                hi: self.window.1,
            });
        }
        if self.resample_spacing.is_some() {
            return bad("resampling to a target spacing is not supported".into());
        }
        Ok(())
    }
}

/// Half-open, contiguous slice ranges covering `0..depth`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub ranges: Vec<(usize, usize)>,
}

impl BlockPartition {
    pub fn depth(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.1)
    }
}

/// Drops `floor(fraction * depth)` slices at each end of the volume.
pub fn axial_trim(volume: &CtVolume, fraction: f64, num_blocks: usize) -> Result<CtVolume> {
    let depth = volume.depth();
    let drop = (fraction * depth as f64 + 1e-9).floor() as usize;
    let remaining = depth.saturating_sub(2 * drop);
    if remaining < num_blocks.max(1) {
        return Err(Error::VolumeTooShallow {
            depth: remaining,
            num_blocks,
        });
    }
    let plane = volume.height() * volume.width();
    let voxels = volume.voxels()[drop * plane..(drop + remaining) * plane].to_vec();
    CtVolume::new(
        [remaining, volume.height(), volume.width()],
        volume.spacing(),
        voxels,
    )
}

/// In-plane bounding box `[y0, y1) x [x0, x1)` shared by all slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropOutcome {
    pub volume: CtVolume,
    /// `None` when no voxel exceeded the threshold and the volume was kept.
    pub crop: Option<CropBox>,
}

impl CropOutcome {
    pub fn no_foreground(&self) -> bool {
        self.crop.is_none()
    }
}

pub fn foreground_box(volume: &CtVolume, crop_threshold: f64) -> Option<CropBox> {
    let (h, w) = (volume.height(), volume.width());
    let mut bbox: Option<CropBox> = None;
    for z in 0..volume.depth() {
        let slice = volume.slice(z);
        for y in 0..h {
            let row = &slice[y * w..(y + 1) * w];
            let first = row.iter().position(|&v| v as f64 > crop_threshold);
            let Some(first) = first else { continue };
            let last = row.iter().rposition(|&v| v as f64 > crop_threshold).unwrap();
            let b = bbox.get_or_insert(CropBox {
                y0: y,
                y1: y + 1,
                x0: first,
                x1: last + 1,
            });
            b.y0 = b.y0.min(y);
            b.y1 = b.y1.max(y + 1);
            b.x0 = b.x0.min(first);
            b.x1 = b.x1.max(last + 1);
        }
    }
    bbox
}

/// Crops every slice to the minimal box holding all voxels above
/// `crop_threshold`.
pub fn spatial_crop(volume: &CtVolume, crop_threshold: f64) -> CropOutcome {
    let Some(b) = foreground_box(volume, crop_threshold) else {
        return CropOutcome {
            volume: volume.clone(),
            crop: None,
        };
    };
    let (nh, nw) = (b.y1 - b.y0, b.x1 - b.x0);
    let mut voxels = Vec::with_capacity(volume.depth() * nh * nw);
    for z in 0..volume.depth() {
        let slice = volume.slice(z);
        for y in b.y0..b.y1 {
            voxels.extend_from_slice(&slice[y * volume.width() + b.x0..y * volume.width() + b.x1]);
        }
    }
    let cropped = CtVolume::new([volume.depth(), nh, nw], volume.spacing(), voxels)
        .expect("crop box lies inside the volume");
    CropOutcome {
        volume: cropped,
        crop: Some(b),
    }
}

/// Splits `depth` slices into `num_blocks` contiguous ranges; the first
/// `depth % num_blocks` blocks get one extra slice.
pub fn partition_blocks(depth: usize, num_blocks: usize) -> Result<BlockPartition> {
    if num_blocks == 0 || depth < num_blocks {
        return Err(Error::VolumeTooShallow { depth, num_blocks });
    }
    let base = depth / num_blocks;
    let extra = depth % num_blocks;
    let mut start = 0;
    let ranges = (0..num_blocks)
        .map(|b| {
            let len = base + usize::from(b < extra);
            let r = (start, start + len);
            start += len;
            r
        })
        .collect();
    Ok(BlockPartition { ranges })
}

/// Derives the per-montage generator seed from the run's master seed.
pub fn montage_seed(master_seed: u64, patient_id: &str, repeat_index: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(b"clipmontage/slice-draw/v1");
    h.update(master_seed.to_le_bytes());
    h.update((patient_id.len() as u64).to_le_bytes());
    h.update(patient_id.as_bytes());
    h.update(repeat_index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Maps an intensity to `[0, 1]` through the window `(lo, hi)`.
pub fn window_intensity(v: f64, window: (f64, f64)) -> f64 {
    ((v - window.0) / (window.1 - window.0)).clamp(0.0, 1.0)
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(
    src: &[f64],
    (sh, sw): (usize, usize),
    (dh, dw): (usize, usize),
) -> Vec<f64> {
    assert_eq!(src.len(), sh * sw);
    let taps = |dn: usize, sn: usize| -> Vec<(usize, usize, f64)> {
        let scale = sn as f64 / dn as f64;
        (0..dn)
            .map(|i| {
                let c = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (sn - 1) as f64);
                let i0 = c.floor() as usize;
                let i1 = (i0 + 1).min(sn - 1);
                (i0, i1, c - i0 as f64)
            })
            .collect()
    };
    let ys = taps(dh, sh);
    let xs = taps(dw, sw);
    let mut out = Vec::with_capacity(dh * dw);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Draws one slice per block and assembles the montage grid (row-major
/// block order).
pub fn sample_montage(
    volume: &CtVolume,
    partition: &BlockPartition,
    config: &PreprocessConfig,
    patient_id: &str,
    repeat_index: u32,
) -> Result<Montage> {
    config.validate()?;
    if partition.ranges.len() != config.num_blocks || partition.depth() != volume.depth() {
        return Err(Error::VolumeTooShallow {
            depth: volume.depth(),
            num_blocks: config.num_blocks,
        });
    }
    let seed = montage_seed(config.master_seed, patient_id, repeat_index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slice_indices: Vec<usize> = partition
        .ranges
        .iter()
        .map(|&(s, e)| rng.random_range(s..e))
        .collect();

    let g = config.grid_side();
    let side = config.output_side;
    let tile = side / g;
    let (h, w) = (volume.height(), volume.width());
    let mut pixels = vec![0f32; side * side];
    for (b, &z) in slice_indices.iter().enumerate() {
        let windowed: Vec<f64> = volume
            .slice(z)
            .iter()
            .map(|&v| window_intensity(v as f64, config.window))
            .collect();
        let resized = resize_bilinear(&windowed, (h, w), (tile, tile));
        let (gr, gc) = (b / g, b % g);
        for r in 0..tile {
            let dst = (gr * tile + r) * side + gc * tile;
            for (d, s) in pixels[dst..dst + tile]
                .iter_mut()
                .zip(&resized[r * tile..(r + 1) * tile])
            {
                *d = s.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Montage::new(
        side,
        pixels,
        MontageProvenance {
            patient_id: patient_id.to_owned(),
            repeat_index,
            slice_indices,
            seed,
        },
    )
}

/// Trims and crops once, then samples `repeats_per_scan` montages.
pub fn generate_montages(
    volume: &CtVolume,
    config: &PreprocessConfig,
    patient_id: &str,
) -> Result<Vec<Montage>> {
    config.validate()?;
    let trimmed = axial_trim(volume, config.axial_trim_fraction, config.num_blocks)?;
    let cropped = spatial_crop(&trimmed, config.crop_threshold).volume;
    let partition = partition_blocks(cropped.depth(), config.num_blocks)?;
    (0..config.repeats_per_scan as u32)
        .map(|r| sample_montage(&cropped, &partition, config, patient_id, r))
        .collect()
}
