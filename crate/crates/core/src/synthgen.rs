//! Deterministic synthetic corpus with known labels.
//!
//! Each patient gets a volume with a body slab, two lungs and one periodic
//! texture per positive class, plus a report whose lung section states every
//! class as a positive or negative template sentence. Every patient is a
//! pure function of `(config, templates, index)`.

use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpusio::{save_manifest, save_volume, write_atomic, CtVolume, DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::zeroshot::{substitute, TemplatePair, TemplatesConfig};

/// Side of the texture cell; matches the default patch size so textures
/// survive patch averaging.
pub const CELL: usize = 16;

const AIR_HU: f64 = -1000.0;
const TISSUE_HU: f64 = 40.0;
const LUNG_HU: f64 = -850.0;
const SIGNATURE_HU: f64 = 350.0;
/// Texture kind per class index: the rarest default class gets the
/// strongest texture.
const SIGNATURE_ORDER: [usize; 5] = [2, 1, 0, 3, 4];

pub fn default_distractors() -> Vec<String> {
    [
        "the central airways are patent",
        "mild bronchial wall thickening",
        "stable small granuloma in the right upper lobe",
        "the trachea is midline",
        "scattered linear atelectasis",
        "mild centrilobular emphysema",
        "calcified hilar lymph nodes",
        "the fissures are intact",
        "post surgical change in the left lower lobe",
        "minimal dependent atelectasis",
        "tiny subpleural nodule unchanged",
        "the bronchi are normal in caliber",
    ]
    .map(String::from)
    .to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_patients: usize,
    /// One prevalence per class, in registry class order.
    pub prevalences: Vec<f64>,
    /// `(depth, height, width)` of every volume.
    pub dims: [usize; 3],
    /// Side of the square body slab centred in each slice.
    pub body_side: usize,
    pub spacing: [f32; 3],
    /// Gaussian noise standard deviation in window-normalized units.
    pub noise_sigma: f64,
    pub seed: u64,
    pub distractor_sentences: Vec<String>,
    /// Template pairs stated per class (capped at the class's pair count).
    pub sentences_per_class: usize,
    /// Distractors interleaved with the class sentences.
    pub distractors_per_report: usize,
    /// Fraction of reports padded with a trailing run of distractors.
    pub long_report_fraction: f64,
    /// Number of extra sentences in a long report.
    pub long_report_sentences: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_patients: 120,
            prevalences: vec![0.10, 0.70, 0.65, 0.75, 0.80],
            dims: [20, 128, 128],
            body_side: 112,
            spacing: [1.5, 0.7, 0.7],
            noise_sigma: 0.05,
            seed: 0,
            distractor_sentences: default_distractors(),
            sentences_per_class: 2,
            distractors_per_report: 3,
            long_report_fraction: 0.25,
            long_report_sentences: (14, 24),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_patients < 5 {
            return bad(format!("num_patients {} < 5", self.num_patients));
        }
        if self.prevalences.len() != num_classes {
            return bad(format!(
                "{} prevalences for {num_classes} classes",
                self.prevalences.len()
            ));
        }
        if let Some(p) = self.prevalences.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return bad(format!("prevalence {p} outside (0, 1]"));
        }
        let [d, h, w] = self.dims;
        if d == 0 || self.body_side == 0 || self.body_side > h || self.body_side > w {
            return bad(format!("body_side {} does not fit dims {:?}", self.body_side, self.dims));
        }
        if self.sentences_per_class == 0 {
            return bad("sentences_per_class must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be non-negative", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.long_report_fraction) {
            return bad("long_report_fraction must lie in [0, 1]".into());
        }
        if self.long_report_sentences.0 > self.long_report_sentences.1 {
            return bad("long_report_sentences must be an ordered range".into());
        }
        if self.distractor_sentences.is_empty()
            && (self.distractors_per_report > 0 || self.long_report_fraction > 0.0)
        {
            return bad("distractors requested but none configured".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPatient {
    pub patient_id: String,
    pub volume: CtVolume,
    pub report: String,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub classes: Vec<String>,
    pub patients: Vec<SyntheticPatient>,
}

pub fn patient_id(index: usize) -> String {
    format!("P{index:04}")
}

/// Texture value in `[0, 1]` of signature `kind` at cell offset `(cy, cx)`.
pub fn signature(kind: usize, cy: usize, cx: usize) -> f64 {
    let (y, x) = (cy as f64 - 7.5, cx as f64 - 7.5);
    let r = (y * y + x * x).sqrt();
    match SIGNATURE_ORDER[kind % 5] {
        // blob
        0 => (-(r * r) / 18.0).exp(),
        // streak
        1 => f64::from(u8::from((6..10).contains(&cx))),
        // checker
        2 => ((cy / 4 + cx / 4) % 2) as f64,
        // ramp
        3 => cy as f64 / 15.0,
        // ring
        _ => f64::from(u8::from((4.5..=7.0).contains(&r))),
    }
}

/// Cell-aligned region `(row0, col0, rows, cols)` in body cells for class `k`.
pub fn signature_region(k: usize, body_cells: usize) -> (usize, usize, usize, usize) {
    let span = (body_cells * 3 / 7).max(1).min(body_cells);
    let free = body_cells - span;
    let anchors = [(0, 0), (0, free), (free, 0), (free, free), (free / 2, free / 2)];
    let (r, c) = anchors[k % anchors.len()];
    (r, c, span, span)
}

fn synth_volume(
    config: &SynthConfig,
    labels: &[u8],
    rng: &mut ChaCha8Rng,
) -> Result<CtVolume> {
    let [depth, h, w] = config.dims;
    let b = config.body_side;
    let (oy, ox) = ((h - b) / 2, (w - b) / 2);
    let cells = b / CELL;
    let noise = Normal::new(0.0, config.noise_sigma * 1400.0).expect("finite sigma");
    let mut voxels = vec![AIR_HU as i16; depth * h * w];
    for z in 0..depth {
        // lungs narrow slightly towards the ends of the scan
        let t = z as f64 / (depth.max(2) - 1) as f64;
        let scale = 0.9 + 0.1 * (1.0 - (2.0 * t - 1.0).powi(2));
        for by in 0..b {
            for bx in 0..b {
                let (u, v) = (by as f64 / b as f64, bx as f64 / b as f64);
                let ry = (u - 0.5) / (0.4 * scale);
                let in_lung = [0.28, 0.72].iter().any(|&cxl| {
                    let rx = (v - cxl) / (0.18 * scale);
                    ry * ry + rx * rx <= 1.0
                });
                let mut hu = if in_lung { LUNG_HU } else { TISSUE_HU };
                let (cy, cx) = (by / CELL, bx / CELL);
                for (k, _) in labels.iter().enumerate().filter(|(_, &l)| l == 1) {
                    let (r0, c0, rs, cs) = signature_region(k, cells);
                    if (r0..r0 + rs).contains(&cy) && (c0..c0 + cs).contains(&cx) {
                        hu += SIGNATURE_HU * signature(k, by % CELL, bx % CELL);
                    }
                }
                if config.noise_sigma > 0.0 {
                    hu += noise.sample(rng);
                }
                let idx = (z * h + oy + by) * w + ox + bx;
                voxels[idx] = hu.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
            }
        }
    }
    CtVolume::new(config.dims, config.spacing, voxels)
}

fn sentence(s: &str) -> String {
    let mut out = s.trim().to_owned();
    if let Some(first) = out.get(0..1) {
        let upper = first.to_uppercase();
        out.replace_range(0..1, &upper);
    }
    out.push('.');
    out
}

fn synth_report(
    config: &SynthConfig,
    templates: &TemplatesConfig,
    labels: &[u8],
    rng: &mut ChaCha8Rng,
) -> Result<String> {
    let mut lung: Vec<String> = Vec::new();
    for (c, &l) in templates.classes.iter().zip(labels) {
        let picks: Vec<&TemplatePair> = c
            .pairs
            .choose_multiple(rng, config.sentences_per_class.min(c.pairs.len()))
            .collect();
        for pair in picks {
            let t = if l == 1 { pair.positive() } else { pair.negative() };
            lung.push(sentence(&substitute(t, &c.name)?));
        }
    }
    lung.shuffle(rng);
    let pick = |rng: &mut ChaCha8Rng| {
        sentence(&config.distractor_sentences[rng.random_range(0..config.distractor_sentences.len())])
    };
    for _ in 0..config.distractors_per_report {
        let at = rng.random_range(0..=lung.len());
        let d = pick(rng);
        lung.insert(at, d);
    }
    if rng.random_bool(config.long_report_fraction) {
        let (lo, hi) = config.long_report_sentences;
        for _ in 0..rng.random_range(lo..=hi) {
            let d = pick(rng);
            lung.push(d);
        }
    }
    Ok(format!(
        "CT CHEST WITH CONTRAST\n\
         TECHNIQUE: Axial images of the chest were obtained after contrast.\n\
         FINDINGS:\n\
         LUNG PARENCHYMA: {}\n\
         PLEURA: No pleural effusion.\n\
         HEART: Normal heart size.\n\
         BONES: Degenerative changes of the spine.\n\
         IMPRESSION: See findings above.\n",
        lung.join(" ")
    ))
}

/// Generates patient `index` of the corpus.
pub fn generate_patient(
    config: &SynthConfig,
    templates: &TemplatesConfig,
    index: usize,
) -> Result<SyntheticPatient> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let labels: Vec<u8> = config
        .prevalences
        .iter()
        .map(|&p| u8::from(rng.random_bool(p)))
        .collect();
    let report = synth_report(config, templates, &labels, &mut rng)?;
    let volume = synth_volume(config, &labels, &mut rng)?;
    Ok(SyntheticPatient {
        patient_id: patient_id(index),
        volume,
        report,
        labels,
    })
}

pub fn generate_corpus(config: &SynthConfig, templates: &TemplatesConfig) -> Result<SyntheticCorpus> {
    config.validate(templates.classes.len())?;
    templates.registry(templates.mode)?;
    let patients = (0..config.num_patients)
        .into_par_iter()
        .map(|i| generate_patient(config, templates, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCorpus {
        classes: templates.class_names(),
        patients,
    })
}

impl SyntheticCorpus {
    /// Manifest with paths relative to the corpus directory.
    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            classes: self.classes.clone(),
            entries: self
                .patients
                .iter()
                .map(|p| ManifestEntry {
                    patient_id: p.patient_id.clone(),
                    volume_path: PathBuf::from("volumes").join(format!("{}.rvf", p.patient_id)),
                    report_path: PathBuf::from("reports").join(format!("{}.txt", p.patient_id)),
                    labels: Some(p.labels.clone()),
                    split: Split::Unassigned,
                })
                .collect(),
        }
    }

    /// Writes `volumes/`, `reports/` and `manifest.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest> {
        let manifest = self.manifest();
        self.patients
            .par_iter()
            .zip(&manifest.entries)
            .try_for_each(|(p, e)| {
                save_volume(&p.volume, &dir.join(&e.volume_path))?;
                write_atomic(&dir.join(&e.report_path), p.report.as_bytes())
            })?;
        save_manifest(&manifest, &dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

/// Rule-based label reader: a class is positive when one of its substituted
/// positive templates appears as a whole sentence of `text` (a leading
/// `HEADING:` is ignored).
pub fn recover_labels(text: &str, templates: &TemplatesConfig) -> Result<Vec<u8>> {
    let sentences: Vec<String> = text
        .split(['.', '\n'])
        .map(|s| s.rsplit(':').next().unwrap_or(s))
        .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
        .filter(|s| !s.is_empty())
        .collect();
    templates
        .classes
        .iter()
        .map(|c| {
            let mut hit = false;
            for p in &c.pairs {
                let pos = substitute(p.positive(), &c.name)?.to_lowercase();
                hit |= sentences.iter().any(|s| *s == pos);
            }
            Ok(u8::from(hit))
        })
        .collect()
}
