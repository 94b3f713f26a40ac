//! Run-directory layout and the pipeline stages behind the command line.
//!
//! Every stage writes into `<run_dir>/.staging/<stage>` and moves its files
//! into place only after it succeeds, so a failed stage leaves no partial
//! outputs behind.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::corpusio::{
    load_manifest, load_montage, load_volume, montage_id, read_embeddings, save_manifest,
    save_montage, write_atomic, write_embeddings, DatasetManifest, EmbeddingRecord, ManifestEntry,
    Split,
};
use crate::encoder::{encode_text, forward_image, image_features, init_params, EncoderParams};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::montage::generate_montages;
use crate::synthgen::generate_corpus;
use crate::textprep::{
    build_vocabulary, compile_filters, prepare_report, tokenize, word_frequencies, TextConfig,
    TruncationSide, Vocabulary,
};
use crate::trainer::{history_csv, split_by_patient, train, AdamWState, EpochRecord, TrainingSet};
use crate::zeroshot::{
    build_weights, build_weights_with, evaluate_manifest, predictions_csv, Aggregation,
    Evaluation, TemplateMode, TemplatesConfig,
};

/// File locations inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn root(&self) -> &Path {
        &self.root
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn default_manifest(&self) -> PathBuf {
        self.data_dir().join("manifest.json")
    }
    pub fn montages_dir(&self) -> PathBuf {
        self.root.join("montages")
    }
    pub fn montage(&self, patient_id: &str, repeat_index: u32) -> PathBuf {
        self.montages_dir()
            .join(format!("{patient_id}_{repeat_index:02}.mnt"))
    }
    pub fn split_manifest(&self) -> PathBuf {
        self.root.join("manifest_split.json")
    }
    pub fn vocab(&self) -> PathBuf {
        self.root.join("text").join("vocab.json")
    }
    pub fn wordfreq(&self) -> PathBuf {
        self.root.join("text").join("wordfreq.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("latest.dec")
    }
    pub fn optimizer(&self) -> PathBuf {
        self.root.join("checkpoints").join("latest.opt")
    }
    pub fn history(&self) -> PathBuf {
        self.root.join("checkpoints").join("history.csv")
    }
    pub fn image_embeddings(&self) -> PathBuf {
        self.root.join("embeddings").join("test_images.emb")
    }
    pub fn text_embeddings(&self) -> PathBuf {
        self.root.join("embeddings").join("test_texts.emb")
    }
    pub fn prompt_embeddings(&self) -> PathBuf {
        self.root.join("embeddings").join("prompts.emb")
    }
    pub fn predictions(&self, mode: TemplateMode) -> PathBuf {
        self.root
            .join("predictions")
            .join(format!("zeroshot_{}.csv", mode.short().to_lowercase()))
    }
    pub fn metrics_json(&self, mode: TemplateMode) -> PathBuf {
        self.root
            .join("metrics")
            .join(format!("zeroshot_{}.json", mode.short().to_lowercase()))
    }
    pub fn metrics_table(&self, mode: TemplateMode) -> PathBuf {
        self.root
            .join("metrics")
            .join(format!("zeroshot_{}.txt", mode.short().to_lowercase()))
    }
    pub fn ablation_table(&self) -> PathBuf {
        self.root.join("ablation").join("table.md")
    }
    pub fn ablation_json(&self) -> PathBuf {
        self.root.join("ablation").join("table.json")
    }
    fn staging(&self, stage: &str) -> PathBuf {
        self.root.join(".staging").join(stage)
    }
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

fn absolute(path: &Path) -> Result<PathBuf> {
    io(path, std::path::absolute(path))
}

/// Moves every file below `from` to the same relative location below `to`.
fn commit_tree(from: &Path, to: &Path) -> Result<()> {
    for entry in io(from, fs::read_dir(from))? {
        let entry = io(from, entry)?;
        let src = entry.path();
        let dst = to.join(entry.file_name());
        if io(&src, entry.file_type())?.is_dir() {
            io(&dst, fs::create_dir_all(&dst))?;
            commit_tree(&src, &dst)?;
        } else {
            io(&dst, fs::rename(&src, &dst))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// in-memory building blocks

/// Image features of every montage repeat plus the prepared report text.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientData {
    pub patient_id: String,
    pub features: Vec<Vec<f64>>,
    pub text: String,
}

pub fn prepare_text(report: &str, text: &TextConfig) -> Result<String> {
    let filters = compile_filters(&text.filter_rules)?;
    Ok(prepare_report(report, text, &filters))
}

/// Vocabulary over the prepared texts of the training patients.
pub fn vocabulary_for(patients: &[&PatientData], text: &TextConfig) -> Result<Vocabulary> {
    let corpus: Vec<&str> = patients.iter().map(|p| p.text.as_str()).collect();
    build_vocabulary(&corpus, text.min_freq)
}

/// Pairs every montage repeat of every patient with the patient's report.
pub fn training_set(patients: &[&PatientData], vocab: &Vocabulary, text: &TextConfig) -> TrainingSet {
    let mut set = TrainingSet::default();
    for p in patients {
        let tokens = tokenize(&p.text, vocab, text);
        for f in &p.features {
            set.features.push(f.clone());
            set.tokens.push(tokens.clone());
        }
    }
    set
}

/// Initializes and trains a fresh encoder.
pub fn fit<F>(
    config: &ExperimentConfig,
    data: &TrainingSet,
    vocab: &Vocabulary,
    on_epoch: F,
) -> Result<(EncoderParams, AdamWState, Vec<EpochRecord>)>
where
    F: FnMut(&EpochRecord, &EncoderParams, &AdamWState) -> Result<()>,
{
    let mut params = init_params(config.encoder.init_seed, config.encoder.dims(vocab.len()));
    let mut state = AdamWState::new(&params);
    let history = train(data, &mut params, &mut state, &config.trainer, on_epoch)?;
    Ok((params, state, history))
}

/// Repeat-0 image embeddings keyed by montage id.
pub fn test_image_embeddings(
    patients: &[&PatientData],
    params: &EncoderParams,
) -> Result<HashMap<String, Vec<f64>>> {
    patients
        .par_iter()
        .map(|p| {
            let f = p.features.first().ok_or_else(|| Error::MissingEmbedding(p.patient_id.clone()))?;
            Ok((montage_id(&p.patient_id, 0), forward_image(f, params)?.embedding))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn zero_shot(
    params: &EncoderParams,
    vocab: &Vocabulary,
    text: &TextConfig,
    templates: &TemplatesConfig,
    mode: TemplateMode,
    aggregation: Aggregation,
    manifest: &DatasetManifest,
    images: &HashMap<String, Vec<f64>>,
) -> Result<Evaluation> {
    let registry = templates.registry(mode)?;
    let weights = build_weights(&registry, params, vocab, text)?;
    evaluate_manifest(manifest, images, &weights, aggregation)
}

fn check_split(manifest: &DatasetManifest, num_classes: usize) -> Result<()> {
    manifest.validate(num_classes)?;
    if manifest.entries_in(Split::Train).next().is_none()
        || manifest.entries_in(Split::Test).next().is_none()
    {
        return Err(Error::MalformedManifest(
            "split manifest needs both train and test entries".into(),
        ));
    }
    Ok(())
}

/// Outcome of [`run_synthetic_benchmark`].
#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub split: DatasetManifest,
    pub history: Vec<EpochRecord>,
    pub reports: Vec<(TemplateMode, MetricsReport)>,
}

impl BenchmarkOutcome {
    pub fn report(&self, mode: TemplateMode) -> Option<&MetricsReport> {
        self.reports.iter().find(|(m, _)| *m == mode).map(|(_, r)| r)
    }
}

/// Synthetic corpus, montages, split, training and zero-shot evaluation in
/// both template modes, without touching the filesystem.
pub fn run_synthetic_benchmark(config: &ExperimentConfig) -> Result<BenchmarkOutcome> {
    config.validate()?;
    let corpus = generate_corpus(&config.synth, &config.templates)?;
    let split = split_by_patient(&corpus.manifest(), config.trainer.split_ratio, config.trainer.seed);
    check_split(&split, config.templates.classes.len())?;
    let patients: Vec<PatientData> = corpus
        .patients
        .par_iter()
        .map(|p| {
            let montages = generate_montages(&p.volume, &config.preprocess, &p.patient_id)?;
            Ok(PatientData {
                patient_id: p.patient_id.clone(),
                features: montages
                    .iter()
                    .map(|m| image_features(m, config.encoder.patch))
                    .collect::<Result<_>>()?,
                text: prepare_text(&p.report, &config.text)?,
            })
        })
        .collect::<Result<_>>()?;
    let by_id: HashMap<&str, &PatientData> =
        patients.iter().map(|p| (p.patient_id.as_str(), p)).collect();
    let pick = |s: Split| -> Vec<&PatientData> {
        split.entries_in(s).map(|e| by_id[e.patient_id.as_str()]).collect()
    };
    let (train_p, test_p) = (pick(Split::Train), pick(Split::Test));
    let vocab = vocabulary_for(&train_p, &config.text)?;
    let data = training_set(&train_p, &vocab, &config.text);
    let (params, _, history) = fit(config, &data, &vocab, |_, _, _| Ok(()))?;
    let images = test_image_embeddings(&test_p, &params)?;
    let reports = [TemplateMode::ClassDependent, TemplateMode::ClassIndependent]
        .into_iter()
        .map(|mode| {
            let ev = zero_shot(
                &params,
                &vocab,
                &config.text,
                &config.templates,
                mode,
                config.templates.aggregation,
                &split,
                &images,
            )?;
            Ok((mode, evaluate(&ev.labels).with_class_names(&config.templates.class_names())))
        })
        .collect::<Result<_>>()?;
    Ok(BenchmarkOutcome {
        split,
        history,
        reports,
    })
}

// ---------------------------------------------------------------------------
// ablation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: TemplateMode,
    pub vision_encoder: String,
    pub context_length: usize,
    pub truncation_side: TruncationSide,
    pub macro_avg_f1: f64,
    pub hamming_loss: f64,
    pub subset_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Markdown table with one row per (context length, side, template mode).
    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| Templates | Vision encoder | Context length | Truncation side | Macro Avg. F1 | HL | Sub. Acc. |\n\
             |---|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "| {} | {} | {} | {} | {:.4} | {:.4} | {:.4} |",
                r.mode.short(),
                r.vision_encoder,
                r.context_length,
                r.truncation_side,
                r.macro_avg_f1,
                r.hamming_loss,
                r.subset_accuracy
            )
            .unwrap();
        }
        out
    }
}

/// Retrains for every (context length, truncation side) and evaluates each
/// requested template mode.
pub fn ablate_in_memory(
    config: &ExperimentConfig,
    split: &DatasetManifest,
    train_p: &[&PatientData],
    test_p: &[&PatientData],
) -> Result<AblationTable> {
    let vocab = vocabulary_for(train_p, &config.text)?;
    let encoder_name = format!("toy-patch{}", config.encoder.patch);
    let mut rows = Vec::new();
    for &context_length in &config.ablation.context_lengths {
        for &side in &config.ablation.truncation_sides {
            let text = TextConfig {
                context_length,
                truncation_side: side,
                ..config.text.clone()
            };
            let data = training_set(train_p, &vocab, &text);
            let (params, _, _) = fit(config, &data, &vocab, |_, _, _| Ok(()))?;
            let images = test_image_embeddings(test_p, &params)?;
            for &mode in &config.ablation.modes {
                let ev = zero_shot(
                    &params,
                    &vocab,
                    &text,
                    &config.templates,
                    mode,
                    config.templates.aggregation,
                    split,
                    &images,
                )?;
                let m = evaluate(&ev.labels);
                rows.push(AblationRow {
                    mode,
                    vision_encoder: encoder_name.clone(),
                    context_length,
                    truncation_side: side,
                    macro_avg_f1: m.macro_avg_f1,
                    hamming_loss: m.hamming_loss,
                    subset_accuracy: m.subset_accuracy,
                });
            }
        }
    }
    Ok(AblationTable { rows })
}

// ---------------------------------------------------------------------------
// file-based stages

/// A validated config bound to its run directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub layout: RunLayout,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let layout = RunLayout::new(config.paths.run_dir.clone());
        Ok(Self { config, layout })
    }

    fn num_classes(&self) -> usize {
        self.config.templates.classes.len()
    }

    /// Writes the effective config into the run directory.
    pub fn echo_config(&self) -> Result<()> {
        write_atomic(&self.layout.config(), self.config.to_toml().as_bytes())
    }

    /// Runs `f` against a staging layout and commits its files on success.
    fn staged<T>(&self, stage: &str, f: impl FnOnce(&RunLayout) -> Result<T>) -> Result<T> {
        let dir = self.layout.staging(stage);
        if dir.exists() {
            io(&dir, fs::remove_dir_all(&dir))?;
        }
        io(&dir, fs::create_dir_all(&dir))?;
        let out = f(&RunLayout::new(&dir)).and_then(|v| {
            commit_tree(&dir, self.layout.root())?;
            Ok(v)
        });
        let _ = fs::remove_dir_all(&dir);
        if let Some(parent) = dir.parent() {
            let _ = fs::remove_dir(parent);
        }
        out
    }

    fn input_manifest_path(&self) -> PathBuf {
        self.config
            .paths
            .manifest
            .clone()
            .unwrap_or_else(|| self.layout.default_manifest())
    }

    /// Input manifest with entry paths made absolute.
    pub fn input_manifest(&self) -> Result<DatasetManifest> {
        let path = self.input_manifest_path();
        let manifest = load_manifest(&path, self.num_classes())?;
        let base = absolute(path.parent().unwrap_or(Path::new(".")))?;
        Ok(manifest.resolve(&base))
    }

    pub fn split_manifest(&self) -> Result<DatasetManifest> {
        let m = load_manifest(&self.layout.split_manifest(), self.num_classes())?;
        check_split(&m, self.num_classes())?;
        Ok(m)
    }

    pub fn gen_synth(&self) -> Result<DatasetManifest> {
        self.staged("gen-synth", |out| {
            generate_corpus(&self.config.synth, &self.config.templates)?.write(&out.data_dir())
        })
    }

    /// Writes `repeats_per_scan` montages per manifest entry.
    pub fn preprocess(&self) -> Result<usize> {
        let manifest = self.input_manifest()?;
        self.staged("preprocess", |out| {
            let counts = manifest
                .entries
                .par_iter()
                .map(|e| {
                    let volume = load_volume(&e.volume_path)?;
                    let montages = generate_montages(&volume, &self.config.preprocess, &e.patient_id)?;
                    for m in &montages {
                        save_montage(m, &out.montage(&e.patient_id, m.provenance.repeat_index))?;
                    }
                    Ok(montages.len())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(counts.iter().sum())
        })
    }

    pub fn split(&self) -> Result<DatasetManifest> {
        let manifest = self.input_manifest()?;
        let split = split_by_patient(&manifest, self.config.trainer.split_ratio, self.config.trainer.seed);
        check_split(&split, self.num_classes())?;
        self.staged("split", |out| {
            save_manifest(&split, &out.split_manifest())?;
            Ok(split.clone())
        })
    }

    fn patient_data(&self, entries: &[&ManifestEntry], repeats: usize) -> Result<Vec<PatientData>> {
        entries
            .par_iter()
            .map(|e| {
                let report = fs::read_to_string(&e.report_path).map_err(|x| Error::io(&e.report_path, x))?;
                let features = (0..repeats as u32)
                    .map(|r| image_features(&load_montage(&self.layout.montage(&e.patient_id, r))?, self.config.encoder.patch))
                    .collect::<Result<_>>()?;
                Ok(PatientData {
                    patient_id: e.patient_id.clone(),
                    features,
                    text: prepare_text(&report, &self.config.text)?,
                })
            })
            .collect()
    }

    fn texts_only(&self, entries: &[&ManifestEntry]) -> Result<Vec<PatientData>> {
        entries
            .par_iter()
            .map(|e| {
                let report = fs::read_to_string(&e.report_path).map_err(|x| Error::io(&e.report_path, x))?;
                Ok(PatientData {
                    patient_id: e.patient_id.clone(),
                    features: Vec::new(),
                    text: prepare_text(&report, &self.config.text)?,
                })
            })
            .collect()
    }

    pub fn build_vocab(&self) -> Result<Vocabulary> {
        let split = self.split_manifest()?;
        let train: Vec<&ManifestEntry> = split.entries_in(Split::Train).collect();
        let patients = self.texts_only(&train)?;
        let vocab = vocabulary_for(&patients.iter().collect::<Vec<_>>(), &self.config.text)?;
        self.staged("build-vocab", |out| {
            vocab.save(&out.vocab())?;
            Ok(vocab.clone())
        })
    }

    /// Trains on every repeat of the training patients, checkpointing after
    /// each epoch.
    pub fn train(&self) -> Result<Vec<EpochRecord>> {
        let split = self.split_manifest()?;
        let vocab = Vocabulary::load(&self.layout.vocab())?;
        let train: Vec<&ManifestEntry> = split.entries_in(Split::Train).collect();
        let patients = self.patient_data(&train, self.config.preprocess.repeats_per_scan)?;
        let data = training_set(&patients.iter().collect::<Vec<_>>(), &vocab, &self.config.text);
        self.staged("train", |out| {
            let mut history = Vec::new();
            let (params, state, records) = fit(&self.config, &data, &vocab, |rec, params, state| {
                history.push(*rec);
                params.save(&out.checkpoint())?;
                state.save(&out.optimizer())?;
                write_atomic(&out.history(), history_csv(&history).as_bytes())
            })?;
            params.save(&out.checkpoint())?;
            state.save(&out.optimizer())?;
            Ok(records)
        })
    }

    /// Embeds test montages (repeat 0), test reports and every prompt of both
    /// template modes with the trained encoder.
    pub fn embed(&self) -> Result<usize> {
        let split = self.split_manifest()?;
        let vocab = Vocabulary::load(&self.layout.vocab())?;
        let params = EncoderParams::load(&self.layout.checkpoint())?;
        let test: Vec<&ManifestEntry> = split.entries_in(Split::Test).collect();
        let patients = self.patient_data(&test, 1)?;
        let as_record = |id: String, v: Vec<f64>| EmbeddingRecord {
            id,
            vector: v.into_iter().map(|x| x as f32).collect(),
        };
        let images = patients
            .par_iter()
            .map(|p| Ok(as_record(montage_id(&p.patient_id, 0), forward_image(&p.features[0], &params)?.embedding)))
            .collect::<Result<Vec<_>>>()?;
        let texts = patients
            .par_iter()
            .map(|p| {
                let tokens = tokenize(&p.text, &vocab, &self.config.text);
                Ok(as_record(p.patient_id.clone(), encode_text(&tokens, &params)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut seen = HashSet::new();
        let prompts = [TemplateMode::ClassDependent, TemplateMode::ClassIndependent]
            .into_iter()
            .map(|m| self.config.templates.registry(m).map(|r| r.prompts()))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .filter(|p| seen.insert(p.clone()))
            .map(|p| {
                let tokens = tokenize(&p, &vocab, &self.config.text);
                Ok(as_record(p, encode_text(&tokens, &params)?))
            })
            .collect::<Result<Vec<_>>>()?;
        self.staged("embed", |out| {
            write_embeddings(&images, &out.image_embeddings())?;
            write_embeddings(&texts, &out.text_embeddings())?;
            write_embeddings(&prompts, &out.prompt_embeddings())?;
            Ok(images.len())
        })
    }

    /// Zero-shot evaluation from EMB files (toy encoder or external source).
    pub fn eval_zeroshot(&self) -> Result<MetricsReport> {
        let split = self.split_manifest()?;
        let paths = &self.config.paths;
        let image_path = paths.image_embeddings.clone().unwrap_or_else(|| self.layout.image_embeddings());
        let prompt_path = paths.prompt_embeddings.clone().unwrap_or_else(|| self.layout.prompt_embeddings());
        let images = load_embedding_map(&image_path)?;
        let prompts = load_embedding_map(&prompt_path)?;
        let mode = self.config.templates.mode;
        let registry = self.config.templates.registry(mode)?;
        let weights = build_weights_with(&registry, |p| {
            prompts
                .get(p)
                .cloned()
                .ok_or_else(|| Error::MissingEmbedding(format!("prompt {p:?} in {}", prompt_path.display())))
        })?;
        let ev = evaluate_manifest(&split, &images, &weights, self.config.templates.aggregation)?;
        let report = evaluate(&ev.labels).with_class_names(&self.config.templates.class_names());
        self.staged("eval-zeroshot", |out| {
            write_atomic(&out.predictions(mode), predictions_csv(&ev).as_bytes())?;
            write_atomic(&out.metrics_json(mode), report.to_json().as_bytes())?;
            write_atomic(&out.metrics_table(mode), report.to_table().as_bytes())?;
            Ok(report.clone())
        })
    }

    /// Token frequencies over the prepared reports of the input manifest.
    pub fn wordfreq(&self, exclusions: &[String]) -> Result<Vec<(String, usize)>> {
        let manifest = self.input_manifest()?;
        let entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
        let texts: Vec<String> = self.texts_only(&entries)?.into_iter().map(|p| p.text).collect();
        let freq = word_frequencies(&texts, exclusions);
        let mut csv = String::from("token,count\n");
        for (t, c) in &freq {
            writeln!(csv, "{t},{c}").unwrap();
        }
        self.staged("wordfreq", |out| {
            write_atomic(&out.wordfreq(), csv.as_bytes())?;
            Ok(freq.clone())
        })
    }

    /// Context-length x truncation-side x template-mode sweep over the split
    /// and montages already in the run directory.
    pub fn ablate(&self) -> Result<AblationTable> {
        let split = self.split_manifest()?;
        let load = |s: Split| {
            let entries: Vec<&ManifestEntry> = split.entries_in(s).collect();
            let repeats = if s == Split::Train { self.config.preprocess.repeats_per_scan } else { 1 };
            self.patient_data(&entries, repeats)
        };
        let (train_p, test_p) = (load(Split::Train)?, load(Split::Test)?);
        let table = ablate_in_memory(
            &self.config,
            &split,
            &train_p.iter().collect::<Vec<_>>(),
            &test_p.iter().collect::<Vec<_>>(),
        )?;
        self.staged("ablate", |out| {
            write_atomic(&out.ablation_table(), table.to_markdown().as_bytes())?;
            let json = serde_json::to_vec_pretty(&table).expect("table serializes");
            write_atomic(&out.ablation_json(), &json)?;
            Ok(table.clone())
        })
    }
}

/// Reads an EMB file into an id-keyed map; a missing file is reported as a
/// missing embedding.
pub fn load_embedding_map(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    if !path.is_file() {
        return Err(Error::MissingEmbedding(format!("{} (file not found)", path.display())));
    }
    Ok(read_embeddings(path)?
        .into_iter()
        .map(|r| (r.id, r.vector.into_iter().map(f64::from).collect()))
        .collect())
}
