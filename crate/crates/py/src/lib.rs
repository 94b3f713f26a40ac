//! Python bindings: configuration, pipeline stages, montage and EMB I/O,
//! metrics and zero-shot scoring.

use std::path::PathBuf;

use clipmontage::config::ExperimentConfig;
use clipmontage::corpusio::{self, EmbeddingRecord};
use clipmontage::metrics::{self, LabelMatrix};
use clipmontage::montage;
use clipmontage::pipeline::Pipeline;
use clipmontage::zeroshot;
use clipmontage::{Error, ErrorClass};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(clipmontage_py, ClipMontageError, PyException);
create_exception!(clipmontage_py, ConfigError, ClipMontageError);
create_exception!(clipmontage_py, DataError, ClipMontageError);
create_exception!(clipmontage_py, NumericError, ClipMontageError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ErrorClass::Config => ConfigError::new_err(msg),
        ErrorClass::Data => DataError::new_err(msg),
        ErrorClass::Numeric => NumericError::new_err(msg),
    }
}

#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => ExperimentConfig::from_toml(t).map_err(to_py)?,
            None => ExperimentConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::load(&path).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn apply_seed(&mut self, seed: u64) {
        self.inner.apply_seed(seed);
    }

    #[getter]
    fn run_dir(&self) -> PathBuf {
        self.inner.paths.run_dir.clone()
    }

    #[setter]
    fn set_run_dir(&mut self, dir: PathBuf) {
        self.inner.paths.run_dir = dir;
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.templates.class_names()
    }

    fn __repr__(&self) -> String {
        format!("Config(run_dir={:?})", self.inner.paths.run_dir)
    }
}

/// Stage runner bound to one run directory.
#[pyclass(name = "Pipeline")]
pub struct PyPipeline {
    inner: Pipeline,
}

#[pymethods]
impl PyPipeline {
    #[new]
    fn new(config: PyConfig) -> PyResult<Self> {
        Ok(Self {
            inner: Pipeline::new(config.inner).map_err(to_py)?,
        })
    }

    fn echo_config(&self) -> PyResult<()> {
        self.inner.echo_config().map_err(to_py)
    }

    /// Returns the number of generated patients.
    fn gen_synth(&self) -> PyResult<usize> {
        Ok(self.inner.gen_synth().map_err(to_py)?.entries.len())
    }

    fn preprocess(&self) -> PyResult<usize> {
        self.inner.preprocess().map_err(to_py)
    }

    /// Returns `(train, test)` patient counts.
    fn split(&self) -> PyResult<(usize, usize)> {
        use corpusio::Split;
        let m = self.inner.split().map_err(to_py)?;
        Ok((m.entries_in(Split::Train).count(), m.entries_in(Split::Test).count()))
    }

    fn build_vocab(&self) -> PyResult<usize> {
        Ok(self.inner.build_vocab().map_err(to_py)?.len())
    }

    /// Returns per-epoch `(loss, tau)`.
    fn train(&self) -> PyResult<Vec<(f64, f64)>> {
        let h = self.inner.train().map_err(to_py)?;
        Ok(h.iter().map(|r| (r.loss.total, r.tau)).collect())
    }

    fn embed(&self) -> PyResult<usize> {
        self.inner.embed().map_err(to_py)
    }

    /// Returns the metrics report as JSON text.
    fn eval_zeroshot(&self) -> PyResult<String> {
        Ok(self.inner.eval_zeroshot().map_err(to_py)?.to_json())
    }

    fn ablate(&self) -> PyResult<String> {
        Ok(self.inner.ablate().map_err(to_py)?.to_markdown())
    }

    #[getter]
    fn run_dir(&self) -> PathBuf {
        self.inner.layout.root().to_path_buf()
    }
}

/// Returns `(macro_f1, hamming_loss, subset_accuracy, per_class_f1)`.
#[pyfunction]
fn evaluate(predicted: Vec<Vec<u8>>, target: Vec<Vec<u8>>) -> PyResult<(f64, f64, f64, Vec<f64>)> {
    let m = LabelMatrix::from_rows(&predicted, &target).map_err(to_py)?;
    let r = metrics::evaluate(&m);
    Ok((r.macro_avg_f1, r.hamming_loss, r.subset_accuracy, r.per_class_f1))
}

/// Two-way softmax over cosine similarities.
#[pyfunction]
fn score_pair(image: Vec<f64>, positive: Vec<f64>, negative: Vec<f64>) -> PyResult<(f64, f64)> {
    if image.len() != positive.len() || image.len() != negative.len() {
        return Err(DataError::new_err("vector lengths differ"));
    }
    Ok(zeroshot::score_pair(&image, &positive, &negative))
}

#[pyfunction]
fn substitute(template: &str, class_name: &str) -> PyResult<String> {
    zeroshot::substitute(template, class_name).map_err(to_py)
}

#[pyfunction]
fn partition_blocks(depth: usize, num_blocks: usize) -> PyResult<Vec<(usize, usize)>> {
    Ok(montage::partition_blocks(depth, num_blocks).map_err(to_py)?.ranges)
}

#[pyfunction]
fn montage_seed(master_seed: u64, patient_id: &str, repeat_index: u32) -> u64 {
    montage::montage_seed(master_seed, patient_id, repeat_index)
}

/// Returns `(side, pixels, slice_indices)` of an MNT file.
#[pyfunction]
fn load_montage(path: PathBuf) -> PyResult<(usize, Vec<f32>, Vec<usize>)> {
    let m = corpusio::load_montage(&path).map_err(to_py)?;
    Ok((m.side(), m.pixels().to_vec(), m.provenance.slice_indices.clone()))
}

/// Returns `(ids, vectors)` of an EMB file.
#[pyfunction]
fn read_embeddings(path: PathBuf) -> PyResult<(Vec<String>, Vec<Vec<f32>>)> {
    let recs = corpusio::read_embeddings(&path).map_err(to_py)?;
    Ok(recs.into_iter().map(|r| (r.id, r.vector)).unzip())
}

#[pyfunction]
fn write_embeddings(path: PathBuf, ids: Vec<String>, vectors: Vec<Vec<f32>>) -> PyResult<()> {
    if ids.len() != vectors.len() {
        return Err(DataError::new_err("ids and vectors differ in length"));
    }
    let recs: Vec<EmbeddingRecord> = ids
        .into_iter()
        .zip(vectors)
        .map(|(id, vector)| EmbeddingRecord { id, vector })
        .collect();
    corpusio::write_embeddings(&recs, &path).map_err(to_py)
}

#[pymodule]
fn clipmontage_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("ClipMontageError", py.get_type::<ClipMontageError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("NumericError", py.get_type::<NumericError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(score_pair, m)?)?;
    m.add_function(wrap_pyfunction!(substitute, m)?)?;
    m.add_function(wrap_pyfunction!(partition_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(montage_seed, m)?)?;
    m.add_function(wrap_pyfunction!(load_montage, m)?)?;
    m.add_function(wrap_pyfunction!(read_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(write_embeddings, m)?)?;
    Ok(())
}
