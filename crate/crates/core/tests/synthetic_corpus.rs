//! Properties of the generated corpus as seen through the preprocessing
//! pipeline: every class is linearly readable from montage pixels, and the
//! labels can be read back from the written reports.

use clipmontage::config::ExperimentConfig;
use clipmontage::corpusio::{load_manifest, load_volume, read_file};
use clipmontage::montage::generate_montages;
use clipmontage::synthgen::{generate_corpus, recover_labels, SynthConfig};
use clipmontage::textprep::{compile_filters, prepare_report};
use nalgebra::{DMatrix, DVector};

const TRAIN: usize = 120;
const TEST: usize = 60;

/// Ridge regression onto {0, 1} in dual form, thresholded at 0.5. Returns
/// per-class held-out accuracy.
fn probe_accuracy(x: &[Vec<f64>], labels: &[Vec<u8>], num_classes: usize) -> Vec<f64> {
    let dim = x[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|j| x[..TRAIN].iter().map(|r| r[j]).sum::<f64>() / TRAIN as f64)
        .collect();
    let centered: Vec<f64> = x
        .iter()
        .flat_map(|r| r.iter().zip(&mean).map(|(v, m)| v - m))
        .collect();
    let all = DMatrix::from_row_slice(x.len(), dim, &centered);
    let train = all.rows(0, TRAIN);
    let test = all.rows(TRAIN, TEST);
    let gram = &train * train.transpose();
    let lambda = 1e-3 * gram.trace() / TRAIN as f64;
    let chol = (gram + DMatrix::identity(TRAIN, TRAIN) * lambda)
        .cholesky()
        .expect("regularised gram matrix is positive definite");
    let cross = &test * train.transpose();
    (0..num_classes)
        .map(|c| {
            let y = DVector::from_iterator(TRAIN, labels[..TRAIN].iter().map(|l| l[c] as f64));
            let y_mean = y.mean();
            let alpha = chol.solve(&y.add_scalar(-y_mean));
            let scores = &cross * alpha;
            let correct = scores
                .iter()
                .zip(&labels[TRAIN..])
                .filter(|(s, l)| u8::from(*s + y_mean > 0.5) == l[c])
                .count();
            correct as f64 / TEST as f64
        })
        .collect()
}

fn probe_at(noise_sigma: f64, seed: u64) -> Vec<f64> {
    let cfg = ExperimentConfig::default();
    let synth = SynthConfig {
        num_patients: TRAIN + TEST,
        noise_sigma,
        seed,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&synth, &cfg.templates).unwrap();
    let mut pre = cfg.preprocess.clone();
    pre.repeats_per_scan = 1;
    let (pixels, labels): (Vec<Vec<f64>>, Vec<Vec<u8>>) = corpus
        .patients
        .iter()
        .map(|p| {
            let m = generate_montages(&p.volume, &pre, &p.patient_id).unwrap();
            let px = m[0].pixels().iter().map(|&v| v as f64).collect();
            (px, p.labels.clone())
        })
        .unzip();
    for c in 0..corpus.classes.len() {
        let pos = labels[TRAIN..].iter().filter(|l| l[c] == 1).count();
        assert!(pos > 0 && pos < TEST, "class {c} is constant on the held-out set");
    }
    probe_accuracy(&pixels, &labels, corpus.classes.len())
}

#[test]
fn linear_probe_separates_every_class_at_default_noise() {
    let acc = probe_at(0.05, 3);
    assert!(acc.iter().all(|&a| a >= 0.95), "{acc:?}");
}

#[test]
fn linear_probe_separates_every_class_without_noise() {
    let acc = probe_at(0.0, 8);
    assert!(acc.iter().all(|&a| a >= 0.95), "{acc:?}");
}

#[test]
fn labels_recoverable_from_written_reports() {
    let cfg = ExperimentConfig::default();
    let synth = SynthConfig {
        num_patients: 150,
        dims: [8, 32, 32],
        body_side: 16,
        seed: 4,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&synth, &cfg.templates).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus.write(dir.path()).unwrap();
    let manifest = load_manifest(&dir.path().join("manifest.json"), corpus.classes.len())
        .unwrap()
        .resolve(dir.path());
    let filters = compile_filters(&cfg.text.filter_rules).unwrap();
    let mut long = 0;
    for (entry, patient) in manifest.entries.iter().zip(&corpus.patients) {
        let report = String::from_utf8(read_file(&entry.report_path).unwrap()).unwrap();
        assert_eq!(report, patient.report);
        assert_eq!(load_volume(&entry.volume_path).unwrap(), patient.volume);
        let labels = entry.labels.clone().unwrap();
        assert_eq!(recover_labels(&report, &cfg.templates).unwrap(), labels);
        let prepared = prepare_report(&report, &cfg.text, &filters);
        assert_eq!(recover_labels(&prepared, &cfg.templates).unwrap(), labels);
        long += usize::from(prepared.split_whitespace().count() > cfg.text.context_length);
    }
    assert!(long > 0, "no report exceeds the context length");
}
