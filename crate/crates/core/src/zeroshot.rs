//! Zero-shot multi-label prediction from positive/negative prompt pairs.
//!
//! For each class, every `(positive, negative)` template pair is filled with
//! the class name and encoded. An image is scored against a pair by the
//! softmax of its two cosine similarities, unscaled by any temperature; the
//! class is predicted present when the aggregated positive probability
//! exceeds 0.5.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpusio::{montage_id, DatasetManifest, Split};
use crate::encoder::{dot, l2_norm, EncoderParams};
use crate::error::{Error, Result};
use crate::metrics::LabelMatrix;
use crate::textprep::{tokenize, TextConfig, Vocabulary};

pub const PLACEHOLDER: &str = "CLASSNAME";

pub const DEFAULT_CLASSES: [&str; 5] = [
    "pulmonary embolism",
    "pneumonia",
    "consolidation",
    "infiltrates",
    "ground glass opacities",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TemplateMode {
    #[default]
    ClassDependent,
    ClassIndependent,
}

impl TemplateMode {
    pub fn short(&self) -> &'static str {
        match self {
            TemplateMode::ClassDependent => "CD",
            TemplateMode::ClassIndependent => "CI",
        }
    }
}

impl FromStr for TemplateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_dependent" | "cd" | "CD" => Ok(TemplateMode::ClassDependent),
            "class_independent" | "ci" | "CI" => Ok(TemplateMode::ClassIndependent),
            other => Err(Error::Config(format!("unknown template mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over pairs of the positive probability.
    #[default]
    MeanProb,
    /// Average and renormalize the embeddings, then score once.
    MeanEmbed,
}

impl FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_prob" => Ok(Aggregation::MeanProb),
            "mean_embed" => Ok(Aggregation::MeanEmbed),
            other => Err(Error::Config(format!("unknown aggregation {other:?}"))),
        }
    }
}

/// A `(positive, negative)` template pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatePair(pub String, pub String);

impl TemplatePair {
    pub fn new(pos: &str, neg: &str) -> Self {
        Self(pos.into(), neg.into())
    }
    pub fn positive(&self) -> &str {
        &self.0
    }
    pub fn negative(&self) -> &str {
        &self.1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTemplates {
    pub name: String,
    pub pairs: Vec<TemplatePair>,
}

/// Config form of the registry: per-class pair lists plus the shared list
/// used in class-independent mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplatesConfig {
    pub mode: TemplateMode,
    pub aggregation: Aggregation,
    pub classes: Vec<ClassTemplates>,
    pub shared_pairs: Vec<TemplatePair>,
}

impl Default for TemplatesConfig {
    fn default() -> Self {
        let pairs = |v: &[(&str, &str)]| v.iter().map(|(p, n)| TemplatePair::new(p, n)).collect();
        let classes = vec![
            ClassTemplates {
                name: DEFAULT_CLASSES[0].into(),
                pairs: pairs(&[
                    ("acute CLASSNAME", "no CLASSNAME"),
                    ("segmental CLASSNAME detected", "CLASSNAME excluded"),
                ]),
            },
            ClassTemplates {
                name: DEFAULT_CLASSES[1].into(),
                pairs: pairs(&[
                    ("consistent with CLASSNAME", "no CLASSNAME"),
                    ("findings suggest CLASSNAME", "no signs of CLASSNAME"),
                ]),
            },
            ClassTemplates {
                name: DEFAULT_CLASSES[2].into(),
                pairs: pairs(&[
                    ("patchy CLASSNAME", "no CLASSNAME"),
                    ("basal CLASSNAME present", "without CLASSNAME"),
                ]),
            },
            ClassTemplates {
                name: DEFAULT_CLASSES[3].into(),
                pairs: pairs(&[
                    ("bilateral CLASSNAME", "no CLASSNAME"),
                    ("diffuse CLASSNAME seen", "CLASSNAME not seen"),
                ]),
            },
            ClassTemplates {
                name: DEFAULT_CLASSES[4].into(),
                pairs: pairs(&[
                    ("peripheral CLASSNAME", "no CLASSNAME"),
                    ("multifocal CLASSNAME visible", "absence of CLASSNAME"),
                ]),
            },
        ];
        Self {
            mode: TemplateMode::ClassDependent,
            aggregation: Aggregation::MeanProb,
            classes,
            shared_pairs: pairs(&[("CLASSNAME", "no CLASSNAME")]),
        }
    }
}

impl TemplatesConfig {
    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Builds the registry for `mode`.
    pub fn registry(&self, mode: TemplateMode) -> Result<TemplateRegistry> {
        let classes = match mode {
            TemplateMode::ClassDependent => self.classes.clone(),
            TemplateMode::ClassIndependent => self
                .classes
                .iter()
                .map(|c| ClassTemplates {
                    name: c.name.clone(),
                    pairs: self.shared_pairs.clone(),
                })
                .collect(),
        };
        TemplateRegistry::new(classes, mode)
    }
}

/// Validated per-class template pairs in class order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    classes: Vec<ClassTemplates>,
    mode: TemplateMode,
}

fn check_template(t: &str) -> Result<()> {
    match t.matches(PLACEHOLDER).count() {
        0 => Err(Error::MissingPlaceholder(t.into())),
        1 => Ok(()),
        _ => Err(Error::MultiplePlaceholders(t.into())),
    }
}

impl TemplateRegistry {
    pub fn new(classes: Vec<ClassTemplates>, mode: TemplateMode) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidRegistry("no classes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &classes {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidRegistry(format!("duplicate class {:?}", c.name)));
            }
            if c.pairs.is_empty() {
                return Err(Error::InvalidRegistry(format!("class {:?} has no pairs", c.name)));
            }
            for p in &c.pairs {
                check_template(p.positive())?;
                check_template(p.negative())?;
            }
        }
        if mode == TemplateMode::ClassIndependent
            && classes.iter().any(|c| c.pairs != classes[0].pairs)
        {
            return Err(Error::InvalidRegistry(
                "class-independent mode needs identical pair lists".into(),
            ));
        }
        Ok(Self { classes, mode })
    }

    pub fn classes(&self) -> &[ClassTemplates] {
        &self.classes
    }

    pub fn mode(&self) -> TemplateMode {
        self.mode
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }

    /// Every substituted prompt, positive then negative per pair, class order.
    pub fn prompts(&self) -> Vec<String> {
        self.classes
            .iter()
            .flat_map(|c| {
                c.pairs.iter().flat_map(move |p| {
                    [
                        substitute_unchecked(p.positive(), &c.name),
                        substitute_unchecked(p.negative(), &c.name),
                    ]
                })
            })
            .collect()
    }
}

fn substitute_unchecked(template: &str, class_name: &str) -> String {
    template.replacen(PLACEHOLDER, class_name, 1)
}

/// Replaces the single `CLASSNAME` placeholder with `class_name`.
pub fn substitute(template: &str, class_name: &str) -> Result<String> {
    check_template(template)?;
    Ok(substitute_unchecked(template, class_name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub name: String,
    pub positive: Vec<Vec<f64>>,
    pub negative: Vec<Vec<f64>>,
}

/// Encoded prompt embeddings aligned with the registry's pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotWeights {
    pub classes: Vec<ClassWeights>,
}

impl ZeroShotWeights {
    pub fn class_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }
}

/// Builds weights with an arbitrary prompt encoder returning unit vectors.
pub fn build_weights_with<F>(registry: &TemplateRegistry, mut encode: F) -> Result<ZeroShotWeights>
where
    F: FnMut(&str) -> Result<Vec<f64>>,
{
    let mut classes = Vec::with_capacity(registry.classes.len());
    for c in &registry.classes {
        let mut positive = Vec::with_capacity(c.pairs.len());
        let mut negative = Vec::with_capacity(c.pairs.len());
        for p in &c.pairs {
            positive.push(encode(&substitute(p.positive(), &c.name)?)?);
            negative.push(encode(&substitute(p.negative(), &c.name)?)?);
        }
        classes.push(ClassWeights {
            name: c.name.clone(),
            positive,
            negative,
        });
    }
    Ok(ZeroShotWeights { classes })
}

/// Encodes every prompt with the toy text encoder.
pub fn build_weights(
    registry: &TemplateRegistry,
    params: &EncoderParams,
    vocab: &Vocabulary,
    text_config: &TextConfig,
) -> Result<ZeroShotWeights> {
    build_weights_with(registry, |prompt| {
        crate::encoder::encode_text(&tokenize(prompt, vocab, text_config), params)
    })
}

/// Softmax over the two cosine similarities, with no temperature.
pub fn score_pair(image: &[f64], positive: &[f64], negative: &[f64]) -> (f64, f64) {
    let delta = dot(image, positive) - dot(image, negative);
    // logistic of delta, evaluated on the side that cannot overflow
    if delta >= 0.0 {
        let e = (-delta).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = delta.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrediction {
    pub name: String,
    pub prob_positive: f64,
    pub label: u8,
    /// `(p_pos, p_neg)` for every pair, in registry order.
    pub pair_probs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub classes: Vec<ClassPrediction>,
}

impl Prediction {
    pub fn labels(&self) -> Vec<u8> {
        self.classes.iter().map(|c| c.label).collect()
    }
}

fn mean_unit(vectors: &[Vec<f64>], class: &str) -> Result<Vec<f64>> {
    let d = vectors[0].len();
    let mut acc = vec![0.0; d];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = l2_norm(&acc);
    if n < crate::encoder::MIN_NORM {
        return Err(Error::DegenerateMeanEmbedding(class.into()));
    }
    Ok(acc.into_iter().map(|x| x / n).collect())
}

pub fn predict(image: &[f64], weights: &ZeroShotWeights, aggregation: Aggregation) -> Result<Prediction> {
    let mut classes = Vec::with_capacity(weights.classes.len());
    for c in &weights.classes {
        let pair_probs: Vec<(f64, f64)> = c
            .positive
            .iter()
            .zip(&c.negative)
            .map(|(p, n)| score_pair(image, p, n))
            .collect();
        let prob_positive = match aggregation {
            Aggregation::MeanProb => {
                pair_probs.iter().map(|p| p.0).sum::<f64>() / pair_probs.len() as f64
            }
            Aggregation::MeanEmbed if c.positive.len() == 1 => pair_probs[0].0,
            Aggregation::MeanEmbed => {
                let pos = mean_unit(&c.positive, &c.name)?;
                let neg = mean_unit(&c.negative, &c.name)?;
                score_pair(image, &pos, &neg).0
            }
        };
        classes.push(ClassPrediction {
            name: c.name.clone(),
            prob_positive,
            label: u8::from(prob_positive > 0.5),
            pair_probs,
        });
    }
    Ok(Prediction { classes })
}

/// Test-set predictions in manifest order, with the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub patient_ids: Vec<String>,
    pub predictions: Vec<Prediction>,
    pub labels: LabelMatrix<'static>,
}

/// Looks up the image embedding of `patient_id`: the repeat-0 montage id
/// first, then the bare patient id.
pub fn lookup_embedding<'a>(
    embeddings: &'a HashMap<String, Vec<f64>>,
    patient_id: &str,
) -> Option<&'a Vec<f64>> {
    embeddings
        .get(&montage_id(patient_id, 0))
        .or_else(|| embeddings.get(patient_id))
}

/// Predicts every test entry of `manifest`.
pub fn evaluate_manifest(
    manifest: &DatasetManifest,
    image_embeddings: &HashMap<String, Vec<f64>>,
    weights: &ZeroShotWeights,
    aggregation: Aggregation,
) -> Result<Evaluation> {
    let tests: Vec<_> = manifest.entries_in(Split::Test).collect();
    if tests.is_empty() {
        return Err(Error::MissingLabels("manifest has no test entries".into()));
    }
    let l = weights.classes.len();
    let mut patient_ids = Vec::with_capacity(tests.len());
    let mut predictions = Vec::with_capacity(tests.len());
    let mut predicted = Vec::with_capacity(tests.len() * l);
    let mut target = Vec::with_capacity(tests.len() * l);
    for e in tests {
        let labels = e
            .labels
            .as_ref()
            .ok_or_else(|| Error::MissingLabels(format!("test patient {:?}", e.patient_id)))?;
        if labels.len() != l {
            return Err(Error::LabelArityMismatch {
                patient_id: e.patient_id.clone(),
                expected: l,
                found: labels.len(),
            });
        }
        let emb = lookup_embedding(image_embeddings, &e.patient_id)
            .ok_or_else(|| Error::MissingEmbedding(e.patient_id.clone()))?;
        let p = predict(emb, weights, aggregation)?;
        predicted.extend(p.labels());
        target.extend_from_slice(labels);
        patient_ids.push(e.patient_id.clone());
        predictions.push(p);
    }
    let labels = LabelMatrix::new(patient_ids.len(), l, predicted, target)?;
    Ok(Evaluation {
        patient_ids,
        predictions,
        labels,
    })
}

fn column_name(class: &str) -> String {
    class.replace(|c: char| !c.is_alphanumeric(), "_")
}

/// `patient_id, prob_<class>..., label_<class>...`
pub fn predictions_csv(eval: &Evaluation) -> String {
    let mut out = String::from("patient_id");
    let names: Vec<String> = eval
        .predictions
        .first()
        .map(|p| p.classes.iter().map(|c| column_name(&c.name)).collect())
        .unwrap_or_default();
    for n in &names {
        write!(out, ",prob_{n}").unwrap();
    }
    for n in &names {
        write!(out, ",label_{n}").unwrap();
    }
    out.push('\n');
    for (pid, p) in eval.patient_ids.iter().zip(&eval.predictions) {
        out.push_str(pid);
        for c in &p.classes {
            write!(out, ",{:.17e}", c.prob_positive).unwrap();
        }
        for c in &p.classes {
            write!(out, ",{}", c.label).unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpusio::ManifestEntry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        let n = l2_norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn substitution_examples() {
        assert_eq!(substitute("no CLASSNAME", "pulmonary embolism").unwrap(), "no pulmonary embolism");
        assert_eq!(substitute("bilateral CLASSNAME", "infiltrates").unwrap(), "bilateral infiltrates");
        assert_eq!(substitute("CLASSNAME", "pneumonia").unwrap(), "pneumonia");
        assert!(matches!(substitute("no class", "x"), Err(Error::MissingPlaceholder(_))));
        assert!(matches!(
            substitute("CLASSNAME and CLASSNAME", "x"),
            Err(Error::MultiplePlaceholders(_))
        ));
    }

    #[test]
    fn default_registry_is_valid() {
        let cfg = TemplatesConfig::default();
        let cd = cfg.registry(TemplateMode::ClassDependent).unwrap();
        assert_eq!(cd.class_names(), DEFAULT_CLASSES);
        let ci = cfg.registry(TemplateMode::ClassIndependent).unwrap();
        assert!(ci.classes().iter().all(|c| c.pairs == ci.classes()[0].pairs));
        assert!(cd
            .classes()
            .iter()
            .flat_map(|c| &c.pairs)
            .any(|p| p.negative() == "no CLASSNAME"));
    }

    #[test]
    fn ci_mode_rejects_differing_lists() {
        let classes = vec![
            ClassTemplates {
                name: "a".into(),
                pairs: vec![TemplatePair::new("CLASSNAME", "no CLASSNAME")],
            },
            ClassTemplates {
                name: "b".into(),
                pairs: vec![TemplatePair::new("big CLASSNAME", "no CLASSNAME")],
            },
        ];
        assert!(TemplateRegistry::new(classes.clone(), TemplateMode::ClassDependent).is_ok());
        assert!(matches!(
            TemplateRegistry::new(classes, TemplateMode::ClassIndependent),
            Err(Error::InvalidRegistry(_))
        ));
    }

    #[test]
    fn weights_follow_registry_shape() {
        let reg = TemplatesConfig::default().registry(TemplateMode::ClassDependent).unwrap();
        let mut calls = Vec::new();
        let w = build_weights_with(&reg, |p| {
            calls.push(p.to_owned());
            Ok(vec![1.0, 0.0])
        })
        .unwrap();
        assert_eq!(w.classes.len(), 5);
        assert!(w.classes.iter().all(|c| c.positive.len() == 2 && c.negative.len() == 2));
        assert_eq!(calls, reg.prompts());
        assert_eq!(calls[0], "acute pulmonary embolism");
    }

    #[test]
    fn equal_similarities_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = unit(&mut rng, 8);
        let e = unit(&mut rng, 8);
        assert_eq!(score_pair(&img, &e, &e), (0.5, 0.5));
    }

    #[test]
    fn aligned_versus_orthogonal() {
        let (p, n) = score_pair(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]);
        let e = std::f64::consts::E;
        assert!((p - e / (e + 1.0)).abs() < 1e-15);
        assert!((n - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((p - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn decision_matches_similarity_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (i, p, n) = (unit(&mut rng, 16), unit(&mut rng, 16), unit(&mut rng, 16));
            let (pp, pn) = score_pair(&i, &p, &n);
            assert_eq!(pp > 0.5, dot(&i, &p) > dot(&i, &n));
            assert!((pp + pn - 1.0).abs() < 1e-9);
        }
    }

    fn weights_from(classes: &[(&str, Vec<(Vec<f64>, Vec<f64>)>)]) -> ZeroShotWeights {
        ZeroShotWeights {
            classes: classes
                .iter()
                .map(|(name, pairs)| ClassWeights {
                    name: name.to_string(),
                    positive: pairs.iter().map(|p| p.0.clone()).collect(),
                    negative: pairs.iter().map(|p| p.1.clone()).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn single_pair_modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = weights_from(&[("a", vec![(unit(&mut rng, 4), unit(&mut rng, 4))])]);
        let img = unit(&mut rng, 4);
        assert_eq!(
            predict(&img, &w, Aggregation::MeanProb).unwrap().classes[0].prob_positive,
            predict(&img, &w, Aggregation::MeanEmbed).unwrap().classes[0].prob_positive
        );
    }

    #[test]
    fn mean_prob_averages_pairs() {
        // pick pairs with p_pos 0.6 and 0.8: delta = logit(p) along e1
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let pair = |p: f64| {
            let d = logit(p);
            (vec![d / 2.0, 0.0], vec![-d / 2.0, 0.0])
        };
        let w = weights_from(&[("a", vec![pair(0.6), pair(0.8)])]);
        let pred = predict(&[1.0, 0.0], &w, Aggregation::MeanProb).unwrap();
        assert!((pred.classes[0].prob_positive - 0.7).abs() < 1e-12);
        assert_eq!(pred.classes[0].label, 1);
    }

    #[test]
    fn degenerate_mean_embedding() {
        let w = weights_from(&[(
            "a",
            vec![(vec![1.0, 0.0], vec![0.0, 1.0]), (vec![-1.0, 0.0], vec![0.0, 1.0])],
        )]);
        assert!(matches!(
            predict(&[1.0, 0.0], &w, Aggregation::MeanEmbed),
            Err(Error::DegenerateMeanEmbedding(_))
        ));
    }

    #[test]
    fn class_permutation_permutes_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let names = ["a", "b", "c", "d", "e"];
        let classes: Vec<_> = names
            .iter()
            .map(|n| {
                (*n, (0..3).map(|_| (unit(&mut rng, 6), unit(&mut rng, 6))).collect::<Vec<_>>())
            })
            .collect();
        let w = weights_from(&classes);
        let perm = [3, 0, 4, 1, 2];
        let wp = weights_from(&perm.map(|i| classes[i].clone()));
        for _ in 0..20 {
            let img = unit(&mut rng, 6);
            let a = predict(&img, &w, Aggregation::MeanProb).unwrap();
            let b = predict(&img, &wp, Aggregation::MeanProb).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                assert_eq!(b.classes[k], a.classes[i]);
            }
        }
    }

    fn entry(pid: &str, split: Split, labels: Option<Vec<u8>>) -> ManifestEntry {
        ManifestEntry {
            patient_id: pid.into(),
            volume_path: "v".into(),
            report_path: "r".into(),
            labels,
            split,
        }
    }

    #[test]
    fn evaluate_manifest_counts_and_errors() {
        let w = weights_from(&[("a", vec![(vec![1.0, 0.0], vec![0.0, 1.0])])]);
        let mut emb = HashMap::new();
        emb.insert(montage_id("P1", 0), vec![1.0, 0.0]);
        emb.insert("P2".to_string(), vec![0.0, 1.0]);
        let m = DatasetManifest {
            classes: vec![],
            entries: vec![
                entry("P0", Split::Train, None),
                entry("P1", Split::Test, Some(vec![1])),
                entry("P2", Split::Test, Some(vec![1])),
            ],
        };
        let ev = evaluate_manifest(&m, &emb, &w, Aggregation::MeanProb).unwrap();
        assert_eq!(ev.patient_ids, ["P1", "P2"]);
        assert_eq!(ev.labels.predicted(), &[1, 0]);
        let csv = predictions_csv(&ev);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("patient_id,prob_a,label_a\n"));

        let mut missing = m.clone();
        missing.entries.push(entry("P3", Split::Test, Some(vec![0])));
        assert!(matches!(
            evaluate_manifest(&missing, &emb, &w, Aggregation::MeanProb),
            Err(Error::MissingEmbedding(id)) if id == "P3"
        ));
        let empty = DatasetManifest {
            classes: vec![],
            entries: vec![entry("P0", Split::Train, None)],
        };
        assert!(matches!(
            evaluate_manifest(&empty, &emb, &w, Aggregation::MeanProb),
            Err(Error::MissingLabels(_))
        ));
    }
}
