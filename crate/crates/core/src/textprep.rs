//! Report text preparation: section extraction, delete-filters, a
//! whitespace vocabulary, fixed-length tokenization and word counts.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpusio::{read_file, write_atomic};
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TruncationSide {
    Left,
    #[default]
    Right,
}

impl fmt::Display for TruncationSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TruncationSide::Left => "left",
            TruncationSide::Right => "right",
        })
    }
}

impl FromStr for TruncationSide {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(TruncationSide::Left),
            "right" => Ok(TruncationSide::Right),
            other => Err(Error::Config(format!(
                "truncation side must be left or right, got {other:?}"
            ))),
        }
    }
}

pub fn default_filter_rules() -> Vec<String> {
    vec![
        // de-identification brackets: "[dr. x]", "[**name**]"
        r"\[[^\]]*\]".into(),
        // page headers
        r"(?i)\bpage\s+\d+\s+(?:of|/)\s+\d+\b".into(),
        // list numbering at line start: "1. ", "2) "
        r"(?m)^\s*\d{1,2}[.)]\s+".into(),
        // separator runs
        r"[-_=*]{3,}".into(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextConfig {
    pub context_length: usize,
    pub truncation_side: TruncationSide,
    pub section_start_markers: Vec<String>,
    pub section_end_markers: Vec<String>,
    pub filter_rules: Vec<String>,
    pub lowercase: bool,
    pub min_freq: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            context_length: 77,
            truncation_side: TruncationSide::Right,
            section_start_markers: vec!["LUNG PARENCHYMA:".into(), "LUNGS:".into(), "LUNG".into()],
            section_end_markers: vec![
                "PLEURA:".into(),
                "HEART:".into(),
                "MEDIASTINUM:".into(),
                "BONES:".into(),
                "IMPRESSION:".into(),
            ],
            filter_rules: default_filter_rules(),
            lowercase: true,
            min_freq: 1,
        }
    }
}

impl TextConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_length < 2 {
            return Err(Error::InvalidTextConfig(format!(
                "context_length {} leaves no room for bos/eos",
                self.context_length
            )));
        }
        if self.min_freq == 0 {
            return Err(Error::InvalidTextConfig("min_freq must be at least 1".into()));
        }
        compile_filters(&self.filter_rules).map(|_| ())
    }
}

// ---------------------------------------------------------------------------
// sectioning and filters

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub text: String,
    /// No start marker matched; `text` is the whole report.
    pub unsectioned: bool,
}

/// Finds the first line starting at or after byte `from` whose head (leading
/// whitespace ignored) begins with one of `markers`. Returns the marker's
/// byte span; ties go to the longest marker.
fn find_marker(text: &str, markers: &[String], from: usize) -> Option<(usize, usize)> {
    let mut next = 0;
    for line in text.split_inclusive('\n') {
        let line_start = next;
        next += line.len();
        if line_start < from {
            continue;
        }
        let lead = line.len() - line.trim_start().len();
        let head = &line[lead..];
        if let Some(m) = markers
            .iter()
            .filter(|m| !m.is_empty() && head.starts_with(m.as_str()))
            .max_by_key(|m| m.len())
        {
            let at = line_start + lead;
            return Some((at, at + m.len()));
        }
    }
    None
}

/// Returns the text between the first start marker and the next end marker.
///
/// Markers match at the start of a line (leading whitespace ignored). Text
/// after the start marker on its own line is kept; the end marker line and
/// everything after it are dropped.
pub fn extract_section(report: &str, config: &TextConfig) -> Section {
    let Some((_, body_start)) = find_marker(report, &config.section_start_markers, 0) else {
        return Section {
            text: report.to_owned(),
            unsectioned: true,
        };
    };
    let body_end = find_marker(report, &config.section_end_markers, body_start)
        .map_or(report.len(), |(s, _)| s);
    Section {
        text: report[body_start..body_end].trim().to_owned(),
        unsectioned: false,
    }
}

/// Ordered delete-patterns, compiled once at config load.
#[derive(Debug, Clone)]
pub struct FilterSet {
    rules: Vec<Regex>,
}

pub fn compile_filters(rules: &[String]) -> Result<FilterSet> {
    let rules = rules
        .iter()
        .map(|r| {
            Regex::new(r).map_err(|e| Error::InvalidFilterRule {
                rule: r.clone(),
                reason: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FilterSet { rules })
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl FilterSet {
    fn pass(&self, text: &str) -> String {
        let mut t = text.to_owned();
        for r in &self.rules {
            if let std::borrow::Cow::Owned(s) = r.replace_all(&t, "") {
                t = s;
            }
        }
        collapse_whitespace(&t)
    }

    /// Applies the rules in order, then collapses whitespace, repeating
    /// until the text no longer changes (so the result is a fixed point).
    pub fn apply(&self, text: &str) -> String {
        let mut current = self.pass(text);
        loop {
            let next = self.pass(&current);
            if next == current {
                return current;
            }
            current = next;
        }
    }
}

pub fn apply_filters(text: &str, filters: &FilterSet) -> String {
    filters.apply(text)
}

/// Sectioning followed by filtering; the text that gets tokenized.
pub fn prepare_report(report: &str, config: &TextConfig, filters: &FilterSet) -> String {
    filters.apply(&extract_section(report, config).text)
}

// ---------------------------------------------------------------------------
// vocabulary

/// Lowercase (optionally), map every non-alphanumeric character to a space
/// and split on whitespace.
pub fn normalize_tokens(text: &str, lowercase: bool) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_owned() })
        .collect()
}

fn count_tokens<'a>(corpus: impl IntoIterator<Item = &'a str>) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for doc in corpus {
        for t in normalize_tokens(doc, true) {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    counts
}

fn sorted_counts(counts: HashMap<String, usize>) -> Vec<(String, usize)> {
    let mut v: Vec<_> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_freq: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    min_freq: usize,
    token_to_id: std::collections::BTreeMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            index,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIAL_TOKENS.len()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Non-special tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[SPECIAL_TOKENS.len()..]
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            min_freq: self.min_freq,
            token_to_id: self.index.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)
            .map_err(|e| Error::MalformedHeader(format!("vocabulary: {e}")))?;
        let n = file.token_to_id.len();
        let mut tokens = vec![None; n];
        for (tok, id) in file.token_to_id {
            let slot = tokens.get_mut(id as usize).ok_or_else(|| {
                Error::MalformedHeader(format!("vocabulary id {id} not dense"))
            })?;
            if slot.replace(tok).is_some() {
                return Err(Error::MalformedHeader(format!("vocabulary id {id} reused")));
            }
        }
        let tokens: Vec<String> = tokens
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::MalformedHeader("vocabulary ids not dense".into()))?;
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS.map(String::from)
        {
            return Err(Error::MalformedHeader(
                "vocabulary special tokens missing".into(),
            ));
        }
        Ok(Self::from_tokens(tokens, file.min_freq))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        Self::from_json(&String::from_utf8_lossy(&bytes))
    }
}

/// Specials first, then tokens with count ≥ `min_freq` sorted by
/// descending count and then lexicographically.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[S], min_freq: usize) -> Result<Vocabulary> {
    let counts = count_tokens(corpus.iter().map(AsRef::as_ref));
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        sorted_counts(counts)
            .into_iter()
            .filter(|(_, c)| *c >= min_freq)
            .map(|(t, _)| t),
    );
    if tokens.len() == SPECIAL_TOKENS.len() {
        return Err(Error::EmptyVocabulary(min_freq));
    }
    Ok(Vocabulary::from_tokens(tokens, min_freq))
}

// ---------------------------------------------------------------------------
// tokenization

/// `bos body eos pad*`, always exactly `context_length` ids long.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub true_length: usize,
    pub truncated: bool,
    pub side: TruncationSide,
}

impl TokenSequence {
    pub fn context_length(&self) -> usize {
        self.ids.len()
    }

    /// The non-pad prefix, including bos and eos.
    pub fn content(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }
}

/// Tokenizes into a fixed window. Over-long bodies keep their first
/// `context_length - 2` tokens (right truncation) or last ones (left);
/// bos/eos are always kept and padding always follows eos.
pub fn tokenize(text: &str, vocab: &Vocabulary, config: &TextConfig) -> TokenSequence {
    let ctx = config.context_length.max(2);
    let body: Vec<u32> = normalize_tokens(text, config.lowercase)
        .iter()
        .map(|t| vocab.id(t).unwrap_or(UNK_ID))
        .collect();
    let room = ctx - 2;
    let truncated = body.len() > room;
    let kept = if !truncated {
        &body[..]
    } else {
        match config.truncation_side {
            TruncationSide::Right => &body[..room],
            TruncationSide::Left => &body[body.len() - room..],
        }
    };
    let mut ids = Vec::with_capacity(ctx);
    ids.push(BOS_ID);
    ids.extend_from_slice(kept);
    ids.push(EOS_ID);
    let true_length = ids.len();
    ids.resize(ctx, PAD_ID);
    TokenSequence {
        ids,
        true_length,
        truncated,
        side: config.truncation_side,
    }
}

/// Token counts sorted by descending count, ties lexicographic; tokens of
/// any exclusion phrase are dropped.
pub fn word_frequencies<S: AsRef<str>, E: AsRef<str>>(
    corpus: &[S],
    exclusions: &[E],
) -> Vec<(String, usize)> {
    let excluded: std::collections::HashSet<String> = exclusions
        .iter()
        .flat_map(|e| normalize_tokens(e.as_ref(), true))
        .collect();
    let mut counts = count_tokens(corpus.iter().map(AsRef::as_ref));
    counts.retain(|t, _| !excluded.contains(t));
    sorted_counts(counts)
}
