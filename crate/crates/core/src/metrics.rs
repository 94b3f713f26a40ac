//! Multi-label evaluation: per-class F1, macro-average F1, Hamming loss and
//! subset accuracy.
//!
//! Everything is computed from integer counts with a single final division,
//! so results are exact rationals rounded once.

use std::borrow::Cow;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N x L` prediction bits `X` and target bits `Y`, row-major. Owns its
/// buffers ([`LabelMatrix::new`]) or borrows them ([`LabelMatrix::borrowed`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix<'a> {
    n: usize,
    l: usize,
    predicted: Cow<'a, [u8]>,
    target: Cow<'a, [u8]>,
}

#[inline]
fn check_shape(n: usize, l: usize, predicted: &[u8], target: &[u8]) -> Result<()> {
    if n == 0 || l == 0 {
        return Err(Error::ShapeMismatch(format!("empty label matrix {n}x{l}")));
    }
    if predicted.len() != n * l || target.len() != n * l {
        return Err(Error::ShapeMismatch(format!(
            "expected {} entries, got {} predicted / {} target",
            n * l,
            predicted.len(),
            target.len()
        )));
    }
    let or = |v: &[u8]| v.iter().fold(0u8, |a, &b| a | b);
    if (or(predicted) | or(target)) > 1 {
        return Err(Error::ShapeMismatch("label entries must be 0 or 1".into()));
    }
    Ok(())
}

impl LabelMatrix<'static> {
    pub fn new(n: usize, l: usize, predicted: Vec<u8>, target: Vec<u8>) -> Result<Self> {
        check_shape(n, l, &predicted, &target)?;
        Ok(Self {
            n,
            l,
            predicted: Cow::Owned(predicted),
            target: Cow::Owned(target),
        })
    }

    pub fn from_rows(predicted: &[Vec<u8>], target: &[Vec<u8>]) -> Result<Self> {
        let n = predicted.len();
        let l = predicted.first().map_or(0, Vec::len);
        if target.len() != n || predicted.iter().chain(target).any(|r| r.len() != l) {
            return Err(Error::ShapeMismatch("ragged or mismatched label rows".into()));
        }
        Self::new(n, l, predicted.concat(), target.concat())
    }
}

impl<'a> LabelMatrix<'a> {
    #[inline]
    pub fn borrowed(n: usize, l: usize, predicted: &'a [u8], target: &'a [u8]) -> Result<Self> {
        check_shape(n, l, predicted, target)?;
        Ok(Self {
            n,
            l,
            predicted: Cow::Borrowed(predicted),
            target: Cow::Borrowed(target),
        })
    }

    pub fn samples(&self) -> usize {
        self.n
    }
    pub fn classes(&self) -> usize {
        self.l
    }
    pub fn predicted(&self) -> &[u8] {
        &self.predicted
    }
    pub fn target(&self) -> &[u8] {
        &self.target
    }

    pub fn predicted_row(&self, i: usize) -> &[u8] {
        &self.predicted[i * self.l..(i + 1) * self.l]
    }
    pub fn target_row(&self, i: usize) -> &[u8] {
        &self.target[i * self.l..(i + 1) * self.l]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// F1 as the fraction `2TP / (2TP + FP + FN)`, or `0/1` when TP is 0.
    ///
    /// This equals `2PR / (P + R)`; a zero precision or recall
    /// denominator counts as 0.
    #[inline]
    pub fn f1_fraction(&self) -> (u64, u64) {
        if self.tp == 0 {
            (0, 1)
        } else {
            (2 * self.tp, 2 * self.tp + self.fp + self.fn_)
        }
    }

    pub fn f1(&self) -> f64 {
        let (num, den) = self.f1_fraction();
        num as f64 / den as f64
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion_counts(m: &LabelMatrix) -> Vec<ConfusionCounts> {
    let mut counts = Vec::with_capacity(m.l);
    confusion_counts_into(m, &mut counts);
    counts
}

/// [`confusion_counts`] into a reusable buffer.
#[inline]
pub fn confusion_counts_into(m: &LabelMatrix, counts: &mut Vec<ConfusionCounts>) {
    tally(m, counts);
}

/// Fills `counts` and returns the number of exactly matched rows.
#[inline]
fn tally(m: &LabelMatrix, counts: &mut Vec<ConfusionCounts>) -> u64 {
    counts.clear();
    counts.resize(m.l, ConfusionCounts::default());
    let mut exact = 0;
    let (mut j, mut diff) = (0, 0u8);
    // accumulate tp, predicted positives (in fp) and actual positives (in fn_)
    for (&x, &y) in m.predicted.iter().zip(m.target.iter()) {
        let c = &mut counts[j];
        c.tp += u64::from(x & y);
        c.fp += u64::from(x);
        c.fn_ += u64::from(y);
        diff |= x ^ y;
        j += 1;
        if j == m.l {
            exact += u64::from(diff == 0);
            (j, diff) = (0, 0);
        }
    }
    let n = m.n as u64;
    for c in counts.iter_mut() {
        c.tn = n + c.tp - c.fp - c.fn_;
        c.fp -= c.tp;
        c.fn_ -= c.tp;
    }
    exact
}

/// Macro-averaged F1, Hamming loss and subset accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Headline {
    pub macro_avg_f1: f64,
    pub hamming_loss: f64,
    pub subset_accuracy: f64,
}

/// All three headline metrics from a single pass; `counts` receives the
/// per-class confusion counts.
#[inline]
pub fn headline_into(m: &LabelMatrix, counts: &mut Vec<ConfusionCounts>) -> Headline {
    let exact = tally(m, counts);
    let wrong: u64 = counts.iter().map(|c| c.fp + c.fn_).sum();
    Headline {
        macro_avg_f1: macro_f1(counts),
        hamming_loss: wrong as f64 / (m.n * m.l) as f64,
        subset_accuracy: exact as f64 / m.n as f64,
    }
}

pub fn f1_per_class(counts: &[ConfusionCounts]) -> Vec<f64> {
    counts.iter().map(ConfusionCounts::f1).collect()
}

#[inline]
fn gcd_u64(a: u64, b: u64) -> u64 {
    if a == 0 || b == 0 {
        return a | b;
    }
    let shift = (a | b).trailing_zeros();
    let (mut a, mut b) = (a >> a.trailing_zeros(), b);
    while b != 0 {
        b >>= b.trailing_zeros();
        if a > b {
            (a, b) = (b, a);
        }
        b -= a;
    }
    a << shift
}

fn gcd_u128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Integers up to 2^53 convert to f64 exactly, so one division of such a
/// pair is the correctly rounded value of the fraction.
const EXACT_F64: u128 = 1 << 53;

/// Sum over the product of the denominators, without intermediate
/// reduction; `None` on overflow.
fn mean_u64(counts: &[ConfusionCounts]) -> Option<f64> {
    let (mut num, mut den) = (0u64, 1u64);
    for c in counts {
        let (a, b) = c.f1_fraction();
        if a == 0 {
            continue;
        }
        if b == den {
            num = num.checked_add(a)?;
        } else {
            num = num.checked_mul(b)?.checked_add(a.checked_mul(den)?)?;
            den = den.checked_mul(b)?;
        }
    }
    let mut den = den.checked_mul(counts.len() as u64)?;
    if den as u128 > EXACT_F64 {
        let g = gcd_u64(num, den).max(1);
        (num, den) = (num / g, den / g);
    }
    (den as u128 <= EXACT_F64).then(|| num as f64 / den as f64)
}

/// Sum over the lcm of the denominators; `None` on overflow.
fn mean_u128(counts: &[ConfusionCounts]) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for c in counts {
        let (a, b) = c.f1_fraction();
        let (a, b) = (a as u128, b as u128);
        if a == 0 {
            continue;
        }
        let g = gcd_u128(den, b);
        let scale = b / g;
        num = num.checked_mul(scale)?.checked_add(a.checked_mul(den / g)?)?;
        den = den.checked_mul(scale)?;
    }
    let den = den.checked_mul(counts.len() as u128)?;
    let g = gcd_u128(num, den).max(1);
    let (num, den) = (num / g, den / g);
    (den <= EXACT_F64).then(|| num as f64 / den as f64)
}

/// Mean of per-class F1 as one rational rounded once, falling back to a
/// float mean when the exact fraction does not fit.
#[inline]
pub fn macro_f1(counts: &[ConfusionCounts]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    mean_u64(counts)
        .or_else(|| mean_u128(counts))
        .unwrap_or_else(|| f1_per_class(counts).iter().sum::<f64>() / counts.len() as f64)
}

/// Fraction of mismatched bits over `N * L`.
#[inline]
pub fn hamming_loss(m: &LabelMatrix) -> f64 {
    let wrong: u64 = m
        .predicted
        .iter()
        .zip(m.target.iter())
        .map(|(x, y)| u64::from(x ^ y))
        .sum();
    wrong as f64 / (m.n * m.l) as f64
}

/// Fraction of rows predicted exactly.
#[inline]
pub fn subset_accuracy(m: &LabelMatrix) -> f64 {
    let exact = m
        .predicted
        .chunks_exact(m.l)
        .zip(m.target.chunks_exact(m.l))
        .filter(|(x, y)| x.iter().zip(*y).fold(0u8, |d, (a, b)| d | (a ^ b)) == 0)
        .count();
    exact as f64 / m.n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub per_class_f1: Vec<f64>,
    pub macro_avg_f1: f64,
    pub hamming_loss: f64,
    pub subset_accuracy: f64,
    pub counts: Vec<ConfusionCounts>,
    pub samples: usize,
}

pub fn evaluate(m: &LabelMatrix) -> MetricsReport {
    let mut counts = Vec::with_capacity(m.l);
    let h = headline_into(m, &mut counts);
    MetricsReport {
        classes: (0..m.l).map(|j| format!("class_{j}")).collect(),
        per_class_f1: f1_per_class(&counts),
        macro_avg_f1: h.macro_avg_f1,
        hamming_loss: h.hamming_loss,
        subset_accuracy: h.subset_accuracy,
        counts,
        samples: m.n,
    }
}

impl MetricsReport {
    pub fn with_class_names<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        if names.len() == self.classes.len() {
            self.classes = names.iter().map(|s| s.as_ref().to_owned()).collect();
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned table: headline columns first, then per-class F1.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<16} {:>13} {:>8} {:>10}", "", "Macro Avg. F1", "HL", "Sub. Acc.").unwrap();
        writeln!(
            out,
            "{:<16} {:>13.4} {:>8.4} {:>10.4}",
            "overall", self.macro_avg_f1, self.hamming_loss, self.subset_accuracy
        )
        .unwrap();
        writeln!(out).unwrap();
        writeln!(out, "{:<26} {:>6} {:>6} {:>6} {:>6} {:>8}", "class", "TP", "FP", "FN", "TN", "F1").unwrap();
        for ((name, c), f1) in self.classes.iter().zip(&self.counts).zip(&self.per_class_f1) {
            writeln!(
                out,
                "{:<26} {:>6} {:>6} {:>6} {:>6} {:>8.4}",
                name, c.tp, c.fp, c.fn_, c.tn, f1
            )
            .unwrap();
        }
        out
    }
}
