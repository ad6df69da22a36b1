//! Keyphrase normalization, exact-match set scoring and confusion-count metrics.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use unicode_normalization::UnicodeNormalization;

use crate::corpus::{GroupData, MemberId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormalizationConfig {
    pub case_fold: bool,
    pub trim: bool,
    pub collapse_internal_whitespace: bool,
    /// NFKC: folds full-width forms, ligatures and similar compatibility variants.
    pub unicode_compatibility_normalize: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            case_fold: true,
            trim: true,
            collapse_internal_whitespace: true,
            unicode_compatibility_normalize: true,
        }
    }
}

impl NormalizationConfig {
    /// Leaves strings untouched.
    pub fn raw() -> Self {
        Self {
            case_fold: false,
            trim: false,
            collapse_internal_whitespace: false,
            unicode_compatibility_normalize: false,
        }
    }
}

fn normalize_once(raw: &str, config: &NormalizationConfig) -> String {
    let mut s: String = if config.unicode_compatibility_normalize {
        raw.nfkc().collect()
    } else {
        raw.to_owned()
    };
    if config.case_fold {
        s = s.to_lowercase();
    }
    if config.collapse_internal_whitespace {
        let mut out = String::with_capacity(s.len());
        let mut in_space = false;
        for c in s.chars() {
            if c.is_whitespace() {
                if !in_space {
                    out.push(' ');
                }
                in_space = true;
            } else {
                out.push(c);
                in_space = false;
            }
        }
        s = out;
    }
    if config.trim {
        s = s.trim().to_owned();
    }
    s
}

/// Canonical form of a keyphrase under `config`. Idempotent.
pub fn normalize_keyphrase(raw: &str, config: &NormalizationConfig) -> String {
    // Lowercasing can leave a string that NFKC would change again (and vice
    // versa), so iterate to the fixed point. Two passes suffice in practice.
    let mut cur = normalize_once(raw, config);
    for _ in 0..8 {
        let next = normalize_once(&cur, config);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

/// Deduplicated, normalized keyphrases with empty strings removed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyphraseSet(BTreeSet<String>);

impl KeyphraseSet {
    pub fn new<S: AsRef<str>>(raw: &[S], config: &NormalizationConfig) -> Self {
        Self(
            raw.iter()
                .map(|s| normalize_keyphrase(s.as_ref(), config))
                .filter(|s| !s.is_empty())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, s: &str) -> bool {
        self.0.contains(s)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn intersection_len(&self, other: &KeyphraseSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn union_len(&self, other: &KeyphraseSet) -> usize {
        self.len() + other.len() - self.intersection_len(other)
    }
}

impl<S: Into<String>> FromIterator<S> for KeyphraseSet {
    /// Collects already-canonical strings as-is (empty strings still dropped).
    fn from_iter<T: IntoIterator<Item = S>>(iter: T) -> Self {
        Self(
            iter.into_iter()
                .map(Into::into)
                .filter(|s: &String| !s.is_empty())
                .collect(),
        )
    }
}

pub fn keyphrase_set<S: AsRef<str>>(raw: &[S], config: &NormalizationConfig) -> KeyphraseSet {
    KeyphraseSet::new(raw, config)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl std::ops::Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Exact-match counts of a predicted set against a reference set.
pub fn instance_counts(pred: &KeyphraseSet, gold: &KeyphraseSet) -> MatchCounts {
    let tp = pred.intersection_len(gold) as u64;
    MatchCounts {
        tp,
        fp: pred.len() as u64 - tp,
        fn_: gold.len() as u64 - tp,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum F1Mode {
    /// Pool counts over the corpus, then compute P/R/F1 once.
    #[default]
    Micro,
    /// Average per-instance F1.
    Macro,
}

impl FromStr for F1Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "micro" => Ok(F1Mode::Micro),
            "macro" => Ok(F1Mode::Macro),
            other => Err(Error::Invalid(format!(
                "f1 mode must be micro or macro, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for F1Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            F1Mode::Micro => "micro",
            F1Mode::Macro => "macro",
        })
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Precision, recall and F1 with the supporting counts.
///
/// `precision` and `recall` are `None` where their denominator is zero.
/// `vacuous` marks a micro score over a corpus where nothing was predicted
/// and nothing was expected; its F1 is reported as 1.0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrfScore {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
    pub counts: MatchCounts,
    pub vacuous: bool,
}

impl PrfScore {
    pub fn from_counts(c: MatchCounts) -> Self {
        let den = 2 * c.tp + c.fp + c.fn_;
        PrfScore {
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            f1: ratio(2 * c.tp, den).unwrap_or(1.0),
            counts: c,
            vacuous: den == 0,
        }
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Corpus-level P/R/F1 over `(prediction, reference)` pairs.
pub fn corpus_f1(instances: &[(KeyphraseSet, KeyphraseSet)], mode: F1Mode) -> Result<PrfScore> {
    if instances.is_empty() {
        return Err(Error::Empty("corpus_f1 needs at least one instance"));
    }
    let per: Vec<MatchCounts> = instances
        .iter()
        .map(|(p, g)| instance_counts(p, g))
        .collect();
    let pooled = per
        .iter()
        .copied()
        .fold(MatchCounts::default(), |a, b| a + b);
    match mode {
        F1Mode::Micro => Ok(PrfScore::from_counts(pooled)),
        F1Mode::Macro => {
            // Both-empty instances are perfect; one-sided empties score 0.
            let scores: Vec<PrfScore> = per.iter().map(|c| PrfScore::from_counts(*c)).collect();
            let f1 = scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64;
            let vacuous_p = |s: &PrfScore| {
                if s.vacuous {
                    Some(1.0)
                } else {
                    s.precision
                }
            };
            let vacuous_r = |s: &PrfScore| {
                if s.vacuous {
                    Some(1.0)
                } else {
                    s.recall
                }
            };
            Ok(PrfScore {
                precision: mean_defined(scores.iter().map(vacuous_p)),
                recall: mean_defined(scores.iter().map(vacuous_r)),
                f1,
                counts: pooled,
                vacuous: scores.iter().all(|s| s.vacuous),
            })
        }
    }
}

/// F1 of one member's predictions against the group's reference labels.
///
/// Gold and silver scoring both go through here; silver is scored on a
/// relabeled copy of the group.
pub fn member_f1(
    group: &GroupData,
    member: &MemberId,
    norm: &NormalizationConfig,
    mode: F1Mode,
) -> Result<PrfScore> {
    group.require_member(member)?;
    let pairs = group
        .member_view(member)
        .map(|(pred, gold)| {
            let gold = gold.ok_or_else(|| Error::NoGold(group.id().to_string()))?;
            Ok((KeyphraseSet::new(pred, norm), KeyphraseSet::new(gold, norm)))
        })
        .collect::<Result<Vec<_>>>()?;
    corpus_f1(&pairs, mode)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Metrics over a full confusion table. Zero-denominator ratios are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub error: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn confusion_metrics(c: ConfusionCounts) -> Result<ConfusionMetrics> {
    let n = c.total();
    if n == 0 {
        return Err(Error::Invalid("confusion counts are all zero".into()));
    }
    let accuracy = (c.tp + c.tn) as f64 / n as f64;
    Ok(ConfusionMetrics {
        accuracy,
        error: 1.0 - accuracy,
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    })
}
