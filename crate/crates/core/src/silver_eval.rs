//! Scoring against machine-generated ("silver") labels and comparing that
//! route with the agreement-based estimate.

use std::collections::BTreeMap;

use crate::corpus::{labels_by_group, EnsembleCorpus, GoldRecord, GroupId, MemberId, Violation};
use crate::error::{Error, Result};
use crate::estimator::GroupPrediction;
use crate::kpe_metrics::{member_f1, F1Mode, NormalizationConfig, PrfScore};

#[derive(Clone, Debug, PartialEq)]
pub struct SilverReportRow {
    pub group: GroupId,
    pub member: MemberId,
    pub f1_silver: f64,
    pub f1_gold: f64,
    pub abs_gap: f64,
}

/// Scores a member against silver labels through the gold-scoring path.
pub fn silver_score(
    corpus: &EnsembleCorpus,
    group: &GroupId,
    member: &MemberId,
    silver: &[GoldRecord],
    norm: &NormalizationConfig,
    mode: F1Mode,
) -> Result<PrfScore> {
    let g = corpus.group(group)?;
    let mut by_group = labels_by_group(silver)?;
    let labels = by_group.remove(group).unwrap_or_default();
    member_f1(&g.relabeled(&labels)?, member, norm, mode)
}

pub fn silver_f1(
    corpus: &EnsembleCorpus,
    group: &GroupId,
    member: &MemberId,
    silver: &[GoldRecord],
    norm: &NormalizationConfig,
    mode: F1Mode,
) -> Result<f64> {
    Ok(silver_score(corpus, group, member, silver, norm, mode)?.f1)
}

pub fn silver_fidelity(f1_silver: f64, f1_gold: f64) -> f64 {
    (f1_silver - f1_gold).abs()
}

/// One row per `(group, member)`; every group needs gold and full silver
/// coverage.
pub fn silver_report(
    corpus: &EnsembleCorpus,
    silver: &[GoldRecord],
    norm: &NormalizationConfig,
    mode: F1Mode,
) -> Result<Vec<SilverReportRow>> {
    let by_group = labels_by_group(silver)?;
    let unknown: Vec<Violation> = by_group
        .keys()
        .filter(|g| corpus.group(g).is_err())
        .map(|g| Violation::LabelUnknownGroup {
            group: g.to_string(),
        })
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Alignment(unknown));
    }
    let empty = BTreeMap::new();
    let mut rows = Vec::new();
    for g in corpus.groups() {
        if !g.has_gold() {
            return Err(Error::NoGold(g.id().to_string()));
        }
        let relabeled = g.relabeled(by_group.get(g.id()).unwrap_or(&empty))?;
        for m in g.members() {
            let f1_gold = member_f1(g, m, norm, mode)?.f1;
            let f1_silver = member_f1(&relabeled, m, norm, mode)?.f1;
            rows.push(SilverReportRow {
                group: g.id().clone(),
                member: m.clone(),
                f1_silver,
                f1_gold,
                abs_gap: silver_fidelity(f1_silver, f1_gold),
            });
        }
    }
    Ok(rows)
}

/// The two fidelity numbers an agreement-based group estimate carries.
#[derive(Clone, Debug, PartialEq)]
pub struct DisagreementSummary {
    pub group: GroupId,
    pub mae_per_member: f64,
    pub mae_of_means: f64,
}

impl DisagreementSummary {
    /// `None` for unlabeled groups.
    pub fn from_prediction(p: &GroupPrediction) -> Option<Self> {
        Some(Self {
            group: p.group.clone(),
            mae_per_member: p.mae_per_member?,
            mae_of_means: p.mae_of_means?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupComparison {
    pub mae_disagreement: f64,
    pub mae_silver: f64,
    pub mae_disagreement_of_means: f64,
    pub mae_silver_of_means: f64,
}

/// Head-to-head fidelity of the two label-free routes.
///
/// The headline means use per-member MAE for both methods; the `_of_means`
/// fields use `|mean predicted - mean gold|` per group instead.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodComparison {
    pub per_group: BTreeMap<GroupId, GroupComparison>,
    pub mean_mae_disagreement: f64,
    pub mean_mae_silver: f64,
    /// `mean_mae_silver - mean_mae_disagreement`; positive favours disagreement.
    pub advantage: f64,
    pub mean_mae_disagreement_of_means: f64,
    pub mean_mae_silver_of_means: f64,
    pub advantage_of_means: f64,
}

pub fn compare_methods(
    disagreement_report: &[GroupPrediction],
    silver_report: &[SilverReportRow],
) -> Result<MethodComparison> {
    let summaries: Vec<DisagreementSummary> = disagreement_report
        .iter()
        .filter_map(DisagreementSummary::from_prediction)
        .collect();
    compare_summaries(&summaries, silver_report)
}

pub fn compare_summaries(
    disagreement: &[DisagreementSummary],
    silver_report: &[SilverReportRow],
) -> Result<MethodComparison> {
    let mut silver_rows: BTreeMap<&GroupId, Vec<&SilverReportRow>> = BTreeMap::new();
    for r in silver_report {
        silver_rows.entry(&r.group).or_default().push(r);
    }
    let mut per_group = BTreeMap::new();
    for d in disagreement {
        let Some(rows) = silver_rows.get(&d.group) else {
            continue;
        };
        let n = rows.len() as f64;
        let mae_silver = rows.iter().map(|r| r.abs_gap).sum::<f64>() / n;
        let mean_silver = rows.iter().map(|r| r.f1_silver).sum::<f64>() / n;
        let mean_gold = rows.iter().map(|r| r.f1_gold).sum::<f64>() / n;
        per_group.insert(
            d.group.clone(),
            GroupComparison {
                mae_disagreement: d.mae_per_member,
                mae_silver,
                mae_disagreement_of_means: d.mae_of_means,
                mae_silver_of_means: (mean_silver - mean_gold).abs(),
            },
        );
    }
    if per_group.is_empty() {
        return Err(Error::Invalid(
            "disagreement and silver reports share no labeled group".into(),
        ));
    }
    let n = per_group.len() as f64;
    let avg = |f: fn(&GroupComparison) -> f64| per_group.values().map(f).sum::<f64>() / n;
    let mean_mae_disagreement = avg(|g| g.mae_disagreement);
    let mean_mae_silver = avg(|g| g.mae_silver);
    let mean_mae_disagreement_of_means = avg(|g| g.mae_disagreement_of_means);
    let mean_mae_silver_of_means = avg(|g| g.mae_silver_of_means);
    Ok(MethodComparison {
        per_group,
        mean_mae_disagreement,
        mean_mae_silver,
        advantage: mean_mae_silver - mean_mae_disagreement,
        mean_mae_disagreement_of_means,
        mean_mae_silver_of_means,
        advantage_of_means: mean_mae_silver_of_means - mean_mae_disagreement_of_means,
    })
}
