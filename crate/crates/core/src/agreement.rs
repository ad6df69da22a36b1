//! Keyphrase agreement between ensemble members.
//!
//! Per instance, agreement α is the overlap of two members' keyphrase sets
//! relative to everything either extracted; disagreement is `1 - α`. Scores
//! are averaged over instances for a pair, over the pairs containing a member
//! for that member, and over all pairs for a group.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::corpus::{EnsembleCorpus, GroupData, GroupId, InstanceId, MemberId};
use crate::error::{Error, Result};
use crate::kpe_metrics::{KeyphraseSet, NormalizationConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Denominator {
    /// `|a ∩ b| / |a ∪ b|` (Jaccard).
    #[default]
    Union,
    /// `2|a ∩ b| / (|a| + |b|)` (Dice).
    Sum,
}

impl FromStr for Denominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "union" => Ok(Denominator::Union),
            "sum" => Ok(Denominator::Sum),
            other => Err(Error::Invalid(format!(
                "denominator must be union or sum, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Denominator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Denominator::Union => "union",
            Denominator::Sum => "sum",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgreementConfig {
    pub denominator: Denominator,
    /// Score when neither member extracted anything.
    pub both_empty_score: f64,
    pub normalization: NormalizationConfig,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        Self {
            denominator: Denominator::Union,
            both_empty_score: 1.0,
            normalization: NormalizationConfig::default(),
        }
    }
}

impl AgreementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.both_empty_score) {
            return Err(Error::Invalid(format!(
                "both_empty_score must lie in [0, 1], got {}",
                self.both_empty_score
            )));
        }
        Ok(())
    }
}

pub fn instance_agreement(a: &KeyphraseSet, b: &KeyphraseSet, config: &AgreementConfig) -> f64 {
    if a.is_empty() && b.is_empty() {
        return config.both_empty_score;
    }
    let common = a.intersection_len(b) as f64;
    match config.denominator {
        Denominator::Union => common / a.union_len(b) as f64,
        Denominator::Sum => 2.0 * common / (a.len() + b.len()) as f64,
    }
}

pub fn instance_disagreement(a: &KeyphraseSet, b: &KeyphraseSet, config: &AgreementConfig) -> f64 {
    1.0 - instance_agreement(a, b, config)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairAgreement {
    pub group: GroupId,
    /// Always orders before `member_b`.
    pub member_a: MemberId,
    pub member_b: MemberId,
    pub per_instance: BTreeMap<InstanceId, f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemberAgreement {
    pub group: GroupId,
    pub member: MemberId,
    pub mean_agreement: f64,
    pub n_pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupAgreement {
    pub group: GroupId,
    pub mean: f64,
    pub pair_count: usize,
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}

/// Normalized keyphrase sets of one member, in instance order.
fn member_sets(
    group: &GroupData,
    member: &MemberId,
    norm: &NormalizationConfig,
) -> Vec<KeyphraseSet> {
    group
        .member_view(member)
        .map(|(pred, _)| KeyphraseSet::new(pred, norm))
        .collect()
}

fn pair_from_sets(
    group: &GroupData,
    a: &MemberId,
    b: &MemberId,
    sets_a: &[KeyphraseSet],
    sets_b: &[KeyphraseSet],
    config: &AgreementConfig,
) -> PairAgreement {
    let (member_a, member_b) = if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    };
    let per_instance: BTreeMap<InstanceId, f64> = group
        .instances()
        .keys()
        .zip(sets_a.iter().zip(sets_b))
        .map(|(id, (sa, sb))| (id.clone(), instance_agreement(sa, sb, config)))
        .collect();
    let mean = mean(per_instance.values().copied());
    PairAgreement {
        group: group.id().clone(),
        member_a,
        member_b,
        per_instance,
        mean,
    }
}

fn check_ensemble(group: &GroupData) -> Result<()> {
    let n = group.members().len();
    if n < 2 {
        return Err(Error::SingletonEnsemble {
            group: group.id().to_string(),
            members: n,
        });
    }
    Ok(())
}

pub fn pair_agreement(
    corpus: &EnsembleCorpus,
    group: &GroupId,
    a: &MemberId,
    b: &MemberId,
    config: &AgreementConfig,
) -> Result<PairAgreement> {
    config.validate()?;
    let g = corpus.group(group)?;
    g.require_member(a)?;
    g.require_member(b)?;
    if a == b {
        return Err(Error::SelfPair(a.to_string()));
    }
    let norm = &config.normalization;
    Ok(pair_from_sets(
        g,
        a,
        b,
        &member_sets(g, a, norm),
        &member_sets(g, b, norm),
        config,
    ))
}

/// Every unordered member pair of one group, scored once.
#[derive(Clone, Debug, PartialEq)]
pub struct AgreementTable {
    pub group: GroupId,
    pub members: Vec<MemberId>,
    /// Lexicographic by `(member_a, member_b)`.
    pub pairs: Vec<PairAgreement>,
}

impl AgreementTable {
    pub fn build(group: &GroupData, config: &AgreementConfig) -> Result<Self> {
        config.validate()?;
        check_ensemble(group)?;
        let members: Vec<MemberId> = group.members().iter().cloned().collect();
        let sets: Vec<Vec<KeyphraseSet>> = members
            .iter()
            .map(|m| member_sets(group, m, &config.normalization))
            .collect();
        let mut pairs = Vec::with_capacity(members.len() * (members.len() - 1) / 2);
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                pairs.push(pair_from_sets(
                    group,
                    &members[i],
                    &members[j],
                    &sets[i],
                    &sets[j],
                    config,
                ));
            }
        }
        Ok(Self {
            group: group.id().clone(),
            members,
            pairs,
        })
    }

    pub fn member(&self, member: &MemberId) -> Result<MemberAgreement> {
        if !self.members.contains(member) {
            return Err(Error::UnknownMember {
                group: self.group.to_string(),
                member: member.to_string(),
            });
        }
        let touching: Vec<f64> = self
            .pairs
            .iter()
            .filter(|p| &p.member_a == member || &p.member_b == member)
            .map(|p| p.mean)
            .collect();
        Ok(MemberAgreement {
            group: self.group.clone(),
            member: member.clone(),
            mean_agreement: mean(touching.iter().copied()),
            n_pairs: touching.len(),
        })
    }

    pub fn members_summary(&self) -> Vec<MemberAgreement> {
        self.members
            .iter()
            .map(|m| self.member(m).expect("member of own table"))
            .collect()
    }

    pub fn group_summary(&self) -> GroupAgreement {
        GroupAgreement {
            group: self.group.clone(),
            mean: mean(self.pairs.iter().map(|p| p.mean)),
            pair_count: self.pairs.len(),
        }
    }
}

pub fn member_agreement(
    corpus: &EnsembleCorpus,
    group: &GroupId,
    member: &MemberId,
    config: &AgreementConfig,
) -> Result<MemberAgreement> {
    let g = corpus.group(group)?;
    g.require_member(member)?;
    AgreementTable::build(g, config)?.member(member)
}

pub fn group_agreement(
    corpus: &EnsembleCorpus,
    group: &GroupId,
    config: &AgreementConfig,
) -> Result<GroupAgreement> {
    Ok(AgreementTable::build(corpus.group(group)?, config)?.group_summary())
}
