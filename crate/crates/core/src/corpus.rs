//! Prediction, gold and silver label files, and the aligned ensemble corpus.
//!
//! Every file is UTF-8 JSON Lines. A prediction line is a flat object
//!
//! ```text
//! {"group":"JA","instance":"s1","member":"1","keyphrases":["配達","遅い"]}
//! ```
//!
//! and a gold (or silver) line is the same object without `member`. Blank
//! lines are skipped; unknown fields, missing fields and duplicate keys are
//! errors. Keyphrases are kept exactly as written; normalization happens at
//! scoring time.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Group label such as a language code or a domain name.
///
/// Compared case-insensitively; the spelling it was constructed with is kept
/// for display.
#[derive(Clone, Debug)]
pub struct GroupId {
    name: String,
    key: String,
}

impl GroupId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::Invalid("group id must be non-empty".into()));
        }
        let key = name.to_lowercase();
        Ok(Self { name, key })
    }

    pub fn as_str(&self) -> &str {
        &self.name
    }
}

impl PartialEq for GroupId {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for GroupId {}

impl Hash for GroupId {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key.hash(state);
    }
}

impl PartialOrd for GroupId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GroupId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Result<Self> {
                let value = value.into();
                if value.trim().is_empty() {
                    return Err(Error::Invalid(concat!($what, " must be non-empty").into()));
                }
                Ok(Self(value))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(
    /// Identifier of one text instance, unique within its group.
    InstanceId,
    "instance id"
);
string_id!(
    /// One ensemble member, typically the seed it was trained with.
    MemberId,
    "member id"
);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionRecord {
    pub group: GroupId,
    pub instance: InstanceId,
    pub member: MemberId,
    pub keyphrases: Vec<String>,
}

/// A reference label. Silver labels use the same record type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldRecord {
    pub group: GroupId,
    pub instance: InstanceId,
    pub keyphrases: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    group: String,
    instance: String,
    member: String,
    keyphrases: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldLine {
    group: String,
    instance: String,
    keyphrases: Vec<String>,
}

/// Yields `(line_number, text)` for every non-blank line.
fn for_each_line(
    mut reader: impl BufRead,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> Result<()> {
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::Parse {
                line: line_no + 1,
                reason: e.to_string(),
            })?;
        if n == 0 {
            return Ok(());
        }
        line_no += 1;
        let text = std::str::from_utf8(&buf).map_err(|e| Error::Parse {
            line: line_no,
            reason: format!("invalid UTF-8: {e}"),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        f(line_no, text)?;
    }
}

fn field<T>(line: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Parse {
        line,
        reason: e.to_string(),
    })
}

pub fn parse_predictions(reader: impl BufRead) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for_each_line(reader, |line, text| {
        let raw: PredictionLine = serde_json::from_str(text).map_err(|e| Error::Parse {
            line,
            reason: e.to_string(),
        })?;
        let rec = PredictionRecord {
            group: field(line, GroupId::new(raw.group))?,
            instance: field(line, InstanceId::new(raw.instance))?,
            member: field(line, MemberId::new(raw.member))?,
            keyphrases: raw.keyphrases,
        };
        let key = (rec.group.clone(), rec.instance.clone(), rec.member.clone());
        if !seen.insert(key) {
            return Err(Error::DuplicateKey {
                line,
                key: format!(
                    "(group={}, instance={}, member={})",
                    rec.group, rec.instance, rec.member
                ),
            });
        }
        out.push(rec);
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_gold(reader: impl BufRead) -> Result<Vec<GoldRecord>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for_each_line(reader, |line, text| {
        let raw: GoldLine = serde_json::from_str(text).map_err(|e| Error::Parse {
            line,
            reason: e.to_string(),
        })?;
        let rec = GoldRecord {
            group: field(line, GroupId::new(raw.group))?,
            instance: field(line, InstanceId::new(raw.instance))?,
            keyphrases: raw.keyphrases,
        };
        if !seen.insert((rec.group.clone(), rec.instance.clone())) {
            return Err(Error::DuplicateKey {
                line,
                key: format!("(group={}, instance={})", rec.group, rec.instance),
            });
        }
        out.push(rec);
        Ok(())
    })?;
    Ok(out)
}

/// Writes records in canonical form: one compact object per line, fields in
/// schema order.
pub fn write_predictions(records: &[PredictionRecord], mut w: impl Write) -> std::io::Result<()> {
    for r in records {
        let line = PredictionLine {
            group: r.group.as_str().to_owned(),
            instance: r.instance.as_str().to_owned(),
            member: r.member.as_str().to_owned(),
            keyphrases: r.keyphrases.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_gold(records: &[GoldRecord], mut w: impl Write) -> std::io::Result<()> {
    for r in records {
        let line = GoldLine {
            group: r.group.as_str().to_owned(),
            instance: r.instance.as_str().to_owned(),
            keyphrases: r.keyphrases.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// One reason a set of records does not form a valid corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    MissingPrediction {
        group: String,
        member: String,
        instance: String,
    },
    DuplicatePrediction {
        group: String,
        member: String,
        instance: String,
    },
    DuplicateLabel {
        group: String,
        instance: String,
    },
    LabelUnknownGroup {
        group: String,
    },
    LabelUnknownInstance {
        group: String,
        instance: String,
    },
    PartialLabels {
        group: String,
        unlabeled: usize,
        total: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingPrediction {
                group,
                member,
                instance,
            } => write!(
                f,
                "group {group}: member {member} has no prediction for instance {instance}"
            ),
            Violation::DuplicatePrediction {
                group,
                member,
                instance,
            } => write!(
                f,
                "group {group}: duplicate prediction for member {member}, instance {instance}"
            ),
            Violation::DuplicateLabel { group, instance } => {
                write!(f, "group {group}: duplicate label for instance {instance}")
            }
            Violation::LabelUnknownGroup { group } => {
                write!(
                    f,
                    "labels reference group {group}, which has no predictions"
                )
            }
            Violation::LabelUnknownInstance { group, instance } => write!(
                f,
                "group {group}: label for instance {instance}, which has no predictions"
            ),
            Violation::PartialLabels {
                group,
                unlabeled,
                total,
            } => write!(
                f,
                "group {group}: labels cover {} of {total} instances (all or none required)",
                total - unlabeled
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InstanceData {
    pub predictions: BTreeMap<MemberId, Vec<String>>,
    pub gold: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupData {
    id: GroupId,
    members: BTreeSet<MemberId>,
    instances: BTreeMap<InstanceId, InstanceData>,
}

impl GroupData {
    pub fn id(&self) -> &GroupId {
        &self.id
    }

    pub fn members(&self) -> &BTreeSet<MemberId> {
        &self.members
    }

    pub fn instances(&self) -> &BTreeMap<InstanceId, InstanceData> {
        &self.instances
    }

    pub fn has_gold(&self) -> bool {
        self.instances.values().all(|i| i.gold.is_some()) && !self.instances.is_empty()
    }

    pub fn require_member(&self, member: &MemberId) -> Result<()> {
        if self.members.contains(member) {
            Ok(())
        } else {
            Err(Error::UnknownMember {
                group: self.id.to_string(),
                member: member.to_string(),
            })
        }
    }

    /// Iterates `(prediction, gold)` keyphrase lists of one member over all
    /// instances, in instance order. Gold is `None` for unlabeled groups.
    pub fn member_view<'a>(
        &'a self,
        member: &'a MemberId,
    ) -> impl Iterator<Item = (&'a [String], Option<&'a [String]>)> + 'a {
        self.instances
            .values()
            .map(move |inst| (inst.predictions[member].as_slice(), inst.gold.as_deref()))
    }

    /// A copy of this group with its reference labels replaced.
    ///
    /// `labels` must cover every instance and nothing else.
    pub fn relabeled(&self, labels: &BTreeMap<InstanceId, Vec<String>>) -> Result<GroupData> {
        if let Some(extra) = labels.keys().find(|k| !self.instances.contains_key(*k)) {
            return Err(Error::Alignment(vec![Violation::LabelUnknownInstance {
                group: self.id.to_string(),
                instance: extra.to_string(),
            }]));
        }
        let missing = self
            .instances
            .keys()
            .filter(|k| !labels.contains_key(*k))
            .count();
        if missing > 0 {
            return Err(Error::IncompleteLabels {
                group: self.id.to_string(),
                missing,
            });
        }
        let mut out = self.clone();
        for (id, inst) in out.instances.iter_mut() {
            inst.gold = Some(labels[id].clone());
        }
        Ok(out)
    }
}

/// Predictions aligned as groups × instances × members, with optional gold.
///
/// Immutable once built; every group is rectangular and either fully labeled
/// or not labeled at all.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EnsembleCorpus {
    groups: BTreeMap<GroupId, GroupData>,
}

impl EnsembleCorpus {
    pub fn groups(&self) -> impl Iterator<Item = &GroupData> {
        self.groups.values()
    }

    pub fn group_ids(&self) -> impl Iterator<Item = &GroupId> {
        self.groups.keys()
    }

    pub fn group(&self, id: &GroupId) -> Result<&GroupData> {
        self.groups
            .get(id)
            .ok_or_else(|| Error::UnknownGroup(id.to_string()))
    }

    /// Looks a group up by name (case-insensitive).
    pub fn group_named(&self, name: &str) -> Result<&GroupData> {
        self.group(&GroupId::new(name)?)
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_predictions(&self) -> usize {
        self.groups
            .values()
            .flat_map(|g| g.instances.values())
            .map(|i| i.predictions.len())
            .sum()
    }

    /// Keeps only the listed groups.
    pub fn restrict(&self, keep: &BTreeSet<GroupId>) -> EnsembleCorpus {
        EnsembleCorpus {
            groups: self
                .groups
                .iter()
                .filter(|(k, _)| keep.contains(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

/// Builds a corpus from parsed records, reporting every violation at once.
pub fn align(
    predictions: &[PredictionRecord],
    gold: Option<&[GoldRecord]>,
) -> Result<EnsembleCorpus> {
    let mut violations = Vec::new();
    let mut groups: BTreeMap<GroupId, GroupData> = BTreeMap::new();

    for rec in predictions {
        let g = groups
            .entry(rec.group.clone())
            .or_insert_with(|| GroupData {
                id: rec.group.clone(),
                members: BTreeSet::new(),
                instances: BTreeMap::new(),
            });
        g.members.insert(rec.member.clone());
        let inst = g.instances.entry(rec.instance.clone()).or_default();
        if inst
            .predictions
            .insert(rec.member.clone(), rec.keyphrases.clone())
            .is_some()
        {
            violations.push(Violation::DuplicatePrediction {
                group: g.id.to_string(),
                member: rec.member.to_string(),
                instance: rec.instance.to_string(),
            });
        }
    }

    for g in groups.values() {
        for (iid, inst) in &g.instances {
            for m in &g.members {
                if !inst.predictions.contains_key(m) {
                    violations.push(Violation::MissingPrediction {
                        group: g.id.to_string(),
                        member: m.to_string(),
                        instance: iid.to_string(),
                    });
                }
            }
        }
    }

    if let Some(gold) = gold {
        for rec in gold {
            let Some(g) = groups.get_mut(&rec.group) else {
                let v = Violation::LabelUnknownGroup {
                    group: rec.group.to_string(),
                };
                if !violations.contains(&v) {
                    violations.push(v);
                }
                continue;
            };
            let Some(inst) = g.instances.get_mut(&rec.instance) else {
                violations.push(Violation::LabelUnknownInstance {
                    group: g.id.to_string(),
                    instance: rec.instance.to_string(),
                });
                continue;
            };
            if inst.gold.is_some() {
                violations.push(Violation::DuplicateLabel {
                    group: g.id.to_string(),
                    instance: rec.instance.to_string(),
                });
            }
            inst.gold = Some(rec.keyphrases.clone());
        }
        for g in groups.values() {
            let unlabeled = g.instances.values().filter(|i| i.gold.is_none()).count();
            if unlabeled > 0 && unlabeled < g.instances.len() {
                violations.push(Violation::PartialLabels {
                    group: g.id.to_string(),
                    unlabeled,
                    total: g.instances.len(),
                });
            }
        }
    }

    if violations.is_empty() {
        Ok(EnsembleCorpus { groups })
    } else {
        Err(Error::Alignment(violations))
    }
}

/// Splits label records by group and instance. Duplicates are rejected.
pub fn labels_by_group(
    records: &[GoldRecord],
) -> Result<BTreeMap<GroupId, BTreeMap<InstanceId, Vec<String>>>> {
    let mut out: BTreeMap<GroupId, BTreeMap<InstanceId, Vec<String>>> = BTreeMap::new();
    for r in records {
        let slot = out.entry(r.group.clone()).or_default();
        if slot
            .insert(r.instance.clone(), r.keyphrases.clone())
            .is_some()
        {
            return Err(Error::Alignment(vec![Violation::DuplicateLabel {
                group: r.group.to_string(),
                instance: r.instance.to_string(),
            }]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(g: &str, i: &str, m: &str, k: &[&str]) -> PredictionRecord {
        PredictionRecord {
            group: GroupId::new(g).unwrap(),
            instance: InstanceId::new(i).unwrap(),
            member: MemberId::new(m).unwrap(),
            keyphrases: k.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn empty_streams_parse_to_nothing() {
        assert!(parse_predictions(&b""[..]).unwrap().is_empty());
        assert!(parse_gold(&b""[..]).unwrap().is_empty());
        assert!(parse_gold(&b"\n  \n"[..]).unwrap().is_empty());
    }

    #[test]
    fn single_prediction_line_reads_back() {
        let src = r#"{"group":"JA","instance":"s1","member":"1","keyphrases":["配達","遅い"]}"#;
        let recs = parse_predictions(src.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.group.as_str(), "JA");
        assert_eq!(r.instance.as_str(), "s1");
        assert_eq!(r.member.as_str(), "1");
        assert_eq!(r.keyphrases, vec!["配達".to_string(), "遅い".to_string()]);
    }

    #[test]
    fn missing_member_names_the_line() {
        let src = "\n{\"group\":\"JA\",\"instance\":\"s1\",\"keyphrases\":[]}\n";
        match parse_predictions(src.as_bytes()) {
            Err(Error::Parse { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("member"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_and_empty_id_are_rejected() {
        let extra = r#"{"group":"JA","instance":"s1","member":"1","keyphrases":[],"x":1}"#;
        assert!(matches!(
            parse_predictions(extra.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        let blank = r#"{"group":"  ","instance":"s1","keyphrases":[]}"#;
        assert!(matches!(
            parse_gold(blank.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn gold_line_and_duplicate() {
        let one = r#"{"group":"FR","instance":"s9","keyphrases":["livraison"]}"#;
        let recs = parse_gold(one.as_bytes()).unwrap();
        assert_eq!(recs[0].group.as_str(), "FR");
        assert_eq!(recs[0].instance.as_str(), "s9");
        assert_eq!(recs[0].keyphrases, vec!["livraison".to_string()]);

        let two = format!("{one}\n{}\n", one.replace("FR", "fr"));
        assert!(matches!(
            parse_gold(two.as_bytes()),
            Err(Error::DuplicateKey { line: 2, .. })
        ));
    }

    #[test]
    fn group_ids_ignore_case() {
        let a = GroupId::new("ja").unwrap();
        let b = GroupId::new("JA").unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_string(), "JA");
    }

    #[test]
    fn rectangular_corpus_aligns() {
        let recs = vec![
            pred("G", "i1", "A", &["x"]),
            pred("G", "i1", "B", &["x"]),
            pred("G", "i2", "A", &[]),
            pred("G", "i2", "B", &["y"]),
        ];
        let c = align(&recs, None).unwrap();
        let g = c.group_named("g").unwrap();
        let members: Vec<_> = g.members().iter().map(|m| m.as_str()).collect();
        assert_eq!(members, ["A", "B"]);
        assert_eq!(g.instances().len(), 2);
        assert_eq!(c.n_predictions(), 4);
        assert!(g.instances().values().all(|i| i.gold.is_none()));
        assert!(!g.has_gold());
    }

    #[test]
    fn missing_cell_is_named() {
        let recs = vec![
            pred("G", "i1", "A", &["x"]),
            pred("G", "i1", "B", &["x"]),
            pred("G", "i2", "A", &[]),
        ];
        match align(&recs, None) {
            Err(Error::Alignment(v)) => assert_eq!(
                v,
                vec![Violation::MissingPrediction {
                    group: "G".into(),
                    member: "B".into(),
                    instance: "i2".into()
                }]
            ),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gold_violations() {
        let recs = vec![pred("G", "i1", "A", &["x"]), pred("G", "i2", "A", &["x"])];
        let gold = vec![
            GoldRecord {
                group: GroupId::new("G").unwrap(),
                instance: InstanceId::new("i1").unwrap(),
                keyphrases: vec![],
            },
            GoldRecord {
                group: GroupId::new("G").unwrap(),
                instance: InstanceId::new("i9").unwrap(),
                keyphrases: vec![],
            },
            GoldRecord {
                group: GroupId::new("H").unwrap(),
                instance: InstanceId::new("i1").unwrap(),
                keyphrases: vec![],
            },
        ];
        let Err(Error::Alignment(v)) = align(&recs, Some(&gold)) else {
            panic!("expected alignment error")
        };
        assert!(v.contains(&Violation::LabelUnknownInstance {
            group: "G".into(),
            instance: "i9".into()
        }));
        assert!(v.contains(&Violation::LabelUnknownGroup { group: "H".into() }));
        assert!(v.contains(&Violation::PartialLabels {
            group: "G".into(),
            unlabeled: 1,
            total: 2
        }));
    }

    #[test]
    fn relabel_requires_full_coverage() {
        let recs = vec![pred("G", "i1", "A", &["x"]), pred("G", "i2", "A", &["y"])];
        let c = align(&recs, None).unwrap();
        let g = c.group_named("G").unwrap();
        let mut labels = BTreeMap::new();
        labels.insert(InstanceId::new("i1").unwrap(), vec!["x".to_string()]);
        assert!(matches!(
            g.relabeled(&labels),
            Err(Error::IncompleteLabels { missing: 1, .. })
        ));
        labels.insert(InstanceId::new("i2").unwrap(), vec![]);
        assert!(g.relabeled(&labels).unwrap().has_gold());
    }
}
