//! Agreement → F1 regression and its leave-one-group-out evaluation.
//!
//! Each labeled `(group, member)` contributes one point: `x` is the member's
//! mean agreement with the rest of its ensemble, `y` its F1 against gold. A
//! line fitted by ordinary least squares on some groups then predicts F1 for
//! a group from its agreement scores alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::agreement::{AgreementConfig, AgreementTable};
use crate::corpus::{EnsembleCorpus, GroupData, GroupId, MemberId};
use crate::error::{Error, Result};
use crate::kpe_metrics::{member_f1, F1Mode};

#[derive(Clone, Debug, PartialEq)]
pub struct AgreementPoint {
    pub group: GroupId,
    pub member: MemberId,
    /// Mean agreement of the member with the other members.
    pub x: f64,
    /// The member's F1 against gold.
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub agreement: AgreementConfig,
    pub f1_mode: F1Mode,
    pub clamp: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            agreement: AgreementConfig::default(),
            f1_mode: F1Mode::Micro,
            clamp: true,
        }
    }
}

/// Points of one labeled group, in member order.
pub fn group_points(
    group: &GroupData,
    agreement: &AgreementConfig,
    f1_mode: F1Mode,
) -> Result<Vec<AgreementPoint>> {
    if !group.has_gold() {
        return Err(Error::NoGold(group.id().to_string()));
    }
    let table = AgreementTable::build(group, agreement)?;
    table
        .members_summary()
        .into_iter()
        .map(|ma| {
            let f1 = member_f1(group, &ma.member, &agreement.normalization, f1_mode)?;
            Ok(AgreementPoint {
                group: ma.group,
                member: ma.member,
                x: ma.mean_agreement,
                y: f1.f1,
            })
        })
        .collect()
}

/// One point per `(group, member)` over every group of the corpus.
pub fn collect_points(
    corpus: &EnsembleCorpus,
    agreement: &AgreementConfig,
    f1_mode: F1Mode,
) -> Result<Vec<AgreementPoint>> {
    let mut out = Vec::new();
    for g in corpus.groups() {
        out.extend(group_points(g, agreement, f1_mode)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ResidualStats {
    pub rmse: f64,
    pub max_abs_residual: f64,
}

/// A fitted (or hand-specified) agreement → F1 line.
///
/// `points` holds the training data when the model was fitted; a model built
/// with [`RegressionModel::fixed`] has none and `n_points == 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionModel {
    pub slope: f64,
    pub intercept: f64,
    pub n_points: usize,
    pub trained_on: Vec<GroupId>,
    pub residual_stats: ResidualStats,
    pub points: Vec<AgreementPoint>,
}

impl RegressionModel {
    pub fn fixed(slope: f64, intercept: f64) -> Self {
        Self {
            slope,
            intercept,
            n_points: 0,
            trained_on: Vec::new(),
            residual_stats: ResidualStats::default(),
            points: Vec::new(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    pub fn rss(&self, points: &[AgreementPoint]) -> f64 {
        points.iter().map(|p| (p.y - self.eval(p.x)).powi(2)).sum()
    }
}

/// Ordinary least squares: `slope = Sxy / Sxx`, `intercept = ȳ - slope·x̄`.
pub fn fit_linear(points: &[AgreementPoint]) -> Result<RegressionModel> {
    if points.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::Invalid("non-finite regression point".into()));
    }
    if points.iter().all(|p| p.x == points[0].x) {
        return Err(Error::Degenerate(format!(
            "all {} points share agreement x = {}",
            points.len(),
            points[0].x
        )));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.x).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (sxx, sxy) = points.iter().fold((0.0, 0.0), |(sxx, sxy), p| {
        let dx = p.x - mean_x;
        (sxx + dx * dx, sxy + dx * (p.y - mean_y))
    });
    if sxx == 0.0 {
        return Err(Error::Degenerate(
            "agreement variance underflows to zero".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let mut model = RegressionModel {
        slope,
        intercept,
        n_points: points.len(),
        trained_on: points
            .iter()
            .map(|p| p.group.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        residual_stats: ResidualStats::default(),
        points: points.to_vec(),
    };
    let max_abs_residual = points
        .iter()
        .map(|p| (p.y - model.eval(p.x)).abs())
        .fold(0.0, f64::max);
    model.residual_stats = ResidualStats {
        rmse: (model.rss(points) / n).sqrt(),
        max_abs_residual,
    };
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictedF1 {
    pub value: f64,
    /// The line's value before clamping.
    pub raw: f64,
    pub clipped: bool,
}

pub fn predict_f1(model: &RegressionModel, x: f64, clamp: bool) -> PredictedF1 {
    let raw = model.eval(x);
    let value = if clamp { raw.clamp(0.0, 1.0) } else { raw };
    PredictedF1 {
        value,
        raw,
        clipped: value != raw,
    }
}

/// Mean absolute error between two equal-length series.
pub fn mae(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("mae needs at least one value"));
    }
    if predicted.iter().chain(actual).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("mae input is not finite".into()));
    }
    let total: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .sum();
    Ok(total / predicted.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemberPrediction {
    pub agreement: f64,
    pub predicted_f1: f64,
    pub clipped: bool,
    pub gold_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupPrediction {
    pub group: GroupId,
    pub per_member: BTreeMap<MemberId, MemberPrediction>,
    pub avg_predicted_f1: f64,
    pub avg_gold_f1: Option<f64>,
    /// Mean over members of `|predicted - gold|`.
    pub mae_per_member: Option<f64>,
    /// `|avg_predicted_f1 - avg_gold_f1|`.
    pub mae_of_means: Option<f64>,
    /// Mean over all member pairs.
    pub group_agreement: f64,
    pub pair_count: usize,
    pub model: RegressionModel,
}

/// Predicts every member of `group` with `model`; attaches gold F1 when the
/// group is labeled.
pub fn predict_group(
    model: &RegressionModel,
    group: &GroupData,
    config: &EvalConfig,
) -> Result<GroupPrediction> {
    let table = AgreementTable::build(group, &config.agreement)?;
    let labeled = group.has_gold();
    let mut per_member = BTreeMap::new();
    for ma in table.members_summary() {
        let p = predict_f1(model, ma.mean_agreement, config.clamp);
        let gold_f1 = if labeled {
            Some(
                member_f1(
                    group,
                    &ma.member,
                    &config.agreement.normalization,
                    config.f1_mode,
                )?
                .f1,
            )
        } else {
            None
        };
        per_member.insert(
            ma.member,
            MemberPrediction {
                agreement: ma.mean_agreement,
                predicted_f1: p.value,
                clipped: p.clipped,
                gold_f1,
            },
        );
    }
    let n = per_member.len() as f64;
    let avg_predicted_f1 = per_member.values().map(|m| m.predicted_f1).sum::<f64>() / n;
    let (avg_gold_f1, mae_per_member, mae_of_means) = if labeled {
        let pred: Vec<f64> = per_member.values().map(|m| m.predicted_f1).collect();
        let gold: Vec<f64> = per_member.values().filter_map(|m| m.gold_f1).collect();
        let avg_gold = gold.iter().sum::<f64>() / n;
        (
            Some(avg_gold),
            Some(mae(&pred, &gold)?),
            Some((avg_predicted_f1 - avg_gold).abs()),
        )
    } else {
        (None, None, None)
    };
    let summary = table.group_summary();
    Ok(GroupPrediction {
        group: group.id().clone(),
        per_member,
        avg_predicted_f1,
        avg_gold_f1,
        mae_per_member,
        mae_of_means,
        group_agreement: summary.mean,
        pair_count: summary.pair_count,
        model: model.clone(),
    })
}

#[derive(Debug)]
pub enum Fold {
    Predicted(GroupPrediction),
    Failed { group: GroupId, error: Error },
}

impl Fold {
    pub fn group(&self) -> &GroupId {
        match self {
            Fold::Predicted(p) => &p.group,
            Fold::Failed { group, .. } => group,
        }
    }

    pub fn prediction(&self) -> Option<&GroupPrediction> {
        match self {
            Fold::Predicted(p) => Some(p),
            Fold::Failed { .. } => None,
        }
    }
}

#[derive(Debug)]
pub struct LogoReport {
    /// One fold per group of the corpus, in group order.
    pub folds: Vec<Fold>,
}

impl LogoReport {
    pub fn predictions(&self) -> impl Iterator<Item = &GroupPrediction> {
        self.folds.iter().filter_map(Fold::prediction)
    }
}

/// Leave-one-group-out: each group is predicted by a line fitted on every
/// other labeled group. Unlabeled groups are predicted from all labeled ones.
///
/// A fold whose fit is degenerate is reported as [`Fold::Failed`]; the
/// remaining folds still run.
pub fn leave_one_group_out(corpus: &EnsembleCorpus, config: &EvalConfig) -> Result<LogoReport> {
    config.agreement.validate()?;
    let mut points_by_group: BTreeMap<GroupId, Vec<AgreementPoint>> = BTreeMap::new();
    for g in corpus.groups().filter(|g| g.has_gold()) {
        points_by_group.insert(
            g.id().clone(),
            group_points(g, &config.agreement, config.f1_mode)?,
        );
    }
    if points_by_group.len() < 2 {
        return Err(Error::Invalid(format!(
            "leave-one-group-out needs at least 2 gold-labeled groups, found {}",
            points_by_group.len()
        )));
    }

    let mut folds = Vec::with_capacity(corpus.n_groups());
    for target in corpus.groups() {
        let train: Vec<AgreementPoint> = points_by_group
            .iter()
            .filter(|(g, _)| *g != target.id())
            .flat_map(|(_, pts)| pts.iter().cloned())
            .collect();
        let fold = fit_linear(&train)
            .and_then(|model| predict_group(&model, target, config))
            .map_or_else(
                |error| Fold::Failed {
                    group: target.id().clone(),
                    error,
                },
                Fold::Predicted,
            );
        folds.push(fold);
    }
    Ok(LogoReport { folds })
}

const MODEL_FORMAT: &str = "kpeval-regression";
const MODEL_SCHEMA_VERSION: u32 = 1;

fn fmt_f64(v: f64) -> String {
    // 17 significant digits: enough to round-trip any f64.
    format!("{v:.16e}")
}

/// Serializes a model as `key = value` lines, floats at full precision.
pub fn save_model(model: &RegressionModel, mut w: impl Write) -> std::io::Result<()> {
    let mut s = String::new();
    let groups: Vec<&str> = model.trained_on.iter().map(GroupId::as_str).collect();
    writeln!(s, "# agreement -> F1 regression line").unwrap();
    writeln!(s, "format = {MODEL_FORMAT}").unwrap();
    writeln!(s, "schema_version = {MODEL_SCHEMA_VERSION}").unwrap();
    writeln!(s, "slope = {}", fmt_f64(model.slope)).unwrap();
    writeln!(s, "intercept = {}", fmt_f64(model.intercept)).unwrap();
    writeln!(s, "n_points = {}", model.n_points).unwrap();
    writeln!(
        s,
        "trained_on = {}",
        serde_json::to_string(&groups).unwrap()
    )
    .unwrap();
    writeln!(s, "rmse = {}", fmt_f64(model.residual_stats.rmse)).unwrap();
    writeln!(
        s,
        "max_abs_residual = {}",
        fmt_f64(model.residual_stats.max_abs_residual)
    )
    .unwrap();
    for p in &model.points {
        let fields = [
            p.group.as_str().to_owned(),
            p.member.as_str().to_owned(),
            fmt_f64(p.x),
            fmt_f64(p.y),
        ];
        writeln!(s, "point = {}", serde_json::to_string(&fields).unwrap()).unwrap();
    }
    writeln!(s, "end = {MODEL_FORMAT}").unwrap();
    w.write_all(s.as_bytes())
}

fn model_err(msg: impl Into<String>) -> Error {
    Error::Model(msg.into())
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| model_err(format!("`{key}` is not a number: {v}")))
}

/// Reads a model written by [`save_model`], checking it for consistency.
///
/// A fitted model is refitted from its listed points and must reproduce its
/// stored slope and intercept exactly.
pub fn load_model(reader: impl BufRead) -> Result<RegressionModel> {
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut raw_points = Vec::new();
    let mut ended = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| model_err(format!("line {}: {e}", i + 1)))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if ended {
            return Err(model_err("content after end marker"));
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| model_err(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "point" => raw_points.push(v.to_owned()),
            "end" => {
                if v != MODEL_FORMAT {
                    return Err(model_err("bad end marker"));
                }
                ended = true;
            }
            _ => {
                if fields.insert(k.to_owned(), v.to_owned()).is_some() {
                    return Err(model_err(format!("duplicate key `{k}`")));
                }
            }
        }
    }
    if !ended {
        return Err(model_err("truncated: end marker missing"));
    }
    let get = |k: &str| {
        fields
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| model_err(format!("missing key `{k}`")))
    };
    if get("format")? != MODEL_FORMAT {
        return Err(model_err(format!("unknown format `{}`", get("format")?)));
    }
    let version = get("schema_version")?;
    if version != MODEL_SCHEMA_VERSION.to_string() {
        return Err(model_err(format!(
            "schema version {version} is not supported (expected {MODEL_SCHEMA_VERSION})"
        )));
    }
    let slope = parse_f64("slope", get("slope")?)?;
    let intercept = parse_f64("intercept", get("intercept")?)?;
    let n_points: usize = get("n_points")?
        .parse()
        .map_err(|_| model_err("`n_points` is not a count"))?;
    let trained_names: Vec<String> = serde_json::from_str(get("trained_on")?)
        .map_err(|e| model_err(format!("`trained_on`: {e}")))?;
    let trained_on = trained_names
        .into_iter()
        .map(GroupId::new)
        .collect::<Result<Vec<_>>>()?;
    let residual_stats = ResidualStats {
        rmse: parse_f64("rmse", get("rmse")?)?,
        max_abs_residual: parse_f64("max_abs_residual", get("max_abs_residual")?)?,
    };
    if let Some(extra) = fields.keys().find(|k| {
        ![
            "format",
            "schema_version",
            "slope",
            "intercept",
            "n_points",
            "trained_on",
            "rmse",
            "max_abs_residual",
        ]
        .contains(&k.as_str())
    }) {
        return Err(model_err(format!("unknown key `{extra}`")));
    }

    let mut points = Vec::with_capacity(raw_points.len());
    for raw in &raw_points {
        let f: [String; 4] =
            serde_json::from_str(raw).map_err(|e| model_err(format!("point {raw}: {e}")))?;
        points.push(AgreementPoint {
            group: GroupId::new(f[0].clone())?,
            member: MemberId::new(f[1].clone())?,
            x: parse_f64("point.x", &f[2])?,
            y: parse_f64("point.y", &f[3])?,
        });
    }
    if n_points != points.len() {
        return Err(model_err(format!(
            "n_points = {n_points} but {} point(s) listed",
            points.len()
        )));
    }
    if !slope.is_finite() || !intercept.is_finite() {
        return Err(model_err("coefficients must be finite"));
    }

    let model = RegressionModel {
        slope,
        intercept,
        n_points,
        trained_on,
        residual_stats,
        points,
    };
    if n_points > 0 {
        let refit = fit_linear(&model.points)?;
        if refit.slope.to_bits() != slope.to_bits()
            || refit.intercept.to_bits() != intercept.to_bits()
        {
            return Err(model_err(
                "stored coefficients do not match a refit of the listed points",
            ));
        }
        if refit.trained_on != model.trained_on {
            return Err(model_err("`trained_on` does not match the listed points"));
        }
    }
    Ok(model)
}
