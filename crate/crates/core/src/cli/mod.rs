//! The `kpeval` command line.
//!
//! Every subcommand reads its inputs, computes its tables and returns them as
//! an [`Outcome`]; [`main`] then writes the files atomically into the output
//! directory. Exit statuses:
//!
//! | status | meaning |
//! |---|---|
//! | 0 | success |
//! | 2 | bad command line or config file |
//! | 3 | input data failed validation (parse, alignment, coverage) |
//! | 4 | I/O failure |
//! | 5 | degenerate math (singleton ensemble, degenerate regression) |

pub mod config;
pub mod table;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::agreement::AgreementTable;
use crate::corpus::{self, EnsembleCorpus, GoldRecord, GroupId, PredictionRecord};
use crate::error::{Error, Result};
use crate::estimator::{self, Fold, GroupPrediction, RegressionModel};
use crate::gde_lab::{self, CalibratedTask, MemberSampling};
use crate::kpe_metrics::member_f1;
use crate::silver_eval::{self, DisagreementSummary};
use config::{parse_pairs, RunConfig};
use table::{markdown_document, Cell, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_MATH: i32 = 5;

pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Io { .. } => EXIT_IO,
        Error::Config(_) => EXIT_USAGE,
        _ if e.is_degenerate_math() => EXIT_MATH,
        _ => EXIT_DATA,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "kpeval",
    version,
    about = "Estimate keyphrase-extraction F1 without labels from seed-ensemble agreement"
)]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Run-config overrides; each flag matches a config-file key.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "BOOL")]
    pub case_fold: Option<String>,
    #[arg(long, global = true, value_name = "BOOL")]
    pub trim: Option<String>,
    #[arg(long, global = true, value_name = "BOOL")]
    pub collapse_internal_whitespace: Option<String>,
    #[arg(long, global = true, value_name = "BOOL")]
    pub unicode_compatibility_normalize: Option<String>,
    /// union (Jaccard) or sum (Dice)
    #[arg(long, global = true)]
    pub denominator: Option<String>,
    #[arg(long, global = true, value_name = "FRACTION")]
    pub both_empty_score: Option<String>,
    /// micro or macro
    #[arg(long, global = true)]
    pub f1_mode: Option<String>,
    #[arg(long, global = true, value_name = "BOOL")]
    pub clamp_predictions: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<String>,
    /// csv, markdown or both
    #[arg(long, global = true)]
    pub format: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        [
            ("case_fold", &self.case_fold),
            ("trim", &self.trim),
            (
                "collapse_internal_whitespace",
                &self.collapse_internal_whitespace,
            ),
            (
                "unicode_compatibility_normalize",
                &self.unicode_compatibility_normalize,
            ),
            ("denominator", &self.denominator),
            ("both_empty_score", &self.both_empty_score),
            ("f1_mode", &self.f1_mode),
            ("clamp_predictions", &self.clamp_predictions),
            ("output_dir", &self.output_dir),
            ("format", &self.format),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
        .collect()
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let text = match &self.config {
            Some(p) => Some(read_text(p)?),
            None => None,
        };
        // Unknown keys in the file are errors, but a config file shared with
        // `simulate` may carry task keys; those are read there.
        let text = text.map(|t| strip_keys(&t, &SIM_KEYS));
        RunConfig::resolve(text.as_deref(), &self.overrides())
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check that prediction (and gold) files align into a rectangular corpus
    Validate(DataArgs),
    /// Per-member precision, recall and F1 against gold
    Score(LabeledArgs),
    /// Pair, member and group agreement scores
    Agree(PredictionArgs),
    /// Fit the agreement -> F1 line on labeled groups and save it
    Fit(FitArgs),
    /// Predict F1 for unlabeled groups with a saved model
    Predict(PredictArgs),
    /// Leave-one-group-out evaluation with per-group MAE
    Evaluate(LabeledArgs),
    /// Score against silver labels and compare with the disagreement estimate
    Silver(SilverArgs),
    /// Simulate calibrated ensembles and compare error with disagreement
    Simulate(SimulateArgs),
    /// Rebuild the fidelity table from an `evaluate` members.csv
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub gold: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictionArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LabeledArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub gold: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: LabeledArgs,
    /// Groups left out of the fit
    #[arg(long, num_args = 1..)]
    pub exclude: Vec<String>,
    /// Model file to write (relative paths resolve inside the output directory)
    #[arg(long, default_value = "model.txt")]
    pub model: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SilverArgs {
    #[command(flatten)]
    pub data: LabeledArgs,
    #[arg(long, required = true, num_args = 1..)]
    pub silver: Vec<PathBuf>,
    /// members.csv written by `evaluate`, for the head-to-head comparison
    #[arg(long)]
    pub disagreement: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    /// Task file with the same keys as the flags below
    #[arg(long, value_name = "FILE")]
    pub task: Option<PathBuf>,
    /// Comma-separated top-class probabilities, cycled over points
    #[arg(long)]
    pub q_profile: Option<String>,
    #[arg(long)]
    pub n_points: Option<String>,
    #[arg(long)]
    pub n_members: Option<String>,
    #[arg(long)]
    pub n_classes: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub trials: Option<String>,
    #[arg(long)]
    pub n_points_scale: Option<String>,
    /// calibrated or argmax
    #[arg(long)]
    pub sampling: Option<String>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// members.csv written by `evaluate`
    #[arg(long)]
    pub members: PathBuf,
}

/// Files to write (relative to the output directory) plus console text.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<(PathBuf, String)>,
    pub stdout: String,
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.config.resolve()?;
    let outcome = run(&cli.command, &cfg, cli.config.config.as_deref())?;
    for (rel, contents) in &outcome.files {
        write_atomic(&cfg.output_dir.join(rel), contents)?;
    }
    print!("{}", outcome.stdout);
    std::io::stdout()
        .flush()
        .map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?)
        .map_err(|_| Error::Invalid("file is not UTF-8".into()).in_file(path))
}

pub fn load_predictions(paths: &[PathBuf]) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for p in paths {
        let bytes = read_bytes(p)?;
        out.extend(corpus::parse_predictions(&bytes[..]).map_err(|e| e.in_file(p))?);
    }
    Ok(out)
}

pub fn load_labels(paths: &[PathBuf]) -> Result<Vec<GoldRecord>> {
    let mut out = Vec::new();
    for p in paths {
        let bytes = read_bytes(p)?;
        out.extend(corpus::parse_gold(&bytes[..]).map_err(|e| e.in_file(p))?);
    }
    Ok(out)
}

fn load_corpus(predictions: &[PathBuf], gold: &[PathBuf]) -> Result<EnsembleCorpus> {
    let preds = load_predictions(predictions)?;
    if gold.is_empty() {
        corpus::align(&preds, None)
    } else {
        corpus::align(&preds, Some(&load_labels(gold)?))
    }
}

fn header(command: &str, cfg: &RunConfig, extra: &[String]) -> Vec<String> {
    let mut h = vec![format!("kpeval {} {command}", env!("CARGO_PKG_VERSION"))];
    h.extend(cfg.echo());
    h.extend(extra.iter().cloned());
    h
}

/// CSV per table and one Markdown document, filtered by the configured format.
fn emit(
    command: &str,
    cfg: &RunConfig,
    extra_header: &[String],
    tables: &[Table],
    notes: &[String],
) -> Result<Vec<(PathBuf, String)>> {
    let h = header(command, cfg, extra_header);
    let mut files = Vec::new();
    if cfg.format.csv() {
        for t in tables {
            files.push((PathBuf::from(format!("{}.csv", t.stem)), t.to_csv(&h)?));
        }
    }
    if cfg.format.markdown() {
        files.push((
            PathBuf::from(format!("{command}.md")),
            markdown_document(&format!("kpeval {command}"), &h, tables, notes),
        ));
    }
    Ok(files)
}

pub fn run(command: &Command, cfg: &RunConfig, config_path: Option<&Path>) -> Result<Outcome> {
    match command {
        Command::Validate(a) => cmd_validate(a),
        Command::Score(a) => cmd_score(a, cfg),
        Command::Agree(a) => cmd_agree(a, cfg),
        Command::Fit(a) => cmd_fit(a, cfg),
        Command::Predict(a) => cmd_predict(a, cfg),
        Command::Evaluate(a) => cmd_evaluate(a, cfg),
        Command::Silver(a) => cmd_silver(a, cfg),
        Command::Simulate(a) => cmd_simulate(a, cfg, config_path),
        Command::Report(a) => cmd_report(a, cfg),
    }
}

pub fn cmd_validate(args: &DataArgs) -> Result<Outcome> {
    let c = load_corpus(&args.predictions, &args.gold)?;
    let labeled = c.groups().filter(|g| g.has_gold()).count();
    let mut stdout = String::new();
    for g in c.groups() {
        stdout.push_str(&format!(
            "group {}: {} member(s), {} instance(s), gold: {}\n",
            g.id(),
            g.members().len(),
            g.instances().len(),
            if g.has_gold() { "yes" } else { "no" }
        ));
    }
    stdout.push_str(&format!(
        "ok: {} group(s), {} labeled, {} prediction(s), 0 violations\n",
        c.n_groups(),
        labeled,
        c.n_predictions()
    ));
    Ok(Outcome {
        files: Vec::new(),
        stdout,
    })
}

fn require_all_gold(c: &EnsembleCorpus) -> Result<()> {
    match c.groups().find(|g| !g.has_gold()) {
        Some(g) => Err(Error::NoGold(g.id().to_string())),
        None => Ok(()),
    }
}

pub fn cmd_score(args: &LabeledArgs, cfg: &RunConfig) -> Result<Outcome> {
    let c = load_corpus(&args.predictions, &args.gold)?;
    require_all_gold(&c)?;
    let mut t = Table::new(
        "Gold F1 per member",
        "scores",
        &[
            "group",
            "member",
            "precision",
            "recall",
            "f1",
            "tp",
            "fp",
            "fn",
        ],
    );
    for g in c.groups() {
        for m in g.members() {
            let s = member_f1(g, m, &cfg.normalization, cfg.f1_mode)?;
            t.push(vec![
                Cell::text(g.id()),
                Cell::text(m),
                Cell::ratio(s.precision),
                Cell::ratio(s.recall),
                Cell::Num(s.f1),
                Cell::Int(s.counts.tp),
                Cell::Int(s.counts.fp),
                Cell::Int(s.counts.fn_),
            ]);
        }
    }
    let stdout = format!("scored {} member(s)\n", t.rows.len());
    Ok(Outcome {
        files: emit("score", cfg, &[], &[t], &[])?,
        stdout,
    })
}

pub fn cmd_agree(args: &PredictionArgs, cfg: &RunConfig) -> Result<Outcome> {
    let c = load_corpus(&args.predictions, &[])?;
    let mut pairs = Table::new(
        "Pair agreement",
        "agreement_pairs",
        &["group", "member_a", "member_b", "mean", "n_instances"],
    );
    let mut members = Table::new(
        "Member agreement",
        "agreement_members",
        &["group", "member", "mean_agreement", "n_pairs"],
    );
    let mut groups = Table::new(
        "Group agreement",
        "agreement_groups",
        &["group", "mean_agreement", "pair_count"],
    );
    for g in c.groups() {
        let table = AgreementTable::build(g, &cfg.agreement)?;
        for p in &table.pairs {
            pairs.push(vec![
                Cell::text(&p.group),
                Cell::text(&p.member_a),
                Cell::text(&p.member_b),
                Cell::Num(p.mean),
                Cell::Int(p.per_instance.len() as u64),
            ]);
        }
        for m in table.members_summary() {
            members.push(vec![
                Cell::text(&m.group),
                Cell::text(&m.member),
                Cell::Num(m.mean_agreement),
                Cell::Int(m.n_pairs as u64),
            ]);
        }
        let s = table.group_summary();
        groups.push(vec![
            Cell::text(&s.group),
            Cell::Num(s.mean),
            Cell::Int(s.pair_count as u64),
        ]);
    }
    let stdout = format!(
        "{} group(s), {} pair(s), denominator = {}\n",
        groups.rows.len(),
        pairs.rows.len(),
        cfg.agreement.denominator
    );
    Ok(Outcome {
        files: emit("agree", cfg, &[], &[pairs, members, groups], &[])?,
        stdout,
    })
}

pub fn cmd_fit(args: &FitArgs, cfg: &RunConfig) -> Result<Outcome> {
    let c = load_corpus(&args.data.predictions, &args.data.gold)?;
    let excluded = args
        .exclude
        .iter()
        .map(GroupId::new)
        .collect::<Result<BTreeSet<_>>>()?;
    for g in &excluded {
        c.group(g)?;
    }
    let keep: BTreeSet<GroupId> = c
        .group_ids()
        .filter(|g| !excluded.contains(*g))
        .cloned()
        .collect();
    let train = c.restrict(&keep);
    require_all_gold(&train)?;
    let points = estimator::collect_points(&train, &cfg.agreement, cfg.f1_mode)?;
    let model = estimator::fit_linear(&points)?;

    let mut t = Table::new(
        "Training points",
        "fit_points",
        &[
            "group",
            "member",
            "agreement",
            "f1",
            "fitted_f1",
            "residual",
        ],
    );
    for p in &points {
        let fitted = model.eval(p.x);
        t.push(vec![
            Cell::text(&p.group),
            Cell::text(&p.member),
            Cell::Num(p.x),
            Cell::Num(p.y),
            Cell::Num(fitted),
            Cell::Num(p.y - fitted),
        ]);
    }
    let mut model_text = Vec::new();
    estimator::save_model(&model, &mut model_text).map_err(|e| Error::io(&args.model, e))?;
    let summary = vec![
        format!("slope = {}", model.slope),
        format!("intercept = {}", model.intercept),
        format!("n_points = {}", model.n_points),
        format!("rmse = {}", model.residual_stats.rmse),
    ];
    let mut files = emit("fit", cfg, &summary, &[t], &[])?;
    files.push((
        args.model.clone(),
        String::from_utf8(model_text).expect("model text is utf-8"),
    ));
    Ok(Outcome {
        files,
        stdout: summary.join("\n") + "\n",
    })
}

fn member_rows(t: &mut Table, p: &GroupPrediction) {
    for (m, mp) in &p.per_member {
        t.push(vec![
            Cell::text(&p.group),
            Cell::text(m),
            Cell::Num(mp.agreement),
            Cell::Num(mp.predicted_f1),
            Cell::opt(mp.gold_f1),
            Cell::opt(mp.gold_f1.map(|g| (mp.predicted_f1 - g).abs())),
        ]);
    }
}

const MEMBER_COLUMNS: [&str; 6] = [
    "group",
    "member",
    "agreement",
    "predicted_f1",
    "gold_f1",
    "abs_err",
];

pub fn cmd_predict(args: &PredictArgs, cfg: &RunConfig) -> Result<Outcome> {
    let model =
        estimator::load_model(&read_bytes(&args.model)?[..]).map_err(|e| e.in_file(&args.model))?;
    let c = load_corpus(&args.predictions, &[])?;
    let mut members = Table::new("Predicted F1 per member", "predictions", &MEMBER_COLUMNS);
    let mut groups = Table::new(
        "Predicted F1 per group",
        "predictions_groups",
        &[
            "group",
            "avg_predicted_f1",
            "group_agreement",
            "pair_count",
            "clipped_members",
        ],
    );
    let eval = cfg.eval_config();
    for g in c.groups() {
        let p = estimator::predict_group(&model, g, &eval)?;
        member_rows(&mut members, &p);
        groups.push(vec![
            Cell::text(&p.group),
            Cell::Num(p.avg_predicted_f1),
            Cell::Num(p.group_agreement),
            Cell::Int(p.pair_count as u64),
            Cell::Int(p.per_member.values().filter(|m| m.clipped).count() as u64),
        ]);
    }
    let extra = vec![
        format!("model.slope = {}", model.slope),
        format!("model.intercept = {}", model.intercept),
    ];
    let stdout = format!("predicted {} group(s)\n", groups.rows.len());
    Ok(Outcome {
        files: emit("predict", cfg, &extra, &[members, groups], &[])?,
        stdout,
    })
}

const FIDELITY_COLUMNS: [&str; 5] = [
    "label",
    "avg_f1",
    "avg_predicted_f1",
    "mae",
    "mae_per_member",
];

fn fidelity_row(
    group: &GroupId,
    avg_gold: Option<f64>,
    avg_pred: f64,
    mae_of_means: Option<f64>,
    mae_pm: Option<f64>,
) -> Vec<Cell> {
    vec![
        Cell::text(group),
        Cell::opt(avg_gold),
        Cell::Num(avg_pred),
        Cell::opt(mae_of_means),
        Cell::opt(mae_pm),
    ]
}

fn mean_of(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn mae_notes(of_means: &[f64], per_member: &[f64]) -> Vec<String> {
    let mut notes = Vec::new();
    if let (Some(a), Some(b)) = (mean_of(of_means), mean_of(per_member)) {
        notes.push(format!(
            "Mean over {} labeled group(s): mae = {a:.3}, mae_per_member = {b:.3}",
            of_means.len()
        ));
    }
    notes
}

pub fn cmd_evaluate(args: &LabeledArgs, cfg: &RunConfig) -> Result<Outcome> {
    let c = load_corpus(&args.predictions, &args.gold)?;
    let report = estimator::leave_one_group_out(&c, &cfg.eval_config())?;
    let mut fidelity = Table::new(
        "Fidelity (leave one group out)",
        "fidelity",
        &FIDELITY_COLUMNS,
    );
    let mut members = Table::new("Per-member detail", "members", &MEMBER_COLUMNS);
    let mut folds = Table::new(
        "Folds",
        "folds",
        &[
            "group",
            "status",
            "training_points",
            "training_groups",
            "slope",
            "intercept",
            "pair_count",
        ],
    );
    let (mut of_means, mut per_member) = (Vec::new(), Vec::new());
    let mut notes = Vec::new();
    for fold in &report.folds {
        match fold {
            Fold::Predicted(p) => {
                fidelity.push(fidelity_row(
                    &p.group,
                    p.avg_gold_f1,
                    p.avg_predicted_f1,
                    p.mae_of_means,
                    p.mae_per_member,
                ));
                of_means.extend(p.mae_of_means);
                per_member.extend(p.mae_per_member);
                member_rows(&mut members, p);
                let names: Vec<&str> = p.model.trained_on.iter().map(GroupId::as_str).collect();
                folds.push(vec![
                    Cell::text(&p.group),
                    Cell::text("ok"),
                    Cell::Int(p.model.n_points as u64),
                    Cell::text(names.join(" ")),
                    Cell::Num(p.model.slope),
                    Cell::Num(p.model.intercept),
                    Cell::Int(p.pair_count as u64),
                ]);
            }
            Fold::Failed { group, error } => {
                notes.push(format!("Fold {group} failed: {error}"));
                folds.push(vec![
                    Cell::text(group),
                    Cell::text(format!("failed: {error}")),
                    Cell::Missing,
                    Cell::Missing,
                    Cell::Missing,
                    Cell::Missing,
                    Cell::Missing,
                ]);
            }
        }
    }
    if fidelity.rows.is_empty() {
        return Err(Error::Degenerate(format!(
            "every fold failed:\n{}",
            notes.join("\n")
        )));
    }
    notes.extend(mae_notes(&of_means, &per_member));
    let mut stdout = String::new();
    for n in &notes {
        stdout.push_str(n);
        stdout.push('\n');
    }
    Ok(Outcome {
        files: emit("evaluate", cfg, &[], &[fidelity, members, folds], &notes)?,
        stdout,
    })
}

/// One row of an `evaluate` members.csv.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberRow {
    pub group: GroupId,
    pub member: String,
    pub agreement: f64,
    pub predicted_f1: f64,
    pub gold_f1: Option<f64>,
}

pub fn read_member_rows(path: &Path) -> Result<Vec<MemberRow>> {
    let text = read_text(path)?;
    let bad = |line: usize, reason: String| Error::Parse { line, reason }.in_file(path);
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| bad(0, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != MEMBER_COLUMNS {
        return Err(bad(
            0,
            format!("expected columns {}", MEMBER_COLUMNS.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| {
                bad(
                    line,
                    format!("{}: not a number: `{}`", MEMBER_COLUMNS[i], &rec[i]),
                )
            })
        };
        rows.push(MemberRow {
            group: GroupId::new(&rec[0]).map_err(|e| bad(line, e.to_string()))?,
            member: rec[1].to_owned(),
            agreement: num(2)?,
            predicted_f1: num(3)?,
            gold_f1: if rec[4].is_empty() {
                None
            } else {
                Some(num(4)?)
            },
        });
    }
    Ok(rows)
}

struct GroupFidelity {
    group: GroupId,
    avg_gold: Option<f64>,
    avg_pred: f64,
    mae_of_means: Option<f64>,
    mae_per_member: Option<f64>,
}

/// Groups member rows in file order and recomputes per-group fidelity the
/// same way `evaluate` does.
fn fidelity_from_rows(rows: &[MemberRow]) -> Result<Vec<GroupFidelity>> {
    let mut by_group: BTreeMap<GroupId, Vec<&MemberRow>> = BTreeMap::new();
    for r in rows {
        by_group.entry(r.group.clone()).or_default().push(r);
    }
    by_group
        .into_iter()
        .map(|(group, rs)| {
            let n = rs.len() as f64;
            let avg_pred = rs.iter().map(|r| r.predicted_f1).sum::<f64>() / n;
            let gold: Option<Vec<f64>> = rs.iter().map(|r| r.gold_f1).collect();
            let (avg_gold, mae_of_means, mae_per_member) = match gold {
                Some(gold) => {
                    let pred: Vec<f64> = rs.iter().map(|r| r.predicted_f1).collect();
                    let avg_gold = gold.iter().sum::<f64>() / n;
                    (
                        Some(avg_gold),
                        Some((avg_pred - avg_gold).abs()),
                        Some(estimator::mae(&pred, &gold)?),
                    )
                }
                None => (None, None, None),
            };
            Ok(GroupFidelity {
                group,
                avg_gold,
                avg_pred,
                mae_of_means,
                mae_per_member,
            })
        })
        .collect()
}

pub fn cmd_report(args: &ReportArgs, cfg: &RunConfig) -> Result<Outcome> {
    let rows = read_member_rows(&args.members)?;
    if rows.is_empty() {
        return Err(Error::Empty("members file has no rows").in_file(&args.members));
    }
    let mut fidelity = Table::new(
        "Fidelity (leave one group out)",
        "report",
        &FIDELITY_COLUMNS,
    );
    let (mut of_means, mut per_member) = (Vec::new(), Vec::new());
    for f in fidelity_from_rows(&rows)? {
        fidelity.push(fidelity_row(
            &f.group,
            f.avg_gold,
            f.avg_pred,
            f.mae_of_means,
            f.mae_per_member,
        ));
        of_means.extend(f.mae_of_means);
        per_member.extend(f.mae_per_member);
    }
    let notes = mae_notes(&of_means, &per_member);
    Ok(Outcome {
        stdout: format!("reported {} group(s)\n", fidelity.rows.len()),
        files: emit("report", cfg, &[], &[fidelity], &notes)?,
    })
}

pub fn cmd_silver(args: &SilverArgs, cfg: &RunConfig) -> Result<Outcome> {
    let c = load_corpus(&args.data.predictions, &args.data.gold)?;
    let silver = load_labels(&args.silver)?;
    let rows = silver_eval::silver_report(&c, &silver, &cfg.normalization, cfg.f1_mode)?;

    let mut t = Table::new(
        "Silver versus gold F1",
        "silver",
        &["group", "member", "f1_silver", "f1_gold", "abs_gap"],
    );
    for r in &rows {
        t.push(vec![
            Cell::text(&r.group),
            Cell::text(&r.member),
            Cell::Num(r.f1_silver),
            Cell::Num(r.f1_gold),
            Cell::Num(r.abs_gap),
        ]);
    }
    let mean_gap = rows.iter().map(|r| r.abs_gap).sum::<f64>() / rows.len() as f64;
    let mut summary = Table::new("Summary", "silver_summary", &["metric", "value"]);
    summary.push(vec![Cell::text("mean_abs_gap"), Cell::Num(mean_gap)]);
    let mut tables = vec![t];

    if let Some(path) = &args.disagreement {
        let member_rows = read_member_rows(path)?;
        let summaries: Vec<DisagreementSummary> = fidelity_from_rows(&member_rows)?
            .into_iter()
            .filter_map(|f| {
                Some(DisagreementSummary {
                    group: f.group,
                    mae_per_member: f.mae_per_member?,
                    mae_of_means: f.mae_of_means?,
                })
            })
            .collect();
        let cmp = silver_eval::compare_summaries(&summaries, &rows)?;
        let mut ct = Table::new(
            "Disagreement versus silver labels",
            "comparison",
            &[
                "group",
                "mae_disagreement",
                "mae_silver",
                "mae_disagreement_of_means",
                "mae_silver_of_means",
            ],
        );
        for (g, v) in &cmp.per_group {
            ct.push(vec![
                Cell::text(g),
                Cell::Num(v.mae_disagreement),
                Cell::Num(v.mae_silver),
                Cell::Num(v.mae_disagreement_of_means),
                Cell::Num(v.mae_silver_of_means),
            ]);
        }
        for (k, v) in [
            ("mean_mae_disagreement", cmp.mean_mae_disagreement),
            ("mean_mae_silver", cmp.mean_mae_silver),
            ("advantage", cmp.advantage),
            (
                "mean_mae_disagreement_of_means",
                cmp.mean_mae_disagreement_of_means,
            ),
            ("mean_mae_silver_of_means", cmp.mean_mae_silver_of_means),
            ("advantage_of_means", cmp.advantage_of_means),
        ] {
            summary.push(vec![Cell::text(k), Cell::Num(v)]);
        }
        tables.push(ct);
    }
    let stdout = summary
        .rows
        .iter()
        .map(|r| match (&r[0], &r[1]) {
            (Cell::Text(k), Cell::Num(v)) => format!("{k} = {v:.4}\n"),
            _ => String::new(),
        })
        .collect();
    tables.push(summary);
    Ok(Outcome {
        files: emit("silver", cfg, &[], &tables, &[])?,
        stdout,
    })
}

const SIM_KEYS: [&str; 8] = [
    "q_profile",
    "n_points",
    "n_members",
    "n_classes",
    "seed",
    "trials",
    "n_points_scale",
    "sampling",
];

fn strip_keys(text: &str, keys: &[&str]) -> String {
    text.lines()
        .filter(|l| match l.split_once('=') {
            Some((k, _)) => !keys.contains(&k.trim().replace('-', "_").as_str()),
            None => true,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Simulation task description, readable from a task or config file.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationTask {
    pub q_profile: Vec<f64>,
    pub n_points: usize,
    pub n_members: usize,
    pub n_classes: u32,
    pub seed: u64,
    pub trials: u64,
    pub n_points_scale: usize,
    pub sampling: MemberSampling,
}

impl Default for SimulationTask {
    fn default() -> Self {
        Self {
            q_profile: vec![0.9],
            n_points: 100_000,
            n_members: 4,
            n_classes: 2,
            seed: 0,
            trials: 1,
            n_points_scale: 1,
            sampling: MemberSampling::Calibrated,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

impl SimulationTask {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key.replace('-', "_").as_str() {
            "q_profile" => {
                self.q_profile = v
                    .split(',')
                    .map(|q| parse_num("q_profile", q))
                    .collect::<Result<_>>()?
            }
            "n_points" => self.n_points = parse_num(key, v)?,
            "n_members" => self.n_members = parse_num(key, v)?,
            "n_classes" => self.n_classes = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "trials" => self.trials = parse_num(key, v)?,
            "n_points_scale" => self.n_points_scale = parse_num(key, v)?,
            "sampling" => {
                self.sampling = match v.trim() {
                    "calibrated" => MemberSampling::Calibrated,
                    "argmax" => MemberSampling::Argmax,
                    other => {
                        return Err(Error::Config(format!(
                            "sampling must be calibrated or argmax, got `{other}`"
                        )))
                    }
                }
            }
            // run-config keys may share the file
            k if config::KEYS.contains(&k) => {}
            other => return Err(Error::Config(format!("unknown task key `{other}`"))),
        }
        Ok(())
    }

    fn profile_string(&self) -> String {
        self.q_profile
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn echo(&self) -> Vec<String> {
        vec![
            format!("q_profile = {}", self.profile_string().replace(' ', ",")),
            format!("n_points = {}", self.n_points),
            format!("n_members = {}", self.n_members),
            format!("n_classes = {}", self.n_classes),
            format!("seed = {}", self.seed),
            format!("trials = {}", self.trials),
            format!("n_points_scale = {}", self.n_points_scale),
            format!(
                "sampling = {}",
                match self.sampling {
                    MemberSampling::Calibrated => "calibrated",
                    MemberSampling::Argmax => "argmax",
                }
            ),
        ]
    }

    /// One table row per trial; trial `t` is seeded with `seed + t`.
    pub fn run(&self) -> Result<Table> {
        let mut t = Table::new(
            "Generalization-disagreement simulation",
            "simulate",
            &[
                "trial",
                "seed",
                "q_profile",
                "n_points",
                "n_members",
                "pair_count",
                "mean_error",
                "mean_disagreement",
                "gap",
            ],
        );
        for trial in 0..self.trials {
            let seed = self.seed.wrapping_add(trial);
            let task =
                CalibratedTask::from_profile(&self.q_profile, self.n_points, self.n_classes, seed)?;
            let g =
                gde_lab::gde_gap_with(&task, self.n_members, self.n_points_scale, self.sampling)?;
            t.push(vec![
                Cell::Int(trial),
                Cell::Int(seed),
                Cell::text(self.profile_string()),
                Cell::Int(g.n_points as u64),
                Cell::Int(g.n_members as u64),
                Cell::Int(g.pair_count as u64),
                Cell::Num(g.mean_error),
                Cell::Num(g.mean_disagreement),
                Cell::Num(g.gap),
            ]);
        }
        Ok(t)
    }
}

pub fn cmd_simulate(
    args: &SimulateArgs,
    cfg: &RunConfig,
    config_path: Option<&Path>,
) -> Result<Outcome> {
    let mut task = SimulationTask::default();
    // task keys may live in the run config file, a task file, or flags
    for path in config_path.into_iter().chain(args.task.as_deref()) {
        for (k, v) in parse_pairs(&read_text(path)?)? {
            task.set(&k, &v).map_err(|e| e.in_file(path))?;
        }
    }
    for (k, v) in [
        ("q_profile", &args.q_profile),
        ("n_points", &args.n_points),
        ("n_members", &args.n_members),
        ("n_classes", &args.n_classes),
        ("seed", &args.seed),
        ("trials", &args.trials),
        ("n_points_scale", &args.n_points_scale),
        ("sampling", &args.sampling),
    ] {
        if let Some(v) = v {
            task.set(k, v)?;
        }
    }
    let t = task.run()?;
    let stdout = format!("simulated {} trial(s)\n", t.rows.len());
    Ok(Outcome {
        files: emit("simulate", cfg, &task.echo(), &[t], &[])?,
        stdout,
    })
}

/// Fixed-coefficient model, handy for scripting `predict`.
pub fn fixed_model_text(slope: f64, intercept: f64) -> String {
    let mut buf = Vec::new();
    estimator::save_model(&RegressionModel::fixed(slope, intercept), &mut buf)
        .expect("in-memory write");
    String::from_utf8(buf).expect("utf-8")
}
