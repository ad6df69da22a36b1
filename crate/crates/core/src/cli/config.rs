//! Run configuration: a flat `key = value` file, overridden by same-named flags.
//!
//! ```text
//! # comments start with '#'
//! case_fold = true
//! denominator = union
//! f1_mode = micro
//! output_dir = out
//! ```
//!
//! Keys may be written with `_` or `-`. Booleans accept `true/false`,
//! `on/off`, `yes/no` and `1/0`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::agreement::{AgreementConfig, Denominator};
use crate::error::{Error, Result};
use crate::estimator::EvalConfig;
use crate::kpe_metrics::{F1Mode, NormalizationConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Markdown,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn markdown(self) -> bool {
        matches!(self, OutputFormat::Markdown | OutputFormat::Both)
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            "both" => Ok(OutputFormat::Both),
            other => Err(Error::Config(format!(
                "format must be csv, markdown or both, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Markdown => "markdown",
            OutputFormat::Both => "both",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub normalization: NormalizationConfig,
    pub agreement: AgreementConfig,
    pub f1_mode: F1Mode,
    pub clamp_predictions: bool,
    pub output_dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            normalization: NormalizationConfig::default(),
            agreement: AgreementConfig::default(),
            f1_mode: F1Mode::Micro,
            clamp_predictions: true,
            output_dir: PathBuf::from("kpeval-out"),
            format: OutputFormat::Both,
        }
    }
}

pub const KEYS: [&str; 10] = [
    "case_fold",
    "trim",
    "collapse_internal_whitespace",
    "unicode_compatibility_normalize",
    "denominator",
    "both_empty_score",
    "f1_mode",
    "clamp_predictions",
    "output_dir",
    "format",
];

pub fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(Error::Config(format!(
            "{key}: expected a boolean, got `{other}`"
        ))),
    }
}

fn config_err(key: &str, e: Error) -> Error {
    Error::Config(format!("{key}: {}", e.root()))
}

/// Reads `key = value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        out.push((k.trim().replace('-', "_"), v.trim().to_owned()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let n = &mut self.normalization;
        match key.as_str() {
            "case_fold" => n.case_fold = parse_bool(&key, value)?,
            "trim" => n.trim = parse_bool(&key, value)?,
            "collapse_internal_whitespace" => {
                n.collapse_internal_whitespace = parse_bool(&key, value)?
            }
            "unicode_compatibility_normalize" => {
                n.unicode_compatibility_normalize = parse_bool(&key, value)?
            }
            "denominator" => {
                self.agreement.denominator =
                    Denominator::from_str(value).map_err(|e| config_err(&key, e))?
            }
            "both_empty_score" => {
                let v: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: not a number: `{value}`")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("{key}: must lie in [0, 1], got {v}")));
                }
                self.agreement.both_empty_score = v;
            }
            "f1_mode" => self.f1_mode = F1Mode::from_str(value).map_err(|e| config_err(&key, e))?,
            "clamp_predictions" => self.clamp_predictions = parse_bool(&key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value.trim()),
            "format" => self.format = OutputFormat::from_str(value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        self.agreement.normalization = self.normalization;
        Ok(())
    }

    /// Config file values first, then overrides in order.
    pub fn resolve(file_text: Option<&str>, overrides: &[(&str, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(text) = file_text {
            for (k, v) in parse_pairs(text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            agreement: self.agreement,
            f1_mode: self.f1_mode,
            clamp: self.clamp_predictions,
        }
    }

    /// The effective configuration, one `key = value` per line in [`KEYS`] order.
    pub fn echo(&self) -> Vec<String> {
        let n = &self.normalization;
        vec![
            format!("case_fold = {}", n.case_fold),
            format!("trim = {}", n.trim),
            format!(
                "collapse_internal_whitespace = {}",
                n.collapse_internal_whitespace
            ),
            format!(
                "unicode_compatibility_normalize = {}",
                n.unicode_compatibility_normalize
            ),
            format!("denominator = {}", self.agreement.denominator),
            format!("both_empty_score = {}", self.agreement.both_empty_score),
            format!("f1_mode = {}", self.f1_mode),
            format!("clamp_predictions = {}", self.clamp_predictions),
            format!("output_dir = {}", self.output_dir.display()),
            format!("format = {}", self.format),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo_every_key() {
        let echo = RunConfig::default().echo();
        assert_eq!(echo.len(), KEYS.len());
        for (line, key) in echo.iter().zip(KEYS) {
            assert!(line.starts_with(key), "{line}");
        }
    }

    #[test]
    fn flags_win_over_file() {
        let file = "# run\ndenominator = sum\nf1-mode = macro\ncase_fold = off\n";
        let cfg = RunConfig::resolve(Some(file), &[("denominator", "union".into())]).unwrap();
        assert_eq!(cfg.agreement.denominator, Denominator::Union);
        assert_eq!(cfg.f1_mode, F1Mode::Macro);
        assert!(!cfg.normalization.case_fold);
        assert!(!cfg.agreement.normalization.case_fold);
    }

    #[test]
    fn echo_round_trips() {
        let file = "trim = no\nboth_empty_score = 0.25\nformat = csv\noutput_dir = x/y\n";
        let cfg = RunConfig::resolve(Some(file), &[]).unwrap();
        let again = RunConfig::resolve(Some(&cfg.echo().join("\n")), &[]).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn bad_config() {
        assert!(matches!(
            RunConfig::resolve(Some("nope = 1"), &[]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::resolve(Some("trim"), &[]),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::resolve(None, &[("both_empty_score", "2".into())]).is_err());
        assert!(RunConfig::resolve(None, &[("f1_mode", "weighted".into())]).is_err());
    }
}
