//! Report tables rendered as CSV (full precision) or Markdown (3 decimals).

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Num(f64),
    /// Defined but absent, e.g. gold F1 for an unlabeled group.
    Missing,
    /// A ratio with a zero denominator.
    Undefined,
}

impl Cell {
    pub fn text(s: impl ToString) -> Self {
        Cell::Text(s.to_string())
    }

    pub fn opt(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Num)
    }

    pub fn ratio(v: Option<f64>) -> Self {
        v.map_or(Cell::Undefined, Cell::Num)
    }

    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            // Display for f64 is the shortest string that parses back exactly.
            Cell::Num(v) => v.to_string(),
            Cell::Missing => String::new(),
            Cell::Undefined => "undefined".into(),
        }
    }

    fn markdown(&self) -> String {
        match self {
            Cell::Text(s) => s.replace('|', "\\|"),
            Cell::Int(i) => i.to_string(),
            Cell::Num(v) => format!("{v:.3}"),
            Cell::Missing => "-".into(),
            Cell::Undefined => "undefined".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub title: String,
    /// CSV file name without extension.
    pub stem: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(
        title: impl Into<String>,
        stem: impl Into<String>,
        columns: &[&'static str],
    ) -> Self {
        Self {
            title: title.into(),
            stem: stem.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// `header` lines are written first as `# ` comments.
    pub fn to_csv(&self, header: &[String]) -> Result<String> {
        let mut out = String::new();
        for h in header {
            writeln!(out, "# {h}").unwrap();
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Invalid(format!("csv: {e}")))?;
        out.push_str(&String::from_utf8(bytes).expect("csv of utf-8 cells"));
        Ok(out)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        writeln!(out, "## {}\n", self.title).unwrap();
        writeln!(out, "| {} |", self.columns.join(" | ")).unwrap();
        writeln!(
            out,
            "|{}",
            self.columns.iter().map(|_| "---|").collect::<String>()
        )
        .unwrap();
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::markdown).collect();
            writeln!(out, "| {} |", cells.join(" | ")).unwrap();
        }
        out
    }
}

/// A Markdown document: title, config echo, then tables and free notes.
pub fn markdown_document(
    title: &str,
    header: &[String],
    tables: &[Table],
    notes: &[String],
) -> String {
    let mut out = String::new();
    writeln!(out, "# {title}\n").unwrap();
    writeln!(out, "```text").unwrap();
    for h in header {
        writeln!(out, "{h}").unwrap();
    }
    writeln!(out, "```\n").unwrap();
    for t in tables {
        out.push_str(&t.to_markdown());
        out.push('\n');
    }
    for n in notes {
        writeln!(out, "{n}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_both_forms() {
        let mut t = Table::new("Scores", "scores", &["group", "f1", "p", "gold"]);
        t.push(vec![
            Cell::text("a|b"),
            Cell::Num(0.1 + 0.2),
            Cell::Undefined,
            Cell::Missing,
        ]);
        let csv = t.to_csv(&["tool x".into()]).unwrap();
        assert_eq!(
            csv,
            "# tool x\ngroup,f1,p,gold\na|b,0.30000000000000004,undefined,\n"
        );
        let md = t.to_markdown();
        assert!(md.contains("| a\\|b | 0.300 | undefined | - |"), "{md}");
    }
}
