//! The side-by-side timing table: one row per run, seconds per mode, an
//! Average row and a one-line observation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::BenchReport;

const RUN: &str = "Run";
const FUSION_COL: &str = "RAG-Fusion Time (s)";
const RAG_COL: &str = "RAG Time (s)";

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("timing csv is malformed: {0}")]
    Csv(#[from] csv::Error),
    #[error("timing csv is missing column '{0}'")]
    MissingColumn(&'static str),
    #[error("row {row}: '{value}' is not a number of seconds")]
    BadNumber { row: usize, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub run: String,
    pub fusion_s: Option<f64>,
    pub rag_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub rows: Vec<TimingRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into())
}

impl TimingTable {
    /// Reads a CSV with headers `Run`, `RAG-Fusion Time (s)`, `RAG Time (s)`.
    /// Rows labelled `Average` are ignored; averages are always recomputed.
    pub fn from_csv(text: &str) -> Result<Self, TableError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let col = |name: &'static str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or(TableError::MissingColumn(name))
        };
        let (run_col, fusion_col, rag_col) = (col(RUN)?, col(FUSION_COL)?, col(RAG_COL)?);
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let run = record.get(run_col).unwrap_or_default().to_string();
            if run.eq_ignore_ascii_case("average") {
                continue;
            }
            let number = |c: usize| -> Result<Option<f64>, TableError> {
                match record.get(c).unwrap_or_default() {
                    "" | "-" => Ok(None),
                    v => v.parse().map(Some).map_err(|_| TableError::BadNumber {
                        row: i + 1,
                        value: v.to_string(),
                    }),
                }
            };
            rows.push(TimingRow {
                run,
                fusion_s: number(fusion_col)?,
                rag_s: number(rag_col)?,
            });
        }
        Ok(Self { rows })
    }

    /// Pairs the i-th successful run of each mode.
    pub fn from_report(report: &BenchReport) -> Self {
        let n = report.rag_runs.len().max(report.fusion_runs.len());
        let secs = |runs: &[super::BenchRun], i: usize| runs.get(i).map(|r| r.total_ms as f64 / 1000.0);
        Self {
            rows: (0..n)
                .map(|i| TimingRow {
                    run: (i + 1).to_string(),
                    fusion_s: secs(&report.fusion_runs, i),
                    rag_s: secs(&report.rag_runs, i),
                })
                .collect(),
        }
    }

    pub fn fusion_average(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.fusion_s))
    }

    pub fn rag_average(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.rag_s))
    }

    pub fn ratio(&self) -> Option<f64> {
        match (self.fusion_average(), self.rag_average()) {
            (Some(f), Some(r)) if r > 0.0 => Some(f / r),
            _ => None,
        }
    }

    pub fn observation(&self) -> String {
        match self.ratio() {
            Some(ratio) => format!("Observation: RAG-Fusion takes {ratio:.2} times longer."),
            None => "Observation: not enough runs to compare.".to_string(),
        }
    }

    pub fn render(&self) -> String {
        let mut body: Vec<[String; 3]> = vec![[RUN.into(), FUSION_COL.into(), RAG_COL.into()]];
        body.extend(
            self.rows
                .iter()
                .map(|r| [r.run.clone(), cell(r.fusion_s), cell(r.rag_s)]),
        );
        body.push([
            "Average".into(),
            cell(self.fusion_average()),
            cell(self.rag_average()),
        ]);
        let widths: Vec<usize> = (0..3)
            .map(|c| body.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in body.iter().enumerate() {
            let line = format!(
                "{:<w0$}  {:>w1$}  {:>w2$}",
                row[0],
                row[1],
                row[2],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2]
            );
            let _ = writeln!(out, "{}", line.trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 4));
            }
        }
        out.push_str(&self.observation());
        out.push('\n');
        out
    }
}
