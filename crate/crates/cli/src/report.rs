//! Delimited tables and the MR-to-text reliability summary.

use serde::Serialize;

use crate::CliError;

/// Tab-separated table with a header row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|h| (*h).to_owned()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header.join("\t");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }
}

pub fn fixed(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

/// Answer columns in report order, with their row labels.
pub const QUESTIONS: [(&str, &str); 5] = [
    ("hallucination", "Hallucinations"),
    ("omission", "Omissions"),
    ("fluency", "Fluency"),
    ("spatial_compression", "Spatial compression"),
    ("overall", "Overall correctness"),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuestionRate {
    pub question: String,
    pub yes: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReliabilitySummary {
    pub n: usize,
    pub rows: Vec<QuestionRate>,
}

impl ReliabilitySummary {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["question", "yes rate"]);
        for r in &self.rows {
            t.push(vec![r.question.clone(), fixed(r.rate, 2)]);
        }
        t
    }
}

/// Parses an answers file: tab-separated, with a header naming the five
/// question columns (other columns such as an id are ignored), one record
/// per line, every answer `yes` or `no`.
pub fn reliability_summary(text: &str) -> Result<ReliabilitySummary, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_reader(text.as_bytes());
    let invalid = |line: u64, message: String| CliError::Core(neurotext::Error::Validation { record: line as usize, message });
    let headers = reader.headers().map_err(|e| invalid(1, e.to_string()))?.clone();
    let columns: Vec<usize> = QUESTIONS
        .iter()
        .map(|(key, _)| {
            headers
                .iter()
                .position(|h| h.trim() == *key)
                .ok_or_else(|| invalid(1, format!("header lacks the '{key}' column")))
        })
        .collect::<Result<_, _>>()?;

    let mut yes = [0usize; 5];
    let mut n = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            invalid(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (q, &col) in columns.iter().enumerate() {
            match record.get(col).map(|v| v.trim().to_ascii_lowercase()).as_deref() {
                Some("yes") => yes[q] += 1,
                Some("no") => {}
                other => {
                    return Err(invalid(
                        line,
                        format!("'{}' must be yes or no, found {:?}", QUESTIONS[q].0, other.unwrap_or("")),
                    ))
                }
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(invalid(1, "answers file has no records".into()));
    }
    Ok(ReliabilitySummary {
        n,
        rows: QUESTIONS
            .iter()
            .zip(yes)
            .map(|((_, label), y)| QuestionRate {
                question: (*label).to_owned(),
                yes: y,
                rate: y as f64 / n as f64,
            })
            .collect(),
    })
}
