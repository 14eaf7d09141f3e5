use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::label::BoundaryLabel;

use super::metrics::LevelScores;

/// One line of the results grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub model: String,
    /// `None` for models without an audio encoder.
    pub pretrained: Option<bool>,
    pub fixed: Option<bool>,
    pub scores: LevelScores,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

fn flag(value: Option<bool>) -> &'static str {
    match value {
        None => "-",
        Some(true) => "yes",
        Some(false) => "no",
    }
}

impl MetricsReport {
    pub fn new(rows: Vec<ReportRow>) -> Self {
        Self { rows }
    }

    /// Markdown grid with metrics rounded to two decimals.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| ID | Model | Pre-trained | Fixed |");
        for level in BoundaryLabel::REPORTED {
            write!(out, " {0} pre. | {0} rec. | {0} f1 |", level.name()).unwrap();
        }
        out.push('\n');
        out.push_str("|---|---|---|---|");
        out.push_str(&"---|".repeat(12));
        out.push('\n');
        let mut absent_notes = Vec::new();
        for row in &self.rows {
            write!(
                out,
                "| {} | {} | {} | {} |",
                row.id,
                row.model,
                flag(row.pretrained),
                flag(row.fixed)
            )
            .unwrap();
            for (level, score) in BoundaryLabel::REPORTED.iter().zip(row.scores.0.iter()) {
                write!(out, " {:.2} | {:.2} | {:.2} |", score.precision, score.recall, score.f1).unwrap();
                if score.absent {
                    absent_notes.push(format!("{} {}", row.id, level.name()));
                }
            }
            out.push('\n');
        }
        if !absent_notes.is_empty() {
            writeln!(out, "\nabsent levels (no reference or hypothesis boundaries): {}", absent_notes.join(", "))
                .unwrap();
        }
        out
    }

    /// CSV with full-precision metrics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,model,pretrained,fixed");
        for level in BoundaryLabel::REPORTED {
            let name = level.name();
            write!(out, ",{name}_pre,{name}_rec,{name}_f1").unwrap();
        }
        out.push_str(",absent\n");
        for row in &self.rows {
            write!(out, "{},{},{},{}", row.id, row.model, flag(row.pretrained), flag(row.fixed)).unwrap();
            let mut absent = Vec::new();
            for (level, score) in BoundaryLabel::REPORTED.iter().zip(row.scores.0.iter()) {
                write!(out, ",{},{},{}", score.precision, score.recall, score.f1).unwrap();
                if score.absent {
                    absent.push(level.name());
                }
            }
            writeln!(out, ",{}", absent.join(";")).unwrap();
        }
        out
    }

    /// Parses the output of [`MetricsReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 17 {
                return Err(format!("line {}: expected 17 cells, found {}", i + 1, cells.len()));
            }
            let parse_flag = |s: &str| match s {
                "yes" => Ok(Some(true)),
                "no" => Ok(Some(false)),
                "-" => Ok(None),
                other => Err(format!("line {}: bad flag `{other}`", i + 1)),
            };
            let absent: Vec<&str> = cells[16].split(';').filter(|s| !s.is_empty()).collect();
            let mut scores = LevelScores::default();
            for (k, level) in BoundaryLabel::REPORTED.iter().enumerate() {
                let num = |j: usize| {
                    cells[4 + 3 * k + j]
                        .parse::<f64>()
                        .map_err(|e| format!("line {}: {e}", i + 1))
                };
                scores.0[k].precision = num(0)?;
                scores.0[k].recall = num(1)?;
                scores.0[k].f1 = num(2)?;
                scores.0[k].absent = absent.contains(&level.name());
            }
            rows.push(ReportRow {
                id: cells[0].to_string(),
                model: cells[1].to_string(),
                pretrained: parse_flag(cells[2])?,
                fixed: parse_flag(cells[3])?,
                scores,
            });
        }
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::LevelScore;

    fn row(id: &str, value: f64) -> ReportRow {
        let score = LevelScore {
            precision: value,
            recall: value,
            f1: value,
            absent: false,
        };
        ReportRow {
            id: id.into(),
            model: "Conformer-Char".into(),
            pretrained: Some(true),
            fixed: Some(false),
            scores: LevelScores([score; 4]),
        }
    }

    #[test]
    fn single_row_has_twelve_metric_cells() {
        let md = MetricsReport::new(vec![row("1", 0.5)]).to_markdown();
        let data_line = md.lines().nth(2).unwrap();
        let cells: Vec<&str> = data_line.trim_matches('|').split('|').collect();
        assert_eq!(cells.len(), 16);
        assert_eq!(cells.iter().filter(|c| c.trim() == "0.50").count(), 12);
    }

    #[test]
    fn markdown_rounds_csv_keeps_precision() {
        let report = MetricsReport::new(vec![row("1", 0.567)]);
        assert!(report.to_markdown().contains("0.57"));
        assert!(!report.to_markdown().contains("0.567"));
        assert!(report.to_csv().contains("0.567"));
    }

    #[test]
    fn rows_keep_order_and_csv_round_trips() {
        let report = MetricsReport::new(vec![row("b", 0.1), row("a", 0.2)]);
        let md = report.to_markdown();
        assert!(md.find("| b |").unwrap() < md.find("| a |").unwrap());
        assert_eq!(MetricsReport::from_csv(&report.to_csv()).unwrap(), report);
    }
}
