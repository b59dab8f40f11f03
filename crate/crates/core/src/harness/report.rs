use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::util::write_file;
use crate::{Error, Result};

/// Frame error rates of one (train, target) pair across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub group: String,
    pub train: String,
    pub target: String,
    /// `(seed, FER %)` for every seed that completed.
    pub values: Vec<(u64, f64)>,
    /// `(seed, error)` for every seed that failed.
    pub failures: Vec<(u64, String)>,
}

impl Cell {
    pub fn fers(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.1).collect()
    }

    pub fn summary(&self) -> CellSummary {
        let f = self.fers();
        let (mean, min, max) = if f.is_empty() {
            (None, None, None)
        } else {
            (
                Some(f.iter().sum::<f64>() / f.len() as f64),
                f.iter().cloned().reduce(f64::min),
                f.iter().cloned().reduce(f64::max),
            )
        };
        CellSummary {
            train: self.train.clone(),
            target: self.target.clone(),
            fer_mean: mean,
            fer_min: min,
            fer_max: max,
            seeds: f.len(),
        }
    }
}

/// One CSV row. Failed cells have no statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub train: String,
    pub target: String,
    pub fer_mean: Option<f64>,
    pub fer_min: Option<f64>,
    pub fer_max: Option<f64>,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Svg,
    Text,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Svg, ReportFormat::Text];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Svg => "svg",
            ReportFormat::Text => "txt",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            "text" | "txt" => Ok(ReportFormat::Text),
            other => Err(Error::Argument(format!("unknown report format {other:?}"))),
        }
    }
}

impl MetricsReport {
    pub fn cell(&self, train: &str, target: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.train == train && c.target == target)
    }

    /// Adds a seed result, creating the cell on first use.
    pub fn record(&mut self, group: &str, train: &str, target: &str, seed: u64, result: std::result::Result<f64, String>) {
        let idx = match self.cells.iter().position(|c| c.train == train && c.target == target) {
            Some(i) => i,
            None => {
                self.cells.push(Cell {
                    group: group.into(),
                    train: train.into(),
                    target: target.into(),
                    values: Vec::new(),
                    failures: Vec::new(),
                });
                self.cells.len() - 1
            }
        };
        let cell = &mut self.cells[idx];
        match result {
            Ok(v) => cell.values.push((seed, v)),
            Err(e) => cell.failures.push((seed, e)),
        }
    }

    pub fn summaries(&self) -> Vec<CellSummary> {
        self.cells.iter().map(Cell::summary).collect()
    }

    fn groups(&self) -> BTreeMap<&str, Vec<&Cell>> {
        let mut out: BTreeMap<&str, Vec<&Cell>> = BTreeMap::new();
        for c in &self.cells {
            out.entry(c.group.as_str()).or_default().push(c);
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        emit_csv(&self.summaries())
    }

    /// One bar chart per group; failed cells are drawn as empty slots.
    pub fn to_svg(&self) -> String {
        let groups = self.groups();
        let (bar, gap, chart_h, top) = (28.0, 10.0, 200.0, 30.0);
        let widest = groups.values().map(|v| v.len()).max().unwrap_or(1) as f64;
        let width = 80.0 + widest * (bar + gap) + 20.0;
        let panel_h = top + chart_h + 110.0;
        let height = panel_h * groups.len() as f64;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
        );
        for (gi, (name, cells)) in groups.iter().enumerate() {
            let y0 = gi as f64 * panel_h;
            let base = y0 + top + chart_h;
            let _ = writeln!(s, r#"<g><text x="10" y="{}" font-size="14">{}</text>"#, y0 + 18.0, xml_escape(name));
            let _ = writeln!(s, r#"<line x1="60" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, width - 10.0);
            for tick in [0.0, 25.0, 50.0, 75.0, 100.0] {
                let y = base - chart_h * tick / 100.0;
                let _ = writeln!(s, r#"<text x="55" y="{y}" text-anchor="end">{tick}</text>"#);
            }
            for (i, c) in cells.iter().enumerate() {
                let x = 70.0 + i as f64 * (bar + gap);
                let sum = c.summary();
                if let (Some(m), Some(lo), Some(hi)) = (sum.fer_mean, sum.fer_min, sum.fer_max) {
                    let h = chart_h * m / 100.0;
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x}" y="{}" width="{bar}" height="{h}" fill="steelblue"><title>{} → {}: {m:.2}</title></rect>"#,
                        base - h,
                        xml_escape(&c.train),
                        xml_escape(&c.target)
                    );
                    let cx = x + bar / 2.0;
                    let _ = writeln!(
                        s,
                        r#"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="black"/>"#,
                        base - chart_h * lo / 100.0,
                        base - chart_h * hi / 100.0
                    );
                }
                let _ = writeln!(
                    s,
                    r#"<text transform="translate({},{}) rotate(60)">{} → {}</text>"#,
                    x + 4.0,
                    base + 8.0,
                    xml_escape(&c.train),
                    xml_escape(&c.target)
                );
            }
            s.push_str("</g>\n");
        }
        s.push_str("</svg>\n");
        s
    }

    /// Train domains as rows, test targets as columns, one table per group.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, cells) in self.groups() {
            let mut rows: Vec<&str> = Vec::new();
            let mut cols: Vec<&str> = Vec::new();
            for c in &cells {
                if !rows.contains(&c.train.as_str()) {
                    rows.push(&c.train);
                }
                if !cols.contains(&c.target.as_str()) {
                    cols.push(&c.target);
                }
            }
            let fmt = |c: Option<&&Cell>| match c.map(|c| c.summary()) {
                None => "-".to_string(),
                Some(CellSummary { fer_mean: Some(m), fer_min: Some(lo), fer_max: Some(hi), seeds, .. }) => {
                    format!("{m:.1} [{lo:.1}, {hi:.1}] n={seeds}")
                }
                Some(_) => "failed".to_string(),
            };
            let w0 = rows.iter().map(|r| r.len()).max().unwrap_or(0).max(5) + 2;
            let mut table: Vec<Vec<String>> = Vec::new();
            for r in &rows {
                table.push(
                    cols.iter()
                        .map(|t| fmt(cells.iter().find(|c| c.train == *r && c.target == *t)))
                        .collect(),
                );
            }
            let widths: Vec<usize> = (0..cols.len())
                .map(|j| table.iter().map(|row| row[j].len()).max().unwrap_or(0).max(cols[j].len()) + 2)
                .collect();
            let _ = writeln!(s, "{name} (frame error rate %, mean [min, max] over seeds)");
            let _ = write!(s, "{:w0$}", "train");
            for (j, c) in cols.iter().enumerate() {
                let _ = write!(s, "{:>w$}", c, w = widths[j]);
            }
            s.push('\n');
            for (r, row) in rows.iter().zip(&table) {
                let _ = write!(s, "{r:w0$}");
                for (j, v) in row.iter().enumerate() {
                    let _ = write!(s, "{:>w$}", v, w = widths[j]);
                }
                s.push('\n');
            }
            s.push('\n');
        }
        s
    }

    /// Writes `dir/report.{csv,svg,txt}` for the requested formats.
    pub fn write(&self, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
        if self.cells.is_empty() {
            return Err(Error::EmptyInput("report has no cells".into()));
        }
        let mut out = Vec::new();
        for &f in formats {
            let body = match f {
                ReportFormat::Csv => self.to_csv()?,
                ReportFormat::Svg => self.to_svg(),
                ReportFormat::Text => self.to_text(),
            };
            let path = dir.join(format!("report.{}", f.extension()));
            write_file(&path, body.as_bytes())?;
            out.push(path);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))
    }
}

pub fn emit_csv(rows: &[CellSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::State(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::State(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_csv(text: &str, origin: &Path) -> Result<Vec<CellSummary>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::format(origin, e.to_string())))
        .collect()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsReport {
        let mut r = MetricsReport::default();
        r.record("domains", "clean", "clean", 1, Ok(12.5));
        r.record("domains", "clean", "clean", 2, Ok(1.0 / 3.0));
        r.record("domains", "clean", "distant", 1, Ok(70.25));
        r.record("domains", "clean", "distant", 2, Err("boom".into()));
        r.record("enh", "a<b", "x&y", 1, Err("nope".into()));
        r
    }

    #[test]
    fn csv_round_trip() {
        let r = sample();
        let text = r.to_csv().unwrap();
        assert!(text.starts_with("train,target,fer_mean,fer_min,fer_max,seeds\n"));
        assert_eq!(parse_csv(&text, Path::new("r.csv")).unwrap(), r.summaries());
    }

    #[test]
    fn summary_statistics() {
        let s = sample().cell("clean", "clean").unwrap().summary();
        assert_eq!(s.seeds, 2);
        assert_eq!(s.fer_max, Some(12.5));
        assert_eq!(s.fer_min, Some(1.0 / 3.0));
    }

    #[test]
    fn empty_report_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let err = MetricsReport::default().write(dir.path(), &ReportFormat::ALL).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn text_has_every_cell() {
        let t = sample().to_text();
        assert!(t.contains("12.5") || t.contains("6.4"));
        assert!(t.contains("failed"));
        assert!(t.contains("distant"));
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        assert_eq!(MetricsReport::from_json(&r.to_json(), Path::new("m.json")).unwrap(), r);
    }
}
