use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::plan::CategoryPlan;

/// Attack label of the unattacked baseline cells.
pub const CLEAN: &str = "clean";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CellKey {
    pub dataset: String,
    pub recommender: String,
    pub defense: String,
    pub attack: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricValue {
    pub metric: String,
    pub k: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellStatus {
    Completed(Vec<MetricValue>),
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub key: CellKey,
    pub status: CellStatus,
}

impl CellResult {
    pub fn failed(key: CellKey, err: &anyhow::Error) -> Self {
        CellResult {
            key,
            status: CellStatus::Failed(format!("{err:#}")),
        }
    }

    pub fn from_result(key: CellKey, r: Result<Vec<MetricValue>>) -> Self {
        match r {
            Ok(values) => CellResult {
                key,
                status: CellStatus::Completed(values),
            },
            Err(e) => {
                log::error!("cell {}/{}/{} failed: {e:#}", key.recommender, key.defense, key.attack);
                Self::failed(key, &e)
            }
        }
    }

    pub fn metrics(&self) -> Option<&[MetricValue]> {
        match &self.status {
            CellStatus::Completed(v) => Some(v),
            CellStatus::Failed(_) => None,
        }
    }

    pub fn value(&self, metric: &str, k: usize) -> Option<f64> {
        self.metrics()?.iter().find(|m| m.metric == metric && m.k == k).map(|m| m.value)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentResults {
    pub plan: Option<CategoryPlan>,
    pub cells: Vec<CellResult>,
}

impl ExperimentResults {
    pub fn all_completed(&self) -> bool {
        self.cells.iter().all(|c| c.metrics().is_some())
    }

    pub fn cell(&self, recommender: &str, defense: &str, attack: &str) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.key.recommender == recommender && c.key.defense == defense && c.key.attack == attack)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub cells: PathBuf,
    pub markdown: PathBuf,
}

#[derive(Serialize)]
struct Row<'a> {
    dataset: &'a str,
    recommender: &'a str,
    defense: &'a str,
    attack: &'a str,
    metric: &'a str,
    k: usize,
    value: f64,
}

/// Writes `results.csv` (one row per cell, metric and K), `cells.csv`
/// (status of every cell) and `summary.md`.
pub fn emit_report(results: &ExperimentResults, dir: &Path) -> Result<ReportFiles> {
    if !results.cells.iter().any(|c| c.metrics().is_some()) {
        bail!("no completed cells to report");
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = ReportFiles {
        csv: dir.join("results.csv"),
        cells: dir.join("cells.csv"),
        markdown: dir.join("summary.md"),
    };

    let mut w = csv::Writer::from_path(&files.csv).with_context(|| format!("creating {}", files.csv.display()))?;
    for cell in &results.cells {
        for m in cell.metrics().unwrap_or_default() {
            w.serialize(Row {
                dataset: &cell.key.dataset,
                recommender: &cell.key.recommender,
                defense: &cell.key.defense,
                attack: &cell.key.attack,
                metric: &m.metric,
                k: m.k,
                value: m.value,
            })
            .with_context(|| format!("writing {}", files.csv.display()))?;
        }
    }
    w.flush().with_context(|| format!("writing {}", files.csv.display()))?;

    let mut w = csv::Writer::from_path(&files.cells).with_context(|| format!("creating {}", files.cells.display()))?;
    w.write_record(["dataset", "recommender", "defense", "attack", "status", "message"])?;
    for cell in &results.cells {
        let (status, message) = match &cell.status {
            CellStatus::Completed(_) => ("completed", ""),
            CellStatus::Failed(msg) => ("failed", msg.as_str()),
        };
        let k = &cell.key;
        w.write_record([&k.dataset, &k.recommender, &k.defense, &k.attack, status, message])
            .with_context(|| format!("writing {}", files.cells.display()))?;
    }
    w.flush().with_context(|| format!("writing {}", files.cells.display()))?;

    std::fs::write(&files.markdown, markdown(results)).with_context(|| format!("writing {}", files.markdown.display()))?;
    Ok(files)
}

/// One table per (dataset, recommender, defense): metric rows, attack
/// columns, the largest value of each row in bold.
pub fn markdown(results: &ExperimentResults) -> String {
    let mut out = String::from("# Results\n\n");
    if let Some(p) = &results.plan {
        let _ = writeln!(
            out,
            "Origin class {} (clean CHR {:.4}) pushed toward target class {} (clean CHR {:.4}), ratio {:.2}{}.\n",
            p.origin,
            p.origin_chr,
            p.target,
            p.target_chr,
            p.ratio(),
            if p.within_tolerance { "" } else { ", outside the selection tolerance" }
        );
    }
    let mut groups: Vec<(&str, &str, &str)> = Vec::new();
    for c in &results.cells {
        let g = (c.key.dataset.as_str(), c.key.recommender.as_str(), c.key.defense.as_str());
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    for (dataset, rec, defense) in groups {
        let cells: Vec<&CellResult> = results
            .cells
            .iter()
            .filter(|c| (c.key.dataset.as_str(), c.key.recommender.as_str(), c.key.defense.as_str()) == (dataset, rec, defense))
            .collect();
        let mut rows: Vec<(String, usize)> = Vec::new();
        for c in &cells {
            for m in c.metrics().unwrap_or_default() {
                let row = (m.metric.clone(), m.k);
                if !rows.contains(&row) {
                    rows.push(row);
                }
            }
        }
        let _ = writeln!(out, "## {dataset} / {rec} / {defense}\n");
        let _ = write!(out, "| metric | K |");
        for c in &cells {
            let _ = write!(out, " {} |", c.key.attack);
        }
        let _ = write!(out, "\n|---|---|");
        for _ in &cells {
            out.push_str("---|");
        }
        out.push('\n');
        for (metric, k) in rows {
            let values: Vec<Option<f64>> = cells.iter().map(|c| c.value(&metric, k)).collect();
            let best = values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = write!(out, "| {metric} | {k} |");
            for (c, v) in cells.iter().zip(&values) {
                let text = match (v, &c.status) {
                    (Some(v), _) if *v == best => format!("**{}**", fmt_value(*v)),
                    (Some(v), _) => fmt_value(*v),
                    (None, CellStatus::Failed(_)) => "failed".into(),
                    (None, _) => "-".into(),
                };
                let _ = write!(out, " {text} |");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{v:.0}")
    } else {
        format!("{v:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(attack: &str, chr: f64) -> CellResult {
        CellResult {
            key: CellKey {
                dataset: "synthetic".into(),
                recommender: "vbpr".into(),
                defense: "traditional".into(),
                attack: attack.into(),
            },
            status: CellStatus::Completed(
                ["chr", "ncdcg", "recall", "ndcg", "icov", "gini", "efd", "sr", "fl"]
                    .iter()
                    .map(|m| MetricValue {
                        metric: m.to_string(),
                        k: 20,
                        value: if *m == "chr" { chr } else { 0.5 },
                    })
                    .collect(),
            ),
        }
    }

    #[test]
    fn single_cell_gives_one_table() {
        let results = ExperimentResults {
            plan: None,
            cells: vec![cell("pgd_e8", 0.1)],
        };
        let md = markdown(&results);
        assert_eq!(md.matches("\n## ").count(), 1);
        let metric_rows = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| metric")).count();
        assert!(metric_rows >= 9);
    }

    #[test]
    fn row_maximum_is_bold() {
        let results = ExperimentResults {
            plan: None,
            cells: vec![cell(CLEAN, 0.1), cell("pgd_e8", 0.3)],
        };
        let md = markdown(&results);
        assert!(md.contains("| chr | 20 | 0.1000 | **0.3000** |"));
    }

    #[test]
    fn csv_rows_and_determinism() {
        let mut failed = cell("fgsm_e4", 0.0);
        failed.status = CellStatus::Failed("boom".into());
        let results = ExperimentResults {
            plan: None,
            cells: vec![cell(CLEAN, 0.1), cell("pgd_e8", 0.3), failed],
        };
        let dir = tempfile::tempdir().unwrap();
        let a = emit_report(&results, &dir.path().join("a")).unwrap();
        let b = emit_report(&results, &dir.path().join("b")).unwrap();
        let text = std::fs::read_to_string(&a.csv).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 9);
        assert!(text.starts_with("dataset,recommender,defense,attack,metric,k,value\n"));
        for (x, y) in [(&a.csv, &b.csv), (&a.cells, &b.cells), (&a.markdown, &b.markdown)] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        assert!(std::fs::read_to_string(&a.cells).unwrap().contains("failed,boom"));
        // rows of two cells differing only in attack share the other key fields
        let rows: Vec<Vec<String>> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(String::from).collect())
            .collect();
        assert!(rows.iter().all(|r| r[..3] == rows[0][..3]));
    }

    #[test]
    fn nothing_to_report() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&ExperimentResults::default(), dir.path()).is_err());
    }
}
