use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    /// Run directory relative to the report root, `/`-separated.
    pub run: String,
    pub variant: String,
    pub source: String,
    pub shared: bool,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub task: String,
    pub accuracy: f64,
}

/// All runs under a directory, and their mean accuracy per (beta, alpha).
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `table[b][a]`: mean over runs with `betas[b]`, `alphas[a]`.
    pub table: Vec<Vec<Option<f64>>>,
}

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            // Stage records share the report's file name.
            if p.file_name().is_some_and(|n| n != "provenance") {
                find_reports(&p, out)?;
            }
        } else if p.file_name().is_some_and(|n| n == super::EVAL_JSON) {
            out.push(p);
        }
    }
    Ok(())
}

fn text(v: &serde_json::Value, key: &str) -> String {
    v[key].as_str().unwrap_or("").to_string()
}

fn push_sorted(xs: &mut Vec<f64>, x: f64) {
    if !xs.contains(&x) {
        xs.push(x);
        xs.sort_by(f64::total_cmp);
    }
}

impl Report {
    fn from_rows(rows: Vec<ReportRow>) -> Self {
        let mut alphas = Vec::new();
        let mut betas = Vec::new();
        for r in &rows {
            push_sorted(&mut alphas, r.alpha);
            push_sorted(&mut betas, r.beta);
        }
        let table = betas
            .iter()
            .map(|&b| {
                alphas
                    .iter()
                    .map(|&a| {
                        let hits: Vec<f64> =
                            rows.iter().filter(|r| r.alpha == a && r.beta == b).map(|r| r.accuracy).collect();
                        (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64)
                    })
                    .collect()
            })
            .collect();
        Report { rows, alphas, betas, table }
    }

    /// The (beta x alpha) table as CSV text.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("beta\\alpha");
        for a in &self.alphas {
            s.push_str(&format!(",{a}"));
        }
        s.push('\n');
        for (b, row) in self.betas.iter().zip(&self.table) {
            s.push_str(&b.to_string());
            for v in row {
                s.push(',');
                if let Some(v) = v {
                    s.push_str(&format!("{v:.4}"));
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Collects every `eval.json` under `root` into `report.csv` (one row per
/// run) and `table.csv` (mean accuracy, beta rows by alpha columns).
pub fn cmd_report(root: &Path) -> Result<Report> {
    let run = || -> Result<Report> {
        let mut paths = Vec::new();
        find_reports(root, &mut paths)?;
        if paths.is_empty() {
            return Err(Error::InvalidConfig(format!("no eval.json under {}", root.display())));
        }
        let mut rows = Vec::with_capacity(paths.len());
        for p in paths {
            let text_in = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let r: EvalReport = serde_json::from_str(&text_in)?;
            let dir = p.parent().expect("file has a parent");
            let rel = dir.strip_prefix(root).unwrap_or(dir);
            let run: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            let c = &r.config;
            rows.push(ReportRow {
                run: if run.is_empty() { ".".into() } else { run.join("/") },
                variant: text(c, "variant"),
                source: text(c, "source"),
                shared: c["shared"].as_bool().unwrap_or(false),
                alpha: c["alpha"].as_f64().unwrap_or(0.0),
                beta: c["beta"].as_f64().unwrap_or(0.0),
                m: c["M"].as_u64().unwrap_or(0) as usize,
                seed: r.seed,
                task: r.task.clone(),
                accuracy: r.accuracy,
            });
        }
        let report = Report::from_rows(rows);
        let path = root.join("report.csv");
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &report.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
        write_atomic(&path, &bytes)?;
        write_atomic(root.join("table.csv"), report.table_csv().as_bytes())?;
        Ok(report)
    };
    run().map_err(|e| e.in_stage("report"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(alpha: f64, beta: f64, acc: f64) -> ReportRow {
        ReportRow {
            run: String::new(),
            variant: "foveated".into(),
            source: "spectral".into(),
            shared: false,
            alpha,
            beta,
            m: 4,
            seed: 0,
            task: "probe".into(),
            accuracy: acc,
        }
    }

    #[test]
    fn table_averages_seeds_on_a_grid() {
        let mut rows = Vec::new();
        for &b in &[0.0, 2.0] {
            for &a in &[0.0, 0.5, 1.0] {
                rows.push(row(a, b, 0.5));
                rows.push(row(a, b, 0.7));
            }
        }
        let r = Report::from_rows(rows);
        assert_eq!((r.betas.len(), r.alphas.len()), (2, 3));
        assert!(r.table.iter().flatten().all(|v| (v.unwrap() - 0.6).abs() < 1e-12));
        assert_eq!(r.table_csv().lines().next().unwrap(), "beta\\alpha,0,0.5,1");
    }
}
