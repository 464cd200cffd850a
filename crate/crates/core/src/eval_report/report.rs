use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::diversity::DiversityBlock;
use super::evaluate::EvalMode;
use crate::error::{Error, Result};

pub const REPORT_FORMAT: &str = "moedm-report-v1";

/// One method evaluated in one mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub mode: EvalMode,
    pub seed: u64,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub d: usize,
    pub m: usize,
    pub histogram_counts: Vec<usize>,
    pub histogram: Vec<f64>,
    pub kl_to_uniform: f64,
    pub diversity: DiversityBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub config_hash: String,
    pub revision: String,
    pub seed: u64,
    /// Reference values of the tabular abstraction, when known.
    pub optimum: Option<f64>,
    pub greedy: Option<f64>,
    pub rows: Vec<MethodRow>,
}

impl Report {
    /// Rows must agree on latent size and expert count.
    pub fn check_consistent(&self) -> Result<()> {
        if let Some(first) = self.rows.first() {
            for r in &self.rows {
                if r.d != first.d || r.m != first.m {
                    return Err(Error::ConfigMismatch {
                        path: r.method.clone().into(),
                        expected: format!("d={}, m={}", first.d, first.m),
                        found: format!("d={}, m={}", r.d, r.m),
                    });
                }
            }
        }
        Ok(())
    }

    fn header(&self) -> String {
        format!("# config_hash={} revision={} seed={}\n", self.config_hash, self.revision, self.seed)
    }

    /// Long form: one line per method and mode.
    pub fn rows_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("method,mode,n,mean,stderr,kl_to_uniform,diversity,gram1,gram2,gram3,perplexity\n");
        for r in &self.rows {
            let dv = &r.diversity;
            writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.method,
                r.mode.name(),
                r.n,
                r.mean,
                r.stderr,
                r.kl_to_uniform,
                dv.diversity,
                dv.gram1,
                dv.gram2,
                dv.gram3,
                dv.perplexity
            )
            .expect("string write");
        }
        s
    }

    /// Table layout: one line per method with mean and stderr for each
    /// mode, plus a best-of line taking each column's maximum.
    pub fn table_csv(&self) -> String {
        let mut methods: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let cell = |m: &str, mode: EvalMode| self.rows.iter().find(|r| r.method == m && r.mode == mode);
        let mut s = self.header();
        s.push_str("method,mf_mean,mf_stderr,mb_mean,mb_stderr\n");
        let fmt = |r: Option<&MethodRow>| match r {
            Some(r) => format!("{:.6},{:.6}", r.mean, r.stderr),
            None => ",".to_string(),
        };
        let mut best = [f64::NEG_INFINITY; 2];
        for m in &methods {
            let mf = cell(m, EvalMode::ModelFree);
            let mb = cell(m, EvalMode::ModelBased);
            for (k, r) in [mf, mb].iter().enumerate() {
                if let Some(r) = r {
                    best[k] = best[k].max(r.mean);
                }
            }
            writeln!(s, "{m},{},{}", fmt(mf), fmt(mb)).expect("string write");
        }
        let b = |x: f64| if x.is_finite() { format!("{x:.6},") } else { ",".into() };
        writeln!(s, "best,{}{}", b(best[0]), b(best[1]).trim_end_matches(',')).expect("string write");
        s
    }
}

/// Write `report.json`, `results.csv` and `table.csv` into `dir`.
pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    report.check_consistent()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, body: String| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    put("report.json", serde_json::to_string_pretty(report)?)?;
    put("results.csv", report.rows_csv())?;
    put("table.csv", report.table_csv())
}

/// Read the rows of a previously written `report.json`.
pub fn read_rows(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let r: Report = serde_json::from_str(&text)?;
    if r.format != REPORT_FORMAT {
        return Err(Error::Format(format!("expected {REPORT_FORMAT}, found {}", r.format)));
    }
    Ok(r)
}
