//! Seed replicates and their mean ± std summary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{LoadedConfig, Method};
use crate::error::{CliError, CliResult};
use crate::run::{run_seed, write_json, SeedResult};

pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TXT: &str = "summary.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single seed.
    pub std: f64,
    pub median: f64,
    /// Test metric per seed, in `Summary::seeds` order.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub metric: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn row(&self, method: Method) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Aggregates per-seed results. Every result must list the same methods.
pub fn summarize(loaded: &LoadedConfig, results: &[SeedResult]) -> Summary {
    let cfg = &loaded.config;
    let rows = cfg
        .methods
        .iter()
        .map(|&method| {
            let values: Vec<f64> = results
                .iter()
                .map(|r| r.get(method).expect("every run covers every method").test)
                .collect();
            let (mean, std) = mean_std(&values);
            SummaryRow {
                method,
                n: values.len(),
                mean,
                std,
                median: median(&values),
                values,
            }
        })
        .collect();
    Summary {
        name: cfg.name.clone(),
        metric: crate::run::metric_name(cfg.dataset.task()).to_string(),
        config_sha256: loaded.sha256.clone(),
        seeds: results.iter().map(|r| r.seed).collect(),
        rows,
    }
}

/// Aligned plain-text table, one method per line.
pub fn render_table(s: &Summary) -> String {
    let digits = if s.metric == "mae" { 4 } else { 2 };
    let cells: Vec<[String; 4]> = s
        .rows
        .iter()
        .map(|r| {
            [
                r.method.to_string(),
                format!("{:.*} ± {:.*}", digits, r.mean, digits, r.std),
                format!("{:.*}", digits, r.median),
                r.n.to_string(),
            ]
        })
        .collect();
    let header = ["method".to_string(), format!("{} (mean ± std)", s.metric), "median".into(), "seeds".into()];
    let width = |k: usize| {
        cells
            .iter()
            .map(|c| c[k].chars().count())
            .chain([header[k].chars().count()])
            .max()
            .unwrap_or(0)
    };
    let widths = [width(0), width(1), width(2), width(3)];
    let line = |c: &[String; 4]| {
        let mut out = String::new();
        for k in 0..4 {
            let pad = widths[k] - c[k].chars().count();
            out.push_str(&c[k]);
            if k < 3 {
                out.push_str(&" ".repeat(pad + 2));
            }
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = format!("{}\n", s.name);
    out.push_str(&line(&header));
    for c in &cells {
        out.push_str(&line(c));
    }
    out
}

/// Runs every seed (in parallel), then writes `summary.json` and
/// `summary.txt` next to the per-seed directories.
pub fn run_suite(loaded: &LoadedConfig) -> CliResult<Summary> {
    let cfg = &loaded.config;
    let results: Vec<SeedResult> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(loaded, seed, &cfg.seed_dir(seed), "suite"))
        .collect::<CliResult<Vec<_>>>()?;
    let summary = summarize(loaded, &results);
    let base = cfg.output_base();
    std::fs::create_dir_all(&base).map_err(CliError::io(&base))?;
    write_json(&base.join(SUMMARY_JSON), &summary)?;
    let txt = base.join(SUMMARY_TXT);
    std::fs::write(&txt, render_table(&summary)).map_err(CliError::io(&txt))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_uses_n_minus_one() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn table_is_aligned() {
        let row = |method, mean| SummaryRow {
            method,
            n: 2,
            mean,
            std: 0.5,
            median: mean,
            values: vec![mean - 0.5, mean + 0.5],
        };
        let s = Summary {
            name: "demo".into(),
            metric: "error_pct".into(),
            config_sha256: String::new(),
            seeds: vec![0, 1],
            rows: vec![row(Method::Drain, 3.0), row(Method::IncFinetune, 16.75)],
        };
        let t = render_table(&s);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "demo");
        let col = lines[1].find("error_pct").unwrap();
        assert_eq!(lines[2].find("3.00"), Some(col));
        assert_eq!(lines[3].find("16.75"), Some(col));
    }
}
