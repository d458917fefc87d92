use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::recourse::RecourseTrace;

/// Ordinary least squares `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; 1 when `y` is constant and fitted
    /// exactly, 0 when `x` is constant.
    pub r2: f64,
    pub n: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Some(LinearFit {
            slope: 0.0,
            intercept: my,
            r2: 0.0,
            n,
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept,
        r2,
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub anomaly: usize,
    #[serde(flatten)]
    pub trace: RecourseTrace,
    pub total_secs: f64,
}

impl TimingRow {
    /// `|d_mod|` times the neighbour queries issued.
    pub fn work(&self) -> f64 {
        (self.trace.d_mod_size * self.trace.neighbor_queries) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRun {
    pub variant: String,
    pub repeats: usize,
    /// Wall-clock of the whole timed loop, repeats included.
    pub wall_secs: f64,
    pub rows: Vec<TimingRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub count: usize,
    pub mean_secs: f64,
}

/// Setup versus execution, and execution time against work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub variant: String,
    pub setup_secs: BTreeMap<String, f64>,
    pub setup_total_secs: f64,
    pub anomalies: usize,
    pub execution_total_secs: f64,
    pub execution_mean_secs: f64,
    pub explain_mean_secs: f64,
    pub search_mean_secs: f64,
    pub score_mean_secs: f64,
    /// Execution time against `|d_mod|·queries`.
    pub fit: Option<LinearFit>,
    /// Mean execution time keyed by `|d_mod|`.
    pub by_d_mod: BTreeMap<usize, Bucket>,
    /// Mean execution time keyed by `|d_mod|·queries`.
    pub by_work: BTreeMap<usize, Bucket>,
}

fn buckets(rows: &[TimingRow], key: impl Fn(&TimingRow) -> usize) -> BTreeMap<usize, Bucket> {
    let mut acc: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(key(r)).or_default();
        e.0 += 1;
        e.1 += r.total_secs;
    }
    acc.into_iter()
        .map(|(k, (c, s))| {
            (
                k,
                Bucket {
                    count: c,
                    mean_secs: s / c as f64,
                },
            )
        })
        .collect()
}

pub fn summarize(run: &TimingRun, setup: BTreeMap<String, f64>) -> TimingSummary {
    let n = run.rows.len().max(1) as f64;
    let mean = |f: fn(&RecourseTrace) -> f64| run.rows.iter().map(|r| f(&r.trace)).sum::<f64>() / n;
    let xs: Vec<f64> = run.rows.iter().map(TimingRow::work).collect();
    let ys: Vec<f64> = run.rows.iter().map(|r| r.total_secs).collect();
    let total: f64 = ys.iter().sum();
    TimingSummary {
        variant: run.variant.clone(),
        setup_total_secs: setup.values().sum(),
        setup_secs: setup,
        anomalies: run.rows.len(),
        execution_total_secs: total,
        execution_mean_secs: total / n,
        explain_mean_secs: mean(|t| t.explain_secs),
        search_mean_secs: mean(|t| t.search_secs),
        score_mean_secs: mean(|t| t.score_secs),
        fit: linear_fit(&xs, &ys),
        by_d_mod: buckets(&run.rows, |r| r.trace.d_mod_size),
        by_work: buckets(&run.rows, |r| r.work() as usize),
    }
}

pub fn render_summary(s: &TimingSummary) -> String {
    let mut out = format!("# Recourse timing ({} scorer)\n\n", s.variant);
    out.push_str(&format!(
        "Setup (training): {:.3} s\n\nExecution: {} anomalies, {:.4} s total, {:.5} s mean \
         (explain {:.5}, search {:.5}, score {:.5})\n\n",
        s.setup_total_secs,
        s.anomalies,
        s.execution_total_secs,
        s.execution_mean_secs,
        s.explain_mean_secs,
        s.search_mean_secs,
        s.score_mean_secs
    ));
    for (stage, secs) in &s.setup_secs {
        out.push_str(&format!("- {stage}: {secs:.3} s\n"));
    }
    if let Some(f) = s.fit {
        out.push_str(&format!(
            "\nLinear fit of seconds on |d_mod|·queries: slope {:.3e}, intercept {:.3e}, R² {:.3} (n = {})\n",
            f.slope, f.intercept, f.r2, f.n
        ));
    }
    out.push_str("\n| |d_mod| | anomalies | mean seconds |\n| --- | --- | --- |\n");
    for (k, b) in &s.by_d_mod {
        out.push_str(&format!("| {k} | {} | {:.5} |\n", b.count, b.mean_secs));
    }
    out.push_str("\n| |d_mod|·queries | anomalies | mean seconds |\n| --- | --- | --- |\n");
    for (k, b) in &s.by_work {
        out.push_str(&format!("| {k} | {} | {:.5} |\n", b.count, b.mean_secs));
    }
    out
}
