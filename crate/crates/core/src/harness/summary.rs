//! Final-window aggregates per algorithm, and pairwise percentage deltas.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::RunMeta;
use super::metrics::{read_dir_records, MetricsRecord};
use crate::error::Result;

/// Window used when a directory carries no `meta.json`.
pub const DEFAULT_FINAL_WINDOW: usize = 50;

/// Mean and spread across seeds of per-seed final-window means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

impl Aggregate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
        let std =
            if n > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Aggregate { mean, std, seeds: n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub metrics: BTreeMap<String, Aggregate>,
    /// Per-seed final-window means, keyed by metric then seed.
    pub per_seed: BTreeMap<String, BTreeMap<u64, f64>>,
}

impl RunSummary {
    pub fn get(&self, metric: &str) -> Option<Aggregate> {
        self.metrics.get(metric).copied()
    }
}

/// `(a − b) / |b|` in percent; `None` when `b` is zero.
pub fn pct_delta(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| 100.0 * (a - b) / b.abs())
}

/// Episode-level aggregates over each seed's last `window` episodes.
pub fn summarize_records(records: &[MetricsRecord], window: usize) -> Vec<RunSummary> {
    // (algorithm, seed, metric) -> episode -> value
    let mut series: BTreeMap<(&str, u64, &str), BTreeMap<usize, f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.step.is_none() && !r.metric.starts_with("ga_")) {
        series.entry((&r.algorithm, r.seed, &r.metric)).or_default().insert(r.episode, r.value);
    }
    let mut by_algo: BTreeMap<&str, BTreeMap<String, BTreeMap<u64, f64>>> = BTreeMap::new();
    for ((algo, seed, metric), eps) in &series {
        let last = *eps.keys().next_back().expect("nonempty series");
        let from = (last + 1).saturating_sub(window.max(1));
        let tail: Vec<f64> = eps.range(from..).map(|(_, v)| *v).collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        by_algo.entry(algo).or_default().entry(metric.to_string()).or_default().insert(*seed, mean);
    }
    by_algo
        .into_iter()
        .map(|(algo, per_seed)| RunSummary {
            algorithm: algo.to_string(),
            metrics: per_seed
                .iter()
                .map(|(m, s)| (m.clone(), Aggregate::of(&s.values().copied().collect::<Vec<_>>())))
                .collect(),
            per_seed,
        })
        .collect()
}

/// Summarize a run directory and write `summary.csv` next to the metric files.
pub fn summarize(dir: &Path) -> Result<(Vec<RunSummary>, PathBuf)> {
    let window = RunMeta::load(dir).map(|m| m.final_window).unwrap_or(DEFAULT_FINAL_WINDOW);
    let records = read_dir_records(dir)?;
    let summaries = summarize_records(&records, window);
    let path = dir.join("summary.csv");
    write_summary(&path, &summaries)?;
    Ok((summaries, path))
}

/// One row per (algorithm, metric). With two or more algorithms each row
/// gains a `pct_vs_<other>` column per other algorithm.
pub fn write_summary(path: &Path, summaries: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["algorithm".to_string(), "metric".into(), "mean".into(), "std".into(), "seeds".into()];
    let pairwise = summaries.len() > 1;
    if pairwise {
        header.extend(summaries.iter().map(|s| format!("pct_vs_{}", s.algorithm)));
    }
    w.write_record(&header)?;
    let metrics: BTreeSet<&String> = summaries.iter().flat_map(|s| s.metrics.keys()).collect();
    for s in summaries {
        for m in &metrics {
            let Some(a) = s.get(m) else { continue };
            let mut row =
                vec![s.algorithm.clone(), m.to_string(), a.mean.to_string(), a.std.to_string(), a.seeds.to_string()];
            if pairwise {
                for other in summaries {
                    let cell = match other.get(m) {
                        Some(b) if other.algorithm != s.algorithm => pct_delta(a.mean, b.mean).map(|d| d.to_string()),
                        _ => None,
                    };
                    row.push(cell.unwrap_or_default());
                }
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(algo: &str, seed: u64, episode: usize, value: f64) -> MetricsRecord {
        MetricsRecord {
            run_id: "r".into(),
            algorithm: algo.into(),
            seed,
            episode,
            step: None,
            metric: "reward".into(),
            value,
        }
    }

    #[test]
    fn window_takes_the_tail_of_each_seed() {
        let rs: Vec<_> =
            (0..10).map(|e| rec("a", 1, e, e as f64)).chain((0..10).map(|e| rec("a", 2, e, 1.0))).collect();
        let s = summarize_records(&rs, 4);
        assert_eq!(s[0].per_seed["reward"][&1], 7.5);
        let agg = s[0].get("reward").unwrap();
        assert_eq!(agg.mean, (7.5 + 1.0) / 2.0);
        assert_eq!(agg.seeds, 2);
    }

    #[test]
    fn delta_is_relative_to_the_column_algorithm() {
        assert_eq!(pct_delta(12.0, 10.0), Some(20.0));
        assert_eq!(pct_delta(-5.0, -10.0), Some(50.0));
        assert_eq!(pct_delta(1.0, 0.0), None);
    }
}
