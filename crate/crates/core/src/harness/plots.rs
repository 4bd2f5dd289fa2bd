//! Tidy plot-ready tables, one file per figure axis pair.
//!
//! Nothing is rendered. Each file is long-format and small enough to feed
//! straight into any plotting tool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::experiment::SweepAxis;
use super::metrics::{read_dir_records, read_sweep};
use super::summary::Aggregate;
use crate::error::{Error, Result};
use crate::learner::Algorithm;

/// Per-episode series drawn against the episode index.
pub const EPISODE_FIGURES: [&str; 10] =
    ["reward", "loss", "latency", "energy", "energy_vehicle", "energy_edge", "energy_cloud", "cost", "ux", "msr"];

/// Series drawn against each sweep axis.
pub const SWEEP_FIGURES: [&str; 5] = ["energy", "latency", "cost", "ux", "utility"];

#[derive(Debug, Default, Clone)]
pub struct PlotReport {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Write every table derivable from `dir` into `out`.
pub fn emit_plots(dir: &Path, out: &Path) -> Result<PlotReport> {
    std::fs::create_dir_all(out)?;
    let mut report = PlotReport::default();
    let has_sweeps = SweepAxis::ALL.iter().any(|a| dir.join(format!("sweep_{}.csv", a.name())).exists());
    let records = match read_dir_records(dir) {
        Ok(r) => r,
        // A sweep-only directory still has tables to give.
        Err(Error::Metrics(m)) if has_sweeps => {
            report.warnings.push(m);
            Vec::new()
        }
        Err(e) => return Err(e),
    };

    // metric -> algorithm -> episode -> per-seed values
    let mut table: BTreeMap<&str, BTreeMap<&str, BTreeMap<usize, Vec<f64>>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.step.is_none()) {
        table
            .entry(&r.metric)
            .or_default()
            .entry(&r.algorithm)
            .or_default()
            .entry(r.episode)
            .or_default()
            .push(r.value);
    }
    let present: Vec<&str> = {
        let mut a: Vec<&str> = records.iter().map(|r| r.algorithm.as_str()).collect();
        a.sort_unstable();
        a.dedup();
        a
    };
    for algo in Algorithm::ALL {
        if !present.contains(&algo.name()) {
            report.warnings.push(format!("no series for algorithm `{}`", algo.name()));
        }
    }

    for metric in EPISODE_FIGURES {
        let series = table.get(metric);
        for algo in &present {
            if series.is_none_or(|s| !s.contains_key(algo)) {
                report.warnings.push(format!("`{metric}` missing for `{algo}`"));
            }
        }
        let Some(series) = series else { continue };
        let path = out.join(format!("{metric}_vs_episode.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["algorithm", "episode", "mean", "std", "seeds"])?;
        for (algo, eps) in series {
            for (e, vals) in eps {
                let a = Aggregate::of(vals);
                w.write_record([
                    algo.to_string(),
                    e.to_string(),
                    a.mean.to_string(),
                    a.std.to_string(),
                    a.seeds.to_string(),
                ])?;
            }
        }
        w.flush()?;
        report.files.push(path);
    }

    if let Some(fit) = table.get("ga_best_fitness") {
        let path = out.join("ga_fitness_vs_generation.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["generation", "mean", "std", "seeds"])?;
        for (g, vals) in fit.values().flatten() {
            let a = Aggregate::of(vals);
            w.write_record([g.to_string(), a.mean.to_string(), a.std.to_string(), a.seeds.to_string()])?;
        }
        w.flush()?;
        report.files.push(path);
    }

    for axis in SweepAxis::ALL {
        let src = dir.join(format!("sweep_{}.csv", axis.name()));
        if !src.exists() {
            report.warnings.push(format!("no sweep over `{}`", axis.name()));
            continue;
        }
        let rows = read_sweep(&src)?;
        for metric in SWEEP_FIGURES {
            let mut points: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
            for r in rows.iter().filter(|r| r.metric == metric) {
                points.entry(r.axis_value.to_bits()).or_insert((r.axis_value, Vec::new())).1.push(r.value);
            }
            if points.is_empty() {
                report.warnings.push(format!("`{metric}` missing from sweep `{}`", axis.name()));
                continue;
            }
            let mut pts: Vec<_> = points.into_values().collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let path = out.join(format!("{metric}_vs_{}.csv", axis.name()));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record([axis.name(), "mean", "std", "n"])?;
            for (x, vals) in pts {
                let a = Aggregate::of(&vals);
                w.write_record([x.to_string(), a.mean.to_string(), a.std.to_string(), a.seeds.to_string()])?;
            }
            w.flush()?;
            report.files.push(path);
        }
    }
    Ok(report)
}
