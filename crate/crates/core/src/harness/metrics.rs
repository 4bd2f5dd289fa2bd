//! Delimited metric files: one row per (run, algorithm, seed, episode, step, metric).

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::StepMetrics;
use crate::error::{Error, Result};
use crate::learner::ga::GenerationStats;
use crate::learner::{EpisodeStats, Sink};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub algorithm: String,
    pub seed: u64,
    pub episode: usize,
    pub step: Option<usize>,
    pub metric: String,
    pub value: f64,
}

/// Per-step series written when step logging is on.
pub const STEP_METRICS: [&str; 11] =
    ["reward", "r_ux", "r_util", "r_lat", "r_en", "r_cost", "latency", "energy", "cost", "ux", "utility"];

/// Appends records for one (run, algorithm) file. Seeds are switched with
/// [`MetricsWriter::set_seed`].
pub struct MetricsWriter {
    out: csv::Writer<BufWriter<File>>,
    run_id: String,
    algorithm: String,
    seed: u64,
    step_metrics: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path, run_id: &str, algorithm: &str, step_metrics: bool) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let out = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        Ok(MetricsWriter { out, run_id: run_id.to_string(), algorithm: algorithm.to_string(), seed: 0, step_metrics })
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn write(&mut self, episode: usize, step: Option<usize>, metric: &str, value: f64) -> Result<()> {
        self.out.serialize(MetricsRecord {
            run_id: self.run_id.clone(),
            algorithm: self.algorithm.clone(),
            seed: self.seed,
            episode,
            step,
            metric: metric.to_string(),
            value,
        })?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

impl Sink for MetricsWriter {
    fn step(&mut self, episode: usize, m: &StepMetrics) -> Result<()> {
        if !self.step_metrics {
            return Ok(());
        }
        let r = m.reward;
        let values = [
            m.scalar,
            r.r_ux,
            r.r_util,
            r.r_lat,
            r.r_en,
            r.r_cost,
            m.latency_mean,
            m.energy_mean,
            m.cost_mean,
            m.ux_mean,
            m.utility,
        ];
        for (name, v) in STEP_METRICS.iter().zip(values) {
            self.write(episode, Some(m.step), name, v)?;
        }
        Ok(())
    }

    fn episode(&mut self, s: &EpisodeStats) -> Result<()> {
        for (name, v) in s.named_values() {
            self.write(s.episode, None, name, v)?;
        }
        Ok(())
    }

    fn generation(&mut self, g: &GenerationStats) -> Result<()> {
        self.write(g.generation, None, "ga_best_fitness", g.best)?;
        self.write(g.generation, None, "ga_mean_fitness", g.mean)
    }
}

pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for r in rdr.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

/// Metric files of a run directory, sorted by name.
pub fn metric_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| !n.starts_with("sweep_") && n != "summary.csv")
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_dir_records(dir: &Path) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for f in metric_files(dir)? {
        out.extend(read_records(&f)?);
    }
    if out.is_empty() {
        return Err(Error::Metrics(format!("no metric records under {}", dir.display())));
    }
    Ok(out)
}

/// One sweep observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub run_id: String,
    pub axis: String,
    pub axis_value: f64,
    pub policy: String,
    pub seed: u64,
    pub episode: usize,
    pub metric: String,
    pub value: f64,
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for r in rdr.deserialize() {
        out.push(r?);
    }
    Ok(out)
}
