use std::collections::BTreeMap;
use std::path::Path;

use twinmig::harness::checks::{harness_failures, tiny_config};
use twinmig::harness::experiment::{run_algorithm, run_sweeps};
use twinmig::harness::metrics::{read_dir_records, read_sweep};
use twinmig::harness::summary::{write_summary, Aggregate};
use twinmig::harness::{emit_plots, run_experiment, summarize, RunRequest, RunSummary};
use twinmig::learner::{Algorithm, NullSink};

fn request(dir: &Path, algorithms: Vec<Algorithm>, seeds: Vec<u64>, episodes: usize) -> RunRequest {
    let mut cfg = tiny_config();
    cfg.learner.episodes = episodes;
    RunRequest { cfg, algorithms, seeds, out_dir: dir.to_path_buf(), run_id: "t".into(), save_checkpoints: false }
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

#[test]
fn one_seed_two_episodes_gives_two_episode_rows_per_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let req = request(tmp.path(), vec![Algorithm::Maddpg], vec![5], 2);
    run_experiment(&req).unwrap();
    let recs = read_dir_records(&tmp.path().join("t")).unwrap();
    let mut per_metric: BTreeMap<&str, usize> = BTreeMap::new();
    for r in recs.iter().filter(|r| r.step.is_none()) {
        *per_metric.entry(&r.metric).or_default() += 1;
    }
    assert!(per_metric.contains_key("reward"));
    // Losses exist only for episodes in which an update ran.
    for (m, n) in &per_metric {
        if m.ends_with("loss") {
            assert!(*n <= 2, "{m}");
        } else {
            assert_eq!(*n, 2, "{m}");
        }
    }
}

#[test]
fn seeds_draw_disjoint_episode_streams() {
    let cfg = tiny_config();
    let (a, _) = run_algorithm(&cfg, Algorithm::Madqn, 1, &mut NullSink).unwrap();
    let (b, _) = run_algorithm(&cfg, Algorithm::Madqn, 2, &mut NullSink).unwrap();
    for x in &a {
        assert!(b.iter().all(|y| y.seed != x.seed));
    }
}

#[test]
fn reruns_are_byte_identical_and_constraints_hold() {
    let fails = harness_failures(&tiny_config()).unwrap();
    assert!(fails.is_empty(), "{fails:?}");
}

#[test]
fn single_algorithm_summary_has_no_delta_columns() {
    let tmp = tempfile::tempdir().unwrap();
    run_experiment(&request(tmp.path(), vec![Algorithm::Ga], vec![1], 2)).unwrap();
    let (header, _) = csv_rows(&tmp.path().join("t/summary.csv"));
    assert_eq!(header, ["algorithm", "metric", "mean", "std", "seeds"]);
}

#[test]
fn identical_series_give_zero_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let agg = Aggregate::of(&[2.0, 4.0]);
    let s = |name: &str| RunSummary {
        algorithm: name.into(),
        metrics: [("reward".to_string(), agg)].into(),
        per_seed: BTreeMap::new(),
    };
    let path = tmp.path().join("s.csv");
    write_summary(&path, &[s("a"), s("b")]).unwrap();
    let (header, rows) = csv_rows(&path);
    assert_eq!(header[5..], ["pct_vs_a", "pct_vs_b"]);
    assert_eq!(rows[0][5], "");
    assert_eq!(rows[0][6].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[1][5].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn deltas_match_an_independent_recomputation() {
    let tmp = tempfile::tempdir().unwrap();
    let req = request(tmp.path(), vec![Algorithm::Maddpg, Algorithm::Madqn], vec![1, 2], 4);
    run_experiment(&req).unwrap();
    let dir = tmp.path().join("t");

    // Recompute from raw rows: per-seed mean of the last two episodes, then across seeds.
    let recs = read_dir_records(&dir).unwrap();
    let mean_of = |algo: &str, metric: &str| {
        let mut by_seed: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
        for r in recs.iter().filter(|r| r.step.is_none() && r.algorithm == algo && r.metric == metric) {
            by_seed.entry(r.seed).or_default().push((r.episode, r.value));
        }
        let per: Vec<f64> = by_seed
            .values_mut()
            .map(|v| {
                v.sort_by_key(|x| x.0);
                v[v.len() - 2..].iter().map(|x| x.1).sum::<f64>() / 2.0
            })
            .collect();
        per.iter().sum::<f64>() / per.len() as f64
    };

    let (header, rows) = csv_rows(&dir.join("summary.csv"));
    let col = header.iter().position(|h| h == "pct_vs_madqn").unwrap();
    let mut checked = 0;
    for row in rows.iter().filter(|r| r[0] == "maddpg") {
        let (a, b) = (mean_of("maddpg", &row[1]), mean_of("madqn", &row[1]));
        assert!((row[2].parse::<f64>().unwrap() - a).abs() <= 1e-9 * (1.0 + a.abs()), "{}", row[1]);
        if b != 0.0 && !row[col].is_empty() {
            let want = 100.0 * (a - b) / b.abs();
            let got: f64 = row[col].parse().unwrap();
            assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{}: {got} vs {want}", row[1]);
            checked += 1;
        }
    }
    assert!(checked > 5);

    // Summarizing again reads the same rows and writes the same file.
    let before = std::fs::read(dir.join("summary.csv")).unwrap();
    summarize(&dir).unwrap();
    assert_eq!(before, std::fs::read(dir.join("summary.csv")).unwrap());
}

#[test]
fn plots_cover_every_algorithm_episode_pair_and_warn_on_gaps() {
    let tmp = tempfile::tempdir().unwrap();
    let req = request(tmp.path(), vec![Algorithm::Maddpg, Algorithm::Madqn], vec![1], 3);
    run_experiment(&req).unwrap();
    let dir = tmp.path().join("t");
    let report = emit_plots(&dir, &dir.join("plots")).unwrap();
    let (_, rows) = csv_rows(&dir.join("plots/reward_vs_episode.csv"));
    let mut pairs: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    pairs.dedup();
    assert_eq!(pairs.len(), 6);
    assert!(report.warnings.iter().any(|w| w.contains("`ga`")));
    assert!(report.warnings.iter().any(|w| w.contains("sweep")));

    // Drop ux from one algorithm's file: that gap is reported and the
    // remaining algorithm still gets its table.
    let path = dir.join("madqn.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.contains(",ux,")).collect();
    std::fs::write(&path, kept.join("\n") + "\n").unwrap();
    let report = emit_plots(&dir, &dir.join("plots2")).unwrap();
    assert!(report.warnings.iter().any(|w| w.contains("`ux` missing for `madqn`")), "{:?}", report.warnings);
    let (_, rows) = csv_rows(&dir.join("plots2/ux_vs_episode.csv"));
    assert!(rows.iter().all(|r| r[0] == "maddpg"));

    // With ux gone everywhere, no ux table is written at all.
    let path = dir.join("maddpg.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.contains(",ux,")).collect();
    std::fs::write(&path, kept.join("\n") + "\n").unwrap();
    let report = emit_plots(&dir, &dir.join("plots3")).unwrap();
    assert!(!dir.join("plots3/ux_vs_episode.csv").exists());
    assert!(report.files.iter().all(|f| !f.ends_with("ux_vs_episode.csv")));
}

#[test]
fn sweep_tables_are_grouped_means_of_the_raw_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let files = run_sweeps(&cfg, &[1, 2], tmp.path(), "s").unwrap();
    assert_eq!(files.len(), 3);
    let report = emit_plots(tmp.path(), &tmp.path().join("plots")).unwrap();
    assert!(report.warnings.iter().any(|w| w.contains("no metric records")));
    for f in files {
        let axis = f.file_stem().unwrap().to_str().unwrap().trim_start_matches("sweep_").to_string();
        let rows = read_sweep(&f).unwrap();
        for metric in ["energy", "latency"] {
            let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in rows.iter().filter(|r| r.metric == metric) {
                groups.entry(r.axis_value.to_string()).or_default().push(r.value);
            }
            let (_, table) = csv_rows(&tmp.path().join(format!("plots/{metric}_vs_{axis}.csv")));
            assert_eq!(table.len(), groups.len());
            for row in table {
                let vals = &groups[&row[0]];
                let want = vals.iter().sum::<f64>() / vals.len() as f64;
                let got: f64 = row[1].parse().unwrap();
                assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "{axis}/{metric}");
                assert_eq!(row[3], vals.len().to_string());
            }
        }
    }
}
