//! `twinmig` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 configuration, 3 runtime.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twinmig::harness::checks::{self, QueueProbe};
use twinmig::harness::experiment::{checkpoint_path, dump_world, evaluate_checkpoint, run_sweeps};
use twinmig::harness::{emit_plots, run_experiment, summarize, MetricsWriter, RunRequest, RunSummary};
use twinmig::learner::{Algorithm, NullSink};
use twinmig::scenario::{load_config, ExperimentConfig};
use twinmig::stackelberg::{self, GameSpec};
use twinmig::Error;

#[derive(Parser)]
#[command(name = "twinmig", version, about = "Twin migration experiments: train, evaluate, summarize")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed. Repeatable.
    #[arg(long)]
    seed: Vec<u64>,
    /// Algorithm to run. Repeatable; defaults to all four.
    #[arg(long)]
    algo: Vec<Algorithm>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Run directory name; defaults to the first 12 hex digits of the config hash.
    #[arg(long)]
    run_id: Option<String>,
    /// Also write task-size, resource and demand sweeps under the random policy.
    #[arg(long)]
    sweep: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run algorithms over seeds and write metrics plus a summary.
    Run(RunArgs),
    /// Like `run`, and save one checkpoint per (algorithm, seed).
    Train(RunArgs),
    /// Run a baseline (`maddpg`, `madqn` or `ga`) alone.
    Baseline {
        name: Algorithm,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Evaluate a checkpoint greedily.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        algo: Algorithm,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Metrics file for the evaluation episodes.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Write per-step node embeddings as JSON lines (actor-critic only).
        #[arg(long)]
        dump_embeddings: Option<PathBuf>,
    },
    /// Aggregate a run directory into summary.csv.
    Summarize { dir: PathBuf },
    /// Write plot-ready tables for a run directory.
    EmitPlots {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a pricing game spec (TOML or JSON) and check for profitable deviations.
    VerifyEquilibrium {
        spec: PathBuf,
        /// Deviation grid spacing; defaults to the spec's own grid step.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Write the world state of every slot as JSON lines.
    DumpWorld {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the fast verification battery; `--full` adds the learning check.
    Selftest {
        #[arg(long)]
        full: bool,
        /// Config for the learning and sweep checks.
        #[arg(long, default_value = "configs/desk.toml")]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

fn config(path: &Path) -> Result<ExperimentConfig, Error> {
    load_config(path)
}

fn request(args: RunArgs, algos: Vec<Algorithm>, save_checkpoints: bool) -> Result<(RunRequest, bool), Error> {
    let cfg = config(&args.config)?;
    let seeds = if args.seed.is_empty() { vec![cfg.seed] } else { args.seed };
    let algorithms = if algos.is_empty() { Algorithm::ALL.to_vec() } else { algos };
    let run_id = args.run_id.unwrap_or_else(|| cfg.hash()[..12].to_string());
    Ok((RunRequest { cfg, algorithms, seeds, out_dir: args.out, run_id, save_checkpoints }, args.sweep))
}

fn execute(req: RunRequest, sweep: bool) -> Result<ExitCode, Error> {
    let summaries = run_experiment(&req)?;
    let dir = req.out_dir.join(&req.run_id);
    if sweep {
        for f in run_sweeps(&req.cfg, &req.seeds, &dir, &req.run_id)? {
            println!("wrote {}", f.display());
        }
    }
    print_summaries(&summaries);
    if req.save_checkpoints {
        for a in &req.algorithms {
            for s in &req.seeds {
                println!("checkpoint {}", checkpoint_path(&dir, *a, *s).display());
            }
        }
    }
    println!("run directory {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn print_summaries(summaries: &[RunSummary]) {
    for s in summaries {
        let show = |m: &str| s.get(m).map_or("-".to_string(), |a| format!("{:.4} ± {:.4}", a.mean, a.std));
        println!(
            "{:<10} reward {}  latency {}  energy {}  cost {}",
            s.algorithm,
            show("reward"),
            show("latency"),
            show("energy"),
            show("cost")
        );
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::Run(args) => {
            let algos = args.algo.clone();
            let (req, sweep) = request(args, algos, false)?;
            execute(req, sweep)
        }
        Command::Train(args) => {
            let algos = args.algo.clone();
            let (req, sweep) = request(args, algos, true)?;
            execute(req, sweep)
        }
        Command::Baseline { name, args } => {
            if name == Algorithm::MoMaddpg {
                eprintln!("error: `mo-maddpg` is the method under study, not a baseline");
                return Ok(ExitCode::from(1));
            }
            let (req, sweep) = request(args, vec![name], false)?;
            execute(req, sweep)
        }
        Command::Eval { config: cfg_path, algo, checkpoint, episodes, metrics, dump_embeddings } => {
            let cfg = config(&cfg_path)?;
            if dump_embeddings.is_some() && !matches!(algo, Algorithm::MoMaddpg | Algorithm::Maddpg) {
                eprintln!("error: --dump-embeddings needs an actor-critic checkpoint");
                return Ok(ExitCode::from(1));
            }
            let mut emb = dump_embeddings.as_ref().map(|p| File::create(p).map(BufWriter::new)).transpose()?;
            let emb_ref = emb.as_mut().map(|w| w as &mut dyn Write);
            let stats = match metrics {
                Some(p) => {
                    let mut w = MetricsWriter::create(&p, "eval", algo.name(), cfg.harness.step_metrics)?;
                    let s = evaluate_checkpoint(&cfg, algo, &checkpoint, episodes, &mut w, emb_ref)?;
                    w.finish()?;
                    s
                }
                None => evaluate_checkpoint(&cfg, algo, &checkpoint, episodes, &mut NullSink, emb_ref)?,
            };
            if let Some(mut w) = emb {
                w.flush()?;
            }
            let n = stats.len().max(1) as f64;
            let mean = |f: fn(&twinmig::learner::EpisodeStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
            println!(
                "{} over {} episodes: reward {:.4}  latency {:.4}  energy {:.4}  cost {:.4}  ux {:.4}",
                algo,
                stats.len(),
                mean(|s| s.reward),
                mean(|s| s.latency),
                mean(|s| s.energy),
                mean(|s| s.cost),
                mean(|s| s.ux)
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize { dir } => {
            let (summaries, path) = summarize(&dir)?;
            print_summaries(&summaries);
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::EmitPlots { dir, out } => {
            let out = out.unwrap_or_else(|| dir.join("plots"));
            let report = emit_plots(&dir, &out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} tables to {}", report.files.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyEquilibrium { spec, step } => {
            let spec = match GameSpec::from_path(&spec) {
                Ok(s) => s,
                Err(e @ Error::InfeasibleGame(_)) | Err(e @ Error::Json(_)) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(2));
                }
                Err(e) => return Err(e),
            };
            let o = stackelberg::backward_induction_rationed(&spec)?;
            let step = step.unwrap_or((spec.price_hi - spec.price_lo) / (spec.grid_points - 1) as f64);
            let r = stackelberg::verify_se(&o, &spec, step);
            println!("edge prices {:?}", o.edge_price);
            println!("cloud prices {:?}", o.cloud_price);
            println!("system utility {:.6}", o.system_utility);
            println!(
                "worst deviation gain {:.3e}{}",
                r.worst_gain,
                r.worst_player.map_or(String::new(), |p| format!(" ({p})"))
            );
            println!("{}", if r.is_se { "equilibrium: yes" } else { "equilibrium: no" });
            Ok(if r.is_se { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Command::DumpWorld { config: cfg_path, seed, steps, out } => {
            let cfg = config(&cfg_path)?;
            let seed = seed.unwrap_or(cfg.seed);
            match out {
                Some(p) => {
                    let mut w = BufWriter::new(File::create(&p)?);
                    dump_world(&cfg, seed, steps, &mut w)?;
                    w.flush()?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut w = BufWriter::new(stdout.lock());
                    dump_world(&cfg, seed, steps, &mut w)?;
                    w.flush()?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { full, config: cfg_path } => {
            let mut verdicts = vec![
                checks::criterion_formulas(&QueueProbe::default()),
                checks::criterion_gcn(),
                checks::criterion_game(),
                checks::criterion_learner(),
                checks::criterion_harness(),
            ];
            let cfg = config(&cfg_path)?;
            if full {
                verdicts.push(checks::criterion_learning(&cfg, &[1, 2, 3]));
            } else {
                println!("SKIP [6] directional learning: pass --full (about 15 minutes)");
            }
            verdicts.push(checks::criterion_sweep(&cfg));
            verdicts.sort_by_key(|v| v.id);
            for v in &verdicts {
                println!("{}", v.line());
            }
            let failed = verdicts.iter().filter(|v| !v.pass).count();
            println!("{}/{} passed", verdicts.len() - failed, verdicts.len());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
    }
}
