use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bpfree::datasets::{verify_dataset, DatasetKind};
use bpfree::harness::{
    compare_report_files, load_config, random_search_tune, default_data_dir, render_report, run_dir, run_experiment,
    write_report_csv, DatasetTrainer, ExperimentConfig,
};
use bpfree::profiling::estimate_flops;

#[derive(Parser)]
#[command(name = "bpfree", version, about = "Train and benchmark BP, FF, CaFo and MF networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config and write results.
    Run(RunArgs),
    /// Print per-sample FLOPs of a config's model.
    Flops {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare an alternative results CSV against a baseline.
    Report {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        alt: PathBuf,
        /// Also write the deltas as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random hyperparameter search.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        search_seed: u64,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Write the best resolved config here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output root directory (default: `results`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data root directory.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DataCommand {
    /// Check file presence, sizes and checksums.
    Verify {
        #[arg(long)]
        dataset: DatasetKind,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    load_config(path).with_context(|| format!("loading {}", path.display()))
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = load(&args.config)?;
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds;
    }
    if let Some(d) = args.data {
        cfg.data_dir = Some(d);
    }
    if let Some(o) = args.out {
        cfg.output_dir = Some(o);
    }
    cfg.output_dir.get_or_insert_with(|| PathBuf::from("results"));
    let runs = run_experiment(&cfg)?;
    for r in &runs {
        println!(
            "{} {} {} seed {}: test_acc {:.2}% epochs {} time {:.1}s",
            r.algo, r.dataset, r.arch, r.seed, r.test_acc, r.effective_epochs, r.wall_time_s
        );
    }
    if let Some(d) = run_dir(&cfg) {
        println!("results written to {}", d.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(args) => run(args),
        Command::Flops { config } => {
            let cfg = load(&config)?;
            let f = estimate_flops(cfg.algorithm, cfg.architecture, &cfg.dataset.meta())?;
            for s in &f.stages {
                println!("{:<24} {:>14} MACs {:>10.6} GFLOPs", s.name, s.macs, s.gflops);
            }
            println!("F_fwd       {:.6} GFLOPs", f.f_fwd_gflops);
            println!("F_bp_update {:.6} GFLOPs", f.f_bp_update_gflops);
            Ok(())
        }
        Command::Report { baseline, alt, out } => {
            let rows = compare_report_files(&baseline, &alt)?;
            print!("{}", render_report(&rows));
            if let Some(o) = out {
                write_report_csv(&o, &rows)?;
            }
            Ok(())
        }
        Command::Tune {
            config,
            trials,
            search_seed,
            data,
            out,
        } => {
            let mut cfg = load(&config)?;
            if let Some(d) = data {
                cfg.data_dir = Some(d);
            }
            let res = random_search_tune(&cfg, None, trials, search_seed, &mut DatasetTrainer::new())?;
            for t in &res.trials {
                println!("trial {:>3}: val_acc {:.3} {:?}", t.index, t.val_acc, t.params);
            }
            println!("best: trial {} val_acc {:.3} {:?}", res.best.index, res.best.val_acc, res.best.params);
            if let Some(o) = out {
                std::fs::write(&o, res.best_config.to_yaml()?)
                    .with_context(|| format!("writing {}", o.display()))?;
            }
            Ok(())
        }
        Command::Data {
            command: DataCommand::Verify { dataset, data },
        } => {
            let root = data.unwrap_or_else(default_data_dir);
            let checks = verify_dataset(dataset, &root)?;
            let mut bad = 0;
            for c in &checks {
                println!(
                    "{:<28} {:<7} size {:>10}/{:<10} {}",
                    c.file,
                    if c.ok { "ok" } else { "FAILED" },
                    c.size.map_or("-".into(), |s| s.to_string()),
                    c.expected_size,
                    c.sha256.as_deref().unwrap_or("-")
                );
                bad += usize::from(!c.ok);
            }
            if bad > 0 {
                bail!("{bad} file(s) failed verification under {}", root.display());
            }
            Ok(())
        }
    }
}
