use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Parser, Subcommand};
use udakit::datakit::{write_folder, ShiftSpec};
use udakit::evalkit::TableFormat;
use udakit::trainer::{load_data, run_config, DataConfig, RunOptions, TrainConfig};
use udakit::{Error, Result};
use udakit_cli::grid::{run_grid, summary_csv, GridSpec};
use udakit_cli::report::build_report;

#[derive(Parser)]
#[command(name = "udakit", version, about = "Unsupervised domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory. Defaults to `runs/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for batch augmentation.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Single-threaded execution.
        #[arg(long)]
        deterministic: bool,
    },
    /// Expand a grid spec and run every cell.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cells run concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Overrides the seed of every cell.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the expanded cells without running them.
        #[arg(long)]
        dry_run: bool,
    },
    /// Tabulate the best-epoch target metrics of finished runs.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: TableFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic benchmark as image folders.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        per_class: usize,
        #[arg(long, default_value_t = 8)]
        val_per_class: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML file with `hue`, `texture` and `noise`.
        #[arg(long)]
        shift: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run {
            config,
            seed,
            out,
            parallel,
            deterministic,
        } => run(&config, seed, out, parallel, deterministic),
        Cmd::Grid {
            config,
            out,
            parallel,
            seed,
            dry_run,
        } => grid(&config, &out, parallel, seed, dry_run),
        Cmd::Report { dirs, format, out } => {
            let report = build_report(&dirs, format)?;
            for s in &report.skipped {
                eprintln!("skipped {}: {}", s.dir.display(), s.reason);
            }
            match out {
                Some(path) => udakit::io::write_atomic(&path, report.table.as_bytes()),
                None => {
                    print!("{}", report.table);
                    Ok(())
                }
            }
        }
        Cmd::SynthData {
            out,
            classes,
            per_class,
            val_per_class,
            image_size,
            seed,
            shift,
        } => {
            let shift = match shift {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    ShiftSpec::parse(&text)?
                }
                None => ShiftSpec::benchmark(),
            };
            let data = load_data(&DataConfig::Synthetic {
                classes,
                per_class,
                val_per_class,
                image_size,
                data_seed: seed,
                shift,
            })?;
            write_folder(&data.source, &out.join("source"))?;
            write_folder(&data.target, &out.join("target"))?;
            if let Some(val) = &data.source_val {
                write_folder(val, &out.join("source_val"))?;
            }
            println!(
                "wrote {} source, {} target images to {}",
                data.source.len(),
                data.target.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, parallel: usize, deterministic: bool) -> Result<()> {
    let mut cfg = TrainConfig::from_path(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg = cfg.resolve()?;
    }
    let out = out.unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let threaded = parallel > 1 && !deterministic;
    if threaded {
        rayon_threads(parallel);
    }
    let outcome = run_config(
        &cfg,
        &RunOptions {
            out_dir: out,
            parallel: threaded,
        },
    )?;
    let m = &outcome.manifest;
    let last = m.epochs.last();
    let metric = |split: &str, key: &str| {
        last.and_then(|e| e.metrics.get(split))
            .and_then(|s| s.get(key))
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "-".into())
    };
    println!(
        "run={} status={} epochs={} val_top1={} target_macro={} target_micro={} dir={}",
        m.name,
        m.status.as_str(),
        m.epochs.len(),
        metric("val", "top1"),
        metric("target", "macro"),
        metric("target", "top1"),
        outcome.run_dir.display()
    );
    Ok(())
}

fn rayon_threads(n: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::warn!("thread pool: {e}");
    }
}

fn grid(config: &Path, out: &Path, parallel: usize, seed: Option<u64>, dry_run: bool) -> Result<()> {
    let spec = GridSpec::from_path(config)?;
    let (mut cells, warnings) = spec.expand()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    if let Some(s) = seed {
        for c in &mut cells {
            c.config.seed = s;
        }
    }
    if dry_run {
        for c in &cells {
            println!("{:03} {}", c.index, c.label);
        }
        return Ok(());
    }
    let exe = std::env::current_exe().map_err(|e| Error::io("udakit", e))?;
    let runner = |cfg: &Path, dir: &Path| -> std::result::Result<(), String> {
        let log = dir.with_extension("log");
        if let Some(p) = log.parent() {
            std::fs::create_dir_all(p).map_err(|e| e.to_string())?;
        }
        let file = std::fs::File::create(&log).map_err(|e| e.to_string())?;
        let status = Command::new(&exe)
            .arg("run")
            .arg("--config")
            .arg(cfg)
            .arg("--out")
            .arg(dir)
            .stdout(file.try_clone().map_err(|e| e.to_string())?)
            .stderr(file)
            .status()
            .map_err(|e| e.to_string())?;
        if status.success() {
            Ok(())
        } else {
            Err(format!("exit {} (see {})", status.code().unwrap_or(-1), log.display()))
        }
    };
    let results = run_grid(&spec, &cells, out, parallel, &runner)?;
    let csv = summary_csv(&cells, &results);
    let path = out.join("summary.csv");
    udakit::io::write_atomic(&path, csv.as_bytes())?;
    let failed = results
        .iter()
        .filter(|r| r.status.starts_with("failed") || r.status.starts_with("skipped"))
        .count();
    println!(
        "{} cells, {} failed or skipped, summary at {}",
        cells.len(),
        failed,
        path.display()
    );
    Ok(())
}
