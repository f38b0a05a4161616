use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use deeps_core::datagen::generate_uav_dataset;
use deeps_core::harness::config::DataSource;
use deeps_core::harness::output::{summary_table, write_comparison, write_run};
use deeps_core::harness::{
    compare_strategies, run_experiment, with_threads, ExperimentConfig, StrategySpec,
};
use deeps_core::pgm::{load_manifest, write_pgm};
use deeps_core::similarity::greedy_keep_indices;
use deeps_core::Result;

#[derive(Parser)]
#[command(
    name = "deeps",
    version,
    about = "UAV federated learning participant-selection simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Deeps,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Run one strategy and write rounds.csv, summary.csv and metadata.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// SSIM threshold for DEEPS deduplication.
        #[arg(long)]
        ssim_th: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stop_on_convergence: bool,
        /// Worker threads for intra-round parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run every strategy listed under `compare` on the same data.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write the synthetic dataset as PGM files plus a manifest.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report how many images each UAV keeps after deduplication.
    DedupReport {
        #[arg(long)]
        manifest: PathBuf,
        /// Image root for relative paths (defaults to the manifest's directory).
        #[arg(long)]
        image_root: Option<PathBuf>,
        #[arg(long = "ssim-th", value_delimiter = ',', default_values_t = [0.1, 0.5])]
        ssim_th: Vec<f64>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            strategy,
            ssim_th,
            seed,
            out,
            stop_on_convergence,
            threads,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let th = ssim_th.or(cfg.strategy.ssim_threshold()).unwrap_or(0.5);
            cfg.strategy = match strategy {
                Some(StrategyArg::Deeps) => StrategySpec::Deeps { ssim_threshold: th },
                Some(StrategyArg::Random) => StrategySpec::Random,
                None => match cfg.strategy {
                    StrategySpec::Deeps { .. } => StrategySpec::Deeps { ssim_threshold: th },
                    StrategySpec::Oracle { .. } => StrategySpec::Oracle { ssim_threshold: th },
                    StrategySpec::Random => StrategySpec::Random,
                },
            };
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.stop_on_convergence |= stop_on_convergence;
            cfg.validate()?;
            let summary = with_threads(threads, || run_experiment(&cfg))??;
            write_run(&cfg.output_dir, &cfg, &summary)?;
            print!("{}", summary_table(std::slice::from_ref(&summary)));
            if let Some(why) = &summary.stopped_early {
                eprintln!("stopped early: {why}");
            }
        }
        Command::Compare {
            config,
            out,
            seed,
            threads,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let strategies = cfg.compare.clone();
            let summaries = with_threads(threads, || compare_strategies(&cfg, &strategies))??;
            write_comparison(&cfg.output_dir, &cfg, &summaries)?;
            print!("{}", summary_table(&summaries));
        }
        Command::GenData { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            if !matches!(cfg.data, DataSource::Synthetic) {
                return Err(deeps_core::Error::Config(
                    "gen-data needs a synthetic data source".into(),
                ));
            }
            let pop = cfg.population()?;
            let mut manifest = String::from("path,label,subregion,uav\n");
            for id in 1..=pop.uavs as u32 {
                let subregion = (id - 1) % pop.subregions as u32 + 1;
                let data = generate_uav_dataset(&cfg.generator, subregion, id, cfg.master_seed)?;
                let dir = out.join("images").join(format!("u{id:03}"));
                fs::create_dir_all(&dir)?;
                for (t, s) in data.samples.iter().enumerate() {
                    let rel = format!("images/u{id:03}/f{t:04}.pgm");
                    write_pgm(&out.join(&rel), &s.image)?;
                    manifest.push_str(&format!("{rel},{},{subregion},{id}\n", s.label.as_u8()));
                }
            }
            fs::write(out.join("manifest.csv"), manifest)?;
        }
        Command::DedupReport {
            manifest,
            image_root,
            ssim_th,
        } => {
            let root = image_root
                .or_else(|| manifest.parent().map(|p| p.to_path_buf()))
                .unwrap_or_default();
            let by_uav = load_manifest(&manifest, &root)?;
            let params = Default::default();
            println!("uav,subregion,samples,ssim_th,kept,removed");
            let thresholds: BTreeSet<u64> = ssim_th.iter().map(|t| t.to_bits()).collect();
            for (id, entry) in &by_uav {
                for th in thresholds.iter().map(|&b| f64::from_bits(b)) {
                    let kept = greedy_keep_indices(&entry.samples, th, &params)?.len();
                    let n = entry.samples.len();
                    println!("{id},{},{n},{th},{kept},{}", entry.subregion_id, n - kept);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
