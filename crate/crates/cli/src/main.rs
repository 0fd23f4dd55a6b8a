use clap::{Parser, Subcommand};
use evotrain_cli::{
    aggregate, emit_plotdata, read_records, render_table, run_experiment, CliError, CliResult,
    ExperimentConfig, ExperimentKind,
};
use evotrain_core::topo::{sample_genome, validate_genome, TopoLattice};
use evotrain_core::NetworkSpec;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "evotrain", version, about = "Train small CNNs with gradient and metaheuristic solvers and evolve their topologies")]
struct Cli {
    /// Worker threads (0 = all cores); EVOTRAIN_THREADS is the fallback.
    /// A single thread guarantees bit-identical reruns.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment config: multiple seeded runs plus CSV/summary artifacts.
    Run {
        config: PathBuf,
        /// Override [experiment] base_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override [experiment] runs.
        #[arg(long)]
        runs: Option<u32>,
        /// Cap topology-search training at 10 epochs.
        #[arg(long)]
        fast: bool,
    },
    /// Summarize record CSVs: mean and std of final-epoch metrics per solver/schedule.
    Aggregate { csv: Vec<PathBuf> },
    /// Emit per-epoch mean/std series for plotting.
    Plotdata {
        csv: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Parse a config and check shapes, files and genome sampling without running.
    Validate { config: PathBuf },
    /// Print the trainable-parameter count of network spec files.
    Params { netspec: Vec<PathBuf> },
}

fn main() {
    let cli = Cli::parse();
    let threads = if cli.threads > 0 {
        cli.threads
    } else {
        std::env::var("EVOTRAIN_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0)
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    if let Err(e) = dispatch(cli.command) {
        eprintln!("evotrain: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Run {
            config,
            seed,
            runs,
            fast,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(r) = runs {
                if r == 0 {
                    return Err(CliError::Config("runs must be >= 1".to_string()));
                }
                cfg.runs = r;
            }
            if fast {
                cfg.topo_fast = true;
            }
            let outcome = run_experiment(&cfg)?;
            println!(
                "{}: {} runs, {} records -> {}",
                cfg.kind.name(),
                cfg.runs,
                outcome.records.len(),
                cfg.out_dir.display()
            );
            print!("{}", render_table(&aggregate(&outcome.records)?));
            Ok(())
        }
        Command::Aggregate { csv } => {
            if csv.is_empty() {
                return Err(CliError::Config("no CSV files given".to_string()));
            }
            let mut records = Vec::new();
            for path in &csv {
                records.extend(read_records(path)?);
            }
            print!("{}", render_table(&aggregate(&records)?));
            Ok(())
        }
        Command::Plotdata { csv, out } => {
            let records = read_records(&csv)?;
            let rows = emit_plotdata(&records, &out)?;
            println!("{rows} rows -> {}", out.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            if let Some(net) = &cfg.network {
                let shapes = net.infer_shapes().map_err(CliError::config)?;
                let params = net.count_params().map_err(CliError::config)?;
                println!(
                    "network: {} layers, {} trainable parameters, output {:?}",
                    net.layers.len(),
                    params,
                    shapes.last().expect("non-empty").dims()
                );
            }
            if matches!(
                cfg.kind,
                ExperimentKind::TopoEvolve | ExperimentKind::RandomTopo
            ) {
                // dry-run the genome machinery against this input shape
                let d = &cfg.data;
                let (shape, classes) = match d.source {
                    evotrain_cli::DataSource::Synthetic => {
                        ([d.image_hw, d.image_hw, 1], d.classes)
                    }
                    _ => {
                        let (train, _) = evotrain_cli::experiment::load_datasets(&cfg)?;
                        (train.example_shape(), train.num_classes)
                    }
                };
                let lat = TopoLattice::default();
                let mut rng = evotrain_core::rng::rng_for(cfg.base_seed, 0x7A11);
                for _ in 0..100 {
                    let g = sample_genome(&mut rng, shape, classes, &lat);
                    let v = validate_genome(&g, shape, classes);
                    if !v.is_empty() {
                        return Err(CliError::Config(format!(
                            "genome sampling produced violations: {v:?}"
                        )));
                    }
                }
                println!("genome grammar: 100 samples valid for shape {shape:?}, {classes} classes");
            }
            println!("ok: {}", cfg.kind.name());
            Ok(())
        }
        Command::Params { netspec } => {
            if netspec.is_empty() {
                return Err(CliError::Config("no netspec files given".to_string()));
            }
            for path in &netspec {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                let net = NetworkSpec::from_text(&text).map_err(CliError::config)?;
                let params = net.count_params().map_err(CliError::config)?;
                println!("{}: {} trainable parameters", path.display(), params);
            }
            Ok(())
        }
    }
}
