use clap::{Parser, Subcommand};
use mflab::harness::{self, ExperimentConfig};
use mflab::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mflab", version, about = "Particle and mean-field experiments for Riesz and Coulomb flows")]
struct Cli {
    /// Sum in index order so results do not depend on the thread count.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MFLAB_THREADS")]
    threads: Option<usize>,

    /// Output directory (default: output.dir from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Particle runs for every (N, seed) with diagnostics against the reference.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Grid solve of the mean-field equation.
    PdeSolve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Diagnostics of a stored particle file.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        particles: PathBuf,
        /// Reference time (default: time.T).
        #[arg(long)]
        time: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Simulate, then fit the rates.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit rates from diagnostics CSV files.
    FitRate {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
    /// Weak-strong gap between two co-evolved densities.
    Gap {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::load(path)
}

fn out_dir(cli_out: &Option<PathBuf>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| cfg.map(|c| PathBuf::from(&c.output.dir)))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn execute(cli: &Cli) -> Result<bool, Error> {
    match &cli.command {
        Command::Simulate { config } => {
            let cfg = load(config)?;
            let out = out_dir(&cli.out, Some(&cfg));
            let s = harness::simulate(&cfg, &out)?;
            println!("{} rows -> {}", s.records.len(), s.csv.display());
            if s.failures > 0 {
                eprintln!("{} run(s) failed; see runs.jsonl", s.failures);
            }
            Ok(s.failures == 0)
        }
        Command::Sweep { config } => {
            let cfg = load(config)?;
            let out = out_dir(&cli.out, Some(&cfg));
            let (s, fit) = harness::sweep(&cfg, &out)?;
            println!("{} rows -> {}", s.records.len(), s.csv.display());
            match fit {
                Ok(f) => println!("beta_hat = {:.4}, R^2 = {:.4}, C2_hat = {:.4}", f.beta_hat, f.r_squared, f.c2_hat),
                Err(e) => eprintln!("rate fit skipped: {e}"),
            }
            Ok(s.failures == 0)
        }
        Command::PdeSolve { config } => {
            let cfg = load(config)?;
            let out = out_dir(&cli.out, Some(&cfg));
            let rows = harness::pde_solve(&cfg, &out)?;
            if let Some(r) = rows.last() {
                println!("t = {} mass = {:.12} front = {:.6}", r.t, r.mass, r.front_radius);
            }
            Ok(true)
        }
        Command::Diagnose {
            config,
            particles,
            time,
            seed,
        } => {
            let cfg = load(config)?;
            let out = out_dir(&cli.out, Some(&cfg));
            let rec = harness::diagnose(&cfg, particles, time.unwrap_or(cfg.time.t_end), *seed, &out)?;
            println!("F_N = {} TE_r = {}", rec.f_n, rec.te_r);
            Ok(true)
        }
        Command::FitRate { csv } => {
            let out = out_dir(&cli.out, None);
            let fit = harness::fit_files(csv, &out)?;
            println!("{}", serde_json::to_string(&fit).expect("fit serializes"));
            Ok(true)
        }
        Command::Gap { config } => {
            let cfg = load(config)?;
            let out = out_dir(&cli.out, Some(&cfg));
            let (rows, fit) = harness::gap(&cfg, &out)?;
            println!("{} rows, c_hat = {:.4} ({})", rows.len(), fit.c_hat, fit.rate_column);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    mflab::reduce::set_deterministic(cli.deterministic);
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
