//! Thin command-line front end over the experiment runners. Exit codes:
//! 0 success, 2 inadmissible config, 3 solver nonconvergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use anderson_lab::experiments::{self, ExperimentConfig, Kind};

#[derive(Parser)]
#[command(
    name = "anderson-lab",
    about = "Desk-scale numerical experiments for alloy-type random Schrödinger operators on Z³",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: runs/<kind>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (0 = library default). Results are worker-count
    /// invariant; this only changes wall-clock time.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Lift the desk-scale guards on box radii and sample counts.
    #[arg(long, global = true)]
    unsafe_override: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Free Green tables, envelope constants, ratio bounds, decay fits.
    Green,
    /// Self-energy fixed points with contraction and bound certificates.
    Selfenergy,
    /// Telescoping identity residuals and tadpole cancellation.
    Expand,
    /// Interval-lemma sweep and window-count linearity.
    Wegner,
    /// Boundary-resolvent decay ladder.
    Localize,
    /// Dipole self-energy, wall ground state and slab cross-check.
    Dipole,
}

fn kind_of(cmd: &Command) -> Kind {
    match cmd {
        Command::Green => Kind::GreenDecay,
        Command::Selfenergy => Kind::SelfEnergy,
        Command::Expand => Kind::ExpansionCheck,
        Command::Wegner => Kind::Wegner,
        Command::Localize => Kind::Localization,
        Command::Dipole => Kind::Dipole,
    }
}

fn default_dir(kind: Kind) -> PathBuf {
    let name = match kind {
        Kind::GreenDecay => "green",
        Kind::SelfEnergy => "selfenergy",
        Kind::ExpansionCheck => "expand",
        Kind::Wegner => "wegner",
        Kind::Localization => "localize",
        Kind::Dipole => "dipole",
    };
    PathBuf::from("runs").join(name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let kind = kind_of(&cli.command);

    let mut cfg = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads > 0 {
        cfg.threads = cli.threads;
    }
    if cli.unsafe_override {
        cfg.unsafe_override = true;
    }
    if cfg.threads > 0 {
        // best effort: the pool may already exist in-process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    let out_dir = cli.out.unwrap_or_else(|| default_dir(kind));

    match experiments::run(kind, &cfg, &out_dir) {
        Ok(output) => {
            println!(
                "wrote {} file(s) to {}",
                output.ledger.outputs.len(),
                output.dir.display()
            );
            for f in &output.ledger.outputs {
                println!("  {f}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiments::exit_code_for(&e) as u8)
        }
    }
}
