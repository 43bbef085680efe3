//! `arraycal` — Monte-Carlo driver for in-situ antenna-array calibration.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.
//! Progress goes to stderr; result-file paths go to stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use arraycal_cli::{experiments, output, spec};

#[derive(Parser)]
#[command(
    name = "arraycal",
    version,
    about = "Antenna-array calibration and DOA Monte-Carlo experiments"
)]
struct Cli {
    /// Experiment configuration (TOML); built-in defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured RNG seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Override the configured output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run the calibration campaign: per-CPP mismatch angles for every
    /// K-factor, method, and symbol-accumulation length, plus fitted
    /// manifold exports
    Calibrate,
    /// Run the DOA Monte-Carlo against ideal, true, and estimated manifolds
    DoaEval,
    /// Check a configuration and report every violation
    Validate,
    /// Synthesize raw channel measurements and write them as CSV
    DumpCfr {
        /// K-factor in dB (defaults to the first configured one)
        #[arg(long)]
        k_factor: Option<f64>,
        /// Symbols per calibration pilot position
        #[arg(long, default_value_t = 1)]
        symbols: usize,
    },
}

enum Failure {
    Config(Vec<String>),
    Runtime(arraycal_core::Error),
}

fn load(cli: &Cli) -> Result<spec::Validated, Vec<String>> {
    let (mut raw, base) = match &cli.config {
        Some(path) => (spec::load_raw(path)?, path.parent().map(Path::to_path_buf)),
        None => (spec::RawSpec::default(), None),
    };
    if let Some(s) = cli.seed {
        raw.seed = Some(s);
    }
    if let Some(dir) = &cli.out {
        raw.output.dir = dir.clone();
    }
    spec::validate(raw, base.as_deref())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(|e| Failure::Config(vec![format!("workers: {e}")]))?;
    }

    let validated = load(&cli).map_err(Failure::Config)?;
    for w in &validated.warnings {
        eprintln!("warning: {w}");
    }
    let spec = validated.spec;
    spec::check_output_writable(&spec.output_dir).map_err(|e| Failure::Config(vec![e]))?;

    match cli.verb {
        Verb::Validate => {
            println!("configuration valid");
            println!("  seed           = {}", spec.seed);
            println!(
                "  waveform       = {} subcarriers, comb {}, {:.2} MHz occupied",
                spec.waveform.num_subcarriers,
                spec.waveform.comb_factor,
                spec.waveform.occupied_bandwidth_hz() / 1e6
            );
            println!("  antennas       = {}", spec.geometry.num_elements());
            println!("  K-factors (dB) = {:?}", spec.k_factors_db);
            println!(
                "  CPPs           = {} on a {} m arc",
                spec.scenario.cpp_count, spec.scenario.cpp_radius_m
            );
            println!("  symbols (Q)    = {:?}", spec.symbols);
            println!("  trials per CPP = {}", spec.trials);
            println!(
                "  methods        = {:?}",
                spec.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>()
            );
            println!("  DOA trials     = {}", spec.doa.trials);
            println!("  output dir     = {}", spec.output_dir.display());
            Ok(())
        }
        Verb::Calibrate => {
            let art = experiments::run_calibration_experiment(&spec).map_err(Failure::Runtime)?;
            println!("{}", art.errors_path.display());
            println!("{}", art.summary_path.display());
            for p in &art.manifold_paths {
                println!("{}", p.display());
            }
            println!("{}", art.error_table_path.display());
            Ok(())
        }
        Verb::DoaEval => {
            let art = experiments::run_doa_experiment(&spec).map_err(Failure::Runtime)?;
            println!("{}", art.errors_path.display());
            println!("{}", art.summary_path.display());
            println!("{}", art.bias_path.display());
            for p in &art.cdf_paths {
                println!("{}", p.display());
            }
            Ok(())
        }
        Verb::DumpCfr { k_factor, symbols } => {
            if symbols == 0 {
                return Err(Failure::Config(vec![
                    "dump-cfr: symbols must be at least 1".into(),
                ]));
            }
            let k = k_factor.unwrap_or(spec.k_factors_db[0]);
            let path = spec
                .output_dir
                .join(format!("cfr_k{}.csv", output::k_label(k)));
            experiments::dump_cfr(&spec, k, symbols, &path).map_err(Failure::Runtime)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(violations)) => {
            for v in violations {
                eprintln!("config error: {v}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
