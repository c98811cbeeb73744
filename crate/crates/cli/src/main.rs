//! Command-line front end: experiment sweeps, plot tables and dataset export.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
//! breakdowns, 1 for anything else (I/O, malformed input files).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msprecode::dataset::{export_dataset, ExportSpec};
use msprecode::experiment::{
    emit_plot_data, run_experiment, schema_text, write_outputs, ExperimentConfig, Method, SweepAxis,
};
use msprecode::te::XiConvention;
use msprecode::Error;

#[derive(Parser, Debug)]
#[command(name = "msprecode", version, about = "Multi-satellite statistical-CSI precoding experiments")]
struct Cli {
    /// Print the annotated configuration schema and exit.
    #[arg(long)]
    print_schema: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a sweep and write CSV results.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated method labels, e.g. SS-WM,MS-JoCDWM.
        #[arg(long)]
        methods: Option<String>,
        /// Sweep override, e.g. p_tx=20,30,40.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Turn a results CSV into per-figure data tables.
    Plots {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export solver-labelled training samples.
    ExportDataset {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// SI-NMSE scale convention recorded for trainers.
        #[arg(long, value_parser = ["printed", "least_squares"], default_value = "least_squares")]
        xi: String,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => 2,
        Error::Numerical(_) => 3,
        _ => 1,
    }
}

fn load(config: &Option<PathBuf>) -> Result<ExperimentConfig, Error> {
    match config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn parse_sweep(s: &str) -> Result<(SweepAxis, Vec<f64>), Error> {
    let (axis, values) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("--sweep expects axis=v1,v2,..., got '{s}'")))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Error::InvalidConfig(format!("bad sweep value '{v}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((SweepAxis::parse(axis)?, values))
}

fn run(cli: Cli) -> Result<(), Error> {
    if cli.print_schema {
        print!("{}", schema_text());
        return Ok(());
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("--threads: {e}")))?;
    }
    match cli.command {
        None => Err(Error::InvalidConfig("no command given; try --help".into())),
        Some(Command::Run { config, out, seed, methods, sweep }) => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = methods {
                cfg.methods = m.split(',').map(str::parse::<Method>).collect::<Result<_, _>>()?;
            }
            if let Some(s) = sweep {
                let (axis, values) = parse_sweep(&s)?;
                cfg.sweep.axis = axis;
                cfg.sweep.values = values;
            }
            cfg.validate()?;
            let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
            let result = run_experiment(&cfg)?;
            for p in write_outputs(&result, &cfg, &dir)? {
                println!("wrote {}", p.display());
            }
            let excluded: usize = result.rows.iter().map(|r| r.n_excluded).sum();
            if excluded > 0 {
                eprintln!("excluded {excluded} method-drop runs; see excluded.log");
            }
            Ok(())
        }
        Some(Command::Plots { input, out }) => {
            for p in emit_plot_data(&input, &out)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Some(Command::ExportDataset { config, n, out, seed, xi }) => {
            let cfg = load(&config)?;
            let spec = ExportSpec {
                scenario: cfg.scenario,
                solver: cfg.solver,
                xi_convention: if xi == "printed" { XiConvention::Printed } else { XiConvention::LeastSquares },
            };
            let m = export_dataset(&spec, n, seed.unwrap_or(cfg.seed), &out)?;
            println!("wrote {} samples to {} (sha256 {})", m.sample_count, out.display(), m.data_sha256);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_override_parses() {
        let (axis, v) = parse_sweep("p_tx=20, 30,40").unwrap();
        assert_eq!(axis, SweepAxis::PTx);
        assert_eq!(v, vec![20.0, 30.0, 40.0]);
        assert!(parse_sweep("p_tx").is_err());
        assert!(parse_sweep("nope=1").is_err());
        assert!(parse_sweep("k=a").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(exit_code(&Error::Format("x".into())), 1);
    }
}
