use std::path::PathBuf;
use std::process::ExitCode;

use cavity_spdc::spectral::Preset;
use cavity_spdc_cli::{run, validate_config, CliError, Command, ExperimentConfig, RunPaths};
use clap::Parser;

#[derive(Debug, Parser)]
#[command(name = "cavity-spdc", version, about = "Cavity-enhanced SPDC source simulator")]
struct Args {
    command: Command,
    /// JSON configuration merged over the preset; omitted keys take preset values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = Preset::RatioMatched)]
    preset: Preset,
    /// Data file for tomo-reconstruct, g2-fit or rates-fit.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn load(args: &Args) -> Result<ExperimentConfig, CliError> {
    let document = match &args.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?,
        None => String::new(),
    };
    let mut config = validate_config(&document, args.preset).map_err(CliError::Validation)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn execute(args: &Args) -> Result<(), CliError> {
    let config = load(args)?;
    let paths = RunPaths {
        out_dir: args.out.clone(),
        input: args.input.clone(),
    };
    let report = run(args.command, &config, &paths)?;
    log::info!("{} finished, report in {}", report.command, args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match args.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&args)),
            Err(e) => {
                eprintln!("error: cannot start {n} worker threads: {e}");
                return ExitCode::from(1);
            }
        },
        None => execute(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
