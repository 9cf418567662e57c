use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pmeinv::config::{apply_env, load_table};
use pmeinv::{emit_plots, AppError, ExperimentConfig, Selection};

#[derive(Parser)]
#[command(name = "pmeinv", version, about = "Forward solves, Laplace-domain DN data and coefficient recovery for the inhomogeneous porous medium equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config, or a report.json whose embedded config is re-run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Comma-separated stages: forward, transform, fit, recon-gamma, recon-eps, verify, all.
    #[arg(long, global = true, value_delimiter = ',')]
    stage: Option<Vec<String>>,

    /// Worker threads for independent pipeline runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Exit with status 4 when an invariant check fails.
    #[arg(long, global = true)]
    strict: bool,

    /// Seed of the optional data noise.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured stages.
    Run,
    /// Run the invariant suite.
    Verify,
    /// Write plot data for a finished run.
    PlotData {
        /// Run directory holding report.json.
        #[arg(long)]
        report: PathBuf,
        /// Comma-separated: remainder, reconstruction, dn-fit. Empty writes an empty manifest.
        #[arg(long, value_delimiter = ',', default_value = "")]
        select: Vec<String>,
    },
}

fn load(cli: &Cli, verify: bool) -> Result<ExperimentConfig, AppError> {
    let mut table = match &cli.config {
        Some(p) => load_table(p)?,
        None => toml::Table::new(),
    };
    apply_env(&mut table, std::env::vars())?;
    let mut c = ExperimentConfig::from_table(table)?;
    if let Some(s) = &cli.seed {
        c.seed = *s;
    }
    if let Some(o) = &cli.output {
        c.output = o.clone();
    }
    if verify {
        c.stages = vec!["verify".into()];
    } else if let Some(s) = &cli.stage {
        c.stages = s.clone();
    }
    Ok(c)
}

fn execute(cli: &Cli) -> Result<(), AppError> {
    match &cli.command {
        Command::PlotData { report, select } => {
            let sel = select
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| Selection::parse(s).ok_or_else(|| AppError::validation("select", format!("unknown selection `{s}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            let man = emit_plots(report, &sel)?;
            for f in &man.files {
                println!("{f}");
            }
            Ok(())
        }
        Command::Run | Command::Verify => {
            let config = load(cli, matches!(cli.command, Command::Verify))?;
            let ctx = pmeinv::run(&config)?;
            print!("{}", ctx.report.table());
            for (k, v) in &ctx.report.errors {
                println!("error {k} = {v:.4e}");
            }
            println!("report: {}", ctx.out.join(pmeinv::report::REPORT_FILE).display());
            let failed = ctx.report.failed_checks().len();
            if cli.strict && failed > 0 {
                return Err(AppError::InvariantFailure { failed });
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(AppError::validation("jobs", e.to_string())),
        },
        None => execute(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pmeinv: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
