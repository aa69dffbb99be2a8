use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uma_cli::commands::{cmd_eval, cmd_synth, cmd_track, cmd_train};
use uma_cli::config::{keys_help, RunConfig};
use uma_cli::exit_code;
use uma_cli::verify::{run_suite, SUITES};
use uma_core::Result;

#[derive(Parser)]
#[command(name = "uma", version, about = "Online multi-object tracking with a unified motion and affinity network")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set tracker.alpha=0.7`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Seed for every random stream; beats config file and --set
    #[arg(long, global = true)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides, self.seed)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic sequence from a spec file
    #[command(after_help = keys_help())]
    Synth {
        spec: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a sequence directory (or a directory of sequences)
    #[command(after_help = keys_help())]
    Train {
        data: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Track one sequence and write MOT result rows
    #[command(after_help = keys_help())]
    Track {
        checkpoint: PathBuf,
        sequence: PathBuf,
        out: PathBuf,
        /// Write annotated frames here
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a result file against ground truth
    #[command(after_help = keys_help())]
    Eval {
        gt: PathBuf,
        result: PathBuf,
        /// Also write the report as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a verification suite: grad, hungarian, metrics or e2e
    #[command(after_help = keys_help())]
    Verify {
        suite: String,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Synth { spec, out, common } => {
            common.load()?;
            cmd_synth(&spec, &out, common.seed)?;
        }
        Cmd::Train { data, out, common } => {
            cmd_train(&common.load()?, &data, &out)?;
        }
        Cmd::Track {
            checkpoint,
            sequence,
            out,
            overlay,
            common,
        } => {
            cmd_track(&common.load()?, &checkpoint, &sequence, &out, overlay.as_deref())?;
        }
        Cmd::Eval { gt, result, csv, common } => {
            let (_, table) = cmd_eval(&common.load()?, &gt, &result, csv.as_deref())?;
            print!("{table}");
        }
        Cmd::Verify { suite, common } => {
            let cfg = common.load()?;
            let report = run_suite(&suite, &cfg)?;
            print!("{}", report.render());
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if let uma_core::Error::Config(m) = &e {
                if m.starts_with("unknown suite") {
                    eprintln!("suites: {}", SUITES.join(", "));
                }
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
