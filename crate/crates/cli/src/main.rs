mod commands;
mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::{Layer, RunConfig};

pub const EXIT_CONFIG: u8 = 64;
pub const EXIT_RUNTIME: u8 = 70;

/// Task-aware data validation: profile data, generate data unit tests from
/// task code, validate batches, and benchmark against labeled batches.
#[derive(Parser, Debug)]
#[command(name = "taskcheck", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory that receives every output.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Answer model calls from recorded transcripts.
    #[arg(long, global = true, conflicts_with = "base_url")]
    pub mock: bool,
    /// Transcript directory for the mock backend.
    #[arg(long, global = true, value_name = "DIR")]
    pub transcripts: Option<PathBuf>,
    /// OpenAI-compatible endpoint for the live backend.
    #[arg(long, global = true, value_name = "URL")]
    pub base_url: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Environment variable holding the API token.
    #[arg(long, global = true, value_name = "VAR")]
    pub token_env: Option<String>,
    /// Prompt set JSON; the built-in set otherwise.
    #[arg(long, global = true, value_name = "FILE")]
    pub prompts: Option<PathBuf>,
    /// Directory for persisted model responses.
    #[arg(long, global = true, value_name = "DIR")]
    pub cache: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub parallelism: Option<usize>,
    /// Overrides error-config and optimizer seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Seconds before a task run is killed.
    #[arg(long, global = true, value_name = "SECS")]
    pub task_timeout: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Profile a CSV file into `profiles/<name>.json`.
    Profile {
        data: PathBuf,
        /// Dataset name; the file stem otherwise.
        #[arg(long)]
        name: Option<String>,
        /// Distinct-value limit for histograms.
        #[arg(long)]
        histogram_threshold: Option<usize>,
    },
    /// Generate a data unit test and assumption graph for one task script.
    Generate {
        #[arg(long, value_name = "SCRIPT")]
        task: PathBuf,
        #[arg(long, value_name = "CSV")]
        sample: PathBuf,
        /// Task id; the script stem otherwise.
        #[arg(long)]
        id: Option<String>,
    },
    /// Evaluate a test on a batch. Exits 0 on pass, 1 on reject, 2 when
    /// constraints could not be evaluated.
    Validate {
        #[arg(long, value_name = "JSON")]
        test: PathBuf,
        #[arg(long, value_name = "CSV")]
        batch: PathBuf,
    },
    /// Corrupt a sample with an error config into `batches/<id>.csv`.
    Inject {
        #[arg(long, value_name = "CSV")]
        sample: PathBuf,
        #[arg(long = "error-config", value_name = "JSON")]
        error_config: PathBuf,
        /// Batch id; the config id otherwise.
        #[arg(long)]
        id: Option<String>,
    },
    /// Label batches safe or erroneous by running a task with its
    /// assertions enabled.
    Label {
        #[arg(long, value_name = "SCRIPT")]
        task: PathBuf,
        #[arg(long = "batch", value_name = "CSV", required = true)]
        batches: Vec<PathBuf>,
        #[arg(long)]
        id: Option<String>,
    },
    /// Optimize the prompt set on a benchmark manifest.
    Optimize {
        #[arg(long, value_name = "JSON")]
        manifest: PathBuf,
    },
    /// Run task-aware and task-agnostic tests over a benchmark manifest.
    Bench {
        #[arg(long, value_name = "JSON")]
        manifest: PathBuf,
        /// all, new_data, new_tasks or new_data_new_tasks.
        #[arg(long, default_value = "all")]
        scenario: String,
    },
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config".into(),
            message: message.into(),
        }
    }

    fn report(&self) {
        let body = serde_json::json!({
            "error": { "kind": self.kind, "message": self.message, "exit_code": self.code }
        });
        let _ = writeln!(std::io::stderr(), "{body}");
    }
}

impl From<taskcheck::Error> for Failure {
    fn from(e: taskcheck::Error) -> Self {
        let code = match e {
            taskcheck::Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

impl GlobalArgs {
    fn layer(&self) -> Layer {
        Layer {
            out: self.out.clone(),
            prompts: self.prompts.clone(),
            cache: self.cache.clone(),
            transcripts: self.transcripts.clone(),
            mock: self.mock.then_some(true),
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            token_env: self.token_env.clone(),
            task_timeout: self.task_timeout,
            parallelism: self.parallelism,
            seed: self.seed,
            ..Layer::default()
        }
    }
}

fn run_config(global: &GlobalArgs) -> Result<RunConfig, Failure> {
    let file = match &global.config {
        Some(path) => Layer::from_file(path).map_err(Failure::config)?,
        None => Layer::default(),
    };
    let vars: BTreeMap<String, String> = std::env::vars()
        .filter(|(k, _)| k.starts_with(config::ENV_PREFIX))
        .collect();
    let env = Layer::from_env(&vars).map_err(Failure::config)?;
    let flags = global.layer();
    flags.check("flags").map_err(Failure::config)?;
    flags.over(env.over(file)).resolve().map_err(Failure::config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TASKCHECK_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            Failure::config(e.render().to_string().trim_end()).report();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = run_config(&cli.global).and_then(|cfg| commands::dispatch(&cli.command, &cfg));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            f.report();
            ExitCode::from(f.code)
        }
    }
}
