mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "graphlink", version, about = "Link devices of the same user from browsing records")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MatchArg {
    Strict,
    Lenient,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its ground truth.
    Gen {
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        shared_ip_fraction: Option<f64>,
    },
    /// Group devices into users.
    Track {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Score a prediction, raw confusion counts, or a threshold sweep.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Only score groups touching these devices (JSON list).
        #[arg(long)]
        held_out: Option<PathBuf>,
        #[arg(long, value_enum)]
        match_mode: Option<MatchArg>,
        /// tp,fp,tn,fn
        #[arg(long, value_delimiter = ',', num_args = 1)]
        counts: Option<Vec<u64>>,
        /// Comma-separated thresholds; needs records and truth.
        #[arg(long, value_delimiter = ',', num_args = 1)]
        sweep: Option<Vec<f64>>,
        #[arg(long)]
        records: Option<PathBuf>,
        /// Also write accuracy per user device count.
        #[arg(long)]
        breakdown: bool,
    },
    /// Inject errors, shared IPs, dropped referers or fake edges.
    Perturb {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        error_rate: Option<f64>,
        #[arg(long)]
        shared_ip_fraction: Option<f64>,
        #[arg(long)]
        dropped_domain_fraction: Option<f64>,
        #[arg(long)]
        fake_edge_ratio: Option<f64>,
    },
    /// Per-device incremental linking time over growing synthetic data.
    Bench {
        /// Comma-separated user counts.
        #[arg(long, value_delimiter = ',', num_args = 1)]
        ladder: Option<Vec<usize>>,
        #[arg(long)]
        new_devices: Option<usize>,
    },
    /// Top scores from one seed device.
    RwwrDebug {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        device: String,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration. Exit code 1.
    Config(String),
    /// Unreadable or inconsistent data. Exit code 2.
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl From<graphlink::Error> for CliError {
    fn from(e: graphlink::Error) -> Self {
        use graphlink::Error::*;
        match e {
            InvalidConfig(_) | NoAttributeKinds => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::resolve(&cli.overrides)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Gen {
            format,
            users,
            shared_ip_fraction,
        } => {
            if let Some(n) = users {
                cfg.synthetic.n_users = n;
            }
            if let Some(x) = shared_ip_fraction {
                cfg.synthetic.shared_ip_fraction = x;
            }
            commands::gen(&cfg, format)
        }
        Command::Track { records, truth } => {
            cfg.records = records.or(cfg.records);
            cfg.truth = truth.or(cfg.truth);
            commands::track(&cfg)
        }
        Command::Eval {
            pred,
            truth,
            held_out,
            match_mode,
            counts,
            sweep,
            records,
            breakdown,
        } => {
            cfg.records = records.or(cfg.records);
            cfg.truth = truth.or(cfg.truth);
            if let Some(m) = match_mode {
                cfg.match_mode = match m {
                    MatchArg::Strict => graphlink::eval::MatchMode::Strict,
                    MatchArg::Lenient => graphlink::eval::MatchMode::Lenient,
                };
            }
            if let Some(c) = counts {
                return commands::eval_counts(&cfg, &c);
            }
            if let Some(t) = sweep {
                return commands::eval_sweep(&cfg, &t);
            }
            let pred = pred.ok_or_else(|| CliError::Config("eval needs --pred, --counts or --sweep".into()))?;
            commands::eval(&cfg, &pred, held_out.as_deref(), breakdown)
        }
        Command::Perturb {
            records,
            truth,
            error_rate,
            shared_ip_fraction,
            dropped_domain_fraction,
            fake_edge_ratio,
        } => {
            cfg.records = records.or(cfg.records);
            cfg.truth = truth.or(cfg.truth);
            let seed = cfg.seed;
            let p = cfg.perturb.get_or_insert_with(|| graphlink::perturb::PerturbConfig {
                seed,
                ..Default::default()
            });
            for (field, v) in [
                (&mut p.error_rate, error_rate),
                (&mut p.shared_ip_fraction, shared_ip_fraction),
                (&mut p.dropped_domain_fraction, dropped_domain_fraction),
                (&mut p.fake_edge_ratio, fake_edge_ratio),
            ] {
                if let Some(v) = v {
                    *field = v;
                }
            }
            p.validate()?;
            commands::perturb(&cfg)
        }
        Command::Bench { ladder, new_devices } => {
            if let Some(l) = ladder {
                cfg.bench.ladder = l;
            }
            if let Some(n) = new_devices {
                cfg.bench.new_devices = n;
            }
            commands::bench(&cfg)
        }
        Command::RwwrDebug { records, device, top } => {
            cfg.records = records.or(cfg.records);
            commands::rwwr_debug(&cfg, &device, top)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("graphlink: {e}");
            ExitCode::from(e.code())
        }
    }
}
