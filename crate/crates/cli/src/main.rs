mod commands;
mod files;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use files::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CryptoArg {
    Real,
    Marker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Attack {
    Replay,
    Tamper,
    StealCert,
}

#[derive(Debug, Parser)]
#[command(name = "incognito", version, about = "Anonymous authorization: keys, agreements, requests and drills")]
pub struct Cli {
    /// Directory holding keys, certificates and center state.
    #[arg(long, global = true, default_value = ".")]
    pub state_dir: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Key scheme for new keys; overrides a scenario's own choice.
    #[arg(long, global = true, value_enum)]
    pub crypto: Option<CryptoArg>,
    /// Allow the transparent marker scheme. It protects nothing.
    #[arg(long, global = true)]
    pub unsafe_marker: bool,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a key pair and public identity.
    Keygen {
        #[arg(long, value_enum)]
        role: Role,
        #[arg(long)]
        name: String,
    },
    /// Tell a clearance center about a resource server's key.
    RegisterServer {
        #[arg(long)]
        clearance: String,
        #[arg(long)]
        server: String,
    },
    /// Register an organization's service agreement at a clearance center.
    Agree {
        #[arg(long)]
        clearance: String,
        #[arg(long)]
        org: String,
        /// JSON: {"implications": [[from, to]], "grants": [{group, ticket, modifiers}]}
        #[arg(long)]
        grants: PathBuf,
    },
    /// Install a resource server's resources and access control list.
    Acl {
        #[arg(long)]
        server: String,
        #[arg(long)]
        clearance: String,
        /// JSON: {"resources": [...], "entries": [{ticket, resource, modifiers}]}
        #[arg(long)]
        entries: PathBuf,
        #[arg(long, default_value_t = incognito_core::server::DEFAULT_REPLAY_WINDOW)]
        replay_window: u64,
    },
    /// Issue an enrollment certificate to a user.
    Enroll {
        #[arg(long)]
        org: String,
        #[arg(long)]
        user: String,
        #[arg(long, value_delimiter = ',')]
        groups: Vec<String>,
        /// Issue time, seconds since the epoch.
        #[arg(long)]
        now: u64,
        #[arg(long)]
        lifetime: Option<u64>,
    },
    /// Make one service request.
    Request {
        #[arg(long)]
        user: String,
        #[arg(long)]
        org: String,
        #[arg(long)]
        server: String,
        #[arg(long)]
        resource: String,
        #[arg(long)]
        now: u64,
        /// key=value, repeatable.
        #[arg(long = "param")]
        params: Vec<String>,
        /// Refuse debit confirmations.
        #[arg(long)]
        decline: bool,
        /// Expected outcome: granted, denied, or a failure code.
        #[arg(long)]
        expect: Option<String>,
        /// Write the messages exchanged here.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Run a scenario script and check its expectations.
    Run {
        scenario: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Run an adversary drill against a scenario.
    Attack {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        attack: Attack,
    },
    /// Print a transcript as a table.
    Inspect { transcript: PathBuf },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{name}: {detail}")]
    Validation { name: String, detail: String },
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// An outcome other than the expected one.
    #[error("{name}: {detail}")]
    Mismatch { name: String, detail: String },
}

impl CliError {
    pub fn invalid(name: &str, detail: impl Into<String>) -> Self {
        CliError::Validation {
            name: name.to_string(),
            detail: detail.into(),
        }
    }

    pub fn mismatch(name: &str, detail: impl Into<String>) -> Self {
        CliError::Mismatch {
            name: name.to_string(),
            detail: detail.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Mismatch { .. } => 4,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut out = String::new();
    let result = commands::execute(&cli, &mut out);
    print!("{out}");
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
