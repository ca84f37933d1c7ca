use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Text,
}

#[derive(Debug, Parser)]
#[command(name = "hcmr", version, about = "Client for the certified module registry")]
pub struct Cli {
    /// Registry base URL.
    #[arg(long, global = true)]
    pub registry: Option<String>,
    /// Base64 identity assertion used for signing.
    #[arg(long, global = true)]
    pub identity_token: Option<String>,
    /// Approvals required when verifying certifications client-side.
    #[arg(long, global = true)]
    pub quorum_policy: Option<u32>,
    #[arg(long, global = true, value_enum)]
    pub output: Option<OutputFormat>,
    /// CA root public key file.
    #[arg(long, global = true)]
    pub ca_root: Option<PathBuf>,
    /// Transparency log public key file.
    #[arg(long, global = true)]
    pub log_key: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ModuleArg {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Publish a module with locally signed provenance.
    Submit(SubmitArgs),
    /// Sign and post a review verdict, or run the local signing helper.
    Review(ReviewArgs),
    /// Run a validation manifest in the registry sandbox.
    Validate {
        #[command(flatten)]
        module: ModuleArg,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Finalize certification of a validated module.
    Certify {
        #[command(flatten)]
        module: ModuleArg,
    },
    /// Sign and post a revocation order.
    Revoke {
        #[command(flatten)]
        module: ModuleArg,
        #[arg(long)]
        reason: String,
    },
    /// Verify a module and its closure client-side from log and artifacts.
    Verify {
        #[command(flatten)]
        module: ModuleArg,
    },
    /// Ask the registry to resolve a module's dependency closure.
    Resolve {
        #[command(flatten)]
        module: ModuleArg,
    },
    /// Ask the registry for a chain of modules from source to goal.
    Plan {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        goal: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long)]
        max_depth: Option<u32>,
    },
    /// Build a plan's composed artifact, sign its provenance and record it.
    Compose {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        build_record: PathBuf,
        /// Where to write the composed artifact.
        #[arg(long)]
        artifact_out: Option<PathBuf>,
    },
    /// Check log consistency between two sizes client-side.
    Audit {
        #[arg(long)]
        old: u64,
        #[arg(long)]
        new: Option<u64>,
        /// Previously observed root at `--old`.
        #[arg(long)]
        old_root: Option<String>,
    },
    /// Inspect the transparency log.
    Log {
        #[command(subcommand)]
        action: LogAction,
    },
    /// Local development helpers.
    Dev {
        #[command(subcommand)]
        action: DevAction,
    },
}

#[derive(Debug, Args)]
pub struct SubmitArgs {
    #[command(flatten)]
    pub module: ModuleArg,
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long)]
    pub contract: PathBuf,
    #[arg(long)]
    pub build_record: PathBuf,
    /// Output of an independent rebuild; its digest is the second build digest.
    #[arg(long)]
    pub rebuild: Option<PathBuf>,
    /// Explicit build digest; give exactly two.
    #[arg(long = "build-digest")]
    pub build_digests: Vec<String>,
    /// `name@version` or `name@version=sha256:<hex>`; repeatable.
    #[arg(long = "dependency")]
    pub dependencies: Vec<String>,
    /// Required permission; repeatable.
    #[arg(long = "permission")]
    pub permissions: Vec<String>,
    /// Threat assumption; repeatable.
    #[arg(long = "threat-assumption")]
    pub threat_assumptions: Vec<String>,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct ReviewArgs {
    /// Serve a local endpoint that signs verdicts for browser clients.
    #[arg(long)]
    pub serve_signer: bool,
    #[arg(long, default_value = "127.0.0.1:7391", requires = "serve_signer")]
    pub listen: String,
    #[command(subcommand)]
    pub action: Option<ReviewAction>,
}

#[derive(Debug, Subcommand)]
pub enum ReviewAction {
    Approve {
        #[command(flatten)]
        module: ModuleArg,
        #[arg(long, default_value = "")]
        rationale: String,
    },
    Reject {
        #[command(flatten)]
        module: ModuleArg,
        #[arg(long, default_value = "")]
        rationale: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum LogAction {
    /// Fetch and check the signed tree head.
    Head,
    Entry {
        index: u64,
    },
    /// Fetch and verify an inclusion proof.
    Proof {
        index: u64,
        #[arg(long)]
        size: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DevAction {
    /// Mint an identity token with the development identity provider key.
    Token {
        #[arg(long)]
        subject: String,
        #[arg(long, default_value_t = 3600)]
        ttl: i64,
        /// Defaults to `HCMR_HOME/idp.key`.
        #[arg(long)]
        idp_key: Option<PathBuf>,
        #[arg(long)]
        issuer: Option<String>,
    },
}
