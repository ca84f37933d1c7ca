//! Command line of the `hcmr-server` binary.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use hcmr_core::certify::ReviewPolicy;

use crate::config::{init_trust, InitOptions, RegistryConfig, CONFIG_FILE, DEFAULT_ISSUER};

#[derive(Debug, Parser)]
#[command(name = "hcmr-server", about = "Certified module registry service")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the registry described by a config file.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides listenAddress.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Generate CA, log and development identity keys plus a config file.
    InitTrust {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, default_value_t = 2)]
        quorum: u32,
        /// Identity allowed to sign revocation orders; repeatable.
        #[arg(long = "revocation-authority")]
        authorities: Vec<String>,
        #[arg(long, default_value = DEFAULT_ISSUER)]
        issuer: String,
    },
}

/// Entry point shared by the binary and test harnesses. Returns the exit code.
pub fn main_with_args(args: impl IntoIterator<Item = String>) -> i32 {
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match args.command {
        Command::Serve { config, listen } => {
            let mut config = match RegistryConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("hcmr-server: {e}");
                    return 2;
                }
            };
            if let Some(l) = listen {
                config.listen_address = l;
            }
            let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
            match runtime.block_on(crate::serve(config)) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("hcmr-server: {e}");
                    1
                }
            }
        }
        Command::InitTrust { dir, listen, quorum, authorities, issuer } => {
            let policy = match ReviewPolicy::new(quorum, authorities) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("hcmr-server: {e}");
                    return 2;
                }
            };
            let opts = InitOptions { listen_address: listen, review_policy: policy, identity_issuer: issuer };
            match init_trust(&dir, &opts) {
                Ok(_) => {
                    println!("{}", dir.join(CONFIG_FILE).display());
                    0
                }
                Err(e) => {
                    eprintln!("hcmr-server: {e}");
                    1
                }
            }
        }
    }
}
