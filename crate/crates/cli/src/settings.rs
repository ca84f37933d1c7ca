//! Flag, environment and config-file resolution.
//!
//! Precedence: flag, then environment, then `HCMR_HOME/config`, then defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use hcmr_core::certify::DEFAULT_QUORUM;
use hcmr_core::signing::PublicKey;
use serde::Deserialize;

use crate::args::{Cli, OutputFormat};
use crate::Failure;

pub const ENV_REGISTRY: &str = "HCMR_REGISTRY_URL";
pub const ENV_TOKEN: &str = "HCMR_IDENTITY_TOKEN";
pub const ENV_HOME: &str = "HCMR_HOME";
pub const DEFAULT_REGISTRY: &str = "http://127.0.0.1:8080";
pub const CONFIG_FILE: &str = "config";

/// Keys accepted in `HCMR_HOME/config` (TOML).
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ConfigFile {
    pub registry: Option<String>,
    pub identity_token: Option<String>,
    pub quorum_policy: Option<u32>,
    pub ca_root_path: Option<PathBuf>,
    pub log_key_path: Option<PathBuf>,
    #[serde(default)]
    pub revocation_authorities: BTreeSet<String>,
    pub output: Option<OutputFormat>,
    pub idp_key_path: Option<PathBuf>,
    pub identity_issuer: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub home: PathBuf,
    pub registry: String,
    pub identity_token: Option<String>,
    pub quorum: u32,
    pub ca_root_path: Option<PathBuf>,
    pub log_key_path: Option<PathBuf>,
    pub revocation_authorities: BTreeSet<String>,
    pub output: OutputFormat,
    pub idp_key_path: PathBuf,
    pub identity_issuer: Option<String>,
}

impl Settings {
    pub fn resolve(cli: &Cli, env: &BTreeMap<String, String>) -> Result<Self, Failure> {
        let home = match env.get(ENV_HOME) {
            Some(h) if !h.is_empty() => PathBuf::from(h),
            _ => PathBuf::from(env.get("HOME").map(String::as_str).unwrap_or(".")).join(".hcmr"),
        };
        let file = load_config(&home.join(CONFIG_FILE))?;
        let in_home = |p: PathBuf| if p.is_relative() { home.join(p) } else { p };
        let existing = |name: &str| Some(home.join(name)).filter(|p| p.exists());

        let quorum = cli.quorum_policy.or(file.quorum_policy).unwrap_or(DEFAULT_QUORUM);
        if quorum < 1 {
            return Err(Failure::Usage("--quorum-policy must be at least 1".into()));
        }
        Ok(Settings {
            registry: cli
                .registry
                .clone()
                .or_else(|| env.get(ENV_REGISTRY).cloned().filter(|s| !s.is_empty()))
                .or(file.registry)
                .unwrap_or_else(|| DEFAULT_REGISTRY.into())
                .trim_end_matches('/')
                .to_string(),
            identity_token: cli
                .identity_token
                .clone()
                .or_else(|| env.get(ENV_TOKEN).cloned().filter(|s| !s.is_empty()))
                .or(file.identity_token),
            quorum,
            ca_root_path: cli.ca_root.clone().or(file.ca_root_path.map(in_home)).or_else(|| existing("ca.pub")),
            log_key_path: cli.log_key.clone().or(file.log_key_path.map(in_home)).or_else(|| existing("log.pub")),
            revocation_authorities: file.revocation_authorities,
            output: cli.output.or(file.output).unwrap_or(OutputFormat::Json),
            idp_key_path: file.idp_key_path.map(in_home).unwrap_or_else(|| home.join("idp.key")),
            identity_issuer: file.identity_issuer,
            home,
        })
    }

    pub fn token(&self) -> Result<&str, Failure> {
        self.identity_token
            .as_deref()
            .ok_or_else(|| Failure::Usage(format!("no identity token: pass --identity-token or set {ENV_TOKEN}")))
    }

    pub fn ca_root(&self) -> Result<Option<PublicKey>, Failure> {
        self.ca_root_path.as_deref().map(read_key).transpose()
    }

    pub fn require_ca_root(&self) -> Result<PublicKey, Failure> {
        self.ca_root()?.ok_or_else(|| Failure::Usage("no CA root configured: pass --ca-root or set caRootPath".into()))
    }

    pub fn require_log_key(&self) -> Result<PublicKey, Failure> {
        let path = self
            .log_key_path
            .as_deref()
            .ok_or_else(|| Failure::Usage("no log key configured: pass --log-key or set logKeyPath".into()))?;
        read_key(path)
    }
}

fn read_key(path: &Path) -> Result<PublicKey, Failure> {
    PublicKey::read_file(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn load_config(path: &Path) -> Result<ConfigFile, Failure> {
    match std::fs::read_to_string(path) {
        Ok(text) => toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ConfigFile::default()),
        Err(e) => Err(Failure::Usage(format!("{}: {e}", path.display()))),
    }
}
