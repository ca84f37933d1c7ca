//! Service configuration and trust material on disk.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hcmr_core::certify::{ProcessSandbox, ReviewPolicy, SandboxRunner};
use hcmr_core::registry::{Registry, RegistryError, RegistryOptions};
use hcmr_core::signing::{CertificateAuthority, PublicKey, ServiceKey};
use hcmr_core::time::{Clock, SystemClock};
use serde::{Deserialize, Serialize};

use crate::{AppState, ServerError};

pub const CONFIG_FILE: &str = "config.toml";
pub const CA_KEY_FILE: &str = "ca.key";
pub const CA_ROOT_FILE: &str = "ca.pub";
pub const LOG_KEY_FILE: &str = "log.key";
pub const LOG_PUB_FILE: &str = "log.pub";
pub const IDP_KEY_FILE: &str = "idp.key";
pub const IDP_PUB_FILE: &str = "idp.pub";
pub const DEFAULT_ISSUER: &str = "https://idp.local";

/// Parsed `config.toml`. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RegistryConfig {
    pub storage_root: PathBuf,
    pub listen_address: String,
    #[serde(default)]
    pub review_policy: ReviewPolicy,
    pub ca_root_path: PathBuf,
    pub log_key_path: PathBuf,
    /// Enables certificate issuance at `POST /v1/certificates`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ca_key_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_key_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_issuer: Option<String>,
}

impl RegistryConfig {
    pub fn load(path: &Path) -> Result<Self, ServerError> {
        let text = fs::read_to_string(path).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
        let mut config: RegistryConfig =
            toml::from_str(&text).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.storage_root);
        fix(&mut self.ca_root_path);
        fix(&mut self.log_key_path);
        if let Some(p) = self.ca_key_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.identity_key_path.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        self.review_policy.validate().map_err(|e| ServerError::Config(e.to_string()))?;
        if self.ca_key_path.is_some() && self.identity_key_path.is_none() {
            return Err(ServerError::Config("caKeyPath needs identityKeyPath".into()));
        }
        Ok(())
    }

    /// Opens the store, replays the log and loads the issuing CA if configured.
    pub fn open(&self, clock: Arc<dyn Clock>, sandbox: Arc<dyn SandboxRunner>) -> Result<AppState, ServerError> {
        ensure_writable(&self.storage_root)?;
        let key_err = |e: hcmr_core::signing::SigningError| ServerError::Config(e.to_string());
        let ca_root = PublicKey::read_file(&self.ca_root_path).map_err(key_err)?;
        let log_key = ServiceKey::read_file(&self.log_key_path).map_err(key_err)?;
        let ca = match (&self.ca_key_path, &self.identity_key_path) {
            (Some(ca_key), Some(idp)) => {
                let key = ServiceKey::read_file(ca_key).map_err(key_err)?;
                if key.public_key() != ca_root {
                    return Err(ServerError::Config("caKeyPath does not match caRootPath".into()));
                }
                let idp = PublicKey::read_file(idp).map_err(key_err)?;
                let issuer = self.identity_issuer.clone().unwrap_or_else(|| DEFAULT_ISSUER.to_string());
                Some(Arc::new(CertificateAuthority::new(key, issuer, idp)))
            }
            _ => None,
        };
        let options = RegistryOptions::new(self.review_policy.clone(), ca_root);
        let registry =
            Registry::open(&self.storage_root, log_key, clock.clone(), options, sandbox).map_err(|e| match e {
                RegistryError::CorruptStore(s) => ServerError::CorruptStore(s),
                other => ServerError::Registry(other),
            })?;
        Ok(AppState { registry: Arc::new(registry), ca, clock })
    }

    /// [`RegistryConfig::open`] with the system clock and process sandbox.
    pub fn open_default(&self) -> Result<AppState, ServerError> {
        self.open(Arc::new(SystemClock), Arc::new(ProcessSandbox::new()))
    }
}

fn ensure_writable(dir: &Path) -> Result<(), ServerError> {
    let err = |e: std::io::Error| ServerError::Config(format!("storageRoot {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(err)?;
    write_probe(dir).map_err(err)
}

fn write_probe(dir: &Path) -> std::io::Result<()> {
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)
}

/// Options for [`init_trust`].
#[derive(Debug, Clone)]
pub struct InitOptions {
    pub listen_address: String,
    pub review_policy: ReviewPolicy,
    pub identity_issuer: String,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            listen_address: "127.0.0.1:8080".into(),
            review_policy: ReviewPolicy::default(),
            identity_issuer: DEFAULT_ISSUER.into(),
        }
    }
}

/// Generates CA, log and development identity-provider keys under `dir` and
/// writes a config pointing at them. Refuses to overwrite existing keys.
pub fn init_trust(dir: &Path, opts: &InitOptions) -> Result<RegistryConfig, ServerError> {
    let io = |e: std::io::Error| ServerError::Config(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    for name in [CA_KEY_FILE, LOG_KEY_FILE, IDP_KEY_FILE, CONFIG_FILE] {
        if dir.join(name).exists() {
            return Err(ServerError::Config(format!("{} already exists", dir.join(name).display())));
        }
    }
    let write_pair = |key_file: &str, pub_file: &str| -> Result<(), ServerError> {
        let key = ServiceKey::generate();
        let path = dir.join(key_file);
        key.write_file(&path).map_err(|e| ServerError::Config(e.to_string()))?;
        restrict(&path).map_err(io)?;
        key.public_key().write_file(&dir.join(pub_file)).map_err(|e| ServerError::Config(e.to_string()))
    };
    write_pair(CA_KEY_FILE, CA_ROOT_FILE)?;
    write_pair(LOG_KEY_FILE, LOG_PUB_FILE)?;
    write_pair(IDP_KEY_FILE, IDP_PUB_FILE)?;

    let config = RegistryConfig {
        storage_root: "storage".into(),
        listen_address: opts.listen_address.clone(),
        review_policy: opts.review_policy.clone(),
        ca_root_path: CA_ROOT_FILE.into(),
        log_key_path: LOG_KEY_FILE.into(),
        ca_key_path: Some(CA_KEY_FILE.into()),
        identity_key_path: Some(IDP_PUB_FILE.into()),
        identity_issuer: Some(opts.identity_issuer.clone()),
    };
    let text = toml::to_string(&config).map_err(|e| ServerError::Config(e.to_string()))?;
    fs::write(dir.join(CONFIG_FILE), text).map_err(io)?;
    RegistryConfig::load(&dir.join(CONFIG_FILE))
}

#[cfg(unix)]
fn restrict(path: &Path) -> std::io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(0o600))
}

#[cfg(not(unix))]
fn restrict(_: &Path) -> std::io::Result<()> {
    Ok(())
}
