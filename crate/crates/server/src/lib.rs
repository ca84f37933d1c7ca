//! HTTP service for the certified module registry.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use hcmr_core::registry::{Registry, RegistryError};
use hcmr_core::signing::CertificateAuthority;
use hcmr_core::time::Clock;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

pub mod api;
pub mod cmd;
pub mod config;

pub use api::router;
pub use config::RegistryConfig;

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
    /// Issues signing certificates when present.
    pub ca: Option<Arc<CertificateAuthority>>,
    pub clock: Arc<dyn Clock>,
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("address in use: {0}")]
    AddressInUse(String),
    #[error("corrupt store: {0}")]
    CorruptStore(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Registry(RegistryError),
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServerError::AddressInUse(addr.to_string()),
        _ => ServerError::Io(format!("{addr}: {e}")),
    })
}

/// Opens the configured store and serves until ctrl-c.
pub async fn serve(config: RegistryConfig) -> Result<(), ServerError> {
    let state = config.open_default()?;
    let listener = bind(&config.listen_address).await?;
    eprintln!("hcmr-server listening on {}", listener.local_addr().map_err(|e| ServerError::Io(e.to_string()))?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServerError::Io(e.to_string()))
}

/// A server on its own runtime thread, stopped on drop.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    /// Serves `state` on `addr` (use port 0 for an ephemeral port).
    pub fn start(state: AppState, addr: &str) -> Result<Self, ServerError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(|e| ServerError::Io(e.to_string()))?;
        let listener = runtime.block_on(bind(addr))?;
        let addr = listener.local_addr().map_err(|e| ServerError::Io(e.to_string()))?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let _ = axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(ServerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}
