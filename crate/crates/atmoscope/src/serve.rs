//! `atmoscope serve`: front-end, optional local workers and the HTTP API in
//! one process.

use std::future::Future;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;

use crate::api::{router, serve_http, AppState};
use crate::cluster::supervisor::{Supervisor, SupervisorConfig, DEFAULT_BACKOFF};
use crate::cluster::FrontEnd;
use crate::config::Config;
use crate::store::ReadOnlyCatalog;

/// Runs until `shutdown` resolves, then asks workers to exit. Prints the
/// bound addresses on stdout.
pub async fn serve(cfg: &Config, config_path: Option<&Path>, shutdown: impl Future<Output = ()> + Send + 'static) -> anyhow::Result<()> {
    let catalog = ReadOnlyCatalog::open(&cfg.catalog).with_context(|| format!("opening catalog {}", cfg.catalog.display()))?;
    let fe = FrontEnd::start(Arc::new(catalog), cfg.cluster_listen, cfg.heartbeat_interval())
        .await
        .with_context(|| format!("binding worker listener {}", cfg.cluster_listen))?;
    println!("cluster listening on {}", fe.worker_addr());

    let supervisor = if cfg.workers > 0 {
        let mut args = vec!["worker".into()];
        if let Some(p) = config_path {
            args.push("--config".into());
            args.push(p.as_os_str().to_owned());
        }
        args.push("--frontend".into());
        args.push(fe.worker_addr().to_string().into());
        let sc = SupervisorConfig {
            program: std::env::current_exe().context("locating own executable")?,
            args,
            backoff: DEFAULT_BACKOFF.to_vec(),
        };
        Some(Arc::new(Supervisor::spawn(cfg.workers as usize, sc)?))
    } else {
        None
    };

    let listener = tokio::net::TcpListener::bind(cfg.listen).await.with_context(|| format!("binding {}", cfg.listen))?;
    println!("http listening on http://{}", listener.local_addr()?);
    let mut state = AppState::new(fe.clone());
    state.supervisor = supervisor.clone();
    let served = serve_http(listener, router(state, cfg.static_dir.clone()), shutdown).await;

    tracing::info!("shutting down");
    fe.shutdown();
    if let Some(s) = supervisor {
        tokio::task::spawn_blocking(move || s.stop(Duration::from_secs(5))).await?;
    }
    served.context("http server")
}
