use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::Request;
use axum::Router;
use hyper_util::rt::{TokioExecutor, TokioIo};
use hyper_util::server::conn::auto;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio_rustls::rustls::ServerConfig;
use tokio_rustls::TlsAcceptor;
use tower::ServiceExt;
use tower_http::services::{ServeDir, ServeFile};
use tracing::{debug, info};

use crate::routes::api_router;
use crate::state::AppState;
use crate::ServerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiConfig {
    pub listen: SocketAddr,
    pub tls_cert: Option<PathBuf>,
    pub tls_key: Option<PathBuf>,
    /// Built dashboard bundle served at `/`.
    pub dashboard_dir: Option<PathBuf>,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self { listen: SocketAddr::from(([127, 0, 0, 1], 8080)), tls_cert: None, tls_key: None, dashboard_dir: None }
    }
}

impl ApiConfig {
    /// Loads the TLS identity, if one is configured. Giving only one of the
    /// certificate and key is an error.
    pub fn tls(&self) -> Result<Option<Arc<ServerConfig>>, ServerError> {
        match (&self.tls_cert, &self.tls_key) {
            (None, None) => Ok(None),
            (Some(cert), Some(key)) => Ok(Some(lify_mqtt::tls::server_config(cert, key)?)),
            _ => Err(ServerError::Config("tls_cert and tls_key must be given together".into())),
        }
    }
}

/// The complete application: `/api/v1` plus the dashboard bundle.
pub fn app(state: AppState, dashboard_dir: Option<&std::path::Path>) -> Router {
    let router = Router::new().nest("/api/v1", api_router());
    let router = match dashboard_dir {
        Some(dir) => {
            let spa = ServeDir::new(dir).not_found_service(ServeFile::new(dir.join("index.html")));
            router.fallback_service(spa)
        }
        None => router,
    };
    router.with_state(state)
}

/// Serves until `shutdown` turns true, then drains open requests.
pub async fn serve_api(
    listener: TcpListener,
    state: AppState,
    config: &ApiConfig,
    mut shutdown: watch::Receiver<bool>,
) -> Result<(), ServerError> {
    let tls = config.tls()?;
    let app = app(state.clone(), config.dashboard_dir.as_deref());
    let addr = listener.local_addr().map_err(ServerError::Io)?;
    let stopper = {
        let state = state.clone();
        let mut shutdown = shutdown.clone();
        async move {
            let _ = shutdown.wait_for(|s| *s).await;
            state.stop_streams();
        }
    };
    match tls {
        None => {
            info!(%addr, "api listening (http)");
            axum::serve(listener, app).with_graceful_shutdown(stopper).await.map_err(ServerError::Io)
        }
        Some(tls) => {
            info!(%addr, "api listening (https)");
            let acceptor = TlsAcceptor::from(tls);
            tokio::spawn(stopper);
            loop {
                let (tcp, peer) = tokio::select! {
                    accepted = listener.accept() => match accepted {
                        Ok(a) => a,
                        Err(e) => {
                            debug!(error = %e, "accept failed");
                            continue;
                        }
                    },
                    _ = shutdown.wait_for(|s| *s) => return Ok(()),
                };
                let acceptor = acceptor.clone();
                let app = app.clone();
                tokio::spawn(async move {
                    let stream = match acceptor.accept(tcp).await {
                        Ok(s) => s,
                        Err(e) => {
                            debug!(%peer, error = %e, "tls handshake failed");
                            return;
                        }
                    };
                    let service = hyper::service::service_fn(move |req: Request<hyper::body::Incoming>| {
                        app.clone().oneshot(req.map(axum::body::Body::new))
                    });
                    if let Err(e) = auto::Builder::new(TokioExecutor::new())
                        .serve_connection_with_upgrades(TokioIo::new(stream), service)
                        .await
                    {
                        debug!(%peer, error = %e, "connection ended with error");
                    }
                });
            }
        }
    }
}
