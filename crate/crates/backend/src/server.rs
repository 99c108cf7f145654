//! Standalone HTTP server for the mock backends.

use std::future::Future;
use std::net::SocketAddr;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::Path;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::oneshot;
use uuid::Uuid;

use crate::mock;
use crate::protocol::{parse_request, BackendResponse, Op};

pub fn router() -> Router {
    Router::new()
        .route("/v1/health", get(|| async { Json(mock::mock_health()) }))
        .route("/v1/{op}", post(op_handler))
}

async fn op_handler(Path(op): Path<String>, body: Bytes) -> Response {
    let Ok(op) = op.parse::<Op>() else {
        return (StatusCode::NOT_FOUND, Json(BackendResponse::error(Uuid::nil(), format!("unknown op `{op}`")))).into_response();
    };
    let req = match parse_request(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, Json(BackendResponse::error(Uuid::nil(), e.to_string()))).into_response(),
    };
    if req.op() != op {
        let msg = format!("{} request posted to {}", req.op(), op.path());
        return (StatusCode::BAD_REQUEST, Json(BackendResponse::error(req.request_id, msg))).into_response();
    }
    match tokio::task::spawn_blocking(move || mock::handle(&req)).await {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(listener: tokio::net::TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    tracing::info!("mock backends listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router()).with_graceful_shutdown(shutdown).await
}

/// Binds `addr` and serves on the current thread until Ctrl-C. `on_bound`
/// receives the bound address (useful with port 0).
pub fn run_until_ctrl_c(addr: SocketAddr, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_bound(listener.local_addr()?);
        serve(listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}

/// A mock server on a background thread; stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl MockServer {
    /// Binds `127.0.0.1:port` (0 picks a free port).
    pub fn start(port: u16) -> std::io::Result<Self> {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(("127.0.0.1", port)))?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(serve(listener, async {
                let _ = stopped.await;
            }))
        });
        Ok(Self { addr, stop: Some(stop), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
