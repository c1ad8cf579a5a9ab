use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tracing::info;

use super::SimWorld;
use crate::error::{Error, Result};
use crate::wire::Route;

/// A world served over HTTP on a background thread. Dropping the handle
/// stops the server.
pub struct SimServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl SimServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn stop(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

/// Binds `host:port` (port 0 picks a free port) and serves all five routes.
pub fn serve_sim(world: SimWorld, host: &str, port: u16) -> Result<SimServer> {
    let listener = TcpListener::bind((host, port)).map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => Error::PortInUse(port),
        _ => Error::Io(e),
    })?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let world = Arc::new(world);

    let thread = std::thread::Builder::new()
        .name(format!("simworld-{}", addr.port()))
        .spawn(move || {
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
                .expect("tokio runtime");
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let app = router(world);
                info!(%addr, "simworld serving");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })?;

    Ok(SimServer {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

fn router(world: Arc<SimWorld>) -> Router {
    let mut app = Router::new();
    for route in Route::ALL {
        app = app.route(
            route.path(),
            post(move |State(w): State<Arc<SimWorld>>, body: Bytes| async move { handle(&w, route, &body) }),
        );
    }
    app.with_state(world)
}

fn handle(world: &SimWorld, route: Route, body: &[u8]) -> Response {
    let parsed: Value = match serde_json::from_slice(body) {
        Ok(v) => v,
        Err(e) => return error_response(400, format!("invalid JSON body: {e}")),
    };
    match world.handle(route, &parsed) {
        Ok(v) => (StatusCode::OK, Json(v)).into_response(),
        Err((code, msg)) => error_response(code, msg),
    }
}

fn error_response(code: u16, message: String) -> Response {
    let status = StatusCode::from_u16(code).unwrap_or(StatusCode::BAD_REQUEST);
    (status, Json(json!({ "error": message }))).into_response()
}
