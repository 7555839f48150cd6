use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::task::JoinHandle;

use super::Gateway;
use crate::router::{ExecuteRequest, ExecuteResponse};

fn authorized(gw: &Gateway, headers: &HeaderMap) -> bool {
    let want = format!("Bearer {}", gw.config().token);
    headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()) == Some(want.as_str())
}

fn problem(code: StatusCode, message: impl Into<String>) -> Response {
    (code, Json(json!({"error": message.into()}))).into_response()
}

async fn execute(State(gw): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> Response {
    if !authorized(&gw, &headers) {
        tracing::warn!("execute rejected: bad bearer token");
        return problem(StatusCode::UNAUTHORIZED, "unauthorized");
    }
    let req: ExecuteRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(error = %e, "execute rejected: malformed body");
            return problem(StatusCode::UNPROCESSABLE_ENTITY, format!("malformed request: {e}"));
        }
    };
    if req.task.trim().is_empty() || req.call_id.trim().is_empty() {
        tracing::warn!(call_id = %req.call_id, "execute rejected: empty task or call_id");
        return problem(StatusCode::UNPROCESSABLE_ENTITY, "call_id and task must be non-empty");
    }
    match gw.execute(&req.call_id, &req.task, req.context.as_ref()).await {
        Ok(r) => {
            tracing::info!(call_id = %req.call_id, status = r.status.as_str(), steps = r.steps.len(), "execute done");
            Json(ExecuteResponse {
                call_id: req.call_id,
                status: r.status,
                summary: r.summary,
                steps: r.steps,
                artifacts: r.artifacts,
            })
            .into_response()
        }
        Err(e) => problem(StatusCode::UNPROCESSABLE_ENTITY, e),
    }
}

async fn state(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(store): Path<String>) -> Response {
    if !authorized(&gw, &headers) {
        return problem(StatusCode::UNAUTHORIZED, "unauthorized");
    }
    match gw.dump(&store) {
        Some(v) => Json(v).into_response(),
        None => problem(StatusCode::NOT_FOUND, format!("no store named `{store}`")),
    }
}

pub fn router(gw: Arc<Gateway>) -> Router {
    Router::new()
        .route("/execute", post(execute))
        .route("/healthz", get(|| async { "ok" }))
        .route("/state/{store}", get(state))
        .with_state(gw)
}

/// A gateway listening on a local port.
pub struct GatewayServer {
    addr: SocketAddr,
    gateway: Arc<Gateway>,
    task: JoinHandle<()>,
}

impl GatewayServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn shutdown(self) {
        self.task.abort();
    }

    pub async fn run(self) {
        let _ = self.task.await;
    }
}

pub async fn serve(addr: &str, gateway: Gateway) -> std::io::Result<GatewayServer> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let gateway = Arc::new(gateway);
    let app = router(Arc::clone(&gateway));
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!(error = %e, "gateway server stopped");
        }
    });
    tracing::info!(%addr, "gateway listening");
    Ok(GatewayServer { addr, gateway, task })
}
