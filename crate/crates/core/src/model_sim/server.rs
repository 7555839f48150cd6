use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use super::engine::{ModelEngine, ScriptedTurn};
use super::policy::TurnPolicy;
use crate::protocol::{CaptureLine, CaptureLog};

#[derive(Debug, Clone)]
pub struct ModelServerConfig {
    pub policy: Arc<TurnPolicy>,
    pub script: Vec<ScriptedTurn>,
    /// Seeds call-id generation; every connection starts from it.
    pub seed: u64,
}

impl Default for ModelServerConfig {
    fn default() -> Self {
        Self { policy: Arc::new(TurnPolicy::default()), script: Vec::new(), seed: 0 }
    }
}

/// WebSocket front end. Each connection gets its own [`ModelEngine`] and its
/// frames are logged in capture format (client frames as `out`).
pub struct ModelServer {
    addr: SocketAddr,
    logs: Arc<Mutex<Vec<CaptureLog>>>,
    task: JoinHandle<()>,
}

impl ModelServer {
    pub async fn bind(addr: &str, cfg: ModelServerConfig) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let logs: Arc<Mutex<Vec<CaptureLog>>> = Arc::default();
        let cfg = Arc::new(cfg);
        let task = {
            let logs = Arc::clone(&logs);
            tokio::spawn(async move {
                loop {
                    let Ok((tcp, peer)) = listener.accept().await else { continue };
                    let cfg = Arc::clone(&cfg);
                    let logs = Arc::clone(&logs);
                    tokio::spawn(async move {
                        if let Err(e) = serve_connection(tcp, cfg, logs).await {
                            tracing::debug!(%peer, error = %e, "model connection ended");
                        }
                    });
                }
            })
        };
        tracing::info!(%addr, "model server listening");
        Ok(Self { addr, logs, task })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    /// Frame logs of every connection so far, in accept order.
    pub fn logs(&self) -> Vec<CaptureLog> {
        self.logs.lock().expect("log lock").clone()
    }

    pub fn shutdown(self) {
        self.task.abort();
    }

    /// Serve until the task is aborted or the process ends.
    pub async fn run(self) {
        let _ = self.task.await;
    }
}

async fn serve_connection(
    tcp: tokio::net::TcpStream,
    cfg: Arc<ModelServerConfig>,
    logs: Arc<Mutex<Vec<CaptureLog>>>,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(tcp).await?;
    let (mut sink, mut stream) = ws.split();
    let mut engine = ModelEngine::new(Arc::clone(&cfg.policy), cfg.script.clone(), cfg.seed);
    let slot = {
        let mut l = logs.lock().expect("log lock");
        l.push(CaptureLog::default());
        l.len() - 1
    };
    let record = |line: CaptureLine| logs.lock().expect("log lock")[slot].push(line);
    while let Some(frame) = stream.next().await {
        let text = match frame? {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        record(CaptureLine { dir: crate::protocol::Direction::Out, frame: Some(text.clone()), event: None });
        for msg in engine.on_frame(&text) {
            let out = msg.encode();
            record(CaptureLine::incoming(out.clone()));
            sink.send(Message::text(out)).await?;
        }
    }
    record(CaptureLine::ctl("close"));
    Ok(())
}
