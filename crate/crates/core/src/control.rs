//! Orchestrator control channel.
//!
//! A WebSocket endpoint that streams timeline events as
//! `{"seq": n, "event": {...}}` and accepts [`ControlCommand`] JSON such as
//! `{"cmd": "utterance", "text": "..."}`. A new subscriber first receives
//! every event so far, so a reconnecting viewer can backfill by `seq`.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use crate::agent::{ControlCommand, TimelineEvent};

pub const DEFAULT_CONTROL_PORT: u16 = 18790;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlEvent {
    pub seq: u64,
    pub event: TimelineEvent,
}

type History = Arc<Mutex<Vec<ControlEvent>>>;

pub struct ControlServer {
    addr: SocketAddr,
    tasks: Vec<JoinHandle<()>>,
}

impl ControlServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub fn shutdown(self) {
        for t in self.tasks {
            t.abort();
        }
    }
}

/// Serve the channel. Events are read from `events`; commands from any
/// subscriber are forwarded to `commands`.
pub async fn serve_control(
    addr: &str,
    mut events: mpsc::UnboundedReceiver<TimelineEvent>,
    commands: mpsc::UnboundedSender<ControlCommand>,
) -> std::io::Result<ControlServer> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let history: History = Arc::default();
    let (fanout, _) = broadcast::channel::<ControlEvent>(1024);

    let pump = {
        let history = Arc::clone(&history);
        let fanout = fanout.clone();
        tokio::spawn(async move {
            while let Some(event) = events.recv().await {
                let ev = {
                    let mut h = history.lock().expect("history lock");
                    let ev = ControlEvent { seq: h.len() as u64, event };
                    h.push(ev.clone());
                    ev
                };
                let _ = fanout.send(ev);
            }
        })
    };

    let accept = tokio::spawn(async move {
        loop {
            let Ok((tcp, peer)) = listener.accept().await else { continue };
            let history = Arc::clone(&history);
            let live = fanout.subscribe();
            let commands = commands.clone();
            tokio::spawn(async move {
                if let Err(e) = subscriber(tcp, history, live, commands).await {
                    tracing::debug!(%peer, error = %e, "control subscriber ended");
                }
            });
        }
    });
    tracing::info!(%addr, "control channel listening");
    Ok(ControlServer { addr, tasks: vec![pump, accept] })
}

async fn subscriber(
    tcp: tokio::net::TcpStream,
    history: History,
    mut live: broadcast::Receiver<ControlEvent>,
    commands: mpsc::UnboundedSender<ControlCommand>,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(tcp).await?;
    let (mut sink, mut stream) = ws.split();
    let backlog = history.lock().expect("history lock").clone();
    let mut next = 0;
    for ev in backlog {
        next = ev.seq + 1;
        sink.send(Message::text(serde_json::to_string(&ev).expect("event serializes"))).await?;
    }
    loop {
        tokio::select! {
            ev = live.recv() => match ev {
                Ok(ev) if ev.seq < next => {}
                Ok(ev) => {
                    next = ev.seq + 1;
                    sink.send(Message::text(serde_json::to_string(&ev).expect("event serializes"))).await?;
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "control subscriber lagged");
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            frame = stream.next() => {
                let text = match frame {
                    Some(Ok(Message::Text(t))) => t.to_string(),
                    Some(Ok(Message::Close(_))) | None => break,
                    Some(Ok(_)) => continue,
                    Some(Err(e)) => return Err(e),
                };
                match serde_json::from_str::<ControlCommand>(&text) {
                    Ok(cmd) => {
                        let _ = commands.send(cmd);
                    }
                    Err(e) => {
                        let reply = serde_json::json!({"error": format!("bad command: {e}")});
                        sink.send(Message::text(reply.to_string())).await?;
                    }
                }
            }
        }
    }
    Ok(())
}
