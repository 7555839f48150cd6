//! Async WebSocket client around [`SessionState`].
//!
//! One writer task drains an ordered channel into the socket and one reader
//! task demultiplexes incoming frames. Both go through a single mutex that
//! owns the session, so every frame gets its seq and its place in the send
//! queue atomically.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::sync::{mpsc, watch};
use tokio_tungstenite::tungstenite::Message;

use super::capture::{CaptureLine, CaptureLog};
use super::config::SessionConfig;
use super::message::{LiveMessage, ToolResultPayload};
use super::session::{Effect, Phase, SessionError, SessionState, Transcript};
use crate::media::MediaItem;
use crate::tool::ToolResult;

/// How long to wait for the server to acknowledge setup.
const ACK_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("could not reach {endpoint} after {attempts} attempts: {detail}")]
    Connect { endpoint: String, attempts: u32, detail: String },
    #[error("server did not acknowledge setup within {0:?}")]
    AckTimeout(Duration),
    #[error("connection lost")]
    Disconnected,
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Delays slept between connection attempts.
pub fn backoff_schedule(cfg: &SessionConfig) -> Vec<Duration> {
    (0..cfg.reconnect_max_attempts)
        .map(|i| Duration::from_millis(cfg.reconnect_backoff_ms.saturating_mul(1 << i.min(20))))
        .collect()
}

struct Inner {
    state: SessionState,
    out: Option<mpsc::UnboundedSender<Message>>,
    generation: u64,
    capture: CaptureLog,
}

#[derive(Clone)]
pub struct LiveClient {
    inner: Arc<Mutex<Inner>>,
    cfg: Arc<SessionConfig>,
    effects: mpsc::UnboundedSender<Effect>,
    phase: watch::Receiver<Phase>,
    phase_tx: Arc<watch::Sender<Phase>>,
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn dial(cfg: &SessionConfig) -> Result<Ws, ClientError> {
    let mut delays = backoff_schedule(cfg).into_iter();
    let mut attempts = 0;
    loop {
        attempts += 1;
        match tokio_tungstenite::connect_async(cfg.endpoint.as_str()).await {
            Ok((ws, _)) => return Ok(ws),
            Err(e) => match delays.next() {
                Some(d) => {
                    tracing::debug!(attempt = attempts, delay_ms = d.as_millis() as u64, error = %e, "connect failed");
                    tokio::time::sleep(d).await;
                }
                None => {
                    return Err(ClientError::Connect {
                        endpoint: cfg.endpoint.clone(),
                        attempts,
                        detail: e.to_string(),
                    })
                }
            },
        }
    }
}

impl LiveClient {
    /// Connect, send setup and wait for the acknowledgment. Effects from the
    /// server arrive on the returned receiver in wire order.
    pub async fn connect(cfg: SessionConfig) -> Result<(Self, mpsc::UnboundedReceiver<Effect>), ClientError> {
        let (effects, rx) = mpsc::unbounded_channel();
        let (phase_tx, phase) = watch::channel(Phase::Connecting);
        let client = Self {
            inner: Arc::new(Mutex::new(Inner {
                state: SessionState::new(&cfg),
                out: None,
                generation: 0,
                capture: CaptureLog::default(),
            })),
            cfg: Arc::new(cfg),
            effects,
            phase,
            phase_tx: Arc::new(phase_tx),
        };
        match client.establish().await {
            Ok(()) => Ok((client, rx)),
            Err(e) => {
                client.lock().state.fail();
                client.publish();
                Err(e)
            }
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("session lock poisoned")
    }

    fn publish(&self) {
        let p = self.lock().state.phase();
        self.phase_tx.send_replace(p);
    }

    async fn establish(&self) -> Result<(), ClientError> {
        let ws = dial(&self.cfg).await?;
        let (mut sink, mut stream) = ws.split();
        let (tx, mut out_rx) = mpsc::unbounded_channel::<Message>();

        let generation = {
            let mut g = self.lock();
            g.generation += 1;
            let setup = g.state.setup_message(&self.cfg)?;
            let text = setup.encode();
            g.state.count_bytes_out(text.len());
            g.capture.push(CaptureLine::out(&setup));
            tx.send(Message::text(text)).map_err(|_| ClientError::Disconnected)?;
            g.out = Some(tx);
            g.generation
        };

        tokio::spawn(async move {
            while let Some(m) = out_rx.recv().await {
                if sink.send(m).await.is_err() {
                    break;
                }
            }
            let _ = sink.close().await;
        });

        let reader = self.clone();
        tokio::spawn(async move {
            while let Some(frame) = stream.next().await {
                let text = match frame {
                    Ok(Message::Text(t)) => t.to_string(),
                    Ok(Message::Close(_)) | Err(_) => break,
                    Ok(_) => continue,
                };
                let effects = {
                    let mut g = reader.lock();
                    if g.generation != generation {
                        return;
                    }
                    g.capture.push(CaptureLine::incoming(text.clone()));
                    g.state.handle_frame(&text)
                };
                reader.publish();
                for e in effects {
                    let _ = reader.effects.send(e);
                }
            }
            let lost = {
                let mut g = reader.lock();
                if g.generation != generation || g.state.phase().is_terminal() {
                    false
                } else {
                    g.out = None;
                    true
                }
            };
            if lost {
                let _ = reader.effects.send(Effect::Disconnected);
            }
        });

        let mut phase = self.phase.clone();
        let ready = tokio::time::timeout(ACK_TIMEOUT, phase.wait_for(|p| *p != Phase::Connecting)).await;
        match ready {
            Ok(Ok(p)) if !p.is_terminal() => Ok(()),
            Ok(_) => Err(ClientError::Disconnected),
            Err(_) => Err(ClientError::AckTimeout(ACK_TIMEOUT)),
        }
    }

    fn send_with(
        &self,
        make: impl FnOnce(&mut SessionState) -> Result<LiveMessage, SessionError>,
    ) -> Result<LiveMessage, ClientError> {
        let msg = {
            let mut g = self.lock();
            if g.out.is_none() && !g.state.phase().is_terminal() {
                return Err(ClientError::Disconnected);
            }
            let msg = make(&mut g.state)?;
            let text = msg.encode();
            g.state.count_bytes_out(text.len());
            g.capture.push(CaptureLine::out(&msg));
            let sent = g.out.as_ref().map(|o| o.send(Message::text(text)).is_ok()).unwrap_or(false);
            if !sent {
                return Err(ClientError::Disconnected);
            }
            msg
        };
        self.publish();
        Ok(msg)
    }

    pub fn send_media(&self, item: &MediaItem) -> Result<LiveMessage, ClientError> {
        self.send_with(|s| s.send_media(item))
    }

    pub fn send_text(&self, text: &str) -> Result<LiveMessage, ClientError> {
        self.send_with(|s| s.send_user_text(text))
    }

    pub fn submit_tool_result(&self, result: &ToolResult) -> Result<LiveMessage, ClientError> {
        self.send_with(|s| s.submit_tool_result(result))
    }

    pub fn submit_formatted(&self, payload: ToolResultPayload) -> Result<LiveMessage, ClientError> {
        self.send_with(|s| s.submit_formatted(payload))
    }

    /// Tear down the current connection and open a fresh one. Returns the
    /// call ids the old connection was still waiting on.
    pub async fn reconnect(&self) -> Result<Vec<String>, ClientError> {
        let dropped = {
            let mut g = self.lock();
            let dropped = g.state.begin_reconnect()?;
            g.out = None;
            g.capture.push(CaptureLine::ctl("reconnect"));
            dropped
        };
        self.publish();
        if let Err(e) = self.establish().await {
            {
                let mut g = self.lock();
                g.state.fail();
                g.capture.push(CaptureLine::ctl("fail"));
            }
            self.publish();
            return Err(e);
        }
        Ok(dropped)
    }

    /// Close the session. Dropping the sender ends the writer task, which
    /// closes the socket.
    pub fn close(&self) {
        {
            let mut g = self.lock();
            if g.state.phase().is_terminal() {
                return;
            }
            g.state.close();
            g.out = None;
            g.capture.push(CaptureLine::ctl("close"));
        }
        self.publish();
    }

    pub fn phase(&self) -> Phase {
        self.lock().state.phase()
    }

    /// Resolves when the session reaches `want` or a terminal phase.
    pub async fn wait_phase(&self, want: Phase) -> Phase {
        let mut rx = self.phase.clone();
        let p = rx.wait_for(|p| *p == want || p.is_terminal()).await.map(|p| *p);
        p.unwrap_or(Phase::Failed)
    }

    pub fn transcript(&self) -> Transcript {
        self.lock().state.transcript().clone()
    }

    pub fn stats(&self) -> super::session::SessionStats {
        self.lock().state.stats().clone()
    }

    pub fn capture(&self) -> CaptureLog {
        self.lock().capture.clone()
    }
}
