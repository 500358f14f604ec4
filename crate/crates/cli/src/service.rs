//! Realtime session service. A single simulation thread owns the
//! [`Session`]; websocket clients talk to it through a command queue that is
//! drained at step boundaries, and read frames from a latest-wins channel.

use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ecpsim::log::TrajectoryLog;
use ecpsim::protocol::{ClientMessage, ServerMessage};
use ecpsim::scene::ScheduledMessage;
use ecpsim::session::Session;
use futures_util::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{oneshot, watch};
use tokio_tungstenite::tungstenite::Message;

pub const DEFAULT_PORT: u16 = 8765;
pub const DEFAULT_FRAME_HZ: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceConfig {
    /// Simulated seconds per wall-clock second. Zero or non-finite runs
    /// unpaced.
    pub rt_factor: f64,
    pub frame_hz: f64,
    /// Keep every step record. Events are always kept.
    pub keep_records: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            rt_factor: 1.0,
            frame_hz: DEFAULT_FRAME_HZ,
            keep_records: false,
        }
    }
}

/// Everything needed to replay a service session offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub ticks: u64,
    pub schedule: Vec<ScheduledMessage>,
}

impl SessionRecord {
    pub fn schedule_pairs(&self) -> Vec<(u64, ClientMessage)> {
        self.schedule.iter().map(|m| (m.tick, m.message.clone())).collect()
    }
}

#[derive(Debug)]
pub struct SimOutcome {
    pub log: TrajectoryLog,
    pub record: SessionRecord,
}

enum Command {
    Apply(ClientMessage, oneshot::Sender<Result<(), String>>),
    Shutdown,
}

/// Handle to a running simulation thread.
pub struct SimHandle {
    commands: mpsc::Sender<Command>,
    frames: watch::Receiver<Arc<str>>,
    thread: Option<JoinHandle<anyhow::Result<SimOutcome>>>,
}

#[derive(Clone)]
pub struct SimClient {
    commands: mpsc::Sender<Command>,
    pub frames: watch::Receiver<Arc<str>>,
}

impl SimClient {
    /// Queues a message for the next step boundary and waits for the verdict.
    pub async fn apply(&self, msg: ClientMessage) -> Result<(), String> {
        let (tx, rx) = oneshot::channel();
        self.commands
            .send(Command::Apply(msg, tx))
            .map_err(|_| "simulation has stopped".to_string())?;
        rx.await.map_err(|_| "simulation has stopped".to_string())?
    }
}

impl SimHandle {
    pub fn spawn(mut session: Session, config: ServiceConfig) -> Self {
        session.keep_records = config.keep_records;
        let (commands, queue) = mpsc::channel();
        let (publish, frames) = watch::channel::<Arc<str>>(session.frame(0).to_json().into());
        let thread = std::thread::Builder::new()
            .name("ecpsim-sim".into())
            .spawn(move || sim_loop(session, config, queue, publish))
            .expect("spawning the simulation thread");
        Self {
            commands,
            frames,
            thread: Some(thread),
        }
    }

    pub fn client(&self) -> SimClient {
        SimClient {
            commands: self.commands.clone(),
            frames: self.frames.clone(),
        }
    }

    /// Stops at the next step boundary and returns the log and the applied
    /// control schedule.
    pub fn shutdown(mut self) -> anyhow::Result<SimOutcome> {
        let _ = self.commands.send(Command::Shutdown);
        let thread = self.thread.take().expect("joined once");
        thread.join().map_err(|_| anyhow::anyhow!("simulation thread panicked"))?
    }
}

impl Drop for SimHandle {
    fn drop(&mut self) {
        if let Some(t) = self.thread.take() {
            let _ = self.commands.send(Command::Shutdown);
            let _ = t.join();
        }
    }
}

fn sim_loop(
    mut session: Session,
    config: ServiceConfig,
    queue: mpsc::Receiver<Command>,
    publish: watch::Sender<Arc<str>>,
) -> anyhow::Result<SimOutcome> {
    let h = session.spec().h;
    let paced = config.rt_factor.is_finite() && config.rt_factor > 0.0;
    let frame_period = Duration::from_secs_f64(1.0 / config.frame_hz);
    let start = Instant::now();
    let mut next_frame = start + frame_period;
    let mut seq = 1;
    let mut schedule = Vec::new();

    loop {
        loop {
            match queue.try_recv() {
                Ok(Command::Apply(msg, reply)) => {
                    let tick = session.tick;
                    let verdict = session.apply(&msg).map_err(|e| e.to_string());
                    if verdict.is_ok() {
                        schedule.push(ScheduledMessage { tick, message: msg });
                    }
                    let _ = reply.send(verdict);
                }
                Ok(Command::Shutdown) | Err(mpsc::TryRecvError::Disconnected) => {
                    return Ok(SimOutcome {
                        log: session.log,
                        record: SessionRecord {
                            ticks: session.tick,
                            schedule,
                        },
                    });
                }
                Err(mpsc::TryRecvError::Empty) => break,
            }
        }

        session.tick()?;

        let now = Instant::now();
        if now >= next_frame {
            publish.send_replace(session.frame(seq).to_json().into());
            seq += 1;
            while next_frame <= now {
                next_frame += frame_period;
            }
        }
        if paced {
            let due = start + Duration::from_secs_f64(session.tick as f64 * h / config.rt_factor);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
    }
}

/// Accepts websocket clients until the listener fails or the task is dropped.
pub async fn serve(listener: TcpListener, client: SimClient) -> anyhow::Result<()> {
    loop {
        let (stream, _) = listener.accept().await?;
        let client = client.clone();
        tokio::spawn(async move {
            if let Ok(ws) = tokio_tungstenite::accept_async(stream).await {
                let _ = handle_client(ws, client).await;
            }
        });
    }
}

async fn handle_client<S>(ws: tokio_tungstenite::WebSocketStream<S>, client: SimClient) -> anyhow::Result<()>
where
    S: tokio::io::AsyncRead + tokio::io::AsyncWrite + Unpin,
{
    let (mut tx, mut rx) = ws.split();
    let mut frames = client.frames.clone();
    frames.mark_changed();
    loop {
        tokio::select! {
            changed = frames.changed() => {
                if changed.is_err() {
                    return Ok(());
                }
                let text = frames.borrow_and_update().clone();
                tx.send(Message::text(text.as_ref())).await?;
            }
            incoming = rx.next() => {
                let text = match incoming {
                    None => return Ok(()),
                    Some(Err(e)) => return Err(e.into()),
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) => return Ok(()),
                    Some(Ok(_)) => continue,
                };
                let verdict = match ClientMessage::parse(&text) {
                    Ok(msg) => client.apply(msg).await,
                    Err(e) => Err(e.to_string()),
                };
                if let Err(message) = verdict {
                    tx.send(Message::text(ServerMessage::Error { message }.to_json())).await?;
                }
            }
        }
    }
}
