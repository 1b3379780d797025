//! Channels of live sessions. Each channel runs on its own task, ticking at
//! the session rate; commands received between two ticks are applied, in
//! arrival order, right before the next one.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;
use trailmaker::persistence::PatientRegistry;

use crate::config::ServiceConfig;
use crate::live::{wall_clock, Clock, LiveSession, Output, SharedRegistry};
use crate::protocol::{Command, EndReason, Envelope, Event, Request, Role};
use crate::ServiceError;

/// Events queued per connection before it is dropped as too slow.
pub const OUTBOX_CAPACITY: usize = 1024;

enum Inbound {
    Join {
        conn: u64,
        role: Role,
        outbox: mpsc::Sender<Arc<str>>,
    },
    Leave {
        conn: u64,
    },
    Text {
        conn: u64,
        text: String,
    },
}

struct Inner {
    config: Arc<ServiceConfig>,
    registry: SharedRegistry,
    clock: Clock,
    channels: Mutex<HashMap<String, mpsc::UnboundedSender<Inbound>>>,
    tasks: Mutex<Vec<JoinHandle<()>>>,
    shutdown: watch::Sender<bool>,
    next_conn: AtomicU64,
}

#[derive(Clone)]
pub struct Hub {
    inner: Arc<Inner>,
}

impl Hub {
    /// Loads the patient registry from the data directory, if present.
    pub fn new(config: ServiceConfig) -> Result<Self, ServiceError> {
        Self::with_clock(config, wall_clock)
    }

    pub fn with_clock(config: ServiceConfig, clock: Clock) -> Result<Self, ServiceError> {
        let path = config.registry_path();
        let registry = if path.exists() {
            PatientRegistry::load(&path)?
        } else {
            PatientRegistry::new()
        };
        Ok(Hub {
            inner: Arc::new(Inner {
                config: Arc::new(config),
                registry: Arc::new(Mutex::new(registry)),
                clock,
                channels: Mutex::new(HashMap::new()),
                tasks: Mutex::new(Vec::new()),
                shutdown: watch::channel(false).0,
                next_conn: AtomicU64::new(1),
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn registry(&self) -> &SharedRegistry {
        &self.inner.registry
    }

    /// Joins channel `session_id`, creating it if needed. The first events
    /// are `welcome` and the current `trail_update`.
    pub fn connect(&self, session_id: &str, role: Role) -> Result<Connection, ServiceError> {
        if *self.inner.shutdown.borrow() {
            return Err(ServiceError::ShuttingDown);
        }
        let conn = self.inner.next_conn.fetch_add(1, Ordering::Relaxed);
        let (outbox, events) = mpsc::channel(OUTBOX_CAPACITY);
        let mut channels = self.inner.channels.lock().expect("channel map lock");
        let tx = match channels.get(session_id) {
            Some(tx) if !tx.is_closed() => tx.clone(),
            _ => {
                let (tx, rx) = mpsc::unbounded_channel();
                channels.insert(session_id.to_string(), tx.clone());
                let task = tokio::spawn(run_channel(self.inner.clone(), session_id.to_string(), rx));
                let mut tasks = self.inner.tasks.lock().expect("task list lock");
                tasks.retain(|t| !t.is_finished());
                tasks.push(task);
                tx
            }
        };
        tx.send(Inbound::Join { conn, role, outbox })
            .map_err(|_| ServiceError::ShuttingDown)?;
        Ok(Connection {
            id: conn,
            role,
            session_id: session_id.to_string(),
            tx,
            events,
        })
    }

    /// Ends every run, closes every connection and waits for the channels to
    /// write their logs.
    pub async fn shutdown(&self) {
        self.inner.shutdown.send_replace(true);
        let tasks = std::mem::take(&mut *self.inner.tasks.lock().expect("task list lock"));
        for task in tasks {
            if let Err(e) = task.await {
                tracing::error!("channel task failed: {e}");
            }
        }
    }
}

/// One client's view of a channel. Dropping it leaves the channel.
pub struct Connection {
    id: u64,
    role: Role,
    session_id: String,
    tx: mpsc::UnboundedSender<Inbound>,
    events: mpsc::Receiver<Arc<str>>,
}

impl Connection {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// Queues a raw client message for the next tick boundary.
    pub fn send_text(&self, text: impl Into<String>) -> bool {
        self.tx
            .send(Inbound::Text {
                conn: self.id,
                text: text.into(),
            })
            .is_ok()
    }

    pub fn send(&self, request_id: Option<u64>, command: Command) -> bool {
        let mut value = serde_json::to_value(&command).expect("commands serialize");
        if let Some(id) = request_id {
            value["request_id"] = id.into();
        }
        self.send_text(value.to_string())
    }

    /// Next serialized event; `None` once the channel has closed.
    pub async fn recv_text(&mut self) -> Option<Arc<str>> {
        self.events.recv().await
    }

    pub async fn recv(&mut self) -> Option<Envelope> {
        let text = self.recv_text().await?;
        Some(Envelope::parse(&text).expect("server events parse"))
    }

    pub fn try_recv(&mut self) -> Option<Envelope> {
        let text = self.events.try_recv().ok()?;
        Some(Envelope::parse(&text).expect("server events parse"))
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.tx.send(Inbound::Leave { conn: self.id });
    }
}

struct Client {
    role: Role,
    outbox: mpsc::Sender<Arc<str>>,
}

struct Channel {
    session: LiveSession,
    clients: HashMap<u64, Client>,
}

impl Channel {
    fn send(&mut self, conn: u64, event: &Event) {
        let text: Arc<str> = Envelope::to_text(event).into();
        self.deliver(conn, text);
    }

    fn deliver(&mut self, conn: u64, text: Arc<str>) {
        let Some(client) = self.clients.get(&conn) else { return };
        if client.outbox.try_send(text).is_err() {
            tracing::warn!(session = self.session.id(), conn, "dropping slow or closed connection");
            self.clients.remove(&conn);
        }
    }

    fn broadcast(&mut self, event: &Event) {
        let text: Arc<str> = Envelope::to_text(event).into();
        let conns: Vec<u64> = self.clients.keys().copied().collect();
        for conn in conns {
            self.deliver(conn, text.clone());
        }
    }

    fn handle(&mut self, inbound: Inbound) {
        match inbound {
            Inbound::Join { conn, role, outbox } => {
                self.clients.insert(conn, Client { role, outbox });
                let welcome = Event::Welcome {
                    session_id: self.session.id().to_string(),
                    connection_id: conn,
                    role,
                    phase: self.session.phase(),
                };
                self.send(conn, &welcome);
                let trail = self.session.trail_update();
                self.send(conn, &trail);
            }
            Inbound::Leave { conn } => {
                self.clients.remove(&conn);
            }
            Inbound::Text { conn, text } => {
                let Some(role) = self.clients.get(&conn).map(|c| c.role) else { return };
                match Request::parse(&text) {
                    Ok(request) => {
                        for out in self.session.apply(role, request) {
                            match out {
                                Output::Reply(e) => self.send(conn, &e),
                                Output::Broadcast(e) => self.broadcast(&e),
                            }
                        }
                    }
                    Err(error) => self.send(conn, &error),
                }
            }
        }
    }
}

async fn run_channel(inner: Arc<Inner>, id: String, mut rx: mpsc::UnboundedReceiver<Inbound>) {
    let session = LiveSession::new(id.clone(), inner.config.clone(), inner.registry.clone(), inner.clock);
    let mut channel = Channel {
        session,
        clients: HashMap::new(),
    };
    let period = Duration::from_secs_f64(inner.config.session.tick_period());
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut shutdown = inner.shutdown.subscribe();
    tracing::info!(session = %id, "channel opened");
    loop {
        tokio::select! {
            _ = interval.tick() => {}
            _ = shutdown.wait_for(|s| *s) => {
                while let Ok(inbound) = rx.try_recv() {
                    channel.handle(inbound);
                }
                for e in channel.session.close(EndReason::ServerShutdown) {
                    channel.broadcast(&e);
                }
                break;
            }
        }
        while let Ok(inbound) = rx.try_recv() {
            channel.handle(inbound);
        }
        if channel.clients.is_empty() {
            // Joins happen under the map lock, so an empty queue here means
            // nobody can still be on their way in.
            let mut channels = inner.channels.lock().expect("channel map lock");
            if rx.is_empty() {
                channels.remove(&id);
                drop(channels);
                channel.session.close(EndReason::Disconnected);
                break;
            }
            continue;
        }
        for e in channel.session.advance() {
            channel.broadcast(&e);
        }
    }
    tracing::info!(session = %id, "channel closed");
}
