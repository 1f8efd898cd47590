//! Embedded MQTT broker: CONNECT, SUBSCRIBE, PUBLISH and PUBACK over TLS or
//! plain TCP, with in-memory persistent sessions for `clean_session = false`
//! clients.
//!
//! Persistent sessions keep their subscriptions, unacknowledged deliveries
//! and an offline queue for as long as the broker process lives, including
//! across [`BrokerHandle::set_online`] outages. Retained messages, wills and
//! QoS 2 are not implemented.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::BytesMut;
use rustls::ServerConfig;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio_rustls::TlsAcceptor;
use tracing::{debug, info, warn};

use crate::error::MqttError;
use crate::packet::{Packet, Publish, QoS};
use crate::topic;

const MAX_INFLIGHT: usize = 64;

#[derive(Clone)]
pub struct BrokerConfig {
    pub bind: SocketAddr,
    /// `None` serves plaintext MQTT.
    pub tls: Option<Arc<ServerConfig>>,
    /// Per-session bound on queued deliveries; the oldest are dropped.
    pub max_queued: usize,
}

impl BrokerConfig {
    pub fn new(bind: SocketAddr, tls: Option<Arc<ServerConfig>>) -> Self {
        Self { bind, tls, max_queued: 100_000 }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct BrokerStats {
    pub connections: u64,
    pub publishes_received: u64,
    pub deliveries: u64,
    pub dropped: u64,
}

enum Command {
    Deliver(Publish),
    Close,
}

struct Connection {
    id: u64,
    tx: mpsc::UnboundedSender<Command>,
}

#[derive(Default)]
struct SessionState {
    persistent: bool,
    subscriptions: Vec<(String, QoS)>,
    inflight: BTreeMap<u16, Publish>,
    outbox: VecDeque<Publish>,
    next_pkid: u16,
    conn: Option<Connection>,
}

impl SessionState {
    fn alloc_pkid(&mut self) -> u16 {
        loop {
            self.next_pkid = self.next_pkid.wrapping_add(1).max(1);
            if !self.inflight.contains_key(&self.next_pkid) {
                return self.next_pkid;
            }
        }
    }

    /// Moves queued messages into flight while the window allows.
    fn pump(&mut self, stats: &Counters) {
        let Some(conn) = &self.conn else { return };
        let tx = conn.tx.clone();
        while self.inflight.len() < MAX_INFLIGHT {
            let Some(mut msg) = self.outbox.pop_front() else { break };
            if msg.qos == QoS::AtLeastOnce {
                msg.pkid = self.alloc_pkid();
                self.inflight.insert(msg.pkid, msg.clone());
            }
            stats.deliveries.fetch_add(1, Ordering::Relaxed);
            let _ = tx.send(Command::Deliver(msg));
        }
    }
}

#[derive(Default)]
struct Counters {
    connections: AtomicU64,
    publishes_received: AtomicU64,
    deliveries: AtomicU64,
    dropped: AtomicU64,
}

struct Shared {
    sessions: Mutex<HashMap<String, SessionState>>,
    online: AtomicBool,
    next_conn: AtomicU64,
    max_queued: usize,
    stats: Counters,
}

impl Shared {
    fn route(&self, msg: &Publish) {
        let mut sessions = self.sessions.lock().unwrap();
        for session in sessions.values_mut() {
            let granted = session
                .subscriptions
                .iter()
                .filter(|(f, _)| topic::matches(f, &msg.topic))
                .map(|(_, q)| *q)
                .max();
            let Some(granted) = granted else { continue };
            if session.conn.is_none() && !session.persistent {
                continue;
            }
            let qos = granted.min(msg.qos);
            if qos == QoS::AtMostOnce && session.conn.is_none() {
                continue;
            }
            if session.outbox.len() >= self.max_queued {
                session.outbox.pop_front();
                self.stats.dropped.fetch_add(1, Ordering::Relaxed);
            }
            session.outbox.push_back(Publish {
                topic: msg.topic.clone(),
                pkid: 0,
                qos,
                retain: false,
                dup: false,
                payload: msg.payload.clone(),
            });
            session.pump(&self.stats);
        }
    }

    fn close_all(&self) {
        let sessions = self.sessions.lock().unwrap();
        for s in sessions.values() {
            if let Some(c) = &s.conn {
                let _ = c.tx.send(Command::Close);
            }
        }
    }
}

pub struct Broker;

impl Broker {
    /// Binds the listener and starts serving in the background.
    pub async fn start(config: BrokerConfig) -> Result<BrokerHandle, MqttError> {
        let listener = TcpListener::bind(config.bind).await?;
        let local_addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            sessions: Mutex::new(HashMap::new()),
            online: AtomicBool::new(true),
            next_conn: AtomicU64::new(1),
            max_queued: config.max_queued.max(1),
            stats: Counters::default(),
        });
        let (shutdown_tx, shutdown_rx) = watch::channel(false);
        let acceptor = config.tls.clone().map(TlsAcceptor::from);
        let task = tokio::spawn(accept_loop(listener, acceptor, shared.clone(), shutdown_rx));
        info!(%local_addr, tls = config.tls.is_some(), "broker listening");
        Ok(BrokerHandle { shared, local_addr, shutdown: shutdown_tx, task: Some(task) })
    }
}

/// Control surface of a running broker.
pub struct BrokerHandle {
    shared: Arc<Shared>,
    local_addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    task: Option<JoinHandle<()>>,
}

impl BrokerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Taking the broker offline drops every connection and refuses new
    /// ones until it is brought back; session state survives.
    pub fn set_online(&self, online: bool) {
        self.shared.online.store(online, Ordering::SeqCst);
        if !online {
            self.shared.close_all();
        }
        info!(online, "broker availability changed");
    }

    pub fn is_online(&self) -> bool {
        self.shared.online.load(Ordering::SeqCst)
    }

    pub fn stats(&self) -> BrokerStats {
        let c = &self.shared.stats;
        BrokerStats {
            connections: c.connections.load(Ordering::Relaxed),
            publishes_received: c.publishes_received.load(Ordering::Relaxed),
            deliveries: c.deliveries.load(Ordering::Relaxed),
            dropped: c.dropped.load(Ordering::Relaxed),
        }
    }

    /// Number of currently connected clients.
    pub fn connected_clients(&self) -> usize {
        self.shared.sessions.lock().unwrap().values().filter(|s| s.conn.is_some()).count()
    }

    pub async fn shutdown(mut self) {
        let _ = self.shutdown.send(true);
        self.shared.close_all();
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for BrokerHandle {
    fn drop(&mut self) {
        let _ = self.shutdown.send(true);
        self.shared.close_all();
    }
}

async fn accept_loop(
    listener: TcpListener,
    acceptor: Option<TlsAcceptor>,
    shared: Arc<Shared>,
    mut shutdown: watch::Receiver<bool>,
) {
    loop {
        let accepted = tokio::select! {
            _ = shutdown.changed() => break,
            a = listener.accept() => a,
        };
        let (tcp, peer) = match accepted {
            Ok(a) => a,
            Err(e) => {
                warn!(error = %e, "accept failed");
                tokio::time::sleep(Duration::from_millis(50)).await;
                continue;
            }
        };
        if !shared.online.load(Ordering::SeqCst) {
            drop(tcp);
            continue;
        }
        let _ = tcp.set_nodelay(true);
        let shared = shared.clone();
        let acceptor = acceptor.clone();
        tokio::spawn(async move {
            let result = match acceptor {
                Some(acceptor) => match acceptor.accept(tcp).await {
                    Ok(tls) => serve_connection(tls, shared).await,
                    Err(e) => Err(MqttError::Tls(e.to_string())),
                },
                None => serve_plain(tcp, shared).await,
            };
            if let Err(e) = result {
                debug!(%peer, error = %e, "connection ended");
            }
        });
    }
}

async fn serve_plain(tcp: TcpStream, shared: Arc<Shared>) -> Result<(), MqttError> {
    serve_connection(tcp, shared).await
}

async fn read_packet<R: AsyncRead + Unpin>(reader: &mut R, buf: &mut BytesMut) -> Result<Packet, MqttError> {
    loop {
        if let Some(p) = Packet::decode(buf)? {
            return Ok(p);
        }
        if reader.read_buf(buf).await? == 0 {
            return Err(MqttError::Closed);
        }
    }
}

async fn write_packet<W: AsyncWrite + Unpin>(writer: &mut W, packet: &Packet) -> Result<(), MqttError> {
    writer.write_all(&packet.to_bytes()).await?;
    writer.flush().await?;
    Ok(())
}

async fn serve_connection<S>(stream: S, shared: Arc<Shared>) -> Result<(), MqttError>
where
    S: AsyncRead + AsyncWrite + Unpin + Send + 'static,
{
    let (mut reader, mut writer) = tokio::io::split(stream);
    let mut buf = BytesMut::with_capacity(4096);

    let connect = match tokio::time::timeout(Duration::from_secs(10), read_packet(&mut reader, &mut buf)).await {
        Ok(Ok(Packet::Connect(c))) => c,
        Ok(Ok(other)) => return Err(MqttError::Protocol(format!("first packet was {other:?}"))),
        Ok(Err(e)) => return Err(e),
        Err(_) => return Err(MqttError::Timeout("CONNECT")),
    };
    if connect.client_id.is_empty() && !connect.clean_session {
        write_packet(&mut writer, &Packet::ConnAck { session_present: false, code: 2 }).await?;
        return Ok(());
    }
    let conn_id = shared.next_conn.fetch_add(1, Ordering::Relaxed);
    let client_id = if connect.client_id.is_empty() {
        format!("anon-{conn_id}")
    } else {
        connect.client_id.clone()
    };
    shared.stats.connections.fetch_add(1, Ordering::Relaxed);

    let (tx, mut rx) = mpsc::unbounded_channel();
    let (session_present, replay) = {
        let mut sessions = shared.sessions.lock().unwrap();
        if let Some(old) = sessions.get(&client_id).and_then(|s| s.conn.as_ref()) {
            let _ = old.tx.send(Command::Close);
        }
        if connect.clean_session {
            sessions.remove(&client_id);
        }
        let present = sessions.contains_key(&client_id);
        let session = sessions.entry(client_id.clone()).or_default();
        session.persistent = !connect.clean_session;
        session.conn = Some(Connection { id: conn_id, tx: tx.clone() });
        let replay: Vec<Publish> = session
            .inflight
            .values()
            .cloned()
            .map(|mut p| {
                p.dup = true;
                p
            })
            .collect();
        (present, replay)
    };
    write_packet(&mut writer, &Packet::ConnAck { session_present, code: 0 }).await?;
    for p in replay {
        write_packet(&mut writer, &Packet::Publish(p)).await?;
    }
    {
        let mut sessions = shared.sessions.lock().unwrap();
        if let Some(s) = sessions.get_mut(&client_id) {
            s.pump(&shared.stats);
        }
    }
    debug!(%client_id, session_present, "client connected");

    let keep_alive = match connect.keep_alive_s {
        0 => Duration::from_secs(3600),
        s => Duration::from_millis(u64::from(s) * 1500),
    };
    let result = connection_loop(&mut reader, &mut writer, &mut buf, &mut rx, &shared, &client_id, keep_alive).await;

    {
        let mut sessions = shared.sessions.lock().unwrap();
        let ours = sessions
            .get(&client_id)
            .and_then(|s| s.conn.as_ref())
            .is_some_and(|c| c.id == conn_id);
        if ours {
            let session = sessions.get_mut(&client_id).expect("checked above");
            if session.persistent {
                session.conn = None;
            } else {
                sessions.remove(&client_id);
            }
        }
    }
    let _ = writer.shutdown().await;
    result
}

async fn connection_loop<R, W>(
    reader: &mut R,
    writer: &mut W,
    buf: &mut BytesMut,
    rx: &mut mpsc::UnboundedReceiver<Command>,
    shared: &Arc<Shared>,
    client_id: &str,
    keep_alive: Duration,
) -> Result<(), MqttError>
where
    R: AsyncRead + Unpin,
    W: AsyncWrite + Unpin,
{
    loop {
        if let Some(packet) = Packet::decode(buf)? {
            match packet {
                Packet::Publish(p) => {
                    shared.stats.publishes_received.fetch_add(1, Ordering::Relaxed);
                    if p.topic.contains('+') || p.topic.contains('#') || p.topic.is_empty() {
                        return Err(MqttError::Protocol(format!("invalid topic name {:?}", p.topic)));
                    }
                    shared.route(&p);
                    if p.qos == QoS::AtLeastOnce {
                        write_packet(writer, &Packet::PubAck { pkid: p.pkid }).await?;
                    }
                }
                Packet::PubAck { pkid } => {
                    let mut sessions = shared.sessions.lock().unwrap();
                    if let Some(s) = sessions.get_mut(client_id) {
                        s.inflight.remove(&pkid);
                        s.pump(&shared.stats);
                    }
                }
                Packet::Subscribe { pkid, filters } => {
                    let codes: Vec<u8> = {
                        let mut sessions = shared.sessions.lock().unwrap();
                        let session = sessions.get_mut(client_id).ok_or(MqttError::Closed)?;
                        filters
                            .into_iter()
                            .map(|(f, q)| {
                                if !topic::valid_filter(&f) {
                                    return 0x80;
                                }
                                session.subscriptions.retain(|(existing, _)| existing != &f);
                                session.subscriptions.push((f, q));
                                q as u8
                            })
                            .collect()
                    };
                    write_packet(writer, &Packet::SubAck { pkid, codes }).await?;
                }
                Packet::PingReq => write_packet(writer, &Packet::PingResp).await?,
                Packet::Disconnect => return Ok(()),
                other => return Err(MqttError::Protocol(format!("unexpected {other:?} from client"))),
            }
            continue;
        }

        tokio::select! {
            read = tokio::time::timeout(keep_alive, reader.read_buf(buf)) => {
                match read {
                    Ok(Ok(0)) => return Err(MqttError::Closed),
                    Ok(Ok(_)) => {}
                    Ok(Err(e)) => return Err(e.into()),
                    Err(_) => return Err(MqttError::Timeout("client keep-alive")),
                }
            }
            cmd = rx.recv() => match cmd {
                Some(Command::Deliver(p)) => write_packet(writer, &Packet::Publish(p)).await?,
                Some(Command::Close) | None => return Ok(()),
            }
        }
    }
}
