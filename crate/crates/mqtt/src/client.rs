//! A single MQTT client connection. Not a full client: no automatic
//! reconnection or in-flight persistence. Callers own retry policy.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use bytes::{Bytes, BytesMut};
use rustls::pki_types::ServerName;
use rustls::ClientConfig;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::time::{timeout, Instant};
use tokio_rustls::TlsConnector;

use crate::error::MqttError;
use crate::packet::{Connect, Packet, Publish, QoS};
use crate::url::BrokerUrl;

pub(crate) trait Stream: AsyncRead + AsyncWrite + Unpin + Send {}
impl<T: AsyncRead + AsyncWrite + Unpin + Send> Stream for T {}

#[derive(Clone)]
pub struct ConnectOptions {
    pub url: BrokerUrl,
    pub client_id: String,
    pub keep_alive_s: u16,
    pub clean_session: bool,
    /// Refuse `mqtt://` endpoints.
    pub tls_required: bool,
    /// Trust configuration; mandatory for `mqtts://`.
    pub tls: Option<Arc<ClientConfig>>,
    /// Bound on connect, handshake and acknowledgement waits.
    pub timeout: Duration,
}

impl ConnectOptions {
    pub fn new(url: BrokerUrl, client_id: impl Into<String>) -> Self {
        Self {
            url,
            client_id: client_id.into(),
            keep_alive_s: 30,
            clean_session: true,
            tls_required: true,
            tls: None,
            timeout: Duration::from_secs(10),
        }
    }
}

impl std::fmt::Debug for ConnectOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConnectOptions")
            .field("url", &self.url)
            .field("client_id", &self.client_id)
            .field("clean_session", &self.clean_session)
            .field("tls_required", &self.tls_required)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncomingPublish {
    pub topic: String,
    pub pkid: u16,
    pub qos: QoS,
    pub dup: bool,
    pub payload: Bytes,
}

pub struct Session {
    stream: Box<dyn Stream>,
    buf: BytesMut,
    pending: VecDeque<IncomingPublish>,
    next_pkid: u16,
    keep_alive: Duration,
    last_sent: Instant,
    last_received: Instant,
    timeout: Duration,
    session_present: bool,
}

impl Session {
    /// Opens the transport, performs CONNECT/CONNACK and returns a live
    /// session. Plaintext URLs are refused up front when TLS is required.
    pub async fn connect(opts: &ConnectOptions) -> Result<Session, MqttError> {
        if !opts.url.tls && opts.tls_required {
            return Err(MqttError::PlaintextRefused(opts.url.to_string()));
        }
        let tcp = timeout(opts.timeout, TcpStream::connect(opts.url.address()))
            .await
            .map_err(|_| MqttError::Timeout("tcp connect"))??;
        tcp.set_nodelay(true)?;
        let stream: Box<dyn Stream> = if opts.url.tls {
            let config = opts
                .tls
                .clone()
                .ok_or_else(|| MqttError::Tls("mqtts:// requires a CA certificate".into()))?;
            let name = ServerName::try_from(opts.url.host.clone())
                .map_err(|e| MqttError::Tls(format!("invalid server name {}: {e}", opts.url.host)))?;
            let tls = timeout(opts.timeout, TlsConnector::from(config).connect(name, tcp))
                .await
                .map_err(|_| MqttError::Timeout("tls handshake"))?
                .map_err(|e| {
                    // rustls reports certificate and protocol failures as InvalidData;
                    // anything else is the transport going away mid-handshake.
                    if e.kind() == std::io::ErrorKind::InvalidData {
                        MqttError::Tls(e.to_string())
                    } else {
                        MqttError::Io(e)
                    }
                })?;
            Box::new(tls)
        } else {
            Box::new(tcp)
        };

        let now = Instant::now();
        let mut session = Session {
            stream,
            buf: BytesMut::with_capacity(4096),
            pending: VecDeque::new(),
            next_pkid: 0,
            keep_alive: Duration::from_secs(u64::from(opts.keep_alive_s.max(1))),
            last_sent: now,
            last_received: now,
            timeout: opts.timeout,
            session_present: false,
        };
        session
            .send(&Packet::Connect(Connect {
                client_id: opts.client_id.clone(),
                keep_alive_s: opts.keep_alive_s,
                clean_session: opts.clean_session,
                username: None,
                password: None,
            }))
            .await?;
        match session.read_with_timeout("CONNACK").await? {
            Packet::ConnAck { code: 0, session_present } => session.session_present = session_present,
            Packet::ConnAck { code, .. } => return Err(MqttError::ConnectionRefused(code)),
            other => return Err(MqttError::Protocol(format!("expected CONNACK, got {other:?}"))),
        }
        Ok(session)
    }

    /// Whether the broker resumed stored session state.
    pub fn session_present(&self) -> bool {
        self.session_present
    }

    async fn send(&mut self, packet: &Packet) -> Result<(), MqttError> {
        let bytes = packet.to_bytes();
        self.stream.write_all(&bytes).await?;
        self.stream.flush().await?;
        self.last_sent = Instant::now();
        Ok(())
    }

    async fn read_packet(&mut self) -> Result<Packet, MqttError> {
        loop {
            if let Some(p) = Packet::decode(&mut self.buf)? {
                self.last_received = Instant::now();
                return Ok(p);
            }
            if self.stream.read_buf(&mut self.buf).await? == 0 {
                return Err(MqttError::Closed);
            }
        }
    }

    async fn read_with_timeout(&mut self, what: &'static str) -> Result<Packet, MqttError> {
        timeout(self.timeout, self.read_packet())
            .await
            .map_err(|_| MqttError::Timeout(what))?
    }

    fn pkid(&mut self) -> u16 {
        self.next_pkid = self.next_pkid.wrapping_add(1).max(1);
        self.next_pkid
    }

    fn stash(&mut self, p: Publish) {
        self.pending.push_back(IncomingPublish {
            topic: p.topic,
            pkid: p.pkid,
            qos: p.qos,
            dup: p.dup,
            payload: p.payload,
        });
    }

    /// Publishes and, for QoS 1, waits for the broker's PUBACK.
    pub async fn publish(&mut self, topic: &str, payload: Bytes, qos: QoS) -> Result<(), MqttError> {
        let pkid = if qos == QoS::AtMostOnce { 0 } else { self.pkid() };
        self.send(&Packet::Publish(Publish {
            topic: topic.to_string(),
            pkid,
            qos,
            retain: false,
            dup: false,
            payload,
        }))
        .await?;
        if qos == QoS::AtMostOnce {
            return Ok(());
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let packet = timeout(left, self.read_packet())
                .await
                .map_err(|_| MqttError::Timeout("PUBACK"))??;
            match packet {
                Packet::PubAck { pkid: acked } if acked == pkid => return Ok(()),
                Packet::PubAck { .. } | Packet::PingResp => {}
                Packet::Publish(p) => self.stash(p),
                other => return Err(MqttError::Protocol(format!("unexpected {other:?} while publishing"))),
            }
        }
    }

    /// Subscribes to one filter and returns the granted QoS.
    pub async fn subscribe(&mut self, filter: &str, qos: QoS) -> Result<QoS, MqttError> {
        let pkid = self.pkid();
        self.send(&Packet::Subscribe { pkid, filters: vec![(filter.to_string(), qos)] }).await?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let packet = timeout(left, self.read_packet())
                .await
                .map_err(|_| MqttError::Timeout("SUBACK"))??;
            match packet {
                Packet::SubAck { pkid: acked, codes } if acked == pkid => {
                    return match codes.first() {
                        Some(0) => Ok(QoS::AtMostOnce),
                        Some(1) => Ok(QoS::AtLeastOnce),
                        _ => Err(MqttError::Protocol(format!("subscription to {filter} rejected"))),
                    };
                }
                // Persistent sessions may replay deliveries before the SUBACK.
                Packet::Publish(p) => self.stash(p),
                Packet::PingResp => {}
                other => return Err(MqttError::Protocol(format!("unexpected {other:?} while subscribing"))),
            }
        }
    }

    /// Waits for the next inbound PUBLISH, keeping the connection alive.
    pub async fn next_publish(&mut self) -> Result<IncomingPublish, MqttError> {
        if let Some(p) = self.pending.pop_front() {
            return Ok(p);
        }
        loop {
            let tick = self.keep_alive / 2;
            match timeout(tick, self.read_packet()).await {
                Ok(Ok(Packet::Publish(p))) => {
                    self.stash(p);
                    return Ok(self.pending.pop_front().expect("just stashed"));
                }
                Ok(Ok(Packet::PingResp)) | Ok(Ok(Packet::PubAck { .. })) => {}
                Ok(Ok(other)) => return Err(MqttError::Protocol(format!("unexpected {other:?}"))),
                Ok(Err(e)) => return Err(e),
                Err(_) => {
                    if self.last_received.elapsed() > self.keep_alive * 3 / 2 {
                        return Err(MqttError::Timeout("broker keep-alive"));
                    }
                    self.send(&Packet::PingReq).await?;
                }
            }
        }
    }

    /// Acknowledges a QoS 1 delivery.
    pub async fn ack(&mut self, publish: &IncomingPublish) -> Result<(), MqttError> {
        if publish.qos == QoS::AtLeastOnce {
            self.send(&Packet::PubAck { pkid: publish.pkid }).await?;
        }
        Ok(())
    }

    /// Sends PINGREQ when nothing has been written for half the keep-alive.
    pub async fn keep_alive(&mut self) -> Result<(), MqttError> {
        if self.last_sent.elapsed() >= self.keep_alive / 2 {
            self.send(&Packet::PingReq).await?;
        }
        Ok(())
    }

    pub fn keep_alive_interval(&self) -> Duration {
        self.keep_alive
    }

    pub async fn disconnect(mut self) -> Result<(), MqttError> {
        self.send(&Packet::Disconnect).await?;
        self.stream.shutdown().await?;
        Ok(())
    }
}
