//! Newline-delimited JSON relay of the event bus over TCP, for deployments
//! that run the gateway and its consumers as separate processes.
//!
//! Each line is one [`BusMessage`]. The relay is meant for a loopback or
//! otherwise private address and carries no authentication.

use std::net::SocketAddr;
use std::time::Duration;

use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::broadcast::error::RecvError;
use tracing::{debug, info, warn};

use crate::bus::{BusMessage, EventBus};

/// Streams every bus message to each connected peer until the listener fails.
pub async fn serve_bus_tcp(bus: EventBus, listener: TcpListener) -> std::io::Result<()> {
    info!(addr = %listener.local_addr()?, "event bus relay listening");
    loop {
        let (stream, peer) = listener.accept().await?;
        let rx = bus.subscribe();
        tokio::spawn(async move {
            if let Err(e) = relay_to_peer(stream, rx).await {
                debug!(%peer, error = %e, "bus relay peer left");
            }
        });
    }
}

async fn relay_to_peer(
    mut stream: TcpStream,
    mut rx: tokio::sync::broadcast::Receiver<BusMessage>,
) -> std::io::Result<()> {
    loop {
        match rx.recv().await {
            Ok(msg) => {
                let mut line = serde_json::to_vec(&msg).expect("bus message serialization is infallible");
                line.push(b'\n');
                stream.write_all(&line).await?;
            }
            Err(RecvError::Lagged(n)) => warn!(missed = n, "bus relay peer lagging"),
            Err(RecvError::Closed) => return Ok(()),
        }
    }
}

/// Republishes a remote relay's messages onto a local bus, reconnecting
/// forever. Local ids are reassigned.
pub async fn forward_bus_tcp(addr: SocketAddr, bus: EventBus) {
    let mut backoff = lify_mqtt::Backoff::new(Duration::from_millis(500), Duration::from_secs(30));
    loop {
        match TcpStream::connect(addr).await {
            Ok(stream) => {
                info!(%addr, "connected to event bus relay");
                backoff.reset();
                let mut lines = BufReader::new(stream).lines();
                loop {
                    match lines.next_line().await {
                        Ok(Some(line)) => match serde_json::from_str::<BusMessage>(&line) {
                            Ok(msg) => {
                                bus.publish(msg.event);
                            }
                            Err(e) => warn!(error = %e, "unreadable bus relay line"),
                        },
                        Ok(None) => break,
                        Err(e) => {
                            warn!(error = %e, "bus relay read failed");
                            break;
                        }
                    }
                }
            }
            Err(e) => debug!(%addr, error = %e, "bus relay unavailable"),
        }
        tokio::time::sleep(backoff.next_delay()).await;
    }
}
