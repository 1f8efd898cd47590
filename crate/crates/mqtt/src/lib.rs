//! Just enough MQTT 3.1.1 for LIFY telemetry: a packet codec covering
//! CONNECT, PUBLISH/PUBACK at QoS 0 and 1, SUBSCRIBE, keep-alive and
//! DISCONNECT; a client session over TLS or plain TCP; and a small embedded
//! broker used by the test harness and single-box deployments.

pub mod backoff;
pub mod broker;
pub mod client;
mod error;
pub mod packet;
pub mod tls;
pub mod topic;
mod url;

pub use backoff::Backoff;
pub use broker::{Broker, BrokerConfig, BrokerHandle};
pub use client::{ConnectOptions, IncomingPublish, Session};
pub use error::MqttError;
pub use packet::{Packet, QoS};
pub use url::BrokerUrl;
