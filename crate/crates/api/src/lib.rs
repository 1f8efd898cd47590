//! The HTTP face of the platform: accounts and sessions, patient profiles,
//! telemetry and alert queries, rule editing, chat-binding codes and a live
//! event stream, all under `/api/v1`.

pub mod auth;
pub mod directory;
pub mod error;
pub mod patients;
pub mod routes;
pub mod server;
pub mod state;
mod store;
pub mod stream;
pub mod users;

pub use auth::{LoginLimiter, SessionToken, Sessions};
pub use directory::AccountDirectory;
pub use error::ApiError;
pub use patients::{Medication, PatientInput, PatientProfile, PatientStore};
pub use server::{app, serve_api, ApiConfig};
pub use state::{AppState, AuthUser};
pub use users::{PublicUser, UserAccount, UserStore};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("invalid api configuration: {0}")]
    Config(String),
    #[error("account storage: {0}")]
    Store(std::io::Error),
    #[error(transparent)]
    Binding(#[from] lify_notifier::BindError),
    #[error(transparent)]
    Tls(#[from] lify_mqtt::MqttError),
    #[error("api listener: {0}")]
    Io(std::io::Error),
}
