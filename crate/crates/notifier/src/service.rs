use std::sync::Arc;

use lify_core::{Alert, AlertSource};
use serde::Serialize;
use tokio::sync::mpsc;
use tracing::debug;

use crate::binding::BindingRegistry;
use crate::dispatch::Dispatcher;
use crate::format::format_alert_message;
use crate::receipts::DeliveryOutcome;

/// Who should hear about a patient, and what to call people in messages.
pub trait RecipientDirectory: Send + Sync {
    fn patient_name(&self, patient_id: &str) -> Option<String>;
    fn user_name(&self, user_id: &str) -> Option<String>;
    /// Users who follow the patient and want alert notifications.
    fn recipients(&self, patient_id: &str) -> Vec<Recipient>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recipient {
    pub user_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NotifierStats {
    pub alerts: u64,
    pub delivered: u64,
    pub gave_up: u64,
}

/// Consumes alerts until the queue closes, formatting and dispatching each
/// to its recipients' verified chats.
pub async fn run_notifier(
    mut queue: mpsc::Receiver<Alert>,
    dispatcher: Arc<Dispatcher>,
    directory: Arc<dyn RecipientDirectory>,
    bindings: Arc<BindingRegistry>,
) -> NotifierStats {
    let mut stats = NotifierStats::default();
    while let Some(alert) = queue.recv().await {
        stats.alerts += 1;
        let patient = directory.patient_name(&alert.patient_id).unwrap_or_else(|| alert.patient_id.clone());
        let raiser = match &alert.source {
            AlertSource::Manual { user_id } => Some(directory.user_name(user_id).unwrap_or_else(|| user_id.clone())),
            AlertSource::Auto => None,
        };
        let text = format_alert_message(&alert, &patient, raiser.as_deref());
        let targets: Vec<_> = directory
            .recipients(&alert.patient_id)
            .iter()
            .filter_map(|r| bindings.binding_for(&r.user_id))
            .collect();
        debug!(alert_id = %alert.alert_id, chats = targets.len(), "dispatching alert");
        for receipt in dispatcher.dispatch(&alert, &text, &targets).await {
            match receipt.outcome {
                DeliveryOutcome::Delivered => stats.delivered += 1,
                DeliveryOutcome::GaveUp { .. } => stats.gave_up += 1,
            }
        }
    }
    stats
}
