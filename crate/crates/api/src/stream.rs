use std::collections::BTreeSet;
use std::convert::Infallible;
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::HeaderMap;
use axum::response::sse::{Event, Sse};
use futures::Stream;
use lify_gateway::{BusEvent, BusMessage, ReplayGap};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{broadcast, mpsc, watch};
use tracing::{debug, warn};

use crate::error::ApiError;
use crate::state::AppState;

pub const HEARTBEAT_INTERVAL: Duration = Duration::from_secs(15);
/// Events a client may fall behind by before it is disconnected.
pub const CLIENT_BUFFER: usize = 256;

#[derive(Debug, Default, Deserialize)]
pub struct StreamParams {
    pub patient_id: Option<String>,
    /// For clients that cannot set headers, such as `EventSource`.
    pub access_token: Option<String>,
}

/// Which events a subscriber may see.
#[derive(Debug, Clone)]
struct Scope {
    patient: Option<String>,
    /// `None` for caregivers, who see every patient.
    links: Option<BTreeSet<String>>,
}

impl Scope {
    fn admits(&self, event: &BusEvent) -> bool {
        let patient_id = match event {
            BusEvent::Sample(s) => &s.patient_id,
            BusEvent::Alert(a) => &a.patient_id,
        };
        self.patient.as_ref().map_or(true, |p| p == patient_id)
            && self.links.as_ref().map_or(true, |l| l.contains(patient_id))
    }
}

/// `GET /stream`: live samples and alerts as server-sent events.
///
/// Events are named `sample`, `alert`, `gap` and `heartbeat`. Sample and alert
/// events carry the bus id, so a reconnecting client resumes with
/// `Last-Event-ID`; if the replay window no longer reaches that id a `gap`
/// event reports how many were missed.
pub async fn stream(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(params): Query<StreamParams>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let header_token = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.split_once(' '))
        .filter(|(scheme, _)| scheme.eq_ignore_ascii_case("bearer"))
        .map(|(_, t)| t.trim().to_string());
    let token = header_token.or(params.access_token).ok_or_else(ApiError::unauthorized)?;
    let user = state.authenticate(&token)?;
    if let Some(p) = &params.patient_id {
        state.readable_patient(&user.account, p)?;
    }
    let scope = Scope {
        patient: params.patient_id,
        links: (!user.account.role.is_caregiver()).then(|| user.account.patient_links.clone()),
    };
    let last_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let (backlog, gap, rx) = match last_id {
        Some(id) => state.bus.subscribe_from(id),
        None => (Vec::new(), None, state.bus.subscribe()),
    };
    let (tx, out) = mpsc::channel(CLIENT_BUFFER);
    tokio::spawn(pump(state.clone(), scope, backlog, gap, rx, tx, state.stream_shutdown()));
    let events = futures::stream::unfold(out, |mut out| async move { out.recv().await.map(|e| (Ok(e), out)) });
    Ok(Sse::new(events))
}

fn bus_event(msg: &BusMessage) -> Event {
    let (name, data) = match &msg.event {
        BusEvent::Sample(s) => ("sample", serde_json::to_string(s)),
        BusEvent::Alert(a) => ("alert", serde_json::to_string(a)),
    };
    Event::default().id(msg.id.to_string()).event(name).data(data.expect("bus events serialize"))
}

fn gap_event(missed: u64) -> Event {
    Event::default().event("gap").data(json!({ "missed": missed }).to_string())
}

/// Moves bus events into one client's buffer until the client leaves, falls
/// too far behind, or the server stops.
async fn pump(
    state: AppState,
    scope: Scope,
    backlog: Vec<BusMessage>,
    gap: Option<ReplayGap>,
    mut rx: broadcast::Receiver<BusMessage>,
    tx: mpsc::Sender<Event>,
    mut shutdown: watch::Receiver<bool>,
) {
    let offer = |event: Event| match tx.try_send(event) {
        Ok(()) => true,
        Err(mpsc::error::TrySendError::Full(_)) => {
            warn!("stream client too slow, disconnecting");
            false
        }
        Err(mpsc::error::TrySendError::Closed(_)) => false,
    };
    if let Some(g) = gap {
        if !offer(gap_event(g.missed)) {
            return;
        }
    }
    for msg in backlog.iter().filter(|m| scope.admits(&m.event)) {
        if !offer(bus_event(msg)) {
            return;
        }
    }
    let mut heartbeat = tokio::time::interval_at(tokio::time::Instant::now() + HEARTBEAT_INTERVAL, HEARTBEAT_INTERVAL);
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(m) if scope.admits(&m.event) => {
                    if !offer(bus_event(&m)) {
                        return;
                    }
                }
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(missed)) => {
                    debug!(missed, "stream subscriber lagged, disconnecting");
                    offer(gap_event(missed));
                    return;
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
            _ = heartbeat.tick() => {
                let beat = json!({ "ts_ms": state.now_ms(), "last_id": state.bus.last_id() });
                if !offer(Event::default().event("heartbeat").data(beat.to_string())) {
                    return;
                }
            }
            _ = tx.closed() => return,
            _ = shutdown.wait_for(|stop| *stop) => return,
        }
    }
}
