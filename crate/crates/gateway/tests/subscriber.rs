use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use lify_agent::{Agent, AgentConfig, TelemetryEnvelope};
use lify_core::MetricKind;
use lify_gateway::{run_gateway, BusEvent, EventBus, Gateway, GatewayConfig, GatewayError, SeriesKey};
use lify_mqtt::tls::{server_config, DevCertificates};
use lify_mqtt::{Broker, BrokerConfig, BrokerHandle, MqttError};
use tempfile::TempDir;
use tokio::sync::watch;

const T0: i64 = 1_700_000_000_000;

struct Stack {
    _dir: TempDir,
    pki: DevCertificates,
    broker: BrokerHandle,
    gateway: Arc<Gateway>,
    stop: watch::Sender<bool>,
    task: tokio::task::JoinHandle<Result<(), GatewayError>>,
}

impl Stack {
    async fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let pki = DevCertificates::generate(dir.path(), &[]).unwrap();
        let tls = server_config(&pki.server_cert, &pki.server_key).unwrap();
        let broker = Broker::start(BrokerConfig::new("127.0.0.1:0".parse().unwrap(), Some(tls))).await.unwrap();
        let config = GatewayConfig {
            broker_url: format!("mqtts://127.0.0.1:{}", broker.local_addr().port()),
            ca_path: Some(pki.ca_cert.clone()),
            data_root: Some(dir.path().join("data")),
            ..Default::default()
        };
        let gateway = config.build(EventBus::new()).unwrap();
        let (stop, stop_rx) = watch::channel(false);
        let task = tokio::spawn(run_gateway(config, gateway.clone(), stop_rx));
        for _ in 0..200 {
            if broker.connected_clients() > 0 {
                break;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        // Give the SUBSCRIBE a moment to land after CONNACK.
        tokio::time::sleep(Duration::from_millis(100)).await;
        Stack { _dir: dir, pki, broker, gateway, stop, task }
    }

    fn agent(&self, device: &str, patient: &str, seed: u64, cycles: u64) -> AgentConfig {
        AgentConfig {
            broker_url: format!("mqtts://127.0.0.1:{}", self.broker.local_addr().port()),
            ca_path: Some(self.pki.ca_cert.clone()),
            device_id: device.into(),
            patient_id: patient.into(),
            period_ms: 40,
            seed,
            start_ts_ms: Some(T0),
            cycles: Some(cycles),
            ..Default::default()
        }
    }

    /// Every `(device, ts, metric)` the store holds for `patient`.
    fn stored(&self, patient: &str) -> Vec<(String, i64, MetricKind)> {
        let mut out = Vec::new();
        for metric in MetricKind::ALL {
            for r in self.gateway.store().range(&SeriesKey::new(patient, metric), i64::MIN, i64::MAX) {
                out.push((r.device_id, r.ts_ms, metric));
            }
        }
        out
    }

    async fn wait_for_records(&self, n: usize) {
        for _ in 0..400 {
            if self.gateway.store().len() >= n {
                return;
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
    }

    async fn stop(self) {
        self.stop.send(true).unwrap();
        self.task.await.unwrap().unwrap();
    }
}

fn expected_keys(envelopes: &[TelemetryEnvelope]) -> BTreeSet<(String, i64, MetricKind)> {
    envelopes
        .iter()
        .flat_map(|e| e.metrics.keys().map(|m| (e.device_id.clone(), e.ts_ms, *m)))
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_devices_are_stored_completely_and_in_order() {
    let stack = Stack::start().await;
    let mut rx = stack.gateway.bus().subscribe();
    let a = stack.agent("dev-a", "p-a", 1, 30);
    let b = stack.agent("dev-b", "p-b", 2, 30);
    let (ha, hb) = (Agent::spawn(a.clone()).unwrap(), Agent::spawn(b.clone()).unwrap());
    ha.finish(Duration::from_secs(10)).await.unwrap();
    hb.finish(Duration::from_secs(10)).await.unwrap();

    let expected_a = expected_keys(&Agent::replay(&a, 30).unwrap());
    let expected_b = expected_keys(&Agent::replay(&b, 30).unwrap());
    stack.wait_for_records(expected_a.len() + expected_b.len()).await;

    for (patient, expected) in [("p-a", &expected_a), ("p-b", &expected_b)] {
        let stored = stack.stored(patient);
        assert_eq!(stored.len(), expected.len(), "{patient}: no duplicates");
        assert_eq!(stored.into_iter().collect::<BTreeSet<_>>(), *expected);
    }

    // Arrival order on the bus is per-device chronological.
    let mut last: BTreeMap<String, i64> = BTreeMap::new();
    while let Ok(msg) = rx.try_recv() {
        if let BusEvent::Sample(s) = msg.event {
            let prev = last.insert(s.device_id.clone(), s.ts_ms).unwrap_or(i64::MIN);
            assert!(s.ts_ms >= prev, "{} went back in time", s.device_id);
        }
    }
    assert_eq!(last.len(), 2);
    stack.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn broker_outage_loses_nothing() {
    let stack = Stack::start().await;
    let cfg = stack.agent("dev-o", "p-o", 9, 60);
    let agent = Agent::spawn(cfg.clone()).unwrap();
    tokio::time::sleep(Duration::from_millis(600)).await;
    stack.broker.set_online(false);
    tokio::time::sleep(Duration::from_millis(800)).await;
    stack.broker.set_online(true);
    let stats = agent.finish(Duration::from_secs(20)).await.unwrap();
    assert_eq!(stats.dropped, 0);

    let expected = expected_keys(&Agent::replay(&cfg, 60).unwrap());
    stack.wait_for_records(expected.len()).await;
    let stored = stack.stored("p-o");
    assert_eq!(stored.len(), expected.len());
    assert_eq!(stored.into_iter().collect::<BTreeSet<_>>(), expected);
    let ingest = stack.gateway.stats();
    assert!(ingest.is_conserved());
    assert_eq!(ingest.rejected, 0);
    stack.stop().await;
}

#[tokio::test]
async fn plaintext_broker_is_fatal_when_tls_required() {
    let config = GatewayConfig { broker_url: "mqtt://127.0.0.1:1".into(), ..Default::default() };
    let gateway = Arc::new(Gateway::new(
        config.open_store().unwrap(),
        EventBus::new(),
        Arc::new(lify_core::SystemClock),
        16,
    ));
    let (_stop, rx) = watch::channel(false);
    let err = run_gateway(config, gateway, rx).await.unwrap_err();
    assert!(matches!(err, GatewayError::Mqtt(MqttError::PlaintextRefused(_))), "{err}");
}

#[tokio::test(flavor = "multi_thread")]
async fn untrusted_broker_is_fatal() {
    let stack = Stack::start().await;
    let other = tempfile::tempdir().unwrap();
    let foreign = DevCertificates::generate(other.path(), &[]).unwrap();
    let config = GatewayConfig {
        broker_url: format!("mqtts://127.0.0.1:{}", stack.broker.local_addr().port()),
        ca_path: Some(foreign.ca_cert.clone()),
        client_id: "intruder".into(),
        ..Default::default()
    };
    let gateway = config.build(EventBus::new()).unwrap();
    let (_stop, rx) = watch::channel(false);
    let err = tokio::time::timeout(Duration::from_secs(10), run_gateway(config, gateway, rx))
        .await
        .expect("fatal error expected, not retries")
        .unwrap_err();
    assert!(matches!(err, GatewayError::Mqtt(MqttError::Tls(_))), "{err}");
    stack.stop().await;
}
