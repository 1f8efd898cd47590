use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use lify_agent::{Agent, AgentConfig, AgentError, TelemetryEnvelope, TELEMETRY_FILTER};
use lify_mqtt::tls::{client_config, server_config, DevCertificates};
use lify_mqtt::{Broker, BrokerConfig, BrokerHandle, ConnectOptions, MqttError, QoS, Session};
use tempfile::TempDir;

const T0: i64 = 1_700_000_000_000;

struct Harness {
    _dir: TempDir,
    pki: DevCertificates,
    broker: BrokerHandle,
    received: Arc<Mutex<Vec<(String, TelemetryEnvelope)>>>,
}

impl Harness {
    async fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let pki = DevCertificates::generate(dir.path(), &[]).unwrap();
        let tls = server_config(&pki.server_cert, &pki.server_key).unwrap();
        let broker = Broker::start(BrokerConfig::new("127.0.0.1:0".parse().unwrap(), Some(tls))).await.unwrap();
        let received = Arc::new(Mutex::new(Vec::new()));
        let h = Harness { _dir: dir, pki, broker, received };
        h.spawn_subscriber().await;
        h
    }

    fn url(&self) -> String {
        format!("mqtts://127.0.0.1:{}", self.broker.local_addr().port())
    }

    async fn spawn_subscriber(&self) {
        let mut opts = ConnectOptions::new(self.url().parse().unwrap(), "collector");
        opts.clean_session = false;
        opts.tls = Some(client_config(&self.pki.ca_cert).unwrap());
        let received = self.received.clone();
        let (ready_tx, ready_rx) = tokio::sync::oneshot::channel();
        let mut ready_tx = Some(ready_tx);
        tokio::spawn(async move {
            let mut first = true;
            loop {
                let Ok(mut s) = Session::connect(&opts).await else {
                    tokio::time::sleep(Duration::from_millis(100)).await;
                    continue;
                };
                if first {
                    s.subscribe(TELEMETRY_FILTER, QoS::AtLeastOnce).await.unwrap();
                    let _ = ready_tx.take().unwrap().send(());
                    first = false;
                }
                while let Ok(p) = s.next_publish().await {
                    let env = TelemetryEnvelope::from_json(&p.payload).unwrap();
                    received.lock().unwrap().push((p.topic.clone(), env));
                    if s.ack(&p).await.is_err() {
                        break;
                    }
                }
            }
        });
        // The subscription must exist before the first publish.
        tokio::time::timeout(Duration::from_secs(5), ready_rx)
            .await
            .expect("subscriber did not come up")
            .unwrap();
    }

    fn config(&self, device: &str, cycles: u64) -> AgentConfig {
        AgentConfig {
            broker_url: self.url(),
            ca_path: Some(self.pki.ca_cert.clone()),
            device_id: device.into(),
            patient_id: "p-001".into(),
            period_ms: 50,
            seed: 7,
            start_ts_ms: Some(T0),
            cycles: Some(cycles),
            ..Default::default()
        }
    }

    fn keys(&self) -> BTreeSet<(String, i64)> {
        self.received.lock().unwrap().iter().map(|(_, e)| (e.device_id.clone(), e.ts_ms)).collect()
    }

    async fn wait_for(&self, n: usize) {
        for _ in 0..200 {
            if self.keys().len() >= n {
                return;
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn nominal_run_publishes_every_cycle_on_device_topic() {
    let h = Harness::start().await;
    let cfg = h.config("dev-01", 20);
    let stats = Agent::spawn(cfg.clone()).unwrap().finish(Duration::from_secs(10)).await.unwrap();
    assert_eq!((stats.generated, stats.published, stats.dropped), (20, 20, 0));
    h.wait_for(20).await;

    let received = h.received.lock().unwrap().clone();
    assert!(received.iter().all(|(t, _)| t == "lify/v1/telemetry/dev-01"));
    let expected = Agent::replay(&cfg, 20).unwrap();
    let got: Vec<TelemetryEnvelope> = received.into_iter().map(|(_, e)| e).collect();
    assert_eq!(got, expected);
}

#[tokio::test(flavor = "multi_thread")]
async fn outage_is_bridged_by_the_retry_buffer() {
    let h = Harness::start().await;
    let cfg = h.config("dev-02", 40);
    let agent = Agent::spawn(cfg.clone()).unwrap();
    tokio::time::sleep(Duration::from_millis(500)).await;
    h.broker.set_online(false);
    tokio::time::sleep(Duration::from_millis(700)).await;
    h.broker.set_online(true);
    let stats = agent.finish(Duration::from_secs(20)).await.unwrap();
    assert_eq!(stats.dropped, 0);
    assert!(stats.connects >= 2, "{stats:?}");
    h.wait_for(40).await;

    let expected: BTreeSet<_> = Agent::replay(&cfg, 40).unwrap().iter().map(|e| (e.device_id.clone(), e.ts_ms)).collect();
    assert!(h.keys().is_superset(&expected));
}

#[tokio::test(flavor = "multi_thread")]
async fn overflow_drops_oldest_and_counts() {
    let h = Harness::start().await;
    h.broker.set_online(false);
    let mut cfg = h.config("dev-03", 20);
    cfg.buffer_capacity = 5;
    cfg.period_ms = 10;
    let agent = Agent::spawn(cfg.clone()).unwrap();
    tokio::time::sleep(Duration::from_millis(400)).await;
    h.broker.set_online(true);
    let stats = agent.finish(Duration::from_secs(20)).await.unwrap();
    assert_eq!(stats.generated, 20);
    assert_eq!(stats.dropped, 15);
    assert_eq!(stats.published, 5);
    h.wait_for(5).await;
    let newest: BTreeSet<i64> = (15..20).map(|i| T0 + i * 10).collect();
    let got: BTreeSet<i64> = h.keys().into_iter().map(|(_, ts)| ts).collect();
    assert_eq!(got, newest);
}

#[tokio::test]
async fn plaintext_endpoint_refused_when_tls_required() {
    let h = Harness::start().await;
    let mut cfg = h.config("dev-04", 1);
    cfg.broker_url = format!("mqtt://127.0.0.1:{}", h.broker.local_addr().port());
    assert!(matches!(Agent::spawn(cfg), Err(AgentError::Fatal(MqttError::PlaintextRefused(_)))));
}

#[tokio::test]
async fn untrusted_broker_is_fatal() {
    let h = Harness::start().await;
    let other = tempfile::tempdir().unwrap();
    let other_pki = DevCertificates::generate(other.path(), &[]).unwrap();
    let mut cfg = h.config("dev-05", 5);
    cfg.ca_path = Some(other_pki.ca_cert.clone());
    let err = Agent::spawn(cfg).unwrap().finish(Duration::from_secs(5)).await.unwrap_err();
    assert!(matches!(err, AgentError::Fatal(MqttError::Tls(_))), "{err}");
}

#[test]
fn config_file_parses_with_anomalies() {
    let text = r#"
        broker_url = "mqtts://10.0.0.5:8883"
        ca_path = "/etc/lify/ca.pem"
        device_id = "dev-09"
        patient_id = "p-009"
        seed = 3

        [[patient.anomalies]]
        start_ms = 10000
        duration_ms = 5000
        metric = "temp_c"
        target = 39.5
    "#;
    let cfg: AgentConfig = toml::from_str(text).unwrap();
    assert_eq!(cfg.period_ms, 1000);
    assert!(cfg.tls_required);
    assert_eq!(cfg.patient.anomalies.len(), 1);
    cfg.validate().unwrap();
}
