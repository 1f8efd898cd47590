#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::io::Read;
use std::process::{Child, Command, Output, Stdio};
use std::sync::{Arc, Mutex};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde_json::Value;

pub const BIN: &str = env!("CARGO_BIN_EXE_lify");

pub fn lify() -> Command {
    let mut cmd = Command::new(BIN);
    cmd.env_remove("LIFY_CONFIG").env_remove("LIFY_BOT_TOKEN").env_remove("LIFY_ADMIN_PASSWORD");
    cmd.env("LIFY_LOG", "warn");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    lify().args(args).output().expect("run lify")
}

/// A `lify serve` child process, killed on drop.
pub struct Server {
    pub child: Child,
    pub ready: Value,
    pub data_root: PathBuf,
    /// Everything the process has logged so far.
    pub stderr: Arc<Mutex<String>>,
}

impl Server {
    /// Starts every service with the embedded TLS broker on free ports.
    pub fn start(data_root: &Path) -> Server {
        Self::start_with(data_root, &[])
    }

    pub fn start_with(data_root: &Path, extra: &[&str]) -> Server {
        let mut child = lify()
            .args(["serve", "--embedded-broker", "--listen", "127.0.0.1:0", "--broker-listen", "127.0.0.1:0"])
            .arg("--data-root")
            .arg(data_root)
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn lify serve");
        let stdout = child.stdout.take().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut line = String::new();
            let _ = BufReader::new(stdout).read_line(&mut line);
            let _ = tx.send(line);
        });
        let line = rx.recv_timeout(Duration::from_secs(60)).unwrap_or_default();
        let ready: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(_) => {
                let _ = child.kill();
                let out = child.wait_with_output().unwrap();
                panic!("serve did not become ready: {}", String::from_utf8_lossy(&out.stderr));
            }
        };
        let stderr = Arc::new(Mutex::new(String::new()));
        let (mut pipe, sink) = (child.stderr.take().unwrap(), stderr.clone());
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                sink.lock().unwrap().push_str(&String::from_utf8_lossy(&buf[..n]));
            }
        });
        Server { child, ready, data_root: data_root.to_path_buf(), stderr }
    }

    pub fn api_base(&self) -> String {
        format!("http://{}", self.ready["api"].as_str().expect("api running"))
    }

    pub fn broker_url(&self) -> String {
        self.ready["broker_url"].as_str().unwrap().to_string()
    }

    pub fn ca_path(&self) -> String {
        self.ready["ca_path"].as_str().unwrap().to_string()
    }

    /// SIGKILL, no chance to flush or clean up.
    pub fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn stdout_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("bad JSON line {l:?}: {e}")))
        .collect()
}

pub fn http() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder().timeout(Duration::from_secs(30)).build().unwrap()
}

pub fn login(base: &str, email: &str, password: &str) -> String {
    let resp = http()
        .post(format!("{base}/api/v1/auth/login"))
        .json(&serde_json::json!({ "email": email, "password": password }))
        .send()
        .unwrap();
    assert_eq!(resp.status(), 200, "login {email}");
    resp.json::<Value>().unwrap()["token"].as_str().unwrap().to_string()
}

pub fn get(base: &str, path: &str, token: &str) -> (u16, String) {
    let resp = http().get(format!("{base}/api/v1{path}")).bearer_auth(token).send().unwrap();
    (resp.status().as_u16(), resp.text().unwrap())
}

/// Seeds the demo data and returns the admin's password.
pub fn seed(base: &str) -> String {
    let out = run(&["seed", "--api", base]);
    assert!(out.status.success(), "seed failed: {}", String::from_utf8_lossy(&out.stderr));
    let report = &stdout_lines(&out)[0];
    report["created_users"]
        .as_array()
        .unwrap()
        .iter()
        .find(|u| u["role"] == "admin")
        .expect("first seed creates the admin")["password"]
        .as_str()
        .unwrap()
        .to_string()
}
