#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use serde_json::{json, Value};
use structa::api::App;
use structa::config::Config;
use structa_core::model::{LabelRecord, Provenance};
use structa_core::synth::{self, SynthDoc};

pub const BIN: &str = env!("CARGO_BIN_EXE_structa");

pub fn stub_trainer(extra: &[&str]) -> Vec<String> {
    let mut argv = vec![BIN.to_string(), "stub-trainer".to_string()];
    argv.extend(extra.iter().map(|s| s.to_string()));
    argv
}

/// Synthetic corpus files plus a config pointing at them.
pub struct Sample {
    pub dir: PathBuf,
    pub docs: Vec<SynthDoc>,
    pub config: Config,
    pub config_path: PathBuf,
}

impl Sample {
    pub fn documents_jsonl(&self) -> String {
        synth::to_jsonl(&self.docs)
    }

    pub fn gold(&self) -> Vec<LabelRecord> {
        self.docs
            .iter()
            .map(|d| LabelRecord { doc_id: d.document.doc_id.clone(), provenance: Provenance::Human, parse: d.truth.clone() })
            .collect()
    }

    pub fn gold_path(&self) -> PathBuf {
        let path = self.dir.join("gold.jsonl");
        let text: String = self.gold().iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        std::fs::write(&path, text).unwrap();
        path
    }
}

pub fn sample(dir: &Path, n_docs: usize, trainer: Vec<String>) -> Sample {
    std::fs::create_dir_all(dir).unwrap();
    let docs = synth::generate_corpus(&synth::SynthConfig::new(n_docs, 5));
    let rules = dir.join("mock_rules.json");
    std::fs::write(&rules, serde_json::to_string_pretty(&synth::demo_rules()).unwrap()).unwrap();
    std::fs::write(dir.join("ontology.json"), serde_json::to_string(&synth::drunk_driving_ontology()).unwrap()).unwrap();
    let mut config = Config { data_dir: dir.join("data"), trainer, port: 0, ..Config::default() };
    config.llm.mock_rules = Some(rules);
    let config_path = dir.join("structa.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    Sample { dir: dir.to_path_buf(), docs, config, config_path }
}

/// An in-process service on an ephemeral port; stops when dropped.
pub struct Server {
    pub base: String,
    pub client: Client,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Server {
    pub fn start(config: Config) -> Server {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let app: Arc<App> = App::open(config).unwrap();
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, structa::http::router(app))
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv_timeout(Duration::from_secs(10)).expect("server did not start");
        Server {
            base: format!("http://{addr}"),
            client: Client::builder().timeout(Duration::from_secs(60)).build().unwrap(),
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder) -> (u16, Value) {
        let resp = req.send().unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        self.send(self.client.get(format!("{}{path}", self.base)))
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        self.send(self.client.post(format!("{}{path}", self.base)).json(body))
    }

    pub fn put(&self, path: &str, body: &Value) -> (u16, Value) {
        self.send(self.client.put(format!("{}{path}", self.base)).json(body))
    }

    pub fn post_raw(&self, path: &str, body: String) -> (u16, Value) {
        self.send(self.client.post(format!("{}{path}", self.base)).body(body))
    }

    /// Polls a job or task until it leaves the queued/running states;
    /// returns every observed status.
    pub fn poll(&self, id: &str) -> Vec<Value> {
        let deadline = Instant::now() + Duration::from_secs(60);
        let mut seen = Vec::new();
        loop {
            let (status, v) = self.get(&format!("/jobs/{id}"));
            assert_eq!(status, 200, "{v}");
            let state = v["state"].as_str().unwrap().to_string();
            seen.push(v);
            if !matches!(state.as_str(), "queued" | "running" | "retrying") {
                return seen;
            }
            assert!(Instant::now() < deadline, "{id} did not finish");
            std::thread::sleep(Duration::from_millis(10));
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

/// Runs the CLI with `--json` and parses stdout.
pub fn cli_json(config: &Path, args: &[&str]) -> (i32, Value) {
    let mut all = vec!["--config", config.to_str().unwrap(), "--json"];
    all.extend_from_slice(args);
    let out = cli(&all);
    let code = out.status.code().unwrap_or(-1);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let v = serde_json::from_str(stdout.trim()).unwrap_or_else(|_| {
        json!({"stdout": stdout, "stderr": String::from_utf8_lossy(&out.stderr)})
    });
    (code, v)
}

/// Drops every timestamp, duration and absolute path so outputs from two
/// runs can be compared.
pub fn strip_volatile(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.iter()
                .filter(|(k, _)| !(k.ends_with("_at") || *k == "at" || k.ends_with("_ms") || k.ends_with("_path")))
                .map(|(k, v)| (k.clone(), strip_volatile(v)))
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.iter().map(strip_volatile).collect()),
        other => other.clone(),
    }
}

pub fn seed_labels(server: &Server, corpus: &str, docs: &[SynthDoc]) {
    for d in docs {
        let (status, v) = server.put(&format!("/corpora/{corpus}/labels/{}", d.document.doc_id), &json!({"parse": d.truth}));
        assert_eq!(status, 200, "{v}");
    }
}

/// `structa serve` as a child process on an ephemeral port.
pub struct ServeProcess {
    pub child: std::process::Child,
    pub server: Server,
}

impl ServeProcess {
    pub fn start(config: &Path) -> ServeProcess {
        use std::io::BufRead;
        let mut child = Command::new(BIN)
            .args(["--config", config.to_str().unwrap(), "serve", "--port", "0"])
            .stdout(std::process::Stdio::piped())
            .stderr(std::process::Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        std::io::BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected banner {line:?}")).to_string();
        let server = Server {
            base,
            client: Client::builder().timeout(Duration::from_secs(60)).build().unwrap(),
            stop: None,
            thread: None,
        };
        ServeProcess { child, server }
    }

    /// SIGKILL: no shutdown hooks run.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }

    pub fn api(&self) -> &Server {
        &self.server
    }
}

impl Drop for ServeProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
