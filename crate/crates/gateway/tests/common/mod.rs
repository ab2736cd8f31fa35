#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use musicagent_core::agent::MusicAgent;
use musicagent_core::clock::SteppingClock;
use musicagent_core::config::Config;
use musicagent_core::llm::{LlmClient, MockEntry, MockLlm, MockScript};
use musicagent_core::media::{write_wav, AudioBuffer};
use tower::ServiceExt;

pub const E2E_PLAN: &str = r#"[{"id":"t1","task":"lyric-to-melody","args":{"input":"rain falls soft on the city"}},
 {"id":"t2","task":"render-preview","args":{"input":{"from":"t1"}}},
 {"id":"t3","task":"music-classification","args":{"input":{"from":"t2"}}}]"#;

pub const E2E_REPLY: &str = "Here is your melody with a preview and its genre.";

pub fn e2e_script() -> Vec<MockEntry> {
    vec![
        MockEntry::matching("# Current request", E2E_PLAN),
        MockEntry::matching("# Results", E2E_REPLY),
    ]
}

pub fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("config")
}

/// Built-in catalogs plus the shipped render-preview extension, storing
/// under `root`.
pub fn config(root: &Path) -> Config {
    let mut c = Config::rooted(root);
    c.paths.extra_tasks.push(config_dir().join("render-preview.tasks.json"));
    c.paths.extra_tools.push(config_dir().join("render-preview.tools.json"));
    c
}

pub fn agent_with(root: &Path, backend: Arc<MockLlm>) -> Arc<MusicAgent> {
    let agent = MusicAgent::with_clock(config(root), LlmClient::new(backend), Arc::new(SteppingClock::epoch())).unwrap();
    Arc::new(agent)
}

pub fn agent(root: &Path, script: Vec<MockEntry>) -> Arc<MusicAgent> {
    agent_with(root, Arc::new(MockLlm::new(MockScript::new(script))))
}

pub fn wav(seconds: f64) -> Vec<u8> {
    let n = (16_000.0 * seconds) as usize;
    let samples = (0..n).map(|i| ((i as f64 * 0.1).sin() * 8000.0) as i16).collect();
    write_wav(&AudioBuffer::mono(16_000, samples).unwrap())
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn json(app: &Router, method: Method, uri: &str, body: serde_json::Value) -> Reply {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

/// Multipart body with an optional `modality` field and one `file` part.
pub fn multipart(modality: Option<&str>, filename: &str, content_type: &str, bytes: &[u8]) -> (String, Vec<u8>) {
    let boundary = "----musicagent-test-boundary";
    let mut body = Vec::new();
    if let Some(m) = modality {
        body.extend_from_slice(
            format!("--{boundary}\r\nContent-Disposition: form-data; name=\"modality\"\r\n\r\n{m}\r\n").as_bytes(),
        );
    }
    body.extend_from_slice(
        format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{filename}\"\r\nContent-Type: {content_type}\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

pub async fn upload(app: &Router, session: &str, modality: Option<&str>, filename: &str, ct: &str, bytes: &[u8]) -> Reply {
    let (content_type, body) = multipart(modality, filename, ct, bytes);
    let req = Request::post(format!("/sessions/{session}/artifacts"))
        .header(header::CONTENT_TYPE, content_type)
        .body(Body::from(body))
        .unwrap();
    send(app, req).await
}
