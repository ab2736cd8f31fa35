//! Tool adapters: builtin functions, subprocesses, HTTP endpoints and
//! remote API clients behind one `invoke` call.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;
use thiserror::Error;

use super::builtin::{run_builtin, run_remote_stub};
use crate::llm::LlmClient;
use crate::media::SegmentLimit;
use crate::registry::{extract_first_object, AdapterKind, ToolDescriptor};
use crate::store::ArtifactData;
use crate::taxonomy::{Artifact, Modality};

/// Maximum response body accepted from an HTTP tool.
pub const MAX_HTTP_BODY: u64 = 64 * 1024 * 1024;
const STDERR_EXCERPT: usize = 400;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdapterError {
    #[error("tool does not implement task `{0}`")]
    UnsupportedTask(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("{reason}")]
    Failed {
        reason: String,
        exit_code: Option<i32>,
        /// Tail of stderr (subprocess) or response body (HTTP).
        stderr: String,
    },
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("unusable tool output: {0}")]
    BadOutput(String),
}

/// One input slot after binding: the stored artifact, its decoded data and
/// a file path holding its payload.
#[derive(Debug, Clone)]
pub struct BoundInput {
    pub artifact: Artifact,
    pub data: ArtifactData,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolOutput {
    pub slot: Option<String>,
    pub data: ArtifactData,
}

#[derive(Debug, Clone)]
pub struct AdapterContext {
    pub timeout: Duration,
    pub segment: SegmentLimit,
    /// Backend for LLM-backed builtin tools.
    pub llm: Option<LlmClient>,
    /// Scratch directory; subprocess tools write their outputs here.
    pub work_dir: PathBuf,
}

/// Run `tool` on `task`.
pub fn invoke(
    tool: &ToolDescriptor,
    task: &str,
    inputs: &BTreeMap<String, BoundInput>,
    ctx: &AdapterContext,
) -> Result<Vec<ToolOutput>, AdapterError> {
    if !tool.supports(task) {
        return Err(AdapterError::UnsupportedTask(task.to_string()));
    }
    match &tool.adapter {
        AdapterKind::Builtin => with_timeout(ctx.timeout, {
            let (task, inputs, ctx) = (task.to_string(), inputs.clone(), ctx.clone());
            move || run_builtin(&task, &inputs, &ctx)
        }),
        AdapterKind::RemoteApi(provider) => with_timeout(ctx.timeout, {
            let (provider, task, inputs, ctx) = (provider.clone(), task.to_string(), inputs.clone(), ctx.clone());
            move || run_remote_stub(&provider, &task, &inputs, &ctx)
        }),
        AdapterKind::Subprocess(template) => run_subprocess(template, task, inputs, ctx),
        AdapterKind::Http(template) => run_http(template, task, inputs, ctx),
    }
}

fn with_timeout<F>(timeout: Duration, f: F) -> Result<Vec<ToolOutput>, AdapterError>
where
    F: FnOnce() -> Result<Vec<ToolOutput>, AdapterError> + Send + 'static,
{
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let _ = tx.send(f());
    });
    match rx.recv_timeout(timeout) {
        Ok(result) => result,
        Err(mpsc::RecvTimeoutError::Timeout) => Err(AdapterError::Timeout(timeout)),
        Err(mpsc::RecvTimeoutError::Disconnected) => Err(AdapterError::Failed {
            reason: "builtin tool panicked".into(),
            exit_code: None,
            stderr: String::new(),
        }),
    }
}

fn excerpt(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let start = chars.len().saturating_sub(STDERR_EXCERPT);
    chars[start..].iter().collect::<String>().trim().to_string()
}

fn decode_output(modality: Modality, bytes: &[u8], what: &str) -> Result<ArtifactData, AdapterError> {
    ArtifactData::decode(modality, bytes).map_err(|e| AdapterError::BadOutput(format!("{what}: {e}")))
}

fn substitute(word: &str, task: &str, out: &Path, inputs: &BTreeMap<String, BoundInput>) -> String {
    let mut w = word.replace("{task}", task).replace("{out}", &out.to_string_lossy());
    for (slot, b) in inputs {
        w = w.replace(&format!("{{{slot}}}"), &b.path.to_string_lossy());
    }
    w
}

/// Command line for a subprocess tool:
/// `<template words> --task <name> --out <dir> [--<slot> <path>]...`
pub fn subprocess_command(
    template: &str,
    task: &str,
    out: &Path,
    inputs: &BTreeMap<String, BoundInput>,
) -> Result<Vec<String>, AdapterError> {
    let words = shlex::split(template)
        .filter(|w| !w.is_empty())
        .ok_or_else(|| AdapterError::BadInput(format!("cannot split command template `{template}`")))?;
    let mut argv: Vec<String> = words.iter().map(|w| substitute(w, task, out, inputs)).collect();
    argv.extend(["--task".to_string(), task.to_string(), "--out".to_string(), out.to_string_lossy().into_owned()]);
    for (slot, b) in inputs {
        argv.push(format!("--{slot}"));
        argv.push(b.path.to_string_lossy().into_owned());
    }
    Ok(argv)
}

fn spawn_reader<R: Read + Send + 'static>(mut r: R) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        buf
    })
}

fn run_subprocess(
    template: &str,
    task: &str,
    inputs: &BTreeMap<String, BoundInput>,
    ctx: &AdapterContext,
) -> Result<Vec<ToolOutput>, AdapterError> {
    let io_err = |e: std::io::Error| AdapterError::Failed {
        reason: format!("cannot start tool: {e}"),
        exit_code: None,
        stderr: String::new(),
    };
    let out = &ctx.work_dir;
    if out.exists() {
        fs::remove_dir_all(out).map_err(io_err)?;
    }
    fs::create_dir_all(out).map_err(io_err)?;
    let argv = subprocess_command(template, task, out, inputs)?;

    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(io_err)?;
    let stdout = spawn_reader(child.stdout.take().expect("stdout piped"));
    let stderr = spawn_reader(child.stderr.take().expect("stderr piped"));

    let deadline = Instant::now() + ctx.timeout;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(io_err)? {
            break status;
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Err(AdapterError::Timeout(ctx.timeout));
        }
        thread::sleep(Duration::from_millis(5));
    };
    let stdout = String::from_utf8_lossy(&stdout.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&stderr.join().unwrap_or_default()).into_owned();
    if !status.success() {
        return Err(AdapterError::Failed {
            reason: match status.code() {
                Some(code) => format!("tool exited with status {code}"),
                None => "tool was killed by a signal".to_string(),
            },
            exit_code: status.code(),
            stderr: excerpt(&stderr),
        });
    }
    collect_outputs(&stdout, out)
}

/// Outputs declared on stdout as `{"outputs":[{slot, path, modality}]}`,
/// otherwise every recognised file in `out`, by file name.
fn collect_outputs(stdout: &str, out: &Path) -> Result<Vec<ToolOutput>, AdapterError> {
    let declared = extract_first_object(stdout).and_then(|o| o.get("outputs").cloned());
    let mut outputs = Vec::new();
    if let Some(Value::Array(items)) = declared {
        for item in items {
            let path = item
                .get("path")
                .and_then(Value::as_str)
                .ok_or_else(|| AdapterError::BadOutput("declared output lacks `path`".into()))?;
            let path = if Path::new(path).is_absolute() { PathBuf::from(path) } else { out.join(path) };
            let modality = match item.get("modality").and_then(Value::as_str) {
                Some(m) => m.parse::<Modality>().map_err(|_| AdapterError::BadOutput(format!("unknown modality `{m}`")))?,
                None => modality_of_path(&path)?,
            };
            let bytes = fs::read(&path).map_err(|e| AdapterError::BadOutput(format!("{}: {e}", path.display())))?;
            outputs.push(ToolOutput {
                slot: item.get("slot").and_then(Value::as_str).map(str::to_string),
                data: decode_output(modality, &bytes, &path.display().to_string())?,
            });
        }
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(out)
            .map_err(|e| AdapterError::BadOutput(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && modality_of_path(p).is_ok())
            .collect();
        files.sort();
        for path in files {
            let modality = modality_of_path(&path)?;
            let bytes = fs::read(&path).map_err(|e| AdapterError::BadOutput(e.to_string()))?;
            outputs.push(ToolOutput {
                slot: path.file_stem().map(|s| s.to_string_lossy().into_owned()),
                data: decode_output(modality, &bytes, &path.display().to_string())?,
            });
        }
    }
    if outputs.is_empty() {
        return Err(AdapterError::BadOutput("tool produced no outputs".into()));
    }
    Ok(outputs)
}

fn modality_of_path(path: &Path) -> Result<Modality, AdapterError> {
    path.extension()
        .and_then(|e| Modality::from_extension(&e.to_string_lossy()))
        .ok_or_else(|| AdapterError::BadOutput(format!("cannot infer modality of {}", path.display())))
}

#[cfg(feature = "net")]
fn run_http(
    template: &str,
    task: &str,
    inputs: &BTreeMap<String, BoundInput>,
    ctx: &AdapterContext,
) -> Result<Vec<ToolOutput>, AdapterError> {
    use super::multipart::{self, Part};

    let url = template.replace("{task}", task);
    let mut parts = vec![Part::text("task", task)];
    for (slot, b) in inputs {
        let bytes = b.data.encode().map_err(|e| AdapterError::BadInput(e.to_string()))?;
        let m = b.artifact.modality;
        parts.push(Part::file(slot.clone(), format!("{}.{}", b.artifact.id, m.extension()), m.content_type(), bytes));
    }
    let (body, content_type) = multipart::encode(&parts, &multipart::new_boundary());

    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(ctx.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let transport = |e: ureq::Error| match e {
        ureq::Error::Timeout(_) => AdapterError::Timeout(ctx.timeout),
        other => AdapterError::Failed {
            reason: format!("HTTP request failed: {other}"),
            exit_code: None,
            stderr: String::new(),
        },
    };
    let mut resp = agent
        .post(&url)
        .header("content-type", &content_type)
        .send(&body[..])
        .map_err(transport)?;
    let status = resp.status().as_u16();
    let resp_type = resp
        .headers()
        .get("content-type")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let bytes = resp
        .body_mut()
        .with_config()
        .limit(MAX_HTTP_BODY)
        .read_to_vec()
        .map_err(transport)?;
    if !(200..300).contains(&status) {
        return Err(AdapterError::Failed {
            reason: format!("tool endpoint returned HTTP {status}"),
            exit_code: None,
            stderr: excerpt(&String::from_utf8_lossy(&bytes)),
        });
    }
    if let Some(boundary) = multipart::boundary_of(&resp_type) {
        let parts = multipart::parse(&bytes, &boundary).map_err(AdapterError::BadOutput)?;
        let mut outputs = Vec::new();
        for p in parts {
            let modality = p
                .content_type
                .as_deref()
                .and_then(Modality::from_content_type)
                .or_else(|| {
                    p.filename
                        .as_deref()
                        .and_then(|f| Path::new(f).extension())
                        .and_then(|e| Modality::from_extension(&e.to_string_lossy()))
                })
                .ok_or_else(|| AdapterError::BadOutput(format!("part `{}` has no recognisable type", p.name)))?;
            outputs.push(ToolOutput {
                slot: (!p.name.is_empty()).then(|| p.name.clone()),
                data: decode_output(modality, &p.body, &p.name)?,
            });
        }
        if outputs.is_empty() {
            return Err(AdapterError::BadOutput("empty multipart response".into()));
        }
        Ok(outputs)
    } else {
        let modality = Modality::from_content_type(&resp_type)
            .ok_or_else(|| AdapterError::BadOutput(format!("unexpected content type `{resp_type}`")))?;
        Ok(vec![ToolOutput {
            slot: None,
            data: decode_output(modality, &bytes, "response body")?,
        }])
    }
}

#[cfg(not(feature = "net"))]
fn run_http(
    _template: &str,
    _task: &str,
    _inputs: &BTreeMap<String, BoundInput>,
    _ctx: &AdapterContext,
) -> Result<Vec<ToolOutput>, AdapterError> {
    Err(AdapterError::Failed {
        reason: "HTTP tools need the `net` feature".into(),
        exit_code: None,
        stderr: String::new(),
    })
}
