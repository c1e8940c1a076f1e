//! File-exchange protocol with an external enhancer process.
//!
//! Request directory: `renders/c{m:03}_t{t:04}.png`, `meta.json`, and an empty `READY`
//! written last. The responder writes `enhanced/c{m:03}_t{t:04}.png` and then `DONE`,
//! or a non-empty `ERROR` whose contents abort the batch.

use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use dynsplat_core::camera::{Intrinsics, PoseSE3};
use dynsplat_core::enhance::{EnhanceItem, Enhancer};
use dynsplat_core::image::Image;
use serde::{Deserialize, Serialize};

use crate::io;

pub const PROTOCOL_VERSION: u32 = 1;
pub const READY: &str = "READY";
pub const DONE: &str = "DONE";
pub const ERROR: &str = "ERROR";
pub const DEFAULT_TIMEOUT_S: u64 = 3600;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("[timeout] no DONE or ERROR after {secs:.1} s")]
    Timeout { secs: f64 },
    #[error("[missing-output] enhanced/{file} was not written")]
    MissingOutput { file: String },
    #[error("[dimension-mismatch] enhanced/{file} is {found:?}, expected {expected:?}")]
    DimensionMismatch { file: String, expected: (usize, usize), found: (usize, usize) },
    #[error("[responder-error] {0}")]
    Responder(String),
    #[error("[responder-exit] responder exited with {status} without DONE")]
    Exited { status: String },
    #[error("[spawn] {0}")]
    Spawn(String),
    #[error("[bad-request] {0}")]
    BadRequest(String),
    #[error("[io] {0}")]
    Io(String),
}

impl ProtocolError {
    /// Stable name of the failure class.
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Timeout { .. } => "timeout",
            ProtocolError::MissingOutput { .. } => "missing-output",
            ProtocolError::DimensionMismatch { .. } => "dimension-mismatch",
            ProtocolError::Responder(_) => "responder-error",
            ProtocolError::Exited { .. } => "responder-exit",
            ProtocolError::Spawn(_) => "spawn",
            ProtocolError::BadRequest(_) => "bad-request",
            ProtocolError::Io(_) => "io",
        }
    }
}

fn perr(path: &Path, e: impl std::fmt::Display) -> ProtocolError {
    ProtocolError::Io(format!("{}: {e}", path.display()))
}

pub fn view_file(camera: usize, frame: usize) -> String {
    format!("c{camera:03}_t{frame:04}.png")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestItem {
    pub camera: usize,
    pub frame: usize,
    pub file: String,
    pub pose: PoseSE3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub schema_version: u32,
    pub intrinsics: Intrinsics,
    pub strength_k: u32,
    pub items: Vec<RequestItem>,
    /// File names the responder must write under `enhanced/`.
    pub expected_outputs: Vec<String>,
}

/// Writes a complete request; `READY` is created last.
pub fn write_request(dir: &Path, items: &[EnhanceItem], intrinsics: &Intrinsics, strength_k: u32) -> Result<RequestMeta, ProtocolError> {
    for stale in [READY, DONE, ERROR] {
        let p = dir.join(stale);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| perr(&p, e))?;
        }
    }
    for sub in ["renders", "enhanced"] {
        let p = dir.join(sub);
        if p.exists() {
            std::fs::remove_dir_all(&p).map_err(|e| perr(&p, e))?;
        }
        std::fs::create_dir_all(&p).map_err(|e| perr(&p, e))?;
    }
    let mut meta = RequestMeta {
        schema_version: PROTOCOL_VERSION,
        intrinsics: *intrinsics,
        strength_k,
        items: Vec::with_capacity(items.len()),
        expected_outputs: Vec::with_capacity(items.len()),
    };
    for it in items {
        let file = view_file(it.key.camera, it.key.frame);
        if meta.expected_outputs.contains(&file) {
            return Err(ProtocolError::BadRequest(format!("duplicate view {file}")));
        }
        let path = dir.join("renders").join(&file);
        io::write_rgb(&path, &it.render).map_err(|e| perr(&path, e))?;
        meta.items.push(RequestItem { camera: it.key.camera, frame: it.key.frame, file: file.clone(), pose: it.pose });
        meta.expected_outputs.push(file);
    }
    let mp = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| perr(&mp, e))?;
    std::fs::write(&mp, text).map_err(|e| perr(&mp, e))?;
    let ready = dir.join(READY);
    std::fs::write(&ready, b"").map_err(|e| perr(&ready, e))?;
    Ok(meta)
}

/// Reads and checks a request directory (responder side).
pub fn read_request(dir: &Path) -> Result<RequestMeta, ProtocolError> {
    if !dir.join(READY).is_file() {
        return Err(ProtocolError::BadRequest(format!("{} has no READY sentinel", dir.display())));
    }
    let mp = dir.join("meta.json");
    let text = std::fs::read_to_string(&mp).map_err(|e| perr(&mp, e))?;
    let meta: RequestMeta = serde_json::from_str(&text).map_err(|e| ProtocolError::BadRequest(format!("meta.json: {e}")))?;
    if meta.schema_version != PROTOCOL_VERSION {
        return Err(ProtocolError::BadRequest(format!("meta.json schema version {}", meta.schema_version)));
    }
    for f in &meta.expected_outputs {
        if !dir.join("renders").join(f).is_file() {
            return Err(ProtocolError::BadRequest(format!("renders/{f} is missing")));
        }
    }
    Ok(meta)
}

/// Outcome of one poll of a request directory.
#[derive(Debug, PartialEq)]
pub enum Status {
    Pending,
    Done,
    Failed(String),
}

pub fn poll(dir: &Path) -> Result<Status, ProtocolError> {
    let ep = dir.join(ERROR);
    if ep.is_file() {
        let msg = std::fs::read_to_string(&ep).map_err(|e| perr(&ep, e))?;
        // an empty ERROR may still be being written
        if !msg.trim().is_empty() {
            return Ok(Status::Failed(msg.trim().to_string()));
        }
    }
    Ok(if dir.join(DONE).is_file() { Status::Done } else { Status::Pending })
}

/// Loads every expected output and checks its size against the request.
pub fn collect_outputs(dir: &Path, meta: &RequestMeta) -> Result<Vec<Image>, ProtocolError> {
    let expected = (meta.intrinsics.width, meta.intrinsics.height);
    let mut out = Vec::with_capacity(meta.expected_outputs.len());
    for f in &meta.expected_outputs {
        let p = dir.join("enhanced").join(f);
        if !p.is_file() {
            return Err(ProtocolError::MissingOutput { file: f.clone() });
        }
        let img = io::read_rgb(&p).map_err(|e| perr(&p, e))?;
        if (img.width, img.height) != expected {
            return Err(ProtocolError::DimensionMismatch { file: f.clone(), expected, found: (img.width, img.height) });
        }
        out.push(img);
    }
    Ok(out)
}

/// Services a request in-process: applies `f` to every render, then writes `DONE`.
/// On failure writes `ERROR` with the message and removes partial outputs.
pub fn serve_request(dir: &Path, f: &mut dyn FnMut(&Image, &RequestItem) -> Result<Image, String>) -> Result<usize, ProtocolError> {
    let result: Result<usize, ProtocolError> = (|| {
        let meta = read_request(dir)?;
        let enhanced = dir.join("enhanced");
        std::fs::create_dir_all(&enhanced).map_err(|e| perr(&enhanced, e))?;
        for it in &meta.items {
            let src = dir.join("renders").join(&it.file);
            let img = io::read_rgb(&src).map_err(|e| ProtocolError::Responder(format!("{}: {e}", it.file)))?;
            let e = f(&img, it).map_err(|m| ProtocolError::Responder(format!("{}: {m}", it.file)))?;
            io::write_rgb(&enhanced.join(&it.file), &e).map_err(|e| perr(&enhanced, e))?;
        }
        Ok(meta.items.len())
    })();
    match result {
        Ok(n) => {
            let p = dir.join(DONE);
            std::fs::write(&p, b"").map_err(|e| perr(&p, e))?;
            Ok(n)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(dir.join("enhanced"));
            let p = dir.join(ERROR);
            std::fs::write(&p, e.to_string()).map_err(|e| perr(&p, e))?;
            Err(e)
        }
    }
}

/// Enhancer backed by an external command. The request directory is appended as
/// the command's last argument.
pub struct ExternalEnhancer {
    pub command: Vec<String>,
    pub request_dir: PathBuf,
    pub intrinsics: Intrinsics,
    pub strength_k: u32,
    pub timeout: Duration,
    pub poll_interval: Duration,
}

impl ExternalEnhancer {
    pub fn new(command: Vec<String>, request_dir: PathBuf, intrinsics: Intrinsics, strength_k: u32) -> Self {
        Self {
            command,
            request_dir,
            intrinsics,
            strength_k,
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_S),
            poll_interval: Duration::from_millis(20),
        }
    }

    fn spawn(&self) -> Result<Child, ProtocolError> {
        let (prog, args) = self.command.split_first().ok_or_else(|| ProtocolError::Spawn("empty enhancer command".into()))?;
        Command::new(prog)
            .args(args)
            .arg(&self.request_dir)
            .stdin(Stdio::null())
            .spawn()
            .map_err(|e| ProtocolError::Spawn(format!("{prog}: {e}")))
    }

    pub fn run(&self, items: &[EnhanceItem]) -> Result<Vec<Image>, ProtocolError> {
        std::fs::create_dir_all(&self.request_dir).map_err(|e| perr(&self.request_dir, e))?;
        let meta = write_request(&self.request_dir, items, &self.intrinsics, self.strength_k)?;
        let mut child = self.spawn()?;
        let start = Instant::now();
        let mut exited: Option<String> = None;
        loop {
            match poll(&self.request_dir)? {
                Status::Failed(msg) => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(ProtocolError::Responder(msg));
                }
                Status::Done => {
                    let _ = child.wait();
                    return collect_outputs(&self.request_dir, &meta);
                }
                Status::Pending => {}
            }
            if let Some(status) = exited {
                return Err(ProtocolError::Exited { status });
            }
            if let Some(s) = child.try_wait().map_err(|e| ProtocolError::Spawn(e.to_string()))? {
                // one more poll: the sentinel may have landed just before exit
                exited = Some(s.to_string());
                continue;
            }
            if start.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ProtocolError::Timeout { secs: start.elapsed().as_secs_f64() });
            }
            std::thread::sleep(self.poll_interval);
        }
    }
}

impl Enhancer for ExternalEnhancer {
    fn enhance_batch(&mut self, items: &[EnhanceItem]) -> dynsplat_core::Result<Vec<Image>> {
        self.run(items).map_err(|e| dynsplat_core::Error::Enhancer(e.to_string()))
    }
}
