//! Schema-versioned JSON documents.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    kind: String,
    body: T,
}

pub fn to_json<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    let env = Envelope { schema_version: SCHEMA_VERSION, kind: kind.to_string(), body };
    let mut s = serde_json::to_string_pretty(&env).map_err(|e| RunError::Data(format!("serializing {kind}: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    }
    std::fs::write(path, to_json(kind, body)?).map_err(|e| RunError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    let env: Envelope<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(RunError::Data(format!(
            "{}: schema version {} (this build reads {SCHEMA_VERSION})",
            path.display(),
            env.schema_version
        )));
    }
    if env.kind != kind {
        return Err(RunError::Data(format!("{}: expected a `{kind}` document, found `{}`", path.display(), env.kind)));
    }
    serde_json::from_value(env.body).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
}
