use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let mut file = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| PipelineError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Incremental hash over labelled parts.
#[derive(Default)]
pub struct InputHash(Sha256);

impl InputHash {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(mut self, label: &str, value: &str) -> Self {
        for part in [label.as_bytes(), value.as_bytes()] {
            self.0.update((part.len() as u64).to_le_bytes());
            self.0.update(part);
        }
        self
    }

    pub fn json<T: Serialize>(self, label: &str, value: &T) -> Self {
        let s = serde_json::to_string(value).expect("stamp input serializes");
        self.text(label, &s)
    }

    pub fn file(self, label: &str, path: &Path) -> Result<Self, PipelineError> {
        let h = sha256_file(path)?;
        Ok(self.text(label, &h))
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

/// Record of a completed stage: what went in and what came out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub inputs: String,
    pub outputs: BTreeMap<String, String>,
}

pub struct Stamps {
    dir: PathBuf,
    root: PathBuf,
}

impl Stamps {
    pub fn new(dir: PathBuf, root: PathBuf) -> Self {
        Self { dir, root }
    }

    fn key(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    fn path(&self, stage: &str) -> PathBuf {
        self.dir.join(format!("{stage}.json"))
    }

    /// True when the stage last ran on the same inputs and every recorded
    /// output is still present and unchanged.
    pub fn is_fresh(&self, stage: &str, inputs: &str, outputs: &[PathBuf]) -> bool {
        let Ok(text) = fs::read_to_string(self.path(stage)) else {
            return false;
        };
        let Ok(stamp) = serde_json::from_str::<Stamp>(&text) else {
            return false;
        };
        if stamp.inputs != inputs || stamp.outputs.len() != outputs.len() {
            return false;
        }
        outputs.iter().all(|p| {
            let recorded = stamp.outputs.get(&self.key(p));
            recorded.is_some() && sha256_file(p).ok().as_ref() == recorded
        })
    }

    pub fn record(&self, stage: &str, inputs: &str, outputs: &[PathBuf]) -> Result<(), PipelineError> {
        let mut map = BTreeMap::new();
        for p in outputs {
            map.insert(self.key(p), sha256_file(p)?);
        }
        let stamp = Stamp { stage: stage.into(), inputs: inputs.into(), outputs: map };
        fs::create_dir_all(&self.dir).map_err(|e| PipelineError::io(&self.dir, e))?;
        let path = self.path(stage);
        fs::write(&path, serde_json::to_string_pretty(&stamp).expect("stamp serializes")).map_err(|e| PipelineError::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub stage: String,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// Append-only call-sequence log.
pub struct AuditLog {
    path: PathBuf,
    events: Mutex<Vec<AuditEvent>>,
}

impl AuditLog {
    pub fn new(path: PathBuf) -> Self {
        Self { path, events: Mutex::new(Vec::new()) }
    }

    pub fn log(&self, event: AuditEvent) -> Result<(), PipelineError> {
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| PipelineError::io(&self.path, e))?;
        let line = serde_json::to_string(&event).expect("event serializes");
        writeln!(f, "{line}").map_err(|e| PipelineError::io(&self.path, e))?;
        self.events.lock().expect("audit lock").push(event);
        Ok(())
    }

    /// Events logged by this process.
    pub fn events(&self) -> Vec<AuditEvent> {
        self.events.lock().expect("audit lock").clone()
    }

    /// Every event in the log file, across runs.
    pub fn read_all(path: &Path) -> Result<Vec<AuditEvent>, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| PipelineError::Validation(format!("audit log: {e}"))))
            .collect()
    }
}

/// Writes `text` atomically through a sibling temp file.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text).map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}
