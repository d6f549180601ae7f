//! A [`ModelStore`] on the local filesystem. Each model gets a directory
//! with its initial snapshot, an append-only `events.jsonl` and periodic
//! checkpoints. Appends are flushed to disk before returning.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use layerloom_collab::{Comment, ModelRecord, ModelStore, StoreError, StoredModel, UpdateEvent};
use layerloom_core::ir::IrModel;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

const RECORD: &str = "record.json";
const INITIAL: &str = "initial.json";
const EVENTS: &str = "events.jsonl";
const COMMENTS: &str = "comments.jsonl";
const CHECKPOINTS: &str = "checkpoints";
const SHARES: &str = "shares.jsonl";

#[derive(Serialize, Deserialize)]
struct ShareLine {
    model_id: String,
    token: String,
    created_at: DateTime<Utc>,
}

fn io_err(path: &Path, e: io::Error) -> StoreError {
    StoreError::Io(format!("{}: {e}", path.display()))
}

pub struct FileStore {
    root: PathBuf,
    /// Share links by model id and by token; the file is the record.
    shares: Mutex<(HashMap<String, String>, HashMap<String, String>)>,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("models")).map_err(|e| io_err(&root, e))?;
        let mut by_model = HashMap::new();
        let mut by_token = HashMap::new();
        for line in read_lines::<ShareLine>(&root.join(SHARES))? {
            by_token.insert(line.token.clone(), line.model_id.clone());
            by_model.entry(line.model_id).or_insert(line.token);
        }
        Ok(FileStore { root, shares: Mutex::new((by_model, by_token)) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, model_id: &str) -> Result<PathBuf, StoreError> {
        let safe = !model_id.is_empty()
            && model_id.len() <= 64
            && model_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !safe {
            return Err(StoreError::Missing(model_id.to_string()));
        }
        Ok(self.root.join("models").join(model_id))
    }

    fn existing_dir(&self, model_id: &str) -> Result<PathBuf, StoreError> {
        let dir = self.dir(model_id)?;
        if dir.join(RECORD).is_file() {
            Ok(dir)
        } else {
            Err(StoreError::Missing(model_id.to_string()))
        }
    }
}

/// Writes a whole file through a temporary name so readers never see a
/// partial document.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    if let Some(parent) = path.parent() {
        if let Ok(d) = File::open(parent) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut line = serde_json::to_vec(value).map_err(|e| StoreError::Io(e.to_string()))?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
    f.write_all(&line).and_then(|_| f.sync_data()).map_err(|e| io_err(path, e))
}

/// Reads a JSON-lines file. A final line without its newline is the
/// remains of an interrupted append: it is dropped and cut from the file
/// so later appends start on a clean line.
fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path, e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(|e| io_err(path, e))?;
        f.set_len(complete as u64).and_then(|_| f.sync_all()).map_err(|e| io_err(path, e))?;
    }
    let text =
        std::str::from_utf8(&bytes[..complete]).map_err(|e| StoreError::Corrupt(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Corrupt(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Corrupt(format!("{}: {e}", path.display())))
}

fn read_model(path: &Path) -> Result<IrModel, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    IrModel::from_json(&text).map_err(|e| StoreError::Corrupt(format!("{}: {e}", path.display())))
}

impl ModelStore for FileStore {
    fn create(&self, record: &ModelRecord, initial: &IrModel) -> Result<(), StoreError> {
        let dir = self.dir(&record.model_id)?;
        if dir.join(RECORD).exists() {
            return Err(StoreError::Exists(record.model_id.clone()));
        }
        fs::create_dir_all(dir.join(CHECKPOINTS)).map_err(|e| io_err(&dir, e))?;
        write_atomic(&dir.join(INITIAL), initial.to_json().as_bytes())?;
        // The record goes last: a directory without one is an unfinished
        // create and is ignored.
        let record_json = serde_json::to_vec(record).map_err(|e| StoreError::Io(e.to_string()))?;
        write_atomic(&dir.join(RECORD), &record_json)
    }

    fn append(&self, model_id: &str, event: &UpdateEvent) -> Result<(), StoreError> {
        append_line(&self.existing_dir(model_id)?.join(EVENTS), event)
    }

    fn checkpoint(&self, model_id: &str, version: u64, model: &IrModel) -> Result<(), StoreError> {
        let path = self.existing_dir(model_id)?.join(CHECKPOINTS).join(format!("{version:012}.json"));
        write_atomic(&path, model.to_json().as_bytes())
    }

    fn load(&self, model_id: &str) -> Result<Option<StoredModel>, StoreError> {
        let Ok(dir) = self.existing_dir(model_id) else {
            return Ok(None);
        };
        let record: ModelRecord = read_json(&dir.join(RECORD))?;
        let initial = read_model(&dir.join(INITIAL))?;
        let events: Vec<UpdateEvent> = read_lines(&dir.join(EVENTS))?;
        let mut checkpoints = BTreeMap::new();
        if let Ok(entries) = fs::read_dir(dir.join(CHECKPOINTS)) {
            for entry in entries.flatten() {
                let path = entry.path();
                let version = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.strip_suffix(".json"))
                    .and_then(|n| n.parse::<u64>().ok());
                if let Some(v) = version {
                    checkpoints.insert(v, read_model(&path)?);
                }
            }
        }
        Ok(Some(StoredModel { record, initial, events, checkpoints }))
    }

    fn list(&self) -> Result<Vec<String>, StoreError> {
        let models = self.root.join("models");
        let mut ids: Vec<String> = fs::read_dir(&models)
            .map_err(|e| io_err(&models, e))?
            .flatten()
            .filter(|e| e.path().join(RECORD).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    fn add_comment(&self, model_id: &str, comment: &Comment) -> Result<(), StoreError> {
        append_line(&self.existing_dir(model_id)?.join(COMMENTS), comment)
    }

    fn comments(&self, model_id: &str) -> Result<Vec<Comment>, StoreError> {
        read_lines(&self.existing_dir(model_id)?.join(COMMENTS))
    }

    fn put_share(&self, model_id: &str, token: &str) -> Result<String, StoreError> {
        let mut shares = self.shares.lock().unwrap();
        if let Some(existing) = shares.0.get(model_id) {
            return Ok(existing.clone());
        }
        if shares.1.contains_key(token) {
            return Err(StoreError::Exists(format!("share token {token}")));
        }
        self.existing_dir(model_id)?;
        let line = ShareLine { model_id: model_id.to_string(), token: token.to_string(), created_at: Utc::now() };
        append_line(&self.root.join(SHARES), &line)?;
        shares.0.insert(model_id.to_string(), token.to_string());
        shares.1.insert(token.to_string(), model_id.to_string());
        Ok(token.to_string())
    }

    fn share_of(&self, model_id: &str) -> Result<Option<String>, StoreError> {
        Ok(self.shares.lock().unwrap().0.get(model_id).cloned())
    }

    fn resolve_share(&self, token: &str) -> Result<Option<String>, StoreError> {
        Ok(self.shares.lock().unwrap().1.get(token).cloned())
    }
}
