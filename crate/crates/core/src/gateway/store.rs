//! Append-only `raw_responses.jsonl`, indexed by request digest.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::prompt::ChatMessage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponseRecord {
    pub request_digest: String,
    pub messages: Vec<ChatMessage>,
    pub response_text: String,
    pub model_name: String,
    pub timestamp: String,
    pub sample_index: usize,
}

struct Inner {
    index: HashMap<String, String>,
    file: Option<File>,
}

pub struct RecordStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl RecordStore {
    /// Open (or lazily create) a store. Existing records are indexed; a torn
    /// final line left by a crash is ignored and overwritten on next append.
    pub fn open(path: &Path) -> io::Result<Self> {
        let mut index = HashMap::new();
        match fs::read_to_string(path) {
            Ok(raw) => {
                let mut good_len = 0;
                for line in raw.split_inclusive('\n') {
                    if !line.ends_with('\n') {
                        break;
                    }
                    if !line.trim().is_empty() {
                        let r: RawResponseRecord = serde_json::from_str(line).map_err(|e| {
                            io::Error::new(
                                io::ErrorKind::InvalidData,
                                format!("{}: {e}", path.display()),
                            )
                        })?;
                        index.entry(r.request_digest).or_insert(r.response_text);
                    }
                    good_len += line.len();
                }
                if good_len < raw.len() {
                    let f = OpenOptions::new().write(true).open(path)?;
                    f.set_len(good_len as u64)?;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        Ok(Self {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner { index, file: None }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        self.inner
            .lock()
            .expect("store poisoned")
            .index
            .get(digest)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store poisoned").index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Append one record and flush it before returning. A digest already
    /// present is not written twice.
    pub fn append(&self, record: &RawResponseRecord) -> io::Result<()> {
        let mut inner = self.inner.lock().expect("store poisoned");
        if inner.index.contains_key(&record.request_digest) {
            return Ok(());
        }
        if inner.file.is_none() {
            if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            inner.file = Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&self.path)?,
            );
        }
        let mut line = serde_json::to_string(record).map_err(io::Error::other)?;
        line.push('\n');
        let f = inner.file.as_mut().expect("opened above");
        f.write_all(line.as_bytes())?;
        f.flush()?;
        inner
            .index
            .insert(record.request_digest.clone(), record.response_text.clone());
        Ok(())
    }
}
