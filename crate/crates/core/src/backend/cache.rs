//! Content-addressed, append-only response cache on disk.
//!
//! One file per key, named by the hex SHA-256 of
//! `model_name \0 temperature-bits \0 prompt`. A file holds a short text
//! header followed by a blank line and the raw completion bytes. Existing
//! records are never rewritten.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

const MAGIC: &str = "revbench-cache/1";

pub fn cache_key(model_name: &str, temperature: f64, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_name.as_bytes());
    h.update([0]);
    h.update(temperature.to_bits().to_le_bytes());
    h.update([0]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir, write_lock: Mutex::new(()), tmp_counter: AtomicU64::new(0) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.rec"))
    }

    pub fn get(&self, key: &str) -> io::Result<Option<String>> {
        let bytes = match fs::read(self.path(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        decode(&bytes).map(Some).ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("corrupt cache record {key}")))
    }

    /// Stores `raw` under `key` unless a record already exists.
    pub fn put(&self, key: &str, model_name: &str, temperature: f64, raw: &str) -> io::Result<()> {
        let target = self.path(key);
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if target.exists() {
            return Ok(());
        }
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = self.dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            let model = model_name.replace(['\n', '\r'], " ");
            write!(f, "{MAGIC}\nmodel: {model}\ntemperature: {temperature}\nlength: {}\n\n", raw.len())?;
            f.write_all(raw.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target)
    }
}

fn decode(bytes: &[u8]) -> Option<String> {
    let split = bytes.windows(2).position(|w| w == b"\n\n")?;
    let header = std::str::from_utf8(&bytes[..split]).ok()?;
    let body = &bytes[split + 2..];
    let mut lines = header.lines();
    if lines.next()? != MAGIC {
        return None;
    }
    let len: usize = lines.find_map(|l| l.strip_prefix("length: "))?.parse().ok()?;
    (body.len() == len).then(|| String::from_utf8(body.to_vec()).ok()).flatten()
}
