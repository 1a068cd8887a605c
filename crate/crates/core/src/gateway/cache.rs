use super::SamplingParams;
use crate::prompts::TemplateName;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Digest of everything that can change a response.
pub fn cache_key(
    model: &str,
    template: TemplateName,
    system: Option<&str>,
    user: &str,
    params: &SamplingParams,
    attempt: u32,
) -> String {
    let material = serde_json::json!({
        "model": model,
        "template": template.as_str(),
        "system": system,
        "user": user,
        "temperature": params.temperature,
        "top_p": params.top_p,
        "attempt": attempt,
    });
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

/// Append-only response store. With a directory, every entry is also kept on
/// disk as `<digest>.txt` holding the raw response.
#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, String>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            mem: Mutex::default(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.txt")))
    }

    pub fn get(&self, key: &str) -> io::Result<Option<String>> {
        if let Some(v) = self.mem.lock().expect("cache lock").get(key) {
            return Ok(Some(v.clone()));
        }
        let Some(path) = self.path(key) else {
            return Ok(None);
        };
        match fs::read_to_string(&path) {
            Ok(text) => {
                self.mem
                    .lock()
                    .expect("cache lock")
                    .insert(key.to_string(), text.clone());
                Ok(Some(text))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// First write wins; later writes for the same key are ignored.
    pub fn put(&self, key: &str, value: &str) -> io::Result<()> {
        {
            let mut mem = self.mem.lock().expect("cache lock");
            if mem.contains_key(key) {
                return Ok(());
            }
            mem.insert(key.to_string(), value.to_string());
        }
        if let Some(path) = self.path(key) {
            if !path.exists() {
                let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
                fs::write(&tmp, value)?;
                fs::rename(&tmp, &path)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mem.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
