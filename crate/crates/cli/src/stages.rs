//! Stage directories addressed by a hash of everything that determines their contents.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const STAMP: &str = "stamp.json";

/// First 16 hex digits of the SHA-256 of the key's JSON form.
pub fn key_hash(key: &Value) -> String {
    let bytes = serde_json::to_vec(key).expect("json values always serialize");
    hex::encode(Sha256::digest(bytes))[..16].to_string()
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Digest over relative paths and contents of every file below `root`.
pub fn tree_digest(root: &Path) -> std::io::Result<String> {
    if !root.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", root.display()),
        ));
    }
    let mut hasher = Sha256::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(root).expect("walk stays below root");
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            hasher.update(file_digest(entry.path())?.as_bytes());
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub dir: PathBuf,
    pub hash: String,
    pub key: Value,
}

impl Stage {
    /// `<root>/<name>-<hash>`.
    pub fn new(root: &Path, name: &str, key: Value) -> Self {
        let hash = key_hash(&key);
        Self {
            dir: root.join(format!("{name}-{hash}")),
            hash,
            key,
        }
    }

    /// True once [`Stage::finish`] has run for this exact key.
    pub fn is_complete(&self) -> bool {
        self.dir.join(STAMP).is_file()
    }

    /// Empties the directory so no file from an interrupted run survives.
    pub fn begin(&self) -> std::io::Result<()> {
        if self.dir.exists() {
            std::fs::remove_dir_all(&self.dir)?;
        }
        std::fs::create_dir_all(&self.dir)
    }

    pub fn finish(&self) -> std::io::Result<()> {
        write_json(&self.dir.join(STAMP), &serde_json::json!({"hash": self.hash, "key": self.key}))
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> std::io::Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_key_only() {
        let a = Stage::new(Path::new("x"), "fit", serde_json::json!({"k": 1}));
        let b = Stage::new(Path::new("y"), "fit", serde_json::json!({"k": 1}));
        let c = Stage::new(Path::new("x"), "fit", serde_json::json!({"k": 2}));
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
        assert_eq!(a.hash.len(), 16);
    }

    #[test]
    fn tree_digest_sees_content_and_names() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("s")).unwrap();
        std::fs::write(dir.path().join("s/a"), b"1").unwrap();
        let d1 = tree_digest(dir.path()).unwrap();
        assert_eq!(d1, tree_digest(dir.path()).unwrap());
        std::fs::write(dir.path().join("s/a"), b"2").unwrap();
        let d2 = tree_digest(dir.path()).unwrap();
        assert_ne!(d1, d2);
        std::fs::rename(dir.path().join("s/a"), dir.path().join("s/b")).unwrap();
        assert_ne!(d2, tree_digest(dir.path()).unwrap());
        assert!(tree_digest(&dir.path().join("missing")).is_err());
    }
}
