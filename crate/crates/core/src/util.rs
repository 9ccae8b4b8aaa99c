//! Hashing and seed derivation shared by every persisted artifact.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Short, stable hash of a serializable configuration (16 hex digits).
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent child seed for `(master, tag, index)`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Writes rows as CSV preceded by a `# config_hash=` comment line.
pub fn write_csv<T: Serialize>(path: &Path, hash: &str, rows: &[T], header: &[&str]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut buf = format!("# config_hash={hash}\n").into_bytes();
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`], returning the embedded hash and rows.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<(Option<String>, Vec<T>)> {
    let text = std::fs::read_to_string(path)?;
    let hash = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# config_hash="))
        .map(str::to_owned);
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()?;
    Ok((hash, rows))
}
