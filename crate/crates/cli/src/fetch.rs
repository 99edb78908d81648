//! HTTP snapshot fetcher with a content-addressed cache.
//!
//! Bodies live under `<cache>/objects/<sha256>.<ext>`; `<cache>/index.json`
//! maps each URL to its latest object and validators for revalidation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use leaderlens_core::pipeline::sha256_hex;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("network error: {0}")]
    Network(String),
    #[error("server answered HTTP {0}")]
    HttpStatus(u16),
    #[error("offline and nothing cached for {0}")]
    CacheMiss(String),
    #[error("invalid URL `{0}`")]
    InvalidUrl(String),
    #[error("cache I/O error at {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchOutcome {
    pub url: String,
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
    /// True when the body came from the cache (offline, or a 304 answer).
    pub from_cache: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    sha256: String,
    file: String,
    etag: Option<String>,
    last_modified: Option<String>,
}

type Index = BTreeMap<String, IndexEntry>;

fn io_err(path: &Path, e: std::io::Error) -> FetchError {
    FetchError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// `LEADERLENS_CACHE`, else the user cache directory, else `./.leaderlens-cache`.
pub fn default_cache_dir() -> PathBuf {
    if let Some(p) = std::env::var_os("LEADERLENS_CACHE").filter(|p| !p.is_empty()) {
        return PathBuf::from(p);
    }
    if let Some(p) = std::env::var_os("XDG_CACHE_HOME").filter(|p| !p.is_empty()) {
        return PathBuf::from(p).join("leaderlens");
    }
    if let Some(p) = std::env::var_os("HOME").filter(|p| !p.is_empty()) {
        return PathBuf::from(p).join(".cache").join("leaderlens");
    }
    PathBuf::from(".leaderlens-cache")
}

fn extension(url: &str) -> &'static str {
    let path = url.split(['?', '#']).next().unwrap_or("").to_ascii_lowercase();
    if path.ends_with(".jsonl") || path.ends_with(".ndjson") {
        "jsonl"
    } else if path.ends_with(".json") {
        "json"
    } else {
        "csv"
    }
}

fn load_index(cache: &Path) -> Result<Index, FetchError> {
    let path = cache.join("index.json");
    match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| FetchError::Io { path: path.display().to_string(), message: e.to_string() }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Index::new()),
        Err(e) => Err(io_err(&path, e)),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FetchError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn cached(url: &str, cache: &Path, entry: &IndexEntry) -> Option<FetchOutcome> {
    let path = cache.join("objects").join(&entry.file);
    let meta = std::fs::metadata(&path).ok()?;
    Some(FetchOutcome { url: url.to_string(), path, sha256: entry.sha256.clone(), bytes: meta.len(), from_cache: true })
}

/// GET `url` into the cache, revalidating with ETag / Last-Modified when a
/// previous copy exists. Offline mode never touches the network.
pub fn fetch_snapshot(url: &str, cache: &Path, offline: bool) -> Result<FetchOutcome, FetchError> {
    if !(url.starts_with("http://") || url.starts_with("https://")) {
        return Err(FetchError::InvalidUrl(url.to_string()));
    }
    let mut index = load_index(cache)?;
    let previous = index.get(url).and_then(|e| cached(url, cache, e).map(|o| (e.clone(), o)));
    if offline {
        return previous.map(|p| p.1).ok_or_else(|| FetchError::CacheMiss(url.to_string()));
    }

    let mut req = ureq::get(url).timeout(std::time::Duration::from_secs(60));
    if let Some((entry, _)) = &previous {
        if let Some(etag) = &entry.etag {
            req = req.set("If-None-Match", etag);
        }
        if let Some(lm) = &entry.last_modified {
            req = req.set("If-Modified-Since", lm);
        }
    }
    let resp = match req.call() {
        Ok(r) => r,
        Err(ureq::Error::Status(code, _)) => return Err(FetchError::HttpStatus(code)),
        Err(e) => return Err(FetchError::Network(e.to_string())),
    };
    if resp.status() == 304 {
        return previous.map(|p| p.1).ok_or(FetchError::HttpStatus(304));
    }
    if resp.status() != 200 {
        return Err(FetchError::HttpStatus(resp.status()));
    }
    let etag = resp.header("ETag").map(str::to_string);
    let last_modified = resp.header("Last-Modified").map(str::to_string);
    let mut body = Vec::new();
    std::io::Read::read_to_end(&mut resp.into_reader(), &mut body).map_err(|e| FetchError::Network(e.to_string()))?;

    let sha256 = sha256_hex(&body);
    let objects = cache.join("objects");
    std::fs::create_dir_all(&objects).map_err(|e| io_err(&objects, e))?;
    let file = format!("{sha256}.{}", extension(url));
    let path = objects.join(&file);
    if !path.exists() {
        write_atomic(&path, &body)?;
    }
    index.insert(url.to_string(), IndexEntry { sha256: sha256.clone(), file, etag, last_modified });
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    write_atomic(&cache.join("index.json"), text.as_bytes())?;
    Ok(FetchOutcome { url: url.to_string(), path, sha256, bytes: body.len() as u64, from_cache: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extension_from_url() {
        assert_eq!(extension("https://x/a/snap.JSONL?x=1"), "jsonl");
        assert_eq!(extension("https://x/a/snap.json"), "json");
        assert_eq!(extension("https://x/a/export"), "csv");
    }

    #[test]
    fn rejects_non_http() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(fetch_snapshot("ftp://x", d.path(), true), Err(FetchError::InvalidUrl(_))));
        assert!(matches!(fetch_snapshot("http://x/y", d.path(), true), Err(FetchError::CacheMiss(_))));
    }
}
