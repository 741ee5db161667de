//! Pluggable text-generation and embedding providers.
//!
//! The hosted models behind generation, judging, and embedding are external
//! services; this module defines their seams plus deterministic offline
//! defaults. The wire contract for remote providers is a single HTTP POST
//! of `{system, user}` returning UTF-8 text. `TRAJPRISM_PROVIDER_URL`
//! selects a remote endpoint; absent, every pipeline runs on the defaults.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider transport: {0}")]
    Transport(String),
    #[error("provider returned status {0}")]
    Status(u16),
    #[error("unsupported provider url {0:?} (expected http://host[:port][/path])")]
    BadUrl(String),
    #[error("prompt not recognized by the template provider")]
    UnrecognizedPrompt,
    #[error("empty provider output")]
    EmptyOutput,
}

/// Environment variable naming the remote provider endpoint.
pub const PROVIDER_URL_ENV: &str = "TRAJPRISM_PROVIDER_URL";

/// A text-embedding model. Implementations return unit-L2 vectors of a
/// fixed dimension.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Cosine similarity. Zero vectors score 0 against everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Offline deterministic embedder: seeded signed feature hashing of
/// character trigrams into a fixed dimension, L2-normalized. Stands in for
/// a real text embedding model behind the same trait.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    seed: u64,
    dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { seed: 0x7261_6a70, dim: 256 }
    }
}

impl HashEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0);
        HashEmbedder { seed, dim }
    }

    fn hash(&self, bytes: &[u8]) -> u64 {
        // FNV-1a seasoned with the embedder seed.
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ self.seed;
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let norm = crate::geo::normalize_name(text);
        let chars: Vec<char> = norm.chars().collect();
        let mut v = vec![0.0f64; self.dim];
        let bump = |bytes: &[u8], v: &mut Vec<f64>| {
            let h = self.hash(bytes);
            let idx = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        };
        if chars.len() < 3 {
            bump(norm.as_bytes(), &mut v);
        } else {
            for w in chars.windows(3) {
                let tri: String = w.iter().collect();
                bump(tri.as_bytes(), &mut v);
            }
        }
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            for x in &mut v {
                *x /= n;
            }
        } else {
            v[0] = 1.0;
        }
        v
    }
}

/// A text-completion provider: system + user prompt in, UTF-8 text out.
pub trait TextProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError>;
}

/// Remote provider speaking the wire contract over plain HTTP.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    url: String,
    host: String,
    port: u16,
    path: String,
    timeout: Duration,
}

#[derive(Serialize, Deserialize)]
struct WireRequest<'a> {
    system: &'a str,
    user: &'a str,
}

impl HttpProvider {
    pub fn new(url: &str) -> Result<Self, ProviderError> {
        let rest = url
            .strip_prefix("http://")
            .ok_or_else(|| ProviderError::BadUrl(url.to_string()))?;
        let (authority, path) = match rest.find('/') {
            Some(i) => (&rest[..i], rest[i..].to_string()),
            None => (rest, "/".to_string()),
        };
        let (host, port) = match authority.rsplit_once(':') {
            Some((h, p)) => (
                h.to_string(),
                p.parse::<u16>().map_err(|_| ProviderError::BadUrl(url.to_string()))?,
            ),
            None => (authority.to_string(), 80),
        };
        if host.is_empty() {
            return Err(ProviderError::BadUrl(url.to_string()));
        }
        Ok(HttpProvider {
            url: url.to_string(),
            host,
            port,
            path,
            timeout: Duration::from_secs(60),
        })
    }

    /// Build from `TRAJPRISM_PROVIDER_URL` when set.
    pub fn from_env() -> Result<Option<Self>, ProviderError> {
        match std::env::var(PROVIDER_URL_ENV) {
            Ok(url) if !url.trim().is_empty() => Ok(Some(HttpProvider::new(url.trim())?)),
            _ => Ok(None),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl TextProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.url
    }

    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError> {
        let body = serde_json::to_string(&WireRequest { system, user })
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let mut stream = TcpStream::connect((self.host.as_str(), self.port))
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        stream
            .set_read_timeout(Some(self.timeout))
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        stream
            .set_write_timeout(Some(self.timeout))
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let request = format!(
            "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            self.path,
            self.host,
            body.len(),
            body
        );
        stream
            .write_all(request.as_bytes())
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let mut raw = Vec::new();
        stream
            .read_to_end(&mut raw)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let text = String::from_utf8_lossy(&raw);
        let (head, rest) = text
            .split_once("\r\n\r\n")
            .ok_or_else(|| ProviderError::Transport("malformed http response".into()))?;
        let status: u16 = head
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ProviderError::Transport("missing status line".into()))?;
        if status != 200 {
            return Err(ProviderError::Status(status));
        }
        let body = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
            decode_chunked(rest)?
        } else {
            rest.to_string()
        };
        if body.trim().is_empty() {
            return Err(ProviderError::EmptyOutput);
        }
        Ok(body)
    }
}

fn decode_chunked(body: &str) -> Result<String, ProviderError> {
    let mut out = String::new();
    let mut rest = body;
    loop {
        let (size_line, tail) = rest
            .split_once("\r\n")
            .ok_or_else(|| ProviderError::Transport("truncated chunked body".into()))?;
        let size = usize::from_str_radix(size_line.trim(), 16)
            .map_err(|_| ProviderError::Transport("bad chunk size".into()))?;
        if size == 0 {
            return Ok(out);
        }
        if tail.len() < size {
            return Err(ProviderError::Transport("truncated chunk".into()));
        }
        out.push_str(&tail[..size]);
        rest = tail[size..].trim_start_matches("\r\n");
    }
}
