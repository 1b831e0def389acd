//! Small cross-cutting helpers: NaN-tolerant JSON floats, hashing, and a
//! shared JSON-lines appender.

use std::io::Write;
use std::sync::Mutex;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Serde adapter that writes NaN as `null` and reads `null` back as NaN.
/// JSON has no NaN literal, and several report fields (ICIR, SR) are
/// legitimately undefined on degenerate inputs.
pub mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Hex-encoded SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// First eight bytes of SHA-256 as a u64; used to derive deterministic
/// per-request RNG seeds in the mock providers.
pub fn sha256_u64(bytes: &[u8]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Append-only JSON-lines sink shared by the provider call log and the
/// orchestrator event log.
pub struct JsonlWriter {
    inner: Mutex<Box<dyn Write + Send>>,
}

impl JsonlWriter {
    pub fn new(w: Box<dyn Write + Send>) -> Self {
        Self {
            inner: Mutex::new(w),
        }
    }

    pub fn to_file(path: &std::path::Path, append: bool) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)?;
        Ok(Self::new(Box::new(std::io::BufWriter::new(file))))
    }

    /// Serialize one record and append it as a single line.
    pub fn append<T: Serialize>(&self, record: &T) {
        let mut guard = self.inner.lock().expect("jsonl writer poisoned");
        // Failures to log must not abort a mining run; surface them on stderr.
        match serde_json::to_string(record) {
            Ok(line) => {
                if let Err(e) = writeln!(guard, "{line}").and_then(|_| guard.flush()) {
                    log::warn!("run log write failed: {e}");
                }
            }
            Err(e) => log::warn!("run log serialization failed: {e}"),
        }
    }
}
