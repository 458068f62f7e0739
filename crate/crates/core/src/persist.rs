//! Checksummed JSON envelopes for model files.
//!
//! The checksum is SHA-256 over the compact canonical JSON of the payload
//! (object keys sorted), so it survives pretty-printing and key reordering.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    kind: String,
    format_version: u32,
    checksum: String,
    payload: serde_json::Value,
}

fn checksum(payload: &serde_json::Value) -> Result<String> {
    let canonical = serde_json::to_string(payload)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

pub fn to_string<T: Serialize>(kind: &str, payload: &T) -> Result<String> {
    let payload = serde_json::to_value(payload)?;
    let env = Envelope {
        kind: kind.to_string(),
        format_version: FORMAT_VERSION,
        checksum: checksum(&payload)?,
        payload,
    };
    Ok(serde_json::to_string_pretty(&env)?)
}

pub fn from_str<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let env: Envelope = serde_json::from_str(text)?;
    if env.kind != kind {
        return Err(Error::invalid(format!(
            "model file holds a `{}`, expected `{kind}`",
            env.kind
        )));
    }
    if env.format_version != FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported model format version {}",
            env.format_version
        )));
    }
    let found = checksum(&env.payload)?;
    if found != env.checksum {
        return Err(Error::ChecksumMismatch {
            expected: env.checksum,
            found,
        });
    }
    Ok(serde_json::from_value(env.payload)?)
}

pub fn save<T: Serialize>(kind: &str, payload: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(kind, payload)?)?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(kind: &str, path: &Path) -> Result<T> {
    from_str(kind, &std::fs::read_to_string(path)?)
}
