//! Key files and "-" means stdin input.
//!
//! Signing keys are 64 hex digits (the Ed25519 seed), public keys 64 hex
//! digits, watermark keys a JSON object `{key_id, key_bytes}`.

use std::io::Read;
use std::path::{Path, PathBuf};

use gatekeeper_core::auditlog::{SigningKey, VerifyingKey};
use gatekeeper_core::watermark::WatermarkKey;

#[derive(Debug, thiserror::Error)]
pub enum KeyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}: expected 64 hex digits")]
    BadHex(PathBuf),
    #[error("{0}: not a valid Ed25519 public key")]
    BadPublicKey(PathBuf),
    #[error("{path}: {message}")]
    BadWatermarkKey { path: PathBuf, message: String },
}

/// Reads a file, or standard input when `path` is "-".
pub fn read_input(path: &Path) -> std::io::Result<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf)?;
        Ok(buf)
    } else {
        std::fs::read(path)
    }
}

fn read_text(path: &Path) -> Result<String, KeyError> {
    let bytes = read_input(path).map_err(|source| KeyError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(String::from_utf8_lossy(&bytes).trim().to_owned())
}

fn hex32(path: &Path) -> Result<[u8; 32], KeyError> {
    let mut out = [0u8; 32];
    hex::decode_to_slice(read_text(path)?, &mut out).map_err(|_| KeyError::BadHex(path.to_owned()))?;
    Ok(out)
}

pub fn read_signing_key(path: &Path) -> Result<SigningKey, KeyError> {
    Ok(SigningKey::from_bytes(&hex32(path)?))
}

pub fn read_verifying_key(path: &Path) -> Result<VerifyingKey, KeyError> {
    VerifyingKey::from_bytes(&hex32(path)?).map_err(|_| KeyError::BadPublicKey(path.to_owned()))
}

pub fn read_watermark_key(path: &Path) -> Result<WatermarkKey, KeyError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| KeyError::BadWatermarkKey {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

pub fn signing_key_hex(key: &SigningKey) -> String {
    hex::encode(key.to_bytes())
}

pub fn verifying_key_hex(key: &VerifyingKey) -> String {
    hex::encode(key.to_bytes())
}

pub fn watermark_key_json(key: &WatermarkKey) -> String {
    serde_json::to_string(key).expect("watermark key serializes")
}
