//! Hash-chained, signed audit entries.
//!
//! `entry_hash = SHA-256(prev_hash ∥ canonical JSON of every other field
//! except entry_hash and signature)`, and each entry carries an Ed25519
//! signature over its `entry_hash`. Canonical JSON sorts object keys, has no
//! insignificant whitespace, writes integers unquoted and binary as lowercase
//! hex. The persisted line of an entry is the canonical JSON of the whole entry.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::borrow::Borrow;
use core::fmt::Write as _;

pub use ed25519_dalek::{Signature, SigningKey, VerifyingKey};
use ed25519_dalek::{Signer, Verifier};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use curve25519_dalek::constants::ED25519_BASEPOINT_POINT;
use curve25519_dalek::edwards::{CompressedEdwardsY, EdwardsPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::{IsIdentity, VartimeMultiscalarMul};
use sha2::{Digest, Sha256, Sha512};

use crate::time::Timestamp;

pub const GENESIS_HASH: [u8; 32] = [0; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AuditAction {
    DatasetRegistered,
    Classified,
    AccessGranted,
    AccessDenied,
    RecordsExported,
    EgressQueued,
    EgressDecided,
    AnomalyFlagged,
    HoneytokenTripped,
    AppealFiled,
    AppealDecided,
    RegistryUpdated,
    IntentLogged,
}

impl AuditAction {
    pub fn name(self) -> &'static str {
        match self {
            AuditAction::DatasetRegistered => "DatasetRegistered",
            AuditAction::Classified => "Classified",
            AuditAction::AccessGranted => "AccessGranted",
            AuditAction::AccessDenied => "AccessDenied",
            AuditAction::RecordsExported => "RecordsExported",
            AuditAction::EgressQueued => "EgressQueued",
            AuditAction::EgressDecided => "EgressDecided",
            AuditAction::AnomalyFlagged => "AnomalyFlagged",
            AuditAction::HoneytokenTripped => "HoneytokenTripped",
            AuditAction::AppealFiled => "AppealFiled",
            AuditAction::AppealDecided => "AppealDecided",
            AuditAction::RegistryUpdated => "RegistryUpdated",
            AuditAction::IntentLogged => "IntentLogged",
        }
    }
}

impl core::str::FromStr for AuditAction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(Value::String(s.into())).map_err(|_| alloc::format!("unknown audit action {s:?}"))
    }
}

/// The caller-supplied part of an entry.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEvent {
    pub timestamp: Timestamp,
    pub actor: String,
    pub action: AuditAction,
    pub resource: String,
    pub detail: Value,
}

impl AuditEvent {
    pub fn new(
        timestamp: Timestamp,
        actor: impl Into<String>,
        action: AuditAction,
        resource: impl Into<String>,
        detail: Value,
    ) -> Self {
        AuditEvent {
            timestamp,
            actor: actor.into(),
            action,
            resource: resource.into(),
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEntry {
    pub seq_no: u64,
    pub timestamp: Timestamp,
    pub actor: String,
    pub action: AuditAction,
    pub resource: String,
    pub detail: Value,
    #[serde(with = "hex32")]
    pub prev_hash: [u8; 32],
    #[serde(with = "hex32")]
    pub entry_hash: [u8; 32],
    #[serde(with = "hex64")]
    pub signature: [u8; 64],
}

macro_rules! hex_array {
    ($name:ident, $n:expr) => {
        mod $name {
            use serde::{Deserialize, Deserializer, Serializer};

            pub fn serialize<S: Serializer>(v: &[u8; $n], s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&hex::encode(v))
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; $n], D::Error> {
                let text = alloc::string::String::deserialize(d)?;
                let mut out = [0u8; $n];
                hex::decode_to_slice(&text, &mut out).map_err(serde::de::Error::custom)?;
                Ok(out)
            }
        }
    };
}
hex_array!(hex32, 32);
hex_array!(hex64, 64);

/// Writes `value` as canonical JSON: sorted keys, no whitespace.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            let _ = write!(out, "{n}");
        }
        Value::String(s) => write_str(s, out),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_str(key, out);
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
    }
}

/// JSON string literal, escaped the way serde_json does it.
fn write_str(s: &str, out: &mut String) {
    out.push('"');
    let mut start = 0;
    for (i, b) in s.bytes().enumerate() {
        let esc = match b {
            b'"' => "\\\"",
            b'\\' => "\\\\",
            b'\n' => "\\n",
            b'\r' => "\\r",
            b'\t' => "\\t",
            0x08 => "\\b",
            0x0c => "\\f",
            0..=0x1f => "",
            _ => continue,
        };
        out.push_str(&s[start..i]);
        if esc.is_empty() {
            let _ = write!(out, "\\u{b:04x}");
        } else {
            out.push_str(esc);
        }
        start = i + 1;
    }
    out.push_str(&s[start..]);
    out.push('"');
}

fn write_hex(bytes: &[u8], out: &mut String) {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    out.push('"');
    for b in bytes {
        out.push(DIGITS[usize::from(b >> 4)] as char);
        out.push(DIGITS[usize::from(b & 15)] as char);
    }
    out.push('"');
}

impl AuditEntry {
    /// Canonical JSON of the hashed fields, keys in sorted order; with
    /// `sealed`, `entry_hash` and `signature` are included too.
    fn write_canonical_fields(&self, sealed: bool, out: &mut String) {
        out.push_str("{\"action\":\"");
        out.push_str(self.action.name());
        out.push_str("\",\"actor\":");
        write_str(&self.actor, out);
        out.push_str(",\"detail\":");
        write_canonical(&self.detail, out);
        if sealed {
            out.push_str(",\"entry_hash\":");
            write_hex(&self.entry_hash, out);
        }
        out.push_str(",\"prev_hash\":");
        write_hex(&self.prev_hash, out);
        out.push_str(",\"resource\":");
        write_str(&self.resource, out);
        let _ = write!(out, ",\"seq_no\":{}", self.seq_no);
        if sealed {
            out.push_str(",\"signature\":");
            write_hex(&self.signature, out);
        }
        let _ = write!(out, ",\"timestamp\":{}}}", self.timestamp.millis());
    }

    /// The hash this entry should carry given its contents.
    pub fn compute_hash(&self) -> [u8; 32] {
        let mut body = String::with_capacity(512);
        self.write_canonical_fields(false, &mut body);
        Sha256::new()
            .chain_update(self.prev_hash)
            .chain_update(body.as_bytes())
            .finalize()
            .into()
    }

    /// Canonical persisted form (one JSON-lines row, without newline).
    pub fn to_line(&self) -> String {
        let mut out = String::with_capacity(512);
        self.write_canonical_fields(true, &mut out);
        out
    }

    /// Parses a persisted row, rejecting anything not in canonical form.
    pub fn from_line(line: &[u8]) -> Option<AuditEntry> {
        let entry: AuditEntry = serde_json::from_slice(line).ok()?;
        (entry.detail.is_object() && entry.to_line().as_bytes() == line).then_some(entry)
    }

    pub fn verify_signature(&self, key: &VerifyingKey) -> bool {
        key.verify(&self.entry_hash, &Signature::from_bytes(&self.signature)).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("audit detail must be a JSON object")]
    DetailNotObject,
    #[error("audit storage failure: {0}")]
    StorageFailure(String),
    #[error("query needs at least one filter")]
    EmptyQuery,
}

/// In-memory chain head plus committed entries.
#[derive(Debug, Clone, Default)]
pub struct AuditChain {
    entries: Vec<AuditEntry>,
}

impl AuditChain {
    pub fn new() -> Self {
        AuditChain::default()
    }

    /// Adopts already-verified entries.
    pub fn from_entries(entries: Vec<AuditEntry>) -> Self {
        AuditChain { entries }
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head_hash(&self) -> [u8; 32] {
        self.entries.last().map_or(GENESIS_HASH, |e| e.entry_hash)
    }

    /// Builds and signs the next entry without committing it.
    pub fn prepare(&self, event: AuditEvent, key: &SigningKey) -> Result<AuditEntry, AuditError> {
        if !event.detail.is_object() {
            return Err(AuditError::DetailNotObject);
        }
        let mut entry = AuditEntry {
            seq_no: self.entries.len() as u64 + 1,
            timestamp: event.timestamp,
            actor: event.actor,
            action: event.action,
            resource: event.resource,
            detail: event.detail,
            prev_hash: self.head_hash(),
            entry_hash: [0; 32],
            signature: [0; 64],
        };
        entry.entry_hash = entry.compute_hash();
        entry.signature = key.sign(&entry.entry_hash).to_bytes();
        Ok(entry)
    }

    /// Commits an entry produced by [`prepare`](Self::prepare) against the current head.
    pub fn commit(&mut self, entry: AuditEntry) {
        debug_assert_eq!(entry.seq_no, self.entries.len() as u64 + 1);
        debug_assert_eq!(entry.prev_hash, self.head_hash());
        self.entries.push(entry);
    }

    pub fn append(&mut self, event: AuditEvent, key: &SigningKey) -> Result<&AuditEntry, AuditError> {
        let entry = self.prepare(event, key)?;
        self.commit(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn query(&self, q: &ProvenanceQuery) -> Result<Vec<&AuditEntry>, AuditError> {
        q.validate()?;
        Ok(self.entries.iter().filter(|e| q.matches(e)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainVerification {
    pub ok: bool,
    /// 1-based position of the earliest entry that fails verification.
    pub first_bad_index: Option<u64>,
    pub entries: u64,
}

impl ChainVerification {
    fn result(entries: u64, first_bad: Option<u64>) -> Self {
        ChainVerification {
            ok: first_bad.is_none(),
            first_bad_index: first_bad,
            entries,
        }
    }
}

/// Checks signatures that share one key together: a random linear
/// combination of their verification equations, with the key's terms folded
/// into one scalar. The coefficients are derived from a hash of the batch.
fn batch_verify(entries: &[&AuditEntry], key: &VerifyingKey) -> bool {
    let mut transcript = Sha512::new()
        .chain_update(b"gatekeeper audit batch")
        .chain_update(key.as_bytes());
    let mut hrams = Vec::with_capacity(entries.len());
    for e in entries {
        let sig = Signature::from_bytes(&e.signature);
        let hram: [u8; 64] = Sha512::new()
            .chain_update(sig.r_bytes())
            .chain_update(key.as_bytes())
            .chain_update(e.entry_hash)
            .finalize()
            .into();
        transcript.update(hram);
        transcript.update(sig.s_bytes());
        hrams.push(hram);
    }
    let seed = transcript.finalize();

    let mut scalars = Vec::with_capacity(entries.len() + 2);
    let mut points = Vec::with_capacity(entries.len() + 2);
    let (mut b_coeff, mut a_coeff) = (Scalar::ZERO, Scalar::ZERO);
    for (i, (e, hram)) in entries.iter().zip(&hrams).enumerate() {
        let sig = Signature::from_bytes(&e.signature);
        let Some(s) = Option::<Scalar>::from(Scalar::from_canonical_bytes(*sig.s_bytes())) else {
            return false;
        };
        let Some(r) = CompressedEdwardsY(*sig.r_bytes()).decompress() else {
            return false;
        };
        let zb = Sha512::new()
            .chain_update(seed)
            .chain_update((i as u64).to_le_bytes())
            .finalize();
        let mut z16 = [0u8; 16];
        z16.copy_from_slice(&zb[..16]);
        let z = Scalar::from(u128::from_le_bytes(z16));
        b_coeff += z * s;
        a_coeff += z * Scalar::from_bytes_mod_order_wide(hram);
        scalars.push(z);
        points.push(r);
    }
    scalars.push(-b_coeff);
    points.push(ED25519_BASEPOINT_POINT);
    scalars.push(a_coeff);
    points.push(key.to_edwards());
    EdwardsPoint::vartime_multiscalar_mul(&scalars, &points).is_identity()
}

/// Earliest index in `entries` with an invalid signature.
fn first_bad_signature(entries: &[&AuditEntry], key: &VerifyingKey) -> Option<usize> {
    if entries.len() <= 8 {
        return entries.iter().position(|e| !e.verify_signature(key));
    }
    if batch_verify(entries, key) {
        return None;
    }
    let mid = entries.len() / 2;
    first_bad_signature(&entries[..mid], key).or_else(|| first_bad_signature(&entries[mid..], key).map(|i| i + mid))
}

/// Walks entries until the first bad sequence number, linkage or hash (or an
/// unparseable row), then checks signatures on the clean prefix.
fn verify_entries<E: Borrow<AuditEntry>>(
    entries: impl Iterator<Item = Option<E>>,
    total: u64,
    key: &VerifyingKey,
) -> ChainVerification {
    let mut prev = GENESIS_HASH;
    let mut clean: Vec<E> = Vec::new();
    let mut structural = None;
    for (i, entry) in entries.enumerate() {
        let n = i as u64 + 1;
        let linked = entry.as_ref().is_some_and(|e| {
            let e = e.borrow();
            e.seq_no == n && e.prev_hash == prev && e.compute_hash() == e.entry_hash
        });
        match entry {
            Some(e) if linked => {
                prev = e.borrow().entry_hash;
                clean.push(e);
            }
            _ => {
                structural = Some(n);
                break;
            }
        }
    }
    let prefix: Vec<&AuditEntry> = clean.iter().map(Borrow::borrow).collect();
    let bad = first_bad_signature(&prefix, key).map(|i| i as u64 + 1).or(structural);
    ChainVerification::result(total, bad)
}

/// Recomputes every hash and signature and reports the earliest violation.
pub fn verify_chain(entries: &[AuditEntry], key: &VerifyingKey) -> ChainVerification {
    verify_entries(entries.iter().map(Some), entries.len() as u64, key)
}

/// Verifies a persisted JSON-lines log. Rows must be in canonical form; a
/// final trailing newline is permitted.
pub fn verify_jsonl(log: &[u8], key: &VerifyingKey) -> ChainVerification {
    let body = log.strip_suffix(b"\n").unwrap_or(log);
    if body.is_empty() {
        return ChainVerification::result(0, None);
    }
    let lines: Vec<&[u8]> = body.split(|&b| b == b'\n').collect();
    verify_entries(lines.iter().map(|l| AuditEntry::from_line(l)), lines.len() as u64, key)
}

/// Parses a persisted log without verifying it.
pub fn parse_jsonl(log: &[u8]) -> Result<Vec<AuditEntry>, u64> {
    let body = log.strip_suffix(b"\n").unwrap_or(log);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, line)| AuditEntry::from_line(line).ok_or(i as u64 + 1))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceQuery {
    #[serde(default)]
    pub resource: Option<String>,
    #[serde(default)]
    pub actor: Option<String>,
    #[serde(default)]
    pub action: Option<AuditAction>,
    /// Inclusive lower bound.
    #[serde(default)]
    pub from: Option<Timestamp>,
    /// Exclusive upper bound.
    #[serde(default)]
    pub to: Option<Timestamp>,
}

impl ProvenanceQuery {
    pub fn resource(r: impl Into<String>) -> Self {
        ProvenanceQuery {
            resource: Some(r.into()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), AuditError> {
        if self.resource.is_none()
            && self.actor.is_none()
            && self.action.is_none()
            && self.from.is_none()
            && self.to.is_none()
        {
            return Err(AuditError::EmptyQuery);
        }
        Ok(())
    }

    pub fn matches(&self, e: &AuditEntry) -> bool {
        self.resource.as_ref().is_none_or(|r| *r == e.resource)
            && self.actor.as_ref().is_none_or(|a| *a == e.actor)
            && self.action.is_none_or(|a| a == e.action)
            && self.from.is_none_or(|f| e.timestamp >= f)
            && self.to.is_none_or(|t| e.timestamp < t)
    }
}

impl core::fmt::Display for AuditAction {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Convenience for building detail objects.
pub fn detail(pairs: impl IntoIterator<Item = (&'static str, Value)>) -> Value {
    Value::Object(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}
