//! On-disk formats: the audit log, the corpus index and its sidecar, and
//! the honeytoken registry.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use gatekeeper_core::auditlog::{parse_jsonl, AuditChain, AuditEntry, AuditError};
use gatekeeper_core::egress::ControlledCorpus;
use gatekeeper_core::time::Timestamp;
use gatekeeper_core::watermark::honeytoken::HoneytokenRow;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: line {line} is malformed")]
    BadLine { path: PathBuf, line: u64 },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FileError + '_ {
    move |source| FileError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Append-only JSON-lines audit log. Each append is synced before it returns.
pub struct AuditStore {
    path: PathBuf,
    file: File,
    len: u64,
}

impl AuditStore {
    /// Opens (creating if absent) and parses the log.
    pub fn open(path: &Path) -> Result<(AuditStore, AuditChain), FileError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io(path))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io(path))?;
        let entries = parse_jsonl(&bytes).map_err(|line| FileError::BadLine {
            path: path.to_owned(),
            line,
        })?;
        let store = AuditStore {
            path: path.to_owned(),
            file,
            len: bytes.len() as u64,
        };
        Ok((store, AuditChain::from_entries(entries)))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one entry. On failure the file is cut back to its previous length.
    pub fn append(&mut self, entry: &AuditEntry) -> Result<(), AuditError> {
        let mut line = entry.to_line();
        line.push('\n');
        let res = self.file.write_all(line.as_bytes()).and_then(|_| self.file.sync_data());
        if let Err(e) = res {
            let _ = self.file.set_len(self.len);
            return Err(AuditError::StorageFailure(e.to_string()));
        }
        self.len += line.len() as u64;
        Ok(())
    }
}

/// JSON sidecar describing a corpus index file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSidecar {
    pub k: usize,
    pub dataset_ids: Vec<String>,
    pub built_at: Timestamp,
}

const CORPUS_MAGIC: &[u8; 8] = b"GKCORP01";

pub fn sidecar_path(index: &Path) -> PathBuf {
    index.with_extension("json")
}

/// Little-endian layout: magic, k, dataset slots, k-mer postings, hash postings.
pub fn write_corpus(corpus: &ControlledCorpus, path: &Path, built_at: Timestamp) -> Result<(), FileError> {
    let p = corpus.parts();
    let mut out = Vec::with_capacity(64 + p.index.len() * 24);
    out.extend_from_slice(CORPUS_MAGIC);
    out.extend_from_slice(&(p.k as u32).to_le_bytes());
    out.extend_from_slice(&(p.datasets.len() as u32).to_le_bytes());
    for (slot, id) in p.datasets {
        out.extend_from_slice(&slot.to_le_bytes());
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    let postings = |out: &mut Vec<u8>, v: &Vec<u32>| {
        out.extend_from_slice(&(v.len() as u32).to_le_bytes());
        for s in v {
            out.extend_from_slice(&s.to_le_bytes());
        }
    };
    out.extend_from_slice(&(p.index.len() as u64).to_le_bytes());
    for (km, v) in p.index {
        out.extend_from_slice(&km.to_le_bytes());
        postings(&mut out, v);
    }
    out.extend_from_slice(&(p.hashes.len() as u64).to_le_bytes());
    for (h, v) in p.hashes {
        out.extend_from_slice(h);
        postings(&mut out, v);
    }
    write_atomic(path, &out)?;
    let sidecar = CorpusSidecar {
        k: p.k,
        dataset_ids: p.datasets.values().cloned().collect(),
        built_at,
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    write_atomic(&sidecar_path(path), text.as_bytes())
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Some(head)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn postings(&mut self) -> Option<Vec<u32>> {
        let n = self.u32()? as usize;
        if n > self.buf.len() / 4 {
            return None;
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

type CorpusParts = (usize, BTreeMap<u32, String>, BTreeMap<u128, Vec<u32>>, BTreeMap<[u8; 32], Vec<u32>>);

fn decode_corpus(bytes: &[u8]) -> Option<CorpusParts> {
    let mut c = Cursor { buf: bytes };
    if c.take(8)? != CORPUS_MAGIC {
        return None;
    }
    let k = c.u32()? as usize;
    let mut datasets = BTreeMap::new();
    for _ in 0..c.u32()? {
        let slot = c.u32()?;
        let len = c.u32()? as usize;
        let id = String::from_utf8(c.take(len)?.to_vec()).ok()?;
        datasets.insert(slot, id);
    }
    let mut index = BTreeMap::new();
    for _ in 0..c.u64()? {
        let km = u128::from_le_bytes(c.take(16)?.try_into().ok()?);
        index.insert(km, c.postings()?);
    }
    let mut hashes = BTreeMap::new();
    for _ in 0..c.u64()? {
        let h: [u8; 32] = c.take(32)?.try_into().ok()?;
        hashes.insert(h, c.postings()?);
    }
    c.buf.is_empty().then_some((k, datasets, index, hashes))
}

/// Reads an index and checks it against its sidecar.
pub fn read_corpus(path: &Path) -> Result<(ControlledCorpus, CorpusSidecar), FileError> {
    let corrupt = |message: String| FileError::Corrupt {
        path: path.to_owned(),
        message,
    };
    let bytes = std::fs::read(path).map_err(io(path))?;
    let side_path = sidecar_path(path);
    let side_text = std::fs::read_to_string(&side_path).map_err(io(&side_path))?;
    let sidecar: CorpusSidecar = serde_json::from_str(&side_text).map_err(|e| corrupt(format!("sidecar: {e}")))?;
    let (k, datasets, index, hashes) = decode_corpus(&bytes).ok_or_else(|| corrupt("truncated or malformed index".into()))?;
    let corpus = ControlledCorpus::from_parts(k, datasets, index, hashes).map_err(|e| corrupt(e.to_string()))?;
    let ids: Vec<String> = corpus.dataset_ids().map(String::from).collect();
    if sidecar.k != k || sidecar.dataset_ids != ids {
        return Err(corrupt("sidecar does not describe this index".into()));
    }
    Ok((corpus, sidecar))
}

pub fn write_honeytoken_rows<'a>(path: &Path, rows: impl IntoIterator<Item = &'a HoneytokenRow>) -> Result<(), FileError> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("row serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_honeytoken_rows(path: &Path) -> Result<Vec<HoneytokenRow>, FileError> {
    let file = File::open(path).map_err(io(path))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|_| FileError::BadLine {
            path: path.to_owned(),
            line: i as u64 + 1,
        })?);
    }
    Ok(rows)
}

/// Writes to a temporary sibling, syncs, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FileError> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".into(),
    });
    let mut f = File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io(path))
}
