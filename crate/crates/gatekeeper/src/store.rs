//! Event-sourced gateway state: a JSON-lines event log plus periodic snapshots.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use gatekeeper_core::access::{AccessAction, DecisionReason};
use gatekeeper_core::auditlog::AuditEntry;
use gatekeeper_core::egress::{ArtifactKind, EgressVerdict, ReviewItem, ReviewStatus};
use gatekeeper_core::governance::{Appeal, ClassificationRequest};
use gatekeeper_core::seqio::NucleotideSequence;
use gatekeeper_core::taxonomy::{BdlTier, ClassificationResult, DatasetDescriptor};
use gatekeeper_core::time::Timestamp;
use gatekeeper_core::watermark::honeytoken::HoneytokenRow;
use serde::{Deserialize, Serialize};

use crate::files::{write_atomic, FileError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecordSet {
    pub id: String,
    pub descriptor: DatasetDescriptor,
    pub tier: BdlTier,
    pub classification: ClassificationResult,
    pub sequences: Vec<NucleotideSequence>,
    pub provenance: String,
    pub registered_by: String,
    pub registered_at: Timestamp,
    /// Decoy record ids planted in `sequences`.
    #[serde(default)]
    pub honeytokens: Vec<String>,
    /// Steward decision the tier was taken from, if any.
    #[serde(default)]
    pub classification_request: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EgressStatus {
    Allowed,
    Blocked,
    PendingReview,
    Released,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub approved_by: String,
    pub approved_at: Timestamp,
    pub declared_provenance: String,
    pub scope: BTreeSet<String>,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgressRecord {
    pub id: String,
    pub principal: String,
    pub project: String,
    pub artifact_kind: ArtifactKind,
    pub content: String,
    pub declared_provenance: String,
    pub at: Timestamp,
    pub tier: BdlTier,
    pub scope: BTreeSet<String>,
    pub verdict: EgressVerdict,
    pub status: EgressStatus,
    #[serde(default)]
    pub provenance: Option<ProvenanceRecord>,
}

/// Who received a watermarked export, keyed by its fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub fingerprint: String,
    pub principal: String,
    pub dataset: String,
    pub at: Timestamp,
    pub record_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub principal: String,
    pub dataset: String,
    pub project: Option<String>,
    pub intent: Option<String>,
    pub submitted_at: Timestamp,
    pub status: String,
}

/// An escalated access request awaiting, or carrying, a steward decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Escalation {
    pub review_item: String,
    pub principal: String,
    pub dataset: String,
    pub action: AccessAction,
    pub reason: DecisionReason,
    #[serde(default)]
    pub used: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub datasets: BTreeMap<String, DatasetRecordSet>,
    pub reviews: BTreeMap<String, ReviewItem>,
    pub classification_requests: BTreeMap<String, ClassificationRequest>,
    /// Dataset a classification request reclassifies, if any.
    pub classification_datasets: BTreeMap<String, String>,
    pub appeals: BTreeMap<String, Appeal>,
    pub egress: BTreeMap<String, EgressRecord>,
    pub exports: BTreeMap<String, ExportRecord>,
    pub honeytokens: BTreeMap<String, HoneytokenRow>,
    pub jobs: BTreeMap<String, JobRecord>,
    pub escalations: BTreeMap<String, Escalation>,
    /// Datasets touched per "principal/project" session.
    pub sessions: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum Event {
    Dataset { record: DatasetRecordSet },
    DatasetTier { id: String, tier: BdlTier },
    Review { item: ReviewItem },
    Classification {
        request: ClassificationRequest,
        #[serde(default)]
        dataset: Option<String>,
    },
    Appeal { appeal: Appeal },
    Egress { record: EgressRecord },
    Export { record: ExportRecord },
    Honeytoken { row: HoneytokenRow },
    Job { record: JobRecord },
    Escalation { escalation: Escalation },
    Session { key: String, dataset: String },
}

impl State {
    pub fn apply(&mut self, event: Event) {
        match event {
            Event::Dataset { record } => {
                self.datasets.insert(record.id.clone(), record);
            }
            Event::DatasetTier { id, tier } => {
                if let Some(d) = self.datasets.get_mut(&id) {
                    d.tier = tier;
                }
            }
            Event::Review { item } => {
                self.reviews.insert(item.id.clone(), item);
            }
            Event::Classification { request, dataset } => {
                if let Some(ds) = dataset {
                    self.classification_datasets.insert(request.id.clone(), ds);
                }
                self.classification_requests.insert(request.id.clone(), request);
            }
            Event::Appeal { appeal } => {
                self.appeals.insert(appeal.id.clone(), appeal);
            }
            Event::Egress { record } => {
                self.egress.insert(record.id.clone(), record);
            }
            Event::Export { record } => {
                self.exports.insert(record.fingerprint.clone(), record);
            }
            Event::Honeytoken { row } => {
                self.honeytokens.insert(row.token_id.clone(), row);
            }
            Event::Job { record } => {
                self.jobs.insert(record.id.clone(), record);
            }
            Event::Escalation { escalation } => {
                self.escalations.insert(escalation.review_item.clone(), escalation);
            }
            Event::Session { key, dataset } => {
                self.sessions.entry(key).or_default().insert(dataset);
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    events_applied: u64,
    state: State,
}

/// Durable home of [`State`]: `events.jsonl` and `snapshot.json` in one directory.
pub struct EventStore {
    dir: PathBuf,
    log: File,
    events: u64,
    since_snapshot: u64,
    snapshot_every: u64,
}

impl EventStore {
    pub fn open(dir: &Path, snapshot_every: u64) -> Result<(EventStore, State), FileError> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| FileError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let snap_path = dir.join("snapshot.json");
        let (skip, mut state) = match std::fs::read(&snap_path) {
            Ok(bytes) => {
                let s: Snapshot = serde_json::from_slice(&bytes).map_err(|e| FileError::Corrupt {
                    path: snap_path.clone(),
                    message: e.to_string(),
                })?;
                (s.events_applied, s.state)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (0, State::default()),
            Err(e) => return Err(io(&snap_path)(e)),
        };
        let log_path = dir.join("events.jsonl");
        let mut log = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&log_path)
            .map_err(io(&log_path))?;
        let mut bytes = Vec::new();
        log.read_to_end(&mut bytes).map_err(io(&log_path))?;
        // A final line without its newline is a torn write; drop it.
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        if complete < bytes.len() {
            log.set_len(complete as u64).map_err(io(&log_path))?;
        }
        let mut events = 0u64;
        for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            events += 1;
            if events <= skip {
                continue;
            }
            let ev: Event = serde_json::from_slice(line).map_err(|_| FileError::BadLine {
                path: log_path.clone(),
                line: i as u64 + 1,
            })?;
            state.apply(ev);
        }
        if events < skip {
            return Err(FileError::Corrupt {
                path: snap_path,
                message: format!("snapshot covers {skip} events but the log holds {events}"),
            });
        }
        let store = EventStore {
            dir: dir.to_owned(),
            log,
            events,
            since_snapshot: events - skip,
            snapshot_every,
        };
        Ok((store, state))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&mut self, event: &Event) -> Result<(), FileError> {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        self.log
            .write_all(&line)
            .and_then(|_| self.log.sync_data())
            .map_err(|source| FileError::Io {
                path: self.dir.join("events.jsonl"),
                source,
            })?;
        self.events += 1;
        self.since_snapshot += 1;
        Ok(())
    }

    /// Writes a snapshot once enough events have accumulated.
    pub fn maybe_snapshot(&mut self, state: &State) -> Result<(), FileError> {
        if self.since_snapshot < self.snapshot_every {
            return Ok(());
        }
        self.snapshot(state)
    }

    pub fn snapshot(&mut self, state: &State) -> Result<(), FileError> {
        #[derive(Serialize)]
        struct SnapshotRef<'a> {
            events_applied: u64,
            state: &'a State,
        }
        let bytes = serde_json::to_vec(&SnapshotRef {
            events_applied: self.events,
            state,
        })
        .expect("state serializes");
        write_atomic(&self.dir.join("snapshot.json"), &bytes)?;
        self.since_snapshot = 0;
        Ok(())
    }
}

/// Dataset tiers and review outcomes as recorded in an audit log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReplay {
    pub tiers: BTreeMap<String, BdlTier>,
    pub reviews: BTreeMap<String, ReviewStatus>,
}

/// Rebuilds tiers and review outcomes from the `dataset`/`tier` and
/// `review_item`/`review_status` detail fields of audit entries.
pub fn replay_audit(entries: &[AuditEntry]) -> AuditReplay {
    let mut out = AuditReplay::default();
    for e in entries {
        let d = &e.detail;
        if let (Some(ds), Some(tier)) = (d["dataset"].as_str(), d["tier"].as_u64()) {
            if let Some(t) = u8::try_from(tier).ok().and_then(BdlTier::new) {
                out.tiers.insert(ds.to_owned(), t);
            }
        }
        if let (Some(item), Some(status)) = (d["review_item"].as_str(), d.get("review_status")) {
            if let Ok(s) = serde_json::from_value::<ReviewStatus>(status.clone()) {
                out.reviews.insert(item.to_owned(), s);
            }
        }
    }
    out
}
