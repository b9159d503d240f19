//! Output checking for artifacts leaving the trusted research environment.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::access::Principal;
use crate::seqio::{check_k, packed_kmers, parse_fasta, NucleotideSequence, SeqError};
use crate::taxonomy::{BdlTier, EnforcementProfile};
use crate::time::Timestamp;
use crate::watermark::honeytoken::{detect_honeytoken, sha256, HoneytokenHit, HoneytokenRegistry};
use crate::watermark::WatermarkKey;

/// k-mer index over the sequences of controlled datasets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlledCorpus {
    k: usize,
    datasets: BTreeMap<u32, String>,
    next_slot: u32,
    index: BTreeMap<u128, Vec<u32>>,
    hashes: BTreeMap<[u8; 32], Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Sequence(#[from] SeqError),
    #[error("dataset {0:?} is already in the corpus")]
    DuplicateDataset(String),
    #[error("corpus index is inconsistent: {0}")]
    Inconsistent(&'static str),
}

fn add_slot(v: &mut Vec<u32>, slot: u32) {
    if let Err(pos) = v.binary_search(&slot) {
        v.insert(pos, slot);
    }
}

impl ControlledCorpus {
    pub fn new(k: usize) -> Result<Self, CorpusError> {
        check_k(k)?;
        Ok(ControlledCorpus {
            k,
            datasets: BTreeMap::new(),
            next_slot: 0,
            index: BTreeMap::new(),
            hashes: BTreeMap::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dataset_ids(&self) -> impl Iterator<Item = &str> {
        self.datasets.values().map(String::as_str)
    }

    pub fn contains_dataset(&self, id: &str) -> bool {
        self.slot(id).is_some()
    }

    pub fn kmer_count(&self) -> usize {
        self.index.len()
    }

    pub fn contains_kmer(&self, packed: u128) -> bool {
        self.index.contains_key(&packed)
    }

    fn slot(&self, id: &str) -> Option<u32> {
        self.datasets.iter().find(|(_, d)| d.as_str() == id).map(|(s, _)| *s)
    }

    pub fn add_dataset<'a>(
        &mut self,
        id: &str,
        sequences: impl IntoIterator<Item = &'a NucleotideSequence>,
    ) -> Result<(), CorpusError> {
        if self.contains_dataset(id) {
            return Err(CorpusError::DuplicateDataset(id.into()));
        }
        let slot = self.next_slot;
        self.next_slot += 1;
        self.datasets.insert(slot, id.into());
        for seq in sequences {
            add_slot(self.hashes.entry(sha256(seq.bases())).or_default(), slot);
            for km in packed_kmers(seq.bases(), self.k) {
                add_slot(self.index.entry(km).or_default(), slot);
            }
        }
        Ok(())
    }

    /// Returns whether the dataset was present.
    pub fn remove_dataset(&mut self, id: &str) -> bool {
        let Some(slot) = self.slot(id) else { return false };
        self.datasets.remove(&slot);
        self.index.drop_slot(slot);
        self.hashes.drop_slot(slot);
        true
    }

    /// Flat view for persistence: dataset slots, k-mer postings, hash postings.
    pub fn parts(&self) -> CorpusParts<'_> {
        CorpusParts {
            k: self.k,
            datasets: &self.datasets,
            index: &self.index,
            hashes: &self.hashes,
        }
    }

    pub fn from_parts(
        k: usize,
        datasets: BTreeMap<u32, String>,
        index: BTreeMap<u128, Vec<u32>>,
        hashes: BTreeMap<[u8; 32], Vec<u32>>,
    ) -> Result<Self, CorpusError> {
        check_k(k)?;
        let mask = if k == 64 { u128::MAX } else { (1u128 << (2 * k)) - 1 };
        let known = |v: &Vec<u32>| !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|s| datasets.contains_key(s));
        if index.iter().any(|(km, v)| km & !mask != 0 || !known(v)) {
            return Err(CorpusError::Inconsistent("k-mer posting"));
        }
        if !hashes.values().all(known) {
            return Err(CorpusError::Inconsistent("hash posting"));
        }
        let next_slot = datasets.keys().next_back().map_or(0, |s| s + 1);
        Ok(ControlledCorpus {
            k,
            datasets,
            next_slot,
            index,
            hashes,
        })
    }
}

trait SlotMap {
    fn drop_slot(&mut self, slot: u32);
}

impl<K: Ord> SlotMap for BTreeMap<K, Vec<u32>> {
    fn drop_slot(&mut self, slot: u32) {
        self.retain(|_, v| {
            v.retain(|s| *s != slot);
            !v.is_empty()
        });
    }
}

pub struct CorpusParts<'a> {
    pub k: usize,
    pub datasets: &'a BTreeMap<u32, String>,
    pub index: &'a BTreeMap<u128, Vec<u32>>,
    pub hashes: &'a BTreeMap<[u8; 32], Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub max_containment: f64,
    pub matched_datasets: BTreeSet<String>,
    pub candidates: usize,
}

/// Candidate sequences in outbound content: the records of a FASTA document,
/// otherwise every maximal run of A/C/G/T (either case) of length at least `k`.
pub fn extract_candidates(content: &[u8], k: usize) -> Vec<NucleotideSequence> {
    let trimmed = content.trim_ascii_start();
    if trimmed.first() == Some(&b'>') {
        if let Ok(records) = parse_fasta(trimmed) {
            return records;
        }
    }
    let mut out = Vec::new();
    let is_base = |b: &u8| matches!(b, b'A' | b'C' | b'G' | b'T' | b'a' | b'c' | b'g' | b't');
    let mut i = 0;
    while i < content.len() {
        if !is_base(&content[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < content.len() && is_base(&content[i]) {
            i += 1;
        }
        if i - start >= k {
            let id = alloc::format!("run{}", out.len() + 1);
            let bases = content[start..i].to_ascii_uppercase();
            if let Ok(seq) = NucleotideSequence::new(id, "", bases) {
                out.push(seq);
            }
        }
    }
    out
}

/// Containment of the content's candidates in the corpus.
pub fn screen(content: &[u8], corpus: &ControlledCorpus) -> ScreenResult {
    screen_excluding(content, corpus, &BTreeSet::new())
}

/// As [`screen`], ignoring matches that come only from the excluded datasets.
pub fn screen_excluding(content: &[u8], corpus: &ControlledCorpus, exclude: &BTreeSet<String>) -> ScreenResult {
    let candidates = extract_candidates(content, corpus.k);
    screen_candidates(&candidates, corpus, exclude)
}

pub fn screen_candidates(
    candidates: &[NucleotideSequence],
    corpus: &ControlledCorpus,
    exclude: &BTreeSet<String>,
) -> ScreenResult {
    let excluded: BTreeSet<u32> = corpus
        .datasets
        .iter()
        .filter(|(_, id)| exclude.contains(*id))
        .map(|(s, _)| *s)
        .collect();
    let live = |slots: &Vec<u32>| -> Vec<u32> { slots.iter().copied().filter(|s| !excluded.contains(s)).collect() };

    let mut best = 0.0f64;
    let mut matched: BTreeSet<u32> = BTreeSet::new();
    for cand in candidates {
        if let Some(slots) = corpus.hashes.get(&sha256(cand.bases())) {
            let slots = live(slots);
            if !slots.is_empty() {
                best = 1.0;
                matched.extend(slots);
                continue;
            }
        }
        let distinct: BTreeSet<u128> = packed_kmers(cand.bases(), corpus.k).collect();
        if distinct.is_empty() {
            continue;
        }
        let mut hits = 0usize;
        for km in &distinct {
            if let Some(slots) = corpus.index.get(km) {
                let slots = live(slots);
                if !slots.is_empty() {
                    hits += 1;
                    matched.extend(slots);
                }
            }
        }
        best = best.max(hits as f64 / distinct.len() as f64);
    }
    ScreenResult {
        max_containment: best,
        matched_datasets: matched.iter().filter_map(|s| corpus.datasets.get(s).cloned()).collect(),
        candidates: candidates.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArtifactKind {
    AggregateStats,
    TextSummary,
    SequenceContent,
    ModelWeights,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgressRequest {
    pub id: String,
    pub principal: String,
    pub project: String,
    pub artifact_kind: ArtifactKind,
    pub content: Vec<u8>,
    #[serde(default)]
    pub declared_provenance: String,
    pub at: Timestamp,
}

impl EgressRequest {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.content.is_empty() {
            return Err("content must be nonempty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EgressOutcome {
    Allowed,
    Blocked,
    Queued,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EgressReason {
    Aggregate,
    Clean,
    ControlledMatch,
    HoneytokenHit,
    WeightsExportBarred,
    MandatoryReview,
    ReviewerDecision,
    /// Corpus index or honeytoken registry could not be consulted.
    ScreeningUnavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgressVerdict {
    pub outcome: EgressOutcome,
    pub reason: EgressReason,
    pub similarity: f64,
    #[serde(default)]
    pub matched_datasets: BTreeSet<String>,
    #[serde(default)]
    pub honeytoken: Option<HoneytokenHit>,
    #[serde(default)]
    pub review_item: Option<String>,
}

impl EgressVerdict {
    fn new(outcome: EgressOutcome, reason: EgressReason) -> Self {
        EgressVerdict {
            outcome,
            reason,
            similarity: 0.0,
            matched_datasets: BTreeSet::new(),
            honeytoken: None,
            review_item: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgressThresholds {
    pub review: f64,
    pub block: f64,
    pub honeytoken_overlap: f64,
}

impl Default for EgressThresholds {
    fn default() -> Self {
        EgressThresholds {
            review: 0.3,
            block: 0.8,
            honeytoken_overlap: crate::watermark::honeytoken::DEFAULT_OVERLAP_THRESHOLD,
        }
    }
}

impl EgressThresholds {
    pub fn validate(&self) -> Result<(), &'static str> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(unit(self.review) && unit(self.block) && unit(self.honeytoken_overlap)) || self.review > self.block {
            return Err("egress thresholds must satisfy 0 <= review <= block <= 1");
        }
        if self.honeytoken_overlap == 0.0 {
            return Err("honeytoken overlap threshold must be positive");
        }
        Ok(())
    }
}

/// Screening inputs; `None` means the source is unavailable and the check fails closed.
pub struct Screening<'a> {
    pub corpus: Option<&'a ControlledCorpus>,
    pub honeytokens: Option<(&'a HoneytokenRegistry, &'a WatermarkKey)>,
    pub thresholds: EgressThresholds,
}

pub fn check_egress(
    request: &EgressRequest,
    tier: BdlTier,
    profile: &EnforcementProfile,
    screening: &Screening<'_>,
) -> EgressVerdict {
    use EgressOutcome::*;
    use EgressReason::*;

    let k = screening.corpus.map_or(crate::seqio::DEFAULT_SCREENING_K, ControlledCorpus::k);
    // Shorter runs than k are still worth a honeytoken look.
    let decoy_candidates = extract_candidates(&request.content, crate::seqio::MIN_K);
    if let Some((registry, key)) = screening.honeytokens {
        for cand in &decoy_candidates {
            if let Some(hit) = detect_honeytoken(cand, registry, key, screening.thresholds.honeytoken_overlap) {
                let mut v = EgressVerdict::new(Blocked, HoneytokenHit);
                v.similarity = 1.0;
                v.honeytoken = Some(hit);
                return v;
            }
        }
    }
    if request.artifact_kind == ArtifactKind::ModelWeights && tier >= BdlTier::BDL3 {
        return EgressVerdict::new(Blocked, WeightsExportBarred);
    }
    if profile.mandatory_human_egress_review {
        let mut v = EgressVerdict::new(Queued, MandatoryReview);
        if let Some(corpus) = screening.corpus {
            let s = screen(&request.content, corpus);
            v.similarity = s.max_containment;
            v.matched_datasets = s.matched_datasets;
        }
        return v;
    }
    let (Some(corpus), Some(_)) = (screening.corpus, screening.honeytokens) else {
        return EgressVerdict::new(Queued, ScreeningUnavailable);
    };
    let candidates = extract_candidates(&request.content, k);
    if request.artifact_kind == ArtifactKind::AggregateStats && candidates.is_empty() {
        return EgressVerdict::new(Allowed, Aggregate);
    }
    let s = screen_candidates(&candidates, corpus, &BTreeSet::new());
    let mut v = if s.max_containment >= screening.thresholds.block {
        EgressVerdict::new(Blocked, ControlledMatch)
    } else if s.max_containment >= screening.thresholds.review {
        EgressVerdict::new(Queued, ControlledMatch)
    } else {
        EgressVerdict::new(Allowed, Clean)
    };
    v.similarity = s.max_containment;
    v.matched_datasets = s.matched_datasets;
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReviewKind {
    Egress,
    AccessEscalation,
    AnomalyTriage,
    ClassificationOverdue,
    Appeal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewStatus {
    Pending,
    Approved,
    Denied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewDecision {
    Approved,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub kind: ReviewKind,
    /// Id of the egress request, access request, appeal, etc. under review.
    pub payload_ref: String,
    pub status: ReviewStatus,
    pub created_at: Timestamp,
    #[serde(default)]
    pub tier: Option<BdlTier>,
    #[serde(default)]
    pub due_at: Option<Timestamp>,
    /// Screening similarity, matched datasets, z-values and the like.
    #[serde(default)]
    pub context: serde_json::Value,
    #[serde(default)]
    pub decided_by: Option<String>,
    #[serde(default)]
    pub decided_at: Option<Timestamp>,
    #[serde(default)]
    pub decision_note: String,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReviewError {
    #[error("review item already decided")]
    AlreadyDecided,
    #[error("review item is at version {current}, not {expected}")]
    VersionConflict { expected: u64, current: u64 },
    #[error("{0} is not a steward")]
    NotAuthorized(String),
}

impl ReviewItem {
    pub fn new(id: impl Into<String>, kind: ReviewKind, payload_ref: impl Into<String>, created_at: Timestamp) -> Self {
        ReviewItem {
            id: id.into(),
            kind,
            payload_ref: payload_ref.into(),
            status: ReviewStatus::Pending,
            created_at,
            tier: None,
            due_at: None,
            context: serde_json::Value::Object(Default::default()),
            decided_by: None,
            decided_at: None,
            decision_note: String::new(),
            version: 1,
        }
    }

    pub fn is_pending(&self) -> bool {
        self.status == ReviewStatus::Pending
    }

    pub fn decide(
        &mut self,
        reviewer: &Principal,
        decision: ReviewDecision,
        note: &str,
        expected_version: u64,
        at: Timestamp,
    ) -> Result<(), ReviewError> {
        if !reviewer.steward {
            return Err(ReviewError::NotAuthorized(reviewer.id.clone()));
        }
        if !self.is_pending() {
            return Err(ReviewError::AlreadyDecided);
        }
        if expected_version != self.version {
            return Err(ReviewError::VersionConflict {
                expected: expected_version,
                current: self.version,
            });
        }
        self.status = match decision {
            ReviewDecision::Approved => ReviewStatus::Approved,
            ReviewDecision::Denied => ReviewStatus::Denied,
        };
        self.decided_by = Some(reviewer.id.clone());
        self.decided_at = Some(at);
        self.decision_note = note.into();
        self.version += 1;
        Ok(())
    }
}
