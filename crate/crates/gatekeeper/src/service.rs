//! The gateway: registration, access, egress, review and governance over
//! one event-sourced store and one audit chain.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use gatekeeper_core::access::{
    decide, obligations_for, observe_and_flag, AccessAction, AccessDecision, AccessObservation, AccessRequest,
    AnomalyBaseline, DecisionReason, Obligation, Outcome, Principal, RateLimiter, RiskInputs,
};
use gatekeeper_core::auditlog::{
    verify_jsonl, AuditAction, AuditChain, AuditEntry, AuditEvent, ChainVerification, ProvenanceQuery, SigningKey,
    VerifyingKey,
};
use gatekeeper_core::egress::{
    check_egress, screen_excluding, ArtifactKind, ControlledCorpus, EgressOutcome, EgressReason, EgressRequest,
    EgressVerdict, ReviewDecision, ReviewItem, ReviewKind, ReviewStatus, Screening,
};
use gatekeeper_core::governance::{Appeal, AppealOutcome, ClassificationDecision, ClassificationRequest, GovernanceError, RequestStatus};
use gatekeeper_core::seqio::{parse_fasta, write_fasta, CodingSequence, NucleotideSequence};
use gatekeeper_core::taxonomy::{
    classify, enforcement_profile, load_family_registry, BdlTier, ClassificationResult, DatasetDescriptor,
    FamilyRegistry, MonitoringControl,
};
use gatekeeper_core::time::{Millis, Timestamp};
use gatekeeper_core::watermark::honeytoken::{
    generate_honeytoken, sha256, CodonUsage, DecoyRequest, HoneytokenRecord, HoneytokenRegistry,
};
use gatekeeper_core::watermark::{embed, Namespace, WatermarkKey, WatermarkPayload};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ConfigError, GatewayConfig};
use crate::error::GatewayError;
use crate::files::{read_corpus, write_corpus, write_honeytoken_rows, AuditStore};
use crate::keys;
use crate::store::{
    DatasetRecordSet, EgressRecord, EgressStatus, Escalation, Event, EventStore, ExportRecord, JobRecord,
    ProvenanceRecord, State,
};

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let d = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default();
        Timestamp(d.as_millis() as i64)
    }
}

/// A clock tests move by hand.
#[derive(Clone, Default)]
pub struct ManualClock(Arc<AtomicI64>);

impl ManualClock {
    pub fn new(at: Timestamp) -> Self {
        ManualClock(Arc::new(AtomicI64::new(at.0)))
    }

    pub fn set(&self, at: Timestamp) {
        self.0.store(at.0, Ordering::SeqCst);
    }

    pub fn advance(&self, by: Millis) {
        self.0.fetch_add(by.get() as i64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.0.load(Ordering::SeqCst))
    }
}

/// Checks a second-factor assertion presented with a request.
pub trait SecondFactorVerifier: Send + Sync {
    fn verify(&self, principal: &Principal, assertion: &str) -> bool;
}

/// Accepts a fixed code per enrolled principal.
pub struct StaticCodes(BTreeMap<String, String>);

impl SecondFactorVerifier for StaticCodes {
    fn verify(&self, principal: &Principal, assertion: &str) -> bool {
        principal.second_factor_enrolled && self.0.get(&principal.id).is_some_and(|c| c == assertion)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterDataset {
    #[serde(default)]
    pub id: Option<String>,
    pub descriptor: DatasetDescriptor,
    pub fasta: String,
    #[serde(default)]
    pub provenance: String,
    /// A decided classification request whose tier this dataset takes.
    #[serde(default)]
    pub classification_request: Option<String>,
}

/// A dataset without its sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetView {
    pub id: String,
    pub descriptor: DatasetDescriptor,
    pub tier: BdlTier,
    pub classification: ClassificationResult,
    pub provenance: String,
    pub registered_by: String,
    pub registered_at: Timestamp,
    pub record_count: usize,
}

impl From<&DatasetRecordSet> for DatasetView {
    fn from(d: &DatasetRecordSet) -> Self {
        DatasetView {
            id: d.id.clone(),
            descriptor: d.descriptor.clone(),
            tier: d.tier,
            classification: d.classification.clone(),
            provenance: d.provenance.clone(),
            registered_by: d.registered_by.clone(),
            registered_at: d.registered_at,
            record_count: d.sequences.len(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordsRequest {
    pub action: AccessAction,
    #[serde(default)]
    pub project_id: Option<String>,
    #[serde(default)]
    pub intent_statement: Option<String>,
    #[serde(default)]
    pub origin_country: String,
    /// Zero means every record.
    #[serde(default)]
    pub requested_records: u64,
    #[serde(default)]
    pub provenance_deficit: f64,
    /// An approved access escalation to redeem.
    #[serde(default)]
    pub review_item: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnedRecord {
    pub id: String,
    pub description: String,
    pub sequence: String,
    pub watermarked: bool,
}

/// Handle for records that stay inside the trusted research environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreSession {
    pub dataset: String,
    pub record_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordsResponse {
    pub decision: AccessDecision,
    #[serde(default)]
    pub records: Vec<ReturnedRecord>,
    /// Coding sequences too short to carry the export mark.
    #[serde(default)]
    pub withheld: Vec<String>,
    #[serde(default)]
    pub tre_session: Option<TreSession>,
    #[serde(default)]
    pub job: Option<JobRecord>,
    #[serde(default)]
    pub review_item: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitClassification {
    /// Defaults to the linked dataset's descriptor.
    #[serde(default)]
    pub descriptor: Option<DatasetDescriptor>,
    #[serde(default)]
    pub dataset_id: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileAppeal {
    pub classification_request: String,
    pub grounds: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AppealStep {
    StartReview,
    Upheld,
    Overturned,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppealDecisionBody {
    pub decision: AppealStep,
    #[serde(default)]
    pub new_tier: Option<BdlTier>,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgressSubmission {
    pub project: String,
    pub artifact_kind: ArtifactKind,
    pub content: String,
    #[serde(default)]
    pub declared_provenance: String,
    /// Datasets the artifact derives from, in addition to the session's.
    #[serde(default)]
    pub datasets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgressResponse {
    pub id: String,
    pub tier: BdlTier,
    pub verdict: EgressVerdict,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewDecisionBody {
    pub decision: ReviewDecision,
    #[serde(default)]
    pub note: String,
    pub expected_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub version: String,
    pub chain_head_hash: String,
    pub entries: usize,
}

struct Caller {
    principal: Principal,
    second_factor: Option<String>,
}

pub struct Gateway {
    config: GatewayConfig,
    clock: Arc<dyn Clock>,
    verifier: Box<dyn SecondFactorVerifier>,
    signing: SigningKey,
    wm_key: WatermarkKey,
    registry: FamilyRegistry,
    tokens: BTreeMap<String, Principal>,
    state: State,
    store: EventStore,
    chain: AuditChain,
    audit: AuditStore,
    corpus: Option<ControlledCorpus>,
    honeytokens: Option<HoneytokenRegistry>,
    limiter: RateLimiter,
    baselines: BTreeMap<String, AnomalyBaseline>,
    similarity_cache: BTreeMap<(String, String), f64>,
    rng: StdRng,
}

fn storage(e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Storage(e.to_string())
}

fn config_err(e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Config(ConfigError::Invalid(e.to_string()))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b))
}

impl Gateway {
    /// Opens the store and audit log under `config.store_dir`.
    pub fn open(config: GatewayConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        config.validate()?;
        let signing = keys::read_signing_key(&config.signing_key_path).map_err(config_err)?;
        let wm_key = keys::read_watermark_key(&config.watermark_key_path).map_err(config_err)?;
        let registry_text = std::fs::read_to_string(&config.registry_path).map_err(config_err)?;
        let registry = load_family_registry(&registry_text).map_err(config_err)?;

        let (store, state) = EventStore::open(&config.store_dir, config.snapshot_every).map_err(storage)?;
        let (audit, chain) = AuditStore::open(&config.store_dir.join("audit.jsonl")).map_err(storage)?;
        let check = gatekeeper_core::auditlog::verify_chain(chain.entries(), &signing.verifying_key());
        if let Some(bad) = check.first_bad_index {
            return Err(GatewayError::AuditChainBroken(bad));
        }

        let mut tokens = BTreeMap::new();
        let mut codes = BTreeMap::new();
        for entry in &config.principals {
            tokens.insert(entry.token.clone(), entry.principal.clone());
            if let Some(code) = &entry.second_factor {
                codes.insert(entry.principal.id.clone(), code.clone());
            }
        }
        let rng = match config.rng_seed {
            Some(seed) => StdRng::seed_from_u64(seed),
            None => StdRng::from_entropy(),
        };
        let mut gw = Gateway {
            config,
            clock,
            verifier: Box::new(StaticCodes(codes)),
            signing,
            wm_key,
            registry,
            tokens,
            state,
            store,
            chain,
            audit,
            corpus: None,
            honeytokens: None,
            limiter: RateLimiter::new(),
            baselines: BTreeMap::new(),
            similarity_cache: BTreeMap::new(),
            rng,
        };
        gw.corpus = gw.load_corpus();
        gw.honeytokens = gw.load_honeytokens();
        Ok(gw)
    }

    pub fn set_second_factor_verifier(&mut self, verifier: Box<dyn SecondFactorVerifier>) {
        self.verifier = verifier;
    }

    fn corpus_path(&self) -> PathBuf {
        self.config.store_dir.join("corpus.bin")
    }

    fn controlled_ids(&self) -> BTreeSet<String> {
        self.state
            .datasets
            .values()
            .filter(|d| d.tier >= BdlTier::BDL2)
            .map(|d| d.id.clone())
            .collect()
    }

    /// Loads the persisted index when it matches the store, else rebuilds it.
    fn load_corpus(&mut self) -> Option<ControlledCorpus> {
        let want = self.controlled_ids();
        if let Ok((c, _)) = read_corpus(&self.corpus_path()) {
            if c.k() == self.config.screening.k && c.dataset_ids().map(String::from).collect::<BTreeSet<_>>() == want {
                return Some(c);
            }
        }
        let mut c = ControlledCorpus::new(self.config.screening.k).ok()?;
        for id in &want {
            if let Err(e) = c.add_dataset(id, &self.state.datasets[id].sequences) {
                tracing::error!("corpus rebuild failed on {id}: {e}");
                return None;
            }
        }
        if let Err(e) = write_corpus(&c, &self.corpus_path(), self.clock.now()) {
            tracing::warn!("corpus index not persisted: {e}");
        }
        Some(c)
    }

    /// Rebuilds decoy records from their rows and the planted sequences.
    fn load_honeytokens(&self) -> Option<HoneytokenRegistry> {
        let mut reg = HoneytokenRegistry::new();
        for row in self.state.honeytokens.values() {
            let decoy = self
                .state
                .datasets
                .get(&row.planted_in)
                .and_then(|d| d.sequences.iter().find(|s| s.id() == row.token_id));
            let Some(decoy) = decoy else {
                tracing::error!("decoy {} missing from {}", row.token_id, row.planted_in);
                return None;
            };
            match HoneytokenRecord::from_row(row, decoy).map(|r| reg.insert(r)) {
                Ok(Ok(())) => {}
                _ => {
                    tracing::error!("honeytoken row {} does not verify", row.token_id);
                    return None;
                }
            }
        }
        Some(reg)
    }

    fn persist_indexes(&mut self) {
        if let Some(c) = &self.corpus {
            if let Err(e) = write_corpus(c, &self.corpus_path(), self.clock.now()) {
                tracing::warn!("corpus index not persisted: {e}");
            }
        }
        let path = self.config.store_dir.join("honeytokens.jsonl");
        if let Err(e) = write_honeytoken_rows(&path, self.state.honeytokens.values()) {
            tracing::warn!("honeytoken registry not persisted: {e}");
        }
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn chain(&self) -> &AuditChain {
        &self.chain
    }

    pub fn corpus(&self) -> Option<&ControlledCorpus> {
        self.corpus.as_ref()
    }

    pub fn honeytoken_registry(&self) -> Option<&HoneytokenRegistry> {
        self.honeytokens.as_ref()
    }

    pub fn watermark_key(&self) -> &WatermarkKey {
        &self.wm_key
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    /// Decoy sequences planted in a dataset.
    pub fn decoys(&self, dataset: &str) -> Vec<NucleotideSequence> {
        let Some(d) = self.state.datasets.get(dataset) else { return Vec::new() };
        d.sequences.iter().filter(|s| d.honeytokens.iter().any(|t| t == s.id())).cloned().collect()
    }

    /// Who received the export carrying this fingerprint.
    pub fn trace_fingerprint(&self, hex: &str) -> Option<&ExportRecord> {
        self.state.exports.get(hex)
    }

    /// Fails closed: screening and decoy detection treat the sources as missing.
    pub fn disable_screening(&mut self) {
        self.corpus = None;
        self.honeytokens = None;
    }

    /// Forces a snapshot of the current state.
    pub fn flush(&mut self) -> Result<()> {
        self.store.snapshot(&self.state).map_err(storage)
    }

    fn commit(&mut self, event: Event) -> Result<()> {
        self.store.append(&event).map_err(storage)?;
        self.state.apply(event);
        if let Err(e) = self.store.maybe_snapshot(&self.state) {
            tracing::warn!("snapshot skipped: {e}");
        }
        Ok(())
    }

    fn audit(&mut self, actor: &str, action: AuditAction, resource: &str, detail: Value) -> Result<()> {
        let event = AuditEvent::new(self.clock.now(), actor, action, resource, detail);
        let entry = self.chain.prepare(event, &self.signing).map_err(storage)?;
        self.audit.append(&entry).map_err(storage)?;
        self.chain.commit(entry);
        Ok(())
    }

    fn authenticate(&self, token: Option<&str>, second_factor: Option<&str>) -> Result<Caller> {
        let principal = token.and_then(|t| self.tokens.get(t)).ok_or(GatewayError::Unauthenticated)?;
        Ok(Caller {
            principal: principal.clone(),
            second_factor: second_factor.map(String::from),
        })
    }

    /// Resolves a bearer token to its principal.
    pub fn principal(&self, token: Option<&str>) -> Result<Principal> {
        self.authenticate(token, None).map(|c| c.principal)
    }

    fn steward(&self, token: Option<&str>) -> Result<Principal> {
        let p = self.principal(token)?;
        if !p.steward {
            return Err(GatewayError::NotAuthorized(p.id));
        }
        Ok(p)
    }

    fn new_review(&mut self, kind: ReviewKind, payload_ref: &str, tier: Option<BdlTier>, context: Value) -> Result<ReviewItem> {
        let id = format!("rv-{:06}", self.state.reviews.len() + 1);
        let mut item = ReviewItem::new(id, kind, payload_ref, self.clock.now());
        item.tier = tier;
        item.context = context;
        self.commit(Event::Review { item: item.clone() })?;
        Ok(item)
    }

    /// Moves classification requests past their deadline to Overdue and
    /// queues a review item for each.
    pub fn tick(&mut self) -> Result<()> {
        let now = self.clock.now();
        let due: Vec<String> = self
            .state
            .classification_requests
            .values()
            .filter(|r| r.status == RequestStatus::Pending && r.status_at(now) == RequestStatus::Overdue)
            .map(|r| r.id.clone())
            .collect();
        for id in due {
            let mut req = self.state.classification_requests[&id].clone();
            req.refresh(now);
            let dataset = self.state.classification_datasets.get(&id).cloned();
            self.commit(Event::Classification {
                request: req.clone(),
                dataset: None,
            })?;
            let mut item = self.new_review(
                ReviewKind::ClassificationOverdue,
                &id,
                Some(req.proposed_tier),
                json!({"request": id, "submitted_by": req.submitted_by, "linked_dataset": dataset}),
            )?;
            item.due_at = Some(req.due_at);
            self.commit(Event::Review { item: item.clone() })?;
            self.audit(
                "gateway",
                AuditAction::Classified,
                &id,
                json!({"request": id, "stage": "Overdue", "due_at": req.due_at,
                       "review_item": item.id, "review_status": item.status}),
            )?;
        }
        Ok(())
    }

    pub fn health(&self) -> Health {
        Health {
            version: env!("CARGO_PKG_VERSION").into(),
            chain_head_hash: hex::encode(self.chain.head_hash()),
            entries: self.chain.len(),
        }
    }

    pub fn dataset(&mut self, token: Option<&str>, id: &str) -> Result<DatasetView> {
        self.principal(token)?;
        self.state
            .datasets
            .get(id)
            .map(DatasetView::from)
            .ok_or_else(|| GatewayError::UnknownDataset(id.into()))
    }

    pub fn register_dataset(&mut self, token: Option<&str>, req: RegisterDataset) -> Result<DatasetView> {
        let caller = self.principal(token)?;
        self.tick()?;
        let id = match req.id {
            Some(id) if !valid_id(&id) => return Err(GatewayError::Invalid(format!("invalid dataset id {id:?}"))),
            Some(id) => id,
            None => format!("ds-{:06}", self.state.datasets.len() + 1),
        };
        if self.state.datasets.contains_key(&id) {
            return Err(GatewayError::DuplicateDataset(id));
        }
        let mut sequences = parse_fasta(req.fasta.as_bytes()).map_err(GatewayError::MalformedFasta)?;
        if sequences.is_empty() {
            return Err(GatewayError::Invalid("FASTA payload holds no records".into()));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = sequences.iter().find(|s| !seen.insert(s.id().to_owned())) {
            return Err(GatewayError::Invalid(format!("record id {:?} repeats", dup.id())));
        }

        let mut descriptor = req.descriptor;
        let mut warnings = if descriptor.family_name.is_empty() {
            Vec::new()
        } else {
            self.registry.resolve(&mut descriptor)
        };
        descriptor.record_count = sequences.len() as u64;
        descriptor.total_bases = sequences.iter().map(|s| s.len() as u64).sum();
        descriptor.validate().map_err(|e| GatewayError::Invalid(e.to_string()))?;
        let mut classification = classify(&descriptor);
        warnings.append(&mut classification.warnings);
        classification.warnings = warnings;

        let mut tier = classification.tier;
        if let Some(cr) = &req.classification_request {
            let r = self
                .state
                .classification_requests
                .get(cr)
                .ok_or_else(|| GovernanceError::UnknownRequest(cr.clone()))?;
            tier = r.decided_tier.ok_or_else(|| GatewayError::Invalid(format!("classification request {cr} is not decided")))?;
        }
        if tier >= BdlTier::BDL2 && req.provenance.trim().is_empty() {
            return Err(GatewayError::MissingProvenance);
        }

        let mut record = DatasetRecordSet {
            id: id.clone(),
            descriptor,
            tier,
            classification: classification.clone(),
            sequences: Vec::new(),
            provenance: req.provenance,
            registered_by: caller.id.clone(),
            registered_at: self.clock.now(),
            honeytokens: Vec::new(),
            classification_request: req.classification_request.clone(),
        };
        let planted = if enforcement_profile(tier).monitors(MonitoringControl::Honeytokens) {
            self.plant_decoys(&id, &mut sequences)?
        } else {
            Vec::new()
        };
        record.honeytokens = planted.iter().map(|r| r.token_id.clone()).collect();
        record.sequences = sequences;

        self.commit(Event::Dataset { record: record.clone() })?;
        for rec in planted {
            self.commit(Event::Honeytoken { row: rec.to_row() })?;
            if let Some(reg) = &mut self.honeytokens {
                reg.insert(rec).map_err(storage)?;
            }
        }
        if tier >= BdlTier::BDL2 {
            if let Some(c) = &mut self.corpus {
                c.add_dataset(&id, &record.sequences).map_err(storage)?;
            }
        }
        self.persist_indexes();
        self.audit(
            &caller.id,
            AuditAction::DatasetRegistered,
            &id,
            json!({"dataset": id, "tier": tier.level(), "records": record.sequences.len() - record.honeytokens.len(),
                   "provenance": record.provenance, "honeytokens": record.honeytokens.len()}),
        )?;
        self.audit(
            &caller.id,
            AuditAction::Classified,
            &id,
            json!({"dataset": id, "tier": tier.level(), "stage": "Registered",
                   "matched_rule": classification.matched_rule, "classified_tier": classification.tier.level(),
                   "warnings": classification.warnings, "classification_request": req.classification_request}),
        )?;
        Ok(DatasetView::from(&record))
    }

    /// Generates decoys for a dataset and splices them in at random positions.
    fn plant_decoys(&mut self, dataset: &str, sequences: &mut Vec<NucleotideSequence>) -> Result<Vec<HoneytokenRecord>> {
        let n = (sequences.len() as u64).div_ceil(self.config.honeytoken_density).max(1);
        let cds: Vec<CodingSequence> = sequences.iter().filter_map(|s| CodingSequence::new(s.clone()).ok()).collect();
        let counts = CodonUsage::observe(&cds);
        let usage = Some(CodonUsage::from_counts(&counts))
            .filter(|u| counts.iter().sum::<u64>() > 0 && u.validate().is_ok())
            .unwrap_or_else(CodonUsage::uniform);
        let mut taken: BTreeSet<[u8; 32]> = sequences.iter().map(|s| sha256(s.bases())).collect();
        if let Some(c) = &self.corpus {
            taken.extend(c.parts().hashes.keys().copied());
        }
        let mut out = Vec::new();
        for _ in 0..n {
            let token_id = loop {
                let t = format!("rec-{:08x}", self.rng.gen::<u32>());
                if !self.state.honeytokens.contains_key(&t) && !sequences.iter().any(|s| s.id() == t) {
                    break t;
                }
            };
            let request = DecoyRequest {
                token_id: &token_id,
                length_codons: self.config.decoy_codons,
                planted_in: dataset,
                created_at: self.clock.now(),
                k: self.config.screening.k,
            };
            let (decoy, record) =
                generate_honeytoken(&usage, &request, &self.wm_key, &taken, &mut self.rng).map_err(storage)?;
            taken.insert(record.sequence_hash);
            let at = self.rng.gen_range(0..=sequences.len());
            sequences.insert(at, decoy.into_sequence());
            out.push(record);
        }
        Ok(out)
    }

    fn set_dataset_tier(&mut self, id: &str, tier: BdlTier) -> Result<()> {
        let Some(d) = self.state.datasets.get(id) else { return Ok(()) };
        if d.tier == tier {
            return Ok(());
        }
        let needs_decoys = enforcement_profile(tier).monitors(MonitoringControl::Honeytokens) && d.honeytokens.is_empty();
        if needs_decoys {
            let mut record = d.clone();
            let planted = self.plant_decoys(id, &mut record.sequences)?;
            record.honeytokens = planted.iter().map(|r| r.token_id.clone()).collect();
            self.commit(Event::Dataset { record })?;
            for rec in planted {
                self.commit(Event::Honeytoken { row: rec.to_row() })?;
                if let Some(reg) = &mut self.honeytokens {
                    reg.insert(rec).map_err(storage)?;
                }
            }
        }
        self.commit(Event::DatasetTier { id: id.into(), tier })?;
        if let Some(c) = &mut self.corpus {
            c.remove_dataset(id);
            if tier >= BdlTier::BDL2 {
                c.add_dataset(id, &self.state.datasets[id].sequences).map_err(storage)?;
            }
        }
        self.similarity_cache.retain(|(_, ds), _| ds != id);
        self.persist_indexes();
        Ok(())
    }

    pub fn request_records(
        &mut self,
        token: Option<&str>,
        second_factor: Option<&str>,
        dataset_id: &str,
        body: RecordsRequest,
    ) -> Result<RecordsResponse> {
        let caller = self.authenticate(token, second_factor)?;
        self.tick()?;
        let principal = caller.principal;
        let dataset = self
            .state
            .datasets
            .get(dataset_id)
            .ok_or_else(|| GatewayError::UnknownDataset(dataset_id.into()))?;
        let tier = dataset.tier;
        let profile = enforcement_profile(tier);
        if !(0.0..=1.0).contains(&body.provenance_deficit) {
            return Err(GatewayError::Invalid("provenance_deficit must lie in [0, 1]".into()));
        }
        let selected: Vec<NucleotideSequence> = match body.action {
            AccessAction::ReadMetadata => Vec::new(),
            _ => {
                let n = if body.requested_records == 0 {
                    dataset.sequences.len()
                } else {
                    (body.requested_records as usize).min(dataset.sequences.len())
                };
                dataset.sequences[..n].to_vec()
            }
        };
        let second_factor_presented = caller
            .second_factor
            .as_deref()
            .is_some_and(|a| self.verifier.verify(&principal, a));
        let now = self.clock.now();
        let request = AccessRequest {
            principal_id: principal.id.clone(),
            dataset_id: dataset_id.into(),
            action: body.action,
            project_id: body.project_id.clone(),
            intent_statement: body.intent_statement.clone(),
            second_factor_presented,
            origin_country: body.origin_country.clone(),
            requested_records: selected.len() as u64,
            requested_bytes: selected.iter().map(|s| s.len() as u64).sum(),
            at: now,
        };
        request.validate().map_err(GatewayError::Invalid)?;

        let similarity = if profile.monitors(MonitoringControl::RiskScoring) && body.action != AccessAction::ReadMetadata {
            self.similarity(&principal.id, dataset_id, &selected, profile.realtime_risk_scoring)
        } else {
            0.0
        };
        let risk = RiskInputs {
            similarity,
            provenance_deficit: body.provenance_deficit,
        };
        let mut decision = decide(&request, &principal, tier, &profile, &mut self.limiter, &self.config.policy, risk);

        if decision.outcome == Outcome::Escalate {
            if let Some(rid) = &body.review_item {
                if self.redeem_escalation(rid, &principal.id, dataset_id, body.action)? {
                    decision.outcome = Outcome::Allow;
                    decision.reason = DecisionReason::Ok;
                    decision.obligations = obligations_for(&profile, body.action);
                }
            }
        }

        let mut response = RecordsResponse {
            decision: decision.clone(),
            records: Vec::new(),
            withheld: Vec::new(),
            tre_session: None,
            job: None,
            review_item: None,
        };
        let base = json!({"dataset": dataset_id, "action": body.action, "dataset_tier": tier.level(),
                          "outcome": decision.outcome, "reason": decision.reason,
                          "project": body.project_id, "origin_country": body.origin_country});
        let sampled_out = tier == BdlTier::BDL0
            && matches!(body.action, AccessAction::ReadMetadata | AccessAction::ReadRecords)
            && self.rng.gen::<f64>() >= self.config.bdl0_read_sample_rate;

        match decision.outcome {
            Outcome::Deny => {
                let mut detail = base;
                detail["retry_after_ms"] = json!(decision.retry_after.map(|m| m.get()));
                self.audit(&principal.id, AuditAction::AccessDenied, dataset_id, detail)?;
                return Err(GatewayError::Denied(Box::new(decision)));
            }
            Outcome::Escalate => {
                let item = self.new_review(
                    ReviewKind::AccessEscalation,
                    dataset_id,
                    Some(tier),
                    json!({"principal": principal.id, "dataset": dataset_id, "action": body.action,
                           "risk": decision.risk, "project": body.project_id, "intent": body.intent_statement}),
                )?;
                self.commit(Event::Escalation {
                    escalation: Escalation {
                        review_item: item.id.clone(),
                        principal: principal.id.clone(),
                        dataset: dataset_id.into(),
                        action: body.action,
                        reason: decision.reason,
                        used: false,
                    },
                })?;
                let mut detail = base;
                detail["review_item"] = json!(item.id);
                detail["review_status"] = json!(item.status);
                self.audit(&principal.id, AuditAction::AccessDenied, dataset_id, detail)?;
                response.review_item = Some(item.id);
                return Ok(response);
            }
            Outcome::Allow => {}
        }

        if let Some(project) = &body.project_id {
            let key = format!("{}/{}", principal.id, project);
            if !self.state.sessions.get(&key).is_some_and(|s| s.contains(dataset_id)) {
                self.commit(Event::Session {
                    key,
                    dataset: dataset_id.into(),
                })?;
            }
        }

        let obligations = &decision.obligations;
        match body.action {
            AccessAction::ReadMetadata => {}
            AccessAction::ReadRecords if profile.tre_only => {
                response.tre_session = Some(TreSession {
                    dataset: dataset_id.into(),
                    record_ids: selected.iter().map(|s| s.id().to_owned()).collect(),
                });
            }
            AccessAction::ReadRecords => {
                response.records = selected.iter().map(plain).collect();
            }
            AccessAction::ExportRecords => {
                if obligations.contains(&Obligation::WatermarkExport) {
                    self.watermarked_export(&principal.id, dataset_id, &selected, now, &mut response)?;
                } else {
                    response.records = selected.iter().map(plain).collect();
                    self.audit(
                        &principal.id,
                        AuditAction::RecordsExported,
                        dataset_id,
                        json!({"dataset": dataset_id, "records": response.records.len(), "watermarked": false}),
                    )?;
                }
            }
            AccessAction::SubmitJob => {
                let job = JobRecord {
                    id: format!("job-{:06}", self.state.jobs.len() + 1),
                    principal: principal.id.clone(),
                    dataset: dataset_id.into(),
                    project: body.project_id.clone(),
                    intent: body.intent_statement.clone(),
                    submitted_at: now,
                    status: "Completed".into(),
                };
                self.commit(Event::Job { record: job.clone() })?;
                response.job = Some(job);
            }
        }

        if !sampled_out {
            let mut detail = base;
            detail["records"] = json!(selected.len());
            detail["obligations"] = json!(obligations);
            detail["risk"] = json!(decision.risk);
            if let Some(job) = &response.job {
                detail["job"] = json!(job.id);
            }
            if obligations.contains(&Obligation::RecordProvenance) {
                detail["provenance"] = json!(self.state.datasets[dataset_id].provenance);
            }
            self.audit(&principal.id, AuditAction::AccessGranted, dataset_id, detail)?;
        }
        if obligations.contains(&Obligation::LogIntent) {
            self.audit(
                &principal.id,
                AuditAction::IntentLogged,
                dataset_id,
                json!({"dataset": dataset_id, "action": body.action, "project": body.project_id,
                       "intent": body.intent_statement}),
            )?;
        }
        if profile.monitors(MonitoringControl::AnomalyDetection) {
            let bytes = selected.iter().map(|s| s.len() as u64).sum();
            self.observe(&principal, now, bytes, &body.origin_country, profile.cross_tenant_anomaly)?;
        }
        Ok(response)
    }

    fn similarity(&mut self, principal: &str, dataset: &str, selected: &[NucleotideSequence], realtime: bool) -> f64 {
        let key = (principal.to_owned(), dataset.to_owned());
        if !realtime {
            if let Some(&s) = self.similarity_cache.get(&key) {
                return s;
            }
        }
        let s = match &self.corpus {
            Some(c) => {
                let exclude = BTreeSet::from([dataset.to_owned()]);
                screen_excluding(write_fasta(selected).as_bytes(), c, &exclude).max_containment
            }
            None => 1.0,
        };
        self.similarity_cache.insert(key, s);
        s
    }

    fn redeem_escalation(&mut self, item: &str, principal: &str, dataset: &str, action: AccessAction) -> Result<bool> {
        let Some(esc) = self.state.escalations.get(item) else { return Ok(false) };
        let approved = self.state.reviews.get(item).is_some_and(|r| r.status == ReviewStatus::Approved);
        if !approved || esc.used || esc.principal != principal || esc.dataset != dataset || esc.action != action {
            return Ok(false);
        }
        let mut esc = esc.clone();
        esc.used = true;
        self.commit(Event::Escalation { escalation: esc })?;
        Ok(true)
    }

    fn watermarked_export(
        &mut self,
        principal: &str,
        dataset: &str,
        selected: &[NucleotideSequence],
        at: Timestamp,
        response: &mut RecordsResponse,
    ) -> Result<()> {
        let fp = export_fingerprint(principal, dataset, at);
        let fingerprint = hex::encode(fp);
        let payload = WatermarkPayload::from_bytes(Namespace::Export, &fp).map_err(storage)?;
        for s in selected {
            match CodingSequence::new(s.clone()) {
                Ok(cds) => match embed(&cds, &payload, &self.wm_key) {
                    Ok(marked) => response.records.push(ReturnedRecord {
                        id: s.id().into(),
                        description: s.description().into(),
                        sequence: marked.sequence().as_str().into(),
                        watermarked: true,
                    }),
                    Err(_) => response.withheld.push(s.id().into()),
                },
                Err(_) => response.records.push(plain(s)),
            }
        }
        let record = ExportRecord {
            fingerprint: fingerprint.clone(),
            principal: principal.into(),
            dataset: dataset.into(),
            at,
            record_ids: response.records.iter().map(|r| r.id.clone()).collect(),
        };
        self.commit(Event::Export { record })?;
        self.audit(
            principal,
            AuditAction::RecordsExported,
            dataset,
            json!({"dataset": dataset, "fingerprint": fingerprint, "records": response.records.len(),
                   "withheld": response.withheld, "watermarked": true}),
        )
    }

    fn observe(&mut self, principal: &Principal, at: Timestamp, bytes: u64, country: &str, cross_tenant: bool) -> Result<()> {
        let mut subjects = vec![format!("principal:{}", principal.id)];
        if cross_tenant && !principal.home_institution.is_empty() {
            subjects.push(format!("institution:{}", principal.home_institution));
        }
        let event = AccessObservation {
            principal: principal.id.clone(),
            at,
            bytes,
            origin_country: country.into(),
        };
        let mut flags = Vec::new();
        for subject in subjects {
            let baseline = self
                .baselines
                .entry(subject.clone())
                .or_insert_with(|| AnomalyBaseline::new(subject));
            flags.extend(observe_and_flag(baseline, &event, &principal.usual_countries, &self.config.anomaly));
        }
        for flag in flags {
            let item = self.new_review(
                ReviewKind::AnomalyTriage,
                &flag.subject,
                None,
                json!({"subject": flag.subject, "principal": flag.principal, "kind": flag.kind,
                       "z_value": flag.z_value.map(finite_or_str), "country": country}),
            )?;
            self.audit(
                "gateway",
                AuditAction::AnomalyFlagged,
                &flag.subject,
                json!({"subject": flag.subject, "principal": flag.principal, "kind": flag.kind,
                       "z_value": flag.z_value.map(finite_or_str),
                       "review_item": item.id, "review_status": item.status}),
            )?;
        }
        Ok(())
    }

    pub fn submit_classification(&mut self, token: Option<&str>, body: SubmitClassification) -> Result<ClassificationRequest> {
        let caller = self.principal(token)?;
        self.tick()?;
        let linked = match &body.dataset_id {
            Some(ds) => Some(
                self.state
                    .datasets
                    .get(ds)
                    .ok_or_else(|| GatewayError::UnknownDataset(ds.clone()))?
                    .descriptor
                    .clone(),
            ),
            None => None,
        };
        let mut descriptor = body
            .descriptor
            .or(linked)
            .ok_or_else(|| GatewayError::Invalid("descriptor or dataset_id required".into()))?;
        if !descriptor.family_name.is_empty() {
            self.registry.resolve(&mut descriptor);
        }
        descriptor.validate().map_err(|e| GatewayError::Invalid(e.to_string()))?;
        let id = format!("cr-{:06}", self.state.classification_requests.len() + 1);
        let req = ClassificationRequest::submit(&id, descriptor, &caller.id, self.clock.now(), self.config.decision_window);
        self.commit(Event::Classification {
            request: req.clone(),
            dataset: body.dataset_id.clone(),
        })?;
        self.audit(
            &caller.id,
            AuditAction::Classified,
            &id,
            json!({"request": id, "stage": "Submitted", "proposed_tier": req.proposed_tier.level(),
                   "proposed_rule": req.proposed_rule, "due_at": req.due_at, "linked_dataset": body.dataset_id}),
        )?;
        Ok(req)
    }

    pub fn decide_classification(&mut self, token: Option<&str>, id: &str, decision: ClassificationDecision) -> Result<ClassificationRequest> {
        let steward = self.principal(token)?;
        self.tick()?;
        let now = self.clock.now();
        let mut req = self
            .state
            .classification_requests
            .get(id)
            .cloned()
            .ok_or_else(|| GovernanceError::UnknownRequest(id.into()))?;
        let tier = req.decide(&steward, decision, now)?;
        self.commit(Event::Classification {
            request: req.clone(),
            dataset: None,
        })?;
        let overdue = self
            .state
            .reviews
            .values()
            .find(|r| r.kind == ReviewKind::ClassificationOverdue && r.payload_ref == id && r.is_pending())
            .cloned();
        let mut closed = None;
        if let Some(mut item) = overdue {
            let v = item.version;
            item.decide(&steward, ReviewDecision::Approved, "classification decided", v, now)?;
            self.commit(Event::Review { item: item.clone() })?;
            closed = Some(item);
        }
        let dataset = self.state.classification_datasets.get(id).cloned();
        if let Some(ds) = &dataset {
            self.set_dataset_tier(ds, tier)?;
        }
        let mut detail = json!({"request": id, "stage": "Decided", "decided_tier": tier.level(),
                                "proposed_tier": req.proposed_tier.level(), "override_reason": req.override_reason,
                                "late": req.late});
        if let Some(ds) = &dataset {
            detail["dataset"] = json!(ds);
            detail["tier"] = json!(tier.level());
        }
        if let Some(item) = &closed {
            detail["review_item"] = json!(item.id);
            detail["review_status"] = json!(item.status);
        }
        self.audit(&steward.id, AuditAction::Classified, id, detail)?;
        Ok(req)
    }

    pub fn file_appeal(&mut self, token: Option<&str>, body: FileAppeal) -> Result<Appeal> {
        let caller = self.principal(token)?;
        self.tick()?;
        let req = self
            .state
            .classification_requests
            .get(&body.classification_request)
            .ok_or_else(|| GovernanceError::UnknownRequest(body.classification_request.clone()))?;
        let id = format!("ap-{:06}", self.state.appeals.len() + 1);
        let appeal = Appeal::file(&id, req, &caller.id, body.grounds, self.clock.now())?;
        let tier = req.decided_tier;
        self.commit(Event::Appeal { appeal: appeal.clone() })?;
        let item = self.new_review(
            ReviewKind::Appeal,
            &id,
            tier,
            json!({"appeal": id, "request": appeal.classification_request, "grounds": appeal.grounds}),
        )?;
        self.audit(
            &caller.id,
            AuditAction::AppealFiled,
            &id,
            json!({"appeal": id, "request": appeal.classification_request, "stage": "Filed",
                   "review_item": item.id, "review_status": item.status}),
        )?;
        Ok(appeal)
    }

    pub fn decide_appeal(&mut self, token: Option<&str>, id: &str, body: AppealDecisionBody) -> Result<Appeal> {
        let steward = self.principal(token)?;
        self.tick()?;
        let now = self.clock.now();
        let mut appeal = self
            .state
            .appeals
            .get(id)
            .cloned()
            .ok_or_else(|| GovernanceError::UnknownAppeal(id.into()))?;
        let outcome = match body.decision {
            AppealStep::StartReview => {
                appeal.start_review(&steward)?;
                self.commit(Event::Appeal { appeal: appeal.clone() })?;
                self.audit(&steward.id, AuditAction::AppealFiled, id, json!({"appeal": id, "stage": "UnderReview"}))?;
                return Ok(appeal);
            }
            AppealStep::Upheld => AppealOutcome::Upheld,
            AppealStep::Overturned => AppealOutcome::Overturned,
        };
        appeal.decide(&steward, outcome, body.new_tier, &body.note, now)?;
        self.commit(Event::Appeal { appeal: appeal.clone() })?;

        let mut detail = json!({"appeal": id, "request": appeal.classification_request, "outcome": outcome,
                                "new_tier": appeal.new_tier.map(|t| t.level()), "note": body.note});
        if let (AppealOutcome::Overturned, Some(tier)) = (outcome, appeal.new_tier) {
            let mut req = self.state.classification_requests[&appeal.classification_request].clone();
            req.decided_tier = Some(tier);
            self.commit(Event::Classification {
                request: req,
                dataset: None,
            })?;
            if let Some(ds) = self.state.classification_datasets.get(&appeal.classification_request).cloned() {
                self.set_dataset_tier(&ds, tier)?;
                detail["dataset"] = json!(ds);
                detail["tier"] = json!(tier.level());
            }
        }
        let item = self
            .state
            .reviews
            .values()
            .find(|r| r.kind == ReviewKind::Appeal && r.payload_ref == id && r.is_pending())
            .cloned();
        if let Some(mut item) = item {
            let decision = match outcome {
                AppealOutcome::Overturned => ReviewDecision::Approved,
                AppealOutcome::Upheld => ReviewDecision::Denied,
            };
            let v = item.version;
            item.decide(&steward, decision, &body.note, v, now)?;
            self.commit(Event::Review { item: item.clone() })?;
            detail["review_item"] = json!(item.id);
            detail["review_status"] = json!(item.status);
        }
        self.audit(&steward.id, AuditAction::AppealDecided, id, detail)?;
        Ok(appeal)
    }

    pub fn egress(&mut self, token: Option<&str>, body: EgressSubmission) -> Result<EgressResponse> {
        let caller = self.principal(token)?;
        self.tick()?;
        let mut scope: BTreeSet<String> = self
            .state
            .sessions
            .get(&format!("{}/{}", caller.id, body.project))
            .cloned()
            .unwrap_or_default();
        for ds in &body.datasets {
            if !self.state.datasets.contains_key(ds) {
                return Err(GatewayError::UnknownDataset(ds.clone()));
            }
            scope.insert(ds.clone());
        }
        let tier = scope
            .iter()
            .map(|d| self.state.datasets[d].tier)
            .max()
            .unwrap_or(BdlTier::BDL0);
        let id = format!("eg-{:06}", self.state.egress.len() + 1);
        let request = EgressRequest {
            id: id.clone(),
            principal: caller.id.clone(),
            project: body.project.clone(),
            artifact_kind: body.artifact_kind,
            content: body.content.clone().into_bytes(),
            declared_provenance: body.declared_provenance.clone(),
            at: self.clock.now(),
        };
        request.validate().map_err(|e| GatewayError::Invalid(e.into()))?;
        let profile = enforcement_profile(tier);
        let mut verdict = check_egress(
            &request,
            tier,
            &profile,
            &Screening {
                corpus: self.corpus.as_ref(),
                honeytokens: self.honeytokens.as_ref().map(|r| (r, &self.wm_key)),
                thresholds: self.config.screening.thresholds,
            },
        );
        let status = match verdict.outcome {
            EgressOutcome::Allowed => EgressStatus::Allowed,
            EgressOutcome::Blocked => EgressStatus::Blocked,
            EgressOutcome::Queued => EgressStatus::PendingReview,
        };
        let mut review = None;
        if verdict.outcome == EgressOutcome::Queued {
            let item = self.new_review(
                ReviewKind::Egress,
                &id,
                Some(tier),
                json!({"egress": id, "principal": caller.id, "project": body.project,
                       "artifact_kind": body.artifact_kind, "reason": verdict.reason,
                       "similarity": verdict.similarity, "matched_datasets": verdict.matched_datasets, "scope": scope}),
            )?;
            verdict.review_item = Some(item.id.clone());
            review = Some(item);
        }
        self.commit(Event::Egress {
            record: EgressRecord {
                id: id.clone(),
                principal: caller.id.clone(),
                project: body.project,
                artifact_kind: body.artifact_kind,
                content: body.content,
                declared_provenance: body.declared_provenance,
                at: request.at,
                tier,
                scope,
                verdict: verdict.clone(),
                status,
                provenance: None,
            },
        })?;
        if let Some(hit) = &verdict.honeytoken {
            let planted_in = self
                .honeytokens
                .as_ref()
                .and_then(|r| r.get(&hit.token_id))
                .map(|r| r.planted_in.clone());
            tracing::warn!(egress = %id, principal = %caller.id, token = %hit.token_id, "honeytoken tripped");
            self.audit(
                &caller.id,
                AuditAction::HoneytokenTripped,
                &id,
                json!({"egress": id, "token_id": hit.token_id, "method": hit.method, "planted_in": planted_in,
                       "outcome": verdict.outcome, "reason": verdict.reason}),
            )?;
        } else if let Some(item) = &review {
            self.audit(
                &caller.id,
                AuditAction::EgressQueued,
                &id,
                json!({"egress": id, "reason": verdict.reason, "similarity": verdict.similarity, "egress_tier": tier.level(),
                       "review_item": item.id, "review_status": item.status}),
            )?;
        } else {
            self.audit(
                &caller.id,
                AuditAction::EgressDecided,
                &id,
                json!({"egress": id, "outcome": verdict.outcome, "reason": verdict.reason,
                       "similarity": verdict.similarity, "egress_tier": tier.level()}),
            )?;
        }
        if verdict.outcome == EgressOutcome::Blocked {
            return Err(GatewayError::EgressBlocked {
                id,
                verdict: Box::new(verdict),
            });
        }
        Ok(EgressResponse { id, tier, verdict })
    }

    pub fn review_queue(&mut self, token: Option<&str>, status: Option<ReviewStatus>) -> Result<Vec<ReviewItem>> {
        self.steward(token)?;
        self.tick()?;
        let mut items: Vec<ReviewItem> = self
            .state
            .reviews
            .values()
            .filter(|r| status.is_none_or(|s| r.status == s))
            .cloned()
            .collect();
        items.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        Ok(items)
    }

    pub fn decide_review(&mut self, token: Option<&str>, id: &str, body: ReviewDecisionBody) -> Result<ReviewItem> {
        let reviewer = self.principal(token)?;
        self.tick()?;
        let now = self.clock.now();
        let mut item = self
            .state
            .reviews
            .get(id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownReviewItem(id.into()))?;
        if item.kind == ReviewKind::Appeal && reviewer.steward && item.is_pending() {
            return Err(GatewayError::Invalid(format!(
                "appeal items close through /appeals/{}:decide",
                item.payload_ref
            )));
        }
        if body.decision == ReviewDecision::Denied && body.note.trim().is_empty() && reviewer.steward && item.is_pending() {
            return Err(GatewayError::Invalid("a denial needs a note".into()));
        }
        item.decide(&reviewer, body.decision, &body.note, body.expected_version, now)?;
        self.commit(Event::Review { item: item.clone() })?;
        let mut detail = json!({"review_item": item.id, "review_status": item.status, "kind": item.kind,
                                "payload_ref": item.payload_ref, "note": body.note, "version": item.version});
        let action = match item.kind {
            ReviewKind::Egress => {
                if let Some(mut rec) = self.state.egress.get(&item.payload_ref).cloned() {
                    let approved = item.status == ReviewStatus::Approved;
                    rec.status = if approved { EgressStatus::Released } else { EgressStatus::Rejected };
                    rec.verdict.outcome = if approved { EgressOutcome::Allowed } else { EgressOutcome::Blocked };
                    rec.verdict.reason = EgressReason::ReviewerDecision;
                    if approved && enforcement_profile(rec.tier).monitors(MonitoringControl::ProvenanceRecording) {
                        rec.provenance = Some(ProvenanceRecord {
                            approved_by: reviewer.id.clone(),
                            approved_at: now,
                            declared_provenance: rec.declared_provenance.clone(),
                            scope: rec.scope.clone(),
                            similarity: rec.verdict.similarity,
                        });
                        detail["provenance"] = json!(rec.provenance);
                    }
                    detail["egress_status"] = json!(rec.status);
                    self.commit(Event::Egress { record: rec })?;
                }
                AuditAction::EgressDecided
            }
            ReviewKind::AccessEscalation if item.status == ReviewStatus::Approved => AuditAction::AccessGranted,
            ReviewKind::AccessEscalation => AuditAction::AccessDenied,
            ReviewKind::AnomalyTriage => AuditAction::AnomalyFlagged,
            ReviewKind::ClassificationOverdue => AuditAction::Classified,
            ReviewKind::Appeal => AuditAction::AppealDecided,
        };
        self.audit(&reviewer.id, action, &item.payload_ref.clone(), detail)?;
        Ok(item)
    }

    /// Entries matching `q`; a query without filters returns the whole log.
    pub fn audit_query(&mut self, token: Option<&str>, q: &ProvenanceQuery) -> Result<Vec<AuditEntry>> {
        self.steward(token)?;
        if q.validate().is_err() {
            return Ok(self.chain.entries().to_vec());
        }
        Ok(self.chain.query(q).map_err(|e| GatewayError::Invalid(e.to_string()))?.into_iter().cloned().collect())
    }

    /// Re-reads the log from disk and verifies it.
    pub fn audit_verify(&mut self, token: Option<&str>) -> Result<ChainVerification> {
        self.steward(token)?;
        let bytes = std::fs::read(self.audit.path()).map_err(storage)?;
        Ok(verify_jsonl(&bytes, &self.signing.verifying_key()))
    }
}

fn plain(s: &NucleotideSequence) -> ReturnedRecord {
    ReturnedRecord {
        id: s.id().into(),
        description: s.description().into(),
        sequence: s.as_str().into(),
        watermarked: false,
    }
}

/// 64-bit export mark: SHA-256 over principal, dataset and instant.
pub fn export_fingerprint(principal: &str, dataset: &str, at: Timestamp) -> [u8; 8] {
    let mut buf = Vec::with_capacity(principal.len() + dataset.len() + 24);
    buf.extend_from_slice(b"export\0");
    buf.extend_from_slice(principal.as_bytes());
    buf.push(0);
    buf.extend_from_slice(dataset.as_bytes());
    buf.push(0);
    buf.extend_from_slice(&at.0.to_le_bytes());
    sha256(&buf)[..8].try_into().unwrap()
}

fn finite_or_str(z: f64) -> Value {
    if z.is_finite() {
        json!(z)
    } else {
        json!(if z > 0.0 { "inf" } else { "-inf" })
    }
}
