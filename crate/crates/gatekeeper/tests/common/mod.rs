#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use gatekeeper::config::{GatewayConfig, PrincipalEntry};
use gatekeeper::keys;
use gatekeeper::service::{Gateway, ManualClock, RecordsRequest, RegisterDataset};
use gatekeeper_core::access::{AccessAction, IdentityLevel, Principal};
use gatekeeper_core::auditlog::SigningKey;
use gatekeeper_core::seqio::{write_fasta, NucleotideSequence};
use gatekeeper_core::taxonomy::DatasetDescriptor;
use gatekeeper_core::time::Timestamp;
use gatekeeper_core::watermark::WatermarkKey;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

pub const T0: Timestamp = Timestamp(1_750_000_000_000);
pub const STEWARD: &str = "tok-steward";
pub const ALICE: &str = "tok-alice";
pub const BOB: &str = "tok-bob";
pub const ALICE_CODE: &str = "135790";

pub const REGISTRY: &str = r#"{"version": 2, "families": [
  {"name": "Orthomyxoviridae", "class": "HumanPandemicPotential"},
  {"name": "Coronaviridae", "class": "HumanInfecting"},
  {"name": "Paramyxoviridae", "class": "AnimalPandemicCapable"},
  {"name": "Outbreakviridae", "class": "HumanInfecting", "outbreak": true}
]}"#;

pub struct Fixture {
    pub dir: TempDir,
    pub clock: ManualClock,
    pub config: GatewayConfig,
}

pub fn signing_key() -> SigningKey {
    SigningKey::from_bytes(&[7; 32])
}

pub fn watermark_key() -> WatermarkKey {
    WatermarkKey::new("wm-test", [9; 32])
}

fn principal(id: &str, level: IdentityLevel, steward: bool) -> Principal {
    let mut p = Principal::new(id, level);
    p.trust_score = 0.9;
    p.second_factor_enrolled = true;
    p.approved_projects.insert("vax".into());
    p.home_institution = "inst-a".into();
    p.usual_countries.insert("GB".into());
    p.steward = steward;
    p
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::write(root.join("registry.json"), REGISTRY).unwrap();
        std::fs::write(root.join("signing.key"), keys::signing_key_hex(&signing_key())).unwrap();
        std::fs::write(root.join("watermark.json"), keys::watermark_key_json(&watermark_key())).unwrap();
        let mut config = GatewayConfig::new(
            root.join("store"),
            root.join("registry.json"),
            root.join("signing.key"),
            root.join("watermark.json"),
        );
        config.rng_seed = Some(11);
        let mut bob = principal("bob", IdentityLevel::Registered, false);
        bob.second_factor_enrolled = false;
        bob.trust_score = 0.5;
        bob.approved_projects.clear();
        config.principals = vec![
            PrincipalEntry {
                token: STEWARD.into(),
                second_factor: Some("246810".into()),
                principal: principal("steward", IdentityLevel::PreScreened, true),
            },
            PrincipalEntry {
                token: ALICE.into(),
                second_factor: Some(ALICE_CODE.into()),
                principal: principal("alice", IdentityLevel::PreScreened, false),
            },
            PrincipalEntry {
                token: BOB.into(),
                second_factor: None,
                principal: bob,
            },
        ];
        Fixture {
            dir,
            clock: ManualClock::new(T0),
            config,
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.config.store_dir.clone()
    }

    pub fn open(&self) -> Gateway {
        Gateway::open(self.config.clone(), Arc::new(self.clock.clone())).unwrap()
    }
}

const STOPS: [&[u8; 3]; 3] = [b"TAA", b"TAG", b"TGA"];

pub fn random_cds<R: Rng>(rng: &mut R, codons: usize) -> Vec<u8> {
    let mut out = b"ATG".to_vec();
    while out.len() < 3 * (codons + 1) {
        let c = [b"ACGT"[rng.gen_range(0..4)], b"ACGT"[rng.gen_range(0..4)], b"ACGT"[rng.gen_range(0..4)]];
        if !STOPS.contains(&&c) {
            out.extend_from_slice(&c);
        }
    }
    out.extend_from_slice(b"TAA");
    out
}

pub fn records(seed: u64, n: usize, codons: usize) -> Vec<NucleotideSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| NucleotideSequence::new(format!("r{seed}-{i}"), "", random_cds(&mut rng, codons)).unwrap())
        .collect()
}

pub fn fasta(seed: u64, n: usize, codons: usize) -> String {
    write_fasta(&records(seed, n, codons))
}

pub fn descriptor(json: &str) -> DatasetDescriptor {
    serde_json::from_str(json).unwrap()
}

pub fn bdl0() -> DatasetDescriptor {
    descriptor(r#"{"modality": "SequenceRaw", "family_class": "NonConcern"}"#)
}

pub fn bdl1() -> DatasetDescriptor {
    descriptor(r#"{"modality": "SequenceRaw", "family_class": "EukaryoteInfecting"}"#)
}

pub fn bdl2() -> DatasetDescriptor {
    descriptor(r#"{"modality": "SequenceAnnotated", "family_class": "AnimalPandemicCapable"}"#)
}

pub fn bdl3() -> DatasetDescriptor {
    descriptor(r#"{"modality": "SequenceAnnotated", "family_class": "HumanInfecting"}"#)
}

pub fn bdl4() -> DatasetDescriptor {
    descriptor(
        r#"{"modality": "FunctionalAssay", "family_class": "HumanPandemicPotential",
            "properties": ["Transmissibility"], "enhancement_demonstrated": true}"#,
    )
}

pub fn register(id: &str, descriptor: DatasetDescriptor, fasta: String) -> RegisterDataset {
    RegisterDataset {
        id: Some(id.into()),
        descriptor,
        fasta,
        provenance: "sequenced in-house, run 42".into(),
        classification_request: None,
    }
}

pub fn records_request(action: AccessAction, n: u64) -> RecordsRequest {
    RecordsRequest {
        action,
        project_id: Some("vax".into()),
        intent_statement: Some("vaccine antigen design".into()),
        origin_country: "GB".into(),
        requested_records: n,
        provenance_deficit: 0.0,
        review_item: None,
    }
}
