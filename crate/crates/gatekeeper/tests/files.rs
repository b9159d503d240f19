mod common;

use std::collections::BTreeSet;

use common::*;
use gatekeeper::files::{read_corpus, read_honeytoken_rows, sidecar_path, write_corpus, write_honeytoken_rows, AuditStore, FileError};
use gatekeeper::store::{Event, EventStore, JobRecord, State};
use gatekeeper_core::auditlog::{verify_chain, AuditAction, AuditEvent};
use gatekeeper_core::egress::{screen, ControlledCorpus};
use gatekeeper_core::seqio::write_fasta;
use gatekeeper_core::watermark::honeytoken::{generate_honeytoken, CodonUsage, DecoyRequest};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[test]
fn corpus_index_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.bin");
    let mut c = ControlledCorpus::new(21).unwrap();
    c.add_dataset("a", &records(1, 5, 60)).unwrap();
    c.add_dataset("b", &records(2, 3, 60)).unwrap();
    c.remove_dataset("a");
    c.add_dataset("c", &records(3, 2, 60)).unwrap();
    write_corpus(&c, &path, T0).unwrap();
    let (back, side) = read_corpus(&path).unwrap();
    assert_eq!(side.k, 21);
    assert_eq!(side.dataset_ids, ["b", "c"]);
    assert_eq!(side.built_at, T0);
    assert_eq!(back.kmer_count(), c.kmer_count());
    for seed in [2, 3, 4] {
        let q = write_fasta(&records(seed, 2, 60));
        assert_eq!(screen(q.as_bytes(), &back), screen(q.as_bytes(), &c));
    }
}

#[test]
fn corrupt_corpus_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.bin");
    let mut c = ControlledCorpus::new(15).unwrap();
    c.add_dataset("a", &records(5, 2, 40)).unwrap();
    write_corpus(&c, &path, T0).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_corpus(&path), Err(FileError::Corrupt { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(read_corpus(&path), Err(FileError::Corrupt { .. })));

    std::fs::write(&path, &bytes).unwrap();
    let side = std::fs::read_to_string(sidecar_path(&path)).unwrap();
    std::fs::write(sidecar_path(&path), side.replace("\"a\"", "\"z\"")).unwrap();
    assert!(matches!(read_corpus(&path), Err(FileError::Corrupt { .. })));
    std::fs::remove_file(sidecar_path(&path)).unwrap();
    assert!(matches!(read_corpus(&path), Err(FileError::Io { .. })));
}

#[test]
fn audit_store_appends_and_reopens() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let key = signing_key();
    {
        let (mut store, mut chain) = AuditStore::open(&path).unwrap();
        assert!(chain.is_empty());
        for i in 0..5 {
            let ev = AuditEvent::new(T0, "alice", AuditAction::IntentLogged, format!("d{i}"), json!({"i": i}));
            let entry = chain.prepare(ev, &key).unwrap();
            store.append(&entry).unwrap();
            chain.commit(entry);
        }
    }
    let (_, chain) = AuditStore::open(&path).unwrap();
    assert_eq!(chain.len(), 5);
    assert!(verify_chain(chain.entries(), &key.verifying_key()).ok);

    std::fs::write(&path, std::fs::read_to_string(&path).unwrap() + "{not json\n").unwrap();
    assert!(matches!(AuditStore::open(&path), Err(FileError::BadLine { line: 6, .. })));
}

fn job(i: usize) -> Event {
    Event::Job {
        record: JobRecord {
            id: format!("job-{i}"),
            principal: "alice".into(),
            dataset: "d".into(),
            project: None,
            intent: None,
            submitted_at: T0,
            status: "Completed".into(),
        },
    }
}

#[test]
fn event_store_snapshots_and_drops_torn_tail() {
    let dir = tempfile::tempdir().unwrap();
    let mut expect = State::default();
    {
        let (mut store, state) = EventStore::open(dir.path(), 3).unwrap();
        assert_eq!(state, State::default());
        for i in 0..7 {
            let ev = job(i);
            store.append(&ev).unwrap();
            expect.apply(ev);
            store.maybe_snapshot(&expect).unwrap();
        }
    }
    assert!(dir.path().join("snapshot.json").is_file());
    let (_, state) = EventStore::open(dir.path(), 3).unwrap();
    assert_eq!(state, expect);

    let log = dir.path().join("events.jsonl");
    let mut text = std::fs::read_to_string(&log).unwrap();
    let full_len = text.len();
    text.push_str("{\"event\":\"Job\",\"rec");
    std::fs::write(&log, &text).unwrap();
    let (mut store, state) = EventStore::open(dir.path(), 3).unwrap();
    assert_eq!(state, expect);
    assert_eq!(std::fs::metadata(&log).unwrap().len() as usize, full_len);
    store.append(&job(7)).unwrap();
    expect.apply(job(7));
    drop(store);
    assert_eq!(EventStore::open(dir.path(), 3).unwrap().1, expect);
}

#[test]
fn honeytoken_rows_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("honeytokens.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let key = watermark_key();
    let mut rows = Vec::new();
    for i in 0..3 {
        let id = format!("rec-{i:08x}");
        let req = DecoyRequest {
            token_id: &id,
            length_codons: 80,
            planted_in: "cov",
            created_at: T0,
            k: 30,
        };
        let (_, rec) = generate_honeytoken(&CodonUsage::uniform(), &req, &key, &BTreeSet::new(), &mut rng).unwrap();
        rows.push(rec.to_row());
    }
    write_honeytoken_rows(&path, &rows).unwrap();
    assert_eq!(read_honeytoken_rows(&path).unwrap(), rows);
}
