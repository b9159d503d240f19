//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#[path = "../common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use common::*;
use gatekeeper::service::{AppealDecisionBody, AppealStep, FileAppeal, SubmitClassification};
use gatekeeper_core::access::*;
use gatekeeper_core::auditlog::*;
use gatekeeper_core::egress::{screen, ControlledCorpus};
use gatekeeper_core::governance::{AppealStatus, ClassificationDecision, RequestStatus};
use gatekeeper_core::seqio::{code, translate, CodingSequence, NucleotideSequence};
use gatekeeper_core::taxonomy::*;
use gatekeeper_core::time::{Millis, Timestamp, MILLIS_PER_DAY};
use gatekeeper_core::watermark::*;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use DataModality as M;
use FamilyRiskClass as F;
use PropertyOfConcern as P;

type Check = fn() -> String;

fn main() -> ExitCode {
    let criteria: [(&str, Check, u64); 9] = [
        ("taxonomy fixtures and exhaustive monotonicity", taxonomy, 5),
        ("enforcement matrix", enforcement_matrix, 5),
        ("watermark properties", watermark, 60),
        ("audit tamper suite", audit_tamper, 30),
        ("screening oracle equivalence", screening, 60),
        ("rate limiter conformance", rate_limiter, 30),
        ("anomaly injection", anomaly, 30),
        ("end-to-end exfiltration over HTTP", exfiltration, 30),
        ("governance workflow", governance, 30),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let took = start.elapsed();
        let verdict = match result {
            Ok(summary) if took <= Duration::from_secs(limit) => Ok(summary),
            Ok(summary) => Err(format!("{summary}; over the {limit} s budget")),
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match verdict {
            Ok(s) => println!("PASS  {name} ({:.2} s): {s}", took.as_secs_f64()),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name} ({:.2} s): {e}", took.as_secs_f64());
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---- taxonomy ----

fn desc(m: DataModality, f: FamilyRiskClass, props: &[PropertyOfConcern], enhanced: bool) -> DatasetDescriptor {
    let mut d = DatasetDescriptor::new(m, f).with_properties(props.iter().copied());
    d.enhancement_demonstrated = enhanced;
    d
}

/// Tier from the data-type lists, taking the highest list a descriptor falls in.
fn tier_oracle(d: &DatasetDescriptor) -> u8 {
    const TIER2: [P; 5] = [
        P::ZoonoticCrossover,
        P::EnvironmentalStability,
        P::HostRange,
        P::HostSusceptibility,
        P::DetectionEvasion,
    ];
    const TIER3: [P; 4] = [P::Transmissibility, P::Virulence, P::ImmuneEvasion, P::CountermeasureResistance];
    const ENHANCEABLE: [P; 3] = [P::Transmissibility, P::Virulence, P::ImmuneEvasion];
    if d.outbreak_exception {
        return 0;
    }
    let fam = d.family_class as u8;
    let annotated = d.modality == M::SequenceAnnotated;
    let composition = matches!(d.modality, M::SequenceRaw | M::ProteinStructure | M::SequenceAnnotated);
    let functional = !matches!(d.modality, M::SequenceRaw | M::ProteinStructure | M::Other);
    let any = |set: &[P]| d.properties.iter().any(|p| set.contains(p));
    let mut t = 0;
    if fam >= 1 && composition {
        t = 1;
    }
    if fam >= 2 && (annotated || (functional && any(&TIER2))) {
        t = 2;
    }
    if fam >= 3 && (annotated || (functional && any(&TIER3))) {
        t = 3;
    }
    if fam == 4 && functional && d.enhancement_demonstrated && any(&ENHANCEABLE) {
        t = 4;
    }
    t
}

fn taxonomy() -> String {
    let mut outbreak = desc(M::FunctionalAssay, F::HumanPandemicPotential, &[P::Transmissibility], true);
    outbreak.outbreak_exception = true;
    let mut outbreak_annotated = desc(M::SequenceAnnotated, F::HumanInfecting, &[], false);
    outbreak_annotated.outbreak_exception = true;
    let fixtures: Vec<(&str, DatasetDescriptor, u8)> = vec![
        ("bacterial genome", desc(M::SequenceRaw, F::NonConcern, &[], false), 0),
        ("unlisted data type", desc(M::Other, F::HumanPandemicPotential, &[], false), 0),
        ("host range, low family", desc(M::FunctionalAssay, F::EukaryoteInfecting, &[P::HostRange], false), 0),
        ("non-concern structure", desc(M::ProteinStructure, F::NonConcern, &[], false), 0),
        ("unscored animal model", desc(M::PhenotypicAnimalModel, F::AnimalPandemicCapable, &[], false), 0),
        ("viral sequencing", desc(M::SequenceRaw, F::EukaryoteInfecting, &[], false), 1),
        ("viral protein structure", desc(M::ProteinStructure, F::EukaryoteInfecting, &[], false), 1),
        ("raw human-pandemic genome", desc(M::SequenceRaw, F::HumanPandemicPotential, &[], false), 1),
        ("human-infecting structure", desc(M::ProteinStructure, F::HumanInfecting, &[], false), 1),
        ("annotated animal-pandemic sequence", desc(M::SequenceAnnotated, F::AnimalPandemicCapable, &[], false), 2),
        ("host range assay", desc(M::FunctionalAssay, F::AnimalPandemicCapable, &[P::HostRange], false), 2),
        ("zoonotic receptor binding", desc(M::ProteinInteraction, F::AnimalPandemicCapable, &[P::ZoonoticCrossover], false), 2),
        ("diagnostic variant comparison", desc(M::DiagnosticComparison, F::AnimalPandemicCapable, &[P::DetectionEvasion], false), 2),
        ("environmental stability", desc(M::EnvironmentalStabilityAssay, F::AnimalPandemicCapable, &[P::EnvironmentalStability], false), 2),
        ("host susceptibility, human family", desc(M::FunctionalAssay, F::HumanInfecting, &[P::HostSusceptibility], false), 2),
        ("annotated human pathogen sequence", desc(M::SequenceAnnotated, F::HumanInfecting, &[], false), 3),
        ("transmissibility assay", desc(M::FunctionalAssay, F::HumanInfecting, &[P::Transmissibility], false), 3),
        ("immune evasion interaction", desc(M::ProteinInteraction, F::HumanInfecting, &[P::ImmuneEvasion], false), 3),
        ("animal model phenotype", desc(M::PhenotypicAnimalModel, F::HumanInfecting, &[P::Virulence], false), 3),
        ("variant transmission rate", desc(M::TransmissionRate, F::HumanInfecting, &[P::Transmissibility], false), 3),
        ("countermeasure resistance", desc(M::FunctionalAssay, F::HumanPandemicPotential, &[P::CountermeasureResistance], true), 3),
        ("unenhanced virulence", desc(M::FunctionalAssay, F::HumanPandemicPotential, &[P::Virulence], false), 3),
        ("annotated pandemic sequence", desc(M::SequenceAnnotated, F::HumanPandemicPotential, &[], false), 3),
        ("enhanced annotated variant", desc(M::SequenceAnnotated, F::HumanPandemicPotential, &[P::Transmissibility], true), 4),
        ("enhanced virulence assay", desc(M::FunctionalAssay, F::HumanPandemicPotential, &[P::Virulence, P::ImmuneEvasion], true), 4),
        ("antibody binding, enhanced", desc(M::ProteinInteraction, F::HumanPandemicPotential, &[P::ImmuneEvasion], true), 4),
        ("enhanced transmissibility assay", desc(M::FunctionalAssay, F::HumanPandemicPotential, &[P::Transmissibility], true), 4),
        ("outbreak override", outbreak, 0),
        ("outbreak, annotated", outbreak_annotated, 0),
    ];
    for (label, d, want) in &fixtures {
        d.validate().unwrap_or_else(|e| panic!("{label}: {e}"));
        let r = classify(d);
        assert_eq!(r.tier.level(), *want, "fixture {label}");
        assert_eq!(tier_oracle(d), *want, "oracle disagrees on fixture {label}");
        if d.outbreak_exception {
            assert_eq!(r.warnings, ["outbreak-override"], "{label}");
        }
    }

    let mut checked = 0u64;
    for m in M::ALL {
        for f in F::ALL {
            for mask in 0u16..512 {
                let props: Vec<P> = (0..9).filter(|i| mask >> i & 1 == 1).map(|i| P::ALL[i]).collect();
                for (enh, ob) in [(false, false), (true, false), (false, true), (true, true)] {
                    if enh && props.is_empty() {
                        continue;
                    }
                    let mut d = desc(m, f, &props, enh);
                    d.outbreak_exception = ob;
                    let t = classify(&d).tier;
                    assert_eq!(t.level(), tier_oracle(&d), "{d:?}");
                    if ob {
                        continue;
                    }
                    let mut ob_d = d.clone();
                    ob_d.outbreak_exception = true;
                    assert_eq!(classify(&ob_d).tier, BdlTier::BDL0);
                    if let Some(&up) = F::ALL.iter().find(|&&x| x > f) {
                        let mut u = d.clone();
                        u.family_class = up;
                        assert!(classify(&u).tier >= t, "raising family lowered {d:?}");
                    }
                    for p in P::ALL.iter().filter(|p| !d.properties.contains(p)) {
                        let mut u = d.clone();
                        u.properties.insert(*p);
                        assert!(classify(&u).tier >= t, "adding {p:?} lowered {d:?}");
                    }
                    if !enh && !props.is_empty() {
                        let mut u = d.clone();
                        u.enhancement_demonstrated = true;
                        assert!(classify(&u).tier >= t, "enhancement lowered {d:?}");
                    }
                    checked += 1;
                }
            }
        }
    }
    for w in BdlTier::ALL.windows(2) {
        let (a, b) = (enforcement_profile(w[0]), enforcement_profile(w[1]));
        assert!(a.monitoring.is_subset(&b.monitoring) && a.min_identity <= b.min_identity);
    }
    format!("{} fixtures agree; {checked} descriptors match the oracle and stay monotone", fixtures.len())
}

// ---- enforcement ----

struct Row {
    min: IdentityLevel,
    second_factor: bool,
    intent: bool,
    project: bool,
    prescreen: bool,
    tre_only: bool,
}

const fn row(min: IdentityLevel, second_factor: bool, project: bool, prescreen: bool, tre_only: bool) -> Row {
    Row {
        min,
        second_factor,
        intent: true,
        project,
        prescreen,
        tre_only,
    }
}

/// Rows for BDL-1 to BDL-4; BDL-0 is open.
const TABLE: [Row; 4] = [
    row(IdentityLevel::Registered, false, false, false, false),
    row(IdentityLevel::Accredited, true, false, false, false),
    row(IdentityLevel::Accredited, true, true, false, true),
    row(IdentityLevel::Accredited, true, true, true, true),
];

fn expected(level: IdentityLevel, tier: u8, action: AccessAction, sf: bool, intent: bool, project: bool) -> DecisionReason {
    use DecisionReason::*;
    if tier == 0 {
        return TierOpen;
    }
    let r = &TABLE[tier as usize - 1];
    if level < r.min {
        IdentityTooLow
    } else if r.second_factor && !sf {
        SecondFactorRequired
    } else if r.intent && action != AccessAction::ReadMetadata && !intent {
        IntentRequired
    } else if r.project && !project {
        ProjectApprovalRequired
    } else if r.prescreen && level < IdentityLevel::PreScreened {
        PreScreenRequired
    } else if r.tre_only && action == AccessAction::ExportRecords {
        ExportForbiddenTreOnly
    } else {
        Ok
    }
}

fn run_decide(level: IdentityLevel, tier: u8, action: AccessAction, sf: bool, intent: bool, project: bool) -> AccessDecision {
    let mut p = Principal::new("p", level);
    p.trust_score = 1.0;
    p.approved_projects.insert("proj".into());
    let req = AccessRequest {
        principal_id: "p".into(),
        dataset_id: "d".into(),
        action,
        project_id: project.then(|| "proj".into()),
        intent_statement: intent.then(|| "surveillance".into()),
        second_factor_presented: sf,
        origin_country: "GB".into(),
        requested_records: 1,
        requested_bytes: 100,
        at: Timestamp(0),
    };
    let tier = BdlTier::new(tier).unwrap();
    decide(&req, &p, tier, &enforcement_profile(tier), &mut RateLimiter::new(), &AccessPolicy::default(), RiskInputs::default())
}

fn enforcement_matrix() -> String {
    use AccessAction::*;
    use DecisionReason as R;
    use IdentityLevel::*;
    let spot = [
        (Anonymous, 0, ExportRecords, false, false, false, R::TierOpen),
        (Anonymous, 1, ReadRecords, true, true, true, R::IdentityTooLow),
        (Registered, 1, ReadMetadata, false, false, false, R::Ok),
        (Registered, 1, ReadRecords, false, false, false, R::IntentRequired),
        (Registered, 1, ExportRecords, false, true, false, R::Ok),
        (Registered, 2, ReadRecords, true, true, true, R::IdentityTooLow),
        (Accredited, 2, ReadRecords, false, true, true, R::SecondFactorRequired),
        (Accredited, 2, ExportRecords, true, true, false, R::Ok),
        (Accredited, 3, ReadRecords, true, true, false, R::ProjectApprovalRequired),
        (Accredited, 3, ExportRecords, true, true, true, R::ExportForbiddenTreOnly),
        (Accredited, 4, SubmitJob, true, true, true, R::PreScreenRequired),
        (PreScreened, 4, SubmitJob, true, true, true, R::Ok),
        (PreScreened, 4, ExportRecords, true, true, true, R::ExportForbiddenTreOnly),
        (PreScreened, 4, ReadRecords, true, false, true, R::IntentRequired),
    ];
    for (level, tier, action, sf, intent, project, want) in spot {
        assert_eq!(expected(level, tier, action, sf, intent, project), want, "table row {level:?} BDL-{tier} {action:?}");
    }

    let mut cases = Vec::new();
    for level in IdentityLevel::ALL {
        for tier in 0..5u8 {
            for flags in 0..8u8 {
                cases.push((level, tier, ReadRecords, flags & 1 != 0, flags & 2 != 0, flags & 4 != 0));
            }
            cases.push((level, tier, ExportRecords, true, true, true));
            cases.push((level, tier, ReadMetadata, true, true, true));
        }
    }
    for &(level, tier, action, sf, intent, project) in &cases {
        let want = expected(level, tier, action, sf, intent, project);
        let got = run_decide(level, tier, action, sf, intent, project);
        assert_eq!(got.reason, want, "{level:?} BDL-{tier} {action:?} sf={sf} intent={intent} project={project}");
        let allowed = matches!(want, R::Ok | R::TierOpen);
        assert_eq!(got.outcome == Outcome::Allow, allowed);
        if want == R::Ok && action == ExportRecords {
            assert_eq!(got.obligations.contains(&Obligation::WatermarkExport), tier >= 2);
        }
    }
    format!("{} cases and {} spot rows agree", cases.len(), spot.len())
}

// ---- watermark ----

fn watermark() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let key = WatermarkKey::new("acceptance", rng.gen());
    let (mut wrong_trials, mut wrong_fail) = (0u32, 0u32);
    let (mut mut_trials, mut mut_detected) = (0u32, 0u32);
    for n in 0..1000 {
        let codons = rng.gen_range(100..=1000);
        let cds = CodingSequence::from_bases(&random_cds(&mut rng, codons - 2)).unwrap();
        let cap = capacity(&cds);
        let max_len = (cap - CRC_BITS).min(MAX_PAYLOAD_BITS);
        let len = rng.gen_range(0..=max_len);
        let ns = if rng.gen_bool(0.5) { Namespace::Export } else { Namespace::Decoy };
        let payload = WatermarkPayload::new(ns, Bits::new((0..len).map(|_| rng.gen()).collect())).unwrap();
        let marked = embed(&cds, &payload, &key).unwrap();
        assert_eq!(translate(&marked), translate(&cds), "cds {n}: translation changed");
        assert_eq!(extract(&marked, &key, len).unwrap(), payload, "cds {n}: round trip");

        for _ in 0..10 {
            let other = WatermarkKey::new("other", rng.gen());
            wrong_trials += 1;
            wrong_fail += u32::from(extract(&marked, &other, len) == Err(WatermarkError::CrcMismatch));
        }
        let idx: Vec<usize> = marked.codon_indices().collect();
        let sites: Vec<usize> = (0..idx.len()).filter(|&i| site_bits(idx[i]) > 0).collect();
        for _ in 0..10 {
            let site = sites[rng.gen_range(0..sites.len())];
            let alts: Vec<usize> = code::synonymous_family(code::amino_acid(idx[site])).filter(|&c| c != idx[site]).collect();
            let mut bases = marked.bases().to_vec();
            bases[3 * site..3 * site + 3].copy_from_slice(&code::codon_from_index(alts[rng.gen_range(0..alts.len())]));
            let edited = marked.with_bases(bases).unwrap();
            assert_eq!(translate(&edited), translate(&marked));
            mut_trials += 1;
            mut_detected += u32::from(extract(&edited, &key, len).is_err());
        }
    }
    let wrong_rate = f64::from(wrong_fail) / f64::from(wrong_trials);
    let mut_rate = f64::from(mut_detected) / f64::from(mut_trials);
    assert!(wrong_rate >= 0.999, "wrong-key CRC failure rate {wrong_rate}");
    assert!(mut_rate >= 0.999, "single-mutation detection rate {mut_rate}");
    format!(
        "1000 round trips exact; wrong key fails {wrong_fail}/{wrong_trials}; mutations detected {mut_detected}/{mut_trials}"
    )
}

// ---- audit ----

fn audit_tamper() -> String {
    let sk = SigningKey::from_bytes(&[3; 32]);
    let vk = sk.verifying_key();
    let actions = [AuditAction::AccessGranted, AuditAction::EgressQueued, AuditAction::Classified, AuditAction::HoneytokenTripped];
    let mut chain = AuditChain::new();
    for i in 0..1000u64 {
        let ev = AuditEvent::new(
            Timestamp(1_700_000_000_000 + i as i64 * 37),
            format!("user-{}", i % 7),
            actions[i as usize % 4],
            format!("ds-{}", i % 11),
            json!({"i": i, "note": format!("entry {i} é"), "bytes": i * 1000}),
        );
        chain.append(ev, &sk).unwrap();
    }
    let entries = chain.entries().to_vec();
    let anchor = chain.head_hash();
    assert!(verify_chain(&entries, &vk).ok);
    let log: Vec<u8> = entries.iter().flat_map(|e| (e.to_line() + "\n").into_bytes()).collect();
    assert!(verify_jsonl(&log, &vk).ok);

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mutations = 600;
    for _ in 0..mutations {
        let pos = rng.gen_range(0..log.len());
        let mut bad = log.clone();
        bad[pos] ^= rng.gen_range(1..=255u8);
        let line = log[..pos].iter().filter(|&&b| b == b'\n').count() as u64 + 1;
        let v = verify_jsonl(&bad, &vk);
        assert_eq!(v.first_bad_index, Some(line), "byte {pos}");
    }
    let mut e = entries.clone();
    for i in 0..entries.len() {
        let removed = e.remove(i);
        let v = verify_chain(&e, &vk);
        if i + 1 == entries.len() {
            // A truncated tail is still a valid chain; the recorded head exposes it.
            assert!(v.ok && e.last().unwrap().entry_hash != anchor);
        } else {
            assert_eq!(v.first_bad_index, Some(i as u64 + 1), "delete {i}");
        }
        e.insert(i, removed);
    }
    for i in 0..entries.len() - 1 {
        e.swap(i, i + 1);
        assert_eq!(verify_chain(&e, &vk).first_bad_index, Some(i as u64 + 1), "swap {i}");
        e.swap(i, i + 1);
    }
    let mut reorders = entries.len() - 1;
    for _ in 0..200 {
        let (a, b) = (rng.gen_range(0..1000), rng.gen_range(0..1000));
        if a == b {
            continue;
        }
        reorders += 1;
        e.swap(a, b);
        assert_eq!(verify_chain(&e, &vk).first_bad_index, Some(a.min(b) as u64 + 1), "swap {a} {b}");
        e.swap(a, b);
    }
    assert_eq!(e, entries);
    format!("pristine verifies; {mutations} byte mutations, 1000 deletions and {reorders} reorders located")
}

// ---- screening ----

fn random_bases(rng: &mut impl Rng, n: usize) -> String {
    (0..n).map(|_| b"ACGT"[rng.gen_range(0..4)] as char).collect()
}

/// Containment by enumerating every corpus window of every record.
fn screening_oracle(candidates: &[String], corpus: &[(String, Vec<String>)], k: usize) -> (f64, BTreeSet<String>) {
    let mut windows: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    let mut whole: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for (id, seqs) in corpus {
        for s in seqs {
            whole.entry(s).or_default().insert(id);
            for i in 0..(s.len() + 1).saturating_sub(k) {
                windows.entry(&s[i..i + k]).or_default().insert(id);
            }
        }
    }
    let mut best = 0.0f64;
    let mut matched = BTreeSet::new();
    for c in candidates {
        if let Some(ids) = whole.get(c.as_str()) {
            best = 1.0;
            matched.extend(ids.iter().map(|s| s.to_string()));
            continue;
        }
        if c.len() < k {
            continue;
        }
        let distinct: BTreeSet<&str> = (0..=c.len() - k).map(|i| &c[i..i + k]).collect();
        let mut hits = 0usize;
        for w in &distinct {
            if let Some(ids) = windows.get(w) {
                hits += 1;
                matched.extend(ids.iter().map(|s| s.to_string()));
            }
        }
        best = best.max(hits as f64 / distinct.len() as f64);
    }
    (best, matched)
}

fn screening() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    let ks = [11, 12, 16, 21, 30, 45, 64];
    let (mut corpus_nt, mut query_nt, mut fasta_cases) = (0usize, 0usize, 0);
    for case in 0..100 {
        let k = ks[case % ks.len()];
        let budget = rng.gen_range(5_000..=100_000usize);
        let n_ds = rng.gen_range(1..=5);
        let mut corpus: Vec<(String, Vec<String>)> = (0..n_ds).map(|d| (format!("ds{d}"), Vec::new())).collect();
        let mut used = 0;
        while used < budget {
            let len = rng.gen_range(20..=5000).min(budget - used).max(1);
            let seq = random_bases(&mut rng, len);
            used += len;
            let d = rng.gen_range(0..n_ds);
            corpus[d].1.push(seq);
        }
        corpus_nt += used;
        let mut index = ControlledCorpus::new(k).unwrap();
        for (id, seqs) in &corpus {
            let recs: Vec<_> = seqs
                .iter()
                .enumerate()
                .map(|(i, s)| NucleotideSequence::new(format!("{id}-{i}"), "", s.as_bytes().to_vec()).unwrap())
                .collect();
            index.add_dataset(id, &recs).unwrap();
        }
        let all: Vec<&String> = corpus.iter().flat_map(|(_, s)| s).collect();
        let fragment = |rng: &mut ChaCha8Rng| -> String {
            let s = all[rng.gen_range(0..all.len())];
            match rng.gen_range(0..10) {
                0 => s.clone(),
                1..=6 => {
                    let a = rng.gen_range(0..s.len());
                    let b = (a + rng.gen_range(1..800)).min(s.len());
                    s[a..b].to_string()
                }
                _ => {
                    let n = rng.gen_range(1..300);
                    random_bases(rng, n)
                }
            }
        };
        let limit = rng.gen_range(100..=10_000usize);
        let (text, candidates) = if case % 5 == 4 {
            fasta_cases += 1;
            let mut text = String::new();
            let mut cands = Vec::new();
            let mut total = 0;
            while total < limit {
                let mut f = fragment(&mut rng);
                f.truncate(limit - total);
                total += f.len();
                text.push_str(&format!(">q{}\n{f}\n", cands.len()));
                cands.push(f);
            }
            (text, cands)
        } else {
            let mut text = String::from("result table: ");
            let mut total = 0;
            while total < limit {
                let mut f = fragment(&mut rng);
                f.truncate(limit - total);
                total += f.len();
                if rng.gen_bool(0.2) {
                    f = f.to_lowercase();
                }
                text.push_str(&f);
                text.push_str([" | ", "N", "\n", "", "7", " "][rng.gen_range(0..6)]);
            }
            let cands = text
                .split(|c: char| !"ACGTacgt".contains(c))
                .filter(|r| r.len() >= k)
                .map(str::to_uppercase)
                .collect();
            (text, cands)
        };
        query_nt = query_nt.max(candidates.iter().map(String::len).sum());
        let (want, want_ds) = screening_oracle(&candidates, &corpus, k);
        let got = screen(text.as_bytes(), &index);
        assert_eq!(got.max_containment, want, "case {case} (k={k})");
        assert_eq!(got.matched_datasets, want_ds, "case {case} (k={k})");
    }
    format!("100 instances exact ({fasta_cases} FASTA), {corpus_nt} corpus nt total, largest query {query_nt} nt")
}

// ---- rate limiter ----

type Q = Ratio<i128>;

/// Token bucket stepped in exact rationals.
struct Bucket {
    tokens: Q,
    last: i64,
    cap: i128,
    period: i128,
}

impl Bucket {
    fn new(cap: u64, period: u64, at: i64) -> Self {
        Bucket {
            tokens: Q::from_integer(cap as i128),
            last: at,
            cap: cap as i128,
            period: period as i128,
        }
    }

    fn advance(&mut self, at: i64) {
        if at > self.last {
            let gained = Q::new((at - self.last) as i128 * self.cap, self.period);
            self.tokens = (self.tokens + gained).min(Q::from_integer(self.cap));
            self.last = at;
        }
    }

    fn wait(&self, amount: u64) -> u64 {
        if amount as i128 > self.cap {
            return u64::MAX;
        }
        let deficit = Q::from_integer(amount as i128) - self.tokens;
        if deficit <= Q::from_integer(0) {
            return 0;
        }
        (deficit * Q::from_integer(self.period) / Q::from_integer(self.cap)).ceil().to_integer() as u64
    }
}

fn rate_limiter() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let (mut allowed, mut denied) = (0u32, 0u32);
    for schedule in 0..1000 {
        let tiers: Vec<BdlTier> = BdlTier::ALL[1..].iter().copied().filter(|_| rng.gen_bool(0.7)).collect();
        let mut policy = RateLimitPolicy { tiers: BTreeMap::new() };
        for &t in &tiers {
            policy.tiers.insert(t, BucketSpec {
                capacity_records: rng.gen_range(1..200),
                capacity_bytes: rng.gen_range(1..1_000_000),
                refill_period: Millis(rng.gen_range(1..=MILLIS_PER_DAY as u64)),
            });
        }
        let mut limiter = RateLimiter::new();
        let mut oracle: BTreeMap<(usize, BdlTier), (Bucket, Bucket)> = BTreeMap::new();
        let mut t = rng.gen_range(0..1_000_000_000i64);
        for step in 0..60 {
            let tier = BdlTier::ALL[rng.gen_range(0..5)];
            let who = rng.gen_range(0..3usize);
            let records = rng.gen_range(0..50u64);
            let bytes = rng.gen_range(0..300_000u64);
            t += [0, 1, rng.gen_range(0..1000), rng.gen_range(0..MILLIS_PER_DAY / 4)][rng.gen_range(0..4)];
            let want = match policy.tiers.get(&tier) {
                None => 0,
                Some(spec) => {
                    let period = spec.refill_period.get();
                    let (r, b) = oracle.entry((who, tier)).or_insert_with(|| {
                        (Bucket::new(spec.capacity_records, period, t), Bucket::new(spec.capacity_bytes, period, t))
                    });
                    r.advance(t);
                    b.advance(t);
                    let w = r.wait(records).max(b.wait(bytes));
                    if w == 0 {
                        r.tokens -= Q::from_integer(records as i128);
                        b.tokens -= Q::from_integer(bytes as i128);
                    }
                    w
                }
            };
            let got = limiter.check(&format!("p{who}"), tier, records, bytes, Timestamp(t), &policy);
            assert_eq!(
                (got.allowed, got.retry_after),
                (want == 0, Millis(want)),
                "schedule {schedule} step {step}"
            );
            if got.allowed {
                allowed += 1;
            } else {
                denied += 1;
            }
        }
    }
    format!("1000 schedules match ({allowed} allowed, {denied} limited)")
}

// ---- anomaly ----

fn anomaly() -> String {
    let cfg = AnomalyConfig::default();
    let usual = BTreeSet::from(["GB".to_string()]);
    let obs = |day: i64, bytes: u64| AccessObservation {
        principal: "p".into(),
        at: Timestamp(day * MILLIS_PER_DAY + 9 * 3_600_000),
        bytes,
        origin_country: "GB".into(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = 50u64 << 20;
    let volumes: Vec<u64> = (0..30).map(|_| base + rng.gen_range(0..(1u64 << 20))).collect();
    let n = volumes.len() as f64;
    let mean = volumes.iter().map(|&v| v as f64).sum::<f64>() / n;
    let sd = (volumes.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let burst = (mean + 10.0 * sd).ceil() as u64;

    let mut b = AnomalyBaseline::new("p");
    let mut flags = Vec::new();
    for (day, &v) in volumes.iter().enumerate() {
        flags.extend(observe_and_flag(&mut b, &obs(day as i64, v), &usual, &cfg));
    }
    flags.extend(observe_and_flag(&mut b, &obs(30, burst), &usual, &cfg));
    for day in 31..40 {
        flags.extend(observe_and_flag(&mut b, &obs(day, volumes[day as usize - 30]), &usual, &cfg));
    }
    assert_eq!(flags.len(), 1, "{flags:?}");
    assert_eq!((flags[0].kind, flags[0].at.day()), (AnomalyKind::VolumeSurge, 30));

    let mut cold = 0;
    for days in 0..cfg.cold_start_days as i64 {
        let mut b = AnomalyBaseline::new("p");
        for day in 0..days {
            cold += observe_and_flag(&mut b, &obs(day, base), &usual, &cfg).len();
        }
        cold += observe_and_flag(&mut b, &obs(days, base * 1000), &usual, &cfg).len();
        for _ in 0..20 {
            cold += observe_and_flag(&mut b, &obs(days, base), &usual, &cfg).len();
        }
    }
    assert_eq!(cold, 0, "cold-start windows flagged");
    format!("one VolumeSurge on day 30 (z = {:.2}); no flags across cold-start windows", flags[0].z_value.unwrap())
}

// ---- end-to-end over HTTP ----

fn exfiltration() -> String {
    let fx = Fixture::new();
    let shared = Arc::new(Mutex::new(fx.open()));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}/api/v1", listener.local_addr().unwrap());
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(gatekeeper::http::serve(shared.clone(), listener, async {
            let _ = stopped.await;
        }));
        let client = reqwest::Client::new();
        let post = |path: &str, token: &str, body: Value| {
            client
                .post(format!("{base}{path}"))
                .bearer_auth(token)
                .header(gatekeeper::http::SECOND_FACTOR_HEADER, ALICE_CODE)
                .json(&body)
                .send()
        };

        let r = post("/datasets", ALICE, json!({
            "id": "h3",
            "descriptor": bdl3(),
            "fasta": fasta(40, 20, 120),
            "provenance": "clinical isolates, batch 7",
        }))
        .await
        .unwrap();
        assert_eq!(r.status(), 201);
        let view: Value = r.json().await.unwrap();
        assert_eq!(view["tier"], 3);

        let r = post("/datasets/h3/records:request", ALICE, json!({
            "action": "ExportRecords",
            "project_id": "vax",
            "intent_statement": "vaccine antigen design",
            "origin_country": "GB",
            "requested_records": 5,
        }))
        .await
        .unwrap();
        assert_eq!(r.status(), 403);
        let body: Value = r.json().await.unwrap();
        assert_eq!(body["error_code"], "ExportForbiddenTreOnly");

        let decoy = shared.lock().unwrap().decoys("h3").remove(0);
        let r = post("/egress-requests", ALICE, json!({
            "project": "vax",
            "artifact_kind": "TextSummary",
            "content": format!("supplementary sequence:\n{}\n", decoy.as_str()),
            "declared_provenance": "analysis notes",
        }))
        .await
        .unwrap();
        assert_eq!(r.status(), 403);
        let body: Value = r.json().await.unwrap();
        assert_eq!(body["verdict"]["outcome"], "Blocked");
        assert_eq!(body["verdict"]["reason"], "HoneytokenHit");

        let r = client
            .get(format!("{base}/audit?action=HoneytokenTripped"))
            .bearer_auth(STEWARD)
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), 200);
        let audit: Value = r.json().await.unwrap();
        assert_eq!(audit["total"], 1);
        assert_eq!(audit["entries"][0]["detail"]["planted_in"], "h3");
        assert_eq!(audit["entries"][0]["actor"], "alice");

        let r = post("/egress-requests", ALICE, json!({
            "project": "vax",
            "artifact_kind": "AggregateStats",
            "content": "isolates=20 mean_len=363 gc=0.49",
            "declared_provenance": "summary of h3",
            "datasets": ["h3"],
        }))
        .await
        .unwrap();
        assert_eq!(r.status(), 200);
        let body: Value = r.json().await.unwrap();
        assert_eq!(body["verdict"]["outcome"], "Allowed");

        let r = client.get(format!("{base}/audit:verify")).bearer_auth(STEWARD).send().await.unwrap();
        let v: Value = r.json().await.unwrap();
        assert_eq!(v["ok"], true);

        stop.send(()).unwrap();
        server.await.unwrap().unwrap();
    });
    "BDL-3 export 403; honeytoken egress Blocked with audit entry; aggregate Allowed".into()
}

// ---- governance ----

fn governance() -> String {
    let fx = Fixture::new();
    let mut gw = fx.open();
    gw.register_dataset(Some(ALICE), register("para", bdl2(), fasta(41, 4, 80))).unwrap();
    let cr = gw
        .submit_classification(Some(ALICE), SubmitClassification {
            descriptor: None,
            dataset_id: Some("para".into()),
        })
        .unwrap();
    assert_eq!(cr.status_at(Timestamp(cr.due_at.0 - 1)), RequestStatus::Pending);
    fx.clock.set(cr.due_at);
    gw.tick().unwrap();
    assert_eq!(gw.state().classification_requests[&cr.id].status, RequestStatus::Pending);
    fx.clock.advance(Millis(1));
    gw.tick().unwrap();
    assert_eq!(gw.state().classification_requests[&cr.id].status, RequestStatus::Overdue);

    let up = ClassificationDecision {
        tier: Some(BdlTier::BDL3),
        reason: Some("annotations cover human receptor binding".into()),
    };
    let decided = gw.decide_classification(Some(STEWARD), &cr.id, up).unwrap();
    assert!(decided.late);
    assert_eq!(gw.state().datasets["para"].tier, BdlTier::BDL3);

    let empty = FileAppeal {
        classification_request: cr.id.clone(),
        grounds: " ".into(),
    };
    assert!(gw.file_appeal(Some(ALICE), empty).is_err());
    let appeal = gw
        .file_appeal(Some(ALICE), FileAppeal {
            classification_request: cr.id.clone(),
            grounds: "annotations are from an attenuated strain".into(),
        })
        .unwrap();
    let step = |decision, new_tier| AppealDecisionBody {
        decision,
        new_tier,
        note: "reviewed".into(),
    };
    let mut rejected = 0;
    for illegal in [step(AppealStep::Upheld, None), step(AppealStep::Overturned, Some(BdlTier::BDL2))] {
        assert_eq!(gw.decide_appeal(Some(STEWARD), &appeal.id, illegal).unwrap_err().code(), "IllegalTransition");
        rejected += 1;
    }
    assert_eq!(gw.decide_appeal(Some(ALICE), &appeal.id, step(AppealStep::StartReview, None)).unwrap_err().status(), 403);
    gw.decide_appeal(Some(STEWARD), &appeal.id, step(AppealStep::StartReview, None)).unwrap();
    assert_eq!(gw.decide_appeal(Some(STEWARD), &appeal.id, step(AppealStep::StartReview, None)).unwrap_err().code(), "IllegalTransition");
    rejected += 1;
    assert_eq!(gw.decide_appeal(Some(STEWARD), &appeal.id, step(AppealStep::Overturned, None)).unwrap_err().code(), "MissingNewTier");
    rejected += 1;
    fx.clock.advance(Millis(60_000));
    let done = gw.decide_appeal(Some(STEWARD), &appeal.id, step(AppealStep::Overturned, Some(BdlTier::BDL2))).unwrap();
    assert_eq!(done.status, AppealStatus::Overturned);
    for again in [step(AppealStep::Upheld, None), step(AppealStep::StartReview, None)] {
        assert_eq!(gw.decide_appeal(Some(STEWARD), &appeal.id, again).unwrap_err().code(), "IllegalTransition");
        rejected += 1;
    }
    assert_eq!(gw.state().datasets["para"].tier, BdlTier::BDL2);

    let trail: Vec<AuditAction> = gw
        .audit_query(Some(STEWARD), &ProvenanceQuery::resource(appeal.id.clone()))
        .unwrap()
        .iter()
        .map(|e| e.action)
        .collect();
    assert_eq!(trail, [AuditAction::AppealFiled, AuditAction::AppealFiled, AuditAction::AppealDecided]);
    let tiers: Vec<u64> = gw
        .audit_query(Some(STEWARD), &ProvenanceQuery::default())
        .unwrap()
        .iter()
        .filter(|e| e.detail["dataset"] == "para")
        .filter_map(|e| e.detail["tier"].as_u64())
        .collect();
    assert_eq!(tiers.first(), Some(&2));
    assert_eq!(tiers.last(), Some(&2));
    assert!(tiers.contains(&3));
    let replay = gatekeeper::store::replay_audit(gw.chain().entries());
    assert_eq!(replay.tiers["para"], BdlTier::BDL2);
    assert!(gw.audit_verify(Some(STEWARD)).unwrap().ok);
    format!("Overdue at due_at + 1 ms; {rejected} illegal appeal steps rejected; tier trail {tiers:?}")
}
