//! Decoy coding sequences that identify themselves when they resurface.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{capacity, embed, extract, Bits, Namespace, WatermarkError, WatermarkKey, WatermarkPayload};
use crate::seqio::{code, kmers, CodingSequence, KmerSet, NucleotideSequence, SeqError};
use crate::time::Timestamp;

pub const MIN_DECOY_CODONS: usize = 50;
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;
const MAX_ATTEMPTS: usize = 64;
const PROFILE_TOLERANCE: f64 = 1e-6;

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Codon usage: per-codon frequencies normalized within each synonymous
/// family (stops included), plus amino-acid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CodonUsage {
    codon_freq: [f64; 64],
    amino_weights: [f64; 20],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HoneytokenError {
    #[error("codon usage profile is invalid: {0}")]
    ProfileInvalid(String),
    #[error("decoy of {0} codons is shorter than the {MIN_DECOY_CODONS}-codon minimum")]
    TooShort(usize),
    #[error("decoy cannot carry a {needed}-bit token id (capacity {available})")]
    CapacityTooSmall { needed: usize, available: usize },
    #[error("could not sample a decoy absent from the protected corpus")]
    CorpusCollision,
    #[error("token id {0:?} is already registered")]
    DuplicateToken(String),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error(transparent)]
    Sequence(#[from] SeqError),
}

impl CodonUsage {
    /// Uniform codon choice within each family, uniform amino acids.
    pub fn uniform() -> Self {
        let mut codon_freq = [0.0; 64];
        for (i, f) in codon_freq.iter_mut().enumerate() {
            *f = 1.0 / code::degeneracy(i) as f64;
        }
        CodonUsage {
            codon_freq,
            amino_weights: [1.0 / 20.0; 20],
        }
    }

    /// Builds a profile from observed codon counts. Families with no
    /// observations fall back to uniform.
    pub fn from_counts(counts: &[u64; 64]) -> Self {
        let mut usage = CodonUsage::uniform();
        let family_total = |aa: u8| -> u64 { code::synonymous_family(aa).map(|i| counts[i]).sum() };
        for (i, &n) in counts.iter().enumerate() {
            let total = family_total(code::amino_acid(i));
            if total > 0 {
                usage.codon_freq[i] = n as f64 / total as f64;
            }
        }
        let aa_totals: Vec<u64> = code::AMINO_ACIDS.iter().map(|&aa| family_total(aa)).collect();
        let grand: u64 = aa_totals.iter().sum();
        if grand > 0 {
            for (w, t) in usage.amino_weights.iter_mut().zip(aa_totals) {
                *w = t as f64 / grand as f64;
            }
        }
        usage
    }

    /// Counts codons across coding sequences.
    pub fn observe<'a>(seqs: impl IntoIterator<Item = &'a CodingSequence>) -> [u64; 64] {
        let mut counts = [0u64; 64];
        for cds in seqs {
            for i in cds.codon_indices() {
                counts[i] += 1;
            }
        }
        counts
    }

    pub fn from_parts(codon_freq: [f64; 64], amino_weights: [f64; 20]) -> Result<Self, HoneytokenError> {
        let usage = CodonUsage {
            codon_freq,
            amino_weights,
        };
        usage.validate()?;
        Ok(usage)
    }

    pub fn validate(&self) -> Result<(), HoneytokenError> {
        let bad = |msg: String| Err(HoneytokenError::ProfileInvalid(msg));
        if self.codon_freq.iter().chain(&self.amino_weights).any(|f| !f.is_finite() || *f < 0.0) {
            return bad("frequencies must be finite and nonnegative".into());
        }
        for aa in code::AMINO_ACIDS.iter().copied().chain([code::STOP]) {
            let sum: f64 = code::synonymous_family(aa).map(|i| self.codon_freq[i]).sum();
            if (sum - 1.0).abs() > PROFILE_TOLERANCE {
                return bad(alloc::format!("family {} sums to {sum}", aa as char));
            }
        }
        let total: f64 = self.amino_weights.iter().sum();
        if (total - 1.0).abs() > PROFILE_TOLERANCE {
            return bad(alloc::format!("amino-acid weights sum to {total}"));
        }
        Ok(())
    }

    fn sample_family<R: RngCore>(&self, aa: u8, rng: &mut R) -> usize {
        let u = unit(rng);
        let mut acc = 0.0;
        let mut last = 0;
        for i in code::synonymous_family(aa) {
            acc += self.codon_freq[i];
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }

    fn sample_amino<R: RngCore>(&self, rng: &mut R) -> u8 {
        let u = unit(rng);
        let mut acc = 0.0;
        for (&aa, &w) in code::AMINO_ACIDS.iter().zip(&self.amino_weights) {
            acc += w;
            if u < acc {
                return aa;
            }
        }
        code::AMINO_ACIDS[19]
    }
}

fn unit<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Registry entry for a planted decoy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoneytokenRecord {
    pub token_id: String,
    pub sequence_hash: [u8; 32],
    pub kmer_set: KmerSet,
    pub created_at: Timestamp,
    pub planted_in: String,
}

/// Persisted form of a [`HoneytokenRecord`]; k-mers are summarized by digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoneytokenRow {
    pub token_id: String,
    pub sha256: String,
    pub k: usize,
    pub kmers_digest: String,
    pub planted_in: String,
    pub created_at: Timestamp,
}

impl HoneytokenRecord {
    pub fn new(
        token_id: impl Into<String>,
        decoy: &NucleotideSequence,
        k: usize,
        planted_in: impl Into<String>,
        created_at: Timestamp,
    ) -> Result<Self, SeqError> {
        Ok(HoneytokenRecord {
            token_id: token_id.into(),
            sequence_hash: sha256(decoy.bases()),
            kmer_set: kmers(decoy, k)?,
            created_at,
            planted_in: planted_in.into(),
        })
    }

    pub fn kmers_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.kmer_set.k() as u64).to_le_bytes());
        for kmer in self.kmer_set.packed() {
            h.update(kmer.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn to_row(&self) -> HoneytokenRow {
        HoneytokenRow {
            token_id: self.token_id.clone(),
            sha256: hex::encode(self.sequence_hash),
            k: self.kmer_set.k(),
            kmers_digest: hex::encode(self.kmers_digest()),
            planted_in: self.planted_in.clone(),
            created_at: self.created_at,
        }
    }

    /// Rebuilds a record from its row and the decoy it describes; the hash
    /// and k-mer digest must match.
    pub fn from_row(row: &HoneytokenRow, decoy: &NucleotideSequence) -> Result<Self, HoneytokenError> {
        let rec = HoneytokenRecord::new(row.token_id.clone(), decoy, row.k, row.planted_in.clone(), row.created_at)?;
        if hex::encode(rec.sequence_hash) != row.sha256 || hex::encode(rec.kmers_digest()) != row.kmers_digest {
            return Err(HoneytokenError::ProfileInvalid(alloc::format!(
                "decoy does not match registry row {}",
                row.token_id
            )));
        }
        Ok(rec)
    }
}

#[derive(Debug, Clone, Default)]
pub struct HoneytokenRegistry {
    records: BTreeMap<String, HoneytokenRecord>,
    by_hash: BTreeMap<[u8; 32], String>,
}

impl HoneytokenRegistry {
    pub fn new() -> Self {
        HoneytokenRegistry::default()
    }

    pub fn insert(&mut self, record: HoneytokenRecord) -> Result<(), HoneytokenError> {
        if self.records.contains_key(&record.token_id) {
            return Err(HoneytokenError::DuplicateToken(record.token_id));
        }
        self.by_hash.insert(record.sequence_hash, record.token_id.clone());
        self.records.insert(record.token_id.clone(), record);
        Ok(())
    }

    pub fn get(&self, token_id: &str) -> Option<&HoneytokenRecord> {
        self.records.get(token_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HoneytokenRecord> {
        self.records.values()
    }
}

pub struct DecoyRequest<'a> {
    pub token_id: &'a str,
    pub length_codons: usize,
    pub planted_in: &'a str,
    pub created_at: Timestamp,
    /// Screening k for the registered k-mer set.
    pub k: usize,
}

/// Samples a decoy CDS (start codon, sense codons from `profile`, stop),
/// marks it with the token id in the decoy namespace, and resamples until
/// its hash is absent from `corpus_hashes`.
pub fn generate_honeytoken<R: RngCore>(
    profile: &CodonUsage,
    request: &DecoyRequest<'_>,
    key: &WatermarkKey,
    corpus_hashes: &BTreeSet<[u8; 32]>,
    rng: &mut R,
) -> Result<(CodingSequence, HoneytokenRecord), HoneytokenError> {
    profile.validate()?;
    if request.length_codons < MIN_DECOY_CODONS {
        return Err(HoneytokenError::TooShort(request.length_codons));
    }
    let payload = WatermarkPayload::from_bytes(Namespace::Decoy, request.token_id.as_bytes())?;
    let needed = payload.embedded_len();
    let mut best_capacity = 0;

    for _ in 0..MAX_ATTEMPTS {
        let mut bases = Vec::with_capacity(request.length_codons * 3);
        bases.extend_from_slice(b"ATG");
        for _ in 0..request.length_codons - 2 {
            let aa = profile.sample_amino(rng);
            bases.extend_from_slice(&code::codon_from_index(profile.sample_family(aa, rng)));
        }
        bases.extend_from_slice(&code::codon_from_index(profile.sample_family(code::STOP, rng)));

        let draft = CodingSequence::new(NucleotideSequence::new(request.token_id, "", bases)?)?;
        let available = capacity(&draft);
        best_capacity = best_capacity.max(available);
        if available < needed {
            continue;
        }
        let decoy = embed(&draft, &payload, key)?;
        if corpus_hashes.contains(&sha256(decoy.bases())) {
            continue;
        }
        let record = HoneytokenRecord::new(
            request.token_id,
            decoy.sequence(),
            request.k,
            request.planted_in,
            request.created_at,
        )?;
        return Ok((decoy, record));
    }
    if best_capacity < needed {
        Err(HoneytokenError::CapacityTooSmall {
            needed,
            available: best_capacity,
        })
    } else {
        Err(HoneytokenError::CorpusCollision)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectionMethod {
    ExactHash,
    KmerOverlap,
    PayloadExtract,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoneytokenHit {
    pub token_id: String,
    pub method: DetectionMethod,
}

/// Checks content for a planted decoy: exact digest, then k-mer overlap of at
/// least `overlap_threshold` of a token's k-mers, then decoy-payload
/// extraction from every ATG-initiated open reading frame.
pub fn detect_honeytoken(
    content: &NucleotideSequence,
    registry: &HoneytokenRegistry,
    key: &WatermarkKey,
    overlap_threshold: f64,
) -> Option<HoneytokenHit> {
    if registry.is_empty() {
        return None;
    }
    if let Some(id) = registry.by_hash.get(&sha256(content.bases())) {
        return Some(HoneytokenHit {
            token_id: id.clone(),
            method: DetectionMethod::ExactHash,
        });
    }

    let mut content_kmers: BTreeMap<usize, KmerSet> = BTreeMap::new();
    for rec in registry.iter() {
        let k = rec.kmer_set.k();
        if content.len() < k {
            continue;
        }
        let set = content_kmers
            .entry(k)
            .or_insert_with(|| kmers(content, k).expect("length checked"));
        if rec.kmer_set.fraction_in(set) >= overlap_threshold {
            return Some(HoneytokenHit {
                token_id: rec.token_id.clone(),
                method: DetectionMethod::KmerOverlap,
            });
        }
    }

    let lengths: BTreeSet<usize> = registry.records.keys().map(|id| id.len() * 8).collect();
    for orf in open_reading_frames(content.bases()) {
        let Ok(cds) = CodingSequence::from_bases(orf) else { continue };
        for &len in &lengths {
            if let Ok(p) = extract(&cds, key, len) {
                if p.namespace != Namespace::Decoy {
                    continue;
                }
                let id = String::from_utf8(p.bits.to_bytes()).unwrap_or_default();
                if registry.records.contains_key(&id) {
                    return Some(HoneytokenHit {
                        token_id: id,
                        method: DetectionMethod::PayloadExtract,
                    });
                }
            }
        }
    }
    None
}

/// Every in-frame stretch from an ATG to the next stop codon (inclusive),
/// across the three forward frames.
fn open_reading_frames(bases: &[u8]) -> impl Iterator<Item = &[u8]> {
    (0..3).flat_map(move |frame| {
        let codons: Vec<usize> = bases
            .get(frame..)
            .unwrap_or_default()
            .chunks_exact(3)
            .filter_map(code::codon_index)
            .collect();
        let mut spans = Vec::new();
        let mut next_stop = codons.len();
        for i in (0..codons.len()).rev() {
            if code::is_stop(codons[i]) {
                next_stop = i;
            } else if codons[i] == ATG_INDEX && next_stop < codons.len() {
                spans.push((frame + 3 * i, frame + 3 * (next_stop + 1)));
            }
        }
        spans.into_iter().map(move |(s, e)| &bases[s..e])
    })
}

const ATG_INDEX: usize = 14;

/// Decoy payload bits for a token id.
pub fn token_bits(token_id: &str) -> Bits {
    Bits::from_bytes(token_id.as_bytes())
}

impl core::fmt::Display for DetectionMethod {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let s = match self {
            DetectionMethod::ExactHash => "exact-hash",
            DetectionMethod::KmerOverlap => "kmer-overlap",
            DetectionMethod::PayloadExtract => "payload-extract",
        };
        f.write_str(s)
    }
}

impl HoneytokenHit {
    pub fn describe(&self) -> String {
        alloc::format!("{} via {}", self.token_id, self.method)
    }
}
