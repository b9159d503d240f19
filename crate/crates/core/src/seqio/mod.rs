//! Nucleotide sequences: FASTA parsing, coding sequences, translation and k-mers.

pub mod code;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Default k-mer length used for screening and honeytoken detection.
pub const DEFAULT_SCREENING_K: usize = 30;
pub const MIN_K: usize = 11;
/// k-mers are packed two bits per base into a `u128`.
pub const MAX_K: usize = 64;

const FASTA_WIDTH: usize = 60;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SeqError {
    #[error("malformed FASTA at line {line}: {reason}")]
    MalformedFasta { line: usize, reason: FastaFault },
    #[error("sequence is empty")]
    Empty,
    #[error("illegal base {byte:#04x} at position {position}")]
    IllegalBase { position: usize, byte: u8 },
    #[error("coding sequence length {0} is not a multiple of three")]
    FrameLength(usize),
    #[error("internal stop codon at codon {0}")]
    InternalStop(usize),
    #[error("k = {k} exceeds sequence length {len}")]
    KTooLarge { k: usize, len: usize },
    #[error("k = {0} is outside the supported range {MIN_K}..={MAX_K}")]
    KOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FastaFault {
    BodyBeforeHeader,
    EmptyBody,
    EmptyHeader,
    IllegalCharacter(u8),
    NotUtf8,
}

impl fmt::Display for FastaFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FastaFault::BodyBeforeHeader => f.write_str("sequence data before first header"),
            FastaFault::EmptyBody => f.write_str("record has no sequence"),
            FastaFault::EmptyHeader => f.write_str("header has no identifier"),
            FastaFault::IllegalCharacter(b) => write!(f, "illegal character {:?}", *b as char),
            FastaFault::NotUtf8 => f.write_str("header is not valid UTF-8"),
        }
    }
}

/// A nonempty sequence over `ACGT`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSequence", into = "RawSequence")]
pub struct NucleotideSequence {
    id: String,
    description: String,
    bases: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct RawSequence {
    id: String,
    #[serde(default)]
    description: String,
    bases: String,
}

impl TryFrom<RawSequence> for NucleotideSequence {
    type Error = SeqError;
    fn try_from(raw: RawSequence) -> Result<Self, SeqError> {
        NucleotideSequence::new(raw.id, raw.description, raw.bases.into_bytes())
    }
}

impl From<NucleotideSequence> for RawSequence {
    fn from(seq: NucleotideSequence) -> Self {
        RawSequence {
            id: seq.id,
            description: seq.description,
            // ACGT only, always valid UTF-8
            bases: String::from_utf8(seq.bases).unwrap_or_default(),
        }
    }
}

impl NucleotideSequence {
    /// Validates `bases`; lowercase `acgt` is folded to uppercase.
    pub fn new(
        id: impl Into<String>,
        description: impl Into<String>,
        mut bases: Vec<u8>,
    ) -> Result<Self, SeqError> {
        if bases.is_empty() {
            return Err(SeqError::Empty);
        }
        for (position, b) in bases.iter_mut().enumerate() {
            b.make_ascii_uppercase();
            if code::base_index(*b).is_none() {
                return Err(SeqError::IllegalBase { position, byte: *b });
            }
        }
        Ok(NucleotideSequence {
            id: id.into(),
            description: description.into(),
            bases,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn bases(&self) -> &[u8] {
        &self.bases
    }

    pub fn as_str(&self) -> &str {
        core::str::from_utf8(&self.bases).unwrap_or("")
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn with_bases(&self, bases: Vec<u8>) -> Result<Self, SeqError> {
        NucleotideSequence::new(self.id.clone(), self.description.clone(), bases)
    }

    pub fn into_bases(self) -> Vec<u8> {
        self.bases
    }
}

/// A nucleotide sequence in reading frame with no internal stop codon.
/// A stop codon is permitted only as the final codon.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodingSequence {
    seq: NucleotideSequence,
}

impl CodingSequence {
    pub fn new(seq: NucleotideSequence) -> Result<Self, SeqError> {
        let len = seq.len();
        if !len.is_multiple_of(3) {
            return Err(SeqError::FrameLength(len));
        }
        let codons = len / 3;
        for (i, codon) in seq.bases.chunks_exact(3).enumerate() {
            let idx = code::codon_index(codon).expect("validated bases");
            if code::is_stop(idx) && i + 1 != codons {
                return Err(SeqError::InternalStop(i));
            }
        }
        Ok(CodingSequence { seq })
    }

    pub fn from_bases(bases: &[u8]) -> Result<Self, SeqError> {
        CodingSequence::new(NucleotideSequence::new("", "", bases.to_vec())?)
    }

    pub fn sequence(&self) -> &NucleotideSequence {
        &self.seq
    }

    pub fn into_sequence(self) -> NucleotideSequence {
        self.seq
    }

    pub fn bases(&self) -> &[u8] {
        self.seq.bases()
    }

    pub fn codon_count(&self) -> usize {
        self.seq.len() / 3
    }

    /// Codon indices in reading order.
    pub fn codon_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.seq
            .bases
            .chunks_exact(3)
            .map(|c| code::codon_index(c).expect("validated bases"))
    }

    /// Replaces bases while keeping id and description; revalidates.
    pub fn with_bases(&self, bases: Vec<u8>) -> Result<Self, SeqError> {
        CodingSequence::new(self.seq.with_bases(bases)?)
    }
}

/// Parses a FASTA document. Blank lines and line breaks inside bodies are
/// ignored; records keep their input order. Line numbers in errors are 1-based.
pub fn parse_fasta(document: &[u8]) -> Result<Vec<NucleotideSequence>, SeqError> {
    struct Pending {
        header_line: usize,
        id: String,
        description: String,
        bases: Vec<u8>,
    }

    fn finish(p: Pending) -> Result<NucleotideSequence, SeqError> {
        if p.bases.is_empty() {
            return Err(SeqError::MalformedFasta {
                line: p.header_line,
                reason: FastaFault::EmptyBody,
            });
        }
        Ok(NucleotideSequence {
            id: p.id,
            description: p.description,
            bases: p.bases,
        })
    }

    let mut records = Vec::new();
    let mut current: Option<Pending> = None;

    for (i, raw_line) in document.split(|&b| b == b'\n').enumerate() {
        let line_no = i + 1;
        let line = raw_line.strip_suffix(b"\r").unwrap_or(raw_line);
        if let Some(header) = line.strip_prefix(b">") {
            if let Some(p) = current.take() {
                records.push(finish(p)?);
            }
            let header = core::str::from_utf8(header).map_err(|_| SeqError::MalformedFasta {
                line: line_no,
                reason: FastaFault::NotUtf8,
            })?;
            let header = header.trim();
            let (id, description) = match header.split_once(char::is_whitespace) {
                Some((id, rest)) => (id, rest.trim()),
                None => (header, ""),
            };
            if id.is_empty() {
                return Err(SeqError::MalformedFasta {
                    line: line_no,
                    reason: FastaFault::EmptyHeader,
                });
            }
            current = Some(Pending {
                header_line: line_no,
                id: id.into(),
                description: description.into(),
                bases: Vec::new(),
            });
            continue;
        }
        let mut body = line.iter().filter(|b| !b.is_ascii_whitespace()).peekable();
        if body.peek().is_none() {
            continue;
        }
        let Some(p) = current.as_mut() else {
            return Err(SeqError::MalformedFasta {
                line: line_no,
                reason: FastaFault::BodyBeforeHeader,
            });
        };
        for &b in body {
            let upper = b.to_ascii_uppercase();
            if code::base_index(upper).is_none() {
                return Err(SeqError::MalformedFasta {
                    line: line_no,
                    reason: FastaFault::IllegalCharacter(b),
                });
            }
            p.bases.push(upper);
        }
    }
    if let Some(p) = current.take() {
        records.push(finish(p)?);
    }
    Ok(records)
}

/// Serializes records with 60-column bodies.
pub fn write_fasta(records: &[NucleotideSequence]) -> String {
    let mut out = String::new();
    for r in records {
        out.push('>');
        out.push_str(&r.id);
        if !r.description.is_empty() {
            out.push(' ');
            out.push_str(&r.description);
        }
        out.push('\n');
        for chunk in r.bases.chunks(FASTA_WIDTH) {
            out.push_str(core::str::from_utf8(chunk).unwrap_or(""));
            out.push('\n');
        }
    }
    out
}

/// Amino-acid string, one letter per codon; a trailing stop renders as `*`.
pub fn translate(cds: &CodingSequence) -> String {
    cds.codon_indices()
        .map(|i| code::amino_acid(i) as char)
        .collect()
}

/// Packs `window` (already validated `ACGT`) into two bits per base.
#[inline]
pub fn pack_kmer(window: &[u8]) -> u128 {
    window.iter().fold(0u128, |acc, &b| {
        (acc << 2) | u128::from(code::base_index(b).unwrap_or(0))
    })
}

pub fn unpack_kmer(packed: u128, k: usize) -> String {
    (0..k)
        .rev()
        .map(|i| code::BASES[((packed >> (2 * i)) & 3) as usize] as char)
        .collect()
}

/// Rolling iterator over the packed k-mers of `bases`. `bases` must be `ACGT`.
pub fn packed_kmers(bases: &[u8], k: usize) -> impl Iterator<Item = u128> + '_ {
    let mask: u128 = if k >= MAX_K { u128::MAX } else { (1u128 << (2 * k)) - 1 };
    let mut acc = 0u128;
    bases.iter().enumerate().filter_map(move |(i, &b)| {
        acc = ((acc << 2) | u128::from(code::base_index(b).unwrap_or(0))) & mask;
        (i + 1 >= k).then_some(acc)
    })
}

pub fn check_k(k: usize) -> Result<(), SeqError> {
    if (MIN_K..=MAX_K).contains(&k) {
        Ok(())
    } else {
        Err(SeqError::KOutOfRange(k))
    }
}

/// The distinct length-k substrings of a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KmerSet {
    k: usize,
    kmers: BTreeSet<u128>,
}

impl KmerSet {
    pub fn empty(k: usize) -> Result<Self, SeqError> {
        check_k(k)?;
        Ok(KmerSet {
            k,
            kmers: BTreeSet::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.kmers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kmers.is_empty()
    }

    pub fn contains_packed(&self, kmer: u128) -> bool {
        self.kmers.contains(&kmer)
    }

    /// `false` for strings of the wrong length or alphabet.
    pub fn contains(&self, kmer: &str) -> bool {
        kmer.len() == self.k
            && kmer.bytes().all(|b| code::base_index(b).is_some())
            && self.kmers.contains(&pack_kmer(kmer.as_bytes()))
    }

    pub fn packed(&self) -> impl Iterator<Item = u128> + '_ {
        self.kmers.iter().copied()
    }

    pub fn strings(&self) -> impl Iterator<Item = String> + '_ {
        self.kmers.iter().map(move |&p| unpack_kmer(p, self.k))
    }

    /// Adds all k-mers of `bases` (must be at least k long to contribute).
    pub fn extend_from(&mut self, bases: &[u8]) {
        self.kmers.extend(packed_kmers(bases, self.k));
    }

    /// Fraction of this set's members that appear in `other`. Zero when empty.
    pub fn fraction_in(&self, other: &KmerSet) -> f64 {
        if self.kmers.is_empty() || self.k != other.k {
            return 0.0;
        }
        let hits = self.kmers.iter().filter(|k| other.kmers.contains(k)).count();
        hits as f64 / self.kmers.len() as f64
    }
}

/// All distinct length-k substrings of `seq`.
pub fn kmers(seq: &NucleotideSequence, k: usize) -> Result<KmerSet, SeqError> {
    check_k(k)?;
    if k > seq.len() {
        return Err(SeqError::KTooLarge { k, len: seq.len() });
    }
    let mut set = KmerSet::empty(k)?;
    set.extend_from(seq.bases());
    Ok(set)
}
