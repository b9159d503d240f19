//! Keyed watermarks carried by synonymous codon choice.
//!
//! Every codon whose amino acid has `d > 1` synonymous codons is a site that
//! carries `floor(log2 d)` bits. At each site the synonymous family is put in
//! a key-dependent order (derived from the key, the codon position and the
//! amino acid) and the codon at rank `v` encodes the bit value `v`. Ranks at
//! or above `2^bits` (the spare codons of 3- and 6-fold families) are never
//! written and mark the sequence as not carrying a valid mark.
//!
//! The embedded stream is `payload ∥ crc16(namespace ∥ payload) ∥ 0…0`, filling
//! the whole capacity, so every degenerate site is rewritten and any
//! synonymous edit to a marked sequence breaks extraction.

pub mod honeytoken;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::seqio::{code, CodingSequence, SeqError};

pub const MAX_PAYLOAD_BITS: usize = 240;
pub const CRC_BITS: usize = 16;

const ORDER_DOMAIN: &[u8] = b"gatekeeper/watermark-order/v1";

/// Steward-held secret used to order synonymous codons.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatermarkKey {
    pub key_id: String,
    #[serde(with = "hex_key")]
    pub key_bytes: [u8; 32],
}

impl fmt::Debug for WatermarkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WatermarkKey")
            .field("key_id", &self.key_id)
            .finish_non_exhaustive()
    }
}

impl WatermarkKey {
    pub fn new(key_id: impl Into<String>, key_bytes: [u8; 32]) -> Self {
        WatermarkKey {
            key_id: key_id.into(),
            key_bytes,
        }
    }

    pub fn generate<R: rand_core::RngCore + rand_core::CryptoRng>(
        key_id: impl Into<String>,
        rng: &mut R,
    ) -> Self {
        let mut key_bytes = [0u8; 32];
        rng.fill_bytes(&mut key_bytes);
        WatermarkKey::new(key_id, key_bytes)
    }
}

mod hex_key {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(key: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(key))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = alloc::string::String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(text.trim(), &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Namespace {
    Export,
    Decoy,
}

impl Namespace {
    fn tag(self) -> u8 {
        match self {
            Namespace::Export => b'E',
            Namespace::Decoy => b'D',
        }
    }
}

/// A bit string, most significant bit of each byte first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Bits(Vec<bool>);

impl Bits {
    pub fn new(bits: Vec<bool>) -> Self {
        Bits(bits)
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        Bits(
            bytes
                .iter()
                .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1 == 1))
                .collect(),
        )
    }

    pub fn from_hex(text: &str) -> Result<Self, hex::FromHexError> {
        Ok(Bits::from_bytes(&hex::decode(text.trim())?))
    }

    /// Packs into bytes; a trailing partial byte is zero-filled.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i)))
            })
            .collect()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WatermarkPayload {
    pub namespace: Namespace,
    pub bits: Bits,
}

impl WatermarkPayload {
    pub fn new(namespace: Namespace, bits: Bits) -> Result<Self, WatermarkError> {
        if bits.len() > MAX_PAYLOAD_BITS {
            return Err(WatermarkError::PayloadTooLong(bits.len()));
        }
        Ok(WatermarkPayload { namespace, bits })
    }

    pub fn from_bytes(namespace: Namespace, bytes: &[u8]) -> Result<Self, WatermarkError> {
        WatermarkPayload::new(namespace, Bits::from_bytes(bytes))
    }

    /// Bits needed in the target sequence, including the CRC.
    pub fn embedded_len(&self) -> usize {
        self.bits.len() + CRC_BITS
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WatermarkError {
    #[error("sequence can carry {available} bits but {needed} are required")]
    InsufficientCapacity { needed: usize, available: usize },
    #[error("payload of {0} bits exceeds the {MAX_PAYLOAD_BITS}-bit limit")]
    PayloadTooLong(usize),
    #[error("watermark integrity check failed")]
    CrcMismatch,
    #[error("invalid coding sequence: {0}")]
    InvalidCodingSequence(#[from] SeqError),
}

/// CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF) over a bit sequence.
pub fn crc16_bits(bits: impl IntoIterator<Item = bool>) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for bit in bits {
        let top = (crc >> 15) & 1 == 1;
        crc <<= 1;
        if top != bit {
            crc ^= 0x1021;
        }
    }
    crc
}

fn payload_crc(namespace: Namespace, bits: &[bool]) -> u16 {
    let tag = namespace.tag();
    crc16_bits(
        (0..8)
            .rev()
            .map(move |i| (tag >> i) & 1 == 1)
            .chain(bits.iter().copied()),
    )
}

/// Bits carried by one codon: `floor(log2 d)` for a sense codon with
/// degeneracy `d`, zero for stops.
pub fn site_bits(codon_index: usize) -> usize {
    if code::is_stop(codon_index) {
        return 0;
    }
    code::degeneracy(codon_index).ilog2() as usize
}

/// Total bits the sequence can carry.
pub fn capacity(cds: &CodingSequence) -> usize {
    cds.codon_indices().map(site_bits).sum()
}

/// Synonymous codons of `aa` in the keyed order for codon position `site`.
fn keyed_order(key: &WatermarkKey, site: usize, aa: u8) -> Vec<usize> {
    let mut family: Vec<usize> = code::synonymous_family(aa).collect();
    let digest = Sha256::new()
        .chain_update(ORDER_DOMAIN)
        .chain_update(key.key_bytes)
        .chain_update((site as u64).to_le_bytes())
        .chain_update([aa])
        .finalize();
    // Fisher-Yates driven by successive 32-bit words of the digest.
    for (word, j) in (1..family.len()).rev().enumerate() {
        let w = &digest[4 * word..4 * word + 4];
        let r = u32::from_le_bytes([w[0], w[1], w[2], w[3]]) as usize % (j + 1);
        family.swap(j, r);
    }
    family
}

/// Embeds `payload` into the synonymous codon choices of `cds`.
pub fn embed(
    cds: &CodingSequence,
    payload: &WatermarkPayload,
    key: &WatermarkKey,
) -> Result<CodingSequence, WatermarkError> {
    if payload.bits.len() > MAX_PAYLOAD_BITS {
        return Err(WatermarkError::PayloadTooLong(payload.bits.len()));
    }
    let available = capacity(cds);
    let needed = payload.embedded_len();
    if needed > available {
        return Err(WatermarkError::InsufficientCapacity { needed, available });
    }

    let crc = payload_crc(payload.namespace, payload.bits.as_slice());
    let mut stream = payload
        .bits
        .as_slice()
        .iter()
        .copied()
        .chain((0..CRC_BITS).rev().map(|i| (crc >> i) & 1 == 1))
        .chain(core::iter::repeat(false));

    let mut out = Vec::with_capacity(cds.bases().len());
    for (site, idx) in cds.codon_indices().enumerate() {
        let bits = site_bits(idx);
        if bits == 0 {
            out.extend_from_slice(&code::codon_from_index(idx));
            continue;
        }
        let rank = (0..bits).fold(0usize, |acc, _| (acc << 1) | usize::from(stream.next() == Some(true)));
        let order = keyed_order(key, site, code::amino_acid(idx));
        out.extend_from_slice(&code::codon_from_index(order[rank]));
    }
    Ok(cds.with_bases(out)?)
}

/// Recovers a payload of `expected_len` bits; fails with `CrcMismatch` when
/// the key is wrong, the sequence was edited, or it carries no mark.
pub fn extract(
    cds: &CodingSequence,
    key: &WatermarkKey,
    expected_len: usize,
) -> Result<WatermarkPayload, WatermarkError> {
    if expected_len > MAX_PAYLOAD_BITS {
        return Err(WatermarkError::PayloadTooLong(expected_len));
    }
    let available = capacity(cds);
    let needed = expected_len + CRC_BITS;
    if needed > available {
        return Err(WatermarkError::InsufficientCapacity { needed, available });
    }
    let stream = read_stream(cds, key)?;
    decode_stream(&stream, expected_len)
}

fn read_stream(cds: &CodingSequence, key: &WatermarkKey) -> Result<Vec<bool>, WatermarkError> {
    let mut stream = Vec::new();
    for (site, idx) in cds.codon_indices().enumerate() {
        let bits = site_bits(idx);
        if bits == 0 {
            continue;
        }
        let order = keyed_order(key, site, code::amino_acid(idx));
        let rank = order
            .iter()
            .position(|&c| c == idx)
            .expect("codon is in its own synonymous family");
        if rank >= 1 << bits {
            return Err(WatermarkError::CrcMismatch);
        }
        stream.extend((0..bits).rev().map(|i| (rank >> i) & 1 == 1));
    }
    Ok(stream)
}

fn decode_stream(stream: &[bool], expected_len: usize) -> Result<WatermarkPayload, WatermarkError> {
    let (bits, rest) = stream.split_at(expected_len);
    let (crc_bits, padding) = rest.split_at(CRC_BITS);
    if padding.iter().any(|&b| b) {
        return Err(WatermarkError::CrcMismatch);
    }
    let stored = crc_bits.iter().fold(0u16, |acc, &b| (acc << 1) | u16::from(b));
    [Namespace::Export, Namespace::Decoy]
        .into_iter()
        .find(|&ns| payload_crc(ns, bits) == stored)
        .map(|namespace| WatermarkPayload {
            namespace,
            bits: Bits::new(bits.to_vec()),
        })
        .ok_or(WatermarkError::CrcMismatch)
}

/// Tries every whole-byte payload length from 0 up to the limit and returns
/// the shortest that verifies.
pub fn extract_any_length(
    cds: &CodingSequence,
    key: &WatermarkKey,
) -> Result<WatermarkPayload, WatermarkError> {
    let available = capacity(cds);
    if available < CRC_BITS {
        return Err(WatermarkError::InsufficientCapacity {
            needed: CRC_BITS,
            available,
        });
    }
    let stream = read_stream(cds, key)?;
    (0..=MAX_PAYLOAD_BITS)
        .step_by(8)
        .take_while(|len| len + CRC_BITS <= available)
        .find_map(|len| decode_stream(&stream, len).ok())
        .ok_or(WatermarkError::CrcMismatch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqio::translate;

    fn key(b: u8) -> WatermarkKey {
        WatermarkKey::new("k", [b; 32])
    }

    #[test]
    fn crc_check_value() {
        // Standard check value for CRC-16/CCITT-FALSE over "123456789".
        assert_eq!(crc16_bits(Bits::from_bytes(b"123456789").0), 0x29B1);
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(capacity(&CodingSequence::from_bases(b"ATGTGG").unwrap()), 0);
        assert_eq!(capacity(&CodingSequence::from_bases(b"GGTGGC").unwrap()), 4);
        // Leu (6-fold) 2, Ile (3-fold) 1, Phe (2-fold) 1, stop 0
        assert_eq!(capacity(&CodingSequence::from_bases(b"CTGATTTTTTAA").unwrap()), 4);
    }

    #[test]
    fn keyed_order_is_a_permutation() {
        for aa in code::AMINO_ACIDS.iter().copied() {
            for site in 0..20 {
                let mut order = keyed_order(&key(3), site, aa);
                order.sort_unstable();
                let family: Vec<usize> = code::synonymous_family(aa).collect();
                assert_eq!(order, family);
            }
        }
    }

    #[test]
    fn empty_payload_round_trip() {
        let cds = CodingSequence::from_bases(&b"GGTCTGGCAAAAGTT".repeat(3)).unwrap();
        let p = WatermarkPayload::new(Namespace::Export, Bits::default()).unwrap();
        let marked = embed(&cds, &p, &key(1)).unwrap();
        assert_eq!(translate(&marked), translate(&cds));
        assert_eq!(extract(&marked, &key(1), 0).unwrap(), p);
        assert_eq!(embed(&marked, &p, &key(1)).unwrap(), marked);
    }

    #[test]
    fn round_trip_and_namespace() {
        let cds = CodingSequence::from_bases(&b"GGTCTGGCAAAAGTTCCC".repeat(10)).unwrap();
        let p = WatermarkPayload::from_bytes(Namespace::Decoy, b"ht-7").unwrap();
        let marked = embed(&cds, &p, &key(9)).unwrap();
        assert_eq!(extract(&marked, &key(9), 32).unwrap(), p);
        assert_eq!(extract_any_length(&marked, &key(9)).unwrap(), p);
        assert_eq!(extract(&marked, &key(8), 32), Err(WatermarkError::CrcMismatch));
    }

    #[test]
    fn capacity_errors() {
        let cds = CodingSequence::from_bases(b"ATGTGGTAA").unwrap();
        let p = WatermarkPayload::new(Namespace::Export, Bits::default()).unwrap();
        assert_eq!(
            embed(&cds, &p, &key(1)),
            Err(WatermarkError::InsufficientCapacity { needed: 16, available: 0 })
        );
        assert!(matches!(
            extract(&cds, &key(1), 0),
            Err(WatermarkError::InsufficientCapacity { .. })
        ));
        assert_eq!(
            WatermarkPayload::new(Namespace::Export, Bits::new(alloc::vec![true; 241])),
            Err(WatermarkError::PayloadTooLong(241))
        );
    }

    #[test]
    fn spare_codon_is_rejected() {
        // A 6-fold site whose codon sits at keyed rank 4 or 5 cannot come from embed.
        let k = key(4);
        let order = keyed_order(&k, 0, b'L');
        let mut bases = code::codon_from_index(order[5]).to_vec();
        bases.extend_from_slice(&b"GGT".repeat(20));
        let cds = CodingSequence::from_bases(&bases).unwrap();
        assert_eq!(extract(&cds, &k, 0), Err(WatermarkError::CrcMismatch));
    }

    #[test]
    fn bits_hex() {
        let b = Bits::from_hex("a5ff").unwrap();
        assert_eq!(b.len(), 16);
        assert_eq!(b.to_hex(), "a5ff");
        assert_eq!(Bits::new(alloc::vec![true]).to_bytes(), alloc::vec![0x80]);
    }
}
