//! The standard genetic code (NCBI translation table 1).

/// Nucleotides in code order. Codon index = 16*b0 + 4*b1 + b2.
pub const BASES: [u8; 4] = *b"ACGT";

/// Amino acid per codon index, `*` for stop.
///
/// Row layout: first base A, C, G, T; within a row second base A, C, G, T;
/// within that third base A, C, G, T.
const TABLE: &[u8; 64] = b"KNKNTTTTRSRSIIMIQHQHPPPPRRRRLLLLEDEDAAAAGGGGVVVV*Y*YSSSS*CWCLFLF";

pub const STOP: u8 = b'*';

/// Two-bit code for a base, `None` for anything outside `ACGT`.
#[inline]
pub fn base_index(base: u8) -> Option<u8> {
    match base {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        _ => None,
    }
}

#[inline]
pub fn codon_index(codon: &[u8]) -> Option<usize> {
    let a = base_index(*codon.first()?)?;
    let b = base_index(*codon.get(1)?)?;
    let c = base_index(*codon.get(2)?)?;
    Some(16 * a as usize + 4 * b as usize + c as usize)
}

pub fn codon_from_index(index: usize) -> [u8; 3] {
    [BASES[index / 16], BASES[(index / 4) % 4], BASES[index % 4]]
}

/// Amino acid (or `*`) encoded by a codon index.
#[inline]
pub fn amino_acid(index: usize) -> u8 {
    TABLE[index]
}

pub fn translate_codon(codon: &[u8]) -> Option<u8> {
    codon_index(codon).map(amino_acid)
}

#[inline]
pub fn is_stop(index: usize) -> bool {
    TABLE[index] == STOP
}

/// Codon indices encoding `aa`, in ascending index (lexicographic) order.
pub fn synonymous_family(aa: u8) -> impl Iterator<Item = usize> {
    (0..64).filter(move |&i| TABLE[i] == aa)
}

/// Number of codons encoding the same amino acid as `index`.
pub fn degeneracy(index: usize) -> usize {
    let aa = TABLE[index];
    TABLE.iter().filter(|&&x| x == aa).count()
}

/// The 20 standard amino acids in alphabetical one-letter order.
pub const AMINO_ACIDS: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_sizes_match_standard_code() {
        let sizes: alloc::vec::Vec<(u8, usize)> = AMINO_ACIDS
            .iter()
            .map(|&aa| (aa, synonymous_family(aa).count()))
            .collect();
        for (aa, n) in sizes {
            let expected = match aa {
                b'M' | b'W' => 1,
                b'I' => 3,
                b'L' | b'S' | b'R' => 6,
                b'V' | b'P' | b'T' | b'A' | b'G' => 4,
                _ => 2,
            };
            assert_eq!(n, expected, "amino acid {}", aa as char);
        }
        assert_eq!(synonymous_family(STOP).count(), 3);
    }

    #[test]
    fn known_codons() {
        assert_eq!(translate_codon(b"ATG"), Some(b'M'));
        assert_eq!(translate_codon(b"TGG"), Some(b'W'));
        assert_eq!(translate_codon(b"TGA"), Some(STOP));
        assert_eq!(translate_codon(b"TAA"), Some(STOP));
        assert_eq!(translate_codon(b"TAG"), Some(STOP));
        assert_eq!(translate_codon(b"GGN"), None);
        assert_eq!(codon_from_index(codon_index(b"CTG").unwrap()), *b"CTG");
    }
}
