use std::collections::HashSet;

use super::MolGraph;

pub const DEFAULT_NBITS: usize = 2048;
pub const DEFAULT_RADIUS: usize = 2;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Fixed-length bit vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    nbits: usize,
    pub radius: usize,
}

impl Fingerprint {
    pub fn empty(nbits: usize, radius: usize) -> Self {
        Self {
            words: vec![0; nbits.div_ceil(64)],
            nbits,
            radius,
        }
    }

    pub fn len(&self) -> usize {
        self.nbits
    }

    pub fn is_empty(&self) -> bool {
        self.nbits == 0
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_subset_of(&self, other: &Fingerprint) -> bool {
        self.nbits == other.nbits
            && self
                .words
                .iter()
                .zip(&other.words)
                .all(|(a, b)| a & !b == 0)
    }

    /// Jaccard similarity of the set bits; 1.0 for two empty vectors.
    pub fn tanimoto(&self, other: &Fingerprint) -> f64 {
        let (mut inter, mut union) = (0u32, 0u32);
        for (a, b) in self.words.iter().zip(&other.words) {
            inter += (a & b).count_ones();
            union += (a | b).count_ones();
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Bits as 0.0/1.0 values.
    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.nbits)
            .map(|i| if self.get(i) { 1.0 } else { 0.0 })
            .collect()
    }
}

fn initial_invariant(mol: &MolGraph, atom: usize, degree: usize) -> u64 {
    let a = &mol.atoms[atom];
    let mut bytes = a.element.as_bytes().to_vec();
    bytes.push(0xff);
    bytes.push(a.charge as u8);
    bytes.push(a.aromatic as u8);
    bytes.push(degree.min(255) as u8);
    bytes.push(a.hydrogens);
    fnv1a64(&bytes)
}

/// Circular fingerprint by iterative neighborhood refinement.
///
/// Radius-0 identifiers hash `(element, charge, aromatic, degree, H count)`.
/// Each later round re-hashes an atom's identifier together with the sorted
/// `(bond order, neighbor identifier)` pairs. An identifier is emitted only
/// when its atom's bond environment grew and no other atom emitted the same
/// bond environment earlier; among atoms sharing an environment in one round
/// the smallest identifier wins. Identifiers are folded into `nbits` by modulo.
pub fn morgan_fingerprint(mol: &MolGraph, radius: usize, nbits: usize) -> Fingerprint {
    assert!(nbits > 0, "fingerprint length must be positive");
    let mut fp = Fingerprint::empty(nbits, radius);
    let n = mol.atoms.len();
    let adj = mol.adjacency();
    let words = mol.bonds.len().div_ceil(64).max(1);

    let mut ids: Vec<u64> = (0..n)
        .map(|a| initial_invariant(mol, a, adj[a].len()))
        .collect();
    for &id in &ids {
        fp.set((id % nbits as u64) as usize);
    }

    let mut env: Vec<Vec<u64>> = vec![vec![0; words]; n];
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for _ in 0..radius {
        let mut next_ids = Vec::with_capacity(n);
        let mut next_env = env.clone();
        for a in 0..n {
            let mut nb: Vec<(u8, u64)> = adj[a]
                .iter()
                .map(|&(j, k)| (mol.bonds[k].order.code(), ids[j]))
                .collect();
            nb.sort_unstable();
            let mut bytes = ids[a].to_le_bytes().to_vec();
            for (code, id) in &nb {
                bytes.push(*code);
                bytes.extend_from_slice(&id.to_le_bytes());
            }
            next_ids.push(fnv1a64(&bytes));
            for &(j, k) in &adj[a] {
                next_env[a][k / 64] |= 1 << (k % 64);
                for (w, o) in next_env[a].iter_mut().zip(&env[j]) {
                    *w |= o;
                }
            }
        }
        let mut fresh: Vec<(Vec<u64>, u64)> = (0..n)
            .filter(|&a| next_env[a] != env[a])
            .map(|a| (next_env[a].clone(), next_ids[a]))
            .collect();
        fresh.sort_unstable();
        fresh.dedup_by(|later, first| later.0 == first.0);
        for (bonds, id) in fresh {
            if seen.insert(bonds) {
                fp.set((id % nbits as u64) as usize);
            }
        }
        ids = next_ids;
        env = next_env;
    }
    fp
}
