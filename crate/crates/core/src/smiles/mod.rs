//! SMILES parsing and circular (Morgan-style) fingerprints.

mod morgan;
mod parse;
mod write;

pub use morgan::{fnv1a64, morgan_fingerprint, Fingerprint, DEFAULT_NBITS, DEFAULT_RADIUS};
pub use parse::{parse_smiles, SmilesError, SmilesErrorKind};
pub use write::write_smiles;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    /// Capitalized element symbol, e.g. `C`, `Cl`.
    pub element: String,
    pub charge: i8,
    pub aromatic: bool,
    /// Explicit count for bracket atoms, valence-derived otherwise.
    pub hydrogens: u8,
    pub isotope: Option<u16>,
    pub bracket: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub(crate) fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

fn normal_valences(element: &str) -> &'static [u32] {
    match element {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        _ => &[],
    }
}

impl MolGraph {
    /// Neighbor lists as `(neighbor, bond index)`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (k, b) in self.bonds.iter().enumerate() {
            adj[b.a].push((b.b, k));
            adj[b.b].push((b.a, k));
        }
        adj
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .count()
    }

    /// Fills implicit hydrogen counts for organic-subset atoms from the
    /// standard valence table. Aromatic atoms only consider their lowest
    /// valence.
    pub(crate) fn assign_implicit_hydrogens(&mut self) {
        let mut used = vec![0u32; self.atoms.len()];
        for b in &self.bonds {
            used[b.a] += b.order.valence();
            used[b.b] += b.order.valence();
        }
        for (atom, used) in self.atoms.iter_mut().zip(used) {
            if atom.bracket {
                continue;
            }
            let valences = normal_valences(&atom.element);
            let used = if atom.aromatic && atom.element != "O" && atom.element != "S" {
                used + 1
            } else {
                used
            };
            let candidates = if atom.aromatic {
                &valences[..valences.len().min(1)]
            } else {
                valences
            };
            atom.hydrogens = candidates
                .iter()
                .find(|&&v| v >= used)
                .map(|&v| (v - used) as u8)
                .unwrap_or(0);
        }
    }
}
