use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use super::{Atom, Bond, BondOrder, MolGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at byte {offset}")]
pub struct SmilesError {
    pub offset: usize,
    pub kind: SmilesErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesErrorKind {
    #[error("empty input")]
    Empty,
    #[error("unknown token {0:?}")]
    UnknownToken(char),
    #[error("unclosed branch")]
    UnclosedBranch,
    #[error("unmatched ')'")]
    UnmatchedParen,
    #[error("unmatched ring closure {0}")]
    UnmatchedRing(u32),
    #[error("conflicting bond symbols on ring closure {0}")]
    BondConflict(u32),
    #[error("ring closure {0} bonds an atom to itself or duplicates a bond")]
    InvalidRingBond(u32),
    #[error("bond symbol without a following atom")]
    DanglingBond,
    #[error("branch or ring closure before any atom")]
    NoPrecedingAtom,
    #[error("malformed bracket atom")]
    BadBracket,
}

const ELEMENTS: &[&str] = &[
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu",
];

const AROMATIC_BRACKET: &[&str] = &["se", "as", "te", "b", "c", "n", "o", "p", "s"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BondSym {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondSym {
    fn order(self) -> BondOrder {
        match self {
            BondSym::Single => BondOrder::Single,
            BondSym::Double => BondOrder::Double,
            BondSym::Triple => BondOrder::Triple,
            BondSym::Aromatic => BondOrder::Aromatic,
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    bonded: HashSet<(usize, usize)>,
}

fn err(offset: usize, kind: SmilesErrorKind) -> SmilesError {
    SmilesError { offset, kind }
}

/// Parses the supported SMILES subset into a [`MolGraph`].
pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    let text_trim = text.trim_end();
    if text_trim.is_empty() {
        return Err(err(0, SmilesErrorKind::Empty));
    }
    let mut p = Parser {
        src: text_trim.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        bonded: HashSet::new(),
    };
    p.run()?;
    let mut mol = MolGraph {
        atoms: p.atoms,
        bonds: p.bonds,
    };
    mol.assign_implicit_hydrogens();
    Ok(mol)
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        let mut prev: Option<usize> = None;
        let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
        let mut pending: Option<(BondSym, usize)> = None;
        let mut rings: BTreeMap<u32, (usize, Option<BondSym>, usize)> = BTreeMap::new();

        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    if prev.is_none() {
                        return Err(err(start, SmilesErrorKind::NoPrecedingAtom));
                    }
                    if pending.is_some() {
                        return Err(err(start, SmilesErrorKind::DanglingBond));
                    }
                    branches.push((prev, start));
                    self.pos += 1;
                }
                b')' => {
                    if let Some((_, off)) = pending {
                        return Err(err(off, SmilesErrorKind::DanglingBond));
                    }
                    let (back, _) = branches
                        .pop()
                        .ok_or_else(|| err(start, SmilesErrorKind::UnmatchedParen))?;
                    prev = back;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending.is_some() {
                        return Err(err(start, SmilesErrorKind::UnknownToken(c as char)));
                    }
                    let sym = match c {
                        b'=' => BondSym::Double,
                        b'#' => BondSym::Triple,
                        b':' => BondSym::Aromatic,
                        _ => BondSym::Single,
                    };
                    pending = Some((sym, start));
                    self.pos += 1;
                }
                b'.' => {
                    if let Some((_, off)) = pending {
                        return Err(err(off, SmilesErrorKind::DanglingBond));
                    }
                    prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let num = self.ring_number()?;
                    let Some(cur) = prev else {
                        return Err(err(start, SmilesErrorKind::NoPrecedingAtom));
                    };
                    let sym = pending.take().map(|(s, _)| s);
                    match rings.remove(&num) {
                        None => {
                            rings.insert(num, (cur, sym, start));
                        }
                        Some((other, other_sym, _)) => {
                            let order = match (other_sym, sym) {
                                (Some(a), Some(b)) if a != b => {
                                    return Err(err(start, SmilesErrorKind::BondConflict(num)))
                                }
                                (Some(a), _) | (None, Some(a)) => a,
                                (None, None) => self.default_bond(other, cur),
                            };
                            if !self.add_bond(other, cur, order) {
                                return Err(err(start, SmilesErrorKind::InvalidRingBond(num)));
                            }
                        }
                    }
                }
                b'[' | b'A'..=b'Z' | b'a'..=b'z' | b'*' => {
                    let atom = if c == b'[' {
                        self.bracket_atom()?
                    } else {
                        self.organic_atom()?
                    };
                    self.atoms.push(atom);
                    let idx = self.atoms.len() - 1;
                    match (prev, pending.take()) {
                        (Some(p), sym) => {
                            let order = sym
                                .map(|(s, _)| s)
                                .unwrap_or_else(|| self.default_bond(p, idx));
                            self.add_bond(p, idx, order);
                        }
                        (None, Some((_, off))) => {
                            return Err(err(off, SmilesErrorKind::NoPrecedingAtom));
                        }
                        (None, None) => {}
                    }
                    prev = Some(idx);
                }
                other => return Err(err(start, SmilesErrorKind::UnknownToken(other as char))),
            }
        }
        if let Some((_, off)) = pending {
            return Err(err(off, SmilesErrorKind::DanglingBond));
        }
        if let Some((_, off)) = branches.last() {
            return Err(err(*off, SmilesErrorKind::UnclosedBranch));
        }
        if let Some((num, (_, _, off))) = rings.iter().next() {
            return Err(err(*off, SmilesErrorKind::UnmatchedRing(*num)));
        }
        if self.atoms.is_empty() {
            return Err(err(0, SmilesErrorKind::Empty));
        }
        Ok(())
    }

    fn default_bond(&self, a: usize, b: usize) -> BondSym {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondSym::Aromatic
        } else {
            BondSym::Single
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, sym: BondSym) -> bool {
        let key = (a.min(b), a.max(b));
        if a == b || !self.bonded.insert(key) {
            return false;
        }
        self.bonds.push(Bond {
            a,
            b,
            order: sym.order(),
        });
        true
    }

    fn ring_number(&mut self) -> Result<u32, SmilesError> {
        let start = self.pos;
        if self.peek() == Some(b'%') {
            let digits = self.src.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
                }
                _ => Err(err(start, SmilesErrorKind::UnknownToken('%'))),
            }
        } else {
            let d = self.src[self.pos] - b'0';
            self.pos += 1;
            Ok(d as u32)
        }
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let start = self.pos;
        let rest = &self.src[self.pos..];
        let (symbol, aromatic, len) = if rest.starts_with(b"Cl") {
            ("Cl", false, 2)
        } else if rest.starts_with(b"Br") {
            ("Br", false, 2)
        } else {
            match rest[0] {
                b'B' => ("B", false, 1),
                b'C' => ("C", false, 1),
                b'N' => ("N", false, 1),
                b'O' => ("O", false, 1),
                b'P' => ("P", false, 1),
                b'S' => ("S", false, 1),
                b'F' => ("F", false, 1),
                b'I' => ("I", false, 1),
                b'b' => ("B", true, 1),
                b'c' => ("C", true, 1),
                b'n' => ("N", true, 1),
                b'o' => ("O", true, 1),
                b'p' => ("P", true, 1),
                b's' => ("S", true, 1),
                other => return Err(err(start, SmilesErrorKind::UnknownToken(other as char))),
            }
        };
        self.pos += len;
        Ok(Atom {
            element: symbol.to_string(),
            charge: 0,
            aromatic,
            hydrogens: 0,
            isotope: None,
            bracket: false,
        })
    }

    fn read_number(&mut self) -> Option<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        let bad = || err(open, SmilesErrorKind::BadBracket);
        self.pos += 1;
        let isotope = self
            .read_number()
            .map(|n| u16::try_from(n).map_err(|_| bad()))
            .transpose()?;

        let rest = &self.src[self.pos..];
        let (element, aromatic, len) = if let Some(sym) = AROMATIC_BRACKET
            .iter()
            .find(|s| rest.starts_with(s.as_bytes()))
        {
            let mut upper = sym.to_string();
            upper[..1].make_ascii_uppercase();
            (upper, true, sym.len())
        } else {
            let two = rest
                .get(..2)
                .and_then(|b| std::str::from_utf8(b).ok())
                .filter(|s| ELEMENTS.contains(s));
            let one = rest
                .get(..1)
                .and_then(|b| std::str::from_utf8(b).ok())
                .filter(|s| ELEMENTS.contains(s));
            match (two, one) {
                (Some(s), _) => (s.to_string(), false, 2),
                (None, Some(s)) => (s.to_string(), false, 1),
                _ => return Err(bad()),
            }
        };
        self.pos += len;

        // chirality, ignored
        while self.peek() == Some(b'@') {
            self.pos += 1;
        }
        while matches!(self.peek(), Some(b'A'..=b'Z')) && self.peek() != Some(b'H') {
            self.pos += 1;
            self.read_number();
        }

        let mut hydrogens = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            hydrogens = self
                .read_number()
                .unwrap_or(1)
                .try_into()
                .map_err(|_| bad())?;
        }

        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.read_number() {
                charge = unit * n as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
        }
        if self.peek() == Some(b':') {
            self.pos += 1;
            self.read_number().ok_or_else(bad)?;
        }
        if self.peek() != Some(b']') {
            return Err(bad());
        }
        self.pos += 1;
        Ok(Atom {
            element,
            charge: i8::try_from(charge).map_err(|_| bad())?,
            aromatic,
            hydrogens,
            isotope,
            bracket: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ethanol() {
        let m = parse_smiles("CCO").unwrap();
        assert_eq!(m.atoms.len(), 3);
        assert_eq!(m.bonds.len(), 2);
        assert!(m.bonds.iter().all(|b| b.order == BondOrder::Single));
        assert_eq!(m.atoms[2].element, "O");
        assert_eq!(m.atoms[0].hydrogens, 3);
        assert_eq!(m.atoms[2].hydrogens, 1);
    }

    #[test]
    fn cyclopropane() {
        let m = parse_smiles("C1CC1").unwrap();
        assert_eq!(m.atoms.len(), 3);
        assert_eq!(m.bonds.len(), 3);
        assert!(m.atoms.iter().all(|a| a.hydrogens == 2));
    }

    #[test]
    fn benzene() {
        let m = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(m.atoms.len(), 6);
        assert!(m.atoms.iter().all(|a| a.aromatic && a.hydrogens == 1));
        assert_eq!(m.bonds.len(), 6);
        assert!(m.bonds.iter().all(|b| b.order == BondOrder::Aromatic));
    }

    #[test]
    fn bracket_atoms() {
        let m = parse_smiles("[13CH3][NH3+].[O-]C(=O)c1cc[nH]c1").unwrap();
        assert_eq!(m.atoms[0].isotope, Some(13));
        assert_eq!(m.atoms[0].hydrogens, 3);
        assert_eq!(m.atoms[1].charge, 1);
        assert_eq!(m.atoms[2].charge, -1);
        let nh = m
            .atoms
            .iter()
            .find(|a| a.element == "N" && a.aromatic)
            .unwrap();
        assert_eq!(nh.hydrogens, 1);
        // the dot separates components: no bond between atoms 1 and 2
        assert!(!m.bonds.iter().any(|b| (b.a, b.b) == (1, 2)));
    }

    #[test]
    fn percent_ring_and_stereo_bonds() {
        let m = parse_smiles("C%10CC%10").unwrap();
        assert_eq!(m.bonds.len(), 3);
        let m = parse_smiles("F/C=C/F").unwrap();
        assert_eq!(m.bonds[1].order, BondOrder::Double);
        let m = parse_smiles("C[C@@H](O)N").unwrap();
        assert_eq!(m.atoms[1].hydrogens, 1);
    }

    #[test]
    fn ring_bond_orders() {
        let m = parse_smiles("C=1CC1").unwrap();
        assert_eq!(m.bonds[2].order, BondOrder::Double);
        let e = parse_smiles("C=1CC#1").unwrap_err();
        assert_eq!(e.kind, SmilesErrorKind::BondConflict(1));
        assert_eq!(e.offset, 6);
    }

    #[test]
    fn errors_carry_offsets() {
        let cases = [
            ("CC(O", SmilesErrorKind::UnclosedBranch, 2),
            ("CC)O", SmilesErrorKind::UnmatchedParen, 2),
            ("C1CC", SmilesErrorKind::UnmatchedRing(1), 1),
            ("CXC", SmilesErrorKind::UnknownToken('X'), 1),
            ("CC=", SmilesErrorKind::DanglingBond, 2),
            ("(C)", SmilesErrorKind::NoPrecedingAtom, 0),
            ("C11", SmilesErrorKind::InvalidRingBond(1), 2),
            ("C[Zz]", SmilesErrorKind::BadBracket, 1),
            ("", SmilesErrorKind::Empty, 0),
        ];
        for (s, kind, off) in cases {
            let e = parse_smiles(s).unwrap_err();
            assert_eq!((e.kind, e.offset), (kind, off), "{s}");
        }
    }

    #[test]
    fn duplicate_ring_bond_rejected() {
        assert!(parse_smiles("C12CC12").is_err());
    }
}
