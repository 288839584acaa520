use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Atom, BondOrder, MolGraph};

/// Writes `mol` as SMILES using a randomized depth-first traversal: random
/// root per component, random neighbor order, and ring-closure digits
/// allocated lowest-free. Every output parses back to the same graph.
pub fn write_smiles<R: Rng + ?Sized>(mol: &MolGraph, rng: &mut R) -> String {
    let n = mol.atoms.len();
    let adj = mol.adjacency();
    let mut visited = vec![false; n];
    let mut roots: Vec<usize> = (0..n).collect();
    roots.shuffle(rng);

    let mut out = String::new();
    for root in roots {
        if visited[root] {
            continue;
        }
        let tree = build_tree(root, &adj, &mut visited, rng);
        if !out.is_empty() {
            out.push('.');
        }
        let mut w = Writer {
            mol,
            tree: &tree,
            free: (1..=99).collect(),
            open: Vec::new(),
            out: &mut out,
        };
        w.emit(root);
    }
    out
}

struct Tree {
    children: Vec<Vec<(usize, usize)>>,
    /// Ring bonds per atom as `(bond index, partner)`, in discovery order.
    rings: Vec<Vec<(usize, usize)>>,
}

fn build_tree<R: Rng + ?Sized>(
    root: usize,
    adj: &[Vec<(usize, usize)>],
    visited: &mut [bool],
    rng: &mut R,
) -> Tree {
    let n = adj.len();
    let mut children = vec![Vec::new(); n];
    let mut rings = vec![Vec::new(); n];
    let mut used_bonds = BTreeSet::new();

    fn dfs<R: Rng + ?Sized>(
        a: usize,
        adj: &[Vec<(usize, usize)>],
        visited: &mut [bool],
        used: &mut BTreeSet<usize>,
        children: &mut [Vec<(usize, usize)>],
        rings: &mut [Vec<(usize, usize)>],
        rng: &mut R,
    ) {
        visited[a] = true;
        let mut nbrs = adj[a].clone();
        nbrs.shuffle(rng);
        for (j, k) in nbrs {
            if used.contains(&k) {
                continue;
            }
            used.insert(k);
            if visited[j] {
                rings[j].push((k, a));
                rings[a].push((k, j));
            } else {
                children[a].push((j, k));
                dfs(j, adj, visited, used, children, rings, rng);
            }
        }
    }
    dfs(
        root,
        adj,
        visited,
        &mut used_bonds,
        &mut children,
        &mut rings,
        rng,
    );
    Tree { children, rings }
}

struct Writer<'a> {
    mol: &'a MolGraph,
    tree: &'a Tree,
    free: BTreeSet<u32>,
    /// Open ring bonds: `(bond index, digit)`.
    open: Vec<(usize, u32)>,
    out: &'a mut String,
}

impl Writer<'_> {
    fn emit(&mut self, a: usize) {
        self.out.push_str(&atom_token(&self.mol.atoms[a]));
        for &(k, partner) in &self.tree.rings[a] {
            if let Some(pos) = self.open.iter().position(|&(b, _)| b == k) {
                let (_, digit) = self.open.remove(pos);
                push_digit(self.out, digit);
                self.free.insert(digit);
            } else {
                let digit = *self.free.iter().next().expect("ring digits exhausted");
                self.free.remove(&digit);
                self.open.push((k, digit));
                self.out.push_str(bond_token(self.mol, k, a, partner));
                push_digit(self.out, digit);
            }
        }
        let kids = &self.tree.children[a];
        for (i, &(c, k)) in kids.iter().enumerate() {
            let last = i + 1 == kids.len();
            if !last {
                self.out.push('(');
            }
            self.out.push_str(bond_token(self.mol, k, a, c));
            self.emit(c);
            if !last {
                self.out.push(')');
            }
        }
    }
}

fn push_digit(out: &mut String, d: u32) {
    if d < 10 {
        out.push_str(&d.to_string());
    } else {
        out.push_str(&format!("%{d:02}"));
    }
}

fn bond_token(mol: &MolGraph, k: usize, a: usize, b: usize) -> &'static str {
    let both_aromatic = mol.atoms[a].aromatic && mol.atoms[b].aromatic;
    match (mol.bonds[k].order, both_aromatic) {
        (BondOrder::Single, true) => "-",
        (BondOrder::Single, false) => "",
        (BondOrder::Double, _) => "=",
        (BondOrder::Triple, _) => "#",
        (BondOrder::Aromatic, true) => "",
        (BondOrder::Aromatic, false) => ":",
    }
}

fn atom_token(atom: &Atom) -> String {
    let symbol = if atom.aromatic {
        atom.element.to_ascii_lowercase()
    } else {
        atom.element.clone()
    };
    if !atom.bracket {
        return symbol;
    }
    let mut s = String::from("[");
    if let Some(iso) = atom.isotope {
        s.push_str(&iso.to_string());
    }
    s.push_str(&symbol);
    match atom.hydrogens {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    match atom.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}
