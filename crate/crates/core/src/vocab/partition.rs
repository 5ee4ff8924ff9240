//! Mutable fragment partition of one molecule, shared by vocabulary
//! learning and decomposition.

use std::collections::HashMap;
use std::rc::Rc;

use crate::chem::{canonical_key, MolGraph};

#[derive(Debug, Clone)]
pub(crate) struct Frag {
    /// Sorted atom indices; the first one is the fragment's anchor.
    pub atoms: Vec<usize>,
    pub key: Rc<str>,
}

pub(crate) struct Partition<'m> {
    mol: &'m MolGraph,
    frag_of: Vec<usize>,
    slots: Vec<Option<Frag>>,
    pair_keys: HashMap<(usize, usize), Rc<str>>,
}

impl<'m> Partition<'m> {
    /// All-singleton partition.
    pub fn singletons(mol: &'m MolGraph) -> Partition<'m> {
        let slots = (0..mol.atom_count())
            .map(|i| {
                Some(Frag {
                    atoms: vec![i],
                    key: atom_key(mol, i).into(),
                })
            })
            .collect();
        Partition {
            mol,
            frag_of: (0..mol.atom_count()).collect(),
            slots,
            pair_keys: HashMap::new(),
        }
    }

    fn frag(&self, slot: usize) -> &Frag {
        self.slots[slot].as_ref().expect("live slot")
    }

    /// Distinct adjacent fragment pairs as (slot, slot, merged key).
    pub fn adjacent_pairs(&mut self) -> Vec<(usize, usize, Rc<str>)> {
        let mut pairs: Vec<(usize, usize)> = self
            .mol
            .bonds()
            .iter()
            .filter_map(|b| {
                let (x, y) = (self.frag_of[b.a], self.frag_of[b.b]);
                (x != y).then(|| (x.min(y), x.max(y)))
            })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
            .into_iter()
            .map(|(x, y)| {
                let key = match self.pair_keys.get(&(x, y)) {
                    Some(k) => Rc::clone(k),
                    None => {
                        let k: Rc<str> = self.merged_key(x, y).into();
                        self.pair_keys.insert((x, y), Rc::clone(&k));
                        k
                    }
                };
                (x, y, key)
            })
            .collect()
    }

    fn merged_key(&self, x: usize, y: usize) -> String {
        let atoms = merged_atoms(&self.frag(x).atoms, &self.frag(y).atoms);
        canonical_key(&self.mol.induced_subgraph(&atoms)).expect("adjacent fragments are connected")
    }

    /// Merges every occurrence of `key`, one pair at a time. Candidate pairs
    /// are scanned by descending (larger anchor, smaller anchor) and the scan
    /// restarts after each merge. Returns the number of merges.
    pub fn merge_all(&mut self, key: &str) -> usize {
        let mut merges = 0;
        loop {
            let best = self
                .adjacent_pairs()
                .into_iter()
                .filter(|(_, _, k)| &**k == key)
                .map(|(x, y, _)| {
                    let (ax, ay) = (self.frag(x).atoms[0], self.frag(y).atoms[0]);
                    ((ax.max(ay), ax.min(ay)), x, y)
                })
                .max_by_key(|&(anchors, _, _)| anchors);
            let Some((_, x, y)) = best else {
                return merges;
            };
            let atoms = merged_atoms(&self.frag(x).atoms, &self.frag(y).atoms);
            let slot = self.slots.len();
            for &a in &atoms {
                self.frag_of[a] = slot;
            }
            self.slots[x] = None;
            self.slots[y] = None;
            self.slots.push(Some(Frag {
                atoms,
                key: key.into(),
            }));
            merges += 1;
        }
    }

    /// Live fragments ordered by anchor atom.
    pub fn fragments(&self) -> Vec<Frag> {
        let mut out: Vec<Frag> = self.slots.iter().flatten().cloned().collect();
        out.sort_by_key(|f| f.atoms[0]);
        out
    }

    pub fn fragment_count(&self) -> usize {
        self.slots.iter().flatten().count()
    }
}

fn merged_atoms(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut atoms: Vec<usize> = a.iter().chain(b).copied().collect();
    atoms.sort_unstable();
    atoms
}

pub(crate) fn atom_key(mol: &MolGraph, i: usize) -> String {
    canonical_key(&mol.induced_subgraph(&[i])).expect("single atom")
}
