use std::collections::VecDeque;

use super::{ChemError, Element, ValenceTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BondOrder {
    Single = 1,
    Double = 2,
    Triple = 3,
}

impl BondOrder {
    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn from_value(v: u8) -> Option<BondOrder> {
        match v {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom { element, charge: 0 }
    }

    pub fn charged(element: Element, charge: i8) -> Self {
        Atom { element, charge }
    }
}

/// An undirected bond; `a < b` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// Heavy-atom molecular graph. Hydrogens are implicit and never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, BondOrder)>>,
}

impl MolGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_atom(&mut self, atom: Atom) -> usize {
        self.atoms.push(atom);
        self.adjacency.push(Vec::new());
        self.atoms.len() - 1
    }

    pub fn add_bond(&mut self, u: usize, v: usize, order: BondOrder) -> Result<(), ChemError> {
        let n = self.atoms.len();
        if u >= n || v >= n {
            return Err(ChemError::AtomOutOfRange(u.max(v)));
        }
        if u == v {
            return Err(ChemError::SelfBond(u));
        }
        if self.bond_order(u, v).is_some() {
            return Err(ChemError::DuplicateBond(u.min(v), u.max(v)));
        }
        self.bonds.push(Bond {
            a: u.min(v),
            b: u.max(v),
            order,
        });
        self.adjacency[u].push((v, order));
        self.adjacency[v].push((u, order));
        Ok(())
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, BondOrder)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn bond_order(&self, u: usize, v: usize) -> Option<BondOrder> {
        self.adjacency
            .get(u)?
            .iter()
            .find(|(w, _)| *w == v)
            .map(|&(_, o)| o)
    }

    /// Sum of incident bond orders.
    pub fn bond_order_sum(&self, i: usize) -> u32 {
        self.adjacency[i]
            .iter()
            .map(|(_, o)| u32::from(o.value()))
            .sum()
    }

    pub fn total_bond_order(&self) -> u32 {
        self.bonds.iter().map(|b| u32::from(b.order.value())).sum()
    }

    /// Remaining bond-order budget of `atom`; zero when saturated.
    pub fn valence_headroom(&self, table: &ValenceTable, atom: usize) -> Result<u32, ChemError> {
        let a = self
            .atoms
            .get(atom)
            .ok_or(ChemError::AtomOutOfRange(atom))?;
        let budget = u32::from(table.budget(a.element, a.charge)?);
        Ok(budget.saturating_sub(self.bond_order_sum(atom)))
    }

    /// First atom whose bond-order sum exceeds its budget, if any.
    pub fn valence_violation(&self, table: &ValenceTable) -> Result<Option<usize>, ChemError> {
        for (i, a) in self.atoms.iter().enumerate() {
            let budget = u32::from(table.budget(a.element, a.charge)?);
            if self.bond_order_sum(i) > budget {
                return Ok(Some(i));
            }
        }
        Ok(None)
    }

    /// BFS distances (in bonds) from `source`; `None` for unreachable atoms.
    pub fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.atoms.len()];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for &(v, _) in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Size of the smallest cycle that a new bond `u`-`v` would close, or
    /// `None` when `u` and `v` lie in different components.
    pub fn smallest_ring_through(&self, u: usize, v: usize) -> Option<usize> {
        self.distances_from(u)[v].map(|d| d + 1)
    }

    /// Length of the smallest cycle through each bond (in `bonds()` order),
    /// `None` for bridges.
    pub fn bond_ring_sizes(&self) -> Vec<Option<usize>> {
        let n = self.atoms.len();
        self.bonds
            .iter()
            .map(|skip| {
                let mut dist = vec![usize::MAX; n];
                let mut queue = VecDeque::from([skip.a]);
                dist[skip.a] = 0;
                while let Some(x) = queue.pop_front() {
                    for &(y, _) in &self.adjacency[x] {
                        let is_skip = (x == skip.a && y == skip.b) || (x == skip.b && y == skip.a);
                        if !is_skip && dist[y] == usize::MAX {
                            dist[y] = dist[x] + 1;
                            queue.push_back(y);
                        }
                    }
                }
                (dist[skip.b] != usize::MAX).then(|| dist[skip.b] + 1)
            })
            .collect()
    }

    /// Connected components as sorted atom lists, ordered by smallest atom.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut head = 0;
            while head < comp.len() {
                let u = comp[head];
                head += 1;
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.connected_components().len() <= 1
    }

    /// Induced subgraph on `atoms`; atom `atoms[k]` becomes local index `k`.
    pub fn induced_subgraph(&self, atoms: &[usize]) -> MolGraph {
        let mut local = vec![usize::MAX; self.atoms.len()];
        let mut sub = MolGraph::new();
        for (k, &a) in atoms.iter().enumerate() {
            local[a] = k;
            sub.add_atom(self.atoms[a]);
        }
        for b in &self.bonds {
            let (la, lb) = (local[b.a], local[b.b]);
            if la != usize::MAX && lb != usize::MAX {
                // Endpoints are distinct and unique in the source graph.
                sub.add_bond(la, lb, b.order).expect("induced bond");
            }
        }
        sub
    }

    /// Component with the most atoms; ties go to the larger total bond order
    /// and then to the smallest canonical key.
    pub fn largest_connected_component(&self) -> Result<MolGraph, ChemError> {
        if self.atoms.is_empty() {
            return Err(ChemError::EmptyGraph);
        }
        let comps = self.connected_components();
        if comps.len() == 1 {
            return Ok(self.clone());
        }
        let mut best: Option<(usize, u32, String, MolGraph)> = None;
        for comp in comps {
            let sub = self.induced_subgraph(&comp);
            let size = sub.atom_count();
            let order = sub.total_bond_order();
            if let Some((bs, bo, _, _)) = &best {
                if size < *bs || (size == *bs && order < *bo) {
                    continue;
                }
            }
            let key = super::write_canonical_smiles(&sub);
            let better = match &best {
                None => true,
                Some((bs, bo, bk, _)) => {
                    size > *bs || (size == *bs && (order > *bo || (order == *bo && key < *bk)))
                }
            };
            if better {
                best = Some((size, order, key, sub));
            }
        }
        Ok(best.map(|(_, _, _, g)| g).expect("non-empty graph"))
    }
}
