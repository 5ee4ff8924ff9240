//! Canonical SMILES via colour refinement plus individualization search.
//!
//! Atoms are first partitioned by (element, charge, degree, incident bond
//! orders) and refined until stable. Remaining ties are broken by
//! individualizing each member of the first non-singleton cell in turn; every
//! leaf of that search yields a total order, the order is written out as
//! SMILES, and the lexicographically smallest string wins.

use std::sync::atomic::{AtomicBool, Ordering};

use super::{BondOrder, ChemError, MolGraph};

const LEAF_BUDGET: usize = 20_000;

static BUDGET_WARNED: AtomicBool = AtomicBool::new(false);

/// Canonical SMILES of a whole graph; components are sorted and joined by '.'.
pub fn write_canonical_smiles(mol: &MolGraph) -> String {
    let comps = mol.connected_components();
    if comps.len() <= 1 {
        return canonical_connected(mol);
    }
    let mut parts: Vec<String> = comps
        .iter()
        .map(|c| canonical_connected(&mol.induced_subgraph(c)))
        .collect();
    parts.sort();
    parts.join(".")
}

/// Identity string of a connected fragment.
pub fn canonical_key(sub: &MolGraph) -> Result<String, ChemError> {
    if sub.is_empty() {
        return Err(ChemError::EmptyGraph);
    }
    if !sub.is_connected() {
        return Err(ChemError::DisconnectedFragment);
    }
    Ok(canonical_connected(sub))
}

fn canonical_connected(mol: &MolGraph) -> String {
    let n = mol.atom_count();
    if n == 0 {
        return String::new();
    }
    if n == 1 {
        return atom_symbol(mol, 0);
    }
    let initial = initial_colors(mol);
    let colors = refine(mol, initial);
    let mut search = Search {
        mol,
        best: None,
        leaves: 0,
    };
    search.visit(colors);
    search.best.expect("at least one leaf")
}

struct Search<'a> {
    mol: &'a MolGraph,
    best: Option<String>,
    leaves: usize,
}

impl Search<'_> {
    fn visit(&mut self, colors: Vec<usize>) {
        let n = colors.len();
        let mut sizes = vec![0usize; n];
        for &c in &colors {
            sizes[c] += 1;
        }
        let Some(target) = (0..n).find(|&c| sizes[c] > 1) else {
            self.leaves += 1;
            let s = write_with_ranks(self.mol, &colors);
            if self.best.as_ref().is_none_or(|b| s < *b) {
                self.best = Some(s);
            }
            return;
        };
        let cell: Vec<usize> = (0..n).filter(|&a| colors[a] == target).collect();
        let mut seen_shapes: Vec<Vec<(usize, BondOrder)>> = Vec::new();
        for &a in &cell {
            if self.leaves >= LEAF_BUDGET {
                if !BUDGET_WARNED.swap(true, Ordering::Relaxed) {
                    log::warn!(
                        "canonical labelling stopped after {LEAF_BUDGET} leaves; keys for highly symmetric graphs may not be canonical"
                    );
                }
                return;
            }
            // Atoms with identical neighbourhoods are interchangeable.
            let mut shape = self.mol.neighbors(a).to_vec();
            shape.sort();
            if seen_shapes.contains(&shape) {
                continue;
            }
            seen_shapes.push(shape);
            let keyed: Vec<(usize, usize)> = colors
                .iter()
                .enumerate()
                .map(|(x, &c)| (c, usize::from(x != a)))
                .collect();
            let next = refine(self.mol, relabel(&keyed));
            self.visit(next);
        }
    }
}

fn initial_colors(mol: &MolGraph) -> Vec<usize> {
    let keys: Vec<(u8, i8, usize, Vec<u8>)> = (0..mol.atom_count())
        .map(|i| {
            let a = mol.atom(i);
            let mut orders: Vec<u8> = mol.neighbors(i).iter().map(|(_, o)| o.value()).collect();
            orders.sort_unstable();
            (a.element.atomic_number(), a.charge, mol.degree(i), orders)
        })
        .collect();
    relabel(&keys)
}

/// Dense ranks 0.. in sorted key order.
fn relabel<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("present"))
        .collect()
}

fn refine(mol: &MolGraph, mut colors: Vec<usize>) -> Vec<usize> {
    let mut count = distinct(&colors);
    loop {
        let keys: Vec<(usize, Vec<(u8, usize)>)> = (0..colors.len())
            .map(|i| {
                let mut nb: Vec<(u8, usize)> = mol
                    .neighbors(i)
                    .iter()
                    .map(|&(j, o)| (o.value(), colors[j]))
                    .collect();
                nb.sort_unstable();
                (colors[i], nb)
            })
            .collect();
        let next = relabel(&keys);
        let next_count = distinct(&next);
        colors = next;
        if next_count == count {
            return colors;
        }
        count = next_count;
    }
}

fn distinct(colors: &[usize]) -> usize {
    colors.iter().copied().max().map_or(0, |m| m + 1)
}

fn atom_symbol(mol: &MolGraph, i: usize) -> String {
    let a = mol.atom(i);
    if a.charge == 0 && a.element.is_organic_subset() {
        return a.element.symbol().to_string();
    }
    let charge = match a.charge {
        0 => String::new(),
        1 => "+".to_string(),
        -1 => "-".to_string(),
        q if q > 0 => format!("+{q}"),
        q => format!("-{}", -q),
    };
    format!("[{}{}]", a.element.symbol(), charge)
}

fn bond_symbol(order: BondOrder) -> &'static str {
    match order {
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

/// Writes a connected graph as SMILES, walking atoms in the given rank order.
fn write_with_ranks(mol: &MolGraph, rank: &[usize]) -> String {
    let n = mol.atom_count();
    let sorted_nbrs: Vec<Vec<(usize, BondOrder)>> = (0..n)
        .map(|i| {
            let mut v = mol.neighbors(i).to_vec();
            v.sort_by_key(|&(j, _)| rank[j]);
            v
        })
        .collect();
    let start = (0..n).min_by_key(|&i| rank[i]).expect("non-empty");

    // Pass 1: spanning tree and ring-closure bonds.
    let mut visit_order = vec![usize::MAX; n];
    let mut children: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    let mut closures: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    let mut counter = 0;
    let mut stack: Vec<(usize, usize, usize)> = vec![(start, usize::MAX, 0)];
    visit_order[start] = counter;
    counter += 1;
    while let Some(&mut (u, parent, ref mut next)) = stack.last_mut() {
        if *next >= sorted_nbrs[u].len() {
            stack.pop();
            continue;
        }
        let (w, o) = sorted_nbrs[u][*next];
        *next += 1;
        if w == parent {
            continue;
        }
        if visit_order[w] == usize::MAX {
            visit_order[w] = counter;
            counter += 1;
            children[u].push((w, o));
            stack.push((w, u, 0));
        } else if visit_order[w] < visit_order[u] {
            // back edge to an ancestor; record once at both ends
            closures[u].push((w, o));
            closures[w].push((u, o));
        }
    }

    // Pass 2: emit.
    let mut out = String::new();
    let mut digit_of: std::collections::HashMap<(usize, usize), usize> = Default::default();
    let mut free: Vec<bool> = vec![true; 100];
    free[0] = false;
    let mut emit: Vec<Emit> = vec![Emit::Atom(start)];
    while let Some(item) = emit.pop() {
        match item {
            Emit::Text(s) => out.push_str(s),
            Emit::Bond(o) => out.push_str(bond_symbol(o)),
            Emit::Atom(u) => {
                out.push_str(&atom_symbol(mol, u));
                let mut ring = closures[u].clone();
                ring.sort_by_key(|&(w, _)| rank[w]);
                let (closing, opening): (Vec<_>, Vec<_>) = ring
                    .into_iter()
                    .partition(|&(w, _)| visit_order[w] < visit_order[u]);
                for (w, _) in closing {
                    let d = digit_of.remove(&(w.min(u), w.max(u))).expect("opened");
                    push_digit(&mut out, d);
                    free[d] = true;
                }
                for (w, o) in opening {
                    let d = free.iter().position(|&f| f).expect("ring digits exhausted");
                    free[d] = false;
                    digit_of.insert((w.min(u), w.max(u)), d);
                    out.push_str(bond_symbol(o));
                    push_digit(&mut out, d);
                }
                let kids = &children[u];
                // pushed in reverse so they pop in order
                for (k, &(w, o)) in kids.iter().enumerate().rev() {
                    let last = k + 1 == kids.len();
                    if !last {
                        emit.push(Emit::Text(")"));
                    }
                    emit.push(Emit::Atom(w));
                    emit.push(Emit::Bond(o));
                    if !last {
                        emit.push(Emit::Text("("));
                    }
                }
            }
        }
    }
    out
}

enum Emit {
    Atom(usize),
    Bond(BondOrder),
    Text(&'static str),
}

fn push_digit(out: &mut String, d: usize) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push_str(&format!("%{d}"));
    }
}
