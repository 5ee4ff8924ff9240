//! SMILES subset reader.
//!
//! Supported: organic-subset atoms, bracket atoms (isotope, chirality,
//! hydrogen count and atom class are read and dropped; charge is kept),
//! bond symbols `- = # :` plus `/ \` read as single, branches, ring closures
//! (`0-9`, `%nn`), dot-disconnected components and lowercase aromatic atoms.
//! Aromatic systems are kekulized before the graph is returned.

use std::collections::BTreeMap;

use super::{Atom, BondOrder, ChemError, Element, MolGraph, ValenceTable};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SmilesError {
    #[error("empty SMILES")]
    Empty,
    #[error("non-ASCII character in SMILES")]
    NonAscii,
    #[error("unexpected character {ch:?} at position {pos}")]
    UnexpectedChar { pos: usize, ch: char },
    #[error("unbalanced parenthesis")]
    UnbalancedParenthesis,
    #[error("ring bond {0} never closed")]
    UnclosedRingBond(u32),
    #[error("conflicting bond symbols on ring closure {0}")]
    ConflictingRingBond(u32),
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("formal charge {0} out of range [-2, 2]")]
    ChargeOutOfRange(i32),
    #[error("unsupported bond symbol {0:?}")]
    UnsupportedBond(char),
    #[error("no Kekulé structure for the aromatic system")]
    KekulizationFailure,
    #[error("atom {atom} ({element}) exceeds its valence budget")]
    ValenceViolation { atom: usize, element: Element },
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("atom bonded to itself")]
    SelfBond,
}

impl From<ChemError> for SmilesError {
    fn from(e: ChemError) -> Self {
        match e {
            ChemError::UnknownElement(s) => SmilesError::UnknownElement(s),
            ChemError::DuplicateBond(a, b) => SmilesError::DuplicateBond(a, b),
            _ => SmilesError::SelfBond,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BondSym {
    Order(BondOrder),
    Aromatic,
}

#[derive(Debug, Clone)]
struct RawAtom {
    atom: Atom,
    aromatic: bool,
    explicit_h: u8,
}

#[derive(Debug, Clone)]
struct RawBond {
    a: usize,
    b: usize,
    sym: Option<BondSym>,
}

/// Parse without valence checking.
pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    parse(text, None)
}

/// Parse and reject any atom whose bond-order sum exceeds its budget.
pub fn parse_smiles_strict(text: &str, table: &ValenceTable) -> Result<MolGraph, SmilesError> {
    parse(text, Some(table))
}

fn parse(text: &str, strict: Option<&ValenceTable>) -> Result<MolGraph, SmilesError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(SmilesError::Empty);
    }
    if !text.is_ascii() {
        return Err(SmilesError::NonAscii);
    }
    let (atoms, bonds) = Reader::new(text.as_bytes()).read()?;
    let mol = kekulize(&atoms, &bonds)?;
    if let Some(table) = strict {
        if let Some(i) = mol.valence_violation(table)? {
            return Err(SmilesError::ValenceViolation {
                atom: i,
                element: mol.atom(i).element,
            });
        }
    }
    Ok(mol)
}

struct Reader<'a> {
    s: &'a [u8],
    pos: usize,
    atoms: Vec<RawAtom>,
    bonds: Vec<RawBond>,
    rings: BTreeMap<u32, (usize, Option<BondSym>)>,
}

impl<'a> Reader<'a> {
    fn new(s: &'a [u8]) -> Self {
        Reader {
            s,
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
            rings: BTreeMap::new(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn unexpected(&self) -> SmilesError {
        SmilesError::UnexpectedChar {
            pos: self.pos,
            ch: self.peek().map(char::from).unwrap_or('\0'),
        }
    }

    fn read(mut self) -> Result<(Vec<RawAtom>, Vec<RawBond>), SmilesError> {
        let mut prev: Option<usize> = None;
        let mut stack: Vec<Option<usize>> = Vec::new();
        let mut pending: Option<BondSym> = None;
        // true right after an atom or ')' when a ring digit is allowed
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    if prev.is_none() {
                        return Err(self.unexpected());
                    }
                    stack.push(prev);
                    self.pos += 1;
                }
                b')' => {
                    if pending.is_some() {
                        return Err(self.unexpected());
                    }
                    prev = stack.pop().ok_or(SmilesError::UnbalancedParenthesis)?;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' | b'$' => {
                    if pending.is_some() || prev.is_none() {
                        return Err(self.unexpected());
                    }
                    pending = Some(match c {
                        b'=' => BondSym::Order(BondOrder::Double),
                        b'#' => BondSym::Order(BondOrder::Triple),
                        b':' => BondSym::Aromatic,
                        b'$' => return Err(SmilesError::UnsupportedBond('$')),
                        _ => BondSym::Order(BondOrder::Single),
                    });
                    self.pos += 1;
                }
                b'.' => {
                    if pending.is_some() || prev.is_none() {
                        return Err(self.unexpected());
                    }
                    prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(p) = prev else {
                        return Err(self.unexpected());
                    };
                    let label = self.ring_label()?;
                    self.ring_bond(p, label, pending.take())?;
                }
                _ => {
                    let atom = self.atom()?;
                    let idx = self.atoms.len();
                    self.atoms.push(atom);
                    if let Some(p) = prev {
                        self.bonds.push(RawBond {
                            a: p,
                            b: idx,
                            sym: pending.take(),
                        });
                    } else if pending.is_some() {
                        return Err(self.unexpected());
                    }
                    prev = Some(idx);
                }
            }
        }
        if !stack.is_empty() {
            return Err(SmilesError::UnbalancedParenthesis);
        }
        if pending.is_some() {
            return Err(SmilesError::UnexpectedChar {
                pos: self.pos,
                ch: '\0',
            });
        }
        if let Some((&label, _)) = self.rings.iter().next() {
            return Err(SmilesError::UnclosedRingBond(label));
        }
        if self.atoms.is_empty() {
            return Err(SmilesError::Empty);
        }
        Ok((self.atoms, self.bonds))
    }

    fn ring_label(&mut self) -> Result<u32, SmilesError> {
        let c = self.peek().ok_or_else(|| self.unexpected())?;
        if c == b'%' {
            self.pos += 1;
            let d1 = self.peek().filter(u8::is_ascii_digit).ok_or_else(|| self.unexpected())?;
            self.pos += 1;
            let d2 = self.peek().filter(u8::is_ascii_digit).ok_or_else(|| self.unexpected())?;
            self.pos += 1;
            Ok(u32::from(d1 - b'0') * 10 + u32::from(d2 - b'0'))
        } else {
            self.pos += 1;
            Ok(u32::from(c - b'0'))
        }
    }

    fn ring_bond(
        &mut self,
        atom: usize,
        label: u32,
        sym: Option<BondSym>,
    ) -> Result<(), SmilesError> {
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(label, (atom, sym));
            }
            Some((other, other_sym)) => {
                if other == atom {
                    return Err(SmilesError::SelfBond);
                }
                let sym = match (sym, other_sym) {
                    (Some(x), Some(y)) if x != y => {
                        return Err(SmilesError::ConflictingRingBond(label))
                    }
                    (x, y) => x.or(y),
                };
                self.bonds.push(RawBond {
                    a: other,
                    b: atom,
                    sym,
                });
            }
        }
        Ok(())
    }

    fn atom(&mut self) -> Result<RawAtom, SmilesError> {
        let c = self.peek().ok_or_else(|| self.unexpected())?;
        if c == b'[' {
            return self.bracket_atom();
        }
        let next = self.s.get(self.pos + 1).copied();
        let (symbol, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => ("Cl", false, 2),
            (b'B', Some(b'r')) => ("Br", false, 2),
            (b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I', _) => {
                (std::str::from_utf8(&self.s[self.pos..self.pos + 1]).unwrap(), false, 1)
            }
            (b'b', _) => ("B", true, 1),
            (b'c', _) => ("C", true, 1),
            (b'n', _) => ("N", true, 1),
            (b'o', _) => ("O", true, 1),
            (b'p', _) => ("P", true, 1),
            (b's', _) => ("S", true, 1),
            (c, _) if c.is_ascii_alphabetic() || c == b'*' => {
                return Err(SmilesError::UnknownElement(char::from(c).to_string()))
            }
            _ => return Err(self.unexpected()),
        };
        self.pos += len;
        let element: Element = symbol
            .parse()
            .map_err(|_| SmilesError::UnknownElement(symbol.to_string()))?;
        Ok(RawAtom {
            atom: Atom::new(element),
            aromatic,
            explicit_h: 0,
        })
    }

    fn bracket_atom(&mut self) -> Result<RawAtom, SmilesError> {
        let start = self.pos;
        let end = self.s[start..]
            .iter()
            .position(|&b| b == b']')
            .map(|k| start + k)
            .ok_or(SmilesError::UnexpectedChar {
                pos: start,
                ch: '[',
            })?;
        let body = &self.s[start + 1..end];
        self.pos = end + 1;
        let mut i = 0;
        while i < body.len() && body[i].is_ascii_digit() {
            i += 1;
        }
        if i >= body.len() {
            return Err(SmilesError::UnexpectedChar { pos: start, ch: '[' });
        }
        let first = body[i];
        let (symbol, aromatic) = if first.is_ascii_lowercase() {
            let two = body.get(i..i + 2).and_then(|s| std::str::from_utf8(s).ok());
            match two {
                Some(t @ ("se" | "te" | "as")) => {
                    i += 2;
                    (capitalize(t), true)
                }
                _ => {
                    i += 1;
                    (capitalize(&char::from(first).to_string()), true)
                }
            }
        } else if first.is_ascii_uppercase() || first == b'*' {
            if body.get(i + 1).is_some_and(u8::is_ascii_lowercase) {
                let t = String::from_utf8_lossy(&body[i..i + 2]).into_owned();
                i += 2;
                (t, false)
            } else {
                i += 1;
                (char::from(first).to_string(), false)
            }
        } else {
            return Err(SmilesError::UnexpectedChar {
                pos: start + 1 + i,
                ch: char::from(first),
            });
        };
        let element: Element = symbol
            .parse()
            .map_err(|_| SmilesError::UnknownElement(symbol.clone()))?;
        if aromatic && element.aromatic_valence().is_none() {
            return Err(SmilesError::UnknownElement(symbol.to_lowercase()));
        }
        // chirality
        while i < body.len() && body[i] == b'@' {
            i += 1;
        }
        while i < body.len() && body[i].is_ascii_uppercase() && body[i] != b'H' {
            // @TH1, @AL2 and similar tags
            i += 1;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
        }
        let mut explicit_h = 0u8;
        if i < body.len() && body[i] == b'H' {
            i += 1;
            explicit_h = 1;
            if i < body.len() && body[i].is_ascii_digit() {
                explicit_h = body[i] - b'0';
                i += 1;
            }
        }
        let mut charge: i32 = 0;
        if i < body.len() && (body[i] == b'+' || body[i] == b'-') {
            let sign = if body[i] == b'+' { 1 } else { -1 };
            let sym = body[i];
            i += 1;
            let mut mag = 1;
            if i < body.len() && body[i].is_ascii_digit() {
                mag = 0;
                while i < body.len() && body[i].is_ascii_digit() {
                    mag = mag * 10 + i32::from(body[i] - b'0');
                    i += 1;
                }
            } else {
                while i < body.len() && body[i] == sym {
                    mag += 1;
                    i += 1;
                }
            }
            charge = sign * mag;
        }
        if i < body.len() && body[i] == b':' {
            i += 1;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i != body.len() {
            return Err(SmilesError::UnexpectedChar {
                pos: start + 1 + i,
                ch: char::from(body[i]),
            });
        }
        if !(-2..=2).contains(&charge) {
            return Err(SmilesError::ChargeOutOfRange(charge));
        }
        Ok(RawAtom {
            atom: Atom::charged(element, charge as i8),
            aromatic,
            explicit_h,
        })
    }
}

fn capitalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    if let Some(c) = chars.next() {
        out.push(c.to_ascii_uppercase());
    }
    out.extend(chars);
    out
}

/// Resolve aromatic bonds into alternating single/double bonds.
fn kekulize(atoms: &[RawAtom], bonds: &[RawBond]) -> Result<MolGraph, SmilesError> {
    let n = atoms.len();
    // Resolve each bond to either a fixed order or "aromatic candidate".
    let mut resolved: Vec<(usize, usize, Option<BondOrder>)> = bonds
        .iter()
        .map(|b| {
            let order = match b.sym {
                Some(BondSym::Order(o)) => Some(o),
                Some(BondSym::Aromatic) => None,
                None if atoms[b.a].aromatic && atoms[b.b].aromatic => None,
                None => Some(BondOrder::Single),
            };
            (b.a, b.b, order)
        })
        .collect();

    // An implicit bond between aromatic atoms that is not in a ring is a
    // plain single bond (e.g. biphenyl written without '-').
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, &(a, b, _)) in resolved.iter().enumerate() {
        adj[a].push((b, k));
        adj[b].push((a, k));
    }
    for k in 0..resolved.len() {
        let (a, b, order) = resolved[k];
        if order.is_none() && bonds[k].sym.is_none() && !in_ring(&adj, a, b, k) {
            resolved[k].2 = Some(BondOrder::Single);
        }
    }

    // Atoms that must receive exactly one double bond from the aromatic set.
    let mut needs = vec![false; n];
    for (i, ra) in atoms.iter().enumerate() {
        if !ra.aromatic {
            continue;
        }
        let Some(base) = ra.atom.element.aromatic_valence() else {
            return Err(SmilesError::KekulizationFailure);
        };
        let target = i32::from(base)
            + match ra.atom.element {
                Element::B => -i32::from(ra.atom.charge),
                Element::C => -i32::from(ra.atom.charge).abs(),
                _ => i32::from(ra.atom.charge),
            };
        let used: i32 = adj[i]
            .iter()
            .map(|&(_, k)| resolved[k].2.map_or(1, |o| i32::from(o.value())))
            .sum::<i32>()
            + i32::from(ra.explicit_h);
        needs[i] = target - used >= 1;
    }

    let mut cand: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, &(a, b, order)) in resolved.iter().enumerate() {
        if order.is_none() && needs[a] && needs[b] {
            cand[a].push((b, k));
            cand[b].push((a, k));
        }
    }
    let mut mate: Vec<Option<usize>> = vec![None; n];
    let remaining = needs.iter().filter(|&&x| x).count();
    if remaining % 2 == 1 || !match_all(&cand, &needs, &mut mate, remaining) {
        return Err(SmilesError::KekulizationFailure);
    }

    let mut mol = MolGraph::new();
    for ra in atoms {
        mol.add_atom(ra.atom);
    }
    for &(a, b, order) in &resolved {
        let order = order.unwrap_or(if mate[a] == Some(b) {
            BondOrder::Double
        } else {
            BondOrder::Single
        });
        mol.add_bond(a, b, order).map_err(|e| match e {
            ChemError::SelfBond(_) => SmilesError::SelfBond,
            other => SmilesError::from(other),
        })?;
    }
    Ok(mol)
}

fn in_ring(adj: &[Vec<(usize, usize)>], a: usize, b: usize, skip: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![a];
    seen[a] = true;
    while let Some(u) = stack.pop() {
        for &(v, k) in &adj[u] {
            if k == skip || seen[v] {
                continue;
            }
            if v == b {
                return true;
            }
            seen[v] = true;
            stack.push(v);
        }
    }
    false
}

/// Backtracking perfect matching on the atoms flagged in `needs`, always
/// branching on the unmatched atom with the fewest free partners.
fn match_all(
    cand: &[Vec<(usize, usize)>],
    needs: &[bool],
    mate: &mut [Option<usize>],
    remaining: usize,
) -> bool {
    if remaining == 0 {
        return true;
    }
    let mut pick: Option<(usize, usize)> = None;
    for i in 0..cand.len() {
        if !needs[i] || mate[i].is_some() {
            continue;
        }
        let free = cand[i].iter().filter(|(j, _)| mate[*j].is_none()).count();
        if free == 0 {
            return false;
        }
        if pick.is_none_or(|(_, f)| free < f) {
            pick = Some((i, free));
        }
    }
    let Some((i, _)) = pick else {
        return true;
    };
    let options: Vec<usize> = cand[i]
        .iter()
        .map(|&(j, _)| j)
        .filter(|&j| mate[j].is_none())
        .collect();
    for j in options {
        mate[i] = Some(j);
        mate[j] = Some(i);
        if match_all(cand, needs, mate, remaining - 2) {
            return true;
        }
        mate[i] = None;
        mate[j] = None;
    }
    false
}
