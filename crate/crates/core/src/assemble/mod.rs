//! Atom-level decoding of a fragment graph: materialize the fragments, score
//! candidate bonds between connected fragments, and add the confident ones
//! that respect valence and ring-size rules.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::bonds::{softmax4, BondError, BondInput, BondScorerParams, BondType, BOND_TYPES};
use crate::chem::{BondOrder, ChemError, MolGraph, ValenceTable};
use crate::vocab::FragmentVocab;

#[derive(Debug, thiserror::Error)]
pub enum AssembleError {
    #[error("no fragments to assemble")]
    NoFragments,
    #[error("fragment rank {rank} is outside the {size}-entry vocabulary")]
    UnknownRank { rank: usize, size: usize },
    #[error("fragment edge ({0}, {1}) is out of range")]
    BadEdge(usize, usize),
    #[error("threshold {0} is outside [0, 1)")]
    BadThreshold(f64),
    #[error(transparent)]
    Bond(#[from] BondError),
    #[error(transparent)]
    Chem(#[from] ChemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssemblyMode {
    #[default]
    Scored,
    RandomAblation,
}

impl fmt::Display for AssemblyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssemblyMode::Scored => "scored",
            AssemblyMode::RandomAblation => "random-ablation",
        })
    }
}

impl FromStr for AssemblyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scored" => Ok(AssemblyMode::Scored),
            "random-ablation" => Ok(AssemblyMode::RandomAblation),
            other => Err(format!("unknown assembly mode {other:?} (expected scored or random-ablation)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyConfig {
    /// Candidates need a score strictly above this.
    pub threshold: f64,
    pub ring_min: usize,
    pub ring_max: usize,
    pub mode: AssemblyMode,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig {
            threshold: 0.5,
            ring_min: 5,
            ring_max: 6,
            mode: AssemblyMode::Scored,
        }
    }
}

impl AssemblyConfig {
    pub fn validate(&self) -> Result<(), AssembleError> {
        if (0.0..1.0).contains(&self.threshold) {
            Ok(())
        } else {
            Err(AssembleError::BadThreshold(self.threshold))
        }
    }
}

/// Fragments laid out as one disconnected molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct Partial {
    /// Atoms and intra-fragment bonds only.
    pub mol: MolGraph,
    pub frag_of: Vec<usize>,
    pub ranks: Vec<usize>,
    /// Symmetric 0/1 fragment adjacency.
    pub adjacency: Vec<Vec<u8>>,
}

/// Instantiates each fragment from its vocabulary template, in order.
pub fn materialize(ranks: &[usize], edges: &[(usize, usize)], vocab: &FragmentVocab) -> Result<Partial, AssembleError> {
    if ranks.is_empty() {
        return Err(AssembleError::NoFragments);
    }
    let m = ranks.len();
    let mut adjacency = vec![vec![0u8; m]; m];
    for &(i, j) in edges {
        if i >= m || j >= m || i == j {
            return Err(AssembleError::BadEdge(i, j));
        }
        adjacency[i][j] = 1;
        adjacency[j][i] = 1;
    }
    let mut mol = MolGraph::new();
    let mut frag_of = Vec::new();
    for (f, &rank) in ranks.iter().enumerate() {
        let entry = vocab.entries().get(rank).ok_or(AssembleError::UnknownRank { rank, size: vocab.len() })?;
        let base = mol.atom_count();
        for a in entry.template.atoms() {
            mol.add_atom(*a);
            frag_of.push(f);
        }
        for b in entry.template.bonds() {
            mol.add_bond(base + b.a, base + b.b, b.order)?;
        }
    }
    Ok(Partial {
        mol,
        frag_of,
        ranks: ranks.to_vec(),
        adjacency,
    })
}

/// Unordered atom pairs `(u, v)`, `u < v`, whose fragments differ and are
/// adjacent.
pub fn candidate_edges(frag_of: &[usize], adjacency: &[Vec<u8>]) -> Vec<(usize, usize)> {
    let n = frag_of.len();
    (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .filter(|&(u, v)| frag_of[u] != frag_of[v] && adjacency[frag_of[u]][frag_of[v]] == 1)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCandidate {
    pub u: usize,
    pub v: usize,
    pub probs: [f64; BOND_TYPES],
    /// Largest entry of `probs`.
    pub score: f64,
    pub best_type: BondType,
}

impl EdgeCandidate {
    /// Softmax of the mean of both orientations' logits.
    pub fn from_logits(u: usize, v: usize, uv: &[f64; BOND_TYPES], vu: &[f64; BOND_TYPES]) -> EdgeCandidate {
        let mut mean = [0.0; BOND_TYPES];
        for k in 0..BOND_TYPES {
            mean[k] = 0.5 * (uv[k] + vu[k]);
        }
        let probs = softmax4(&mean);
        let best = (0..BOND_TYPES).fold(0, |b, k| if probs[k] > probs[b] { k } else { b });
        EdgeCandidate {
            u,
            v,
            probs,
            score: probs[best],
            best_type: BondType::from_index(best).expect("four types"),
        }
    }
}

pub fn score_candidates(
    cands: &[(usize, usize)],
    scorer: &BondScorerParams,
    partial: &Partial,
    vocab: &FragmentVocab,
) -> Result<Vec<EdgeCandidate>, AssembleError> {
    if cands.is_empty() {
        return Ok(Vec::new());
    }
    let input = BondInput::new(&partial.mol, &partial.frag_of, &partial.ranks, vocab)?;
    let pairs: Vec<(usize, usize)> = cands.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
    let logits = scorer.pair_logits(&input, &pairs)?;
    Ok(cands
        .iter()
        .zip(logits.chunks(2))
        .map(|(&(u, v), l)| EdgeCandidate::from_logits(u, v, &l[0], &l[1]))
        .collect())
}

/// Result of a decode before the largest component is taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub mol: MolGraph,
    pub frag_of: Vec<usize>,
    /// Bonds added between fragments, in the order they were accepted.
    pub added: Vec<(usize, usize, BondOrder)>,
}

impl Assembly {
    pub fn largest_component(&self) -> Result<MolGraph, AssembleError> {
        Ok(self.mol.largest_connected_component()?)
    }
}

/// Valence and ring checks for adding `u`-`v` with `order`.
///
/// Every cycle that the bond creates or shortens, through any bond, must
/// have a length within `[ring_min, ring_max]`.
pub fn passes_rules(
    mol: &MolGraph,
    rings: &[Option<usize>],
    table: &ValenceTable,
    u: usize,
    v: usize,
    order: BondOrder,
    cfg: &AssemblyConfig,
) -> Result<Option<(MolGraph, Vec<Option<usize>>)>, AssembleError> {
    let need = u32::from(order.value());
    if mol.bond_order(u, v).is_some() || mol.valence_headroom(table, u)? < need || mol.valence_headroom(table, v)? < need {
        return Ok(None);
    }
    if let Some(r) = mol.smallest_ring_through(u, v) {
        if !(cfg.ring_min..=cfg.ring_max).contains(&r) {
            return Ok(None);
        }
    }
    let mut next = mol.clone();
    next.add_bond(u, v, order)?;
    let after = next.bond_ring_sizes();
    let ok = after.iter().enumerate().all(|(i, &now)| {
        let was = rings.get(i).copied().flatten();
        match now {
            Some(r) if was.is_none_or(|w| r < w) => (cfg.ring_min..=cfg.ring_max).contains(&r),
            _ => true,
        }
    });
    Ok(ok.then_some((next, after)))
}

/// Greedy decode over candidates sorted by descending score (ties by `(u, v)`).
pub fn assemble_partial(
    partial: &Partial,
    scorer: &BondScorerParams,
    vocab: &FragmentVocab,
    table: &ValenceTable,
    cfg: &AssemblyConfig,
) -> Result<Assembly, AssembleError> {
    cfg.validate()?;
    let cands = candidate_edges(&partial.frag_of, &partial.adjacency);
    let mut scored = score_candidates(&cands, scorer, partial, vocab)?;
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.u, a.v).cmp(&(b.u, b.v))));
    let mut mol = partial.mol.clone();
    let mut rings = mol.bond_ring_sizes();
    let mut added = Vec::new();
    for c in scored {
        if c.score <= cfg.threshold {
            break;
        }
        let Some(order) = c.best_type.order() else { continue };
        if let Some((next, after)) = passes_rules(&mol, &rings, table, c.u, c.v, order, cfg)? {
            mol = next;
            rings = after;
            added.push((c.u, c.v, order));
        }
    }
    Ok(Assembly {
        mol,
        frag_of: partial.frag_of.clone(),
        added,
    })
}

/// Decodes fragments `ranks` joined by fragment edges `edges`; returns the
/// largest connected component.
pub fn assemble(
    ranks: &[usize],
    edges: &[(usize, usize)],
    vocab: &FragmentVocab,
    scorer: &BondScorerParams,
    table: &ValenceTable,
    cfg: &AssemblyConfig,
) -> Result<MolGraph, AssembleError> {
    let partial = materialize(ranks, edges, vocab)?;
    assemble_partial(&partial, scorer, vocab, table, cfg)?.largest_component()
}

/// Ablation decode: each connected fragment pair, in `(i, j)` order, gets one
/// single bond between a uniformly drawn atom pair that passes the rules.
pub fn assemble_random_partial<R: Rng>(
    partial: &Partial,
    table: &ValenceTable,
    cfg: &AssemblyConfig,
    rng: &mut R,
) -> Result<Assembly, AssembleError> {
    let mut mol = partial.mol.clone();
    let mut rings = mol.bond_ring_sizes();
    let mut added = Vec::new();
    let m = partial.ranks.len();
    let members: Vec<Vec<usize>> = (0..m)
        .map(|f| (0..partial.frag_of.len()).filter(|&a| partial.frag_of[a] == f).collect())
        .collect();
    for i in 0..m {
        for j in i + 1..m {
            if partial.adjacency[i][j] == 0 {
                continue;
            }
            let mut options = Vec::new();
            for &u in &members[i] {
                for &v in &members[j] {
                    if let Some(next) = passes_rules(&mol, &rings, table, u, v, BondOrder::Single, cfg)? {
                        options.push((u, v, next));
                    }
                }
            }
            if options.is_empty() {
                continue;
            }
            let (u, v, (next, after)) = options.swap_remove(rng.random_range(0..options.len()));
            mol = next;
            rings = after;
            added.push((u, v, BondOrder::Single));
        }
    }
    Ok(Assembly {
        mol,
        frag_of: partial.frag_of.clone(),
        added,
    })
}

pub fn assemble_random<R: Rng>(
    ranks: &[usize],
    edges: &[(usize, usize)],
    vocab: &FragmentVocab,
    table: &ValenceTable,
    cfg: &AssemblyConfig,
    rng: &mut R,
) -> Result<MolGraph, AssembleError> {
    let partial = materialize(ranks, edges, vocab)?;
    assemble_random_partial(&partial, table, cfg, rng)?.largest_component()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_score_from_averaged_logits() {
        let c = EdgeCandidate::from_logits(0, 1, &[3.0, 0.0, 1.0, -1.0], &[1.0, 0.0, -1.0, 1.0]);
        let e2 = 2f64.exp();
        assert!((c.score - e2 / (e2 + 3.0)).abs() < 1e-15);
        assert_eq!(c.best_type, BondType::None);
        let flat = EdgeCandidate::from_logits(0, 1, &[0.5; 4], &[0.5; 4]);
        assert!((flat.score - 0.25).abs() < 1e-15);
        assert_eq!(flat.best_type, BondType::None);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("random-ablation".parse::<AssemblyMode>(), Ok(AssemblyMode::RandomAblation));
        assert_eq!(AssemblyMode::Scored.to_string(), "scored");
        assert!("greedy".parse::<AssemblyMode>().is_err());
    }
}
