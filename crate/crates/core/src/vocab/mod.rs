//! Fragment vocabulary learned by iterative merging of frequent adjacent
//! fragment pairs, and decomposition of molecules into fragment graphs.

mod partition;
mod tensor;

pub use tensor::{to_tensor, FragGraphTensor};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::chem::{canonical_key, parse_smiles, BondOrder, MolGraph};
use partition::{atom_key, Partition};

const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "orgmol-vocab";

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("target size {target} is below the {atom_types} atom types in the corpus")]
    TargetTooSmall { target: usize, atom_types: usize },
    #[error("atom type {0:?} is not in the vocabulary")]
    UnknownAtomType(String),
    #[error("fragment {0:?} is not in the vocabulary")]
    UnknownFragmentKey(String),
    #[error("{count} fragments exceed the maximum of {n_max}")]
    TooManyFragments { count: usize, n_max: usize },
    #[error("malformed vocabulary file: {0}")]
    MalformedVocabFile(String),
    #[error("vocabulary format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("vocabulary I/O on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct VocabEntry {
    pub key: String,
    /// Fragment graph rebuilt from the key.
    pub template: MolGraph,
}

/// Ordered fragment keys; an entry's rank is its position.
#[derive(Debug, Clone)]
pub struct FragmentVocab {
    entries: Vec<VocabEntry>,
    atom_base: usize,
    index: HashMap<String, usize>,
}

impl PartialEq for FragmentVocab {
    fn eq(&self, other: &Self) -> bool {
        self.atom_base == other.atom_base && self.keys().eq(other.keys())
    }
}

impl FragmentVocab {
    fn from_keys(keys: Vec<String>, atom_base: usize) -> Result<FragmentVocab, VocabError> {
        let mut index = HashMap::with_capacity(keys.len());
        let mut entries = Vec::with_capacity(keys.len());
        for (rank, key) in keys.into_iter().enumerate() {
            let template = parse_smiles(&key)
                .map_err(|e| VocabError::MalformedVocabFile(format!("entry {rank} {key:?}: {e}")))?;
            let canon = canonical_key(&template)
                .map_err(|e| VocabError::MalformedVocabFile(format!("entry {rank} {key:?}: {e}")))?;
            if canon != key {
                return Err(VocabError::MalformedVocabFile(format!(
                    "entry {rank} {key:?} is not in canonical form ({canon:?})"
                )));
            }
            if (rank < atom_base) != (template.atom_count() == 1) {
                return Err(VocabError::MalformedVocabFile(format!(
                    "entry {rank} {key:?} breaks the atom-base layout"
                )));
            }
            if index.insert(key.clone(), rank).is_some() {
                return Err(VocabError::MalformedVocabFile(format!("duplicate key {key:?}")));
            }
            entries.push(VocabEntry { key, template });
        }
        Ok(FragmentVocab {
            entries,
            atom_base,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of leading single-atom entries.
    pub fn atom_base_len(&self) -> usize {
        self.atom_base
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.key.as_str())
    }

    pub fn key(&self, rank: usize) -> &str {
        &self.entries[rank].key
    }

    pub fn rank_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Rank of atom `i`'s single-atom entry, always below `atom_base_len()`.
    pub fn atom_type(&self, mol: &MolGraph, i: usize) -> Result<usize, VocabError> {
        let key = atom_key(mol, i);
        match self.rank_of(&key) {
            Some(r) if r < self.atom_base => Ok(r),
            _ => Err(VocabError::UnknownAtomType(key)),
        }
    }

    /// The first `size` entries: the vocabulary a smaller target would have
    /// produced on the same corpus. `size` is clamped to
    /// `[atom_base_len(), len()]`.
    pub fn truncated(&self, size: usize) -> FragmentVocab {
        let size = size.clamp(self.atom_base, self.entries.len());
        let entries = self.entries[..size].to_vec();
        let index = entries.iter().enumerate().map(|(r, e)| (e.key.clone(), r)).collect();
        FragmentVocab {
            entries,
            atom_base: self.atom_base,
            index,
        }
    }

    /// Share of entries per fragment atom count.
    pub fn size_proportions(&self) -> BTreeMap<usize, f64> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.template.atom_count()).or_default() += 1;
        }
        let total = self.entries.len().max(1) as f64;
        counts.into_iter().map(|(k, c)| (k, c as f64 / total)).collect()
    }

    /// Text form: a three-line header then `rank<TAB>key` per entry.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{MAGIC} {FORMAT_VERSION}\nsize {}\natoms {}\n",
            self.entries.len(),
            self.atom_base
        );
        for (rank, e) in self.entries.iter().enumerate() {
            s.push_str(&format!("{rank}\t{}\n", e.key));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<FragmentVocab, VocabError> {
        let bad = |m: &str| VocabError::MalformedVocabFile(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad("missing magic"))?
            .parse::<u32>()
            .map_err(|_| bad("bad version"))?;
        if version != FORMAT_VERSION {
            return Err(VocabError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let field = |line: Option<&str>, name: &str| -> Result<usize, VocabError> {
            line.and_then(|l| l.strip_prefix(name))
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(&format!("missing {name}")))
        };
        let size = field(lines.next(), "size ")?;
        let atoms = field(lines.next(), "atoms ")?;
        if atoms > size {
            return Err(bad("atom base larger than vocabulary"));
        }
        let mut keys = Vec::with_capacity(size);
        for (expected, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (rank, key) = line
                .split_once('\t')
                .ok_or_else(|| bad(&format!("line for rank {expected} lacks a tab")))?;
            if rank.parse::<usize>().ok() != Some(expected) {
                return Err(bad(&format!("expected rank {expected}, found {rank:?}")));
            }
            keys.push(key.to_string());
        }
        if keys.len() != size {
            return Err(bad(&format!("header promises {size} entries, found {}", keys.len())));
        }
        FragmentVocab::from_keys(keys, atoms)
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        std::fs::write(path, self.to_text()).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<FragmentVocab, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        FragmentVocab::from_text(&text)
    }

    /// SHA-256 of the text form, hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Learns a vocabulary of `target_size` entries.
///
/// Starts from the distinct atom types (sorted by key). Each round counts
/// every adjacent fragment pair in every molecule under the key of the
/// merged fragment, appends the most frequent key (ties: smallest key), and
/// merges all its occurrences. Stops early if no adjacent pairs remain.
pub fn build_vocab(corpus: &[MolGraph], target_size: usize) -> Result<FragmentVocab, VocabError> {
    if corpus.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    let atom_types: BTreeSet<String> = corpus
        .iter()
        .flat_map(|m| (0..m.atom_count()).map(move |i| atom_key(m, i)))
        .collect();
    if target_size < atom_types.len() {
        return Err(VocabError::TargetTooSmall {
            target: target_size,
            atom_types: atom_types.len(),
        });
    }
    let atom_base = atom_types.len();
    let mut keys: Vec<String> = atom_types.into_iter().collect();
    let mut known: HashSet<String> = keys.iter().cloned().collect();
    let mut parts: Vec<Partition<'_>> = corpus.iter().map(Partition::singletons).collect();
    while keys.len() < target_size {
        let mut counts: HashMap<std::rc::Rc<str>, usize> = HashMap::new();
        for p in &mut parts {
            for (_, _, key) in p.adjacent_pairs() {
                *counts.entry(key).or_default() += 1;
            }
        }
        // a pair that rebuilds an existing entry by another route is not a new entry
        let Some((best, _)) = counts
            .into_iter()
            .filter(|(k, _)| !known.contains(&**k))
            .max_by(|(ka, ca), (kb, cb)| ca.cmp(cb).then_with(|| kb.cmp(ka)))
        else {
            log::warn!(
                "vocabulary saturated at {} entries (requested {target_size})",
                keys.len()
            );
            break;
        };
        for p in &mut parts {
            p.merge_all(&best);
        }
        known.insert(best.to_string());
        keys.push(best.to_string());
    }
    FragmentVocab::from_keys(keys, atom_base)
}

#[derive(Debug, Clone)]
pub struct Fragment {
    /// Source atom indices, ascending.
    pub atoms: Vec<usize>,
    pub key: String,
    pub rank: usize,
    /// Induced subgraph; local atom `k` is source atom `atoms[k]`.
    pub graph: MolGraph,
}

/// A molecule split into vocabulary fragments.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub fragments: Vec<Fragment>,
    /// Fragment index of every source atom.
    pub frag_of: Vec<usize>,
    /// Bonds joining different fragments, as (u, v, order) with u < v.
    pub inter_edges: Vec<(usize, usize, BondOrder)>,
    /// Symmetric 0/1 fragment adjacency with zero diagonal.
    pub adjacency: Vec<Vec<u8>>,
}

impl Decomposition {
    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn atom_count(&self) -> usize {
        self.frag_of.len()
    }

    /// Unordered connected fragment pairs (i < j).
    pub fn fragment_edges(&self) -> Vec<(usize, usize)> {
        let n = self.fragments.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.adjacency[i][j] == 1)
            .collect()
    }

    /// Rebuilds the molecule from fragment graphs and inter-fragment bonds.
    pub fn reassemble(&self) -> MolGraph {
        let n = self.frag_of.len();
        let mut atoms = vec![None; n];
        for f in &self.fragments {
            for (k, &a) in f.atoms.iter().enumerate() {
                atoms[a] = Some(*f.graph.atom(k));
            }
        }
        let mut mol = MolGraph::new();
        for a in atoms {
            mol.add_atom(a.expect("fragments partition the atoms"));
        }
        for f in &self.fragments {
            for b in f.graph.bonds() {
                mol.add_bond(f.atoms[b.a], f.atoms[b.b], b.order)
                    .expect("intra-fragment bond");
            }
        }
        for &(u, v, o) in &self.inter_edges {
            mol.add_bond(u, v, o).expect("inter-fragment bond");
        }
        mol
    }
}

/// Splits `mol` by replaying the vocabulary merges in rank order.
pub fn decompose(mol: &MolGraph, vocab: &FragmentVocab) -> Result<Decomposition, VocabError> {
    for i in 0..mol.atom_count() {
        vocab.atom_type(mol, i)?;
    }
    let mut part = Partition::singletons(mol);
    for rank in vocab.atom_base..vocab.len() {
        if part.fragment_count() <= 1 {
            break;
        }
        part.merge_all(vocab.key(rank));
    }
    let frags = part.fragments();
    let mut frag_of = vec![0; mol.atom_count()];
    let mut fragments = Vec::with_capacity(frags.len());
    for (fi, f) in frags.into_iter().enumerate() {
        for &a in &f.atoms {
            frag_of[a] = fi;
        }
        let rank = vocab
            .rank_of(&f.key)
            .ok_or_else(|| VocabError::UnknownFragmentKey(f.key.to_string()))?;
        fragments.push(Fragment {
            graph: mol.induced_subgraph(&f.atoms),
            atoms: f.atoms,
            key: f.key.to_string(),
            rank,
        });
    }
    let n = fragments.len();
    let mut adjacency = vec![vec![0u8; n]; n];
    let mut inter_edges = Vec::new();
    for b in mol.bonds() {
        let (x, y) = (frag_of[b.a], frag_of[b.b]);
        if x != y {
            adjacency[x][y] = 1;
            adjacency[y][x] = 1;
            inter_edges.push((b.a.min(b.b), b.a.max(b.b), b.order));
        }
    }
    inter_edges.sort_by_key(|&(u, v, _)| (u, v));
    Ok(Decomposition {
        fragments,
        frag_of,
        inter_edges,
        adjacency,
    })
}

/// Fragment-count statistics over a decomposed corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentCountStats {
    pub counts: BTreeMap<usize, usize>,
    /// `counts` normalized to sum 1.
    pub histogram: BTreeMap<usize, f64>,
    pub max: usize,
    pub mean_fragments: f64,
    pub mean_atoms: f64,
    pub max_atoms: usize,
    /// atom count → fragment count → molecules.
    pub by_atom_count: BTreeMap<usize, BTreeMap<usize, usize>>,
}

pub fn fragment_count_distribution(corpus: &[Decomposition]) -> Result<FragmentCountStats, VocabError> {
    if corpus.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut by_atom_count: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for d in corpus {
        *counts.entry(d.len()).or_default() += 1;
        *by_atom_count
            .entry(d.atom_count())
            .or_default()
            .entry(d.len())
            .or_default() += 1;
    }
    let total = corpus.len() as f64;
    Ok(FragmentCountStats {
        histogram: counts.iter().map(|(&k, &c)| (k, c as f64 / total)).collect(),
        max: *counts.keys().next_back().expect("non-empty"),
        counts,
        mean_fragments: corpus.iter().map(|d| d.len() as f64).sum::<f64>() / total,
        mean_atoms: corpus.iter().map(|d| d.atom_count() as f64).sum::<f64>() / total,
        max_atoms: corpus.iter().map(Decomposition::atom_count).max().unwrap_or(0),
        by_atom_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mols(smiles: &[&str]) -> Vec<MolGraph> {
        smiles.iter().map(|s| parse_smiles(s).unwrap()).collect()
    }

    fn keys(v: &FragmentVocab) -> Vec<&str> {
        v.keys().collect()
    }

    #[test]
    fn toy_corpus_vocabulary() {
        let v = build_vocab(&mols(&["CCC=O", "CC=CC", "COC=O"]), 4).unwrap();
        assert_eq!(keys(&v), vec!["C", "O", "CC", "CO"]);
        assert_eq!(v.atom_base_len(), 2);
    }

    #[test]
    fn atoms_only_when_target_equals_atom_types() {
        let v = build_vocab(&mols(&["CCO", "CN"]), 3).unwrap();
        assert_eq!(keys(&v), vec!["C", "N", "O"]);
        assert!(matches!(
            build_vocab(&mols(&["CCO", "CN"]), 2),
            Err(VocabError::TargetTooSmall { target: 2, atom_types: 3 })
        ));
        assert!(matches!(build_vocab(&[], 3), Err(VocabError::EmptyCorpus)));
    }

    #[test]
    fn tie_goes_to_smaller_key() {
        // "CC" and "C=C" each occur three times; "C=C" sorts first.
        let v = build_vocab(&mols(&["CC", "CC", "CC", "C=C", "C=C", "C=C"]), 2).unwrap();
        assert_eq!(keys(&v), vec!["C", "C=C"]);
        assert!("C=C" < "CC");
    }

    #[test]
    fn decompose_replays_merges() {
        let v = build_vocab(&mols(&["CCC=O", "CC=CC", "COC=O"]), 4).unwrap();
        let d = decompose(&parse_smiles("CCC=O").unwrap(), &v).unwrap();
        let ks: Vec<&str> = d.fragments.iter().map(|f| f.key.as_str()).collect();
        assert_eq!(ks, vec!["C", "CC", "O"]);
        assert_eq!(
            d.inter_edges,
            vec![(0, 1, BondOrder::Single), (2, 3, BondOrder::Double)]
        );
        assert_eq!(d.adjacency, vec![vec![0, 1, 0], vec![1, 0, 1], vec![0, 1, 0]]);

        let single = decompose(&parse_smiles("O").unwrap(), &v).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.adjacency, vec![vec![0]]);

        assert!(matches!(
            decompose(&parse_smiles("CN").unwrap(), &v),
            Err(VocabError::UnknownAtomType(k)) if k == "N"
        ));
    }

    #[test]
    fn text_round_trip_and_errors() {
        let v = build_vocab(&mols(&["CCC=O", "CC=CC", "COC=O"]), 4).unwrap();
        let text = v.to_text();
        assert_eq!(text, "orgmol-vocab 1\nsize 4\natoms 2\n0\tC\n1\tO\n2\tCC\n3\tCO\n");
        assert_eq!(FragmentVocab::from_text(&text).unwrap(), v);

        let dup = "orgmol-vocab 1\nsize 3\natoms 2\n0\tC\n1\tO\n2\tC\n";
        assert!(matches!(FragmentVocab::from_text(dup), Err(VocabError::MalformedVocabFile(_))));
        let truncated = &text[..text.len() - 4];
        assert!(matches!(
            FragmentVocab::from_text(truncated),
            Err(VocabError::MalformedVocabFile(_))
        ));
        let future = text.replacen("orgmol-vocab 1", "orgmol-vocab 9", 1);
        assert!(matches!(
            FragmentVocab::from_text(&future),
            Err(VocabError::VersionMismatch { found: 9, expected: 1 })
        ));
        assert_eq!(v.fingerprint().len(), 64);
    }

    #[test]
    fn count_distribution() {
        let v = build_vocab(&mols(&["CC", "CO"]), 2).unwrap();
        let ds: Vec<_> = mols(&["CC", "CCC"]).iter().map(|m| decompose(m, &v).unwrap()).collect();
        let s = fragment_count_distribution(&ds).unwrap();
        assert_eq!(s.histogram, BTreeMap::from([(2, 0.5), (3, 0.5)]));
        assert_eq!(s.max, 3);
        let one: Vec<_> = mols(&["C", "O"]).iter().map(|m| decompose(m, &v).unwrap()).collect();
        assert_eq!(fragment_count_distribution(&one).unwrap().histogram, BTreeMap::from([(1, 1.0)]));
        assert!(matches!(fragment_count_distribution(&[]), Err(VocabError::EmptyCorpus)));
    }
}
