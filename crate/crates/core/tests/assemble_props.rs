use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::OnceLock;

use orgmol_core::assemble::{
    assemble, assemble_partial, assemble_random, assemble_random_partial, candidate_edges, materialize, passes_rules,
    AssembleError, Assembly, AssemblyConfig, Partial,
};
use orgmol_core::bonds::{BondConfig, BondScorerParams};
use orgmol_core::chem::{parse_smiles, read_corpus_file, BondOrder, MolGraph, ValenceTable};
use orgmol_core::vocab::{build_vocab, decompose, FragmentVocab};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    vocab: FragmentVocab,
    scorer: BondScorerParams,
    /// (ranks, fragment edges) of real decompositions.
    graphs: Vec<(Vec<usize>, Vec<(usize, usize)>)>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/desk.smi");
        let mols: Vec<MolGraph> = read_corpus_file(&path, &ValenceTable::default()).unwrap().molecules;
        let mols = &mols[..200];
        let vocab = build_vocab(mols, 60).unwrap();
        let graphs = mols
            .iter()
            .map(|m| {
                let d = decompose(m, &vocab).unwrap();
                (d.fragments.iter().map(|f| f.rank).collect(), d.fragment_edges())
            })
            .collect();
        let scorer = BondScorerParams::init(BondConfig::for_vocab(&vocab), &mut ChaCha8Rng::seed_from_u64(3));
        Fixture { vocab, scorer, graphs }
    })
}

/// Smallest cycle through every bond by Floyd-Warshall on the graph without
/// that bond; `usize::MAX` for bridges.
fn ring_sizes(n: usize, bonds: &[(usize, usize)]) -> Vec<usize> {
    bonds
        .iter()
        .enumerate()
        .map(|(skip, &(a, b))| {
            let inf = usize::MAX / 4;
            let mut d = vec![vec![inf; n]; n];
            for (i, row) in d.iter_mut().enumerate() {
                row[i] = 0;
            }
            for (k, &(x, y)) in bonds.iter().enumerate() {
                if k != skip {
                    d[x][y] = 1;
                    d[y][x] = 1;
                }
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        if d[i][k] + d[k][j] < d[i][j] {
                            d[i][j] = d[i][k] + d[k][j];
                        }
                    }
                }
            }
            if d[a][b] >= inf {
                usize::MAX
            } else {
                d[a][b] + 1
            }
        })
        .collect()
}

/// Valence holds and every cycle that appears or shrinks has length 5 or 6.
fn assert_safe(partial: &Partial, out: &Assembly, table: &ValenceTable) {
    assert_eq!(out.mol.valence_violation(table).unwrap(), None);
    let n = out.mol.atom_count();
    let bonds: Vec<(usize, usize)> = out.mol.bonds().iter().map(|b| (b.a.min(b.b), b.a.max(b.b))).collect();
    let after = ring_sizes(n, &bonds);
    let intra: BTreeSet<(usize, usize)> = partial.mol.bonds().iter().map(|b| (b.a.min(b.b), b.a.max(b.b))).collect();
    let intra_list: Vec<(usize, usize)> = intra.iter().copied().collect();
    let before = ring_sizes(n, &intra_list);
    for (k, e) in bonds.iter().enumerate() {
        let was = intra_list.iter().position(|x| x == e).map_or(usize::MAX, |i| before[i]);
        if after[k] < was {
            assert!((5..=6).contains(&after[k]), "bond {e:?}: new ring of size {}", after[k]);
        }
    }
}

fn assert_conserves(partial: &Partial, out: &Assembly) {
    assert_eq!(out.mol.atoms(), partial.mol.atoms());
    for b in partial.mol.bonds() {
        assert_eq!(out.mol.bond_order(b.a, b.b), Some(b.order), "intra bond changed");
    }
    assert_eq!(out.mol.bond_count(), partial.mol.bond_count() + out.added.len());
    for &(u, v, _) in &out.added {
        assert_ne!(out.frag_of[u], out.frag_of[v]);
        assert_eq!(partial.adjacency[out.frag_of[u]][out.frag_of[v]], 1);
    }
}

#[test]
fn candidate_sets() {
    let frag_of = [0, 0, 0, 1, 1];
    assert!(candidate_edges(&frag_of, &[vec![0, 0], vec![0, 0]]).is_empty());
    let c = candidate_edges(&frag_of, &[vec![0, 1], vec![1, 0]]);
    assert_eq!(c.len(), 6);
    assert!(c.iter().all(|&(u, v)| u < v && frag_of[u] != frag_of[v]));
}

#[test]
fn chemical_rule_check() {
    let table = ValenceTable::default();
    let cfg = AssemblyConfig::default();
    let check = |smiles: &str, u: usize, v: usize, order: BondOrder| {
        let mol = parse_smiles(smiles).unwrap();
        let rings = mol.bond_ring_sizes();
        passes_rules(&mol, &rings, &table, u, v, order, &cfg).unwrap().is_some()
    };
    // four-membered ring
    assert!(!check("CCCC", 0, 3, BondOrder::Single));
    assert!(check("CCCCC", 0, 4, BondOrder::Single));
    assert!(check("CCCCCC", 0, 5, BondOrder::Single));
    assert!(!check("CCCCCCC", 0, 6, BondOrder::Single));
    assert!(check("CC.CC", 1, 2, BondOrder::Triple));
    // carbon valence
    assert!(!check("CC(C)(C)C.C", 1, 5, BondOrder::Single));
    assert!(!check("C=CC.C", 1, 3, BondOrder::Double));
    assert!(check("C=CC.C", 1, 3, BondOrder::Single));
    // closes a 5-ring but leaves the far side of a 10-ring in a 7-cycle
    assert!(!check("C1CCCCCCCCC1", 0, 4, BondOrder::Single));
    // existing bond
    assert!(!check("CCCCCC", 0, 1, BondOrder::Single));
}

#[test]
fn threshold_range() {
    let f = fixture();
    let (ranks, edges) = &f.graphs[0];
    let bad = AssemblyConfig {
        threshold: 1.0,
        ..AssemblyConfig::default()
    };
    let t = ValenceTable::default();
    assert!(matches!(assemble(ranks, edges, &f.vocab, &f.scorer, &t, &bad), Err(AssembleError::BadThreshold(_))));
    assert!(matches!(
        assemble(&[], &[], &f.vocab, &f.scorer, &t, &AssemblyConfig::default()),
        Err(AssembleError::NoFragments)
    ));
    assert!(matches!(materialize(&[0, 1], &[(0, 2)], &f.vocab), Err(AssembleError::BadEdge(0, 2))));
    assert!(matches!(materialize(&[10_000], &[], &f.vocab), Err(AssembleError::UnknownRank { .. })));
}

#[test]
fn nothing_added_returns_largest_fragment() {
    let f = fixture();
    let t = ValenceTable::default();
    let cfg = AssemblyConfig {
        threshold: 0.999_999,
        ..AssemblyConfig::default()
    };
    for (ranks, edges) in f.graphs.iter().take(20) {
        let out = assemble(ranks, edges, &f.vocab, &f.scorer, &t, &cfg).unwrap();
        let biggest = ranks.iter().map(|&r| f.vocab.entries()[r].template.atom_count()).max().unwrap();
        assert_eq!(out.atom_count(), biggest);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scored_assembly_is_safe_conservative_and_monotone(
        index in 0usize..200,
        lo in 0.0f64..0.5,
        gap in 0.0f64..0.4,
    ) {
        let f = fixture();
        let t = ValenceTable::default();
        let (ranks, edges) = &f.graphs[index];
        let partial = materialize(ranks, edges, &f.vocab).unwrap();
        let low = AssemblyConfig { threshold: lo, ..AssemblyConfig::default() };
        let high = AssemblyConfig { threshold: lo + gap, ..AssemblyConfig::default() };
        let a = assemble_partial(&partial, &f.scorer, &f.vocab, &t, &low).unwrap();
        assert_safe(&partial, &a, &t);
        assert_conserves(&partial, &a);
        let b = assemble_partial(&partial, &f.scorer, &f.vocab, &t, &high).unwrap();
        let sa: BTreeSet<_> = a.added.iter().collect();
        prop_assert!(b.added.iter().all(|e| sa.contains(e)), "raising the threshold added bonds");
        prop_assert_eq!(&a, &assemble_partial(&partial, &f.scorer, &f.vocab, &t, &low).unwrap());
        let out = assemble(ranks, edges, &f.vocab, &f.scorer, &t, &low).unwrap();
        prop_assert_eq!(out, a.largest_component().unwrap());
    }

    #[test]
    fn random_assembly_is_safe_and_reproducible(index in 0usize..200, seed in 0u64..1000, extra in proptest::collection::vec((0usize..12, 0usize..12), 0..4)) {
        let f = fixture();
        let t = ValenceTable::default();
        let (ranks, edges) = &f.graphs[index];
        // extra fragment edges make cycles in the fragment graph more likely
        let m = ranks.len();
        let mut edges = edges.clone();
        edges.extend(extra.into_iter().map(|(i, j)| (i % m, j % m)).filter(|(i, j)| i != j));
        let partial = materialize(ranks, &edges, &f.vocab).unwrap();
        let cfg = AssemblyConfig::default();
        let a = assemble_random_partial(&partial, &t, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_safe(&partial, &a, &t);
        assert_conserves(&partial, &a);
        prop_assert!(a.added.iter().all(|&(_, _, o)| o == BondOrder::Single));
        let again = assemble_random(ranks, &edges, &f.vocab, &t, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(again, a.largest_component().unwrap());
    }
}

#[test]
fn random_assembly_joins_each_connected_pair_at_most_once() {
    let f = fixture();
    let t = ValenceTable::default();
    for (i, (ranks, edges)) in f.graphs.iter().enumerate().take(40) {
        let partial = materialize(ranks, edges, &f.vocab).unwrap();
        let a = assemble_random_partial(&partial, &t, &AssemblyConfig::default(), &mut ChaCha8Rng::seed_from_u64(i as u64)).unwrap();
        let pairs: BTreeSet<(usize, usize)> = a
            .added
            .iter()
            .map(|&(u, v, _)| (a.frag_of[u].min(a.frag_of[v]), a.frag_of[u].max(a.frag_of[v])))
            .collect();
        assert_eq!(pairs.len(), a.added.len());
        assert!(a.added.len() <= edges.len());
    }
}
