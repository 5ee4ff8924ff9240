//! Bond-type prediction between atoms of different fragments.
//!
//! Atoms are embedded from their element type and the vocabulary rank of the
//! fragment holding them, refined by GINE message passing over the bonds
//! inside fragments, and scored pairwise by a small MLP over
//! `[h_u ∥ h_v]` with four outputs (none, single, double, triple).

mod train;

pub use train::{bond_accuracy, train_bond_scorer, BondEpoch, BondTrainConfig, BondTrainReport};

use rand::seq::index::sample;
use rand::Rng;

use crate::chem::{BondOrder, MolGraph};
use crate::nets::{bias, linear, push_linear, Cursor};
use crate::tensor::{glorot_uniform, ParamSet, Tape, Tensor, TensorError, Var};
use crate::vocab::{Decomposition, FragmentVocab, VocabError};

/// Number of bond types scored per pair.
pub const BOND_TYPES: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum BondError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("molecule has no bonds between fragments")]
    NoInterFragmentBonds,
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite bond loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("{0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Label of an atom pair; the discriminant is the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondType {
    None = 0,
    Single = 1,
    Double = 2,
    Triple = 3,
}

impl BondType {
    pub const ALL: [BondType; BOND_TYPES] = [BondType::None, BondType::Single, BondType::Double, BondType::Triple];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BondType> {
        BondType::ALL.get(i).copied()
    }

    pub fn order(self) -> Option<BondOrder> {
        BondOrder::from_value(self as u8)
    }
}

impl From<BondOrder> for BondType {
    fn from(o: BondOrder) -> Self {
        match o {
            BondOrder::Single => BondType::Single,
            BondOrder::Double => BondType::Double,
            BondOrder::Triple => BondType::Triple,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BondConfig {
    /// Rows of the atom table (single-atom vocabulary entries).
    pub atom_types: usize,
    /// Rows of the fragment table (vocabulary size).
    pub vocab_size: usize,
    pub atom_dim: usize,
    pub frag_dim: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub iterations: usize,
}

impl BondConfig {
    pub fn new(atom_types: usize, vocab_size: usize) -> BondConfig {
        BondConfig {
            atom_types,
            vocab_size,
            atom_dim: 50,
            frag_dim: 100,
            node_dim: 300,
            edge_dim: 16,
            iterations: 4,
        }
    }

    pub fn for_vocab(vocab: &FragmentVocab) -> BondConfig {
        BondConfig::new(vocab.atom_base_len(), vocab.len())
    }
}

/// Trained (or freshly initialized) bond scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct BondScorerParams {
    pub config: BondConfig,
    pub params: ParamSet,
}

impl BondScorerParams {
    pub fn init<R: Rng>(config: BondConfig, rng: &mut R) -> BondScorerParams {
        let c = config;
        let mut ps = ParamSet::new();
        ps.push("atom_emb", glorot_uniform(rng, &[c.atom_types, c.atom_dim], c.atom_types, c.atom_dim));
        ps.push("frag_emb", glorot_uniform(rng, &[c.vocab_size, c.frag_dim], c.vocab_size, c.frag_dim));
        ps.push("edge_emb", glorot_uniform(rng, &[3, c.edge_dim], 3, c.edge_dim));
        push_linear(&mut ps, "proj", c.atom_dim + c.frag_dim, c.node_dim, rng);
        for i in 0..c.iterations {
            let edge_in = if i == 0 { c.edge_dim } else { c.node_dim };
            push_linear(&mut ps, &format!("edge{i}"), edge_in, c.node_dim, rng);
            ps.push(format!("gine{i}.eps"), Tensor::zeros(&[1]));
            push_linear(&mut ps, &format!("gine{i}.mlp0"), c.node_dim, c.node_dim, rng);
            push_linear(&mut ps, &format!("gine{i}.mlp1"), c.node_dim, c.node_dim, rng);
        }
        push_linear(&mut ps, "head0", 2 * c.node_dim, c.node_dim, rng);
        ps.push("head1.w", glorot_uniform(rng, &[c.node_dim, BOND_TYPES], c.node_dim, BOND_TYPES));
        ps.push("head1.b", bias(rng, &[BOND_TYPES], c.node_dim));
        BondScorerParams { config, params: ps }
    }

    /// Node embeddings `[N, node_dim]` for one molecule.
    pub fn encode(&self, input: &BondInput) -> Result<Tensor, BondError> {
        let tape = Tape::new();
        let vars = self.params.bind_const(&tape);
        let w = BondVars::unpack(&self.config, &vars);
        Ok((*encode_nodes(&self.config, &w, &[input])?.value()).clone())
    }

    /// Logits for the ordered pair of rows `u`, `v` of `h`.
    pub fn predict_pair(&self, h: &Tensor, u: usize, v: usize) -> [f64; BOND_TYPES] {
        let tape = Tape::new();
        let vars = self.params.bind_const(&tape);
        let w = BondVars::unpack(&self.config, &vars);
        let logits = pair_logits(&w, tape.constant(h.clone()), &[(u, v)]);
        let mut out = [0.0; BOND_TYPES];
        out.copy_from_slice(logits.value().data());
        out
    }

    /// Logits for every ordered pair, encoding the molecule once.
    pub fn pair_logits(&self, input: &BondInput, pairs: &[(usize, usize)]) -> Result<Vec<[f64; BOND_TYPES]>, BondError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let tape = Tape::new();
        let vars = self.params.bind_const(&tape);
        let w = BondVars::unpack(&self.config, &vars);
        let h = encode_nodes(&self.config, &w, &[input])?;
        let logits = pair_logits(&w, h, pairs);
        Ok(logits
            .value()
            .data()
            .chunks(BOND_TYPES)
            .map(|r| {
                let mut a = [0.0; BOND_TYPES];
                a.copy_from_slice(r);
                a
            })
            .collect())
    }
}

/// What the encoder sees of a molecule: typed atoms and intra-fragment bonds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BondInput {
    /// Atom-table row per atom.
    pub atom_types: Vec<usize>,
    /// Fragment-table row per atom.
    pub frag_ranks: Vec<usize>,
    /// Fragment index per atom.
    pub frag_of: Vec<usize>,
    /// Bonds between atoms of the same fragment.
    pub edges: Vec<(usize, usize, BondOrder)>,
}

impl BondInput {
    /// Keeps only bonds whose endpoints share a fragment, so bonds between
    /// fragments never reach the encoder.
    pub fn new(mol: &MolGraph, frag_of: &[usize], ranks: &[usize], vocab: &FragmentVocab) -> Result<BondInput, BondError> {
        assert_eq!(frag_of.len(), mol.atom_count(), "one fragment index per atom");
        let atom_types = (0..mol.atom_count()).map(|i| vocab.atom_type(mol, i)).collect::<Result<Vec<_>, _>>()?;
        let frag_ranks: Vec<usize> = frag_of.iter().map(|&f| ranks[f]).collect();
        if let Some(&r) = frag_ranks.iter().find(|&&r| r >= vocab.len()) {
            return Err(VocabError::UnknownFragmentKey(format!("rank {r}")).into());
        }
        let edges = mol
            .bonds()
            .iter()
            .filter(|b| frag_of[b.a] == frag_of[b.b])
            .map(|b| (b.a, b.b, b.order))
            .collect();
        Ok(BondInput {
            atom_types,
            frag_ranks,
            frag_of: frag_of.to_vec(),
            edges,
        })
    }

    pub fn from_decomposition(mol: &MolGraph, d: &Decomposition, vocab: &FragmentVocab) -> Result<BondInput, BondError> {
        let ranks: Vec<usize> = d.fragments.iter().map(|f| f.rank).collect();
        BondInput::new(mol, &d.frag_of, &ranks, vocab)
    }

    pub fn atom_count(&self) -> usize {
        self.atom_types.len()
    }
}

/// One labeled ordered atom pair from different fragments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairExample {
    pub mol: usize,
    pub u: usize,
    pub v: usize,
    pub label: BondType,
}

/// Every inter-fragment bond in both orientations, plus `neg_ratio` times as
/// many unbonded cross-fragment ordered pairs drawn without replacement.
pub fn build_examples<R: Rng>(
    mol_id: usize,
    mol: &MolGraph,
    d: &Decomposition,
    neg_ratio: usize,
    rng: &mut R,
) -> Result<Vec<PairExample>, BondError> {
    if d.inter_edges.is_empty() {
        return Err(BondError::NoInterFragmentBonds);
    }
    let mut out = Vec::with_capacity(2 * d.inter_edges.len() * (1 + neg_ratio));
    for &(u, v, o) in &d.inter_edges {
        let label = BondType::from(o);
        out.push(PairExample { mol: mol_id, u, v, label });
        out.push(PairExample { mol: mol_id, u: v, v: u, label });
    }
    let n = mol.atom_count();
    let pool: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (0..n).map(move |v| (u, v)))
        .filter(|&(u, v)| d.frag_of[u] != d.frag_of[v] && mol.bond_order(u, v).is_none())
        .collect();
    let want = (neg_ratio * out.len()).min(pool.len());
    for i in sample(rng, pool.len(), want) {
        let (u, v) = pool[i];
        out.push(PairExample {
            mol: mol_id,
            u,
            v,
            label: BondType::None,
        });
    }
    Ok(out)
}

struct GineVars<'t> {
    edge_w: Var<'t>,
    edge_b: Var<'t>,
    eps: Var<'t>,
    mlp: [(Var<'t>, Var<'t>); 2],
}

/// Bound parameters in named form.
pub(crate) struct BondVars<'t> {
    atom_emb: Var<'t>,
    frag_emb: Var<'t>,
    edge_emb: Var<'t>,
    proj: (Var<'t>, Var<'t>),
    layers: Vec<GineVars<'t>>,
    head: [(Var<'t>, Var<'t>); 2],
}

impl<'t> BondVars<'t> {
    pub(crate) fn unpack(cfg: &BondConfig, vars: &[Var<'t>]) -> BondVars<'t> {
        let mut c = Cursor::new(vars);
        let (atom_emb, frag_emb, edge_emb) = (c.next(), c.next(), c.next());
        let proj = (c.next(), c.next());
        let layers = (0..cfg.iterations)
            .map(|_| GineVars {
                edge_w: c.next(),
                edge_b: c.next(),
                eps: c.next(),
                mlp: [(c.next(), c.next()), (c.next(), c.next())],
            })
            .collect();
        let head = [(c.next(), c.next()), (c.next(), c.next())];
        c.finish();
        BondVars {
            atom_emb,
            frag_emb,
            edge_emb,
            proj,
            layers,
            head,
        }
    }
}

/// Node embeddings for the disjoint union of `inputs`, rows in input order.
///
/// Edge features start as a bond-order embedding and pass through one affine
/// map per iteration; since they depend only on the order, the maps run on
/// the three-row type table and are gathered per edge.
pub(crate) fn encode_nodes<'t>(cfg: &BondConfig, w: &BondVars<'t>, inputs: &[&BondInput]) -> Result<Var<'t>, BondError> {
    let n: usize = inputs.iter().map(|x| x.atom_count()).sum();
    if n == 0 {
        return Err(BondError::EmptyBatch);
    }
    let (mut types, mut ranks, mut src, mut dst, mut kinds) = (vec![], vec![], vec![], vec![], vec![]);
    let mut off = 0;
    for x in inputs {
        if let Some(&t) = x.atom_types.iter().find(|&&t| t >= cfg.atom_types) {
            return Err(VocabError::UnknownAtomType(format!("atom row {t}")).into());
        }
        if let Some(&r) = x.frag_ranks.iter().find(|&&r| r >= cfg.vocab_size) {
            return Err(VocabError::UnknownFragmentKey(format!("rank {r}")).into());
        }
        types.extend_from_slice(&x.atom_types);
        ranks.extend_from_slice(&x.frag_ranks);
        for &(a, b, o) in &x.edges {
            src.extend([off + a, off + b]);
            dst.extend([off + b, off + a]);
            kinds.extend([o.value() as usize - 1; 2]);
        }
        off += x.atom_count();
    }
    let x0 = Var::concat(&[w.atom_emb.gather_rows(&types), w.frag_emb.gather_rows(&ranks)], 1);
    let mut h = linear(x0, w.proj.0, w.proj.1);
    let mut edge_table = w.edge_emb;
    for (i, layer) in w.layers.iter().enumerate() {
        edge_table = linear(edge_table, layer.edge_w, layer.edge_b);
        let mut z = h.add(h.scale_by(layer.eps));
        if !src.is_empty() {
            let msg = h.gather_rows(&src).add(edge_table.gather_rows(&kinds)).relu();
            z = z.add(msg.scatter_add_rows(&dst, n));
        }
        h = linear(linear(z, layer.mlp[0].0, layer.mlp[0].1).relu(), layer.mlp[1].0, layer.mlp[1].1);
        if i + 1 < cfg.iterations {
            h = h.relu();
        }
    }
    Ok(h)
}

/// `[P, 4]` logits for ordered row pairs of `h`.
pub(crate) fn pair_logits<'t>(w: &BondVars<'t>, h: Var<'t>, pairs: &[(usize, usize)]) -> Var<'t> {
    let (us, vs): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let x = Var::concat(&[h.gather_rows(&us), h.gather_rows(&vs)], 1);
    let hidden = linear(x, w.head[0].0, w.head[0].1).relu();
    linear(hidden, w.head[1].0, w.head[1].1)
}

/// Mean negative log-probability of `labels` under `logits` (`[P, 4]`).
pub fn bond_loss<'t>(logits: Var<'t>, labels: &[BondType]) -> Result<Var<'t>, BondError> {
    if labels.is_empty() {
        return Err(BondError::EmptyBatch);
    }
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    Ok(logits.log_softmax().pick(&idx).mean().scale(-1.0))
}

/// Softmax of a logit row.
pub fn softmax4(logits: &[f64; BOND_TYPES]) -> [f64; BOND_TYPES] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.map(|x| (x - m).exp());
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Loss on one batch of molecules, for training and gradient checks.
pub fn batch_loss<'t>(
    tape: &'t Tape,
    params: &BondScorerParams,
    inputs: &[&BondInput],
    examples: &[PairExample],
) -> Result<(Var<'t>, Vec<Var<'t>>), BondError> {
    let vars = params.params.bind(tape);
    let w = BondVars::unpack(&params.config, &vars);
    let loss = loss_with(&params.config, &w, inputs, examples)?;
    Ok((loss, vars))
}

/// `examples[i].mol` indexes `inputs`.
pub(crate) fn loss_with<'t>(
    cfg: &BondConfig,
    w: &BondVars<'t>,
    inputs: &[&BondInput],
    examples: &[PairExample],
) -> Result<Var<'t>, BondError> {
    if examples.is_empty() {
        return Err(BondError::EmptyBatch);
    }
    let h = encode_nodes(cfg, w, inputs)?;
    let offsets = offsets(inputs);
    let pairs: Vec<(usize, usize)> = examples.iter().map(|e| (offsets[e.mol] + e.u, offsets[e.mol] + e.v)).collect();
    let labels: Vec<BondType> = examples.iter().map(|e| e.label).collect();
    bond_loss(pair_logits(w, h, &pairs), &labels)
}

pub(crate) fn offsets(inputs: &[&BondInput]) -> Vec<usize> {
    inputs
        .iter()
        .scan(0, |acc, x| {
            let o = *acc;
            *acc += x.atom_count();
            Some(o)
        })
        .collect()
}
