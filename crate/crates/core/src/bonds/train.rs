use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{build_examples, loss_with, BondConfig, BondError, BondInput, BondScorerParams, BondVars, PairExample};
use crate::chem::MolGraph;
use crate::tensor::{Adam, AdamConfig, Tape, Tensor};
use crate::vocab::{Decomposition, FragmentVocab};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BondTrainConfig {
    pub epochs: usize,
    /// Molecules per optimizer step.
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Negatives per positive example.
    pub neg_ratio: usize,
    pub seed: u64,
}

impl Default for BondTrainConfig {
    fn default() -> Self {
        BondTrainConfig {
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig {
                lr: 1e-3,
                weight_decay: 0.0,
                lr_decay: 1.0,
                ..AdamConfig::default()
            },
            neg_ratio: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BondEpoch {
    pub epoch: usize,
    /// Example-weighted mean loss over the epoch.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BondTrainReport {
    pub epochs: Vec<BondEpoch>,
    /// Molecules without bonds between fragments, left out of training.
    pub skipped: usize,
}

/// Minimizes the pair loss with Adam, drawing fresh negatives every epoch.
/// `model` must match the vocabulary's table sizes.
pub fn train_bond_scorer(
    corpus: &[(&MolGraph, &Decomposition)],
    vocab: &FragmentVocab,
    model: BondConfig,
    cfg: &BondTrainConfig,
    mut on_epoch: impl FnMut(&BondEpoch),
) -> Result<(BondScorerParams, BondTrainReport), BondError> {
    if cfg.batch_size == 0 {
        return Err(BondError::InvalidConfig("batch size must be positive".into()));
    }
    if (model.atom_types, model.vocab_size) != (vocab.atom_base_len(), vocab.len()) {
        return Err(BondError::InvalidConfig(format!(
            "model tables ({}, {}) do not fit the vocabulary ({}, {})",
            model.atom_types,
            model.vocab_size,
            vocab.atom_base_len(),
            vocab.len()
        )));
    }
    let mut usable = Vec::new();
    for &(mol, d) in corpus {
        if !d.inter_edges.is_empty() {
            usable.push((mol, d, BondInput::from_decomposition(mol, d, vocab)?));
        }
    }
    if usable.is_empty() {
        return Err(BondError::EmptyBatch);
    }
    let skipped = corpus.len() - usable.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = BondScorerParams::init(model, &mut rng);
    let mut adam = Adam::new(cfg.adam, &params.params);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut examples: Vec<PairExample> = Vec::new();
            for (slot, &i) in chunk.iter().enumerate() {
                let (mol, d, _) = &usable[i];
                examples.extend(build_examples(slot, mol, d, cfg.neg_ratio, &mut rng)?);
            }
            let inputs: Vec<&BondInput> = chunk.iter().map(|&i| &usable[i].2).collect();
            let tape = Tape::new();
            let vars = params.params.bind(&tape);
            let w = BondVars::unpack(&params.config, &vars);
            let loss = loss_with(&params.config, &w, &inputs, &examples)?;
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(BondError::NonFiniteLoss { epoch });
            }
            total += value * examples.len() as f64;
            count += examples.len();
            let mut grads = tape.backward(loss);
            let g: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            adam.step(&mut params.params, &g);
        }
        adam.end_epoch();
        let log = BondEpoch {
            epoch,
            loss: total / count as f64,
        };
        on_epoch(&log);
        epochs.push(log);
    }
    Ok((params, BondTrainReport { epochs, skipped }))
}

/// Share of examples (built as for training, seeded by `seed`) whose argmax
/// logit is the true label. Molecules without inter-fragment bonds add none.
pub fn bond_accuracy(
    params: &BondScorerParams,
    corpus: &[(&MolGraph, &Decomposition)],
    vocab: &FragmentVocab,
    neg_ratio: usize,
    seed: u64,
) -> Result<f64, BondError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hit, mut total) = (0usize, 0usize);
    for &(mol, d) in corpus {
        if d.inter_edges.is_empty() {
            continue;
        }
        let examples = build_examples(0, mol, d, neg_ratio, &mut rng)?;
        let input = BondInput::from_decomposition(mol, d, vocab)?;
        let pairs: Vec<(usize, usize)> = examples.iter().map(|e| (e.u, e.v)).collect();
        let logits = params.pair_logits(&input, &pairs)?;
        for (e, l) in examples.iter().zip(&logits) {
            let best = (0..l.len()).fold(0, |b, i| if l[i] > l[b] { i } else { b });
            hit += usize::from(best == e.label.index());
            total += 1;
        }
    }
    if total == 0 {
        return Err(BondError::EmptyBatch);
    }
    Ok(hit as f64 / total as f64)
}
