use super::{Decomposition, FragmentVocab, VocabError};
use crate::tensor::Tensor;

/// Padded fragment graph: one-hot fragment features `f` (n_max × K),
/// adjacency `c` (n_max × n_max) and a live-node mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FragGraphTensor {
    pub f: Tensor,
    pub c: Tensor,
    pub mask: Vec<bool>,
    pub n_live: usize,
}

impl FragGraphTensor {
    /// Builds a discrete instance from fragment ranks and fragment edges.
    pub fn from_discrete(
        ranks: &[usize],
        edges: &[(usize, usize)],
        k: usize,
        n_max: usize,
    ) -> Result<FragGraphTensor, VocabError> {
        let n = ranks.len();
        if n > n_max {
            return Err(VocabError::TooManyFragments { count: n, n_max });
        }
        let mut f = Tensor::zeros(&[n_max, k]);
        for (i, &r) in ranks.iter().enumerate() {
            if r >= k {
                return Err(VocabError::UnknownFragmentKey(format!("rank {r}")));
            }
            f.data_mut()[i * k + r] = 1.0;
        }
        let mut c = Tensor::zeros(&[n_max, n_max]);
        for &(i, j) in edges {
            assert!(i < n && j < n && i != j, "edge ({i},{j}) outside {n} live nodes");
            c.data_mut()[i * n_max + j] = 1.0;
            c.data_mut()[j * n_max + i] = 1.0;
        }
        Ok(FragGraphTensor {
            f,
            c,
            mask: (0..n_max).map(|i| i < n).collect(),
            n_live: n,
        })
    }

    pub fn n_max(&self) -> usize {
        self.mask.len()
    }

    pub fn k(&self) -> usize {
        self.f.shape()[1]
    }

    /// Mask as a 0/1 column usable for row masking (n_max × 1).
    pub fn row_mask(&self) -> Tensor {
        let data = self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        Tensor::new(&[self.n_max(), 1], data).expect("shape")
    }
}

/// Tensor form of a decomposition, padded to `n_max` fragments.
pub fn to_tensor(d: &Decomposition, vocab: &FragmentVocab, n_max: usize) -> Result<FragGraphTensor, VocabError> {
    let ranks = d
        .fragments
        .iter()
        .map(|f| {
            vocab
                .rank_of(&f.key)
                .ok_or_else(|| VocabError::UnknownFragmentKey(f.key.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    FragGraphTensor::from_discrete(&ranks, &d.fragment_edges(), vocab.len(), n_max)
}
