//! Generation metrics (validity, uniqueness, novelty) and corpus structure
//! tables.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::chem::{parse_smiles_strict, write_canonical_smiles, MolGraph, ValenceTable};
use crate::vocab::{decompose, Decomposition, FragmentVocab};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no molecules to evaluate")]
    EmptySet,
    #[error("corpus is empty")]
    EmptyCorpus,
}

fn percent(part: usize, whole: usize) -> Result<f64, MetricsError> {
    if whole == 0 {
        return Err(MetricsError::EmptySet);
    }
    Ok(100.0 * part as f64 / whole as f64)
}

/// Share of entries that exist and satisfy every valence budget.
pub fn validity(mols: &[Option<MolGraph>], table: &ValenceTable) -> Result<f64, MetricsError> {
    let ok = mols
        .iter()
        .flatten()
        .filter(|m| !m.is_empty() && matches!(m.valence_violation(table), Ok(None)))
        .count();
    percent(ok, mols.len())
}

/// Parses each line strictly; failures become `None`.
pub fn parse_lines(lines: &[&str], table: &ValenceTable) -> Vec<Option<MolGraph>> {
    lines.iter().map(|s| parse_smiles_strict(s, table).ok()).collect()
}

/// Share of distinct canonical SMILES among `mols`.
pub fn uniqueness(mols: &[MolGraph]) -> Result<f64, MetricsError> {
    let keys: HashSet<String> = mols.iter().map(write_canonical_smiles).collect();
    percent(keys.len(), mols.len())
}

/// Share of distinct generated canonical SMILES absent from `train_keys`.
pub fn novelty(mols: &[MolGraph], train_keys: &HashSet<String>) -> Result<f64, MetricsError> {
    let keys: HashSet<String> = mols.iter().map(write_canonical_smiles).collect();
    let novel = keys.iter().filter(|k| !train_keys.contains(*k)).count();
    percent(novel, keys.len())
}

/// Canonical SMILES of every molecule.
pub fn canonical_keys(mols: &[MolGraph]) -> HashSet<String> {
    mols.iter().map(write_canonical_smiles).collect()
}

/// Metrics of one generated set. Wall time is kept out so reruns compare
/// byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationReport {
    pub n_requested: usize,
    pub n_emitted: usize,
    pub n_valid: usize,
    pub validity: f64,
    pub uniqueness: f64,
    pub novelty: f64,
    /// Atom count → molecules, over valid molecules.
    pub atom_count_histogram: BTreeMap<usize, usize>,
    /// Fragment count → molecules, for valid molecules the vocabulary covers.
    pub fragment_count_histogram: BTreeMap<usize, usize>,
    /// Valid molecules the vocabulary could not decompose.
    pub undecomposable: usize,
    pub peak_live_tensor_bytes: Option<usize>,
}

impl GenerationReport {
    /// `emitted` holds parsed lines; the validity denominator is
    /// `n_requested`, so samples that never produced a line count as invalid.
    pub fn compute(
        n_requested: usize,
        emitted: &[Option<MolGraph>],
        train_keys: &HashSet<String>,
        vocab: &FragmentVocab,
        table: &ValenceTable,
        peak_live_tensor_bytes: Option<usize>,
    ) -> Result<GenerationReport, MetricsError> {
        if emitted.is_empty() || n_requested == 0 {
            return Err(MetricsError::EmptySet);
        }
        let n_requested = n_requested.max(emitted.len());
        let valid: Vec<MolGraph> = emitted
            .iter()
            .flatten()
            .filter(|m| !m.is_empty() && matches!(m.valence_violation(table), Ok(None)))
            .cloned()
            .collect();
        let mut atom_count_histogram = BTreeMap::new();
        let mut fragment_count_histogram = BTreeMap::new();
        let mut undecomposable = 0;
        for m in &valid {
            *atom_count_histogram.entry(m.atom_count()).or_default() += 1;
            match decompose(m, vocab) {
                Ok(d) => *fragment_count_histogram.entry(d.len()).or_default() += 1,
                Err(_) => undecomposable += 1,
            }
        }
        let (uniq, nov) = if valid.is_empty() {
            (0.0, 0.0)
        } else {
            (uniqueness(&valid)?, novelty(&valid, train_keys)?)
        };
        Ok(GenerationReport {
            n_requested,
            n_emitted: emitted.len(),
            n_valid: valid.len(),
            validity: percent(valid.len(), n_requested)?,
            uniqueness: uniq,
            novelty: nov,
            atom_count_histogram,
            fragment_count_histogram,
            undecomposable,
            peak_live_tensor_bytes,
        })
    }
}

/// Frequency tables describing a decomposed corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub atom_counts: BTreeMap<usize, usize>,
    pub fragment_counts: BTreeMap<usize, usize>,
    /// Vocabulary size → fragment atom count → share of entries.
    pub fragment_sizes: BTreeMap<usize, BTreeMap<usize, f64>>,
}

pub fn structure_report(corpus: &[Decomposition], vocabs: &[&FragmentVocab]) -> Result<StructureReport, MetricsError> {
    if corpus.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut atom_counts = BTreeMap::new();
    let mut fragment_counts = BTreeMap::new();
    for d in corpus {
        *atom_counts.entry(d.atom_count()).or_default() += 1;
        *fragment_counts.entry(d.len()).or_default() += 1;
    }
    let fragment_sizes = vocabs.iter().map(|v| (v.len(), v.size_proportions())).collect();
    Ok(StructureReport {
        atom_counts,
        fragment_counts,
        fragment_sizes,
    })
}

impl StructureReport {
    /// `count,molecules,frequency` rows.
    fn histogram_csv(header: &str, counts: &BTreeMap<usize, usize>) -> String {
        let total: usize = counts.values().sum();
        let mut out = format!("{header},molecules,frequency\n");
        for (k, c) in counts {
            let _ = writeln!(out, "{k},{c},{:.6}", *c as f64 / total as f64);
        }
        out
    }

    pub fn atom_count_csv(&self) -> String {
        Self::histogram_csv("atoms", &self.atom_counts)
    }

    pub fn fragment_count_csv(&self) -> String {
        Self::histogram_csv("fragments", &self.fragment_counts)
    }

    /// One row per vocabulary size, one column per fragment atom count.
    pub fn fragment_size_csv(&self) -> String {
        let sizes: BTreeSet<usize> = self.fragment_sizes.values().flat_map(|m| m.keys().copied()).collect();
        let mut out = String::from("vocab_size");
        for s in &sizes {
            let _ = write!(out, ",atoms_{s}");
        }
        out.push('\n');
        for (k, props) in &self.fragment_sizes {
            let _ = write!(out, "{k}");
            for s in &sizes {
                let _ = write!(out, ",{:.6}", props.get(s).copied().unwrap_or(0.0));
            }
            out.push('\n');
        }
        out
    }
}
