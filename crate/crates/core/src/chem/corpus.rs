use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use super::{parse_smiles_strict, MolGraph, SmilesError, ValenceTable};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Why a corpus line was dropped at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectReason {
    Syntax,
    UnsupportedElement,
    ChargeOutOfRange,
    Kekulization,
    Valence,
    Disconnected,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::Syntax => "syntax",
            RejectReason::UnsupportedElement => "unsupported_element",
            RejectReason::ChargeOutOfRange => "charge_out_of_range",
            RejectReason::Kekulization => "kekulization",
            RejectReason::Valence => "valence",
            RejectReason::Disconnected => "disconnected",
        };
        f.write_str(s)
    }
}

/// Molecules accepted from a corpus, in file order, plus reject tallies.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub molecules: Vec<MolGraph>,
    pub smiles: Vec<String>,
    pub rejects: BTreeMap<RejectReason, usize>,
}

impl Ingested {
    pub fn reject_count(&self) -> usize {
        self.rejects.values().sum()
    }
}

/// One SMILES per line; blank lines and lines starting with '#' are skipped.
/// Anything after the first whitespace on a line is treated as a name.
pub fn read_corpus(text: &str, table: &ValenceTable) -> Ingested {
    let mut out = Ingested::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let smi = line.split_whitespace().next().unwrap_or(line);
        let reason = match parse_smiles_strict(smi, table) {
            Ok(m) if m.is_connected() => {
                out.molecules.push(m);
                out.smiles.push(smi.to_string());
                continue;
            }
            Ok(_) => RejectReason::Disconnected,
            Err(SmilesError::UnknownElement(_)) => RejectReason::UnsupportedElement,
            Err(SmilesError::ChargeOutOfRange(_)) => RejectReason::ChargeOutOfRange,
            Err(SmilesError::KekulizationFailure) => RejectReason::Kekulization,
            Err(SmilesError::ValenceViolation { .. }) => RejectReason::Valence,
            Err(_) => RejectReason::Syntax,
        };
        *out.rejects.entry(reason).or_default() += 1;
    }
    if out.reject_count() > 0 {
        log::info!(
            "ingestion kept {} molecules, rejected {}",
            out.molecules.len(),
            out.reject_count()
        );
    }
    out
}

pub fn read_corpus_file(path: &Path, table: &ValenceTable) -> Result<Ingested, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(read_corpus(&text, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_comments_and_counts_rejects() {
        let text = "# header\nCCO\n\nC1CC\n[Na+].[Cl-]\nC(C)(C)(C)(C)C\nCC.O\nc1ccccc1 benzene\n";
        let got = read_corpus(text, &ValenceTable::default());
        assert_eq!(got.smiles, vec!["CCO", "c1ccccc1"]);
        assert_eq!(got.rejects[&RejectReason::Syntax], 1);
        assert_eq!(got.rejects[&RejectReason::UnsupportedElement], 1);
        assert_eq!(got.rejects[&RejectReason::Valence], 1);
        assert_eq!(got.rejects[&RejectReason::Disconnected], 1);
        assert_eq!(got.reject_count(), 4);
    }
}
