//! Atom-level molecules: graph model, SMILES reading and writing, valence rules.

mod canon;
mod corpus;
mod element;
mod graph;
mod smiles;

pub use canon::{canonical_key, write_canonical_smiles};
pub use corpus::{read_corpus, read_corpus_file, CorpusError, Ingested, RejectReason};
pub use element::{Element, ValenceTable};
pub use graph::{Atom, Bond, BondOrder, MolGraph};
pub use smiles::{parse_smiles, parse_smiles_strict, SmilesError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChemError {
    #[error("unsupported element {0:?}")]
    UnknownElement(String),
    #[error("atom index {0} out of range")]
    AtomOutOfRange(usize),
    #[error("atom {0} cannot bond to itself")]
    SelfBond(usize),
    #[error("atoms {0} and {1} are already bonded")]
    DuplicateBond(usize, usize),
    #[error("graph has no atoms")]
    EmptyGraph,
    #[error("fragment is not connected")]
    DisconnectedFragment,
}
