//! Fragment-level score-based diffusion with bond-scored assembly for
//! organic molecule generation.

pub mod assemble;
pub mod bonds;
pub mod chem;
pub mod metrics;
pub mod nets;
pub mod sde;
pub mod tensor;
pub mod vocab;
