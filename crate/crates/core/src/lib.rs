//! Bi-encoder training objectives for graded relevance supervision.
//!
//! The crate bundles a small trainable text encoder ([`embed`]), seven
//! batch ranking objectives with analytic gradients ([`losses`]), graded
//! datasets and their transforms ([`data`]), an Adam training loop with a
//! finite-difference gradient checker ([`trainer`]), and nDCG evaluation with
//! the experiment sweeps ([`eval`]).

pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod losses;
pub mod matrix;
pub mod trainer;

pub use error::{Error, Result};
