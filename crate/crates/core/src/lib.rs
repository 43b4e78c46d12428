//! Spin lattices, correlator-basis analysis, exact floors and variational
//! Monte Carlo for neural quantum states.

pub mod ansatz;
pub mod error;
pub mod exact;
pub mod fourier;
pub mod hamiltonian;
pub mod lattice;
pub mod linalg;
pub mod restricted;
pub mod vmc;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/correlators.md")]
    mod correlators {}
    #[doc = include_str!("../../../book/src/lattices.md")]
    mod lattices {}
    #[doc = include_str!("../../../book/src/exact.md")]
    mod exact {}
    #[doc = include_str!("../../../book/src/ansatz.md")]
    mod ansatz {}
    #[doc = include_str!("../../../book/src/vmc.md")]
    mod vmc {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
