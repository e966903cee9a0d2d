//! Exact simulation of quantum state transfer on strongly rung-coupled
//! Heisenberg ladders and zig-zag lattices.
//!
//! States are restricted to magnetization sectors ([`sector`]), evolved
//! through cached eigendecompositions ([`propagation`]) and analysed with
//! rung-to-rung and effective-chain fidelities ([`transfer`]), the single
//! qubit encode/decode protocols ([`codec`]) and entanglement and parameter
//! scans ([`analysis`]).

pub mod analysis;
pub mod codec;
pub mod error;
pub mod lattice;
pub mod models;
pub mod propagation;
pub mod sector;
pub mod stats;
pub mod transfer;

pub use error::{QstError, Result};
pub use lattice::{BondKind, Boundary, SpinLattice};
