//! Differential sensitivity of state-transfer fidelity in spin networks.
//!
//! Networks are single-excitation XX rings or chains steered by static
//! on-site biases. The crate synthesizes bias controllers, evaluates the
//! transfer fidelity in Bloch form, computes the sensitivity of the fidelity
//! error to structured Hamiltonian perturbations, and splits it into the
//! geometric factors `f_n * t_f * ||K_n|| * ||R_S|| * |sin phi_n|`.

// NaN must fail every `value <= bound` check, so negated comparisons are
// used on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod bloch;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod hilbert;
pub mod io;
pub mod network;
pub mod quadrature;
pub mod sensitivity;
pub mod synthesis;
pub mod verify;

pub use analytics::{analyze, Analysis, CorrelationSummary, StructureSet};
pub use bloch::{fidelity, gell_mann_basis, propagator, BlochSystem, HermitianBasis, Propagator};
pub use error::{Error, Result};
pub use geometry::GeometryRecord;
pub use network::{
    build_hamiltonian, enumerate_structures, perturb, scaling_factor, NetworkSpec, SesHamiltonian,
    Topology, UncertaintyStructure,
};
pub use sensitivity::{
    differential_sensitivity, sensitivity_operator, spectral_decompose, SensitivityOperator,
    SpectralData,
};
pub use synthesis::{local_optimize, synthesize_ensemble, Controller, SynthesisConfig};
