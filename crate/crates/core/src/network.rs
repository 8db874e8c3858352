//! Single-excitation-subspace Hamiltonians for rings and chains with static
//! bias controls, plus the structured perturbations applied to them.
//!
//! Spins are 1-indexed wherever they cross an I/O boundary (`NetworkSpec`,
//! structure labels, CSV rows) and 0-indexed inside matrices.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Ring,
    Chain,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Ring => write!(f, "ring"),
            Topology::Chain => write!(f, "chain"),
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ring" => Ok(Topology::Ring),
            "chain" => Ok(Topology::Chain),
            other => Err(Error::InvalidSpec(format!("unknown topology `{other}`"))),
        }
    }
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

fn default_coupling() -> f64 {
    1.0
}

/// Network geometry and the transfer pair. Serialized as
/// `{"n", "topology", "j", "in", "out"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(rename = "n")]
    pub num_spins: usize,
    pub topology: Topology,
    #[serde(rename = "j", default = "default_coupling")]
    pub coupling: f64,
    #[serde(rename = "in")]
    pub input_spin: usize,
    #[serde(rename = "out")]
    pub output_spin: usize,
    /// ZZ anisotropy. Accepted on input but only zero is supported.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub kappa: f64,
}

impl NetworkSpec {
    pub fn new(
        num_spins: usize,
        topology: Topology,
        coupling: f64,
        input_spin: usize,
        output_spin: usize,
    ) -> Result<Self> {
        let spec = Self {
            num_spins,
            topology,
            coupling,
            input_spin,
            output_spin,
            kappa: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn ring(num_spins: usize, input_spin: usize, output_spin: usize) -> Result<Self> {
        Self::new(num_spins, Topology::Ring, 1.0, input_spin, output_spin)
    }

    pub fn chain(num_spins: usize, input_spin: usize, output_spin: usize) -> Result<Self> {
        Self::new(num_spins, Topology::Chain, 1.0, input_spin, output_spin)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_spins;
        if n < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 spins, got {n}"
            )));
        }
        if !(self.coupling.is_finite() && self.coupling > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "coupling must be positive, got {}",
                self.coupling
            )));
        }
        if self.kappa != 0.0 {
            return Err(Error::InvalidSpec(
                "kappa != 0 is not supported in the single-excitation model".into(),
            ));
        }
        for (name, spin) in [("in", self.input_spin), ("out", self.output_spin)] {
            if spin < 1 || spin > n {
                return Err(Error::InvalidSpec(format!(
                    "{name} spin {spin} outside 1..={n}"
                )));
            }
        }
        if self.input_spin == self.output_spin {
            return Err(Error::InvalidSpec(
                "input and output spins must differ".into(),
            ));
        }
        Ok(())
    }

    /// Coupled pairs (0-indexed, `a < b`) in structure order: the chain bonds
    /// ascending, then the ring closure. A 2-ring has a single bond.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_spins;
        let mut edges: Vec<_> = (0..n - 1).map(|k| (k, k + 1)).collect();
        if self.topology == Topology::Ring && n > 2 {
            edges.push((0, n - 1));
        }
        edges
    }

    pub fn input_index(&self) -> usize {
        self.input_spin - 1
    }

    pub fn output_index(&self) -> usize {
        self.output_spin - 1
    }
}

/// Real symmetric SES Hamiltonian together with the bias vector on its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SesHamiltonian {
    pub matrix: DMatrix<f64>,
    pub biases: Vec<f64>,
}

impl SesHamiltonian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn build_hamiltonian(spec: &NetworkSpec, biases: &[f64]) -> Result<SesHamiltonian> {
    spec.validate()?;
    let n = spec.num_spins;
    if biases.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: biases.len(),
        });
    }
    let mut h = DMatrix::zeros(n, n);
    for (k, &d) in biases.iter().enumerate() {
        h[(k, k)] = d;
    }
    for (a, b) in spec.edges() {
        h[(a, b)] = spec.coupling;
        h[(b, a)] = spec.coupling;
    }
    Ok(SesHamiltonian {
        matrix: h,
        biases: biases.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructureKind {
    /// Uncertainty in the bias on one site (0-indexed).
    Bias { site: usize },
    /// Uncertainty in the coupling between two sites (0-indexed, `a < b`).
    Coupling { a: usize, b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingRule {
    /// Scaled by the magnitude of the control field on the site.
    ControlField,
    Unity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyStructure {
    /// 1-based structure index `n`.
    pub index: usize,
    pub kind: StructureKind,
    pub matrix: DMatrix<f64>,
    pub scaling_rule: ScalingRule,
}

impl fmt::Display for UncertaintyStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            StructureKind::Bias { site } => write!(f, "n={} bias({})", self.index, site + 1),
            StructureKind::Coupling { a, b } => {
                write!(f, "n={} coupling({},{})", self.index, a + 1, b + 1)
            }
        }
    }
}

/// Biases first (`n = 1..N`), then one structure per coupled pair in the
/// order of [`NetworkSpec::edges`].
pub fn enumerate_structures(spec: &NetworkSpec) -> Vec<UncertaintyStructure> {
    let n = spec.num_spins;
    let mut out = Vec::with_capacity(n + spec.edges().len());
    for site in 0..n {
        let mut m = DMatrix::zeros(n, n);
        m[(site, site)] = 1.0;
        out.push(UncertaintyStructure {
            index: out.len() + 1,
            kind: StructureKind::Bias { site },
            matrix: m,
            scaling_rule: ScalingRule::ControlField,
        });
    }
    for (a, b) in spec.edges() {
        let mut m = DMatrix::zeros(n, n);
        m[(a, b)] = 1.0;
        m[(b, a)] = 1.0;
        out.push(UncertaintyStructure {
            index: out.len() + 1,
            kind: StructureKind::Coupling { a, b },
            matrix: m,
            scaling_rule: ScalingRule::Unity,
        });
    }
    out
}

/// `f_n`: `|Δ_site|` for bias structures, 1 otherwise.
pub fn scaling_factor(structure: &UncertaintyStructure, biases: &[f64]) -> f64 {
    match (structure.scaling_rule, structure.kind) {
        (ScalingRule::ControlField, StructureKind::Bias { site }) => biases[site].abs(),
        _ => 1.0,
    }
}

/// `H + δ·f_n·S_n`, with `f_n` taken from the nominal biases of `h`.
pub fn perturb(h: &SesHamiltonian, structure: &UncertaintyStructure, delta: f64) -> SesHamiltonian {
    let f = scaling_factor(structure, &h.biases);
    let matrix = &h.matrix + &structure.matrix * (delta * f);
    let biases = (0..h.dim()).map(|k| matrix[(k, k)]).collect();
    SesHamiltonian { matrix, biases }
}
