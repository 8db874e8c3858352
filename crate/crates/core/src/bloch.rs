//! Real adjoint ("Bloch") representation of closed-system dynamics.
//!
//! Coordinates are `r_m = tr(ρ σ_m)` over an orthonormal Hermitian basis of
//! size N², identity included, so unitary evolution becomes a rotation
//! `ṙ = A r` with `A` skew-symmetric.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{NetworkSpec, SesHamiltonian};
use crate::sensitivity::spectral_decompose;

const HERMITIAN_TOL: f64 = 1e-12;
const NORM_TOL: f64 = 1e-10;

/// Orthonormal basis of the N×N Hermitian matrices under `tr(σ_m σ_l) = δ_ml`.
#[derive(Debug, Clone)]
pub struct HermitianBasis {
    pub dim: usize,
    pub elements: Vec<DMatrix<Complex64>>,
}

impl HermitianBasis {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Matrix of trace inner products `tr(σ_m σ_l)`.
    pub fn gram(&self) -> DMatrix<Complex64> {
        let d = self.len();
        DMatrix::from_fn(d, d, |m, l| {
            trace_product(&self.elements[m], &self.elements[l])
        })
    }
}

static BASIS_CACHE: OnceLock<RwLock<HashMap<usize, Arc<HermitianBasis>>>> = OnceLock::new();

/// Generalized Gell-Mann basis, normalized to unit trace norm.
///
/// Ordering: symmetric pairs for ascending `(j, k)`, antisymmetric pairs in
/// the same order, the N−1 traceless diagonals, then `I/√N` last.
pub fn gell_mann_basis(n: usize) -> Result<Arc<HermitianBasis>> {
    if n < 2 {
        return Err(Error::InvalidSpec(format!(
            "basis dimension must be >= 2, got {n}"
        )));
    }
    let cache = BASIS_CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(b) = cache.read().expect("basis cache poisoned").get(&n) {
        return Ok(Arc::clone(b));
    }
    let basis = Arc::new(build_gell_mann(n));
    let mut w = cache.write().expect("basis cache poisoned");
    Ok(Arc::clone(w.entry(n).or_insert(basis)))
}

fn build_gell_mann(n: usize) -> HermitianBasis {
    let zero = Complex64::new(0.0, 0.0);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut elements = Vec::with_capacity(n * n);
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| (j + 1..n).map(move |k| (j, k)))
        .collect();

    for &(j, k) in &pairs {
        let mut m = DMatrix::from_element(n, n, zero);
        m[(j, k)] = Complex64::new(s, 0.0);
        m[(k, j)] = Complex64::new(s, 0.0);
        elements.push(m);
    }
    for &(j, k) in &pairs {
        let mut m = DMatrix::from_element(n, n, zero);
        m[(j, k)] = Complex64::new(0.0, -s);
        m[(k, j)] = Complex64::new(0.0, s);
        elements.push(m);
    }
    for l in 1..n {
        let c = 1.0 / ((l * (l + 1)) as f64).sqrt();
        let mut m = DMatrix::from_element(n, n, zero);
        for j in 0..l {
            m[(j, j)] = Complex64::new(c, 0.0);
        }
        m[(l, l)] = Complex64::new(-(l as f64) * c, 0.0);
        elements.push(m);
    }
    let id = Complex64::new(1.0 / (n as f64).sqrt(), 0.0);
    elements.push(DMatrix::from_diagonal_element(n, n, id));

    HermitianBasis { dim: n, elements }
}

/// `tr(X Y)` without forming the product.
fn trace_product(x: &DMatrix<Complex64>, y: &DMatrix<Complex64>) -> Complex64 {
    let n = x.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += x[(i, j)] * y[(j, i)];
        }
    }
    acc
}

fn hermitian_defect(h: &DMatrix<Complex64>) -> f64 {
    (h - h.adjoint()).norm()
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Real generator `A` of `ρ̇ = −i[H, ρ]` in Bloch coordinates.
///
/// `A_mn = tr(σ_m · (−i)[H, σ_n])`, i.e. `tr(iH[σ_m, σ_n])`. This index
/// order is the one that reproduces Hilbert-space propagation; the
/// transposed order generates the time-reversed flow.
pub fn adjoint_rep(h: &DMatrix<Complex64>, basis: &HermitianBasis) -> Result<DMatrix<f64>> {
    let n = basis.dim;
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: h.nrows(),
        });
    }
    let defect = hermitian_defect(h);
    if defect > HERMITIAN_TOL * h.norm().max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    let minus_i = Complex64::new(0.0, -1.0);
    let d = basis.len();
    let mut a = DMatrix::zeros(d, d);
    for (col, sigma_n) in basis.elements.iter().enumerate() {
        let comm = (h * sigma_n - sigma_n * h) * minus_i;
        for (row, sigma_m) in basis.elements.iter().enumerate() {
            a[(row, col)] = trace_product(sigma_m, &comm).re;
        }
    }
    Ok(a)
}

pub fn adjoint_rep_real(h: &DMatrix<f64>, basis: &HermitianBasis) -> Result<DMatrix<f64>> {
    adjoint_rep(&to_complex(h), basis)
}

/// Computational basis state `|k⟩` (0-indexed).
pub fn basis_state(n: usize, k: usize) -> DVector<Complex64> {
    let mut v = DVector::from_element(n, Complex64::new(0.0, 0.0));
    v[k] = Complex64::new(1.0, 0.0);
    v
}

pub fn state_to_bloch(psi: &DVector<Complex64>, basis: &HermitianBasis) -> Result<DVector<f64>> {
    if psi.len() != basis.dim {
        return Err(Error::DimensionMismatch {
            expected: basis.dim,
            got: psi.len(),
        });
    }
    let norm = psi.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized(norm));
    }
    Ok(DVector::from_iterator(
        basis.len(),
        basis
            .elements
            .iter()
            .map(|s| (psi.adjoint() * s * psi)[(0, 0)].re),
    ))
}

/// Bloch coordinates of an arbitrary Hermitian operator (e.g. a density matrix).
pub fn operator_to_bloch(rho: &DMatrix<Complex64>, basis: &HermitianBasis) -> DVector<f64> {
    DVector::from_iterator(
        basis.len(),
        basis.elements.iter().map(|s| trace_product(rho, s).re),
    )
}

/// Everything needed to evaluate transfer fidelity in Bloch form.
#[derive(Debug, Clone)]
pub struct BlochSystem {
    pub a: DMatrix<f64>,
    pub r0: DVector<f64>,
    pub rf: DVector<f64>,
    pub basis: Arc<HermitianBasis>,
    pub t_f: f64,
}

impl BlochSystem {
    /// Basis-state transfer `|in⟩ → |out⟩` under `h` for read-out time `t_f`.
    pub fn for_transfer(spec: &NetworkSpec, h: &SesHamiltonian, t_f: f64) -> Result<Self> {
        let n = spec.num_spins;
        Self::from_states(
            &h.matrix,
            &basis_state(n, spec.input_index()),
            &basis_state(n, spec.output_index()),
            t_f,
        )
    }

    pub fn from_states(
        h: &DMatrix<f64>,
        psi0: &DVector<Complex64>,
        psif: &DVector<Complex64>,
        t_f: f64,
    ) -> Result<Self> {
        if !(t_f >= 0.0 && t_f.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "read-out time must be >= 0, got {t_f}"
            )));
        }
        let basis = gell_mann_basis(h.nrows())?;
        let a = adjoint_rep_real(h, &basis)?;
        let r0 = state_to_bloch(psi0, &basis)?;
        let rf = state_to_bloch(psif, &basis)?;
        Ok(Self {
            a,
            r0,
            rf,
            basis,
            t_f,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim
    }
}

/// Orthogonal propagator `Φ = exp(A t_f)` on ℝ^{N²}.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    pub phi: DMatrix<f64>,
}

impl Propagator {
    pub fn orthogonality_defect(&self) -> f64 {
        let d = self.phi.nrows();
        (self.phi.transpose() * &self.phi - DMatrix::<f64>::identity(d, d)).norm()
    }
}

/// Built from the same eigensystem the sensitivity engine uses.
pub fn propagator(a: &DMatrix<f64>, t_f: f64) -> Result<Propagator> {
    Ok(spectral_decompose(a)?.propagator(t_f))
}

/// Returns `(F, e)` with `F = r_fᵀ Φ r_0` and `e = 1 − F`.
pub fn fidelity(rf: &DVector<f64>, phi: &Propagator, r0: &DVector<f64>) -> (f64, f64) {
    let f = rf.dot(&(&phi.phi * r0));
    (f, 1.0 - f)
}
