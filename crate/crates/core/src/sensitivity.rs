//! Differential sensitivity of the fidelity error.
//!
//! With `A = M diag(iλ) M†`, the derivative of `exp((A + δ f S) t_f)` at
//! `δ = 0` is `t_f f · K` where `K = M (Z ⊙ X) M†`, `Z = M† S M`, and `X`
//! holds the divided differences of `exp(iλ t_f)`. The same `K` is the
//! average `∫₀¹ exp(t_f A (1−s)) S exp(t_f A s) ds`, which the quadrature
//! oracle evaluates directly with independently computed exponentials.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::bloch::{basis_state, BlochSystem, Propagator};
use crate::error::{Error, Result};
use crate::hilbert::{sinc, HilbertEvolution};
use crate::network::{perturb, NetworkSpec, SesHamiltonian, UncertaintyStructure};
use crate::quadrature::GaussLegendre;

/// Largest tolerated imaginary entry when mapping eigenbasis results back to ℝ.
pub const IMAG_TOL: f64 = 1e-9;

/// Default quadrature order per panel.
pub const DEFAULT_NODES: usize = 64;

/// `A = M diag(iλ) M†` for a real skew-symmetric `A`.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub m: DMatrix<Complex64>,
    pub lambda: DVector<f64>,
}

pub fn spectral_decompose(a: &DMatrix<f64>) -> Result<SpectralData> {
    let d = a.nrows();
    // iA is Hermitian with eigenvalues μ; A = M diag(−iμ) M†, so λ = −μ.
    let ia = a.map(|x| Complex64::new(0.0, x));
    let eig = SymmetricEigen::try_new(ia, f64::EPSILON, 100_000).ok_or(Error::EigenFailure)?;

    let mut order: Vec<usize> = (0..d).collect();
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|&mu| -mu).collect();
    order.sort_by(|&i, &j| {
        lambda[i].total_cmp(&lambda[j]).then_with(|| {
            let (ci, cj) = (eig.eigenvectors.column(i), eig.eigenvectors.column(j));
            ci.iter()
                .zip(cj.iter())
                .map(|(x, y)| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    let m = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
    let lambda = DVector::from_iterator(d, order.iter().map(|&i| lambda[i]));
    Ok(SpectralData { m, lambda })
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// `M diag(iλ) M†`, for checking the decomposition.
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let diag = DMatrix::from_diagonal(&self.lambda.map(|l| Complex64::new(0.0, l)));
        &self.m * diag * self.m.adjoint()
    }

    pub fn unitarity_defect(&self) -> f64 {
        let d = self.dim();
        (self.m.adjoint() * &self.m - DMatrix::<Complex64>::identity(d, d)).norm()
    }

    /// `Φ = M diag(e^{iλ t}) M†`, real part.
    pub fn propagator(&self, t: f64) -> Propagator {
        let diag = DMatrix::from_diagonal(&self.lambda.map(|l| Complex64::from_polar(1.0, l * t)));
        let phi = (&self.m * diag * self.m.adjoint()).map(|z| z.re);
        Propagator { phi }
    }

    /// `M† S M`.
    pub fn to_eigenbasis(&self, s: &DMatrix<f64>) -> DMatrix<Complex64> {
        let sc = s.map(|x| Complex64::new(x, 0.0));
        self.m.adjoint() * sc * &self.m
    }

    /// Default threshold below which two eigenvalues count as equal.
    pub fn degeneracy_tol(&self) -> f64 {
        1e-10 * self.lambda.amax()
    }
}

/// `Z ⊙ X`. Off-diagonal divided differences are evaluated in the half-angle
/// form `e^{i(λ_k+λ_ℓ)t/2} sinc((λ_k−λ_ℓ)t/2)`, which is algebraically the
/// same quotient without the cancellation. Pairs closer than
/// `degeneracy_tol` take the limiting value, with the phase at the midpoint
/// so both branches meet continuously.
pub fn hadamard_core(
    z: &DMatrix<Complex64>,
    lambda: &DVector<f64>,
    t_f: f64,
    degeneracy_tol: f64,
) -> DMatrix<Complex64> {
    let d = lambda.len();
    DMatrix::from_fn(d, d, |k, l| {
        let zkl = z[(k, l)];
        if t_f == 0.0 {
            return zkl;
        }
        let (lk, ll) = (lambda[k], lambda[l]);
        let phase = Complex64::from_polar(1.0, 0.5 * (lk + ll) * t_f);
        if (lk - ll).abs() <= degeneracy_tol {
            zkl * phase
        } else {
            zkl * phase * sinc(0.5 * (lk - ll) * t_f)
        }
    })
}

/// `K = M (Z ⊙ X) M†` together with the eigenbasis core `Q = Z ⊙ X`.
#[derive(Debug, Clone)]
pub struct SensitivityOperator {
    pub k: DMatrix<f64>,
    pub q: DMatrix<Complex64>,
    /// `‖K‖ = sqrt(Σ |q_kℓ|²)`.
    pub norm_k: f64,
}

impl SensitivityOperator {
    /// `W = Φᵀ K`, skew-symmetric for any structure.
    pub fn w(&self, phi: &Propagator) -> DMatrix<f64> {
        phi.phi.transpose() * &self.k
    }
}

pub fn sensitivity_operator(
    spectral: &SpectralData,
    s_bloch: &DMatrix<f64>,
    t_f: f64,
) -> Result<SensitivityOperator> {
    let z = spectral.to_eigenbasis(s_bloch);
    let q = hadamard_core(&z, &spectral.lambda, t_f, spectral.degeneracy_tol());
    let kc = &spectral.m * &q * spectral.m.adjoint();
    let imag = kc.iter().fold(0.0f64, |acc, z| acc.max(z.im.abs()));
    if imag > IMAG_TOL {
        return Err(Error::ImaginaryResidue(imag));
    }
    let norm_k = q.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok(SensitivityOperator {
        k: kc.map(|z| z.re),
        q,
        norm_k,
    })
}

/// `ζ_n = −t_f f_n u†(Z ⊙ X)v` with `u = M† r_f`, `v = M† r_0`.
pub fn differential_sensitivity(
    sys: &BlochSystem,
    spectral: &SpectralData,
    op: &SensitivityOperator,
    f_n: f64,
) -> f64 {
    if f_n == 0.0 || sys.t_f == 0.0 {
        return 0.0;
    }
    let to_c = |v: &DVector<f64>| v.map(|x| Complex64::new(x, 0.0));
    let u = spectral.m.adjoint() * to_c(&sys.rf);
    let v = spectral.m.adjoint() * to_c(&sys.r0);
    let uqv = (u.adjoint() * &op.q * v)[(0, 0)];
    -sys.t_f * f_n * uqv.re
}

/// Number of equal panels that keeps the phase swept per panel moderate for
/// a fixed-order rule. `‖A‖_F` bounds every eigenvalue gap of `A`.
pub fn panels_for(a: &DMatrix<f64>, t_f: f64) -> usize {
    let sweep = 2.0 * a.norm() * t_f.abs();
    ((sweep / 40.0).ceil() as usize).max(1)
}

/// `∫₀¹ exp(t A(1−s)) S exp(t A s) ds` by composite Gauss–Legendre with
/// exponentials from scaling-and-squaring.
pub fn quadrature_operator(
    a: &DMatrix<f64>,
    s_bloch: &DMatrix<f64>,
    t_f: f64,
    rule: &GaussLegendre,
    panels: usize,
) -> DMatrix<f64> {
    rule.integrate(panels, |s| {
        let left = (a * (t_f * (1.0 - s))).exp();
        let right = (a * (t_f * s)).exp();
        left * s_bloch * right
    })
}

/// `ζ_n` from the integral form, contracting with the Bloch vectors at each
/// node instead of forming the full operator.
#[allow(clippy::too_many_arguments)]
pub fn quadrature_oracle(
    a: &DMatrix<f64>,
    s_bloch: &DMatrix<f64>,
    t_f: f64,
    r0: &DVector<f64>,
    rf: &DVector<f64>,
    f_n: f64,
    rule: &GaussLegendre,
    panels: usize,
) -> f64 {
    if t_f == 0.0 || f_n == 0.0 {
        return 0.0;
    }
    let at = a.transpose();
    let integral = rule.integrate(panels, |s| {
        let left = (&at * (t_f * (1.0 - s))).exp() * rf;
        let right = (a * (t_f * s)).exp() * r0;
        left.dot(&(s_bloch * right))
    });
    -t_f * f_n * integral
}

/// Central difference `(e(+h) − e(−h)) / 2h`, re-propagating the perturbed
/// Hamiltonian in Hilbert space for each side.
pub fn fd_oracle(
    spec: &NetworkSpec,
    h: &SesHamiltonian,
    structure: &UncertaintyStructure,
    t_f: f64,
    step: f64,
) -> f64 {
    let n = spec.num_spins;
    let psi0 = basis_state(n, spec.input_index());
    let psif = basis_state(n, spec.output_index());
    let error = |delta: f64| {
        let p = perturb(h, structure, delta);
        1.0 - HilbertEvolution::new(&p.matrix)
            .amplitude(&psi0, &psif, t_f)
            .norm_sqr()
    };
    (error(step) - error(-step)) / (2.0 * step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::{adjoint_rep_real, fidelity, gell_mann_basis};
    use crate::network::{build_hamiltonian, enumerate_structures, scaling_factor};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn setup(spec: &NetworkSpec, d: &[f64], t: f64) -> (SesHamiltonian, BlochSystem, SpectralData) {
        let h = build_hamiltonian(spec, d).unwrap();
        let sys = BlochSystem::for_transfer(spec, &h, t).unwrap();
        let sd = spectral_decompose(&sys.a).unwrap();
        (h, sys, sd)
    }

    #[test]
    fn zero_generator() {
        let sd = spectral_decompose(&DMatrix::zeros(4, 4)).unwrap();
        assert!(sd.lambda.iter().all(|&l| l == 0.0));
        assert!(sd.unitarity_defect() < 1e-14);
        let p = sd.propagator(3.0);
        assert!((p.phi - DMatrix::<f64>::identity(4, 4)).amax() < 1e-14);
    }

    #[test]
    fn two_spin_generator_spectrum() {
        let b = gell_mann_basis(2).unwrap();
        let a = adjoint_rep_real(&DMatrix::from_row_slice(2, 2, &[0., 1., 1., 0.]), &b).unwrap();
        let sd = spectral_decompose(&a).unwrap();
        let expected = [-2.0, 0.0, 0.0, 2.0];
        for (l, e) in sd.lambda.iter().zip(expected) {
            assert!((l - e).abs() < 1e-12, "{}", sd.lambda);
        }
        assert!((sd.reconstruct() - a.map(|x| Complex64::new(x, 0.0))).norm() < 1e-12);
    }

    #[test]
    fn reconstruction_on_rings() {
        for (n, d) in [
            (3, vec![0.1, 2.0, -1.0]),
            (5, vec![1.0, 0.0, 3.0, -2.0, 0.5]),
        ] {
            let spec = NetworkSpec::ring(n, 1, 2).unwrap();
            let (_, sys, sd) = setup(&spec, &d, 1.0);
            let a = sys.a.map(|x| Complex64::new(x, 0.0));
            assert!((sd.reconstruct() - a).norm() <= 1e-9);
            assert!(sd.unitarity_defect() <= 1e-10);
            assert!(sd.lambda.as_slice().windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn hadamard_entries() {
        let lambda = DVector::from_vec(vec![-1.0, 0.0, 0.0, 2.5]);
        let z = DMatrix::from_fn(4, 4, |k, l| Complex64::new(1.0 + k as f64, 0.5 - l as f64));
        let t = 1.7;
        let q = hadamard_core(&z, &lambda, t, 1e-12);
        for k in 0..4 {
            assert!((q[(k, k)].norm() - z[(k, k)].norm()).abs() < 1e-14);
            for l in 0..4 {
                let w = lambda[k] - lambda[l];
                let expected = z[(k, l)].norm() * sinc(0.5 * w * t).abs();
                assert!((q[(k, l)].norm() - expected).abs() < 1e-14);
                if w != 0.0 {
                    // literal quotient
                    let num = Complex64::from_polar(1.0, lambda[k] * t)
                        - Complex64::from_polar(1.0, lambda[l] * t);
                    let lit = z[(k, l)] * num / Complex64::new(0.0, t * w);
                    assert!((q[(k, l)] - lit).norm() < 1e-13);
                }
            }
        }
        // a full period of the gap zeroes the entry
        let lambda = DVector::from_vec(vec![0.0, 1.0]);
        let q = hadamard_core(
            &DMatrix::from_element(2, 2, Complex64::new(1.0, 0.0)),
            &lambda,
            2.0 * PI,
            0.0,
        );
        assert!(q[(0, 1)].norm() < 1e-15);
        // t_f = 0 leaves Z unchanged
        let q = hadamard_core(
            &z,
            &DVector::from_vec(vec![-1.0, 0.0, 0.0, 2.5]),
            0.0,
            1e-12,
        );
        assert_eq!(q, z);
    }

    #[test]
    fn operator_matches_integral() {
        let spec = NetworkSpec::ring(3, 1, 3).unwrap();
        let (_, sys, sd) = setup(&spec, &[0.7, -0.3, 1.1], 2.3);
        let b = gell_mann_basis(3).unwrap();
        for st in enumerate_structures(&spec) {
            let s = adjoint_rep_real(&st.matrix, &b).unwrap();
            let op = sensitivity_operator(&sd, &s, sys.t_f).unwrap();
            let quad = quadrature_operator(
                &sys.a,
                &s,
                sys.t_f,
                &GaussLegendre::new(64),
                panels_for(&sys.a, sys.t_f),
            );
            assert!((&op.k - quad).amax() < 1e-10, "{st}");
            assert!((op.norm_k - op.k.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn lemma_style_identities() {
        let spec = NetworkSpec::ring(4, 1, 2).unwrap();
        let (_, sys, sd) = setup(&spec, &[2.0, 0.5, -1.5, 3.0], 4.2);
        let phi = sd.propagator(sys.t_f);
        let b = gell_mann_basis(4).unwrap();
        for st in enumerate_structures(&spec) {
            let s = adjoint_rep_real(&st.matrix, &b).unwrap();
            assert!(s.trace().abs() < 1e-14);
            assert!((&s + s.transpose()).amax() < 1e-14);
            let op = sensitivity_operator(&sd, &s, sys.t_f).unwrap();
            let inner = (phi.phi.transpose() * &op.k).trace();
            assert!(inner.abs() < 1e-9, "{st}: {inner}");
            assert!(op.norm_k > 0.0 && op.norm_k <= s.norm() + 1e-9);
            let w = op.w(&phi);
            assert!((&w + w.transpose()).amax() < 1e-9);
        }
    }

    #[test]
    fn perfect_transfer_has_zero_sensitivity() {
        let spec = NetworkSpec::chain(2, 1, 2).unwrap();
        let (h, sys, sd) = setup(&spec, &[0.0, 0.0], FRAC_PI_2);
        let b = gell_mann_basis(2).unwrap();
        for st in enumerate_structures(&spec) {
            let s = adjoint_rep_real(&st.matrix, &b).unwrap();
            let op = sensitivity_operator(&sd, &s, sys.t_f).unwrap();
            // force unit scaling so bias structures are exercised as well
            let zeta = differential_sensitivity(&sys, &sd, &op, 1.0);
            assert!(zeta.abs() < 1e-9, "{st}: {zeta}");
            let fd = fd_oracle(&spec, &h, &st, sys.t_f, 1e-5);
            assert!(fd.abs() <= 1e-7);
        }
    }

    #[test]
    fn zero_scaling_and_zero_structure() {
        let spec = NetworkSpec::ring(3, 1, 2).unwrap();
        let (_, sys, sd) = setup(&spec, &[0.2, 0.0, 1.0], 1.5);
        let s = DMatrix::zeros(9, 9);
        let op = sensitivity_operator(&sd, &s, sys.t_f).unwrap();
        assert_eq!(differential_sensitivity(&sys, &sd, &op, 0.0), 0.0);
        let rule = GaussLegendre::new(16);
        assert_eq!(
            quadrature_oracle(&sys.a, &s, sys.t_f, &sys.r0, &sys.rf, 1.0, &rule, 1),
            0.0
        );
        let b = gell_mann_basis(3).unwrap();
        let s1 = adjoint_rep_real(&enumerate_structures(&spec)[3].matrix, &b).unwrap();
        assert_eq!(
            quadrature_oracle(&sys.a, &s1, 0.0, &sys.r0, &sys.rf, 1.0, &rule, 1),
            0.0
        );
    }

    #[test]
    fn three_routes_agree_on_a_ring() {
        let spec = NetworkSpec::ring(4, 1, 2).unwrap();
        let d = [1.2, -0.4, 0.8, 2.0];
        let (h, sys, sd) = setup(&spec, &d, 2.7);
        let b = gell_mann_basis(4).unwrap();
        let rule = GaussLegendre::new(DEFAULT_NODES);
        for st in enumerate_structures(&spec) {
            let f = scaling_factor(&st, &d);
            let s = adjoint_rep_real(&st.matrix, &b).unwrap();
            let op = sensitivity_operator(&sd, &s, sys.t_f).unwrap();
            let zeta = differential_sensitivity(&sys, &sd, &op, f);
            let direct = -sys.t_f * f * sys.rf.dot(&(&op.k * &sys.r0));
            assert!((zeta - direct).abs() < 1e-12);
            let quad = quadrature_oracle(
                &sys.a,
                &s,
                sys.t_f,
                &sys.r0,
                &sys.rf,
                f,
                &rule,
                panels_for(&sys.a, sys.t_f),
            );
            assert!(
                (zeta - quad).abs() <= 1e-8 * zeta.abs().max(1e-2),
                "{st}: {zeta} vs {quad}"
            );
            let fd = fd_oracle(&spec, &h, &st, sys.t_f, 1e-5);
            assert!(
                (zeta - fd).abs() <= (1e-6 * zeta.abs()).max(1e-8),
                "{st}: {zeta} vs {fd}"
            );
            let fd_neg = fd_oracle(&spec, &h, &st, sys.t_f, -1e-5);
            assert!((fd - fd_neg).abs() < 1e-15);
        }
        let phi = sd.propagator(sys.t_f);
        let (f, _) = fidelity(&sys.rf, &phi, &sys.r0);
        assert!(f > 0.0 && f < 1.0);
    }
}
