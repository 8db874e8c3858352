//! Geometry of the data operator `R = r_f r_0ᵀ` relative to the plane
//! spanned by the propagator `Φ` and a sensitivity operator `K_n`.
//!
//! All inner products are Hilbert–Schmidt, `⟨A, B⟩ = tr(Aᵀ B)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bloch::Propagator;
use crate::error::{Error, Result};
use crate::sensitivity::SensitivityOperator;

/// Records with fidelity below this are treated as zero-fidelity.
pub const ZERO_FIDELITY: f64 = 1e-12;

/// One row of sensitivity and geometric factors for a (controller, structure) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub controller_index: usize,
    pub structure_index: usize,
    pub fidelity: f64,
    pub error: f64,
    pub zeta: f64,
    pub f_n: f64,
    pub t_f: f64,
    pub norm_k: f64,
    pub norm_rs: f64,
    pub cos_phi: f64,
    pub sin_phi: f64,
    pub cos_theta: f64,
    pub identity_residual: f64,
    pub pst: bool,
    /// Angles are not defined (`R_S = 0`) or fidelity is numerically zero.
    pub zero_fidelity: bool,
}

impl GeometryRecord {
    pub fn abs_zeta(&self) -> f64 {
        self.zeta.abs()
    }
}

pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Input-output data operator `r_f r_0ᵀ`.
pub fn io_operator(rf: &DVector<f64>, r0: &DVector<f64>) -> DMatrix<f64> {
    rf * r0.transpose()
}

/// Orthogonal projection of `R` onto `span{Φ, K}`.
#[derive(Debug, Clone)]
pub struct Projection {
    pub rs: DMatrix<f64>,
    pub norm_rs: f64,
    /// `⟨R, Φ⟩`, i.e. the fidelity.
    pub r_dot_phi: f64,
    /// `⟨R, K⟩`.
    pub r_dot_k: f64,
    /// Norm of the part of `R_S` orthogonal to `Φ`.
    pub perp_norm: f64,
}

/// `R_S = (⟨R,Φ⟩/N²) Φ + (⟨R,K⟩/‖K‖²) K`.
pub fn project(r: &DMatrix<f64>, phi: &Propagator, k: &SensitivityOperator) -> Result<Projection> {
    let k_sq = k.k.norm_squared();
    if k_sq == 0.0 {
        return Err(Error::ZeroSensitivityNorm);
    }
    // ‖Φ‖² = N² for Φ orthogonal on ℝ^{N²}
    let phi_sq = phi.phi.nrows() as f64;
    let r_dot_phi = inner(r, &phi.phi);
    let r_dot_k = inner(r, &k.k);
    let rs = &phi.phi * (r_dot_phi / phi_sq) + &k.k * (r_dot_k / k_sq);
    let norm_rs = rs.norm();
    let along = inner(&rs, &phi.phi) / phi_sq;
    let perp_norm = (&rs - &phi.phi * along).norm();
    Ok(Projection {
        rs,
        norm_rs,
        r_dot_phi,
        r_dot_k,
        perp_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angles {
    pub cos_phi: f64,
    pub sin_phi: f64,
    pub cos_theta: f64,
}

impl Angles {
    /// `| |cos θ| − sin φ |`; zero when `Φ ⟂ K` holds exactly.
    pub fn frame_defect(&self) -> f64 {
        (self.cos_theta.abs() - self.sin_phi).abs()
    }
}

/// Angles of `R_S` to `Φ` (φ) and to `K` (θ).
///
/// `cos φ = F/(N‖R_S‖)` and `sin φ` is the normalized component of `R_S`
/// orthogonal to `Φ`; neither uses ζ. `cos θ = −ζ/(t_f f_n ‖K‖ ‖R_S‖)` is the
/// ζ-side quantity, set to 0 when `t_f f_n = 0`.
#[allow(clippy::too_many_arguments)]
pub fn angles(
    fidelity: f64,
    zeta: f64,
    n: usize,
    proj: &Projection,
    norm_k: f64,
    f_n: f64,
    t_f: f64,
) -> Result<Angles> {
    if proj.norm_rs <= 0.0 {
        return Err(Error::ZeroProjection);
    }
    let cos_phi = fidelity / (n as f64 * proj.norm_rs);
    let sin_phi = proj.perp_norm / proj.norm_rs;
    let scale = t_f * f_n;
    let cos_theta = if scale != 0.0 {
        -zeta / (scale * norm_k * proj.norm_rs)
    } else {
        0.0
    };
    Ok(Angles {
        cos_phi,
        sin_phi,
        cos_theta,
    })
}

/// Deviation from `|ζ_n| = f_n t_f ‖K_n‖ ‖R_S‖ |sin φ_n|`.
pub fn identity_residual(rec: &GeometryRecord) -> f64 {
    let rhs = rec.f_n * rec.t_f * rec.norm_k * rec.norm_rs * rec.sin_phi.abs();
    (rec.zeta.abs() - rhs).abs()
}

/// `‖r_f − Φ r_0‖ ≤ tol`.
pub fn pst_check(phi: &Propagator, r0: &DVector<f64>, rf: &DVector<f64>, tol: f64) -> bool {
    (rf - &phi.phi * r0).norm() <= tol
}

/// Bound on `|ζ_n|` implied by `‖r_f − Φ r_0‖ ≤ tol`: since `Φᵀ K` is
/// skew-symmetric, `|⟨R, K⟩| ≤ tol ‖K‖`.
pub fn pst_zeta_bound(f_n: f64, t_f: f64, norm_k: f64, tol: f64) -> f64 {
    f_n * t_f * norm_k * tol
}
