//! Per-record evaluation of sensitivity and geometry over a controller
//! ensemble, and the correlation statistics computed from it.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bloch::{adjoint_rep_real, fidelity, gell_mann_basis, BlochSystem};
use crate::error::Result;
use crate::geometry::{
    angles, identity_residual, io_operator, project, pst_check, GeometryRecord, ZERO_FIDELITY,
};
use crate::network::{
    build_hamiltonian, enumerate_structures, scaling_factor, NetworkSpec, UncertaintyStructure,
};
use crate::sensitivity::{differential_sensitivity, sensitivity_operator, spectral_decompose};
use crate::synthesis::Controller;

/// Tolerance on `‖r_f − Φ r_0‖` for flagging perfect state transfer.
pub const PST_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two samples")]
    TooShort,
    #[error("statistic undefined for constant input")]
    Degenerate,
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> std::result::Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooShort);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Degenerate);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Kendall's τ-b over all pairs, O(n²).
pub fn kendall(x: &[f64], y: &[f64]) -> std::result::Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooShort);
    }
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let sx = (x[i] - x[j]).partial_cmp(&0.0).map_or(0, |o| o as i8);
            let sy = (y[i] - y[j]).partial_cmp(&0.0).map_or(0, |o| o as i8);
            match (sx, sy) {
                (0, 0) => {}
                (0, _) => tie_x += 1,
                (_, 0) => tie_y += 1,
                _ if sx == sy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let base = (concordant + discordant) as f64;
    let denom = ((base + tie_x as f64) * (base + tie_y as f64)).sqrt();
    if denom == 0.0 {
        return Err(StatsError::Degenerate);
    }
    Ok((concordant as f64 - discordant as f64) / denom)
}

/// Structures of a network together with their Bloch images.
#[derive(Debug, Clone)]
pub struct StructureSet {
    pub structures: Vec<UncertaintyStructure>,
    pub images: Vec<DMatrix<f64>>,
}

impl StructureSet {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        let basis = gell_mann_basis(spec.num_spins)?;
        let structures = enumerate_structures(spec);
        let images = structures
            .iter()
            .map(|s| adjoint_rep_real(&s.matrix, &basis))
            .collect::<Result<_>>()?;
        Ok(Self { structures, images })
    }

    pub fn len(&self) -> usize {
        self.structures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structures.is_empty()
    }
}

/// Every record for one controller. The eigensystem is computed once and
/// shared by all structures.
pub fn evaluate_controller(
    spec: &NetworkSpec,
    set: &StructureSet,
    biases: &[f64],
    t_f: f64,
    controller_index: usize,
) -> Result<Vec<GeometryRecord>> {
    let h = build_hamiltonian(spec, biases)?;
    let sys = BlochSystem::for_transfer(spec, &h, t_f)?;
    let sd = spectral_decompose(&sys.a)?;
    let phi = sd.propagator(t_f);
    let (f, e) = fidelity(&sys.rf, &phi, &sys.r0);
    let r = io_operator(&sys.rf, &sys.r0);
    let pst = pst_check(&phi, &sys.r0, &sys.rf, PST_TOL);
    let n = spec.num_spins;

    set.structures
        .iter()
        .zip(&set.images)
        .map(|(st, image)| {
            let f_n = scaling_factor(st, biases);
            let op = sensitivity_operator(&sd, image, t_f)?;
            let zeta = differential_sensitivity(&sys, &sd, &op, f_n);
            let proj = project(&r, &phi, &op)?;
            let angle = angles(f, zeta, n, &proj, op.norm_k, f_n, t_f);
            let zero_fidelity = f < ZERO_FIDELITY || angle.is_err();
            let (cos_phi, sin_phi, cos_theta) = match angle {
                Ok(a) => (a.cos_phi, a.sin_phi, a.cos_theta),
                Err(_) => (f64::NAN, f64::NAN, f64::NAN),
            };
            let mut rec = GeometryRecord {
                controller_index,
                structure_index: st.index,
                fidelity: f,
                error: e,
                zeta,
                f_n,
                t_f,
                norm_k: op.norm_k,
                norm_rs: proj.norm_rs,
                cos_phi,
                sin_phi,
                cos_theta,
                identity_residual: 0.0,
                pst,
                zero_fidelity,
            };
            rec.identity_residual = if rec.sin_phi.is_nan() {
                // R_S = 0 forces ζ = 0 as well
                rec.zeta.abs()
            } else {
                identity_residual(&rec)
            };
            Ok(rec)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub structure_index: usize,
    /// Records for this structure.
    pub count: usize,
    /// Pearson r of `(log e, log |ζ|)`; `None` when undefined.
    pub pearson_r_loglog: Option<f64>,
    /// Kendall τ-b of `(e, sin φ)`; `None` when undefined.
    pub kendall_tau: Option<f64>,
    /// Records left out of the log-log fit because `e ≤ 0` or `ζ = 0`.
    pub excluded_loglog: usize,
    /// Records left out of the rank statistic as zero-fidelity.
    pub excluded_angle: usize,
    pub mean_norm_k: f64,
    /// Sample variance (n − 1 denominator).
    pub var_norm_k: f64,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub records: Vec<GeometryRecord>,
    pub summaries: Vec<CorrelationSummary>,
    /// Controllers whose evaluation failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

pub fn summarize(structure_index: usize, records: &[&GeometryRecord]) -> CorrelationSummary {
    let (mut le, mut lz) = (Vec::new(), Vec::new());
    let (mut ke, mut ks) = (Vec::new(), Vec::new());
    let mut excluded_loglog = 0;
    let mut excluded_angle = 0;
    for r in records {
        if r.error > 0.0 && r.zeta != 0.0 {
            le.push(r.error.ln());
            lz.push(r.zeta.abs().ln());
        } else {
            excluded_loglog += 1;
        }
        if r.zero_fidelity || !r.sin_phi.is_finite() {
            excluded_angle += 1;
        } else {
            ke.push(r.error);
            ks.push(r.sin_phi);
        }
    }
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.norm_k).sum::<f64>() / n;
    let var = if records.len() > 1 {
        records
            .iter()
            .map(|r| (r.norm_k - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        f64::NAN
    };
    CorrelationSummary {
        structure_index,
        count: records.len(),
        pearson_r_loglog: pearson(&le, &lz).ok(),
        kendall_tau: kendall(&ke, &ks).ok(),
        excluded_loglog,
        excluded_angle,
        mean_norm_k: mean,
        var_norm_k: var,
    }
}

/// Records for every (controller, structure) pair, ordered by controller
/// then structure, and one summary per structure.
pub fn analyze(spec: &NetworkSpec, controllers: &[Controller]) -> Result<Analysis> {
    let set = StructureSet::new(spec)?;
    let per_controller: Vec<_> = controllers
        .par_iter()
        .map(|c| {
            (
                c.index,
                evaluate_controller(spec, &set, &c.biases, c.t_f, c.index),
            )
        })
        .collect();

    let mut records = Vec::with_capacity(controllers.len() * set.len());
    let mut failures = Vec::new();
    for (index, res) in per_controller {
        match res {
            Ok(rs) => records.extend(rs),
            Err(e) => failures.push((index, e.to_string())),
        }
    }
    let summaries = set
        .structures
        .iter()
        .map(|st| {
            let rows: Vec<&GeometryRecord> = records
                .iter()
                .filter(|r| r.structure_index == st.index)
                .collect();
            summarize(st.index, &rows)
        })
        .collect();
    Ok(Analysis {
        records,
        summaries,
        failures,
    })
}
