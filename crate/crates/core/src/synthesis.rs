//! Static-bias controller synthesis by multistart fidelity maximization.
//!
//! Each restart alternates a projected BFGS pass over the biases and the
//! read-out time (box constrained) with a golden-section search over the
//! read-out time alone.
//! Restarts are independent and seeded from the master seed, so the
//! ensemble does not depend on scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{adjoint_rep_real, fidelity, gell_mann_basis, BlochSystem};
use crate::error::{Error, Result};
use crate::hilbert;
use crate::network::{build_hamiltonian, enumerate_structures, NetworkSpec, StructureKind};
use crate::sensitivity::{differential_sensitivity, sensitivity_operator, spectral_decompose};

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub biases: Vec<f64>,
    pub t_f: f64,
    pub fidelity: f64,
    pub spec: NetworkSpec,
    pub seed: u64,
    pub index: usize,
    /// False when the optimizer stopped at its iteration cap.
    pub converged: bool,
}

impl Controller {
    pub fn error(&self) -> f64 {
        1.0 - self.fidelity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub restarts: usize,
    pub t_f_range: (f64, f64),
    pub bias_range: (f64, f64),
    /// Projected-gradient norm at which a quasi-Newton pass stops.
    pub tolerance: f64,
    pub seed: u64,
    /// Iteration cap for each quasi-Newton pass.
    pub max_iter: usize,
    /// Number of quasi-Newton/line-search alternations.
    pub rounds: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            restarts: 100,
            t_f_range: (1.0, 50.0),
            bias_range: (0.0, 10.0),
            tolerance: 1e-8,
            seed: 0,
            max_iter: 200,
            rounds: 6,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.restarts < 1 {
            return bad("restarts must be >= 1".into());
        }
        let (tl, th) = self.t_f_range;
        if !(tl.is_finite() && th.is_finite() && tl > 0.0 && tl <= th) {
            return bad(format!(
                "read-out time range [{tl}, {th}] must be nonempty and positive"
            ));
        }
        let (bl, bh) = self.bias_range;
        if !(bl.is_finite() && bh.is_finite() && bl <= bh) {
            return bad(format!("bias range [{bl}, {bh}] must be nonempty"));
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive".into());
        }
        Ok(())
    }
}

/// Fidelity and its bias gradient through the Bloch representation. The
/// gradient component for site `n` is `−ζ_n` for the bias structure at `n`
/// with unit scaling.
pub fn fidelity_objective(spec: &NetworkSpec, biases: &[f64], t_f: f64) -> Result<(f64, Vec<f64>)> {
    let h = build_hamiltonian(spec, biases)?;
    let sys = BlochSystem::for_transfer(spec, &h, t_f)?;
    let sd = spectral_decompose(&sys.a)?;
    let (f, _) = fidelity(&sys.rf, &sd.propagator(t_f), &sys.r0);
    let basis = gell_mann_basis(spec.num_spins)?;
    let mut grad = vec![0.0; spec.num_spins];
    for st in enumerate_structures(spec) {
        if let StructureKind::Bias { site } = st.kind {
            let s = adjoint_rep_real(&st.matrix, &basis)?;
            let op = sensitivity_operator(&sd, &s, t_f)?;
            grad[site] = -differential_sensitivity(&sys, &sd, &op, 1.0);
        }
    }
    Ok((f, grad))
}

struct BoxResult {
    x: Vec<f64>,
    value: f64,
    converged: bool,
}

fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| {
            if (xi <= lo[i] && gi > 0.0) || (xi >= hi[i] && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Minimize `f` over the box `lo <= x <= hi` with a projected BFGS
/// iteration and Armijo backtracking along the projected path.
fn minimize_box<F>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], tol: f64, max_iter: usize) -> BoxResult
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let clamp = |v: &[f64]| {
        v.iter()
            .enumerate()
            .map(|(i, &x)| x.clamp(lo[i], hi[i]))
            .collect::<Vec<_>>()
    };
    let mut x = clamp(x0);
    let (mut fx, mut g) = f(&x);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let widest = lo.iter().zip(hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let max_step = if widest > 0.0 { 0.25 * widest } else { 1.0 };

    for _ in 0..max_iter {
        let pg = projected_gradient(&x, &g, lo, hi);
        if pg.iter().map(|v| v * v).sum::<f64>().sqrt() <= tol {
            return BoxResult {
                x,
                value: fx,
                converged: true,
            };
        }
        let gv = DVector::from_column_slice(&g);
        let mut d: Vec<f64> = (-(&hinv * &gv)).iter().copied().collect();
        for i in 0..n {
            if pg[i] == 0.0 {
                d[i] = 0.0;
            }
        }
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            hinv = DMatrix::identity(n, n);
            d = pg.iter().map(|v| -v).collect();
        }
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dmax > max_step {
            d.iter_mut().for_each(|v| *v *= max_step / dmax);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = clamp(
                &x.iter()
                    .zip(&d)
                    .map(|(a, b)| a + alpha * b)
                    .collect::<Vec<_>>(),
            );
            let (ft, gt) = f(&trial);
            let decrease: f64 = g
                .iter()
                .zip(trial.iter().zip(&x))
                .map(|(gi, (t, xi))| gi * (t - xi))
                .sum();
            if ft.is_finite() && ft <= fx + 1e-4 * decrease {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if hinv != DMatrix::identity(n, n) {
                hinv = DMatrix::identity(n, n);
                continue;
            }
            break;
        };

        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let id = DMatrix::<f64>::identity(n, n);
            let left = &id - &s * y.transpose() * rho;
            let right = &id - &y * s.transpose() * rho;
            hinv = &left * &hinv * &right + &s * s.transpose() * rho;
        }
        let stalled = (fx - fnew).abs() <= f64::EPSILON * fx.abs().max(1e-300) && s.amax() == 0.0;
        x = xn;
        fx = fnew;
        g = gn;
        if stalled {
            break;
        }
    }
    let pg = projected_gradient(&x, &g, lo, hi);
    let converged = pg.iter().map(|v| v * v).sum::<f64>().sqrt() <= tol;
    BoxResult {
        x,
        value: fx,
        converged,
    }
}

/// Maximize `f` on `[a, b]` by golden-section search.
fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-12 * (1.0 + a.abs()) {
            break;
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Local fidelity maximization from one starting point.
pub fn local_optimize(
    spec: &NetworkSpec,
    initial_biases: &[f64],
    initial_t_f: f64,
    config: &SynthesisConfig,
    seed: u64,
) -> Result<Controller> {
    spec.validate()?;
    config.validate()?;
    if initial_biases.len() != spec.num_spins {
        return Err(Error::DimensionMismatch {
            expected: spec.num_spins,
            got: initial_biases.len(),
        });
    }
    let (blo, bhi) = config.bias_range;
    let (tlo, thi) = config.t_f_range;
    if initial_biases.iter().any(|&b| b < blo || b > bhi) || initial_t_f < tlo || initial_t_f > thi
    {
        return Err(Error::InvalidConfig(
            "initial point outside the configured bounds".into(),
        ));
    }

    // x = (biases, t_f); minimize the error 1 − F
    let objective = |x: &[f64]| {
        let (biases, t) = x.split_at(x.len() - 1);
        match hilbert::full_gradient(spec, biases, t[0]) {
            Ok((f, g, dt)) => (
                1.0 - f,
                g.iter().map(|v| -v).chain(std::iter::once(-dt)).collect(),
            ),
            Err(_) => (f64::INFINITY, vec![0.0; x.len()]),
        }
    };
    let fid_at =
        |x: &[f64], t: f64| hilbert::spec_fidelity(spec, x, t).unwrap_or(f64::NEG_INFINITY);
    let n = spec.num_spins;
    let lo: Vec<f64> = std::iter::repeat_n(blo, n)
        .chain(std::iter::once(tlo))
        .collect();
    let hi: Vec<f64> = std::iter::repeat_n(bhi, n)
        .chain(std::iter::once(thi))
        .collect();

    let mut x: Vec<f64> = initial_biases
        .iter()
        .copied()
        .chain(std::iter::once(initial_t_f))
        .collect();
    let mut best_error = 1.0 - fid_at(&x[..n], x[n]);
    let mut converged = false;

    for _ in 0..config.rounds.max(1) {
        let res = minimize_box(objective, &x, &lo, &hi, config.tolerance, config.max_iter);
        if res.value <= best_error {
            x = res.x;
            best_error = res.value;
        }
        converged = res.converged;

        // line search over roughly half a period of the fastest population
        // oscillation, to hop between neighbouring read-out windows
        let h = build_hamiltonian(spec, &x[..n])?;
        let ev = nalgebra::SymmetricEigen::new(h.matrix).eigenvalues;
        let spread = (ev.max() - ev.min()).max(1e-3);
        let half = (std::f64::consts::PI / spread).min(0.5 * (thi - tlo));
        let t_f = x[n];
        let (a, b) = ((t_f - half).max(tlo), (t_f + half).min(thi));
        let mut moved = false;
        if b > a {
            let (t_new, f_new) = golden_max(|t| fid_at(&x[..n], t), a, b, 200);
            if 1.0 - f_new < best_error - 1e-14 {
                x[n] = t_new;
                best_error = 1.0 - f_new;
                moved = true;
            }
        }
        if converged && !moved {
            break;
        }
    }
    let t_f = x[n];
    x.truncate(n);
    let biases = x;

    // stored fidelity comes from the Bloch route used by the analysis,
    // clamped against rounding just outside [0, 1]
    let h = build_hamiltonian(spec, &biases)?;
    let sys = BlochSystem::for_transfer(spec, &h, t_f)?;
    let sd = spectral_decompose(&sys.a)?;
    let (fid, _) = fidelity(&sys.rf, &sd.propagator(t_f), &sys.r0);

    Ok(Controller {
        biases,
        t_f,
        fidelity: fid.clamp(0.0, 1.0),
        spec: spec.clone(),
        seed,
        index: 0,
        converged,
    })
}

/// SplitMix64 finalizer, used to derive per-restart seeds.
pub fn derive_seed(master: u64, restart: u64) -> u64 {
    let mut z = master.wrapping_add(restart.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn restart(spec: &NetworkSpec, config: &SynthesisConfig, seed: u64) -> Option<Controller> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (blo, bhi) = config.bias_range;
    let (tlo, thi) = config.t_f_range;
    let biases: Vec<f64> = (0..spec.num_spins)
        .map(|_| {
            if bhi > blo {
                rng.random_range(blo..=bhi)
            } else {
                blo
            }
        })
        .collect();
    let t0 = if thi > tlo {
        rng.random_range(tlo..=thi)
    } else {
        tlo
    };
    let c = local_optimize(spec, &biases, t0, config, seed).ok()?;
    (c.fidelity.is_finite() && c.biases.iter().all(|b| b.is_finite())).then_some(c)
}

/// Runs `config.restarts` seeded local optimizations in parallel, collapses
/// duplicates, sorts by fidelity (descending) and assigns 1-based indices.
pub fn synthesize_ensemble(
    spec: &NetworkSpec,
    config: &SynthesisConfig,
) -> Result<Vec<Controller>> {
    spec.validate()?;
    config.validate()?;
    let mut found: Vec<Controller> = (0..config.restarts as u64)
        .into_par_iter()
        .filter_map(|i| restart(spec, config, derive_seed(config.seed, i)))
        .collect();
    if found.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    found.sort_by(|a, b| b.fidelity.total_cmp(&a.fidelity).then(a.seed.cmp(&b.seed)));

    let mut kept: Vec<Controller> = Vec::with_capacity(found.len());
    for c in found {
        let dup = kept.iter().any(|k| {
            let d: f64 = k
                .biases
                .iter()
                .zip(&c.biases)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            d < 1e-6 && (k.t_f - c.t_f).abs() < 1e-6
        });
        if !dup {
            kept.push(c);
        }
    }
    for (i, c) in kept.iter_mut().enumerate() {
        c.index = i + 1;
    }
    Ok(kept)
}
