//! Numerical invariant suite over seeded random instances.
//!
//! Every check walks a list of instances, tracks the worst violation and the
//! seed of the instance that produced it, and reports pass, fail or warn.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytics::{evaluate_controller, StructureSet};
use crate::bloch::{fidelity, BlochSystem};
use crate::error::{Error, Result};
use crate::geometry::{angles, io_operator, project};
use crate::hilbert::{random_hamiltonian, random_state, transfer_fidelity};
use crate::network::{build_hamiltonian, scaling_factor, NetworkSpec, Topology};
use crate::quadrature::GaussLegendre;
use crate::sensitivity::{
    differential_sensitivity, fd_oracle, panels_for, quadrature_oracle, sensitivity_operator,
    spectral_decompose, DEFAULT_NODES,
};
use crate::synthesis::{derive_seed, synthesize_ensemble, SynthesisConfig};

pub const FD_STEP: f64 = 1e-5;

/// A transfer problem with fixed biases and read-out time.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub spec: NetworkSpec,
    pub biases: Vec<f64>,
    pub t_f: f64,
}

impl Instance {
    /// Random topology, transfer pair, biases in `[-2, 2]` and `t_f` in
    /// `[0.5, 4]`. `n` fixes the size, otherwise it is drawn from `2..=6`.
    pub fn random(seed: u64, n: Option<usize>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n.unwrap_or_else(|| rng.random_range(2..=6));
        let topology = if rng.random::<bool>() {
            Topology::Ring
        } else {
            Topology::Chain
        };
        let input = rng.random_range(1..=n);
        let mut output = rng.random_range(1..n);
        if output >= input {
            output += 1;
        }
        let spec = NetworkSpec::new(n, topology, 1.0, input, output)
            .expect("random transfer pair is distinct and in range");
        let biases = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t_f = rng.random_range(0.5..4.0);
        Self {
            seed,
            spec,
            biases,
            t_f,
        }
    }

    pub fn batch(master: u64, count: usize, n: Option<usize>) -> Vec<Self> {
        (0..count as u64)
            .map(|i| Self::random(derive_seed(master, i), n))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Warn,
    Fail,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Warn => "WARN",
            Status::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: Status,
    /// Number of evaluated (instance, structure) cases.
    pub cases: usize,
    pub violations: usize,
    /// Largest ratio of violation to its allowance; `<= 1` means within bound.
    pub worst_ratio: f64,
    pub worst_seed: Option<u64>,
    pub detail: String,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Accumulates `value <= allowance` tests.
#[derive(Debug)]
struct Tally {
    name: &'static str,
    cases: usize,
    violations: usize,
    worst_ratio: f64,
    worst_seed: Option<u64>,
    first_violation: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            violations: 0,
            worst_ratio: 0.0,
            worst_seed: None,
            first_violation: None,
        }
    }

    fn record(&mut self, seed: u64, value: f64, allowance: f64, what: impl FnOnce() -> String) {
        self.cases += 1;
        let ratio = if value.is_nan() {
            f64::INFINITY
        } else if allowance > 0.0 {
            value / allowance
        } else if value <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio > self.worst_ratio || self.worst_seed.is_none() {
            self.worst_ratio = self.worst_ratio.max(ratio);
            self.worst_seed = Some(seed);
        }
        if !(value <= allowance) {
            self.violations += 1;
            if self.first_violation.is_none() {
                self.first_violation = Some(format!("seed {seed}: {}", what()));
            }
        }
    }

    fn error(&mut self, seed: u64, err: &Error) {
        self.cases += 1;
        self.violations += 1;
        self.worst_ratio = f64::INFINITY;
        self.worst_seed = Some(seed);
        if self.first_violation.is_none() {
            self.first_violation = Some(format!("seed {seed}: {err}"));
        }
    }

    fn finish(self, on_violation: Status) -> CheckResult {
        let status = if self.violations == 0 {
            Status::Pass
        } else {
            on_violation
        };
        CheckResult {
            name: self.name,
            status,
            cases: self.cases,
            violations: self.violations,
            worst_ratio: self.worst_ratio,
            worst_seed: self.worst_seed,
            detail: self.first_violation.unwrap_or_default(),
        }
    }
}

/// Bloch-form fidelity against `|<psi_f| exp(-iHt) |psi_0>|^2` for random
/// Hamiltonians and random complex states. `flip_generator` negates the
/// Bloch generator to confirm the check can tell the two conventions apart.
pub fn check_fidelity_cross(
    master: u64,
    count: usize,
    n: Option<usize>,
    flip_generator: bool,
) -> CheckResult {
    let mut tally = Tally::new("fidelity cross-formulation");
    for i in 0..count as u64 {
        let seed = derive_seed(master ^ 0xF1DE, i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n.unwrap_or_else(|| rng.random_range(2..=6));
        let h = random_hamiltonian(n, &mut rng) * 2.0;
        let psi0 = random_state(n, &mut rng);
        let psif = random_state(n, &mut rng);
        let t = rng.random_range(0.1..5.0);
        let outcome = (|| -> Result<(f64, f64)> {
            let mut sys = BlochSystem::from_states(&h, &psi0, &psif, t)?;
            if flip_generator {
                sys.a = -sys.a;
            }
            let phi = spectral_decompose(&sys.a)?.propagator(t);
            let (fb, _) = fidelity(&sys.rf, &phi, &sys.r0);
            Ok((fb, transfer_fidelity(&h, &psi0, &psif, t)))
        })();
        match outcome {
            Ok((fb, fh)) => tally.record(seed, (fb - fh).abs(), 1e-10, || {
                format!("F_bloch {fb} vs F_hilbert {fh}")
            }),
            Err(e) => tally.error(seed, &e),
        }
    }
    tally.finish(Status::Fail)
}

/// Per-structure quantities shared by the operator checks.
struct Case {
    seed: u64,
    structure: usize,
    k_norm: f64,
    image_norm: f64,
    trace_phi_k: f64,
    w_skew: f64,
}

fn operator_cases(instances: &[Instance]) -> Vec<std::result::Result<Case, (u64, Error)>> {
    let mut out = Vec::new();
    for inst in instances {
        let run = || -> Result<Vec<Case>> {
            let set = StructureSet::new(&inst.spec)?;
            let h = build_hamiltonian(&inst.spec, &inst.biases)?;
            let sys = BlochSystem::for_transfer(&inst.spec, &h, inst.t_f)?;
            let sd = spectral_decompose(&sys.a)?;
            let phi = sd.propagator(inst.t_f);
            set.structures
                .iter()
                .zip(&set.images)
                .map(|(st, image)| {
                    let op = sensitivity_operator(&sd, image, inst.t_f)?;
                    let w = op.w(&phi);
                    Ok(Case {
                        seed: inst.seed,
                        structure: st.index,
                        k_norm: op.norm_k,
                        image_norm: image.norm(),
                        trace_phi_k: w.trace(),
                        w_skew: (&w + w.transpose()).amax(),
                    })
                })
                .collect()
        };
        match run() {
            Ok(cases) => out.extend(cases.into_iter().map(Ok)),
            Err(e) => out.push(Err((inst.seed, e))),
        }
    }
    out
}

/// `|tr(Phi^T K_n)| <= 1e-9 N^2`, positivity and upper bound of `||K_n||`,
/// and skew-symmetry of `W_n = Phi^T K_n`.
pub fn check_operators(instances: &[Instance]) -> Vec<CheckResult> {
    let mut lemma1 = Tally::new("orthogonality tr(Phi^T K) = 0");
    let mut lemma2 = Tally::new("norm bounds 0 < ||K|| <= ||S||");
    let mut skew = Tally::new("W = Phi^T K skew-symmetric");
    for (inst, cases) in instances
        .iter()
        .map(|i| (i, operator_cases(std::slice::from_ref(i))))
    {
        let n2 = (inst.spec.num_spins * inst.spec.num_spins) as f64;
        for case in cases {
            match case {
                Ok(c) => {
                    lemma1.record(c.seed, c.trace_phi_k.abs(), 1e-9 * n2, || {
                        format!(
                            "structure {}: |tr| = {:e}",
                            c.structure,
                            c.trace_phi_k.abs()
                        )
                    });
                    // upper bound, then strict positivity at numerical scale
                    lemma2.record(c.seed, c.k_norm, c.image_norm + 1e-9, || {
                        format!(
                            "structure {}: ||K|| = {} > ||S|| = {}",
                            c.structure, c.k_norm, c.image_norm
                        )
                    });
                    lemma2.record(c.seed, 1e-6, c.k_norm, || {
                        format!(
                            "structure {}: ||K|| = {:e} not above 1e-6",
                            c.structure, c.k_norm
                        )
                    });
                    skew.record(c.seed, c.w_skew, 1e-9 * c.k_norm.max(1.0), || {
                        format!("structure {}: max|W + W^T| = {:e}", c.structure, c.w_skew)
                    });
                }
                Err((seed, e)) => {
                    lemma1.error(seed, &e);
                    lemma2.error(seed, &e);
                    skew.error(seed, &e);
                }
            }
        }
    }
    vec![
        lemma1.finish(Status::Fail),
        lemma2.finish(Status::Fail),
        skew.finish(Status::Fail),
    ]
}

/// Worst observed discrepancies of one three-way comparison.
#[derive(Debug, Clone, Copy, Default)]
pub struct AgreementStats {
    pub cases: usize,
    pub max_rel_quadrature: f64,
    pub max_fd_ratio: f64,
}

/// Closed-form sensitivity against the integral form (relative `1e-8`) and
/// against a central difference (`max(1e-6 relative, 1e-8 absolute)`).
pub fn check_three_way(instances: &[Instance]) -> (CheckResult, AgreementStats) {
    let mut tally = Tally::new("three-way sensitivity agreement");
    let mut stats = AgreementStats::default();
    let rule = GaussLegendre::new(DEFAULT_NODES);
    for inst in instances {
        let run = || -> Result<Vec<(usize, f64, f64, f64)>> {
            let set = StructureSet::new(&inst.spec)?;
            let h = build_hamiltonian(&inst.spec, &inst.biases)?;
            let sys = BlochSystem::for_transfer(&inst.spec, &h, inst.t_f)?;
            let sd = spectral_decompose(&sys.a)?;
            let panels = panels_for(&sys.a, inst.t_f);
            set.structures
                .iter()
                .zip(&set.images)
                .map(|(st, image)| {
                    let f_n = scaling_factor(st, &inst.biases);
                    let op = sensitivity_operator(&sd, image, inst.t_f)?;
                    let z = differential_sensitivity(&sys, &sd, &op, f_n);
                    let zq = quadrature_oracle(
                        &sys.a, image, inst.t_f, &sys.r0, &sys.rf, f_n, &rule, panels,
                    );
                    let zf = fd_oracle(&inst.spec, &h, st, inst.t_f, FD_STEP);
                    Ok((st.index, z, zq, zf))
                })
                .collect()
        };
        match run() {
            Ok(rows) => {
                for (idx, z, zq, zf) in rows {
                    stats.cases += 1;
                    let dq = (z - zq).abs();
                    let scale = z.abs().max(zq.abs());
                    let rel = if scale > 0.0 { dq / scale } else { 0.0 };
                    stats.max_rel_quadrature = stats.max_rel_quadrature.max(rel);
                    tally.record(inst.seed, dq, 1e-8 * scale, || {
                        format!("structure {idx}: closed form {z:e} vs quadrature {zq:e}")
                    });
                    let allow_fd = (1e-6 * z.abs()).max(1e-8);
                    let df = (z - zf).abs();
                    stats.max_fd_ratio = stats.max_fd_ratio.max(df / allow_fd);
                    tally.record(inst.seed, df, allow_fd, || {
                        format!("structure {idx}: closed form {z:e} vs finite difference {zf:e}")
                    });
                }
            }
            Err(e) => tally.error(inst.seed, &e),
        }
    }
    (tally.finish(Status::Fail), stats)
}

/// `| |zeta| - f t ||K|| ||R_S|| |sin phi| | <= 1e-8 max(1, |zeta|)` and the
/// projection bounds `F/N <= ||R_S|| (<= 1/N, observed only)`.
pub fn check_geometry(instances: &[Instance]) -> Vec<CheckResult> {
    let mut ident = Tally::new("sensitivity identity residual");
    let mut lower = Tally::new("projection lower bound ||R_S|| >= F/N");
    let mut upper = Tally::new("projection upper bound ||R_S|| <= 1/N");
    for inst in instances {
        let set = match StructureSet::new(&inst.spec) {
            Ok(s) => s,
            Err(e) => {
                ident.error(inst.seed, &e);
                continue;
            }
        };
        match evaluate_controller(&inst.spec, &set, &inst.biases, inst.t_f, 0) {
            Ok(records) => {
                let n = inst.spec.num_spins as f64;
                for r in records {
                    ident.record(
                        inst.seed,
                        r.identity_residual,
                        1e-8 * r.zeta.abs().max(1.0),
                        || {
                            format!(
                                "structure {}: residual {:e}, zeta {:e}",
                                r.structure_index, r.identity_residual, r.zeta
                            )
                        },
                    );
                    let gap = r.fidelity / n - r.norm_rs;
                    lower.record(inst.seed, gap, 1e-12, || {
                        format!(
                            "structure {}: ||R_S|| {} < F/N {}",
                            r.structure_index,
                            r.norm_rs,
                            r.fidelity / n
                        )
                    });
                    upper.record(inst.seed, r.norm_rs - 1.0 / n, 1e-10, || {
                        format!(
                            "structure {}: ||R_S|| {} > 1/N; biases {:?}, t_f {}",
                            r.structure_index, r.norm_rs, inst.biases, inst.t_f
                        )
                    });
                }
            }
            Err(e) => {
                ident.error(inst.seed, &e);
                lower.error(inst.seed, &e);
            }
        }
    }
    vec![
        ident.finish(Status::Fail),
        lower.finish(Status::Fail),
        upper.finish(Status::Warn),
    ]
}

/// A controller with exact perfect transfer: the two-spin network with equal
/// biases at `t_f = pi/2 + k pi`, or the four-ring between opposite sites.
pub fn pst_instance(n: usize, seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = rng.random_range(-2.0..2.0);
    let t_f = FRAC_PI_2 + std::f64::consts::PI * rng.random_range(0..3) as f64;
    let spec = match n {
        2 => NetworkSpec::chain(2, 1, 2)?,
        4 => NetworkSpec::ring(4, 1, 3)?,
        _ => {
            return Err(Error::InvalidConfig(format!(
                "no closed-form perfect-transfer controller for {n} spins (use 2 or 4)"
            )))
        }
    };
    Ok(Instance {
        seed,
        spec,
        biases: vec![shift; n],
        t_f,
    })
}

/// Perfect transfer forces `zeta_n = 0`, `||R_S|| = 1/N` and `cos phi = 1`.
pub fn check_pst_sufficiency(instances: &[Instance]) -> CheckResult {
    let mut tally = Tally::new("perfect transfer gives zero sensitivity");
    for inst in instances {
        let run = || -> Result<Vec<(usize, f64, f64, f64)>> {
            let h = build_hamiltonian(&inst.spec, &inst.biases)?;
            let sys = BlochSystem::for_transfer(&inst.spec, &h, inst.t_f)?;
            let sd = spectral_decompose(&sys.a)?;
            let phi = sd.propagator(inst.t_f);
            let (f, _) = fidelity(&sys.rf, &phi, &sys.r0);
            let r = io_operator(&sys.rf, &sys.r0);
            let set = StructureSet::new(&inst.spec)?;
            set.structures
                .iter()
                .zip(&set.images)
                .map(|(st, image)| {
                    let f_n = scaling_factor(st, &inst.biases);
                    let op = sensitivity_operator(&sd, image, inst.t_f)?;
                    let zeta = differential_sensitivity(&sys, &sd, &op, f_n);
                    let proj = project(&r, &phi, &op)?;
                    let a = angles(
                        f,
                        zeta,
                        inst.spec.num_spins,
                        &proj,
                        op.norm_k,
                        f_n,
                        inst.t_f,
                    )?;
                    Ok((st.index, zeta, proj.norm_rs, a.cos_phi))
                })
                .collect()
        };
        match run() {
            Ok(rows) => {
                let inv_n = 1.0 / inst.spec.num_spins as f64;
                for (idx, zeta, norm_rs, cos_phi) in rows {
                    tally.record(inst.seed, zeta.abs(), 1e-9, || {
                        format!("structure {idx}: |zeta| = {:e}", zeta.abs())
                    });
                    tally.record(inst.seed, (norm_rs - inv_n).abs(), 1e-9, || {
                        format!("structure {idx}: ||R_S|| = {norm_rs}")
                    });
                    tally.record(inst.seed, (cos_phi - 1.0).abs(), 1e-9, || {
                        format!("structure {idx}: cos phi = {cos_phi}")
                    });
                }
            }
            Err(e) => tally.error(inst.seed, &e),
        }
    }
    tally.finish(Status::Fail)
}

/// On a synthesized four-ring ensemble, every imperfect controller
/// (`e` in `[1e-6, 0.5]`) has `|zeta_n| >= 1e-12` on structures with
/// `f_n >= 0.1`, unless the geometry pins `sin phi_n <= 1e-8`, and the
/// identity residual holds on every record.
pub fn check_pst_necessity(seed: u64, restarts: usize) -> CheckResult {
    let mut tally = Tally::new("imperfect transfer gives nonzero sensitivity");
    let run = || -> Result<Vec<(u64, crate::geometry::GeometryRecord)>> {
        let spec = NetworkSpec::ring(4, 1, 2)?;
        let config = SynthesisConfig {
            restarts,
            seed,
            max_iter: 60,
            rounds: 3,
            ..SynthesisConfig::default()
        };
        let controllers = synthesize_ensemble(&spec, &config)?;
        let set = StructureSet::new(&spec)?;
        let mut out = Vec::new();
        for c in &controllers {
            for r in evaluate_controller(&spec, &set, &c.biases, c.t_f, c.index)? {
                out.push((c.seed, r));
            }
        }
        Ok(out)
    };
    match run() {
        Ok(records) => {
            for (s, r) in records {
                if (1e-6..=0.5).contains(&r.error) && r.f_n >= 0.1 && !(r.sin_phi <= 1e-8) {
                    tally.record(s, 1e-12, r.zeta.abs(), || {
                        format!(
                            "controller {} structure {}: |zeta| = {:e} with e = {:e}",
                            r.controller_index,
                            r.structure_index,
                            r.zeta.abs(),
                            r.error
                        )
                    });
                }
                tally.record(s, r.identity_residual, 1e-8 * r.zeta.abs().max(1.0), || {
                    format!(
                        "controller {} structure {}: residual {:e}",
                        r.controller_index, r.structure_index, r.identity_residual
                    )
                });
            }
        }
        Err(e) => tally.error(seed, &e),
    }
    tally.finish(Status::Fail)
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub seed: u64,
    pub instances: usize,
    pub n: Option<usize>,
    pub pst: bool,
    pub inject_sign_error: bool,
    pub necessity_restarts: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 100,
            n: None,
            pst: false,
            inject_sign_error: false,
            necessity_restarts: 24,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(Error::InvalidConfig("instances must be positive".into()));
        }
        if let Some(n) = self.n {
            if n < 2 {
                return Err(Error::InvalidConfig(format!(
                    "n must be at least 2, got {n}"
                )));
            }
        }
        if self.pst && !matches!(self.n.unwrap_or(2), 2 | 4) {
            return Err(Error::InvalidConfig(
                "perfect-transfer mode supports n = 2 or n = 4".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<46} {:>6} {:>7} {:>6} {:>11} {:>20}",
            "check", "status", "cases", "viol", "worst/tol", "worst seed"
        )?;
        for c in &self.checks {
            let seed = c
                .worst_seed
                .map_or_else(|| "-".to_string(), |s| s.to_string());
            writeln!(
                f,
                "{:<46} {:>6} {:>7} {:>6} {:>11.3e} {:>20}",
                c.name, c.status, c.cases, c.violations, c.worst_ratio, seed
            )?;
            if c.status != Status::Pass && !c.detail.is_empty() {
                writeln!(f, "    {}", c.detail)?;
            }
        }
        Ok(())
    }
}

/// Runs the whole suite. In perfect-transfer mode the sufficiency check runs
/// over `instances` closed-form controllers; otherwise over one.
pub fn run_verify(config: &VerifyConfig) -> Result<VerifyReport> {
    config.validate()?;
    let master = config.seed;
    let mut checks = vec![check_fidelity_cross(
        master,
        config.instances,
        config.n,
        config.inject_sign_error,
    )];

    let instances = Instance::batch(master, config.instances, config.n);
    checks.extend(check_operators(&instances));
    let small: Vec<Instance> = instances
        .iter()
        .filter(|i| i.spec.num_spins <= 5)
        .cloned()
        .collect();
    let three_way = if small.is_empty() { &instances } else { &small };
    checks.push(check_three_way(&three_way[..three_way.len().min(40)]).0);
    checks.extend(check_geometry(&instances));

    let pst_n = if config.pst { config.n.unwrap_or(2) } else { 2 };
    let pst_count = if config.pst { config.instances } else { 1 };
    let pst: Vec<Instance> = (0..pst_count as u64)
        .map(|i| {
            if config.pst {
                pst_instance(pst_n, derive_seed(master ^ 0x957, i))
            } else {
                Ok(Instance {
                    seed: 0,
                    spec: NetworkSpec::chain(2, 1, 2)?,
                    biases: vec![0.0, 0.0],
                    t_f: FRAC_PI_2,
                })
            }
        })
        .collect::<Result<_>>()?;
    checks.push(check_pst_sufficiency(&pst));
    checks.push(check_pst_necessity(master, config.necessity_restarts));
    Ok(VerifyReport {
        seed: master,
        checks,
    })
}
