//! Case-study generators (room temperature ring, sin-coupled complete network),
//! error sweeps and the end-to-end closed-loop run.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{AbstractionError, AbstractionParams, SymbolicModel, build_abstraction};
use crate::certificate::{
    CertError, Certificate, Direction, IncrementalStabilizabilityData, LinearCertificateParams, TuningFunctions,
    derive_linear_certificate, derive_nonlinear_certificate, norm_data,
};
use crate::composition::{
    CompositionError, CompositionOptions, ComposedCertificate, SgcMode, compose_certificates, relation_error, topology_of,
};
use crate::gain::GainFn;
use crate::linalg::Matrix;
use crate::synthesis::{Controller, SafetySpec, SynthesisError, Trajectory, neighbor_assumption, simulate_closed_loop, synthesize_safety};
use crate::system::{
    BoxUnion, Feedback, FullNetDynamics, InterconnectionSpec, InternalBlock, LinearDynamics, NetworkSystem, RoomDynamics, SubsystemDef, SystemError,
    build_interconnection,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Composition(#[from] CompositionError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoomPreset {
    /// Gains as printed: `γ_int = α·s`, `γ_ext = 0`.
    Paper,
    /// Gains that pass sampling: `γ_int = 2α·s`, `γ_ext = μ(T_h − x_lo)·s`, `λ = 0.039·s`.
    Verified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomTempConfig {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub mu_heat: f64,
    pub t_ext: f64,
    pub t_heat: f64,
    pub nu_range: (f64, f64),
    pub x_domain: (f64, f64),
    /// Range assumed for each neighbor temperature.
    pub w_range: (f64, f64),
    pub preset: RoomPreset,
    /// Slope of `λ` in the certificate; preset default when absent.
    pub lambda: Option<f64>,
    pub psi: f64,
    pub eta: f64,
    pub mu: f64,
}

impl Default for RoomTempConfig {
    fn default() -> Self {
        RoomTempConfig {
            n: 3,
            alpha: 0.45,
            beta: 0.045,
            mu_heat: 0.09,
            t_ext: -1.0,
            t_heat: 50.0,
            nu_range: (0.0, 0.6),
            x_domain: (17.0, 23.0),
            w_range: (19.0, 21.0),
            preset: RoomPreset::Paper,
            lambda: None,
            psi: 0.99,
            eta: 0.01,
            mu: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FullNetConfig {
    pub n: usize,
    pub a: f64,
    /// Feedback gain; midpoint of `((a+1)/2, a+1)` when absent.
    pub c: Option<f64>,
    pub x_domain: (f64, f64),
    pub u_range: (f64, f64),
    pub psi: f64,
    pub eta: f64,
    pub mu: f64,
}

impl Default for FullNetConfig {
    fn default() -> Self {
        FullNetConfig { n: 2, a: 0.9, c: None, x_domain: (0.0, 10.0), u_range: (0.0, 1.0), psi: 0.99, eta: 0.01, mu: 0.01 }
    }
}

impl FullNetConfig {
    pub fn c_value(&self) -> f64 {
        self.c.unwrap_or(0.5 * ((self.a + 1.0) / 2.0 + self.a + 1.0))
    }
}

/// A generated network with per-subsystem stabilizability data.
#[derive(Debug, Clone)]
pub struct CaseStudy {
    pub subsystems: Vec<SubsystemDef>,
    pub varpi: InterconnectionSpec,
    /// Internal-input quantization used by the abstractions and the composition.
    pub varpi_hat: InterconnectionSpec,
    pub topology: Vec<Vec<usize>>,
    pub data: Vec<IncrementalStabilizabilityData>,
    pub tuning: TuningFunctions,
    pub feedback: Feedback,
    /// False when the data is reproduced as stated without passing sampling.
    pub data_verified: bool,
    pub eta: f64,
    pub mu: f64,
    /// When set, certificates come from the LMI route instead of `data`.
    pub linear: Option<LinearSource>,
}

#[derive(Debug, Clone)]
pub struct LinearSource {
    pub systems: Vec<LinearDynamics>,
    /// `eta` is replaced by the requested quantization step.
    pub params: LinearCertificateParams,
}

fn interval(lo: f64, hi: f64) -> Result<BoxUnion, BenchError> {
    BoxUnion::interval(lo, hi).map_err(BenchError::from)
}

pub fn gen_roomtemp(cfg: &RoomTempConfig) -> Result<CaseStudy, BenchError> {
    if cfg.n < 3 {
        return Err(BenchError::Invalid(format!("room ring needs n ≥ 3, got {}", cfg.n)));
    }
    let dynamics = RoomDynamics { alpha: cfg.alpha, beta: cfg.beta, mu: cfg.mu_heat, t_ext: cfg.t_ext, t_heat: cfg.t_heat };
    let a_max = dynamics.a(cfg.nu_range.0).abs().max(dynamics.a(cfg.nu_range.1).abs());
    if !(a_max < 1.0) {
        return Err(BenchError::Invalid(format!("|a(ν)| reaches {a_max}, no contraction")));
    }
    let kappa = GainFn::linear(1.0 - a_max);
    let (gamma_int, gamma_ext, lambda_default) = match cfg.preset {
        RoomPreset::Paper => (cfg.alpha, 0.0, 1.0),
        // |∂f/∂ν| = μ_heat·|T_h − T| is largest at the cold end of X
        RoomPreset::Verified => (2.0 * cfg.alpha, cfg.mu_heat * (cfg.t_heat - cfg.x_domain.0).abs(), 0.039),
    };
    let data = norm_data(kappa.clone(), GainFn::linear(gamma_int), GainFn::linear(gamma_ext));
    let mut tuning = TuningFunctions::standard(&kappa);
    tuning.lambda = GainFn::linear(cfg.lambda.unwrap_or(lambda_default));
    tuning.psi = GainFn::linear(cfg.psi);

    let dynamics: Arc<RoomDynamics> = Arc::new(dynamics);
    let n = cfg.n;
    let subsystems = (0..n)
        .map(|i| {
            let blocks = vec![
                InternalBlock { source: (i + n - 1) % n, set: interval(cfg.w_range.0, cfg.w_range.1)? },
                InternalBlock { source: (i + 1) % n, set: interval(cfg.w_range.0, cfg.w_range.1)? },
            ];
            let x = interval(cfg.x_domain.0, cfg.x_domain.1)?;
            let u = interval(cfg.nu_range.0, cfg.nu_range.1)?;
            Ok(SubsystemDef::new(i, x, u, blocks, None, dynamics.clone())?)
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    let topology = topology_of(&subsystems);
    Ok(CaseStudy {
        subsystems,
        varpi: InterconnectionSpec::zero(n),
        varpi_hat: InterconnectionSpec::zero(n),
        topology,
        data: vec![data; n],
        tuning,
        feedback: Feedback::Zero,
        data_verified: cfg.preset == RoomPreset::Verified,
        eta: cfg.eta,
        mu: cfg.mu,
        linear: None,
    })
}

pub fn gen_fullnet(cfg: &FullNetConfig) -> Result<CaseStudy, BenchError> {
    let n = cfg.n;
    if n < 2 {
        return Err(BenchError::Invalid(format!("complete network needs n ≥ 2, got {n}")));
    }
    let c = cfg.c_value();
    let slope = c - cfg.a;
    if !(slope > 0.0 && slope < 1.0) {
        return Err(BenchError::Invalid(format!("c − a = {slope} must lie in (0, 1)")));
    }
    let tau = 0.1 / (n - 1) as f64;
    let kappa = GainFn::linear(slope);
    let mut data = norm_data(kappa.clone(), GainFn::linear(tau), GainFn::Zero);
    let feedback = Feedback::Linear(Matrix::scalar(-c));
    data.feedback = feedback.clone();
    let mut tuning = TuningFunctions::standard(&kappa);
    tuning.psi = GainFn::linear(cfg.psi);
    let dynamics = Arc::new(FullNetDynamics { a: cfg.a, tau, neighbors: n - 1 });
    let subsystems = (0..n)
        .map(|i| {
            let blocks = (0..n)
                .filter(|j| *j != i)
                .map(|j| Ok(InternalBlock { source: j, set: interval(cfg.x_domain.0, cfg.x_domain.1)? }))
                .collect::<Result<Vec<_>, BenchError>>()?;
            let x = interval(cfg.x_domain.0, cfg.x_domain.1)?;
            let u = interval(cfg.u_range.0, cfg.u_range.1)?;
            Ok(SubsystemDef::new(i, x, u, blocks, None, dynamics.clone())?)
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    let topology = topology_of(&subsystems);
    Ok(CaseStudy {
        subsystems,
        varpi: InterconnectionSpec::zero(n),
        varpi_hat: InterconnectionSpec::zero(n),
        topology,
        data: vec![data; n],
        tuning,
        feedback,
        data_verified: false,
        eta: cfg.eta,
        mu: cfg.mu,
        linear: None,
    })
}

impl CaseStudy {
    pub fn n(&self) -> usize {
        self.subsystems.len()
    }

    pub fn certificates(&self, eta: f64, direction: Direction) -> Result<Vec<Certificate>, BenchError> {
        if let Some(lin) = &self.linear {
            let params = LinearCertificateParams { eta, ..lin.params.clone() };
            let mut out: Vec<Certificate> = Vec::with_capacity(lin.systems.len());
            for (i, sys) in lin.systems.iter().enumerate() {
                if i > 0 && *sys == lin.systems[i - 1] {
                    let prev = out[i - 1].clone();
                    out.push(prev);
                } else {
                    out.push(derive_linear_certificate(sys, &params, direction)?);
                }
            }
            return Ok(out);
        }
        // identical data yields identical certificates; derive once per distinct entry
        let mut out: Vec<Certificate> = Vec::with_capacity(self.n());
        for (i, d) in self.data.iter().enumerate() {
            if i > 0 && Arc::ptr_eq(&self.subsystems[i].dynamics, &self.subsystems[i - 1].dynamics) && same_data(d, &self.data[i - 1]) {
                let prev = out[i - 1].clone();
                out.push(prev);
            } else {
                out.push(derive_nonlinear_certificate(d, &self.tuning, eta, direction)?);
            }
        }
        Ok(out)
    }

    pub fn network(&self) -> Result<NetworkSystem, BenchError> {
        Ok(build_interconnection(self.subsystems.clone(), &self.varpi)?)
    }

    /// Quantization for subsystem `i`; the internal step is the largest `ϖ̂_ij` of its row.
    pub fn abstraction_params(&self, i: usize) -> AbstractionParams {
        let vh = self.varpi_hat.varpi[i].iter().fold(0.0_f64, |m, v| m.max(*v));
        AbstractionParams::new(self.eta, self.mu, vh)
    }

    /// `H` used when building the symbolic models; the LMI route refines with `K(x − x̂)` instead.
    pub fn abstraction_feedback(&self) -> Feedback {
        if self.linear.is_some() { Feedback::Zero } else { self.feedback.clone() }
    }

    /// Largest `‖û‖_∞` over the input sets.
    pub fn input_bound(&self) -> f64 {
        self.subsystems
            .iter()
            .flat_map(|s| s.u_set.lower_corner().into_iter().chain(s.u_set.upper_corner()))
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

fn same_data(a: &IncrementalStabilizabilityData, b: &IncrementalStabilizabilityData) -> bool {
    a.v_form == b.v_form
        && a.alpha_lo == b.alpha_lo
        && a.alpha_hi == b.alpha_hi
        && a.kappa == b.kappa
        && a.gamma_int == b.gamma_int
        && a.gamma_ext == b.gamma_ext
        && a.gamma_hat == b.gamma_hat
        && a.ell == b.ell
        && format!("{:?}", a.feedback) == format!("{:?}", b.feedback)
}

/// Certificates, composition with `δ = id` and `ε̂` at the given `η`.
pub fn network_error(case: &CaseStudy, eta: f64, opts: &CompositionOptions) -> Result<(ComposedCertificate, f64), BenchError> {
    let certs = case.certificates(eta, Direction::AbstractionToConcrete)?;
    let cc = compose_certificates(&certs, &case.topology, opts)?;
    let eps_hat = relation_error(&cc, case.input_bound());
    Ok((cc, eps_hat))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum SweepFamily {
    Roomtemp(RoomTempConfig),
    Fullnet(FullNetConfig),
}

impl SweepFamily {
    pub fn generate(&self, n: usize) -> Result<CaseStudy, BenchError> {
        match self {
            SweepFamily::Roomtemp(c) => gen_roomtemp(&RoomTempConfig { n, ..c.clone() }),
            SweepFamily::Fullnet(c) => gen_fullnet(&FullNetConfig { n, ..c.clone() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub eta: f64,
    pub eps_hat: Option<f64>,
    /// `ok`, or the reason no error bound was produced.
    pub status: String,
}

/// One row per `(n, η)` in input order.
pub fn error_sweep(family: &SweepFamily, n_list: &[usize], eta_list: &[f64]) -> Result<Vec<SweepRow>, BenchError> {
    error_sweep_with(|n| family.generate(n), n_list, eta_list, SgcMode::Auto)
}

/// [`error_sweep`] over an arbitrary generator.
pub fn error_sweep_with(
    generate: impl Fn(usize) -> Result<CaseStudy, BenchError> + Sync,
    n_list: &[usize],
    eta_list: &[f64],
    mode: SgcMode,
) -> Result<Vec<SweepRow>, BenchError> {
    if n_list.is_empty() || eta_list.is_empty() {
        return Err(BenchError::Invalid("sweep lists must be non-empty".into()));
    }
    let cases = n_list.par_iter().map(|&n| generate(n)).collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, f64)> = (0..n_list.len()).flat_map(|k| eta_list.iter().map(move |e| (k, *e))).collect();
    Ok(jobs
        .par_iter()
        .map(|&(k, eta)| {
            let case = &cases[k];
            let opts = CompositionOptions { varpi_hat: case.varpi_hat.clone(), mode, ..CompositionOptions::exact_routing(case.n()) };
            match network_error(case, eta, &opts) {
                Ok((_, e)) => SweepRow { n: case.n(), eta, eps_hat: Some(e), status: "ok".into() },
                Err(BenchError::Composition(CompositionError::SmallGainViolated { .. })) => {
                    SweepRow { n: case.n(), eta, eps_hat: None, status: "small_gain_violated".into() }
                }
                Err(BenchError::Composition(CompositionError::SmallGainUndecided { .. })) => {
                    SweepRow { n: case.n(), eta, eps_hat: None, status: "small_gain_undecided".into() }
                }
                Err(e) => SweepRow { n: case.n(), eta, eps_hat: None, status: e.to_string().replace(',', ";") },
            }
        })
        .collect())
}

/// `n,eta,eps_hat`, plus a `status` column when some row has no bound.
pub fn write_sweep_csv(rows: &[SweepRow], w: impl Write) -> Result<(), BenchError> {
    let with_status = rows.iter().any(|r| r.eps_hat.is_none());
    let mut out = csv::Writer::from_writer(w);
    if with_status {
        out.write_record(["n", "eta", "eps_hat", "status"])?;
    } else {
        out.write_record(["n", "eta", "eps_hat"])?;
    }
    for r in rows {
        let e = r.eps_hat.map_or_else(String::new, |v| v.to_string());
        if with_status {
            out.write_record([r.n.to_string(), r.eta.to_string(), e, r.status.clone()])?;
        } else {
            out.write_record([r.n.to_string(), r.eta.to_string(), e])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `k,i,x`; vector states give one row per component.
pub fn write_trajectory_csv(net: &NetworkSystem, traj: &Trajectory, w: impl Write) -> Result<(), BenchError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", "i", "x"])?;
    for (k, x) in traj.states.iter().enumerate() {
        for i in 0..net.len() {
            for v in net.state_slice(x, i) {
                out.write_record([k.to_string(), i.to_string(), v.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Subsystems sharing dynamics (same allocation) and sets share one symbolic model.
pub fn template_groups(subs: &[SubsystemDef]) -> Vec<usize> {
    let mut reps: Vec<usize> = Vec::new();
    let mut group = Vec::with_capacity(subs.len());
    for (i, s) in subs.iter().enumerate() {
        let found = reps.iter().position(|&r| {
            let t = &subs[r];
            Arc::ptr_eq(&t.dynamics, &s.dynamics)
                && t.x_set == s.x_set
                && t.u_set == s.u_set
                && t.y_set == s.y_set
                && t.blocks.len() == s.blocks.len()
                && t.blocks.iter().zip(&s.blocks).all(|(a, b)| a.set == b.set)
        });
        match found {
            Some(g) => group.push(g),
            None => {
                reps.push(i);
                group.push(reps.len() - 1);
            }
        }
    }
    group
}

#[derive(Debug)]
pub struct ClosedLoopRun {
    pub models: Vec<SymbolicModel>,
    pub controllers: Vec<Controller>,
    /// Template index for every subsystem.
    pub group: Vec<usize>,
    pub trajectory: Trajectory,
    pub abstraction_time: Duration,
    pub synthesis_time: Duration,
    pub simulation_time: Duration,
}

impl ClosedLoopRun {
    pub fn min_domain_size(&self) -> usize {
        self.controllers.iter().map(Controller::domain_size).min().unwrap_or(0)
    }
}

/// Abstraction and safety synthesis per template, then the closed loop from `x0`.
pub fn closed_loop(case: &CaseStudy, safe: &[BoxUnion], x0: &[f64], steps: usize) -> Result<ClosedLoopRun, BenchError> {
    let n = case.n();
    if safe.len() != n {
        return Err(BenchError::Invalid(format!("{} safe sets for {n} subsystems", safe.len())));
    }
    let group = template_groups(&case.subsystems);
    let n_groups = group.iter().max().map_or(0, |g| g + 1);
    let reps: Vec<usize> = (0..n_groups).map(|g| group.iter().position(|x| *x == g).unwrap()).collect();
    let source_safe = |i: usize| case.subsystems[i].blocks.iter().map(|b| safe[b.source].clone()).collect::<Vec<_>>();
    for (i, g) in group.iter().enumerate() {
        if safe[i] != safe[reps[*g]] || source_safe(i) != source_safe(reps[*g]) {
            return Err(BenchError::Invalid(format!("subsystem {i} shares a model but not the safe sets")));
        }
    }
    let t = Instant::now();
    let models = reps
        .par_iter()
        .map(|&r| build_abstraction(&case.subsystems[r], case.abstraction_feedback(), case.abstraction_params(r)))
        .collect::<Result<Vec<_>, _>>()?;
    let abstraction_time = t.elapsed();
    let t = Instant::now();
    let controllers = models
        .par_iter()
        .zip(&reps)
        .map(|(m, &r)| {
            let assumed = neighbor_assumption(m, safe, 0.0)?;
            synthesize_safety(m, &SafetySpec::new(safe[r].clone()), Some(&assumed))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let synthesis_time = t.elapsed();
    let certs = case.certificates(case.eta, Direction::AbstractionToConcrete)?;
    let net = case.network()?;
    let t = Instant::now();
    let ctrl_refs: Vec<&Controller> = group.iter().map(|g| &controllers[*g]).collect();
    let cert_refs: Vec<&Certificate> = certs.iter().collect();
    let trajectory = simulate_closed_loop(&net, &ctrl_refs, &cert_refs, safe, x0, steps)?;
    let simulation_time = t.elapsed();
    Ok(ClosedLoopRun { models, controllers, group, trajectory, abstraction_time, synthesis_time, simulation_time })
}
