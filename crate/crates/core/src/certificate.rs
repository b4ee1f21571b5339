//! Alternating-simulation certificates: the incremental-stabilizability route for
//! nonlinear subsystems, the LMI route for linear ones, and sampling verifiers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::SymbolicModel;
use crate::gain::{
    DEFAULT_S_MAX, Decision, GainError, GainFn, compose, id_plus, inverse, less_than_identity, log_samples,
    minus_id_inverse,
};
use crate::linalg::{LinalgError, Matrix, cholesky, sqrt_psd, symmetric_eigen};
use crate::system::{BoxUnion, Feedback, LinearDynamics, SubsystemDef};

/// Slack allowed on sampled inequalities.
pub const CHECK_TOL: f64 = 1e-9;
/// Relative eigenvalue tolerance of the LMI check.
pub const LMI_TOL: f64 = 1e-10;

const SAMPLE_CHUNK: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertError {
    #[error("tuning functions invalid: {0}")]
    TuningInvalid(String),
    #[error("stabilizability data invalid: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error("LMI does not hold (max violation {violation:e})")]
    LmiFails { violation: f64 },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite")]
    NotPd,
    #[error(transparent)]
    Linalg(LinalgError),
}

impl From<LinalgError> for CertError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotSymmetric(_) => CertError::NotSymmetric,
            LinalgError::NotPositiveDefinite { .. } => CertError::NotPd,
            other => CertError::Linalg(other),
        }
    }
}

/// Shape of `G` / `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VForm {
    /// `‖x − x'‖_∞`.
    Norm,
    /// `√((x − x')ᵀ Z (x − x'))`.
    Quadratic { z: Matrix },
}

impl VForm {
    pub fn eval(&self, x: &[f64], xh: &[f64]) -> f64 {
        match self {
            VForm::Norm => x.iter().zip(xh).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            VForm::Quadratic { z } => {
                let d: Vec<f64> = x.iter().zip(xh).map(|(a, b)| a - b).collect();
                z.quadratic_form(&d).max(0.0).sqrt()
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum FeedbackRepr {
    Zero,
    Linear { k: Matrix },
}

impl Serialize for Feedback {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Feedback::Zero => FeedbackRepr::Zero.serialize(s),
            Feedback::Linear(k) => FeedbackRepr::Linear { k: k.clone() }.serialize(s),
            Feedback::Custom(_) => Err(serde::ser::Error::custom("custom feedback cannot be serialized")),
        }
    }
}

impl<'de> Deserialize<'de> for Feedback {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match FeedbackRepr::deserialize(d)? {
            FeedbackRepr::Zero => Feedback::Zero,
            FeedbackRepr::Linear { k } => Feedback::Linear(k),
        })
    }
}

/// How an abstract input is turned into a concrete one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Refinement {
    /// `u = H(x) + û`.
    Nonlinear { feedback: Feedback },
    /// `u = K(x − x̂) + û`.
    Linear { k: Matrix },
}

impl Refinement {
    pub fn apply(&self, x: &[f64], xh: &[f64], uh: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; uh.len()];
        match self {
            Refinement::Nonlinear { feedback } => feedback.apply_into(x, &mut u),
            Refinement::Linear { k } => {
                let d: Vec<f64> = x.iter().zip(xh).map(|(a, b)| a - b).collect();
                k.mul_vec_into(&d, &mut u);
            }
        }
        for (a, b) in u.iter_mut().zip(uh) {
            *a += b;
        }
        u
    }
}

/// `V(x_d, x̂_d) ≤ max{σ(V(x,x̂)), ρ_int(‖w−ŵ‖), ρ_ext(‖û‖), ε}` and `α(‖h(x)−ĥ(x̂)‖) ≤ V(x,x̂)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub alpha: GainFn,
    pub sigma: GainFn,
    pub rho_int: GainFn,
    pub rho_ext: GainFn,
    pub epsilon: f64,
    pub v_form: VForm,
    pub refinement: Refinement,
}

impl Certificate {
    pub fn v(&self, x: &[f64], xh: &[f64]) -> f64 {
        self.v_form.eval(x, xh)
    }

    pub fn bound(&self, v: f64, dw: f64, uh_norm: f64) -> f64 {
        self.sigma
            .eval(v)
            .max(self.rho_int.eval(dw))
            .max(self.rho_ext.eval(uh_norm))
            .max(self.epsilon)
    }

    pub fn refine(&self, x: &[f64], xh: &[f64], uh: &[f64]) -> Vec<f64> {
        self.refinement.apply(x, xh, uh)
    }

    pub fn sigma_decision(&self) -> Decision {
        less_than_identity(&self.sigma, DEFAULT_S_MAX)
    }
}

/// Data of an incrementally input-to-state stabilizable subsystem.
#[derive(Debug, Clone)]
pub struct IncrementalStabilizabilityData {
    pub v_form: VForm,
    pub feedback: Feedback,
    pub alpha_lo: GainFn,
    pub alpha_hi: GainFn,
    pub kappa: GainFn,
    pub gamma_int: GainFn,
    pub gamma_ext: GainFn,
    /// Weak-triangle constant: `G(x,x') ≤ G(x,x'') + γ̂(‖x'−x''‖)`.
    pub gamma_hat: GainFn,
    /// Output Lipschitz bound: `‖h(x)−h(x')‖ ≤ ℓ(‖x−x'‖)`.
    pub ell: GainFn,
}

impl IncrementalStabilizabilityData {
    fn validate(&self) -> Result<(), CertError> {
        for g in [&self.alpha_lo, &self.alpha_hi, &self.kappa, &self.gamma_int, &self.gamma_ext, &self.gamma_hat, &self.ell] {
            g.validate()?;
        }
        if log_samples(1e-6, DEFAULT_S_MAX, 1000).any(|s| self.alpha_lo.eval(s) > self.alpha_hi.eval(s) * (1.0 + 1e-12)) {
            return Err(CertError::InvalidData("lower bound α̲ exceeds ᾱ".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TuningFunctions {
    pub lambda: GainFn,
    /// May be omitted when `γ_int` and `γ̂` are linear.
    pub chi: Option<GainFn>,
    pub psi: GainFn,
    pub kappa_hat: GainFn,
}

impl TuningFunctions {
    /// `λ = id`, `ψ = 0.99·id`, `κ̂ = κ`, no `χ`.
    pub fn standard(kappa: &GainFn) -> Self {
        TuningFunctions { lambda: GainFn::Identity, chi: None, psi: GainFn::linear(0.99), kappa_hat: kappa.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    AbstractionToConcrete,
    /// Uses the input quantization step `mu`.
    ConcreteToAbstraction { mu: f64 },
}

fn linear_slope_in_unit(g: &GainFn, name: &str) -> Result<f64, CertError> {
    match g.clone().normalize().linear_coeff() {
        Some(c) if c > 0.0 && c < 1.0 => Ok(c),
        Some(c) => Err(CertError::TuningInvalid(format!("{name} slope {c} is not in (0, 1)"))),
        None => Err(CertError::TuningInvalid(format!("{name} must be linear, got {g}"))),
    }
}

/// Certificate for `G` from incremental stabilizability data.
pub fn derive_nonlinear_certificate(
    data: &IncrementalStabilizabilityData,
    tuning: &TuningFunctions,
    eta: f64,
    direction: Direction,
) -> Result<Certificate, CertError> {
    data.validate()?;
    if !(eta >= 0.0) {
        return Err(CertError::InvalidData(format!("η must be nonnegative, got {eta}")));
    }
    let psi = linear_slope_in_unit(&tuning.psi, "ψ")?;
    let k_hat = linear_slope_in_unit(&tuning.kappa_hat, "κ̂")?;
    if log_samples(DEFAULT_S_MAX * 1e-12, DEFAULT_S_MAX, 1000)
        .any(|s| tuning.kappa_hat.eval(s) > data.kappa.eval(s) * (1.0 + 1e-12))
    {
        return Err(CertError::TuningInvalid("κ̂ exceeds κ at a sample point".into()));
    }
    tuning.lambda.validate()?;
    let chi_terms = match &tuning.chi {
        Some(chi) => {
            let tail = minus_id_inverse(chi).map_err(|e| CertError::TuningInvalid(e.to_string()))?;
            Some((chi.clone(), tail))
        }
        None => {
            if !data.gamma_int.is_linear() || !data.gamma_hat.is_linear() {
                return Err(CertError::TuningInvalid("χ may only be omitted when γ_int and γ̂ are linear".into()));
            }
            None
        }
    };

    let sigma = GainFn::linear(1.0 - (1.0 - psi) * k_hat);
    let scale = GainFn::linear(1.0 / (k_hat * psi));

    let mut rho = vec![id_plus(&tuning.lambda), scale.clone()];
    if let Some((chi, _)) = &chi_terms {
        rho.push(chi.clone());
    }
    rho.push(data.gamma_int.clone());
    let rho_int = GainFn::compose_all(rho);

    let lambda_inv = inverse(&tuning.lambda)?;
    let mut eps_chain = vec![id_plus(&lambda_inv), scale];
    if let Some((chi, tail)) = chi_terms {
        eps_chain.push(chi);
        eps_chain.push(tail);
    }
    let eps_fn = GainFn::compose_all(eps_chain);
    let inner = match direction {
        Direction::AbstractionToConcrete => data.gamma_hat.eval(eta),
        Direction::ConcreteToAbstraction { mu } => data.gamma_ext.eval(mu) + data.gamma_hat.eval(eta),
    };
    let epsilon = eps_fn.eval(inner);

    let alpha = inverse(&compose(&data.ell, &inverse(&data.alpha_lo)?))?;
    Ok(Certificate {
        alpha,
        sigma,
        rho_int,
        rho_ext: GainFn::Zero,
        epsilon,
        v_form: data.v_form.clone(),
        refinement: Refinement::Nonlinear { feedback: data.feedback.clone() },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LmiOutcome {
    Holds { min_eig: f64 },
    Fails { violation: f64 },
}

impl LmiOutcome {
    pub fn holds(&self) -> bool {
        matches!(self, LmiOutcome::Holds { .. })
    }
}

/// Checks `(1+2θ)(A+BK)ᵀZ(A+BK) ⪯ κ_c Z` with `Z ≻ 0`.
pub fn check_lmi(a: &Matrix, b: &Matrix, k: &Matrix, z: &Matrix, kappa_c: f64, theta: f64) -> Result<LmiOutcome, CertError> {
    z.check_symmetric()?;
    cholesky(z)?;
    let m = a.add(&b.mul(k)?)?;
    let s = z.scale(kappa_c).sub(&m.transpose().mul(z)?.mul(&m)?.scale(1.0 + 2.0 * theta))?;
    let n = s.rows();
    let s = Matrix::from_fn(n, n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
    let eig = symmetric_eigen(&s)?;
    let norm = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min_eig = eig.min();
    if min_eig >= -LMI_TOL * norm {
        Ok(LmiOutcome::Holds { min_eig })
    } else {
        Ok(LmiOutcome::Fails { violation: -min_eig })
    }
}

/// Near-smallest `κ_c` (bisection, then a 1e-6 step inside) for which the LMI holds with the
/// given `θ`, halving `θ` from 1 until some `κ_c < 1` works.
pub fn find_lmi_constants(a: &Matrix, b: &Matrix, k: &Matrix, z: &Matrix) -> Result<Option<(f64, f64)>, CertError> {
    let mut theta = 1.0;
    for _ in 0..40 {
        if check_lmi(a, b, k, z, 1.0 - 1e-12, theta)?.holds() {
            let (mut lo, mut hi) = (0.0, 1.0 - 1e-12);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if check_lmi(a, b, k, z, mid, theta)?.holds() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            // step off the boundary so the returned pair holds with some margin
            let kappa = hi + 1e-6 * (1.0 - hi);
            return Ok(Some((kappa, theta)));
        }
        theta *= 0.5;
    }
    Ok(None)
}

#[derive(Debug, Clone)]
pub struct LinearCertificateParams {
    pub z: Matrix,
    pub k: Matrix,
    pub kappa_c: f64,
    pub theta: f64,
    pub psi_c: f64,
    pub delta_c: f64,
    pub eta: f64,
}

/// Certificate for `V(x,x̂) = √((x−x̂)ᵀZ(x−x̂))` of a linear subsystem.
pub fn derive_linear_certificate(
    sys: &LinearDynamics,
    params: &LinearCertificateParams,
    direction: Direction,
) -> Result<Certificate, CertError> {
    let LinearCertificateParams { z, k, kappa_c, theta, psi_c, delta_c, eta } = params;
    let (kappa_c, theta, psi_c, delta_c, eta) = (*kappa_c, *theta, *psi_c, *delta_c, *eta);
    if !(kappa_c > 0.0 && kappa_c < 1.0) {
        return Err(CertError::TuningInvalid(format!("κ_c = {kappa_c} not in (0, 1)")));
    }
    if !(theta > 0.0) || !(delta_c > 0.0) || !(psi_c > 0.0 && psi_c < 1.0) || !(eta >= 0.0) {
        return Err(CertError::TuningInvalid(format!("θ={theta}, ψ_c={psi_c}, δ_c={delta_c}, η={eta}")));
    }
    if let LmiOutcome::Fails { violation } = check_lmi(&sys.a, &sys.b, k, z, kappa_c, theta)? {
        return Err(CertError::LmiFails { violation });
    }
    let n = sys.a.rows() as f64;
    let p = sys.d.cols() as f64;
    let z_eig = symmetric_eigen(z)?;
    let ctc = sys.c.transpose().mul(&sys.c)?;
    let ctc_max = symmetric_eigen(&ctc)?.max();
    if !(ctc_max > 0.0) {
        return Err(CertError::InvalidData("output matrix C is zero".into()));
    }
    let alpha = GainFn::linear((z_eig.min() / (n * ctc_max)).sqrt());
    let k_hat = 1.0 - kappa_c.sqrt();
    let sigma = GainFn::linear(1.0 - k_hat * (1.0 - psi_c));
    let sqrt_z_d = if sys.d.cols() == 0 { 0.0 } else { sqrt_psd(z)?.mul(&sys.d)?.spectral_norm() };
    let rho_coeff = (1.0 + delta_c) / (k_hat * psi_c) * (p * (1.0 + theta + theta * theta) / theta).sqrt() * sqrt_z_d;
    let step = match direction {
        Direction::AbstractionToConcrete => eta,
        Direction::ConcreteToAbstraction { mu } => sys.b.inf_norm() * mu + eta,
    };
    let epsilon = (1.0 + 1.0 / delta_c) / (k_hat * psi_c) * (n * (2.0 + theta) * z_eig.max() / theta).sqrt() * step;
    Ok(Certificate {
        alpha,
        sigma,
        rho_int: GainFn::linear(rho_coeff),
        rho_ext: GainFn::Zero,
        epsilon,
        v_form: VForm::Quadratic { z: z.clone() },
        refinement: Refinement::Linear { k: k.clone() },
    })
}

/// One tuple `(x, x', u, u', w, w')` of the stabilizability inequalities.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizabilitySample {
    pub x: Vec<f64>,
    pub x2: Vec<f64>,
    pub u: Vec<f64>,
    pub u2: Vec<f64>,
    pub w: Vec<f64>,
    pub w2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SamplingReport<W> {
    pub samples: usize,
    pub skipped: usize,
    pub violations: usize,
    /// Largest amount by which a right-hand side was exceeded (negative if none was).
    pub worst_excess: f64,
    pub witness: Option<W>,
}

impl<W> SamplingReport<W> {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn empty() -> Self {
        SamplingReport { samples: 0, skipped: 0, violations: 0, worst_excess: f64::NEG_INFINITY, witness: None }
    }

    fn absorb(&mut self, other: SamplingReport<W>) {
        self.samples += other.samples;
        self.skipped += other.skipped;
        self.violations += other.violations;
        if other.worst_excess > self.worst_excess {
            self.worst_excess = other.worst_excess;
            if other.witness.is_some() {
                self.witness = other.witness;
            }
        }
    }
}

pub type StabilizabilityReport = SamplingReport<StabilizabilitySample>;

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

pub(crate) fn sample_box_union(rng: &mut impl Rng, s: &BoxUnion) -> Vec<f64> {
    let b = &s.boxes()[rng.gen_range(0..s.boxes().len())];
    b.lo.iter().zip(&b.hi).map(|(l, h)| rng.gen_range(*l..=*h)).collect()
}

/// Largest excess over both stabilizability inequalities at one tuple (≤ 0 means satisfied).
pub fn stabilizability_excess(sub: &SubsystemDef, data: &IncrementalStabilizabilityData, t: &StabilizabilitySample) -> f64 {
    let g = data.v_form.eval(&t.x, &t.x2);
    let dx = inf_dist(&t.x, &t.x2);
    let sandwich = (data.alpha_lo.eval(dx) - g).max(g - data.alpha_hi.eval(dx));
    let applied = |x: &[f64], u: &[f64]| {
        let mut h = vec![0.0; u.len()];
        data.feedback.apply_into(x, &mut h);
        h.iter().zip(u).map(|(a, b)| a + b).collect::<Vec<f64>>()
    };
    let xd = sub.step(&t.x, &applied(&t.x, &t.u), &t.w);
    let xd2 = sub.step(&t.x2, &applied(&t.x2, &t.u2), &t.w2);
    let lhs = data.v_form.eval(&xd, &xd2) - g;
    let rhs = -data.kappa.eval(g) + data.gamma_int.eval(inf_dist(&t.w, &t.w2)) + data.gamma_ext.eval(inf_dist(&t.u, &t.u2));
    sandwich.max(lhs - rhs)
}

fn chunked<W: Send>(
    samples: usize,
    seed: u64,
    body: impl Fn(&mut ChaCha8Rng, &mut SamplingReport<W>) + Sync,
) -> SamplingReport<W> {
    let chunks = samples.div_ceil(SAMPLE_CHUNK);
    let parts: Vec<SamplingReport<W>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut rep = SamplingReport::empty();
            let n = SAMPLE_CHUNK.min(samples - c * SAMPLE_CHUNK);
            for _ in 0..n {
                body(&mut rng, &mut rep);
            }
            rep
        })
        .collect();
    let mut out = SamplingReport::empty();
    for p in parts {
        out.absorb(p);
    }
    out
}

/// Random tuples from the declared sets, checked against both inequalities.
pub fn verify_stabilizability_data(
    sub: &SubsystemDef,
    data: &IncrementalStabilizabilityData,
    samples: usize,
    seed: u64,
) -> StabilizabilityReport {
    let w_set = sub.w_set();
    chunked(samples, seed, |rng, rep| {
        let draw_w = |rng: &mut ChaCha8Rng| w_set.as_ref().map_or_else(Vec::new, |s| sample_box_union(rng, s));
        let t = StabilizabilitySample {
            x: sample_box_union(rng, &sub.x_set),
            x2: sample_box_union(rng, &sub.x_set),
            u: sample_box_union(rng, &sub.u_set),
            u2: sample_box_union(rng, &sub.u_set),
            w: draw_w(rng),
            w2: draw_w(rng),
        };
        let e = stabilizability_excess(sub, data, &t);
        rep.samples += 1;
        if e > CHECK_TOL {
            rep.violations += 1;
        }
        if e > rep.worst_excess {
            rep.worst_excess = e;
            rep.witness = Some(t);
        }
    })
}

/// One draw of the one-step certificate check.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateSample {
    pub x: Vec<f64>,
    pub x_hat: usize,
    pub u_hat: usize,
    pub w: Vec<f64>,
    pub w_hat: usize,
}

pub type CertificateReport = SamplingReport<CertificateSample>;

/// Excess of `min_{x̂_d} V(x_d, x̂_d)` over the certificate bound and of the output
/// inequality; `None` when the abstract triple is out of domain.
pub fn certificate_step_excess(model: &SymbolicModel, cert: &Certificate, t: &CertificateSample) -> Option<f64> {
    let xh = model.x_grid().point(t.x_hat);
    let uh = model.u_grid().point(t.u_hat);
    let wh = model.w_point(t.w_hat);
    let (succ, flagged) = model.successors_idx(t.x_hat, t.u_hat, t.w_hat);
    if flagged || succ.is_empty() {
        return None;
    }
    let sub = model.subsystem();
    let u = cert.refine(&t.x, &xh, &uh);
    let xd = sub.step(&t.x, &u, &t.w);
    let best = succ
        .iter()
        .map(|s| cert.v(&xd, &model.x_grid().point(*s)))
        .fold(f64::INFINITY, f64::min);
    let v = cert.v(&t.x, &xh);
    let uh_norm = uh.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
    let step = best - cert.bound(v, inf_dist(&t.w, &wh), uh_norm);
    let out = cert.alpha.eval(inf_dist(&sub.output(&t.x), &sub.output(&xh))) - v;
    Some(step.max(out))
}

fn sample_near(rng: &mut impl Rng, set: &BoxUnion, center: &[f64], radius: f64) -> Vec<f64> {
    for _ in 0..16 {
        let p: Vec<f64> = center.iter().map(|c| c + rng.gen_range(-radius..=radius)).collect();
        if set.contains(&p) {
            return p;
        }
    }
    sample_box_union(rng, set)
}

/// Sampled one-step checks of the certificate against the symbolic model.
/// Concrete points are drawn near their abstract counterparts at several scales.
pub fn verify_certificate_empirically(
    model: &SymbolicModel,
    cert: &Certificate,
    samples: usize,
    seed: u64,
) -> CertificateReport {
    let sub = model.subsystem();
    let w_set = sub.w_set();
    let eta = model.eta();
    chunked(samples, seed, |rng, rep| {
        let x_hat = rng.gen_range(0..model.n_states());
        let u_hat = rng.gen_range(0..model.n_inputs());
        let w_hat = rng.gen_range(0..model.n_internal());
        let scale = [eta, 10.0 * eta, f64::INFINITY][rng.gen_range(0..3)];
        let xh = model.x_grid().point(x_hat);
        let x = if scale.is_finite() { sample_near(rng, &sub.x_set, &xh, scale) } else { sample_box_union(rng, &sub.x_set) };
        let w = match &w_set {
            None => Vec::new(),
            Some(s) if scale.is_finite() => sample_near(rng, s, &model.w_point(w_hat), scale),
            Some(s) => sample_box_union(rng, s),
        };
        let t = CertificateSample { x, x_hat, u_hat, w, w_hat };
        match certificate_step_excess(model, cert, &t) {
            None => rep.skipped += 1,
            Some(e) => {
                rep.samples += 1;
                if e > CHECK_TOL {
                    rep.violations += 1;
                }
                if e > rep.worst_excess {
                    rep.worst_excess = e;
                    rep.witness = Some(t);
                }
            }
        }
    })
}

/// Stabilizability data with `G = ‖·‖_∞`, `H ≡ 0`, identity bounds and `γ̂ = id`.
pub fn norm_data(kappa: GainFn, gamma_int: GainFn, gamma_ext: GainFn) -> IncrementalStabilizabilityData {
    IncrementalStabilizabilityData {
        v_form: VForm::Norm,
        feedback: Feedback::Zero,
        alpha_lo: GainFn::Identity,
        alpha_hi: GainFn::Identity,
        kappa,
        gamma_int,
        gamma_ext,
        gamma_hat: GainFn::Identity,
        ell: GainFn::Identity,
    }
}
