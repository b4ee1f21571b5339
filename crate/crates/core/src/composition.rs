//! Network-level composition: gain matrix, small-gain and Ω-path checks, the
//! composed certificate and the relation error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::SymbolicModel;
use crate::certificate::{CHECK_TOL, Certificate, SamplingReport};
use crate::gain::{
    DEFAULT_S_MAX, Decision, GainError, GainFn, compose, id_plus, inverse, less_than_identity, minus_id_inverse,
};
use crate::system::{InterconnectionSpec, NetworkSystem, SubsystemDef};

/// Default largest `N` for which cycles are enumerated.
pub const DEFAULT_CYCLE_CAP: usize = 12;
const EXP_TOL: f64 = 1e-12;
const TIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositionError {
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("N = {n} exceeds the cycle-enumeration cap {cap}; use linear_fast")]
    CapExceeded { n: usize, cap: usize },
    #[error("entry ({i}, {j}) is not linear, linear_fast does not apply")]
    NotLinear { i: usize, j: usize },
    #[error("diagonal entry {i} is not below the identity")]
    DiagonalNotContracting { i: usize },
    #[error("ρ_int of subsystem {i} is nonlinear and needs χ")]
    ChiRequired { i: usize },
    #[error("small-gain condition violated on cycle {cycle:?}")]
    SmallGainViolated { cycle: Vec<usize> },
    #[error("small-gain condition only decided numerically on cycle {cycle:?}")]
    SmallGainUndecided { cycle: Vec<usize> },
    #[error("Ω-path condition only holds numerically")]
    OmegaPathUndecided,
    #[error("Ω-path condition fails at ({i}, {j})")]
    OmegaPathFails { i: usize, j: usize },
}

/// `Γ` with `γ_ii = σ_i`; rows are sparse, absent entries are `Zero`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainMatrix {
    n: usize,
    rows: Vec<Vec<(usize, GainFn)>>,
}

static ZERO: GainFn = GainFn::Zero;

impl GainMatrix {
    /// Builds from the diagonal and off-diagonal entries; the diagonal must be `< id`.
    pub fn new(diag: Vec<GainFn>, entries: Vec<(usize, usize, GainFn)>) -> Result<Self, CompositionError> {
        let n = diag.len();
        let mut rows: Vec<Vec<(usize, GainFn)>> = vec![Vec::new(); n];
        for (i, d) in diag.into_iter().enumerate() {
            d.validate()?;
            if !less_than_identity(&d, DEFAULT_S_MAX).is_yes() {
                return Err(CompositionError::DiagonalNotContracting { i });
            }
            rows[i].push((i, d));
        }
        for (i, j, g) in entries {
            if i >= n || j >= n || i == j {
                return Err(CompositionError::Dimension(format!("off-diagonal entry ({i}, {j}) for N = {n}")));
            }
            g.validate()?;
            let g = g.normalize();
            if g.is_zero() {
                continue;
            }
            match rows[i].iter_mut().find(|(k, _)| *k == j) {
                Some(slot) => slot.1 = g,
                None => rows[i].push((j, g)),
            }
        }
        for r in &mut rows {
            r.sort_by_key(|(j, _)| *j);
        }
        Ok(GainMatrix { n, rows })
    }

    /// Dense form; entries missing from `dense` rows are ignored only if `Zero`.
    pub fn from_dense(dense: Vec<Vec<GainFn>>) -> Result<Self, CompositionError> {
        let n = dense.len();
        if dense.iter().any(|r| r.len() != n) {
            return Err(CompositionError::Dimension("gain matrix must be N×N".into()));
        }
        let mut diag = Vec::with_capacity(n);
        let mut entries = Vec::new();
        for (i, row) in dense.into_iter().enumerate() {
            for (j, g) in row.into_iter().enumerate() {
                if i == j {
                    diag.push(g);
                } else {
                    entries.push((i, j, g));
                }
            }
        }
        Self::new(diag, entries)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &GainFn {
        self.rows[i].iter().find(|(k, _)| *k == j).map_or(&ZERO, |(_, g)| g)
    }

    /// Nonzero entries of row `i`, including the diagonal.
    pub fn row(&self, i: usize) -> &[(usize, GainFn)] {
        &self.rows[i]
    }

    pub fn off_diagonal(&self) -> impl Iterator<Item = (usize, usize, &GainFn)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().filter(move |(j, _)| *j != i).map(move |(j, g)| (i, *j, g)))
    }

    fn is_power_class(&self) -> bool {
        self.off_diagonal().all(|(_, _, g)| g.as_power().is_some())
    }
}

/// Sources feeding each subsystem, read off the internal-input blocks.
pub fn topology_of(subs: &[SubsystemDef]) -> Vec<Vec<usize>> {
    subs.iter()
        .map(|s| {
            let mut v: Vec<usize> = s.blocks.iter().map(|b| b.source).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect()
}

fn max_varpi_row(varpi_hat: &InterconnectionSpec, i: usize) -> f64 {
    (0..varpi_hat.n).filter(|j| *j != i).map(|j| varpi_hat.get(i, j)).fold(0.0, f64::max)
}

fn all_zero(varpi_hat: &InterconnectionSpec) -> bool {
    varpi_hat.varpi.iter().flatten().all(|v| *v == 0.0)
}

/// `γ_ii = σ_i`, `γ_ij = (id+λ)∘ρ_i,int∘χ∘α_j⁻¹` on edges `j → i`, with `χ`
/// dropped for linear `ρ_i,int` and `id+λ` dropped when every `ϖ̂_ij` is zero.
pub fn build_gain_matrix(
    certs: &[Certificate],
    topology: &[Vec<usize>],
    lambda: &GainFn,
    chi: Option<&GainFn>,
    varpi_hat: &InterconnectionSpec,
) -> Result<GainMatrix, CompositionError> {
    let n = certs.len();
    if topology.len() != n || varpi_hat.n != n {
        return Err(CompositionError::Dimension(format!(
            "{n} certificates, {} topology rows, coupling N = {}",
            topology.len(),
            varpi_hat.n
        )));
    }
    let alpha_inv = certs.iter().map(|c| inverse(&c.alpha)).collect::<Result<Vec<_>, _>>()?;
    let outer = if all_zero(varpi_hat) { GainFn::Identity } else { id_plus(lambda) };
    let mut entries = Vec::new();
    for (i, srcs) in topology.iter().enumerate() {
        let rho = &certs[i].rho_int;
        let inner = match (rho.is_linear(), chi) {
            (true, _) => rho.clone(),
            (false, Some(c)) => compose(rho, c),
            (false, None) => return Err(CompositionError::ChiRequired { i }),
        };
        let head = compose(&outer, &inner);
        for &j in srcs {
            if j >= n || j == i {
                return Err(CompositionError::Dimension(format!("subsystem {i} lists source {j}")));
            }
            entries.push((i, j, compose(&head, &alpha_inv[j])));
        }
    }
    GainMatrix::new(certs.iter().map(|c| c.sigma.clone()).collect(), entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgcMode {
    Exhaustive,
    LinearFast,
    /// linear_fast when every entry is linear, exhaustive otherwise.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SmallGainOutcome {
    Satisfied,
    Violated { cycle: Vec<usize> },
    /// Some cycle could only be checked by sampling (it passed).
    Undecided { cycle: Vec<usize> },
}

pub fn check_small_gain(gm: &GainMatrix, mode: SgcMode, cap: usize) -> Result<SmallGainOutcome, CompositionError> {
    match mode {
        SgcMode::Exhaustive => {
            if gm.n > cap {
                return Err(CompositionError::CapExceeded { n: gm.n, cap });
            }
            Ok(exhaustive(gm))
        }
        SgcMode::LinearFast => linear_fast(gm),
        SgcMode::Auto => {
            if gm.off_diagonal().all(|(_, _, g)| g.is_linear()) {
                linear_fast(gm)
            } else {
                check_small_gain(gm, SgcMode::Exhaustive, cap)
            }
        }
    }
}

#[derive(Debug)]
enum CycleVerdict {
    Ok,
    Numeric,
    Bad,
}

fn decide_cycle_general(gm: &GainMatrix, cycle: &[usize]) -> CycleVerdict {
    let r = cycle.len();
    let mut numeric = false;
    for rot in 0..r {
        let chain = (0..r).map(|k| gm.get(cycle[(rot + k) % r], cycle[(rot + k + 1) % r]).clone()).collect();
        match less_than_identity(&GainFn::compose_all(chain), DEFAULT_S_MAX) {
            Decision::Yes => {}
            Decision::NumericOnly(true) => numeric = true,
            Decision::No | Decision::NumericOnly(false) => return CycleVerdict::Bad,
        }
    }
    if numeric { CycleVerdict::Numeric } else { CycleVerdict::Ok }
}

fn power_of(g: &GainFn) -> (f64, f64) {
    g.as_power().expect("power-class entry")
}

/// `γ_{i1 i2} ∘ … ∘ γ_{ir i1}` for power entries: exact coefficient and exponent.
fn cycle_power(gm: &GainMatrix, cycle: &[usize], rot: usize) -> (f64, f64) {
    let r = cycle.len();
    let (mut c, mut p) = (1.0, 1.0);
    for k in 0..r {
        let (ck, pk) = power_of(gm.get(cycle[(rot + k) % r], cycle[(rot + k + 1) % r]));
        c *= if p == 1.0 { ck } else { ck.powf(p) };
        p *= pk;
    }
    (c, p)
}

fn decide_cycle_power(gm: &GainMatrix, cycle: &[usize], c0: f64, p0: f64, all_linear: bool) -> CycleVerdict {
    if (p0 - 1.0).abs() > EXP_TOL {
        return CycleVerdict::Bad;
    }
    if c0 >= 1.0 {
        return CycleVerdict::Bad;
    }
    if !all_linear {
        for rot in 1..cycle.len() {
            if cycle_power(gm, cycle, rot).0 >= 1.0 {
                return CycleVerdict::Bad;
            }
        }
    }
    CycleVerdict::Ok
}

/// Simple cycles whose smallest vertex is `start`, depth first; stops at the first bad cycle.
fn cycles_from(gm: &GainMatrix, start: usize, power: bool) -> Option<(Vec<usize>, bool)> {
    let n = gm.n;
    let mut on_path = vec![false; n];
    let mut path = vec![start];
    on_path[start] = true;
    // per depth: (row cursor, coefficient, exponent, all-linear so far)
    let mut stack: Vec<(usize, f64, f64, bool)> = vec![(0, 1.0, 1.0, true)];
    let mut numeric: Option<Vec<usize>> = None;
    while let Some(top) = stack.last_mut() {
        let v = *path.last().unwrap();
        let row = gm.row(v);
        if top.0 >= row.len() {
            stack.pop();
            let done = path.pop().unwrap();
            on_path[done] = false;
            continue;
        }
        let (j, g) = &row[top.0];
        top.0 += 1;
        let (j, (c, p, lin)) = (*j, (top.1, top.2, top.3));
        if j == v || j < start {
            continue;
        }
        let (c2, p2, lin2) = if power {
            let (cj, pj) = power_of(g);
            (c * if p == 1.0 { cj } else { cj.powf(p) }, p * pj, lin && pj == 1.0)
        } else {
            (1.0, 1.0, false)
        };
        if j == start {
            let verdict = if power {
                decide_cycle_power(gm, &path, c2, p2, lin2)
            } else {
                decide_cycle_general(gm, &path)
            };
            match verdict {
                CycleVerdict::Ok => {}
                CycleVerdict::Numeric => {
                    if numeric.is_none() {
                        numeric = Some(path.clone());
                    }
                }
                CycleVerdict::Bad => return Some((path.clone(), true)),
            }
            continue;
        }
        if on_path[j] {
            continue;
        }
        on_path[j] = true;
        path.push(j);
        stack.push((0, c2, p2, lin2));
    }
    numeric.map(|c| (c, false))
}

fn exhaustive(gm: &GainMatrix) -> SmallGainOutcome {
    let power = gm.is_power_class();
    let found: Vec<Option<(Vec<usize>, bool)>> = (0..gm.n).into_par_iter().map(|s| cycles_from(gm, s, power)).collect();
    if let Some((cycle, _)) = found.iter().flatten().find(|(_, bad)| *bad) {
        return SmallGainOutcome::Violated { cycle: cycle.clone() };
    }
    match found.into_iter().flatten().next() {
        Some((cycle, _)) => SmallGainOutcome::Undecided { cycle },
        None => SmallGainOutcome::Satisfied,
    }
}

/// Bellman–Ford on edge weights `−ln c_ij`: satisfied iff every cycle weighs more than zero.
fn linear_fast(gm: &GainMatrix) -> Result<SmallGainOutcome, CompositionError> {
    let n = gm.n;
    let mut edges = Vec::new();
    for (i, j, g) in gm.off_diagonal() {
        let c = g.linear_coeff().ok_or(CompositionError::NotLinear { i, j })?;
        edges.push((i, j, -c.ln()));
    }
    let mut d = vec![0.0_f64; n];
    let mut parent = vec![usize::MAX; n];
    let mut last = None;
    for _ in 0..n {
        last = None;
        for &(i, j, w) in &edges {
            if d[i] + w < d[j] {
                d[j] = d[i] + w;
                parent[j] = i;
                last = Some(j);
            }
        }
        if last.is_none() {
            break;
        }
    }
    if let Some(mut v) = last {
        for _ in 0..n {
            v = parent[v];
        }
        // parent links run against edge direction
        let mut cycle = vec![v];
        let mut u = parent[v];
        while u != v {
            cycle.push(u);
            u = parent[u];
        }
        cycle.reverse();
        return Ok(SmallGainOutcome::Violated { cycle });
    }
    // zero-weight cycles live on tight edges
    let mut tight: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j, w) in &edges {
        if d[i] + w - d[j] <= TIGHT_TOL * (1.0 + w.abs() + d[i].abs()) {
            tight[i].push(j);
        }
    }
    Ok(match find_cycle(&tight) {
        Some(cycle) => SmallGainOutcome::Violated { cycle },
        None => SmallGainOutcome::Satisfied,
    })
}

fn find_cycle(adj: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut color = vec![0u8; n];
    let mut path: Vec<usize> = Vec::new();
    for s in 0..n {
        if color[s] != 0 {
            continue;
        }
        let mut stack = vec![(s, 0usize)];
        color[s] = 1;
        path.push(s);
        while let Some(top) = stack.last_mut() {
            let v = top.0;
            if top.1 < adj[v].len() {
                let j = adj[v][top.1];
                top.1 += 1;
                match color[j] {
                    0 => {
                        color[j] = 1;
                        path.push(j);
                        stack.push((j, 0));
                    }
                    1 => {
                        let at = path.iter().position(|x| *x == j).unwrap();
                        return Some(path[at..].to_vec());
                    }
                    _ => {}
                }
            } else {
                color[v] = 2;
                path.pop();
                stack.pop();
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaOutcome {
    Holds,
    HoldsNumerically,
    Fails { i: usize, j: usize },
}

/// `δ_i⁻¹∘γ_ij∘δ_j < id` for every nonzero entry.
pub fn verify_omega_path(gm: &GainMatrix, delta: &[GainFn]) -> Result<OmegaOutcome, CompositionError> {
    if delta.len() != gm.n {
        return Err(CompositionError::Dimension(format!("{} δ functions for N = {}", delta.len(), gm.n)));
    }
    let inv = delta.iter().map(inverse).collect::<Result<Vec<_>, _>>()?;
    let mut numeric = false;
    for i in 0..gm.n {
        for (j, g) in gm.row(i) {
            let f = GainFn::compose_all(vec![inv[i].clone(), g.clone(), delta[*j].clone()]);
            match less_than_identity(&f, DEFAULT_S_MAX) {
                Decision::Yes => {}
                Decision::NumericOnly(true) => numeric = true,
                _ => return Ok(OmegaOutcome::Fails { i, j: *j }),
            }
        }
    }
    Ok(if numeric { OmegaOutcome::HoldsNumerically } else { OmegaOutcome::Holds })
}

#[derive(Debug, Clone)]
pub struct CompositionOptions {
    pub varpi_hat: InterconnectionSpec,
    pub lambda: GainFn,
    pub chi: Option<GainFn>,
    /// `None` means `δ_i = id` for every subsystem.
    pub delta: Option<Vec<GainFn>>,
    pub mode: SgcMode,
    pub cap: usize,
    /// Accept small-gain and Ω-path conditions that were only decided by sampling.
    pub allow_numeric: bool,
}

impl CompositionOptions {
    pub fn exact_routing(n: usize) -> Self {
        CompositionOptions {
            varpi_hat: InterconnectionSpec::zero(n),
            lambda: GainFn::Identity,
            chi: None,
            delta: None,
            mode: SgcMode::Auto,
            cap: DEFAULT_CYCLE_CAP,
            allow_numeric: false,
        }
    }
}

/// Network certificate `Ṽ = max_i δ_i⁻¹(V_i)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComposedCertificate {
    pub sigma: GainFn,
    /// `α̃⁻¹ = max_i α_i⁻¹∘δ_i`; `α̃` itself is evaluated through it.
    pub alpha_inv: GainFn,
    pub rho_ext: GainFn,
    pub epsilon: f64,
    pub phi: Vec<f64>,
    pub delta: Vec<GainFn>,
    pub delta_inv: Vec<GainFn>,
    pub numeric_only: bool,
}

impl ComposedCertificate {
    /// `α̃`, symbolic where the inverse is.
    pub fn alpha(&self) -> Option<GainFn> {
        inverse(&self.alpha_inv).ok()
    }

    pub fn composed_v(&self, v_values: &[f64]) -> f64 {
        v_values.iter().zip(&self.delta_inv).map(|(v, d)| d.eval(*v)).fold(0.0, f64::max)
    }

    pub fn threshold(&self, v: f64) -> f64 {
        self.rho_ext.eval(v).max(self.epsilon)
    }
}

pub fn compose_certificates(
    certs: &[Certificate],
    topology: &[Vec<usize>],
    opts: &CompositionOptions,
) -> Result<ComposedCertificate, CompositionError> {
    let n = certs.len();
    let gm = build_gain_matrix(certs, topology, &opts.lambda, opts.chi.as_ref(), &opts.varpi_hat)?;
    let mut numeric_only = false;
    match check_small_gain(&gm, opts.mode, opts.cap)? {
        SmallGainOutcome::Satisfied => {}
        SmallGainOutcome::Violated { cycle } => return Err(CompositionError::SmallGainViolated { cycle }),
        SmallGainOutcome::Undecided { cycle } => {
            if !opts.allow_numeric {
                return Err(CompositionError::SmallGainUndecided { cycle });
            }
            numeric_only = true;
        }
    }
    let delta = opts.delta.clone().unwrap_or_else(|| vec![GainFn::Identity; n]);
    match verify_omega_path(&gm, &delta)? {
        OmegaOutcome::Holds => {}
        OmegaOutcome::HoldsNumerically if opts.allow_numeric => numeric_only = true,
        OmegaOutcome::HoldsNumerically => return Err(CompositionError::OmegaPathUndecided),
        OmegaOutcome::Fails { i, j } => return Err(CompositionError::OmegaPathFails { i, j }),
    }
    let delta_inv = delta.iter().map(inverse).collect::<Result<Vec<_>, _>>()?;

    let exact = all_zero(&opts.varpi_hat);
    let lambda_inv_plus = if exact { GainFn::Identity } else { id_plus(&inverse(&opts.lambda)?) };
    let mut phi = Vec::with_capacity(n);
    for (i, c) in certs.iter().enumerate() {
        if exact {
            phi.push(c.epsilon);
            continue;
        }
        let q = if c.rho_int.is_linear() {
            c.rho_int.clone()
        } else {
            let chi = opts.chi.as_ref().ok_or(CompositionError::ChiRequired { i })?;
            GainFn::compose_all(vec![c.rho_int.clone(), chi.clone(), minus_id_inverse(chi)?])
        };
        phi.push(lambda_inv_plus.eval(q.eval(max_varpi_row(&opts.varpi_hat, i)) + c.epsilon));
    }
    let epsilon = phi.iter().zip(&delta_inv).map(|(p, d)| d.eval(*p)).fold(0.0, f64::max);

    let mut sig = Vec::new();
    for i in 0..n {
        for (j, g) in gm.row(i) {
            sig.push(GainFn::compose_all(vec![delta_inv[i].clone(), g.clone(), delta[*j].clone()]));
        }
    }
    let sigma = GainFn::max_of(sig);
    let mut a_inv = Vec::with_capacity(n);
    for (c, d) in certs.iter().zip(&delta) {
        a_inv.push(compose(&inverse(&c.alpha)?, d));
    }
    let alpha_inv = GainFn::max_of(a_inv);
    let rho_ext = GainFn::max_of(certs.iter().zip(&delta_inv).map(|(c, d)| compose(d, &c.rho_ext)).collect());
    Ok(ComposedCertificate { sigma, alpha_inv, rho_ext, epsilon, phi, delta, delta_inv, numeric_only })
}

/// `ε̂ = α̃⁻¹(max{ρ̃_ext(v), ε̃})`.
pub fn relation_error(cc: &ComposedCertificate, v: f64) -> f64 {
    cc.alpha_inv.eval(cc.threshold(v))
}

/// `max_i δ_i⁻¹(V_i) ≤ max{ρ̃_ext(v), ε̃}`.
pub fn in_relation(cc: &ComposedCertificate, v_values: &[f64], v: f64) -> bool {
    cc.composed_v(v_values) <= cc.threshold(v)
}

/// Abstract and concrete network states of one composed check.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedSample {
    pub x: Vec<f64>,
    pub x_hat: Vec<usize>,
    pub u_hat: Vec<usize>,
}

/// Sampled network one-step checks of
/// `Ṽ(x_d, x̂_d) ≤ max{σ̃(Ṽ(x, x̂)), ρ̃_ext(‖û‖), ε̃}`, each subsystem choosing the
/// successor that minimises its own `V_i`. Abstract internal inputs are the
/// quantized abstract outputs of the neighbors.
pub fn verify_composed_empirically(
    net: &NetworkSystem,
    models: &[&SymbolicModel],
    certs: &[Certificate],
    cc: &ComposedCertificate,
    samples: usize,
    seed: u64,
) -> SamplingReport<ComposedSample> {
    let subs = net.subsystems();
    let n = subs.len();
    // grid states whose output lies in every block it feeds
    let feeds: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|j| {
            let mut v = Vec::new();
            for (i, s) in subs.iter().enumerate() {
                for (k, b) in s.blocks.iter().enumerate() {
                    if b.source == j {
                        v.push((i, k));
                    }
                }
            }
            v
        })
        .collect();
    let admissible: Vec<Vec<usize>> = (0..n)
        .map(|j| {
            (0..models[j].n_states())
                .filter(|&x| {
                    let y = subs[j].output(&models[j].x_grid().point(x));
                    feeds[j].iter().all(|&(i, k)| subs[i].blocks[k].set.contains(&y))
                })
                .collect()
        })
        .collect();
    if admissible.iter().any(|a| a.is_empty()) {
        return SamplingReport { samples: 0, skipped: samples, violations: 0, worst_excess: f64::NEG_INFINITY, witness: None };
    }
    const CHUNK: usize = 512;
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<SamplingReport<ComposedSample>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut rep = SamplingReport { samples: 0, skipped: 0, violations: 0, worst_excess: f64::NEG_INFINITY, witness: None };
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                match composed_draw(net, models, certs, cc, &admissible, &feeds, &mut rng) {
                    None => rep.skipped += 1,
                    Some((e, t)) => {
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
            }
            rep
        })
        .collect();
    let mut out = SamplingReport { samples: 0, skipped: 0, violations: 0, worst_excess: f64::NEG_INFINITY, witness: None };
    for p in parts {
        out.samples += p.samples;
        out.skipped += p.skipped;
        out.violations += p.violations;
        if p.worst_excess > out.worst_excess {
            out.worst_excess = p.worst_excess;
            out.witness = p.witness;
        }
    }
    out
}

fn composed_draw(
    net: &NetworkSystem,
    models: &[&SymbolicModel],
    certs: &[Certificate],
    cc: &ComposedCertificate,
    admissible: &[Vec<usize>],
    feeds: &[Vec<(usize, usize)>],
    rng: &mut ChaCha8Rng,
) -> Option<(f64, ComposedSample)> {
    let subs = net.subsystems();
    let n = subs.len();
    let scale_pick = rng.gen_range(0..3);
    let mut x_hat = Vec::with_capacity(n);
    let mut x = Vec::new();
    for j in 0..n {
        let xh = admissible[j][rng.gen_range(0..admissible[j].len())];
        let p = models[j].x_grid().point(xh);
        let eta = models[j].eta();
        let r = [0.5 * eta, 5.0 * eta, 50.0 * eta][scale_pick];
        let mut ok = None;
        for _ in 0..32 {
            let q: Vec<f64> = p.iter().map(|c| c + rng.gen_range(-r..=r)).collect();
            let y = subs[j].output(&q);
            if subs[j].x_set.contains(&q) && feeds[j].iter().all(|&(i, k)| subs[i].blocks[k].set.contains(&y)) {
                ok = Some(q);
                break;
            }
        }
        x.extend(ok?);
        x_hat.push(xh);
    }
    let u_hat: Vec<usize> = (0..n).map(|i| rng.gen_range(0..models[i].n_inputs())).collect();
    let mut u = Vec::new();
    let mut v_now = Vec::with_capacity(n);
    let mut uh_norm = 0.0_f64;
    for i in 0..n {
        let xs = net.state_slice(&x, i);
        let xh = models[i].x_grid().point(x_hat[i]);
        let uh = models[i].u_grid().point(u_hat[i]);
        uh_norm = uh.iter().fold(uh_norm, |m, a| m.max(a.abs()));
        u.extend(certs[i].refine(xs, &xh, &uh));
        v_now.push(certs[i].v(xs, &xh));
    }
    let xd = net.step(&x, &u).ok()?;
    let mut v_next = Vec::with_capacity(n);
    for i in 0..n {
        let m = models[i];
        let mut w_hat = Vec::with_capacity(subs[i].internal_dim());
        for (k, b) in subs[i].blocks.iter().enumerate() {
            let y = subs[b.source].output(&models[b.source].x_grid().point(x_hat[b.source]));
            w_hat.extend(m.w_grids()[k].nearest_point(&y).ok()?);
        }
        let wi = m.w_index_of_point(&w_hat).ok()?;
        let (succ, flagged) = m.successors_idx(x_hat[i], u_hat[i], wi);
        if flagged || succ.is_empty() {
            return None;
        }
        let xs = net.state_slice(&xd, i);
        let best = succ.iter().map(|s| certs[i].v(xs, &m.x_grid().point(*s))).fold(f64::INFINITY, f64::min);
        v_next.push(best);
    }
    let lhs = cc.composed_v(&v_next);
    let rhs = cc.sigma.eval(cc.composed_v(&v_now)).max(cc.rho_ext.eval(uh_norm)).max(cc.epsilon);
    Some((lhs - rhs, ComposedSample { x, x_hat, u_hat }))
}
