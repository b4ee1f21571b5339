//! Safety controllers on symbolic models, their refinement to concrete inputs
//! and closed-loop simulation of the network.

use std::io::{self, Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::abstraction::SymbolicModel;
use crate::certificate::Certificate;
use crate::system::{BoxUnion, Grid, NetworkSystem, SystemError};

const SGCT_MAGIC: &[u8; 4] = b"SGCT";
const SGCT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("winning set became empty at iteration {iteration}")]
    EmptyWinningSet { iteration: usize },
    #[error("state {x:?} of subsystem {subsystem} is outside the winning domain (step {step})")]
    OutsideWinningDomain { subsystem: usize, step: usize, x: Vec<f64> },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed controller file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetySpec {
    pub safe: BoxUnion,
}

impl SafetySpec {
    pub fn new(safe: BoxUnion) -> Self {
        SafetySpec { safe }
    }
}

/// Grid state → allowed grid inputs. States outside the winning domain have none.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    x_grid: Grid,
    u_grid: Grid,
    offsets: Vec<u64>,
    inputs: Vec<u32>,
    iterations: usize,
}

impl Controller {
    pub fn n_states(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn x_grid(&self) -> &Grid {
        &self.x_grid
    }

    pub fn u_grid(&self) -> &Grid {
        &self.u_grid
    }

    /// Allowed input indices at grid state `x`, ascending.
    pub fn allowed(&self, x: usize) -> &[u32] {
        &self.inputs[self.offsets[x] as usize..self.offsets[x + 1] as usize]
    }

    pub fn is_winning(&self, x: usize) -> bool {
        self.offsets[x + 1] > self.offsets[x]
    }

    pub fn domain(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states()).filter(|x| self.is_winning(*x))
    }

    pub fn domain_size(&self) -> usize {
        self.domain().count()
    }

    /// Fixed-point iterations until convergence.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), SynthesisError> {
        w.write_all(SGCT_MAGIC)?;
        w.write_all(&SGCT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_states() as u64).to_le_bytes())?;
        w.write_all(&(self.u_grid.len() as u64).to_le_bytes())?;
        w.write_all(&(self.iterations as u64).to_le_bytes())?;
        for o in &self.offsets {
            w.write_all(&o.to_le_bytes())?;
        }
        for i in &self.inputs {
            w.write_all(&i.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a controller written by [`Controller::write_to`] for the given grids.
    pub fn read_from(mut r: impl Read, x_grid: Grid, u_grid: Grid) -> Result<Self, SynthesisError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SGCT_MAGIC {
            return Err(SynthesisError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SGCT_VERSION {
            return Err(SynthesisError::Format(format!("unsupported version {version}")));
        }
        let n_states = read_u64(&mut r)? as usize;
        let n_inputs = read_u64(&mut r)? as usize;
        let iterations = read_u64(&mut r)? as usize;
        if n_states != x_grid.len() || n_inputs != u_grid.len() {
            return Err(SynthesisError::Format(format!(
                "file has {n_states} states / {n_inputs} inputs, grids have {} / {}",
                x_grid.len(),
                u_grid.len()
            )));
        }
        let offsets = (0..=n_states).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>, _>>()?;
        if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(SynthesisError::Format("offsets not monotone".into()));
        }
        let inputs = (0..offsets[n_states]).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>, _>>()?;
        if inputs.iter().any(|i| *i as usize >= n_inputs) {
            return Err(SynthesisError::Format("input index out of range".into()));
        }
        Ok(Controller { x_grid, u_grid, offsets, inputs, iterations })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, SynthesisError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, SynthesisError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Internal symbols whose every block component lies in `ranges[k]` grown by `margin`.
pub fn assumed_internal_symbols(model: &SymbolicModel, ranges: &[BoxUnion], margin: f64) -> Result<Vec<usize>, SynthesisError> {
    let grids = model.w_grids();
    if ranges.len() != grids.len() {
        return Err(SynthesisError::Dimension(format!("{} ranges for {} internal blocks", ranges.len(), grids.len())));
    }
    let inside = |set: &BoxUnion, p: &[f64]| {
        set.boxes().iter().any(|b| p.iter().enumerate().all(|(d, v)| *v >= b.lo[d] - margin - 1e-9 && *v <= b.hi[d] + margin + 1e-9))
    };
    let mut out = Vec::new();
    let mut w = vec![0.0; model.subsystem().internal_dim()];
    for s in 0..model.n_internal() {
        model.w_point_into(s, &mut w);
        let mut off = 0;
        let mut ok = true;
        for (g, set) in grids.iter().zip(ranges) {
            ok &= inside(set, &w[off..off + g.dim()]);
            off += g.dim();
        }
        if ok {
            out.push(s);
        }
    }
    Ok(out)
}

/// Assume-guarantee range: each internal block ranges over its source's safe set
/// grown by `margin`; blocks whose dimension differs from the source's safe set
/// keep their full range.
pub fn neighbor_assumption(model: &SymbolicModel, safe: &[BoxUnion], margin: f64) -> Result<Vec<usize>, SynthesisError> {
    let ranges: Vec<BoxUnion> = model
        .subsystem()
        .blocks
        .iter()
        .map(|b| match safe.get(b.source) {
            Some(s) if s.dim() == b.set.dim() => Ok(s.clone()),
            Some(_) => Ok(b.set.clone()),
            None => Err(SynthesisError::Dimension(format!("no safe set for source {}", b.source))),
        })
        .collect::<Result<_, _>>()?;
    assumed_internal_symbols(model, &ranges, margin)
}

/// Union over the assumed internal symbols of the successors of `(x, u)`,
/// or `None` as soon as one leaves `allowed` or the domain.
fn pair_successors(
    model: &SymbolicModel,
    x: usize,
    u: usize,
    order: &[usize],
    allowed: &[bool],
    marks: &mut [u64],
    scratch: &mut crate::abstraction::Scratch,
) -> Option<Vec<u32>> {
    let mut list: Vec<u32> = Vec::new();
    let mut bad = false;
    for &w in order {
        let flagged = model.for_each_successor(x, u, w, scratch, |s| {
            if !allowed[s] {
                bad = true;
            } else if marks[s >> 6] & (1 << (s & 63)) == 0 {
                marks[s >> 6] |= 1 << (s & 63);
                list.push(s as u32);
            }
        });
        if flagged || bad {
            bad = true;
            break;
        }
    }
    for s in &list {
        marks[*s as usize >> 6] &= !(1 << (s & 63));
    }
    if bad {
        return None;
    }
    list.sort_unstable();
    Some(list)
}

/// Maximal controlled-invariant subset of the safe grid states, with every
/// internal symbol in `assumed` (all of them when `None`) treated adversarially.
pub fn synthesize_safety(model: &SymbolicModel, spec: &SafetySpec, assumed: Option<&[usize]>) -> Result<Controller, SynthesisError> {
    let nx = model.n_states();
    let nu = model.n_inputs();
    let all: Vec<usize>;
    let assumed = match assumed {
        Some(a) => a,
        None => {
            all = (0..model.n_internal()).collect();
            &all
        }
    };
    if assumed.iter().any(|w| *w >= model.n_internal()) {
        return Err(SynthesisError::Dimension("assumed internal symbol out of range".into()));
    }
    // extremes first: they usually decide unsafe pairs
    let mut order: Vec<usize> = Vec::with_capacity(assumed.len());
    if let [first, middle @ .., last] = assumed {
        order.push(*first);
        order.push(*last);
        order.extend_from_slice(middle);
    } else {
        order.extend_from_slice(assumed);
    }

    let x_grid = model.x_grid();
    let safe0: Vec<bool> = (0..nx).map(|x| spec.safe.contains(&x_grid.point(x))).collect();
    if !safe0.iter().any(|b| *b) {
        return Err(SynthesisError::EmptyWinningSet { iteration: 0 });
    }
    let candidates: Vec<usize> = (0..nx).filter(|x| safe0[*x]).collect();
    let tables: Vec<Vec<(u32, Vec<u32>)>> = candidates
        .par_iter()
        .map_init(
            || (vec![0u64; nx.div_ceil(64)], model.scratch()),
            |(marks, scratch), &x| {
                if order.is_empty() {
                    return Vec::new();
                }
                (0..nu)
                    .filter_map(|u| pair_successors(model, x, u, &order, &safe0, marks, scratch).map(|s| (u as u32, s)))
                    .collect()
            },
        )
        .collect();

    let mut win = safe0;
    let mut iteration = 0;
    loop {
        iteration += 1;
        let next: Vec<bool> = candidates
            .iter()
            .zip(&tables)
            .map(|(&x, pairs)| win[x] && pairs.iter().any(|(_, s)| s.iter().all(|q| win[*q as usize])))
            .collect();
        let mut changed = false;
        for (&x, keep) in candidates.iter().zip(next) {
            if win[x] != keep {
                win[x] = keep;
                changed = true;
            }
        }
        if !win.iter().any(|b| *b) {
            return Err(SynthesisError::EmptyWinningSet { iteration });
        }
        if !changed {
            break;
        }
    }

    let mut offsets = vec![0u64; nx + 1];
    let mut inputs = Vec::new();
    let mut ci = 0;
    for x in 0..nx {
        if ci < candidates.len() && candidates[ci] == x {
            if win[x] {
                for (u, s) in &tables[ci] {
                    if s.iter().all(|q| win[*q as usize]) {
                        inputs.push(*u);
                    }
                }
            }
            ci += 1;
        }
        offsets[x + 1] = inputs.len() as u64;
    }
    Ok(Controller { x_grid: x_grid.clone(), u_grid: model.u_grid().clone(), offsets, inputs, iterations: iteration })
}

/// `x̂ = ϑ_η(x)`, the smallest allowed `û`, and `u` from the certificate's refinement.
pub fn refine_control(ctrl: &Controller, cert: &Certificate, x: &[f64]) -> Result<Vec<f64>, SynthesisError> {
    refine_at(ctrl, cert, x, 0, 0)
}

fn refine_at(ctrl: &Controller, cert: &Certificate, x: &[f64], subsystem: usize, step: usize) -> Result<Vec<f64>, SynthesisError> {
    let outside = || SynthesisError::OutsideWinningDomain { subsystem, step, x: x.to_vec() };
    let xi = ctrl.x_grid.nearest(x).map_err(|_| outside())?;
    let &ui = ctrl.allowed(xi).first().ok_or_else(outside)?;
    let xh = ctrl.x_grid.point(xi);
    let uh = ctrl.u_grid.point(ui as usize);
    Ok(cert.refine(x, &xh, &uh))
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `states[k]` is the stacked network state at step `k`.
    pub states: Vec<Vec<f64>>,
    /// First `(k, i)` with subsystem `i` outside its safe set.
    pub first_violation: Option<(usize, usize)>,
}

impl Trajectory {
    pub fn is_safe(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Runs every subsystem under its controller for `steps` steps.
pub fn simulate_closed_loop(
    net: &NetworkSystem,
    ctrls: &[&Controller],
    certs: &[&Certificate],
    safe: &[BoxUnion],
    x0: &[f64],
    steps: usize,
) -> Result<Trajectory, SynthesisError> {
    let n = net.len();
    if ctrls.len() != n || certs.len() != n || safe.len() != n {
        return Err(SynthesisError::Dimension(format!("{n} subsystems, {} controllers, {} certificates, {} safe sets", ctrls.len(), certs.len(), safe.len())));
    }
    if x0.len() != net.state_dim() {
        return Err(SynthesisError::Dimension(format!("initial state has length {}, network {}", x0.len(), net.state_dim())));
    }
    let check = |x: &[f64], k: usize| (0..n).find(|&i| !safe[i].contains(net.state_slice(x, i))).map(|i| (k, i));
    let mut states = vec![x0.to_vec()];
    let mut first_violation = check(x0, 0);
    for k in 0..steps {
        let x = states.last().unwrap();
        let parts: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| refine_at(ctrls[i], certs[i], net.state_slice(x, i), i, k))
            .collect::<Result<_, _>>()?;
        let u: Vec<f64> = parts.concat();
        let next = net.step(x, &u)?;
        if first_violation.is_none() {
            first_violation = check(&next, k + 1);
        }
        states.push(next);
    }
    Ok(Trajectory { states, first_violation })
}
