//! Finite symbolic models: grids for states, inputs and internal inputs, and the
//! transition relation `x̂_d ∈ f̂(x̂,û,ŵ) ⟺ ‖x̂_d − f(x̂, H(x̂)+û, ŵ)‖_∞ ≤ η`.

use std::io::{self, Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::system::{Feedback, Grid, SubsystemDef, SystemError, quantize_set};

pub const DEFAULT_TRANSITION_CAP: u64 = 1 << 31;
/// Largest relation `materialize` accepts, counted in `(x̂,û,ŵ)` triples.
pub const MAX_MATERIALIZED_TRIPLES: u64 = 1 << 28;

const SGAB_MAGIC: &[u8; 4] = b"SGAB";
const SGAB_VERSION_NARROW: u32 = 1;
const SGAB_VERSION_WIDE: u32 = 2;

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("invalid abstraction parameters: {0}")]
    InvalidParams(String),
    #[error("transition count {transitions} exceeds cap {cap}")]
    CapacityExceeded { transitions: u64, cap: u64 },
    #[error("{triples} triples exceed the materialization cap {cap}")]
    TooManyTriples { triples: u64, cap: u64 },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed transition dump: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbstractionParams {
    pub eta: f64,
    pub mu: f64,
    /// Internal-input step; 0 means the internal grid comes from the neighbors' output grids.
    pub varpi_hat: f64,
}

impl AbstractionParams {
    pub fn new(eta: f64, mu: f64, varpi_hat: f64) -> Self {
        AbstractionParams { eta, mu, varpi_hat }
    }
}

/// Successor indices of the materialized relation.
#[derive(Debug, Clone, PartialEq)]
pub enum SuccessorArray {
    Narrow(Vec<u32>),
    Wide(Vec<u64>),
}

impl SuccessorArray {
    fn get(&self, i: usize) -> usize {
        match self {
            SuccessorArray::Narrow(v) => v[i] as usize,
            SuccessorArray::Wide(v) => v[i] as usize,
        }
    }

    fn len(&self) -> usize {
        match self {
            SuccessorArray::Narrow(v) => v.len(),
            SuccessorArray::Wide(v) => v.len(),
        }
    }

    fn index_bytes(&self) -> usize {
        match self {
            SuccessorArray::Narrow(_) => 4,
            SuccessorArray::Wide(_) => 8,
        }
    }
}

/// Contiguous successor lists with one offset per triple.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedStore {
    pub n_states: u64,
    pub offsets: Vec<u64>,
    pub successors: SuccessorArray,
    /// Out-of-domain flag per triple, packed little-endian into 64-bit words.
    pub flags: Vec<u64>,
}

impl MaterializedStore {
    pub fn n_triples(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_transitions(&self) -> u64 {
        *self.offsets.last().unwrap()
    }

    pub fn flagged(&self, t: usize) -> bool {
        self.flags[t / 64] >> (t % 64) & 1 == 1
    }

    pub fn successors_of(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        (self.offsets[t] as usize..self.offsets[t + 1] as usize).map(move |i| self.successors.get(i))
    }

    pub fn bytes(&self) -> usize {
        self.offsets.len() * 8 + self.successors.len() * self.successors.index_bytes() + self.flags.len() * 8
    }

    /// Little-endian dump: magic, version, counts, offsets, successor indices, flag words.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), AbstractionError> {
        let version = match self.successors {
            SuccessorArray::Narrow(_) => SGAB_VERSION_NARROW,
            SuccessorArray::Wide(_) => SGAB_VERSION_WIDE,
        };
        let mut buf = Vec::with_capacity(self.bytes() + 32);
        buf.extend_from_slice(SGAB_MAGIC);
        buf.extend_from_slice(&version.to_le_bytes());
        buf.extend_from_slice(&self.n_states.to_le_bytes());
        buf.extend_from_slice(&(self.n_triples() as u64).to_le_bytes());
        buf.extend_from_slice(&self.n_transitions().to_le_bytes());
        for o in &self.offsets {
            buf.extend_from_slice(&o.to_le_bytes());
        }
        match &self.successors {
            SuccessorArray::Narrow(v) => v.iter().for_each(|s| buf.extend_from_slice(&s.to_le_bytes())),
            SuccessorArray::Wide(v) => v.iter().for_each(|s| buf.extend_from_slice(&s.to_le_bytes())),
        }
        for f in &self.flags {
            buf.extend_from_slice(&f.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, AbstractionError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], AbstractionError> {
            let s = buf.get(pos..pos + n).ok_or_else(|| AbstractionError::Format("truncated".into()))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != SGAB_MAGIC {
            return Err(AbstractionError::Format("bad magic".into()));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
        let version = u32_at(take(4)?);
        let n_states = u64_at(take(8)?);
        let n_triples = u64_at(take(8)?) as usize;
        let n_transitions = u64_at(take(8)?) as usize;
        let mut offsets = Vec::with_capacity(n_triples + 1);
        for _ in 0..=n_triples {
            offsets.push(u64_at(take(8)?));
        }
        let successors = match version {
            SGAB_VERSION_NARROW => {
                let mut v = Vec::with_capacity(n_transitions);
                for _ in 0..n_transitions {
                    v.push(u32_at(take(4)?));
                }
                SuccessorArray::Narrow(v)
            }
            SGAB_VERSION_WIDE => {
                let mut v = Vec::with_capacity(n_transitions);
                for _ in 0..n_transitions {
                    v.push(u64_at(take(8)?));
                }
                SuccessorArray::Wide(v)
            }
            v => return Err(AbstractionError::Format(format!("unknown version {v}"))),
        };
        let mut flags = Vec::with_capacity(n_triples.div_ceil(64));
        for _ in 0..n_triples.div_ceil(64) {
            flags.push(u64_at(take(8)?));
        }
        if offsets.last().copied() != Some(n_transitions as u64) {
            return Err(AbstractionError::Format("offsets do not end at the transition count".into()));
        }
        Ok(MaterializedStore { n_states, offsets, successors, flags })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransitionStore {
    Implicit,
    Materialized(MaterializedStore),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreStats {
    pub n_states: u64,
    pub n_inputs: u64,
    pub n_internal: u64,
    pub n_triples: u64,
    pub n_transitions: u64,
    pub n_flagged: u64,
    pub bytes: u64,
}

/// `Σ̂` for one subsystem.
#[derive(Debug, Clone)]
pub struct SymbolicModel {
    sub: SubsystemDef,
    feedback: Feedback,
    params: AbstractionParams,
    x_grid: Grid,
    u_grid: Grid,
    w_grids: Vec<Grid>,
    n_w: usize,
    store: TransitionStore,
}

/// Abstraction with the default internal alphabet: `[W_ij]_ϖ̂` per block, or
/// `[W_ij]_η` (the neighbors' output grid for equal steps) when `ϖ̂ = 0`.
pub fn build_abstraction(
    sub: &SubsystemDef,
    feedback: Feedback,
    params: AbstractionParams,
) -> Result<SymbolicModel, AbstractionError> {
    let step = if params.varpi_hat > 0.0 { params.varpi_hat } else { params.eta };
    let grids = sub
        .blocks
        .iter()
        .map(|b| quantize_set(&b.set, step))
        .collect::<Result<Vec<_>, _>>()?;
    build_abstraction_with_grids(sub, feedback, params, grids)
}

/// Abstraction with one explicitly supplied internal grid per block.
pub fn build_abstraction_with_grids(
    sub: &SubsystemDef,
    feedback: Feedback,
    params: AbstractionParams,
    w_grids: Vec<Grid>,
) -> Result<SymbolicModel, AbstractionError> {
    let AbstractionParams { eta, mu, varpi_hat } = params;
    if !(eta > 0.0) || !(mu > 0.0) || !(varpi_hat >= 0.0) {
        return Err(AbstractionError::InvalidParams(format!("eta={eta}, mu={mu}, varpi_hat={varpi_hat}")));
    }
    if let Some(w) = sub.w_set() {
        if varpi_hat > w.span() {
            return Err(SystemError::StepTooLarge { eta: varpi_hat, span: w.span() }.into());
        }
    }
    if w_grids.len() != sub.blocks.len() {
        return Err(AbstractionError::InvalidParams(format!(
            "{} internal grids for {} blocks",
            w_grids.len(),
            sub.blocks.len()
        )));
    }
    for (g, b) in w_grids.iter().zip(&sub.blocks) {
        if g.dim() != b.set.dim() {
            return Err(SystemError::DimensionMismatch("internal grid dimension".into()).into());
        }
    }
    let x_grid = quantize_set(&sub.x_set, eta)?;
    let u_grid = quantize_set(&sub.u_set, mu)?;
    let n_w = w_grids.iter().map(Grid::len).product();
    Ok(SymbolicModel {
        sub: sub.clone(),
        feedback,
        params,
        x_grid,
        u_grid,
        w_grids,
        n_w,
        store: TransitionStore::Implicit,
    })
}

/// Scratch buffers for evaluating one triple without allocating.
#[derive(Debug, Clone)]
pub struct Scratch {
    x: Vec<f64>,
    u: Vec<f64>,
    h: Vec<f64>,
    w: Vec<f64>,
    z: Vec<f64>,
    cand: Vec<Vec<i64>>,
    k: Vec<i64>,
    pos: Vec<usize>,
}

impl SymbolicModel {
    pub fn subsystem(&self) -> &SubsystemDef {
        &self.sub
    }

    pub fn feedback(&self) -> &Feedback {
        &self.feedback
    }

    pub fn params(&self) -> AbstractionParams {
        self.params
    }

    pub fn eta(&self) -> f64 {
        self.params.eta
    }

    pub fn x_grid(&self) -> &Grid {
        &self.x_grid
    }

    pub fn u_grid(&self) -> &Grid {
        &self.u_grid
    }

    pub fn w_grids(&self) -> &[Grid] {
        &self.w_grids
    }

    pub fn n_states(&self) -> usize {
        self.x_grid.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.u_grid.len()
    }

    /// Number of internal symbols (1 for a decoupled subsystem).
    pub fn n_internal(&self) -> usize {
        self.n_w
    }

    pub fn n_triples(&self) -> usize {
        self.n_states() * self.n_inputs() * self.n_w
    }

    pub fn triple_index(&self, x: usize, u: usize, w: usize) -> usize {
        (x * self.n_inputs() + u) * self.n_w + w
    }

    pub fn store(&self) -> &TransitionStore {
        &self.store
    }

    pub fn is_materialized(&self) -> bool {
        matches!(self.store, TransitionStore::Materialized(_))
    }

    pub fn scratch(&self) -> Scratch {
        let n = self.sub.state_dim();
        Scratch {
            x: vec![0.0; n],
            u: vec![0.0; self.sub.input_dim()],
            h: vec![0.0; self.sub.input_dim()],
            w: vec![0.0; self.sub.internal_dim()],
            z: vec![0.0; n],
            cand: vec![Vec::with_capacity(5); n],
            k: vec![0; n],
            pos: vec![0; n],
        }
    }

    /// Concatenated internal input for symbol `w`.
    pub fn w_point_into(&self, mut w: usize, out: &mut [f64]) {
        let mut end = out.len();
        for g in self.w_grids.iter().rev() {
            let idx = w % g.len();
            w /= g.len();
            let d = g.dim();
            g.point_into(idx, &mut out[end - d..end]);
            end -= d;
        }
    }

    pub fn w_point(&self, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.sub.internal_dim()];
        self.w_point_into(w, &mut out);
        out
    }

    /// Internal symbol for an on-grid internal input.
    pub fn w_index_of_point(&self, w: &[f64]) -> Result<usize, SystemError> {
        if w.len() != self.sub.internal_dim() {
            return Err(SystemError::DimensionMismatch("internal input length".into()));
        }
        let mut idx = 0;
        let mut off = 0;
        for g in &self.w_grids {
            let d = g.dim();
            idx = idx * g.len() + g.index_of_point(&w[off..off + d])?;
            off += d;
        }
        Ok(idx)
    }

    /// Applied concrete input `H(x̂) + û` and its one-step image `z`.
    fn image(&self, x: usize, u: usize, w: usize, s: &mut Scratch) {
        self.x_grid.point_into(x, &mut s.x);
        self.u_grid.point_into(u, &mut s.u);
        if !self.feedback.is_zero() {
            self.feedback.apply_into(&s.x, &mut s.h);
            for (a, b) in s.u.iter_mut().zip(&s.h) {
                *a += b;
            }
        }
        self.w_point_into(w, &mut s.w);
        self.sub.dynamics.step(&s.x, &s.u, &s.w, &mut s.z);
    }

    /// One-step image `f(x̂, H(x̂)+û, ŵ)`.
    pub fn image_of(&self, x: usize, u: usize, w: usize) -> Vec<f64> {
        let mut s = self.scratch();
        self.image(x, u, w, &mut s);
        s.z
    }

    /// Visit the successors of a triple in lexicographic order; returns the
    /// out-of-domain flag.
    pub fn for_each_successor(&self, x: usize, u: usize, w: usize, s: &mut Scratch, mut visit: impl FnMut(usize)) -> bool {
        if let TransitionStore::Materialized(m) = &self.store {
            let t = self.triple_index(x, u, w);
            m.successors_of(t).for_each(visit);
            return m.flagged(t);
        }
        self.image(x, u, w, s);
        compute_successors(&self.x_grid, self.params.eta, &s.z, &mut s.cand, &mut s.k, &mut s.pos, &mut visit)
    }

    /// Successor list and out-of-domain flag.
    pub fn successors_idx(&self, x: usize, u: usize, w: usize) -> (Vec<usize>, bool) {
        let mut s = self.scratch();
        let mut out = Vec::new();
        let flag = self.for_each_successor(x, u, w, &mut s, |i| out.push(i));
        (out, flag)
    }

    /// Successors of on-grid points, as grid points.
    pub fn successors(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<(Vec<Vec<f64>>, bool), SystemError> {
        let xi = self.x_grid.index_of_point(x)?;
        let ui = self.u_grid.index_of_point(u)?;
        let wi = self.w_index_of_point(w)?;
        let (idx, flag) = self.successors_idx(xi, ui, wi);
        Ok((idx.into_iter().map(|i| self.x_grid.point(i)).collect(), flag))
    }

    pub fn is_flagged(&self, x: usize, u: usize, w: usize) -> bool {
        let mut s = self.scratch();
        self.for_each_successor(x, u, w, &mut s, |_| {})
    }

    /// Counts by enumerating every triple of the implicit relation.
    pub fn implicit_stats(&self) -> StoreStats {
        let nu = self.n_inputs();
        let nw = self.n_w;
        let (trans, flagged) = (0..self.n_states())
            .into_par_iter()
            .map_init(
                || self.scratch(),
                |s, x| {
                    let mut t = 0u64;
                    let mut f = 0u64;
                    for u in 0..nu {
                        for w in 0..nw {
                            self.image(x, u, w, s);
                            let mut c = 0u64;
                            let fl = compute_successors(&self.x_grid, self.params.eta, &s.z, &mut s.cand, &mut s.k, &mut s.pos, &mut |_| c += 1);
                            t += c;
                            f += fl as u64;
                        }
                    }
                    (t, f)
                },
            )
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        StoreStats {
            n_states: self.n_states() as u64,
            n_inputs: nu as u64,
            n_internal: nw as u64,
            n_triples: self.n_triples() as u64,
            n_transitions: trans,
            n_flagged: flagged,
            bytes: 0,
        }
    }

    pub fn stats(&self) -> StoreStats {
        match &self.store {
            TransitionStore::Implicit => self.implicit_stats(),
            TransitionStore::Materialized(m) => StoreStats {
                n_states: self.n_states() as u64,
                n_inputs: self.n_inputs() as u64,
                n_internal: self.n_w as u64,
                n_triples: self.n_triples() as u64,
                n_transitions: m.n_transitions(),
                n_flagged: m.flags.iter().map(|f| f.count_ones() as u64).sum(),
                bytes: m.bytes() as u64,
            },
        }
    }

    /// Store every successor list contiguously; two passes (count, then fill).
    pub fn materialize(&mut self, cap: u64) -> Result<StoreStats, AbstractionError> {
        if self.is_materialized() {
            return Ok(self.stats());
        }
        let nu = self.n_inputs();
        let nw = self.n_w;
        let per_x = nu * nw;
        let n_triples = self.n_triples();
        let eta = self.params.eta;
        // count buffers are per triple, so refuse before allocating them
        if n_triples as u64 > MAX_MATERIALIZED_TRIPLES {
            return Err(AbstractionError::TooManyTriples { triples: n_triples as u64, cap: MAX_MATERIALIZED_TRIPLES });
        }

        let mut counts = vec![0u32; n_triples];
        let mut flag_bytes = vec![0u8; n_triples];
        counts
            .par_chunks_mut(per_x)
            .zip(flag_bytes.par_chunks_mut(per_x))
            .enumerate()
            .for_each_init(
                || self.scratch(),
                |s, (x, (cnt, fl))| {
                    for u in 0..nu {
                        for w in 0..nw {
                            self.image(x, u, w, s);
                            let mut c = 0u32;
                            let f = compute_successors(&self.x_grid, eta, &s.z, &mut s.cand, &mut s.k, &mut s.pos, &mut |_| c += 1);
                            cnt[u * nw + w] = c;
                            fl[u * nw + w] = f as u8;
                        }
                    }
                },
            );

        let mut offsets = Vec::with_capacity(n_triples + 1);
        let mut acc = 0u64;
        offsets.push(0);
        for c in &counts {
            acc += *c as u64;
            offsets.push(acc);
        }
        drop(counts);
        if acc > cap {
            return Err(AbstractionError::CapacityExceeded { transitions: acc, cap });
        }
        let mut flags = vec![0u64; n_triples.div_ceil(64)];
        for (t, f) in flag_bytes.iter().enumerate() {
            if *f != 0 {
                flags[t / 64] |= 1 << (t % 64);
            }
        }
        drop(flag_bytes);

        let fill = |dst_offsets: &[u64], base: u64, x: usize, out: &mut dyn FnMut(usize, usize), s: &mut Scratch| {
            let mut pos = 0usize;
            for u in 0..nu {
                for w in 0..nw {
                    let t = x * per_x + u * nw + w;
                    debug_assert_eq!(dst_offsets[t] - base, pos as u64);
                    self.image(x, u, w, s);
                    compute_successors(&self.x_grid, eta, &s.z, &mut s.cand, &mut s.k, &mut s.pos, &mut |i| {
                        out(pos, i);
                        pos += 1;
                    });
                }
            }
        };

        let wide = self.n_states() as u64 > u32::MAX as u64;
        let successors = if wide {
            let mut v = vec![0u64; acc as usize];
            fill_disjoint(&mut v, &offsets, per_x, self.n_states(), |x, slice, s| {
                fill(&offsets, offsets[x * per_x], x, &mut |p, i| slice[p] = i as u64, s)
            }, || self.scratch());
            SuccessorArray::Wide(v)
        } else {
            let mut v = vec![0u32; acc as usize];
            fill_disjoint(&mut v, &offsets, per_x, self.n_states(), |x, slice, s| {
                fill(&offsets, offsets[x * per_x], x, &mut |p, i| slice[p] = i as u32, s)
            }, || self.scratch());
            SuccessorArray::Narrow(v)
        };
        self.store = TransitionStore::Materialized(MaterializedStore {
            n_states: self.n_states() as u64,
            offsets,
            successors,
            flags,
        });
        Ok(self.stats())
    }
}

/// Split `v` into one slice per state and fill them in parallel.
fn fill_disjoint<T: Send>(
    v: &mut [T],
    offsets: &[u64],
    per_x: usize,
    n_states: usize,
    body: impl Fn(usize, &mut [T], &mut Scratch) + Sync,
    init: impl Fn() -> Scratch + Sync + Send,
) {
    let mut slices = Vec::with_capacity(n_states);
    let mut rest = v;
    for x in 0..n_states {
        let len = (offsets[(x + 1) * per_x] - offsets[x * per_x]) as usize;
        let (head, tail) = rest.split_at_mut(len);
        slices.push((x, head));
        rest = tail;
    }
    slices.into_par_iter().for_each_init(init, |s, (x, slice)| body(x, slice, s));
}

/// Lattice points within `η` of `z` (closed ball, ∞-norm), in lexicographic
/// order; members of the grid are visited, others set the returned flag.
fn compute_successors(
    grid: &Grid,
    eta: f64,
    z: &[f64],
    cand: &mut [Vec<i64>],
    k: &mut [i64],
    pos: &mut [usize],
    visit: &mut dyn FnMut(usize),
) -> bool {
    if z.iter().any(|v| !v.is_finite()) {
        return true;
    }
    for (d, c) in cand.iter_mut().enumerate() {
        c.clear();
        let r = z[d] / eta;
        let lo = r.floor() as i64 - 2;
        let hi = r.ceil() as i64 + 2;
        for kk in lo..=hi {
            if (kk as f64 * eta - z[d]).abs() <= eta {
                c.push(kk);
            }
        }
    }
    let dim = z.len();
    if cand.iter().any(Vec::is_empty) {
        return false;
    }
    let mut flagged = false;
    pos.iter_mut().for_each(|p| *p = 0);
    loop {
        for d in 0..dim {
            k[d] = cand[d][pos[d]];
        }
        match grid.index_of_k(k) {
            Some(i) => visit(i),
            None => flagged = true,
        }
        let mut d = dim;
        loop {
            if d == 0 {
                return flagged;
            }
            d -= 1;
            pos[d] += 1;
            if pos[d] < cand[d].len() {
                break;
            }
            pos[d] = 0;
        }
    }
}
