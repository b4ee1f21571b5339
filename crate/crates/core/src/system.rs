//! Concrete subsystems, boxes, grids, the quantizer and the interconnection operator.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

/// Relative slack used when deciding whether `k·η` lies inside a box edge.
const GRID_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("quantization step {eta} exceeds set span {span}")]
    StepTooLarge { eta: f64, span: f64 },
    #[error("grid is empty")]
    EmptyGrid,
    #[error("point outside domain: {0}")]
    OutsideDomain(String),
    #[error("point not on grid: {0}")]
    NotOnGrid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("containment violated: {0}")]
    ContainmentViolated(String),
    #[error("invalid definition: {0}")]
    Invalid(String),
}

/// Axis-aligned closed box `[lo_1,hi_1] × … × [lo_n,hi_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl HyperBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, SystemError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(SystemError::DimensionMismatch("box bounds".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(SystemError::Invalid(format!("box needs lo < hi, got {lo:?} {hi:?}")));
        }
        Ok(HyperBox { lo, hi })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self, SystemError> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn min_side(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).fold(f64::INFINITY, f64::min)
    }

    pub fn product(&self, other: &HyperBox) -> HyperBox {
        HyperBox {
            lo: self.lo.iter().chain(&other.lo).copied().collect(),
            hi: self.hi.iter().chain(&other.hi).copied().collect(),
        }
    }
}

/// Finite union of boxes of equal dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<HyperBox>", into = "Vec<HyperBox>")]
pub struct BoxUnion {
    boxes: Vec<HyperBox>,
}

impl BoxUnion {
    pub fn new(boxes: Vec<HyperBox>) -> Result<Self, SystemError> {
        let first = boxes.first().ok_or_else(|| SystemError::Invalid("empty box union".into()))?;
        if boxes.iter().any(|b| b.dim() != first.dim()) {
            return Err(SystemError::DimensionMismatch("boxes of a union differ in dimension".into()));
        }
        Ok(BoxUnion { boxes })
    }

    pub fn single(b: HyperBox) -> Self {
        BoxUnion { boxes: vec![b] }
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self, SystemError> {
        Ok(Self::single(HyperBox::interval(lo, hi)?))
    }

    /// The same interval in each of `dim` coordinates.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self, SystemError> {
        Ok(Self::single(HyperBox::new(vec![lo; dim], vec![hi; dim])?))
    }

    pub fn boxes(&self) -> &[HyperBox] {
        &self.boxes
    }

    pub fn dim(&self) -> usize {
        self.boxes[0].dim()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }

    /// Smallest side length over all boxes and coordinates.
    pub fn span(&self) -> f64 {
        self.boxes.iter().map(HyperBox::min_side).fold(f64::INFINITY, f64::min)
    }

    /// Cartesian product, box by box.
    pub fn product(&self, other: &BoxUnion) -> BoxUnion {
        let boxes = self.boxes.iter().flat_map(|a| other.boxes.iter().map(move |b| a.product(b))).collect();
        BoxUnion { boxes }
    }

    pub fn product_all(parts: &[BoxUnion]) -> Option<BoxUnion> {
        let mut it = parts.iter();
        let first = it.next()?.clone();
        Some(it.fold(first, |acc, p| acc.product(p)))
    }

    pub fn lower_corner(&self) -> Vec<f64> {
        (0..self.dim()).map(|d| self.boxes.iter().map(|b| b.lo[d]).fold(f64::INFINITY, f64::min)).collect()
    }

    pub fn upper_corner(&self) -> Vec<f64> {
        (0..self.dim()).map(|d| self.boxes.iter().map(|b| b.hi[d]).fold(f64::NEG_INFINITY, f64::max)).collect()
    }
}

impl TryFrom<Vec<HyperBox>> for BoxUnion {
    type Error = SystemError;
    fn try_from(boxes: Vec<HyperBox>) -> Result<Self, Self::Error> {
        for b in &boxes {
            HyperBox::new(b.lo.clone(), b.hi.clone())?;
        }
        BoxUnion::new(boxes)
    }
}

impl From<BoxUnion> for Vec<HyperBox> {
    fn from(u: BoxUnion) -> Self {
        u.boxes
    }
}

fn index_range(lo: f64, hi: f64, eta: f64) -> (i64, i64) {
    let kmin = (lo / eta - GRID_SLACK).ceil() as i64;
    let kmax = (hi / eta + GRID_SLACK).floor() as i64;
    (kmin, kmax)
}

/// Points of a box union whose coordinates are integer multiples of `η`.
///
/// Members are numbered `0..len()` in lexicographic order of their integer
/// index vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    set: BoxUnion,
    eta: f64,
    origin: Vec<i64>,
    extent: Vec<usize>,
    strides: Vec<usize>,
    // per box, per coordinate, inclusive index range
    ranges: Vec<Vec<(i64, i64)>>,
    // bounding-box linear index -> member index (None when every point is a member)
    member_of: Option<Vec<u32>>,
    // member index -> bounding-box linear index (empty when every point is a member)
    positions: Vec<usize>,
    len: usize,
}

const NOT_MEMBER: u32 = u32::MAX;

/// `[S]_η`.
pub fn quantize_set(set: &BoxUnion, eta: f64) -> Result<Grid, SystemError> {
    Grid::new(set.clone(), eta)
}

impl Grid {
    pub fn new(set: BoxUnion, eta: f64) -> Result<Self, SystemError> {
        let span = set.span();
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(SystemError::Invalid(format!("quantization step must be positive, got {eta}")));
        }
        if eta > span * (1.0 + 1e-12) {
            return Err(SystemError::StepTooLarge { eta, span });
        }
        let dim = set.dim();
        let ranges: Vec<Vec<(i64, i64)>> = set
            .boxes()
            .iter()
            .map(|b| (0..dim).map(|d| index_range(b.lo[d], b.hi[d], eta)).collect())
            .filter(|r: &Vec<(i64, i64)>| r.iter().all(|(a, b)| a <= b))
            .collect();
        if ranges.is_empty() {
            return Err(SystemError::EmptyGrid);
        }
        let origin: Vec<i64> = (0..dim).map(|d| ranges.iter().map(|r| r[d].0).min().unwrap()).collect();
        let top: Vec<i64> = (0..dim).map(|d| ranges.iter().map(|r| r[d].1).max().unwrap()).collect();
        let extent: Vec<usize> = origin.iter().zip(&top).map(|(o, t)| (t - o + 1) as usize).collect();
        let mut strides = vec![1usize; dim];
        for d in (0..dim.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * extent[d + 1];
        }
        let total: usize = extent.iter().product();
        let mut grid = Grid { set, eta, origin, extent, strides, ranges, member_of: None, positions: Vec::new(), len: total };
        if grid.ranges.len() > 1 {
            let mut member_of = vec![NOT_MEMBER; total];
            let mut positions = Vec::new();
            let mut k = vec![0i64; dim];
            for (lin, slot) in member_of.iter_mut().enumerate() {
                grid.decode_bbox(lin, &mut k);
                if grid.ranges.iter().any(|r| r.iter().zip(&k).all(|((a, b), v)| a <= v && v <= b)) {
                    *slot = positions.len() as u32;
                    positions.push(lin);
                }
            }
            grid.len = positions.len();
            if grid.len < total {
                grid.member_of = Some(member_of);
                grid.positions = positions;
            }
        }
        Ok(grid)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn set(&self) -> &BoxUnion {
        &self.set
    }

    fn decode_bbox(&self, mut lin: usize, k: &mut [i64]) {
        for d in 0..self.dim() {
            let q = lin / self.strides[d];
            lin -= q * self.strides[d];
            k[d] = self.origin[d] + q as i64;
        }
    }

    /// Integer index vector of member `idx`.
    pub fn indices_into(&self, idx: usize, k: &mut [i64]) {
        let lin = if self.positions.is_empty() { idx } else { self.positions[idx] };
        self.decode_bbox(lin, k);
    }

    pub fn point_into(&self, idx: usize, out: &mut [f64]) {
        let mut lin = if self.positions.is_empty() { idx } else { self.positions[idx] };
        for d in 0..self.dim() {
            let q = lin / self.strides[d];
            lin -= q * self.strides[d];
            out[d] = (self.origin[d] + q as i64) as f64 * self.eta;
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(idx, &mut out);
        out
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len).map(|i| self.point(i))
    }

    /// Member index for an integer index vector, if it is a member.
    pub fn index_of_k(&self, k: &[i64]) -> Option<usize> {
        let mut lin = 0usize;
        for d in 0..self.dim() {
            let off = k[d] - self.origin[d];
            if off < 0 || off as usize >= self.extent[d] {
                return None;
            }
            lin += off as usize * self.strides[d];
        }
        match &self.member_of {
            None => Some(lin),
            Some(map) => match map[lin] {
                NOT_MEMBER => None,
                m => Some(m as usize),
            },
        }
    }

    /// Member index of a point that lies on the lattice `η·Z^n` and in the grid.
    pub fn index_of_point(&self, x: &[f64]) -> Result<usize, SystemError> {
        if x.len() != self.dim() {
            return Err(SystemError::DimensionMismatch(format!("point of dim {} for grid of dim {}", x.len(), self.dim())));
        }
        let mut k = vec![0i64; self.dim()];
        for d in 0..self.dim() {
            let r = x[d] / self.eta;
            let kr = r.round();
            if (r - kr).abs() > 1e-6 {
                return Err(SystemError::NotOnGrid(format!("{x:?}")));
            }
            k[d] = kr as i64;
        }
        self.index_of_k(&k).ok_or_else(|| SystemError::NotOnGrid(format!("{x:?}")))
    }

    /// Does the grid contain the lattice point with integer indices `k`? Same as
    /// `index_of_k(k).is_some()`.
    pub fn contains_k(&self, k: &[i64]) -> bool {
        self.index_of_k(k).is_some()
    }

    /// `ϑ_η(x)`: nearest member inside the box containing `x`, ties to the smaller multiple.
    pub fn nearest(&self, x: &[f64]) -> Result<usize, SystemError> {
        if x.len() != self.dim() {
            return Err(SystemError::DimensionMismatch(format!("point of dim {} for grid of dim {}", x.len(), self.dim())));
        }
        let (bi, _) = self
            .set
            .boxes()
            .iter()
            .enumerate()
            .find(|(_, b)| b.contains(x))
            .ok_or_else(|| SystemError::OutsideDomain(format!("{x:?}")))?;
        let b = &self.set.boxes()[bi];
        let mut k = vec![0i64; self.dim()];
        for d in 0..self.dim() {
            let (lo, hi) = index_range(b.lo[d], b.hi[d], self.eta);
            let r = (x[d] / self.eta - 0.5).ceil() as i64;
            k[d] = r.clamp(lo, hi);
        }
        Ok(self.index_of_k(&k).expect("clamped index lies in its own box"))
    }

    pub fn nearest_point(&self, x: &[f64]) -> Result<Vec<f64>, SystemError> {
        Ok(self.point(self.nearest(x)?))
    }
}

/// Deterministic closed-form one-step map and output map of a subsystem.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn internal_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]);
    fn output(&self, x: &[f64], out: &mut [f64]);
}

/// `T⁺ = a(ν)·T + α(w₁+w₂) + β·T_e + μ·T_h·ν`, `a(ν) = 1 − 2α − β − μν`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomDynamics {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub t_ext: f64,
    pub t_heat: f64,
}

impl RoomDynamics {
    pub fn a(&self, nu: f64) -> f64 {
        1.0 - 2.0 * self.alpha - self.beta - self.mu * nu
    }
}

impl Dynamics for RoomDynamics {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn internal_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        1
    }
    #[inline]
    fn step(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) {
        out[0] = self.a(u[0]) * x[0] + self.alpha * (w[0] + w[1]) + self.beta * self.t_ext + self.mu * self.t_heat * u[0];
    }
    fn output(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0];
    }
}

/// `x⁺ = a·x + sin(x) + τ·Σw + ν`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullNetDynamics {
    pub a: f64,
    pub tau: f64,
    pub neighbors: usize,
}

impl Dynamics for FullNetDynamics {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn internal_dim(&self) -> usize {
        self.neighbors
    }
    fn output_dim(&self) -> usize {
        1
    }
    #[inline]
    fn step(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) {
        out[0] = self.a * x[0] + x[0].sin() + self.tau * w.iter().sum::<f64>() + u[0];
    }
    fn output(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0];
    }
}

/// `x⁺ = A x + B u + D w + c`, `y = C x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDynamics {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    #[serde(default)]
    pub offset: Vec<f64>,
}

impl LinearDynamics {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self, SystemError> {
        let n = a.rows();
        let dims_ok = a.is_square()
            && b.rows() == n
            && c.cols() == n
            && (d.rows() == n || d.cols() == 0 || d.rows() == 0);
        if !dims_ok {
            return Err(SystemError::DimensionMismatch(format!(
                "A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols(),
                c.rows(),
                c.cols(),
                d.rows(),
                d.cols()
            )));
        }
        let d = if d.rows() == 0 { Matrix::zeros(n, 0) } else { d };
        Ok(LinearDynamics { a, b, c, d, offset: vec![0.0; n] })
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Result<Self, SystemError> {
        if offset.len() != self.a.rows() {
            return Err(SystemError::DimensionMismatch("offset length".into()));
        }
        self.offset = offset;
        Ok(self)
    }
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.rows()
    }
    fn input_dim(&self) -> usize {
        self.b.cols()
    }
    fn internal_dim(&self) -> usize {
        self.d.cols()
    }
    fn output_dim(&self) -> usize {
        self.c.rows()
    }
    fn step(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.a.rows()) {
            let mut v = self.offset.get(i).copied().unwrap_or(0.0);
            v += self.a.row(i).iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
            v += self.b.row(i).iter().zip(u).map(|(p, q)| p * q).sum::<f64>();
            if self.d.cols() > 0 {
                v += self.d.row(i).iter().zip(w).map(|(p, q)| p * q).sum::<f64>();
            }
            *o = v;
        }
    }
    fn output(&self, x: &[f64], out: &mut [f64]) {
        self.c.mul_vec_into(x, out);
    }
}

type StepFn = dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;
type OutFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Dynamics given by closures.
pub struct FnDynamics {
    dims: [usize; 4],
    step: Box<StepFn>,
    output: Box<OutFn>,
}

impl FnDynamics {
    /// `dims = [state, input, internal, output]`.
    pub fn new(
        dims: [usize; 4],
        step: impl Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        output: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        FnDynamics { dims, step: Box::new(step), output: Box::new(output) }
    }
}

impl fmt::Debug for FnDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnDynamics{:?}", self.dims)
    }
}

impl Dynamics for FnDynamics {
    fn state_dim(&self) -> usize {
        self.dims[0]
    }
    fn input_dim(&self) -> usize {
        self.dims[1]
    }
    fn internal_dim(&self) -> usize {
        self.dims[2]
    }
    fn output_dim(&self) -> usize {
        self.dims[3]
    }
    fn step(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) {
        (self.step)(x, u, w, out)
    }
    fn output(&self, x: &[f64], out: &mut [f64]) {
        (self.output)(x, out)
    }
}

/// State feedback `H`; with the abstraction input `û` the applied input is `H(x) + û`.
#[derive(Clone, Default)]
pub enum Feedback {
    #[default]
    Zero,
    /// `H(x) = K x`.
    Linear(Matrix),
    Custom(Arc<OutFn>),
}

impl Feedback {
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Feedback::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Feedback::Linear(k) => k.mul_vec_into(x, out),
            Feedback::Custom(f) => f(x, out),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Feedback::Zero)
    }
}

impl fmt::Debug for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feedback::Zero => write!(f, "Zero"),
            Feedback::Linear(k) => write!(f, "Linear({:?})", k.to_rows()),
            Feedback::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Internal-input block fed by the output of subsystem `source`.
#[derive(Debug, Clone)]
pub struct InternalBlock {
    pub source: usize,
    pub set: BoxUnion,
}

/// Subsystem `i` with its sets and dynamics. The internal input is the
/// concatenation of the blocks in order; every neighbor receives the full output.
#[derive(Debug, Clone)]
pub struct SubsystemDef {
    pub index: usize,
    pub x_set: BoxUnion,
    pub u_set: BoxUnion,
    pub blocks: Vec<InternalBlock>,
    pub y_set: Option<BoxUnion>,
    pub dynamics: Arc<dyn Dynamics>,
}

impl SubsystemDef {
    pub fn new(
        index: usize,
        x_set: BoxUnion,
        u_set: BoxUnion,
        blocks: Vec<InternalBlock>,
        y_set: Option<BoxUnion>,
        dynamics: Arc<dyn Dynamics>,
    ) -> Result<Self, SystemError> {
        let dyn_ = &dynamics;
        if x_set.dim() != dyn_.state_dim() || u_set.dim() != dyn_.input_dim() {
            return Err(SystemError::DimensionMismatch(format!(
                "subsystem {index}: X dim {} / U dim {} vs dynamics {} / {}",
                x_set.dim(),
                u_set.dim(),
                dyn_.state_dim(),
                dyn_.input_dim()
            )));
        }
        let wdim: usize = blocks.iter().map(|b| b.set.dim()).sum();
        if wdim != dyn_.internal_dim() {
            return Err(SystemError::DimensionMismatch(format!(
                "subsystem {index}: internal blocks total dim {wdim}, dynamics expects {}",
                dyn_.internal_dim()
            )));
        }
        if let Some(y) = &y_set {
            if y.dim() != dyn_.output_dim() {
                return Err(SystemError::DimensionMismatch(format!("subsystem {index}: output set dim")));
            }
        }
        let sub = SubsystemDef { index, x_set, u_set, blocks, y_set, dynamics };
        sub.check_finite()?;
        Ok(sub)
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn internal_dim(&self) -> usize {
        self.dynamics.internal_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.dynamics.output_dim()
    }

    /// `W_i` as the product of its blocks, or `None` for a decoupled subsystem.
    pub fn w_set(&self) -> Option<BoxUnion> {
        BoxUnion::product_all(&self.blocks.iter().map(|b| b.set.clone()).collect::<Vec<_>>())
    }

    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.dynamics.step(x, u, w, &mut out);
        out
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.dynamics.output(x, &mut out);
        out
    }

    fn check_finite(&self) -> Result<(), SystemError> {
        let pick = |s: &BoxUnion, t: f64| -> Vec<f64> {
            let lo = s.lower_corner();
            let hi = s.upper_corner();
            lo.iter().zip(&hi).map(|(l, h)| l + t * (h - l)).collect()
        };
        let w_set = self.w_set();
        for t in [0.0, 0.5, 1.0] {
            let x = pick(&self.x_set, t);
            let u = pick(&self.u_set, t);
            let w = w_set.as_ref().map_or_else(Vec::new, |s| pick(s, t));
            let y = self.step(&x, &u, &w);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(SystemError::Invalid(format!("subsystem {}: non-finite successor at {x:?}", self.index)));
            }
        }
        Ok(())
    }
}

/// Coupling matrix of internal quantization steps: `varpi[i][j]` is used on the
/// edge from `j`'s output to `i`'s internal input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterconnectionSpec {
    pub n: usize,
    pub varpi: Vec<Vec<f64>>,
}

impl InterconnectionSpec {
    /// All-zero coupling matrix (exact routing).
    pub fn zero(n: usize) -> Self {
        InterconnectionSpec { n, varpi: vec![vec![0.0; n]; n] }
    }

    pub fn uniform(n: usize, varpi: f64) -> Self {
        let varpi = (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { varpi }).collect()).collect();
        InterconnectionSpec { n, varpi }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.varpi[i][j]
    }

    fn validate(&self) -> Result<(), SystemError> {
        if self.varpi.len() != self.n || self.varpi.iter().any(|r| r.len() != self.n) {
            return Err(SystemError::DimensionMismatch("coupling matrix must be N×N".into()));
        }
        for i in 0..self.n {
            if self.varpi[i][i] != 0.0 {
                return Err(SystemError::Invalid(format!("coupling diagonal entry {i} must be 0")));
            }
            if self.varpi[i].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(SystemError::Invalid(format!("coupling row {i} has a negative entry")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Route {
    source: usize,
    w_offset: usize,
    quantizer: Option<Grid>,
}

/// The closed network `I_M(Σ_1, …, Σ_N)`.
#[derive(Debug, Clone)]
pub struct NetworkSystem {
    subs: Vec<SubsystemDef>,
    routes: Vec<Vec<Route>>,
    x_offsets: Vec<usize>,
    u_offsets: Vec<usize>,
}

pub fn build_interconnection(subs: Vec<SubsystemDef>, spec: &InterconnectionSpec) -> Result<NetworkSystem, SystemError> {
    spec.validate()?;
    if subs.len() != spec.n {
        return Err(SystemError::DimensionMismatch(format!("{} subsystems for N = {}", subs.len(), spec.n)));
    }
    let mut routes = Vec::with_capacity(subs.len());
    for (i, sub) in subs.iter().enumerate() {
        let mut rs = Vec::with_capacity(sub.blocks.len());
        let mut off = 0;
        for b in &sub.blocks {
            let j = b.source;
            if j >= subs.len() || j == i {
                return Err(SystemError::Invalid(format!("subsystem {i}: block source {j} is not a neighbor")));
            }
            let src = &subs[j];
            if src.output_dim() != b.set.dim() {
                return Err(SystemError::DimensionMismatch(format!(
                    "edge {j}->{i}: output dim {} vs internal block dim {}",
                    src.output_dim(),
                    b.set.dim()
                )));
            }
            let varpi = spec.get(i, j);
            let quantizer = if varpi > 0.0 {
                let y = src.y_set.as_ref().ok_or_else(|| {
                    SystemError::ContainmentViolated(format!("edge {j}->{i}: quantized edge needs an output set"))
                })?;
                if varpi > y.span() {
                    return Err(SystemError::ContainmentViolated(format!(
                        "edge {j}->{i}: step {varpi} exceeds output span {}",
                        y.span()
                    )));
                }
                let g = quantize_set(y, varpi)?;
                if let Some(p) = g.points().find(|p| !b.set.contains(p)) {
                    return Err(SystemError::ContainmentViolated(format!(
                        "edge {j}->{i}: quantized output {p:?} not in internal set"
                    )));
                }
                Some(g)
            } else {
                None
            };
            rs.push(Route { source: j, w_offset: off, quantizer });
            off += b.set.dim();
        }
        routes.push(rs);
    }
    let mut x_offsets = vec![0];
    let mut u_offsets = vec![0];
    for s in &subs {
        x_offsets.push(x_offsets.last().unwrap() + s.state_dim());
        u_offsets.push(u_offsets.last().unwrap() + s.input_dim());
    }
    Ok(NetworkSystem { subs, routes, x_offsets, u_offsets })
}

impl NetworkSystem {
    pub fn subsystems(&self) -> &[SubsystemDef] {
        &self.subs
    }

    pub fn len(&self) -> usize {
        self.subs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subs.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        *self.x_offsets.last().unwrap()
    }

    pub fn input_dim(&self) -> usize {
        *self.u_offsets.last().unwrap()
    }

    pub fn state_slice<'a>(&self, x: &'a [f64], i: usize) -> &'a [f64] {
        &x[self.x_offsets[i]..self.x_offsets[i + 1]]
    }

    pub fn input_slice<'a>(&self, u: &'a [f64], i: usize) -> &'a [f64] {
        &u[self.u_offsets[i]..self.u_offsets[i + 1]]
    }

    /// Routed internal input `w_i` for state `x`.
    pub fn internal_input(&self, x: &[f64], i: usize) -> Result<Vec<f64>, SystemError> {
        let sub = &self.subs[i];
        let mut w = vec![0.0; sub.internal_dim()];
        for r in &self.routes[i] {
            let src = &self.subs[r.source];
            let y = src.output(self.state_slice(x, r.source));
            let dst = &mut w[r.w_offset..r.w_offset + y.len()];
            match &r.quantizer {
                None => dst.copy_from_slice(&y),
                Some(g) => dst.copy_from_slice(&g.nearest_point(&y)?),
            }
        }
        Ok(w)
    }

    /// One step of the closed network.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SystemError> {
        if x.len() != self.state_dim() || u.len() != self.input_dim() {
            return Err(SystemError::DimensionMismatch("network state or input length".into()));
        }
        let mut out = vec![0.0; self.state_dim()];
        for (i, sub) in self.subs.iter().enumerate() {
            let xi = self.state_slice(x, i);
            let ui = self.input_slice(u, i);
            if !sub.x_set.contains(xi) {
                return Err(SystemError::OutsideDomain(format!("subsystem {i} state {xi:?}")));
            }
            if !sub.u_set.contains(ui) {
                return Err(SystemError::OutsideDomain(format!("subsystem {i} input {ui:?}")));
            }
            let w = self.internal_input(x, i)?;
            let dst = &mut out[self.x_offsets[i]..self.x_offsets[i + 1]];
            sub.dynamics.step(xi, ui, &w, dst);
            if dst.iter().any(|v| !v.is_finite()) {
                return Err(SystemError::OutsideDomain(format!("subsystem {i} successor is not finite")));
            }
        }
        Ok(out)
    }
}

/// `network_step`.
pub fn network_step(net: &NetworkSystem, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SystemError> {
    net.step(x, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ROOM: RoomDynamics = RoomDynamics { alpha: 0.45, beta: 0.045, mu: 0.09, t_ext: -1.0, t_heat: 50.0 };

    fn ring(n: usize) -> Vec<SubsystemDef> {
        (0..n)
            .map(|i| {
                let blocks = vec![
                    InternalBlock { source: (i + n - 1) % n, set: BoxUnion::interval(-100.0, 100.0).unwrap() },
                    InternalBlock { source: (i + 1) % n, set: BoxUnion::interval(-100.0, 100.0).unwrap() },
                ];
                SubsystemDef::new(
                    i,
                    BoxUnion::interval(-100.0, 100.0).unwrap(),
                    BoxUnion::interval(0.0, 0.6).unwrap(),
                    blocks,
                    None,
                    Arc::new(ROOM),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn quantize_unit_interval() {
        let g = quantize_set(&BoxUnion::interval(0.0, 1.0).unwrap(), 0.5).unwrap();
        assert_eq!(g.points().collect::<Vec<_>>(), vec![vec![0.0], vec![0.5], vec![1.0]]);
        assert!(matches!(
            quantize_set(&BoxUnion::interval(0.0, 1.0).unwrap(), 2.0),
            Err(SystemError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn comfort_zone_grid_has_201_points() {
        let g = quantize_set(&BoxUnion::interval(19.0, 21.0).unwrap(), 0.01).unwrap();
        let brute = (1800..=2200).filter(|k| (19.0..=21.0).contains(&(*k as f64 * 0.01))).count();
        assert_eq!(g.len(), 201);
        assert_eq!(brute, 201);
        assert_relative_eq!(g.point(0)[0], 19.0, max_relative = 1e-12);
        assert_relative_eq!(g.point(200)[0], 21.0, max_relative = 1e-12);
    }

    #[test]
    fn union_grid_enumerates_members_lexicographically() {
        let s = BoxUnion::new(vec![
            HyperBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            HyperBox::new(vec![2.0, 0.0], vec![3.0, 2.0]).unwrap(),
        ])
        .unwrap();
        let g = quantize_set(&s, 1.0).unwrap();
        let pts: Vec<Vec<f64>> = g.points().collect();
        let mut brute = Vec::new();
        for i in -1..5 {
            for j in -1..5 {
                let p = vec![i as f64, j as f64];
                if s.contains(&p) {
                    brute.push(p);
                }
            }
        }
        assert_eq!(pts, brute);
        assert_eq!(g.index_of_point(&[2.0, 2.0]).unwrap(), 6);
        assert_eq!(g.index_of_point(&[3.0, 2.0]).unwrap(), pts.len() - 1);
        assert!(matches!(g.index_of_point(&[1.0, 2.0]), Err(SystemError::NotOnGrid(_))));
    }

    #[test]
    fn nearest_rules() {
        let g = quantize_set(&BoxUnion::interval(0.0, 1.0).unwrap(), 0.5).unwrap();
        assert_eq!(g.nearest_point(&[0.3]).unwrap(), vec![0.5]);
        assert_eq!(g.nearest_point(&[0.25]).unwrap(), vec![0.0]);
        assert_eq!(g.nearest_point(&[0.75]).unwrap(), vec![0.5]);
        assert_eq!(g.nearest_point(&[1.0]).unwrap(), vec![1.0]);
        assert!(matches!(g.nearest(&[1.1]), Err(SystemError::OutsideDomain(_))));
    }

    #[test]
    fn nearest_stays_in_box_when_corners_are_off_lattice() {
        let g = quantize_set(&BoxUnion::interval(0.12, 1.13).unwrap(), 0.5).unwrap();
        assert_eq!(g.points().collect::<Vec<_>>(), vec![vec![0.5], vec![1.0]]);
        assert_eq!(g.nearest_point(&[0.12]).unwrap(), vec![0.5]);
        assert_eq!(g.nearest_point(&[1.13]).unwrap(), vec![1.0]);
    }

    fn sample_in(rng: &mut ChaCha8Rng, s: &BoxUnion) -> Vec<f64> {
        let b = &s.boxes()[rng.gen_range(0..s.boxes().len())];
        (0..b.dim()).map(|d| rng.gen_range(b.lo[d]..=b.hi[d])).collect()
    }

    #[test]
    fn quantizer_error_and_membership() {
        let aligned = BoxUnion::new(vec![
            HyperBox::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap(),
            HyperBox::new(vec![3.0, -2.0], vec![5.5, 0.75]).unwrap(),
        ])
        .unwrap();
        let eta = 0.25;
        let g = quantize_set(&aligned, eta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5000 {
            let x = sample_in(&mut rng, &aligned);
            let p = g.nearest_point(&x).unwrap();
            assert!(g.index_of_point(&p).is_ok());
            for d in 0..2 {
                assert!((p[d] - x[d]).abs() <= eta / 2.0 + 1e-12, "{x:?} -> {p:?}");
            }
        }
        // corners off the lattice: the nearest member can be farther than η/2 but stays within η
        let eta = 0.3;
        let g = quantize_set(&aligned, eta).unwrap();
        for _ in 0..5000 {
            let x = sample_in(&mut rng, &aligned);
            let p = g.nearest_point(&x).unwrap();
            assert!(g.index_of_point(&p).is_ok());
            for d in 0..2 {
                assert!((p[d] - x[d]).abs() < eta, "{x:?} -> {p:?}");
            }
        }
    }

    #[test]
    fn room_network_matches_monolithic_update() {
        let n = 3;
        let net = build_interconnection(ring(n), &InterconnectionSpec::zero(n)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let t: Vec<f64> = (0..n).map(|_| rng.gen_range(15.0..25.0)).collect();
            let nu: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.6)).collect();
            let a = Matrix::from_fn(n, n, |i, j| {
                if i == j {
                    1.0 - 2.0 * 0.45 - 0.045 - 0.09 * nu[i]
                } else if (i + 1) % n == j || (j + 1) % n == i {
                    0.45
                } else {
                    0.0
                }
            });
            let mono: Vec<f64> =
                a.mul_vec(&t).iter().zip(&nu).map(|(v, u)| v + 0.045 * -1.0 + 0.09 * 50.0 * u).collect();
            let got = network_step(&net, &t, &nu).unwrap();
            for i in 0..n {
                assert!((got[i] - mono[i]).abs() <= 1e-12 * mono[i].abs().max(1.0));
            }
        }
        let got = network_step(&net, &[20.0; 3], &[0.0; 3]).unwrap();
        for v in got {
            assert_relative_eq!(v, 0.055 * 20.0 + 0.45 * 40.0 - 0.045, max_relative = 1e-14);
            assert_relative_eq!(v, 19.055, max_relative = 1e-14);
        }
    }

    #[test]
    fn fullnet_origin_is_fixed() {
        let dynamics = Arc::new(FullNetDynamics { a: 0.9, tau: 0.1, neighbors: 1 });
        let subs: Vec<SubsystemDef> = (0..2)
            .map(|i| {
                SubsystemDef::new(
                    i,
                    BoxUnion::interval(0.0, 10.0).unwrap(),
                    BoxUnion::interval(0.0, 1.0).unwrap(),
                    vec![InternalBlock { source: 1 - i, set: BoxUnion::interval(0.0, 10.0).unwrap() }],
                    None,
                    dynamics.clone(),
                )
                .unwrap()
            })
            .collect();
        let net = build_interconnection(subs, &InterconnectionSpec::zero(2)).unwrap();
        assert_eq!(net.step(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn decoupled_network_is_componentwise() {
        let lin = |a: f64| {
            Arc::new(
                LinearDynamics::new(
                    Matrix::scalar(a),
                    Matrix::scalar(1.0),
                    Matrix::scalar(1.0),
                    Matrix::zeros(1, 0),
                )
                .unwrap(),
            )
        };
        let subs: Vec<SubsystemDef> = [0.5, -0.3]
            .iter()
            .enumerate()
            .map(|(i, a)| {
                SubsystemDef::new(
                    i,
                    BoxUnion::interval(-5.0, 5.0).unwrap(),
                    BoxUnion::interval(-1.0, 1.0).unwrap(),
                    vec![],
                    None,
                    lin(*a),
                )
                .unwrap()
            })
            .collect();
        let net = build_interconnection(subs, &InterconnectionSpec::zero(2)).unwrap();
        assert_eq!(net.step(&[2.0, 2.0], &[0.5, -0.5]).unwrap(), vec![1.5, -1.1]);
    }

    #[test]
    fn quantized_edges_round_outputs() {
        let mut subs = ring(3);
        for s in &mut subs {
            s.y_set = Some(BoxUnion::interval(-50.0, 50.0).unwrap());
        }
        let net = build_interconnection(subs, &InterconnectionSpec::uniform(3, 0.5)).unwrap();
        let w = net.internal_input(&[20.2, 20.3, 19.74], 0).unwrap();
        assert_eq!(w, vec![19.5, 20.5]);
    }

    #[test]
    fn interconnection_errors() {
        let mut subs = ring(3);
        subs[0].blocks[0].set = BoxUnion::cube(0.0, 1.0, 2).unwrap();
        let err = build_interconnection(subs, &InterconnectionSpec::zero(3)).unwrap_err();
        assert!(matches!(err, SystemError::DimensionMismatch(_)));

        let mut subs = ring(3);
        for s in &mut subs {
            s.y_set = Some(BoxUnion::interval(-200.0, 200.0).unwrap());
        }
        let err = build_interconnection(subs, &InterconnectionSpec::uniform(3, 0.5)).unwrap_err();
        assert!(matches!(err, SystemError::ContainmentViolated(_)));

        let bad = SubsystemDef::new(
            0,
            BoxUnion::interval(0.0, 1.0).unwrap(),
            BoxUnion::interval(0.0, 1.0).unwrap(),
            vec![],
            None,
            Arc::new(ROOM),
        );
        assert!(matches!(bad, Err(SystemError::DimensionMismatch(_))));
    }

    #[test]
    fn box_union_json() {
        let s: BoxUnion = serde_json::from_str(r#"[{"lo":[17.0],"hi":[23.0]}]"#).unwrap();
        assert_eq!(s.span(), 6.0);
        assert!(serde_json::from_str::<BoxUnion>(r#"[{"lo":[2.0],"hi":[1.0]}]"#).is_err());
        assert!(serde_json::from_str::<BoxUnion>("[]").is_err());
    }
}
