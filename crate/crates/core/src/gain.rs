//! Closed algebra of comparison functions.
//!
//! Every gain that appears in a certificate, a gain matrix or a small-gain
//! check is a [`GainFn`]: an expression tree over scaled powers `c·s^p`,
//! the identity and zero, closed under composition, pointwise maximum and
//! `s ↦ s + λ(s)`. Trees are kept in a normal form so that the questions the
//! rest of the crate asks (is this below the identity? what is its inverse?)
//! can be answered symbolically for the shapes that actually occur.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper end of the sampled range used by the numeric fallback.
pub const DEFAULT_S_MAX: f64 = 1e6;
/// Number of log-spaced samples used by the numeric fallback.
pub const NUMERIC_SAMPLES: usize = 1000;
/// Exponents this close to one are treated as exactly linear.
const EXPONENT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GainError {
    #[error("gain `{0}` is not symbolically invertible")]
    NotInvertible(String),
    #[error("chi must be linear with slope > 1 so that chi - id is class K-infinity, got `{0}`")]
    ChiNotAdmissible(String),
    #[error("invalid gain expression: {0}")]
    Invalid(String),
}

/// A class-K∞ (or zero) function represented as an expression tree.
///
/// `Compose { fs: [f1, f2, .., fk] }` is `f1 ∘ f2 ∘ .. ∘ fk`, i.e. `fk` is
/// applied first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GainRepr", into = "GainRepr")]
pub enum GainFn {
    Zero,
    Identity,
    Power { c: f64, p: f64 },
    Compose(Vec<GainFn>),
    Max(Vec<GainFn>),
    IdPlus(Box<GainFn>),
}

/// Outcome of a `< id` decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Yes,
    No,
    /// Decided by sampling only; not a proof.
    NumericOnly(bool),
}

impl Decision {
    pub fn is_yes(self) -> bool {
        matches!(self, Decision::Yes | Decision::NumericOnly(true))
    }
}

impl GainFn {
    /// `c·s^p`. Panics if `c` or `p` is not a positive finite number.
    pub fn power(c: f64, p: f64) -> Self {
        Self::try_power(c, p).expect("invalid scaled power")
    }

    pub fn try_power(c: f64, p: f64) -> Result<Self, GainError> {
        if !(c.is_finite() && c > 0.0 && p.is_finite() && p > 0.0) {
            return Err(GainError::Invalid(format!(
                "scaled power needs c > 0 and p > 0, got c={c}, p={p}"
            )));
        }
        Ok(GainFn::Power { c, p })
    }

    /// `c·s`, or `Zero` when `c == 0`.
    pub fn linear(c: f64) -> Self {
        if c == 0.0 {
            GainFn::Zero
        } else {
            Self::power(c, 1.0)
        }
    }

    pub fn compose_all(fs: Vec<GainFn>) -> Self {
        GainFn::Compose(fs).normalize()
    }

    pub fn max_of(fs: Vec<GainFn>) -> Self {
        GainFn::Max(fs).normalize()
    }

    pub fn eval(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0 || s.is_nan(), "gain evaluated at negative argument {s}");
        match self {
            GainFn::Zero => 0.0,
            GainFn::Identity => s,
            GainFn::Power { c, p } => {
                if *p == 1.0 {
                    c * s
                } else {
                    c * s.powf(*p)
                }
            }
            GainFn::Compose(fs) => fs.iter().rev().fold(s, |acc, f| f.eval(acc)),
            GainFn::Max(fs) => fs.iter().map(|f| f.eval(s)).fold(0.0, f64::max),
            GainFn::IdPlus(inner) => s + inner.eval(s),
        }
    }

    /// `(c, p)` when the function is a single scaled power (identity is `(1, 1)`).
    pub fn as_power(&self) -> Option<(f64, f64)> {
        match self {
            GainFn::Identity => Some((1.0, 1.0)),
            GainFn::Power { c, p } => Some((*c, *p)),
            _ => None,
        }
    }

    /// Slope of a linear gain; zero counts as linear with slope 0.
    pub fn linear_coeff(&self) -> Option<f64> {
        match self {
            GainFn::Zero => Some(0.0),
            _ => match self.as_power() {
                Some((c, p)) if (p - 1.0).abs() <= EXPONENT_TOL => Some(c),
                _ => None,
            },
        }
    }

    pub fn is_linear(&self) -> bool {
        self.linear_coeff().is_some()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, GainFn::Zero)
    }

    /// Rewrites the tree into normal form. The represented function is unchanged.
    pub fn normalize(self) -> Self {
        match self {
            GainFn::Zero | GainFn::Identity | GainFn::Power { .. } => self,
            GainFn::IdPlus(inner) => match inner.normalize() {
                GainFn::Zero => GainFn::Identity,
                n => match n.linear_coeff() {
                    Some(c) => GainFn::power(1.0 + c, 1.0),
                    None => GainFn::IdPlus(Box::new(n)),
                },
            },
            GainFn::Max(fs) => normalize_max(fs),
            GainFn::Compose(fs) => normalize_compose(fs),
        }
    }

    pub fn validate(&self) -> Result<(), GainError> {
        match self {
            GainFn::Zero | GainFn::Identity => Ok(()),
            GainFn::Power { c, p } => Self::try_power(*c, *p).map(|_| ()),
            GainFn::Compose(fs) | GainFn::Max(fs) => {
                if fs.is_empty() {
                    return Err(GainError::Invalid("compose/max needs at least one child".into()));
                }
                fs.iter().try_for_each(GainFn::validate)
            }
            GainFn::IdPlus(inner) => inner.validate(),
        }
    }
}

fn merge_powers(outer: (f64, f64), inner: (f64, f64)) -> GainFn {
    // c1·(c2·s^p2)^p1
    let (c1, p1) = outer;
    let (c2, p2) = inner;
    let c = if p1 == 1.0 { c1 * c2 } else { c1 * c2.powf(p1) };
    GainFn::Power { c, p: p1 * p2 }
}

fn normalize_compose(fs: Vec<GainFn>) -> GainFn {
    let mut flat = Vec::with_capacity(fs.len());
    for f in fs {
        match f.normalize() {
            GainFn::Compose(inner) => flat.extend(inner),
            GainFn::Zero => return GainFn::Zero,
            GainFn::Identity => {}
            other => flat.push(other),
        }
    }
    // max{f, g} ∘ h = max{f∘h, g∘h} and h ∘ max{f, g} = max{h∘f, h∘g} for increasing h.
    if let Some(pos) = flat.iter().position(|f| matches!(f, GainFn::Max(_))) {
        let GainFn::Max(children) = flat[pos].clone() else { unreachable!() };
        let branches = children
            .into_iter()
            .map(|child| {
                let mut chain = flat.clone();
                chain[pos] = child;
                GainFn::Compose(chain)
            })
            .collect();
        return normalize_max(branches);
    }
    let mut stack: Vec<GainFn> = Vec::with_capacity(flat.len());
    for f in flat {
        stack.push(f);
        while stack.len() >= 2 {
            let n = stack.len();
            match (stack[n - 2].as_power(), stack[n - 1].as_power()) {
                (Some(outer), Some(inner)) => {
                    stack.truncate(n - 2);
                    stack.push(merge_powers(outer, inner));
                }
                _ => break,
            }
        }
    }
    match stack.len() {
        0 => GainFn::Identity,
        1 => stack.pop().unwrap(),
        _ => GainFn::Compose(stack),
    }
}

fn normalize_max(fs: Vec<GainFn>) -> GainFn {
    let mut flat: Vec<GainFn> = Vec::with_capacity(fs.len());
    let mut push = |f: GainFn| {
        if f.is_zero() || flat.contains(&f) {
            return;
        }
        // max{a·s^p, b·s^p} = max{a, b}·s^p
        if let Some((c, p)) = f.as_power() {
            if let Some(slot) = flat.iter_mut().find(|g| g.as_power().is_some_and(|(_, q)| q == p)) {
                let (c0, _) = slot.as_power().unwrap();
                if c > c0 {
                    *slot = f;
                }
                return;
            }
        }
        flat.push(f);
    };
    for f in fs {
        match f.normalize() {
            GainFn::Max(inner) => inner.into_iter().for_each(&mut push),
            other => push(other),
        }
    }
    match flat.len() {
        0 => GainFn::Zero,
        1 => flat.pop().unwrap(),
        _ => GainFn::Max(flat),
    }
}

/// `f ∘ g` in normal form.
pub fn compose(f: &GainFn, g: &GainFn) -> GainFn {
    GainFn::Compose(vec![f.clone(), g.clone()]).normalize()
}

/// Symbolic inverse; defined for the identity and single scaled powers.
pub fn inverse(f: &GainFn) -> Result<GainFn, GainError> {
    match f.clone().normalize() {
        GainFn::Identity => Ok(GainFn::Identity),
        GainFn::Power { c, p } => {
            let q = 1.0 / p;
            let c_inv = if p == 1.0 { 1.0 / c } else { c.powf(-q) };
            Ok(GainFn::Power { c: c_inv, p: q })
        }
        other => Err(GainError::NotInvertible(other.to_string())),
    }
}

/// `id + λ`.
pub fn id_plus(lambda: &GainFn) -> GainFn {
    GainFn::IdPlus(Box::new(lambda.clone())).normalize()
}

/// `(χ - id)^{-1}` for linear `χ(s) = c·s` with `c > 1`.
pub fn minus_id_inverse(chi: &GainFn) -> Result<GainFn, GainError> {
    match chi.clone().normalize().linear_coeff() {
        Some(c) if c > 1.0 => Ok(GainFn::power(1.0 / (c - 1.0), 1.0)),
        _ => Err(GainError::ChiNotAdmissible(chi.to_string())),
    }
}

/// `n` log-spaced points in `[lo, hi]`, both ends included.
pub fn log_samples(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let step = if n > 1 { (b - a) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |k| if k + 1 == n { hi } else { (a + step * k as f64).exp() })
}

fn numeric_samples(s_max: f64) -> impl Iterator<Item = f64> {
    log_samples(s_max * 1e-12, s_max, NUMERIC_SAMPLES)
}

/// Decides `f < id` on `(0, ∞)`; strict, so the boundary `f = id` is `No`.
pub fn less_than_identity(f: &GainFn, s_max: f64) -> Decision {
    less_than_identity_normalized(&f.clone().normalize(), s_max)
}

fn less_than_identity_normalized(f: &GainFn, s_max: f64) -> Decision {
    match f {
        GainFn::Zero => Decision::Yes,
        GainFn::Identity => Decision::No,
        GainFn::Power { c, p } => {
            if (p - 1.0).abs() <= EXPONENT_TOL && *c < 1.0 {
                Decision::Yes
            } else {
                Decision::No
            }
        }
        GainFn::IdPlus(_) => Decision::No,
        GainFn::Max(fs) => {
            let mut all_yes = true;
            for g in fs {
                match less_than_identity_normalized(g, s_max) {
                    Decision::No => return Decision::No,
                    Decision::Yes => {}
                    Decision::NumericOnly(false) => return Decision::NumericOnly(false),
                    Decision::NumericOnly(true) => all_yes = false,
                }
            }
            if all_yes {
                Decision::Yes
            } else {
                Decision::NumericOnly(true)
            }
        }
        GainFn::Compose(_) => Decision::NumericOnly(numeric_samples(s_max).all(|s| f.eval(s) < s)),
    }
}

/// `f(s) <= g(s)` at the numeric-fallback sample points.
pub fn pointwise_le(f: &GainFn, g: &GainFn, s_max: f64) -> bool {
    numeric_samples(s_max).all(|s| f.eval(s) <= g.eval(s) * (1.0 + 1e-12))
}

/// Solves `f(s) = y` for increasing `f`, symbolically when possible, by
/// bisection otherwise (relative tolerance 1e-12).
pub fn inverse_eval(f: &GainFn, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if let Ok(inv) = inverse(f) {
        return inv.eval(y);
    }
    let mut hi = 1.0_f64;
    let mut guard = 0;
    while f.eval(hi) < y && guard < 2000 {
        hi *= 2.0;
        guard += 1;
    }
    let mut lo = 0.0_f64;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if f.eval(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    hi
}

impl fmt::Display for GainFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GainFn::Zero => write!(f, "0"),
            GainFn::Identity => write!(f, "s"),
            GainFn::Power { c, p } if *p == 1.0 => write!(f, "{c}·s"),
            GainFn::Power { c, p } => write!(f, "{c}·s^{p}"),
            GainFn::Compose(fs) => {
                let parts: Vec<String> = fs.iter().map(|g| format!("({g})")).collect();
                write!(f, "{}", parts.join("∘"))
            }
            GainFn::Max(fs) => {
                let parts: Vec<String> = fs.iter().map(ToString::to_string).collect();
                write!(f, "max{{{}}}", parts.join(", "))
            }
            GainFn::IdPlus(inner) => write!(f, "s + {inner}"),
        }
    }
}

/// Wire form: `{"kind":"power","c":2.0,"p":0.5}`, `{"kind":"id"}`, ...
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum GainRepr {
    Zero,
    Id,
    Power { c: f64, p: f64 },
    Compose { fs: Vec<GainRepr> },
    Max { fs: Vec<GainRepr> },
    Idplus { inner: Box<GainRepr> },
}

impl From<GainFn> for GainRepr {
    fn from(g: GainFn) -> Self {
        match g {
            GainFn::Zero => GainRepr::Zero,
            GainFn::Identity => GainRepr::Id,
            GainFn::Power { c, p } => GainRepr::Power { c, p },
            GainFn::Compose(fs) => GainRepr::Compose { fs: fs.into_iter().map(Into::into).collect() },
            GainFn::Max(fs) => GainRepr::Max { fs: fs.into_iter().map(Into::into).collect() },
            GainFn::IdPlus(inner) => GainRepr::Idplus { inner: Box::new((*inner).into()) },
        }
    }
}

fn from_repr(r: GainRepr) -> GainFn {
    match r {
        GainRepr::Zero => GainFn::Zero,
        GainRepr::Id => GainFn::Identity,
        GainRepr::Power { c, p } => GainFn::Power { c, p },
        GainRepr::Compose { fs } => GainFn::Compose(fs.into_iter().map(from_repr).collect()),
        GainRepr::Max { fs } => GainFn::Max(fs.into_iter().map(from_repr).collect()),
        GainRepr::Idplus { inner } => GainFn::IdPlus(Box::new(from_repr(*inner))),
    }
}

impl TryFrom<GainRepr> for GainFn {
    type Error = GainError;

    fn try_from(r: GainRepr) -> Result<Self, Self::Error> {
        let g = from_repr(r);
        g.validate()?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sp(c: f64, p: f64) -> GainFn {
        GainFn::power(c, p)
    }

    #[test]
    fn eval_cases() {
        assert_eq!(sp(2.0, 0.5).eval(4.0), 4.0);
        assert_eq!(GainFn::Identity.eval(7.3), 7.3);
        let chain = GainFn::Compose(vec![sp(2.0, 0.5), sp(3.0, 2.0)]);
        // inner first: 3·1^2 = 3, then 2·√3
        assert_relative_eq!(chain.eval(1.0), 2.0 * 3.0_f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(chain.eval(1.0), 3.4641016, epsilon = 1e-7);
        assert_eq!(GainFn::Zero.eval(5.0), 0.0);
        let plus = GainFn::IdPlus(Box::new(sp(1.0, 2.0)));
        assert_eq!(plus.eval(3.0), 12.0);
    }

    #[test]
    fn compose_collapses_power_pairs() {
        let g = compose(&sp(2.0, 0.5), &sp(3.0, 2.0));
        let (c, p) = g.as_power().unwrap();
        assert_relative_eq!(c, 2.0 * 3.0_f64.sqrt(), max_relative = 1e-15);
        assert_eq!(p, 1.0);
        for s in log_samples(1e-6, 1e6, 100) {
            let seq = sp(2.0, 0.5).eval(sp(3.0, 2.0).eval(s));
            assert_relative_eq!(g.eval(s), seq, max_relative = 1e-12);
        }

        let any = GainFn::Max(vec![sp(1.0, 2.0), GainFn::IdPlus(Box::new(sp(1.0, 0.3)))]);
        assert_eq!(compose(&GainFn::Identity, &any), any.clone().normalize());

        let cycle = compose(&sp(0.8, 0.5), &sp(0.9, 2.0));
        let (c, p) = cycle.as_power().unwrap();
        assert_relative_eq!(c, 0.8 * 0.9_f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(c, 0.759, epsilon = 1e-3);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn compose_with_zero_and_max() {
        assert_eq!(compose(&sp(2.0, 1.0), &GainFn::Zero), GainFn::Zero);
        assert_eq!(compose(&GainFn::Zero, &sp(2.0, 1.0)), GainFn::Zero);
        let m = GainFn::max_of(vec![sp(2.0, 1.0), GainFn::Zero]);
        assert_eq!(m, sp(2.0, 1.0));
        let m = GainFn::max_of(vec![sp(2.0, 1.0), sp(1.0, 2.0)]);
        let g = compose(&m, &sp(0.5, 1.0));
        assert!(matches!(g, GainFn::Max(_)));
        for s in log_samples(1e-3, 1e3, 50) {
            assert_relative_eq!(g.eval(s), m.eval(0.5 * s), max_relative = 1e-12);
        }
    }

    #[test]
    fn inverse_cases() {
        assert_eq!(inverse(&sp(4.0, 1.0)).unwrap(), sp(0.25, 1.0));
        let inv = inverse(&sp(2.0, 0.5)).unwrap();
        let (c, p) = inv.as_power().unwrap();
        assert_relative_eq!(c, 0.25, max_relative = 1e-15);
        assert_eq!(p, 2.0);
        for s in log_samples(1e-3, 1e3, 50) {
            assert_relative_eq!(inv.eval(sp(2.0, 0.5).eval(s)), s, max_relative = 1e-12);
        }
        assert_eq!(inverse(&GainFn::Identity).unwrap(), GainFn::Identity);
        let bad = GainFn::Max(vec![GainFn::Identity, sp(2.0, 2.0)]);
        assert!(matches!(inverse(&bad), Err(GainError::NotInvertible(_))));
        assert!(inverse(&GainFn::Zero).is_err());
        assert!(inverse(&GainFn::IdPlus(Box::new(sp(1.0, 2.0)))).is_err());
    }

    #[test]
    fn max_merges_equal_exponents() {
        let m = GainFn::max_of(vec![GainFn::Identity, GainFn::Identity, GainFn::Zero]);
        assert_eq!(m, GainFn::Identity);
        let m = GainFn::max_of(vec![sp(0.5, 1.0), GainFn::Max(vec![sp(0.5, 1.0), sp(0.7, 1.0)])]);
        assert_eq!(m, sp(0.7, 1.0));
        let m = GainFn::max_of(vec![sp(0.5, 1.0), GainFn::Identity]);
        assert_eq!(m, GainFn::Identity);
        let m = GainFn::max_of(vec![sp(0.5, 2.0), sp(0.7, 1.0), sp(0.6, 2.0)]);
        assert_eq!(m, GainFn::Max(vec![sp(0.6, 2.0), sp(0.7, 1.0)]));
    }

    #[test]
    fn less_than_identity_cases() {
        let room = 2.02 * 0.45 / 0.945;
        assert_relative_eq!(room, 0.962, epsilon = 1e-3);
        assert_eq!(less_than_identity(&sp(0.962, 1.0), DEFAULT_S_MAX), Decision::Yes);
        assert_eq!(less_than_identity(&sp(0.5, 2.0), DEFAULT_S_MAX), Decision::No);
        assert_eq!(less_than_identity(&sp(1.0, 1.0), DEFAULT_S_MAX), Decision::No);
        assert_eq!(less_than_identity(&GainFn::Identity, DEFAULT_S_MAX), Decision::No);
        assert_eq!(less_than_identity(&GainFn::Zero, DEFAULT_S_MAX), Decision::Yes);
        let m = GainFn::Max(vec![sp(0.5, 1.0), sp(0.9, 1.0)]);
        assert_eq!(less_than_identity(&m, DEFAULT_S_MAX), Decision::Yes);
        let m = GainFn::Max(vec![sp(0.5, 1.0), sp(0.9, 2.0)]);
        assert_eq!(less_than_identity(&m, DEFAULT_S_MAX), Decision::No);
        // (id + s^2)∘(0.1·s) is numeric-only, and crosses the identity at large s.
        let f = GainFn::Compose(vec![GainFn::IdPlus(Box::new(sp(1.0, 2.0))), sp(0.1, 1.0)]);
        assert_eq!(less_than_identity(&f, DEFAULT_S_MAX), Decision::NumericOnly(false));
        assert_eq!(less_than_identity(&f, 1.0), Decision::NumericOnly(true));
    }

    #[test]
    fn id_plus_and_minus_id_inverse() {
        assert_eq!(id_plus(&sp(1.0, 1.0)), sp(2.0, 1.0));
        assert_eq!(id_plus(&GainFn::Identity), sp(2.0, 1.0));
        assert_eq!(id_plus(&GainFn::Zero), GainFn::Identity);
        assert!(matches!(id_plus(&sp(1.0, 2.0)), GainFn::IdPlus(_)));
        assert_eq!(minus_id_inverse(&sp(2.0, 1.0)).unwrap(), sp(1.0, 1.0));
        assert!(matches!(minus_id_inverse(&sp(0.5, 1.0)), Err(GainError::ChiNotAdmissible(_))));
        assert!(minus_id_inverse(&GainFn::Identity).is_err());
        assert!(minus_id_inverse(&sp(3.0, 2.0)).is_err());
    }

    #[test]
    fn json_wire_format() {
        let g = GainFn::Compose(vec![
            sp(2.0, 0.5),
            GainFn::Max(vec![GainFn::Identity, GainFn::Zero]),
            GainFn::IdPlus(Box::new(sp(1.0, 1.0))),
        ]);
        let text = serde_json::to_string(&g).unwrap();
        assert_eq!(
            text,
            r#"{"kind":"compose","fs":[{"kind":"power","c":2.0,"p":0.5},{"kind":"max","fs":[{"kind":"id"},{"kind":"zero"}]},{"kind":"idplus","inner":{"kind":"power","c":1.0,"p":1.0}}]}"#
        );
        let back: GainFn = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<GainFn>(r#"{"kind":"power","c":-1.0,"p":1.0}"#).is_err());
        assert!(serde_json::from_str::<GainFn>(r#"{"kind":"max","fs":[]}"#).is_err());
    }

    #[test]
    fn inverse_eval_bisection_matches_pointwise() {
        let f = GainFn::max_of(vec![sp(2.0, 1.0), sp(0.5, 2.0)]);
        for y in [1e-3, 0.5, 3.0, 100.0, 1e5] {
            let s = inverse_eval(&f, y);
            assert_relative_eq!(f.eval(s), y, max_relative = 1e-11);
        }
        assert_eq!(inverse_eval(&f, 0.0), 0.0);
    }

    fn arb_power() -> impl Strategy<Value = GainFn> {
        (0.05f64..20.0, 0.2f64..4.0).prop_map(|(c, p)| sp(c, p))
    }

    proptest! {
        #[test]
        fn normalized_chain_matches_nested_eval(chain in prop::collection::vec(arb_power(), 1..6), s in 1e-3f64..1e2) {
            let nested = GainFn::Compose(chain.clone());
            let normal = nested.clone().normalize();
            prop_assert!(normal.as_power().is_some());
            let a = normal.eval(s);
            let b = nested.eval(s);
            prop_assume!(b.is_finite() && b > 1e-250 && b < 1e250);
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{} vs {}", a, b);
        }

        #[test]
        fn inverse_round_trip(f in arb_power(), s in 1e-4f64..1e4) {
            let inv = inverse(&f).unwrap();
            let back = inv.eval(f.eval(s));
            prop_assert!((back - s).abs() <= 1e-12 * s);
        }

        #[test]
        fn gains_vanish_at_zero_and_increase(f in arb_power(), g in arb_power(), a in 1e-3f64..10.0, b in 1e-3f64..10.0) {
            let h = GainFn::max_of(vec![compose(&f, &g), id_plus(&f)]);
            prop_assert_eq!(h.eval(0.0), 0.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if hi > lo * (1.0 + 1e-9) {
                prop_assert!(h.eval(lo) < h.eval(hi));
            }
        }
    }
}
