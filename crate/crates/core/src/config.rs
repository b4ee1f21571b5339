//! JSON network description read by the command-line tool.
//!
//! ```json
//! {
//!   "n": 3,
//!   "subsystem": { "kind": "roomtemp", "preset": "paper", "overrides": { "alpha": 0.45 } },
//!   "boxes": { "x": [17, 23], "u": [0, 0.6], "w": [19, 21] },
//!   "eta": 0.01, "mu": 0.01, "varpi": 0.0, "varpi_hat": 0.0,
//!   "safe": [19, 21]
//! }
//! ```
//!
//! `kind` is `roomtemp`, `fullnet` or `linear`. Boxes are `[lo, hi]` (the same
//! interval in every coordinate) or `{"lo": [..], "hi": [..]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::bench::{BenchError, CaseStudy, FullNetConfig, LinearSource, RoomPreset, RoomTempConfig, gen_fullnet, gen_roomtemp};
use crate::certificate::{CertError, LinearCertificateParams, TuningFunctions, find_lmi_constants};
use crate::composition::{DEFAULT_CYCLE_CAP, SgcMode, topology_of};
use crate::gain::GainFn;
use crate::linalg::Matrix;
use crate::system::{BoxUnion, Feedback, HyperBox, InterconnectionSpec, InternalBlock, LinearDynamics, SubsystemDef, SystemError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Cert(#[from] CertError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoxSpec {
    Interval([f64; 2]),
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl BoxSpec {
    pub fn to_union(&self, dim: usize) -> Result<BoxUnion, ConfigError> {
        let b = match self {
            BoxSpec::Interval([lo, hi]) => HyperBox::new(vec![*lo; dim], vec![*hi; dim])?,
            BoxSpec::Box { lo, hi } => {
                if lo.len() != dim {
                    return Err(ConfigError::Invalid(format!("box of dim {} where {dim} is needed", lo.len())));
                }
                HyperBox::new(lo.clone(), hi.clone())?
            }
        };
        Ok(BoxUnion::single(b))
    }

    fn interval(&self) -> Result<(f64, f64), ConfigError> {
        match self {
            BoxSpec::Interval([lo, hi]) => Ok((*lo, *hi)),
            BoxSpec::Box { lo, hi } if lo.len() == 1 && hi.len() == 1 => Ok((lo[0], hi[0])),
            _ => Err(ConfigError::Invalid("expected a scalar interval".into())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxesConfig {
    pub x: Option<BoxSpec>,
    pub u: Option<BoxSpec>,
    /// Range of every internal-input block.
    pub w: Option<BoxSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConfig {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    #[serde(default)]
    pub offset: Vec<f64>,
    pub z: Matrix,
    pub k: Matrix,
    /// Searched by bisection together with `theta` when absent.
    pub kappa_c: Option<f64>,
    pub theta: Option<f64>,
    #[serde(default = "default_psi")]
    pub psi_c: f64,
    #[serde(default = "default_delta")]
    pub delta_c: f64,
    /// Sources of each subsystem; a ring when absent and `d` has two output blocks.
    pub neighbors: Option<Vec<Vec<usize>>>,
}

fn default_psi() -> f64 {
    0.99
}

fn default_delta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SubsystemConfig {
    Roomtemp {
        #[serde(default)]
        preset: Option<RoomPreset>,
        #[serde(default)]
        overrides: Map<String, Value>,
    },
    Fullnet {
        #[serde(default)]
        overrides: Map<String, Value>,
    },
    Linear(LinearConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub n: usize,
    pub subsystem: SubsystemConfig,
    #[serde(default)]
    pub boxes: BoxesConfig,
    pub eta: Option<f64>,
    pub mu: Option<f64>,
    #[serde(default)]
    pub varpi: f64,
    #[serde(default)]
    pub varpi_hat: f64,
    pub safe: Option<BoxSpec>,
    pub mode: Option<SgcMode>,
    pub cycle_cap: Option<usize>,
}

fn merge<T: Serialize + for<'de> Deserialize<'de>>(base: &T, overrides: &Map<String, Value>) -> Result<T, ConfigError> {
    let mut v = serde_json::to_value(base)?;
    let obj = v.as_object_mut().expect("config structs serialize to objects");
    for (k, val) in overrides {
        if !obj.contains_key(k) {
            return Err(ConfigError::Invalid(format!("unknown override `{k}`")));
        }
        obj.insert(k.clone(), val.clone());
    }
    Ok(serde_json::from_value(v)?)
}

impl NetConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn mode(&self) -> SgcMode {
        self.mode.unwrap_or(SgcMode::Auto)
    }

    pub fn cycle_cap(&self) -> usize {
        self.cycle_cap.unwrap_or(DEFAULT_CYCLE_CAP)
    }

    /// Network for the configured `n`.
    pub fn case(&self) -> Result<CaseStudy, ConfigError> {
        self.case_with_n(self.n)
    }

    pub fn case_with_n(&self, n: usize) -> Result<CaseStudy, ConfigError> {
        let mut case = match &self.subsystem {
            SubsystemConfig::Roomtemp { preset, overrides } => {
                let mut cfg = merge(&RoomTempConfig::default(), overrides)?;
                cfg.n = n;
                if let Some(p) = preset {
                    cfg.preset = *p;
                }
                if let Some(e) = self.eta {
                    cfg.eta = e;
                }
                if let Some(m) = self.mu {
                    cfg.mu = m;
                }
                if let Some(x) = &self.boxes.x {
                    cfg.x_domain = x.interval()?;
                }
                if let Some(u) = &self.boxes.u {
                    cfg.nu_range = u.interval()?;
                }
                if let Some(w) = &self.boxes.w {
                    cfg.w_range = w.interval()?;
                }
                gen_roomtemp(&cfg)?
            }
            SubsystemConfig::Fullnet { overrides } => {
                let mut cfg = merge(&FullNetConfig::default(), overrides)?;
                cfg.n = n;
                if let Some(e) = self.eta {
                    cfg.eta = e;
                }
                if let Some(m) = self.mu {
                    cfg.mu = m;
                }
                if let Some(x) = &self.boxes.x {
                    cfg.x_domain = x.interval()?;
                }
                if let Some(u) = &self.boxes.u {
                    cfg.u_range = u.interval()?;
                }
                gen_fullnet(&cfg)?
            }
            SubsystemConfig::Linear(lin) => self.linear_case(lin, n)?,
        };
        if self.varpi > 0.0 {
            case.varpi = InterconnectionSpec::uniform(n, self.varpi);
        }
        if self.varpi_hat > 0.0 {
            case.varpi_hat = InterconnectionSpec::uniform(n, self.varpi_hat);
        }
        Ok(case)
    }

    fn linear_case(&self, lin: &LinearConfig, n: usize) -> Result<CaseStudy, ConfigError> {
        let sys = LinearDynamics::new(lin.a.clone(), lin.b.clone(), lin.c.clone(), lin.d.clone())?;
        let sys = if lin.offset.is_empty() { sys } else { sys.with_offset(lin.offset.clone())? };
        let (nx, nu, p, q) = (sys.a.rows(), sys.b.cols(), sys.c.rows(), sys.d.cols());
        let neighbors = match &lin.neighbors {
            Some(nb) => nb.clone(),
            None if q == 0 => vec![Vec::new(); n],
            None if q == 2 * p && n >= 3 => (0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect(),
            None => return Err(ConfigError::Invalid("`neighbors` is required for this D".into())),
        };
        if neighbors.len() != n {
            return Err(ConfigError::Invalid(format!("{} neighbor lists for n = {n}", neighbors.len())));
        }
        let need = |b: &Option<BoxSpec>, name: &str| b.clone().ok_or_else(|| ConfigError::Invalid(format!("boxes.{name} is required")));
        let x_set = need(&self.boxes.x, "x")?.to_union(nx)?;
        let u_set = need(&self.boxes.u, "u")?.to_union(nu)?;
        let w_box = if q > 0 { Some(need(&self.boxes.w, "w")?.to_union(p)?) } else { None };
        let eta = self.eta.ok_or_else(|| ConfigError::Invalid("eta is required".into()))?;
        let mu = self.mu.unwrap_or(eta);
        let (kappa_c, theta) = match (lin.kappa_c, lin.theta) {
            (Some(k), Some(t)) => (k, t),
            _ => find_lmi_constants(&sys.a, &sys.b, &lin.k, &lin.z)?
                .ok_or_else(|| ConfigError::Invalid("no (κ_c, θ) satisfies the LMI for the given Z, K".into()))?,
        };
        let dynamics = std::sync::Arc::new(sys.clone());
        let subsystems = neighbors
            .iter()
            .enumerate()
            .map(|(i, srcs)| {
                if srcs.len() * p != q {
                    return Err(ConfigError::Invalid(format!("subsystem {i}: {} sources but D has {q} columns", srcs.len())));
                }
                let blocks = srcs
                    .iter()
                    .map(|&j| InternalBlock { source: j, set: w_box.clone().expect("q > 0 when there are sources") })
                    .collect();
                Ok(SubsystemDef::new(i, x_set.clone(), u_set.clone(), blocks, None, dynamics.clone())?)
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let topology = topology_of(&subsystems);
        let params = LinearCertificateParams {
            z: lin.z.clone(),
            k: lin.k.clone(),
            kappa_c,
            theta,
            psi_c: lin.psi_c,
            delta_c: lin.delta_c,
            eta,
        };
        Ok(CaseStudy {
            subsystems,
            varpi: InterconnectionSpec::zero(n),
            varpi_hat: InterconnectionSpec::zero(n),
            topology,
            data: Vec::new(),
            tuning: TuningFunctions::standard(&GainFn::linear(0.5)),
            feedback: Feedback::Linear(lin.k.clone()),
            data_verified: true,
            eta,
            mu,
            linear: Some(LinearSource { systems: vec![sys; n], params }),
        })
    }

    /// Safe set per subsystem: `safe`, else the internal-input range for the room ring.
    pub fn safe_sets(&self, case: &CaseStudy, override_safe: Option<&BoxSpec>) -> Result<Vec<BoxUnion>, ConfigError> {
        let spec = override_safe.or(self.safe.as_ref());
        case.subsystems
            .iter()
            .map(|s| match spec {
                Some(b) => b.to_union(s.state_dim()),
                None => match &self.subsystem {
                    SubsystemConfig::Roomtemp { .. } => Ok(s.blocks[0].set.clone()),
                    _ => Err(ConfigError::Invalid("a safe set is required (config `safe` or --safe)".into())),
                },
            })
            .collect()
    }
}
