//! MAP and CKLEMAP estimation of the log-transmissivity field from head and
//! log-transmissivity measurements.

mod lsq;
mod problem;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lsq::{trust_region_lsq, LsqError, LsqOptions, LsqProblem, LsqResult, LsqStatus};
pub use problem::{CklemapProblem, ForwardModel, MapProblem, SolvePath};

use crate::ckle::{CkleBasis, CkleError};
use crate::fvtpfa::FvError;
use crate::mesh::{Mesh, ObservationSet};

#[derive(Debug, Error)]
pub enum InverseError {
    #[error("invalid inversion setup: {0}")]
    InvalidConfig(String),
    #[error("forward solve failed: {source}")]
    Forward { source: FvError, at: Vec<f64> },
    #[error(transparent)]
    Fv(#[from] FvError),
    #[error(transparent)]
    Ckle(#[from] CkleError),
    #[error(transparent)]
    Lsq(#[from] LsqError),
    #[error("reference field has zero norm")]
    ZeroReference,
    #[error("fields have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "map")]
    Map,
    #[serde(rename = "cklemap")]
    Cklemap,
    #[serde(rename = "cklemap-accel")]
    CklemapAccel,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Map => "map",
            Method::Cklemap => "cklemap",
            Method::CklemapAccel => "cklemap-accel",
        }
    }

    pub fn solve_path(self) -> SolvePath {
        match self {
            Method::CklemapAccel => SolvePath::Accelerated,
            Method::Map | Method::Cklemap => SolvePath::Naive,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "map" => Ok(Method::Map),
            "cklemap" => Ok(Method::Cklemap),
            "cklemap-accel" => Ok(Method::CklemapAccel),
            other => Err(format!(
                "unknown method `{other}` (expected map, cklemap, cklemap-accel)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseConfig {
    pub method: Method,
    pub gamma: f64,
    #[serde(flatten)]
    pub lsq: LsqOptions,
    /// Reserved for joint estimation of Neumann fluxes; must stay false.
    pub estimate_fluxes: bool,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self {
            method: Method::CklemapAccel,
            gamma: 1e-6,
            lsq: LsqOptions::default(),
            estimate_fluxes: false,
        }
    }
}

impl InverseConfig {
    pub fn validate(&self) -> Result<(), InverseError> {
        let l = &self.lsq;
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(InverseError::InvalidConfig(
                "gamma must be finite and >= 0".into(),
            ));
        }
        if !(l.ftol > 0.0 && l.xtol > 0.0 && l.gtol > 0.0) {
            return Err(InverseError::InvalidConfig("tolerances must be > 0".into()));
        }
        if self.estimate_fluxes {
            return Err(InverseError::InvalidConfig(
                "flux estimation is not supported".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub method: Method,
    pub y_hat: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub xi_hat: Option<Vec<f64>>,
    pub rel_l2_error: Option<f64>,
    pub abs_linf_error: Option<f64>,
    pub iterations: usize,
    pub status: LsqStatus,
    pub final_cost: f64,
    pub cost_trajectory: Vec<f64>,
    pub n_unknowns: usize,
    pub wall_time: f64,
}

/// `(‖ŷ − ỹ‖₂ / ‖ỹ‖₂, ‖ŷ − ỹ‖∞)`.
pub fn error_metrics(y_hat: &[f64], y_ref: &[f64]) -> Result<(f64, f64), InverseError> {
    if y_hat.len() != y_ref.len() {
        return Err(InverseError::LengthMismatch(y_hat.len(), y_ref.len()));
    }
    let ref_norm = y_ref.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ref_norm == 0.0 {
        return Err(InverseError::ZeroReference);
    }
    let mut sq = 0.0;
    let mut inf: f64 = 0.0;
    for (a, b) in y_hat.iter().zip(y_ref) {
        let d = a - b;
        sq += d * d;
        inf = inf.max(d.abs());
    }
    Ok((sq.sqrt() / ref_norm, inf))
}

/// Runs one inversion. MAP starts from `mean`; CKLEMAP starts from `ξ = 0`,
/// which is the same field when `mean` is the basis mean.
pub fn invert(
    config: &InverseConfig,
    mesh: &Mesh,
    mean: &[f64],
    basis: Option<&CkleBasis>,
    obs_u: &ObservationSet,
    obs_y: &ObservationSet,
    reference: Option<&[f64]>,
) -> Result<InversionReport, InverseError> {
    config.validate()?;
    if mean.len() != mesh.n_cells() {
        return Err(InverseError::LengthMismatch(mean.len(), mesh.n_cells()));
    }
    let model = ForwardModel::new(
        mesh,
        obs_u.clone(),
        obs_y.clone(),
        config.gamma,
        config.method.solve_path(),
    )?;
    let (y_hat, xi_hat, lsq, u_hat) = match config.method {
        Method::Map => {
            let mut prob = MapProblem::new(model);
            let r = trust_region_lsq(&mut prob, mean, &config.lsq)?;
            let u = prob.model_mut().head(&r.x)?;
            (r.x.clone(), None, r, u)
        }
        Method::Cklemap | Method::CklemapAccel => {
            let basis = basis
                .ok_or_else(|| InverseError::InvalidConfig("CKLEMAP requires a basis".into()))?;
            let mut prob = CklemapProblem::new(model, basis)?;
            let r = trust_region_lsq(&mut prob, &vec![0.0; basis.n_modes()], &config.lsq)?;
            let y = prob.field(&r.x)?;
            let u = prob.model_mut().head(&y)?;
            (y, Some(r.x.clone()), r, u)
        }
    };
    let (rel, inf) = match reference {
        Some(r) => {
            let (a, b) = error_metrics(&y_hat, r)?;
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    Ok(InversionReport {
        method: config.method,
        n_unknowns: xi_hat.as_ref().map_or(y_hat.len(), Vec::len),
        y_hat,
        u_hat,
        xi_hat,
        rel_l2_error: rel,
        abs_linf_error: inf,
        iterations: lsq.iterations,
        status: lsq.status,
        final_cost: lsq.cost(),
        cost_trajectory: lsq.cost_trajectory,
        wall_time: lsq.wall_time,
    })
}
