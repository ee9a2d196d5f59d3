//! Scaling harness: runs the estimators over a ladder of uniformly refined
//! meshes and fits power laws `time ≈ a·N^s` to the measured wall times.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ckle::{build_basis, CkleBasis, Truncation};
use crate::fvtpfa::FvAssembler;
use crate::gpr::{condition, fit_hyperparameters, FitOptions};
use crate::inverse::{invert, InverseConfig, LsqStatus, Method};
use crate::mesh::{Mesh, MeshSpec, ObservationSet};
use crate::synth::{generate_reference, observe, refine_mesh, SynthError, SynthSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark setup: {0}")]
    InvalidConfig(String),
    #[error("power-law fit needs at least two points with distinct N, got {0}")]
    TooFewPoints(usize),
    #[error("power-law points must be positive and finite, got ({0}, {1})")]
    NonPositive(f64, f64),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error(transparent)]
    Fv(#[from] crate::fvtpfa::FvError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything needed to build and solve one synthetic problem.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub mesh: MeshSpec,
    pub synth: SynthSpec,
    pub gp: FitOptions,
    pub truncation: Truncation,
    pub inverse: InverseConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Number of meshes in the ladder; level `k` has `4^k` times the base cells.
    pub levels: usize,
    pub replicates: usize,
    pub methods: Vec<Method>,
    /// Per-inversion wall-clock budget in seconds.
    pub time_budget_s: Option<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            replicates: 1,
            methods: vec![Method::Map, Method::Cklemap, Method::CklemapAccel],
            time_budget_s: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.levels < 2 {
            return Err(BenchError::InvalidConfig("levels must be >= 2".into()));
        }
        if self.replicates == 0 {
            return Err(BenchError::InvalidConfig("replicates must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(BenchError::InvalidConfig(
                "methods must not be empty".into(),
            ));
        }
        if let Some(b) = self.time_budget_s {
            if b.is_nan() || b < 0.0 {
                return Err(BenchError::InvalidConfig(
                    "time_budget_s must be >= 0".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    ConvergedFtol,
    ConvergedGtol,
    ConvergedXtol,
    MaxIter,
    Timeout,
    Error,
}

impl From<LsqStatus> for RowStatus {
    fn from(s: LsqStatus) -> Self {
        match s {
            LsqStatus::ConvergedFtol => Self::ConvergedFtol,
            LsqStatus::ConvergedGtol => Self::ConvergedGtol,
            LsqStatus::ConvergedXtol => Self::ConvergedXtol,
            LsqStatus::MaxIter => Self::MaxIter,
            LsqStatus::Timeout => Self::Timeout,
        }
    }
}

impl RowStatus {
    /// The solver ran to a regular stop, so the time is a usable data point.
    pub fn completed(self) -> bool {
        !matches!(self, Self::Timeout | Self::Error)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub method: Method,
    pub replicate: usize,
    pub time_s: Option<f64>,
    pub iterations: Option<usize>,
    pub rel_l2: Option<f64>,
    pub abs_linf: Option<f64>,
    pub status: RowStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    #[serde(rename = "N")]
    pub n: usize,
    pub method: Method,
    pub replicate: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    pub errors: Vec<RowError>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub a: f64,
    pub s: f64,
}

impl PowerLaw {
    pub fn eval(&self, n: f64) -> f64 {
        self.a * n.powf(self.s)
    }
}

/// Least-squares line through `(ln N, ln t)`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLaw, BenchError> {
    if let Some(&(n, t)) = points
        .iter()
        .find(|(n, t)| !(*n > 0.0 && *t > 0.0 && n.is_finite() && t.is_finite()))
    {
        return Err(BenchError::NonPositive(n, t));
    }
    let m = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(sx, sy), (n, t)| {
        (sx + n.ln() / m, sy + t.ln() / m)
    });
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (n, t) in points {
        let dx = n.ln() - mx;
        sxx += dx * dx;
        sxy += dx * (t.ln() - my);
    }
    if points.len() < 2 || sxx == 0.0 {
        return Err(BenchError::TooFewPoints(points.len()));
    }
    let s = sxy / sxx;
    Ok(PowerLaw {
        a: (my - s * mx).exp(),
        s,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    })
}

/// One rung of the ladder: mesh plus reference fields.
pub struct Level {
    pub mesh: Mesh,
    pub y_ref: Vec<f64>,
    pub u_ref: Vec<f64>,
}

/// Samples the reference on the base mesh and refines it `levels − 1` times;
/// heads are re-solved on every mesh.
pub fn build_ladder(
    mesh: &MeshSpec,
    synth: &SynthSpec,
    levels: usize,
) -> Result<Vec<Level>, BenchError> {
    let base = Mesh::new(mesh.clone())?;
    let (y, u) = generate_reference(&base, synth)?;
    let mut ladder = vec![Level {
        mesh: base,
        y_ref: y,
        u_ref: u,
    }];
    while ladder.len() < levels {
        let prev = ladder.last().expect("ladder is non-empty");
        let (mesh, y_ref) = refine_mesh(&prev.mesh, &prev.y_ref)?;
        let (u_ref, _) = FvAssembler::new(&mesh)?.solve(&y_ref)?;
        ladder.push(Level { mesh, y_ref, u_ref });
    }
    Ok(ladder)
}

/// Observation seed of a replicate; replicate 0 reuses the experiment seed.
pub fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    seed.wrapping_add(replicate as u64)
}

struct Prior {
    mean: Vec<f64>,
    basis: Result<CkleBasis, String>,
}

fn prior(exp: &Experiment, mesh: &Mesh, obs_y: &ObservationSet) -> Result<Prior, String> {
    let xs: Vec<[f64; 2]> = obs_y.indices().iter().map(|&i| mesh.centers()[i]).collect();
    let fit = fit_hyperparameters(&xs, obs_y.values(), &exp.gp).map_err(|e| e.to_string())?;
    let post = condition(&fit.params, obs_y, mesh).map_err(|e| e.to_string())?;
    let basis = build_basis(&post, exp.truncation).map_err(|e| e.to_string());
    Ok(Prior {
        mean: post.mean,
        basis,
    })
}

pub fn run_scaling(exp: &Experiment, cfg: &BenchConfig) -> Result<ScalingTable, BenchError> {
    run_scaling_with(exp, cfg, |_| {})
}

/// Runs every `(level, replicate, method)` combination sequentially, calling
/// `progress` after each row. Failures of a single combination become
/// `error` rows.
pub fn run_scaling_with(
    exp: &Experiment,
    cfg: &BenchConfig,
    mut progress: impl FnMut(&ScalingRow),
) -> Result<ScalingTable, BenchError> {
    cfg.validate()?;
    let ladder = build_ladder(&exp.mesh, &exp.synth, cfg.levels)?;
    let mut table = ScalingTable::default();
    for level in &ladder {
        let n = level.mesh.n_cells();
        for replicate in 0..cfg.replicates {
            let spec = SynthSpec {
                seed: replicate_seed(exp.synth.seed, replicate),
                ..exp.synth.clone()
            };
            let setup = observe(&level.y_ref, &level.u_ref, &spec)
                .map_err(|e| e.to_string())
                .and_then(|(obs_u, obs_y)| {
                    prior(exp, &level.mesh, &obs_y).map(|p| (obs_u, obs_y, p))
                });
            for &method in &cfg.methods {
                let outcome = setup
                    .as_ref()
                    .map_err(Clone::clone)
                    .and_then(|(obs_u, obs_y, p)| {
                        let basis = match method {
                            Method::Map => None,
                            _ => Some(p.basis.as_ref().map_err(Clone::clone)?),
                        };
                        let mut icfg = InverseConfig {
                            method,
                            ..exp.inverse.clone()
                        };
                        if cfg.time_budget_s.is_some() {
                            icfg.lsq.time_budget = cfg.time_budget_s;
                        }
                        invert(
                            &icfg,
                            &level.mesh,
                            &p.mean,
                            basis,
                            obs_u,
                            obs_y,
                            Some(&level.y_ref),
                        )
                        .map_err(|e| e.to_string())
                    });
                let row = match outcome {
                    Ok(r) => ScalingRow {
                        n,
                        method,
                        replicate,
                        time_s: Some(r.wall_time),
                        iterations: Some(r.iterations),
                        rel_l2: r.rel_l2_error,
                        abs_linf: r.abs_linf_error,
                        status: r.status.into(),
                    },
                    Err(message) => {
                        table.errors.push(RowError {
                            n,
                            method,
                            replicate,
                            message,
                        });
                        ScalingRow {
                            n,
                            method,
                            replicate,
                            time_s: None,
                            iterations: None,
                            rel_l2: None,
                            abs_linf: None,
                            status: RowStatus::Error,
                        }
                    }
                };
                progress(&row);
                table.rows.push(row);
            }
        }
    }
    Ok(table)
}

/// Replicate statistics of one method at one mesh size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub completed: usize,
    pub timed_out: usize,
    pub failed: usize,
    pub median_time_s: Option<f64>,
    pub min_time_s: Option<f64>,
    pub max_time_s: Option<f64>,
    pub median_rel_l2: Option<f64>,
    pub median_iterations: Option<f64>,
}

/// Fitted-law prediction for a level the method did not finish.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    #[serde(rename = "N")]
    pub n: usize,
    pub time_s: f64,
    pub extrapolated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodFit {
    pub a: Option<f64>,
    pub s: Option<f64>,
    pub levels: Vec<LevelSummary>,
    pub extrapolated: Vec<Extrapolation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub methods: BTreeMap<String, MethodFit>,
    pub errors: Vec<RowError>,
}

/// Median times per level and a power law through the levels where every
/// replicate completed. Levels with timeouts are extrapolated from the law.
pub fn summarize(table: &ScalingTable) -> ScalingFit {
    let mut methods = BTreeMap::new();
    let mut order: Vec<Method> = Vec::new();
    for r in &table.rows {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    for method in order {
        let mut ns: Vec<usize> = table
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.n)
            .collect();
        ns.sort_unstable();
        ns.dedup();
        let levels: Vec<LevelSummary> = ns
            .iter()
            .map(|&n| {
                let rows: Vec<&ScalingRow> = table
                    .rows
                    .iter()
                    .filter(|r| r.method == method && r.n == n)
                    .collect();
                let done: Vec<&&ScalingRow> =
                    rows.iter().filter(|r| r.status.completed()).collect();
                let times: Vec<f64> = done.iter().filter_map(|r| r.time_s).collect();
                let errs: Vec<f64> = done.iter().filter_map(|r| r.rel_l2).collect();
                let its: Vec<f64> = done
                    .iter()
                    .filter_map(|r| r.iterations.map(|i| i as f64))
                    .collect();
                LevelSummary {
                    n,
                    completed: done.len(),
                    timed_out: rows
                        .iter()
                        .filter(|r| r.status == RowStatus::Timeout)
                        .count(),
                    failed: rows.iter().filter(|r| r.status == RowStatus::Error).count(),
                    median_time_s: median(&times),
                    min_time_s: times.iter().copied().reduce(f64::min),
                    max_time_s: times.iter().copied().reduce(f64::max),
                    median_rel_l2: median(&errs),
                    median_iterations: median(&its),
                }
            })
            .collect();
        let points: Vec<(f64, f64)> = levels
            .iter()
            .filter(|l| l.timed_out == 0)
            .filter_map(|l| l.median_time_s.map(|t| (l.n as f64, t)))
            .collect();
        let law = fit_power_law(&points).ok();
        let extrapolated = match law {
            Some(law) => levels
                .iter()
                .filter(|l| l.timed_out > 0)
                .map(|l| Extrapolation {
                    n: l.n,
                    time_s: law.eval(l.n as f64),
                    extrapolated: true,
                })
                .collect(),
            None => Vec::new(),
        };
        methods.insert(
            method.name().to_string(),
            MethodFit {
                a: law.map(|l| l.a),
                s: law.map(|l| l.s),
                levels,
                extrapolated,
            },
        );
    }
    ScalingFit {
        methods,
        errors: table.errors.clone(),
    }
}

pub fn write_csv<W: Write>(rows: &[ScalingRow], w: W) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<ScalingRow>, BenchError> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<Result<_, _>>()?)
}
