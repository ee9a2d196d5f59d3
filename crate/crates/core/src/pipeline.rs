//! File-based workflow: strict JSON configuration, line-oriented field and
//! observation files, hashed manifests, and the commands behind the CLI.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bench::{self, BenchConfig, BenchError, Experiment};
use crate::ckle::{build_basis, CkleBasis, CkleError, Truncation};
use crate::gpr::{condition, fit_hyperparameters, FitOptions, FitResult, GpError, GpPosterior};
use crate::inverse::{invert, InverseConfig, InverseError, LsqStatus, Method};
use crate::mesh::{Mesh, MeshError, MeshSpec, ObservationSet};
use crate::synth::{generate_dataset, SynthError, SynthSpec};

pub const MESH_FILE: &str = "mesh.json";
pub const Y_REF_FILE: &str = "y_ref.txt";
pub const U_REF_FILE: &str = "u_ref.txt";
pub const OBS_U_FILE: &str = "obs_u.txt";
pub const OBS_Y_FILE: &str = "obs_y.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const GP_FILE: &str = "gp.json";
pub const BASIS_FILE: &str = "basis.txt";
pub const BASIS_META_FILE: &str = "basis.json";
pub const Y_HAT_FILE: &str = "y_hat.txt";
pub const U_HAT_FILE: &str = "u_hat.txt";
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const SCALING_CSV: &str = "scaling.csv";
pub const SCALING_FIT: &str = "scaling_fit.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Ckle(#[from] CkleError),
    #[error(transparent)]
    Inverse(#[from] InverseError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> PipelineError {
    PipelineError::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Mode selection for the conditional basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CkleConfig {
    pub rtol: f64,
    pub max_modes: usize,
    /// Fixed number of modes; overrides `rtol` and `max_modes`.
    pub n_modes: Option<usize>,
}

impl Default for CkleConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            max_modes: 1000,
            n_modes: None,
        }
    }
}

impl CkleConfig {
    pub fn truncation(&self) -> Truncation {
        match self.n_modes {
            Some(k) => Truncation::Count(k),
            None => Truncation::Capped {
                rtol: self.rtol,
                max_modes: self.max_modes,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub mesh: MeshSpec,
    pub synth: SynthSpec,
    #[serde(default)]
    pub gp: FitOptions,
    #[serde(default)]
    pub ckle: CkleConfig,
    #[serde(default)]
    pub inverse: InverseConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

/// Command-line overrides applied on top of a loaded configuration.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub gamma: Option<f64>,
    pub n_modes: Option<usize>,
    pub rtol: Option<f64>,
    pub time_budget_s: Option<f64>,
}

impl Config {
    pub fn parse(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cfg = Self::parse(&text).map_err(|e| parse_err(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Value checks that the schema alone cannot express.
    pub fn validate(&self) -> Result<()> {
        self.synth.kernel.validate()?;
        self.inverse.validate()?;
        if !(self.ckle.rtol > 0.0 && self.ckle.rtol < 1.0) {
            return Err(PipelineError::Config("ckle.rtol must lie in (0, 1)".into()));
        }
        if self.ckle.n_modes == Some(0) || self.ckle.max_modes == 0 {
            return Err(PipelineError::Config(
                "the basis needs at least one mode".into(),
            ));
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.synth.seed = s;
        }
        if let Some(m) = o.method {
            self.inverse.method = m;
        }
        if let Some(g) = o.gamma {
            self.inverse.gamma = g;
        }
        if let Some(r) = o.rtol {
            self.ckle.rtol = r;
            self.ckle.n_modes = None;
        }
        if let Some(k) = o.n_modes {
            self.ckle.n_modes = Some(k);
        }
        if let Some(b) = o.time_budget_s {
            self.bench.time_budget_s = Some(b);
        }
        self.validate()
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            mesh: self.mesh.clone(),
            synth: self.synth.clone(),
            gp: self.gp.clone(),
            truncation: self.ckle.truncation(),
            inverse: self.inverse.clone(),
        }
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn digest(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Field file: the length on the first line, then one value per line.
pub fn format_field(values: &[f64]) -> String {
    let mut s = format!("{}\n", values.len());
    for v in values {
        let _ = writeln!(s, "{v:.17e}");
    }
    s
}

/// Observation file: one `index value` line per measurement.
pub fn format_observations(obs: &ObservationSet) -> String {
    let mut s = String::new();
    for (i, v) in obs.indices().iter().zip(obs.values()) {
        let _ = writeln!(s, "{i} {v:.17e}");
    }
    s
}

fn numbered_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((k + 1, line));
        }
    }
    Ok(out)
}

fn header(path: &Path, lines: &[(usize, String)]) -> Result<usize> {
    let (_, first) = lines.first().ok_or_else(|| parse_err(path, "empty file"))?;
    first
        .trim()
        .parse()
        .map_err(|_| parse_err(path, format!("line 1: expected a count, found `{first}`")))
}

fn number(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(path, format!("line {line}: invalid number `{tok}`")))
}

pub fn read_field(path: &Path) -> Result<Vec<f64>> {
    let lines = numbered_lines(path)?;
    let n = header(path, &lines)?;
    if lines.len() - 1 != n {
        return Err(parse_err(
            path,
            format!("header says {n} values, found {}", lines.len() - 1),
        ));
    }
    lines[1..]
        .iter()
        .map(|(k, l)| number(path, *k, l.trim()))
        .collect()
}

pub fn read_observations(path: &Path, n_cells: usize) -> Result<ObservationSet> {
    let lines = numbered_lines(path)?;
    let mut idx = Vec::with_capacity(lines.len());
    let mut vals = Vec::with_capacity(lines.len());
    for (k, l) in &lines {
        let mut toks = l.split_whitespace();
        let (Some(i), Some(v), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(parse_err(path, format!("line {k}: expected `index value`")));
        };
        idx.push(
            i.parse::<usize>()
                .map_err(|_| parse_err(path, format!("line {k}: invalid index `{i}`")))?,
        );
        vals.push(number(path, *k, v)?);
    }
    ObservationSet::new(idx, vals, n_cells).map_err(|e| parse_err(path, e.to_string()))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<String> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(sha256_hex(bytes))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write_file(dir, name, s.as_bytes())
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

/// One command's entry in `manifest.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Per-directory record of the commands that wrote into it, keyed by command
/// name so that reruns replace their own entry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub steps: BTreeMap<String, Step>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| parse_err(&path, e.to_string()))
    }

    /// Checks every recorded output against the file currently on disk.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (cmd, step) in &self.steps {
            for (name, hash) in &step.outputs {
                if hash_file(&dir.join(name))? != *hash {
                    return Err(PipelineError::Inconsistent(format!(
                        "{name} (written by {cmd}) does not match its hash"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn record(
    out: &Path,
    command: &str,
    cfg: &Config,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
) -> Result<()> {
    let mut m = Manifest::load(out)?;
    m.steps.insert(
        command.to_string(),
        Step {
            seed: cfg.synth.seed,
            config_sha256: cfg.digest(),
            inputs,
            outputs,
        },
    );
    write_json(out, MANIFEST_FILE, &m)?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Measurements and mesh read back from a dataset directory.
pub struct LoadedDataset {
    pub mesh: Mesh,
    pub obs_u: ObservationSet,
    pub obs_y: ObservationSet,
    pub y_ref: Option<Vec<f64>>,
    pub inputs: BTreeMap<String, String>,
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let mesh_path = dir.join(MESH_FILE);
    let text = fs::read_to_string(&mesh_path).map_err(io_err(&mesh_path))?;
    let spec: MeshSpec =
        serde_json::from_str(&text).map_err(|e| parse_err(&mesh_path, e.to_string()))?;
    let mesh = Mesh::new(spec)?;
    let n = mesh.n_cells();
    let obs_u = read_observations(&dir.join(OBS_U_FILE), n)?;
    let obs_y = read_observations(&dir.join(OBS_Y_FILE), n)?;
    let y_path = dir.join(Y_REF_FILE);
    let y_ref = if y_path.exists() {
        let y = read_field(&y_path)?;
        if y.len() != n {
            return Err(PipelineError::Inconsistent(format!(
                "{Y_REF_FILE} has {} values for {n} cells",
                y.len()
            )));
        }
        Some(y)
    } else {
        None
    };
    let mut inputs = BTreeMap::new();
    for name in [MESH_FILE, OBS_U_FILE, OBS_Y_FILE, Y_REF_FILE] {
        let p = dir.join(name);
        if p.exists() {
            inputs.insert(name.to_string(), hash_file(&p)?);
        }
    }
    Ok(LoadedDataset {
        mesh,
        obs_u,
        obs_y,
        y_ref,
        inputs,
    })
}

/// Synthetic reference fields and measurements.
pub fn cmd_generate(cfg: &Config, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let mesh = Mesh::new(cfg.mesh.clone())?;
    let ds = generate_dataset(&mesh, &cfg.synth)?;
    let mut outputs = BTreeMap::new();
    outputs.insert(MESH_FILE.into(), write_json(out, MESH_FILE, mesh.spec())?);
    outputs.insert(
        Y_REF_FILE.into(),
        write_file(out, Y_REF_FILE, format_field(&ds.y_ref).as_bytes())?,
    );
    outputs.insert(
        U_REF_FILE.into(),
        write_file(out, U_REF_FILE, format_field(&ds.u_ref).as_bytes())?,
    );
    outputs.insert(
        OBS_U_FILE.into(),
        write_file(out, OBS_U_FILE, format_observations(&ds.obs_u).as_bytes())?,
    );
    outputs.insert(
        OBS_Y_FILE.into(),
        write_file(out, OBS_Y_FILE, format_observations(&ds.obs_y).as_bytes())?,
    );
    record(out, "generate", cfg, BTreeMap::new(), outputs)
}

fn fit_gp(cfg: &Config, ds: &LoadedDataset) -> Result<FitResult> {
    let xs: Vec<[f64; 2]> = ds
        .obs_y
        .indices()
        .iter()
        .map(|&i| ds.mesh.centers()[i])
        .collect();
    Ok(fit_hyperparameters(&xs, ds.obs_y.values(), &cfg.gp)?)
}

/// Hyperparameters from `gp.json` in `dataset` when present, otherwise fitted.
fn load_or_fit_gp(
    cfg: &Config,
    dataset: &Path,
    ds: &LoadedDataset,
    inputs: &mut BTreeMap<String, String>,
) -> Result<FitResult> {
    let path = dataset.join(GP_FILE);
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        inputs.insert(GP_FILE.into(), sha256_hex(text.as_bytes()));
        let fit: FitResult =
            serde_json::from_str(&text).map_err(|e| parse_err(&path, e.to_string()))?;
        fit.params.validate()?;
        Ok(fit)
    } else {
        fit_gp(cfg, ds)
    }
}

fn posterior(
    cfg: &Config,
    dataset: &Path,
    ds: &LoadedDataset,
    inputs: &mut BTreeMap<String, String>,
) -> Result<GpPosterior> {
    let fit = load_or_fit_gp(cfg, dataset, ds, inputs)?;
    Ok(condition(&fit.params, &ds.obs_y, &ds.mesh)?)
}

/// Maximum-likelihood kernel hyperparameters for the log-transmissivity data.
pub fn cmd_fit_gp(cfg: &Config, dataset: &Path, out: &Path) -> Result<FitResult> {
    ensure_dir(out)?;
    let ds = load_dataset(dataset)?;
    let fit = fit_gp(cfg, &ds)?;
    let mut outputs = BTreeMap::new();
    outputs.insert(GP_FILE.into(), write_json(out, GP_FILE, &fit)?);
    record(out, "fit-gp", cfg, ds.inputs, outputs)?;
    Ok(fit)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisMeta {
    pub n_cells: usize,
    pub n_modes: usize,
    pub truncation: Truncation,
    pub rtol_achieved: f64,
    pub eigenvalues: Vec<f64>,
}

/// Conditional covariance eigenbasis, written as `basis.txt` plus metadata.
pub fn cmd_build_basis(cfg: &Config, dataset: &Path, out: &Path) -> Result<BasisMeta> {
    ensure_dir(out)?;
    let ds = load_dataset(dataset)?;
    let mut inputs = ds.inputs.clone();
    let post = posterior(cfg, dataset, &ds, &mut inputs)?;
    let basis = build_basis(&post, cfg.ckle.truncation())?;
    let meta = BasisMeta {
        n_cells: basis.n_cells(),
        n_modes: basis.n_modes(),
        truncation: cfg.ckle.truncation(),
        rtol_achieved: basis.rtol_achieved,
        eigenvalues: basis.lambdas_kept.clone(),
    };
    let mut text = Vec::new();
    basis.write_to(&mut text)?;
    let mut outputs = BTreeMap::new();
    outputs.insert(BASIS_FILE.into(), write_file(out, BASIS_FILE, &text)?);
    outputs.insert(
        BASIS_META_FILE.into(),
        write_json(out, BASIS_META_FILE, &meta)?,
    );
    record(out, "build-basis", cfg, inputs, outputs)?;
    Ok(meta)
}

/// Contents of `report.json`. Wall time goes to `timing.json` so that reports
/// are reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: Method,
    pub gamma: f64,
    pub n_cells: usize,
    pub n_y: Option<usize>,
    pub rtol_achieved: Option<f64>,
    pub n_unknowns: usize,
    pub rel_l2_error: Option<f64>,
    pub abs_linf_error: Option<f64>,
    pub iterations: usize,
    pub status: LsqStatus,
    pub converged: bool,
    pub final_cost: f64,
    pub cost_trajectory: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InvertOptions {
    /// Use `basis.txt` from the dataset directory when it exists.
    pub reuse_basis: bool,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self { reuse_basis: true }
    }
}

fn load_basis(
    dataset: &Path,
    inputs: &mut BTreeMap<String, String>,
) -> Result<Option<(CkleBasis, Option<f64>)>> {
    let path = dataset.join(BASIS_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let f = fs::File::open(&path).map_err(io_err(&path))?;
    let basis = CkleBasis::read_from(BufReader::new(f))?;
    inputs.insert(BASIS_FILE.into(), hash_file(&path)?);
    let meta_path = dataset.join(BASIS_META_FILE);
    let rtol = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let meta: BasisMeta =
            serde_json::from_str(&text).map_err(|e| parse_err(&meta_path, e.to_string()))?;
        Some(meta.rtol_achieved)
    } else {
        None
    };
    Ok(Some((basis, rtol)))
}

/// Runs the configured estimator and writes `y_hat.txt`, `u_hat.txt`,
/// `report.json` and `timing.json`.
pub fn cmd_invert(cfg: &Config, dataset: &Path, out: &Path, opts: InvertOptions) -> Result<Report> {
    ensure_dir(out)?;
    let ds = load_dataset(dataset)?;
    let mut inputs = ds.inputs.clone();
    let loaded = if opts.reuse_basis {
        load_basis(dataset, &mut inputs)?
    } else {
        None
    };
    let (basis, rtol) = match loaded {
        Some((b, r)) => {
            if b.n_cells() != ds.mesh.n_cells() {
                return Err(PipelineError::Inconsistent(format!(
                    "{BASIS_FILE} has {} cells, mesh has {}",
                    b.n_cells(),
                    ds.mesh.n_cells()
                )));
            }
            (b, r)
        }
        None => {
            let post = posterior(cfg, dataset, &ds, &mut inputs)?;
            let b = build_basis(&post, cfg.ckle.truncation())?;
            let r = b.rtol_achieved;
            (b, Some(r))
        }
    };
    let is_map = cfg.inverse.method == Method::Map;
    let rep = invert(
        &cfg.inverse,
        &ds.mesh,
        &basis.mean,
        (!is_map).then_some(&basis),
        &ds.obs_u,
        &ds.obs_y,
        ds.y_ref.as_deref(),
    )?;
    let report = Report {
        method: rep.method,
        gamma: cfg.inverse.gamma,
        n_cells: ds.mesh.n_cells(),
        n_y: (!is_map).then_some(basis.n_modes()),
        rtol_achieved: if is_map {
            None
        } else {
            rtol.filter(|r| r.is_finite())
        },
        n_unknowns: rep.n_unknowns,
        rel_l2_error: rep.rel_l2_error,
        abs_linf_error: rep.abs_linf_error,
        iterations: rep.iterations,
        status: rep.status,
        converged: rep.status.converged(),
        final_cost: rep.final_cost,
        cost_trajectory: rep.cost_trajectory,
    };
    let mut outputs = BTreeMap::new();
    outputs.insert(
        Y_HAT_FILE.into(),
        write_file(out, Y_HAT_FILE, format_field(&rep.y_hat).as_bytes())?,
    );
    outputs.insert(
        U_HAT_FILE.into(),
        write_file(out, U_HAT_FILE, format_field(&rep.u_hat).as_bytes())?,
    );
    outputs.insert(REPORT_FILE.into(), write_json(out, REPORT_FILE, &report)?);
    write_json(
        out,
        TIMING_FILE,
        &Timing {
            wall_time_s: rep.wall_time,
        },
    )?;
    record(out, "invert", cfg, inputs, outputs)?;
    Ok(report)
}

/// Scaling sweep; writes `scaling.csv` and `scaling_fit.json`.
pub fn cmd_bench(
    cfg: &Config,
    out: &Path,
    progress: impl FnMut(&bench::ScalingRow),
) -> Result<bench::ScalingFit> {
    ensure_dir(out)?;
    let table = bench::run_scaling_with(&cfg.experiment(), &cfg.bench, progress)?;
    let fit = bench::summarize(&table);
    let csv_path = out.join(SCALING_CSV);
    let f = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    let mut w = BufWriter::new(f);
    bench::write_csv(&table.rows, &mut w)?;
    w.flush().map_err(io_err(&csv_path))?;
    write_json(out, SCALING_FIT, &fit)?;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let v = vec![0.1, -1.0 / 3.0, 1e-300, 12345.678];
        let p = dir.path().join("f.txt");
        fs::write(&p, format_field(&v)).unwrap();
        assert_eq!(read_field(&p).unwrap(), v);
    }

    #[test]
    fn field_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        fs::write(&p, "2\n1.0\nabc\n").unwrap();
        let msg = read_field(&p).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
        fs::write(&p, "3\n1.0\n2.0\n").unwrap();
        assert!(read_field(&p).is_err());
    }

    #[test]
    fn observations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let obs = ObservationSet::new(vec![1, 4], vec![0.5, -2.25], 6).unwrap();
        let p = dir.path().join("o.txt");
        fs::write(&p, format_observations(&obs)).unwrap();
        let back = read_observations(&p, 6).unwrap();
        assert_eq!(back.indices(), obs.indices());
        assert_eq!(back.values(), obs.values());
        assert!(read_observations(&p, 4).is_err());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    const MINIMAL: &str = r#"{
        "mesh": {"nx": 4, "ny": 4, "dx": 25.0, "dy": 25.0, "boundaries": [
            {"side": "left", "kind": "dirichlet", "value": 1.0},
            {"side": "right", "kind": "dirichlet", "value": 0.0},
            {"side": "bottom", "kind": "neumann", "value": 0.0},
            {"side": "top", "kind": "neumann", "value": 0.0}]},
        "synth": {"kernel": {"sigma": 1.0, "length": 20.0, "nugget": 0.0},
                  "seed": 3, "n_y_obs": 4, "n_u_obs": 8, "well_policy": "all_cells"},
        "inverse": {"method": "map", "gamma": 0.001, "ftol": 1e-6}
    }"#;

    #[test]
    fn config_schema() {
        let cfg = Config::parse(MINIMAL).unwrap();
        assert_eq!(cfg.inverse.method, Method::Map);
        assert_eq!(cfg.inverse.lsq.ftol, 1e-6);
        assert_eq!(cfg.inverse.lsq.gtol, 1e-8);
        assert_eq!(cfg.bench, BenchConfig::default());
        let missing = MINIMAL.replace(r#""nx": 4, "#, "");
        let msg = Config::parse(&missing).unwrap_err().to_string();
        assert!(msg.contains("`nx`") && msg.contains("line"), "{msg}");
        let unknown = MINIMAL.replace(r#""ftol": 1e-6"#, r#""ftol": 1e-6, "bogus": 1"#);
        assert!(Config::parse(&unknown)
            .unwrap_err()
            .to_string()
            .contains("bogus"));
        let top = MINIMAL.replacen('{', r#"{"extra": 0, "#, 1);
        assert!(Config::parse(&top).is_err());
    }

    #[test]
    fn overrides_apply_and_validate() {
        let mut cfg = Config::parse(MINIMAL).unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            gamma: Some(0.5),
            n_modes: Some(3),
            ..Default::default()
        })
        .unwrap();
        assert_eq!((cfg.synth.seed, cfg.inverse.gamma), (9, 0.5));
        assert_eq!(cfg.ckle.truncation(), Truncation::Count(3));
        assert!(cfg
            .apply(&Overrides {
                gamma: Some(-1.0),
                ..Default::default()
            })
            .is_err());
    }

    #[test]
    fn overrides() {
        let mut c = CkleConfig::default();
        assert!(matches!(c.truncation(), Truncation::Capped { .. }));
        c.n_modes = Some(7);
        assert_eq!(c.truncation(), Truncation::Count(7));
    }
}
