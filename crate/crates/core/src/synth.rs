//! Synthetic experiments: Gaussian reference fields, reference heads,
//! randomly placed measurements, and uniform mesh refinement.

use faer::{Mat, Side as FaerSide};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fvtpfa::{FvAssembler, FvError};
use crate::gpr::{kernel_matrix, KernelParams};
use crate::mesh::{BoundaryRule, Mesh, MeshError, MeshSpec, ObservationSet};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("prior covariance could not be factored even with jitter {0:e}")]
    Factorization(f64),
    #[error("requested {requested} observations from {available} candidate cells")]
    TooManyObservations { requested: usize, available: usize },
    #[error("candidate cell {index} is outside a field of {n} cells")]
    CandidateOutOfRange { index: usize, n: usize },
    #[error(transparent)]
    Fv(#[from] FvError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Deterministic additive trend `offset + gradient · x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trend {
    pub offset: f64,
    pub gradient: [f64; 2],
}

/// Cells eligible for measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WellPolicy {
    AllCells,
    /// A random set of `wells` cells; heads and log-transmissivities are both
    /// measured within it.
    RandomSubset {
        wells: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub kernel: KernelParams,
    pub seed: u64,
    pub n_y_obs: usize,
    pub n_u_obs: usize,
    pub well_policy: WellPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trend: Option<Trend>,
}

// Independent ChaCha streams per purpose, all keyed by the same seed.
const STREAM_FIELD: u64 = 0;
const STREAM_WELLS: u64 = 1;
const STREAM_U_OBS: u64 = 2;
const STREAM_Y_OBS: u64 = 3;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Draws from `N(0, C)` for the kernel covariance at a fixed point set.
pub struct GaussianSampler {
    chol: Option<Mat<f64>>,
    n: usize,
}

impl GaussianSampler {
    /// Factors the covariance, escalating a diagonal jitter from
    /// `1e-12·σ²` by factors of ten when needed.
    pub fn new(kernel: &KernelParams, points: &[[f64; 2]]) -> Result<Self, SynthError> {
        let n = points.len();
        if kernel.sigma == 0.0 {
            return Ok(Self { chol: None, n });
        }
        let base = kernel_matrix(kernel, points, points);
        let var = kernel.sigma * kernel.sigma;
        let mut jitter = 0.0;
        for attempt in 0..10 {
            let mut c = base.clone();
            for i in 0..n {
                c[(i, i)] += kernel.nugget + jitter;
            }
            if let Ok(llt) = c.llt(FaerSide::Lower) {
                return Ok(Self {
                    chol: Some(llt.L().to_owned()),
                    n,
                });
            }
            jitter = var * 1e-12 * 10f64.powi(attempt);
        }
        Err(SynthError::Factorization(jitter))
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let Some(l) = &self.chol else {
            return vec![0.0; self.n];
        };
        let z = Mat::from_fn(self.n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = l * &z;
        (0..self.n).map(|i| y[(i, 0)]).collect()
    }
}

/// Zero-mean Gaussian draw at the cell centers of `mesh`.
pub fn sample_gaussian_field(
    kernel: &KernelParams,
    mesh: &Mesh,
    seed: u64,
) -> Result<Vec<f64>, SynthError> {
    let sampler = GaussianSampler::new(kernel, mesh.centers())?;
    Ok(sampler.sample(&mut rng(seed, STREAM_FIELD)))
}

/// Reference log-transmissivity (with optional trend) and its head field.
pub fn generate_reference(
    mesh: &Mesh,
    spec: &SynthSpec,
) -> Result<(Vec<f64>, Vec<f64>), SynthError> {
    let mut y = sample_gaussian_field(&spec.kernel, mesh, spec.seed)?;
    if let Some(t) = spec.trend {
        for (v, c) in y.iter_mut().zip(mesh.centers()) {
            *v += t.offset + t.gradient[0] * c[0] + t.gradient[1] * c[1];
        }
    }
    let (u, _) = FvAssembler::new(mesh)?.solve(&y)?;
    Ok((y, u))
}

/// Uniform draw of `n` distinct cells from `candidates` (all cells when
/// `None`), returned in ascending order with their field values.
pub fn sample_observations(
    field: &[f64],
    n: usize,
    seed: u64,
    candidates: Option<&[usize]>,
) -> Result<ObservationSet, SynthError> {
    sample_observations_with(field, n, &mut rng(seed, STREAM_U_OBS), candidates)
}

fn sample_observations_with<R: Rng>(
    field: &[f64],
    n: usize,
    rng: &mut R,
    candidates: Option<&[usize]>,
) -> Result<ObservationSet, SynthError> {
    let available = candidates.map_or(field.len(), <[usize]>::len);
    if n > available {
        return Err(SynthError::TooManyObservations {
            requested: n,
            available,
        });
    }
    if let Some(&index) = candidates.and_then(|c| c.iter().find(|&&i| i >= field.len())) {
        return Err(SynthError::CandidateOutOfRange {
            index,
            n: field.len(),
        });
    }
    let mut picked: Vec<usize> = index::sample(rng, available, n)
        .into_iter()
        .map(|k| candidates.map_or(k, |c| c[k]))
        .collect();
    picked.sort_unstable();
    Ok(ObservationSet::gather(field, picked)?)
}

/// A complete synthetic dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub y_ref: Vec<f64>,
    pub u_ref: Vec<f64>,
    pub obs_u: ObservationSet,
    pub obs_y: ObservationSet,
}

/// Well cells for a policy, or `None` when every cell is a candidate.
pub fn select_wells(
    n_cells: usize,
    policy: &WellPolicy,
    seed: u64,
) -> Result<Option<Vec<usize>>, SynthError> {
    match *policy {
        WellPolicy::AllCells => Ok(None),
        WellPolicy::RandomSubset { wells } => {
            if wells > n_cells {
                return Err(SynthError::TooManyObservations {
                    requested: wells,
                    available: n_cells,
                });
            }
            let mut w = index::sample(&mut rng(seed, STREAM_WELLS), n_cells, wells).into_vec();
            w.sort_unstable();
            Ok(Some(w))
        }
    }
}

/// Measurements of a known reference pair.
pub fn observe(
    y_ref: &[f64],
    u_ref: &[f64],
    spec: &SynthSpec,
) -> Result<(ObservationSet, ObservationSet), SynthError> {
    let wells = select_wells(y_ref.len(), &spec.well_policy, spec.seed)?;
    let obs_u = sample_observations_with(
        u_ref,
        spec.n_u_obs,
        &mut rng(spec.seed, STREAM_U_OBS),
        wells.as_deref(),
    )?;
    let obs_y = sample_observations_with(
        y_ref,
        spec.n_y_obs,
        &mut rng(spec.seed, STREAM_Y_OBS),
        wells.as_deref(),
    )?;
    Ok((obs_u, obs_y))
}

/// Reference fields plus measurements, fully determined by `(mesh, spec)`.
pub fn generate_dataset(mesh: &Mesh, spec: &SynthSpec) -> Result<Dataset, SynthError> {
    let (y_ref, u_ref) = generate_reference(mesh, spec)?;
    let (obs_u, obs_y) = observe(&y_ref, &u_ref, spec)?;
    Ok(Dataset {
        y_ref,
        u_ref,
        obs_u,
        obs_y,
    })
}

/// Splits every cell into four and interpolates `field` bilinearly from the
/// coarse cell centers. Fine cells whose interpolation stencil leaves the
/// active region take their parent's value. Boundary rules keep their values
/// and cover the subdivided faces of the original ranges.
pub fn refine_mesh(mesh: &Mesh, field: &[f64]) -> Result<(Mesh, Vec<f64>), SynthError> {
    let s = mesh.spec();
    let (nx, ny) = (2 * s.nx, 2 * s.ny);
    let active_mask = s.active_mask.as_ref().map(|m| {
        let mut fine = vec![false; nx * ny];
        for (k, f) in fine.iter_mut().enumerate() {
            let (i, j) = (k % nx, k / nx);
            *f = m[(j / 2) * s.nx + i / 2];
        }
        fine
    });
    let boundaries = s
        .boundaries
        .iter()
        .map(|r| BoundaryRule {
            range: r.range.map(|[lo, hi]| [2 * lo, 2 * hi + 1]),
            ..r.clone()
        })
        .collect();
    let fine = Mesh::new(MeshSpec {
        nx,
        ny,
        dx: 0.5 * s.dx,
        dy: 0.5 * s.dy,
        active_mask,
        boundaries,
    })?;

    let values = (0..fine.n_cells())
        .map(|c| {
            let (fi, fj) = fine.cell_ij(c);
            let (pi, pj) = (fi / 2, fj / 2);
            let parent = mesh
                .cell_at(pi, pj)
                .expect("fine cell has an active parent");
            // neighbor toward the fine cell's side of the parent
            let ni = if fi % 2 == 0 {
                pi.checked_sub(1)
            } else {
                Some(pi + 1)
            };
            let nj = if fj % 2 == 0 {
                pj.checked_sub(1)
            } else {
                Some(pj + 1)
            };
            let stencil = ni.zip(nj).and_then(|(ni, nj)| {
                Some([
                    mesh.cell_at(pi, pj)?,
                    mesh.cell_at(ni, pj)?,
                    mesh.cell_at(pi, nj)?,
                    mesh.cell_at(ni, nj)?,
                ])
            });
            match stencil {
                Some([a, b, c, d]) => {
                    0.5625 * field[a] + 0.1875 * field[b] + 0.1875 * field[c] + 0.0625 * field[d]
                }
                None => field[parent],
            }
        })
        .collect();
    Ok((fine, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BcKind, Side};

    fn unit_square(n: usize) -> Mesh {
        let h = 1.0 / n as f64;
        Mesh::new(MeshSpec::rectangle(
            n,
            n,
            h,
            h,
            vec![
                BoundaryRule {
                    side: Side::Left,
                    range: None,
                    kind: BcKind::Dirichlet,
                    value: 1.0,
                },
                BoundaryRule {
                    side: Side::Right,
                    range: None,
                    kind: BcKind::Dirichlet,
                    value: 0.0,
                },
                BoundaryRule {
                    side: Side::Bottom,
                    range: None,
                    kind: BcKind::Neumann,
                    value: 0.0,
                },
                BoundaryRule {
                    side: Side::Top,
                    range: None,
                    kind: BcKind::Neumann,
                    value: 0.0,
                },
            ],
        ))
        .unwrap()
    }

    #[test]
    fn same_seed_same_field() {
        let mesh = unit_square(6);
        let k = KernelParams::new(1.0, 0.3, 0.0).unwrap();
        assert_eq!(
            sample_gaussian_field(&k, &mesh, 7).unwrap(),
            sample_gaussian_field(&k, &mesh, 7).unwrap()
        );
        assert_ne!(
            sample_gaussian_field(&k, &mesh, 7).unwrap(),
            sample_gaussian_field(&k, &mesh, 8).unwrap()
        );
    }

    #[test]
    fn zero_variance_gives_homogeneous_reference() {
        let mesh = unit_square(4);
        let spec = SynthSpec {
            kernel: KernelParams {
                sigma: 0.0,
                length: 1.0,
                nugget: 0.0,
            },
            seed: 1,
            n_y_obs: 2,
            n_u_obs: 3,
            well_policy: WellPolicy::AllCells,
            trend: None,
        };
        let (y, u) = generate_reference(&mesh, &spec).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        for (c, v) in mesh.centers().iter().zip(&u) {
            assert!((v - (1.0 - c[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn observations_cover_all_cells() {
        let field: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let obs = sample_observations(&field, 10, 3, None).unwrap();
        assert_eq!(obs.indices(), (0..10).collect::<Vec<_>>().as_slice());
        assert_eq!(obs.values(), field.as_slice());
        assert!(matches!(
            sample_observations(&field, 11, 3, None),
            Err(SynthError::TooManyObservations { .. })
        ));
    }

    #[test]
    fn observations_respect_candidates() {
        let field = vec![1.0; 20];
        let cand = [2, 5, 7, 11];
        let obs = sample_observations(&field, 3, 9, Some(&cand)).unwrap();
        assert!(obs.indices().iter().all(|i| cand.contains(i)));
    }

    #[test]
    fn refinement_quadruples_and_keeps_constants() {
        let mesh = unit_square(3);
        let (fine, f) = refine_mesh(&mesh, &[2.5; 9]).unwrap();
        assert_eq!(fine.n_cells(), 36);
        assert!(f.iter().all(|&v| (v - 2.5).abs() < 1e-15));
        let (finer, _) = refine_mesh(&fine, &f).unwrap();
        assert_eq!(finer.n_cells(), 144);
    }

    #[test]
    fn refinement_is_exact_for_affine_fields_inside() {
        let mesh = unit_square(5);
        let affine = |c: [f64; 2]| 0.3 + 2.0 * c[0] - 1.5 * c[1];
        let field: Vec<f64> = mesh.centers().iter().map(|&c| affine(c)).collect();
        let (fine, f) = refine_mesh(&mesh, &field).unwrap();
        for (k, c) in fine.centers().iter().enumerate() {
            let (i, j) = fine.cell_ij(k);
            if i > 0 && j > 0 && i < 9 && j < 9 {
                assert!((f[k] - affine(*c)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn refinement_maps_ranges() {
        let mut mesh_spec = unit_square(2).spec().clone();
        mesh_spec.boundaries[3].range = Some([0, 0]);
        mesh_spec.boundaries.push(BoundaryRule {
            side: Side::Top,
            range: Some([1, 1]),
            kind: BcKind::Neumann,
            value: -2.0,
        });
        let mesh = Mesh::new(mesh_spec).unwrap();
        let (fine, _) = refine_mesh(&mesh, &[0.0; 4]).unwrap();
        let r = fine.spec().boundaries.last().unwrap();
        assert_eq!(r.range, Some([2, 3]));
    }
}
