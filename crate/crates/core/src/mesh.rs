//! Structured finite-volume mesh over a rectangular lattice with an active-cell
//! mask, plus the discrete gradient and observation operators.
//!
//! Lattice cell `(i, j)` has column `i` along x and row `j` along y, with its
//! center at `((i + ½)dx, (j + ½)dy)`. Active cells are numbered row-major:
//! increasing `i` within a row, rows in increasing `j`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparsechol::SparseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("grid dimensions must be positive (nx={nx}, ny={ny}, dx={dx}, dy={dy})")]
    InvalidDimensions {
        nx: usize,
        ny: usize,
        dx: f64,
        dy: f64,
    },
    #[error("active mask has {found} entries, expected {expected}")]
    MaskSize { expected: usize, found: usize },
    #[error("active mask selects no cells")]
    EmptyMask,
    #[error("active cells are not 4-connected ({components} components)")]
    Disconnected { components: usize },
    #[error("{side:?} face of cell ({i}, {j}) matches no boundary rule")]
    UnmatchedFace { i: usize, j: usize, side: Side },
    #[error("{side:?} face of cell ({i}, {j}) matches {count} boundary rules")]
    AmbiguousFace {
        i: usize,
        j: usize,
        side: Side,
        count: usize,
    },
    #[error("boundary value {0} is not finite")]
    NonFiniteBoundary(f64),
    #[error("boundary rule range [{0}, {1}] is reversed")]
    InvalidRange(usize, usize),
    #[error("observation index {index} is outside a mesh of {n} cells")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("observation index {0} appears more than once")]
    DuplicateIndex(usize),
    #[error("observation has {indices} indices but {values} values")]
    LengthMismatch { indices: usize, values: usize },
    #[error("observation value at index {0} is not finite")]
    NonFiniteValue(usize),
}

/// Outward direction of a cell face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    fn offset(self) -> (isize, isize) {
        match self {
            Side::Left => (-1, 0),
            Side::Right => (1, 0),
            Side::Bottom => (0, -1),
            Side::Top => (0, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    Dirichlet,
    Neumann,
}

/// Prescribed head (Dirichlet) or outward flux per unit length (Neumann).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryCondition {
    pub kind: BcKind,
    pub value: f64,
}

/// Selects exterior faces by outward side and, optionally, by the inclusive
/// range of cell indices along that side (`j` for left/right, `i` for
/// bottom/top). Faces bordering masked-out cells are exterior too.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryRule {
    pub side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[usize; 2]>,
    pub kind: BcKind,
    pub value: f64,
}

impl BoundaryRule {
    fn matches(&self, i: usize, j: usize, side: Side) -> bool {
        if self.side != side {
            return false;
        }
        let along = match side {
            Side::Left | Side::Right => j,
            Side::Bottom | Side::Top => i,
        };
        self.range.is_none_or(|[lo, hi]| lo <= along && along <= hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    /// Row-major over the lattice, index `j * nx + i`. `None` activates every cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_mask: Option<Vec<bool>>,
    pub boundaries: Vec<BoundaryRule>,
}

impl MeshSpec {
    /// Full rectangular grid.
    pub fn rectangle(
        nx: usize,
        ny: usize,
        dx: f64,
        dy: f64,
        boundaries: Vec<BoundaryRule>,
    ) -> Self {
        Self {
            nx,
            ny,
            dx,
            dy,
            active_mask: None,
            boundaries,
        }
    }

    fn is_active(&self, i: usize, j: usize) -> bool {
        self.active_mask
            .as_ref()
            .is_none_or(|mask| mask[j * self.nx + i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InteriorFace {
    /// Lower cell index.
    pub a: usize,
    /// Higher cell index.
    pub b: usize,
    pub length: f64,
    /// Distance between the two cell centers.
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryFace {
    pub cell: usize,
    pub side: Side,
    pub length: f64,
    /// Distance from the cell center to the face.
    pub half_distance: f64,
    pub bc: BoundaryCondition,
}

/// Cell label for bookkeeping; assembly does not depend on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellClass {
    Interior,
    Neumann,
    Dirichlet,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    spec: MeshSpec,
    cell_ij: Vec<(usize, usize)>,
    lattice_to_cell: Vec<Option<usize>>,
    centers: Vec<[f64; 2]>,
    interior_faces: Vec<InteriorFace>,
    boundary_faces: Vec<BoundaryFace>,
    partition: Vec<CellClass>,
}

pub fn build_mesh(spec: &MeshSpec) -> Result<Mesh, MeshError> {
    Mesh::new(spec.clone())
}

impl Mesh {
    pub fn new(spec: MeshSpec) -> Result<Self, MeshError> {
        let MeshSpec { nx, ny, dx, dy, .. } = spec;
        if nx == 0 || ny == 0 || !(dx > 0.0 && dx.is_finite()) || !(dy > 0.0 && dy.is_finite()) {
            return Err(MeshError::InvalidDimensions { nx, ny, dx, dy });
        }
        if let Some(mask) = &spec.active_mask {
            if mask.len() != nx * ny {
                return Err(MeshError::MaskSize {
                    expected: nx * ny,
                    found: mask.len(),
                });
            }
        }
        for rule in &spec.boundaries {
            if !rule.value.is_finite() {
                return Err(MeshError::NonFiniteBoundary(rule.value));
            }
            if let Some([lo, hi]) = rule.range {
                if lo > hi {
                    return Err(MeshError::InvalidRange(lo, hi));
                }
            }
        }

        let mut lattice_to_cell = vec![None; nx * ny];
        let mut cell_ij = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if spec.is_active(i, j) {
                    lattice_to_cell[j * nx + i] = Some(cell_ij.len());
                    cell_ij.push((i, j));
                }
            }
        }
        if cell_ij.is_empty() {
            return Err(MeshError::EmptyMask);
        }
        let components = count_components(nx, ny, &lattice_to_cell, &cell_ij);
        if components != 1 {
            return Err(MeshError::Disconnected { components });
        }

        let centers = cell_ij
            .iter()
            .map(|&(i, j)| [(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy])
            .collect();

        let neighbor = |i: usize, j: usize, side: Side| -> Option<usize> {
            let (di, dj) = side.offset();
            let (ni, nj) = (i as isize + di, j as isize + dj);
            if ni < 0 || nj < 0 || ni >= nx as isize || nj >= ny as isize {
                return None;
            }
            lattice_to_cell[nj as usize * nx + ni as usize]
        };

        let mut interior_faces = Vec::new();
        let mut boundary_faces = Vec::new();
        let mut partition = vec![CellClass::Interior; cell_ij.len()];
        for (cell, &(i, j)) in cell_ij.iter().enumerate() {
            for side in Side::ALL {
                let (length, half) = match side {
                    Side::Left | Side::Right => (dy, dx / 2.0),
                    Side::Bottom | Side::Top => (dx, dy / 2.0),
                };
                match neighbor(i, j, side) {
                    Some(other) => {
                        // each interior face is recorded once, from its lower cell
                        if matches!(side, Side::Right | Side::Top) {
                            interior_faces.push(InteriorFace {
                                a: cell,
                                b: other,
                                length,
                                distance: 2.0 * half,
                            });
                        }
                    }
                    None => {
                        let matching: Vec<&BoundaryRule> = spec
                            .boundaries
                            .iter()
                            .filter(|r| r.matches(i, j, side))
                            .collect();
                        let rule = match matching.as_slice() {
                            [rule] => *rule,
                            [] => return Err(MeshError::UnmatchedFace { i, j, side }),
                            many => {
                                return Err(MeshError::AmbiguousFace {
                                    i,
                                    j,
                                    side,
                                    count: many.len(),
                                })
                            }
                        };
                        let bc = BoundaryCondition {
                            kind: rule.kind,
                            value: rule.value,
                        };
                        partition[cell] = match (partition[cell], bc.kind) {
                            (_, BcKind::Dirichlet) | (CellClass::Dirichlet, _) => {
                                CellClass::Dirichlet
                            }
                            _ => CellClass::Neumann,
                        };
                        boundary_faces.push(BoundaryFace {
                            cell,
                            side,
                            length,
                            half_distance: half,
                            bc,
                        });
                    }
                }
            }
        }

        Ok(Self {
            spec,
            cell_ij,
            lattice_to_cell,
            centers,
            interior_faces,
            boundary_faces,
            partition,
        })
    }

    pub fn spec(&self) -> &MeshSpec {
        &self.spec
    }

    /// Number of active cells.
    pub fn n_cells(&self) -> usize {
        self.cell_ij.len()
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn cell_ij(&self, cell: usize) -> (usize, usize) {
        self.cell_ij[cell]
    }

    /// Active cell at lattice position `(i, j)`, if any.
    pub fn cell_at(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.spec.nx || j >= self.spec.ny {
            return None;
        }
        self.lattice_to_cell[j * self.spec.nx + i]
    }

    pub fn interior_faces(&self) -> &[InteriorFace] {
        &self.interior_faces
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary_faces
    }

    pub fn partition(&self) -> &[CellClass] {
        &self.partition
    }

    /// `(N_I, N_N, N_D)`.
    pub fn partition_counts(&self) -> (usize, usize, usize) {
        self.partition
            .iter()
            .fold((0, 0, 0), |(ni, nn, nd), class| match class {
                CellClass::Interior => (ni + 1, nn, nd),
                CellClass::Neumann => (ni, nn + 1, nd),
                CellClass::Dirichlet => (ni, nn, nd + 1),
            })
    }

    pub fn has_dirichlet(&self) -> bool {
        self.boundary_faces
            .iter()
            .any(|f| f.bc.kind == BcKind::Dirichlet)
    }

    /// Cells sharing an interior face with `cell`.
    pub fn neighbors(&self, cell: usize) -> Vec<usize> {
        let (i, j) = self.cell_ij[cell];
        Side::ALL
            .iter()
            .filter_map(|&side| {
                let (di, dj) = side.offset();
                let (ni, nj) = (i as isize + di, j as isize + dj);
                if ni < 0 || nj < 0 {
                    return None;
                }
                self.cell_at(ni as usize, nj as usize)
            })
            .collect()
    }
}

fn count_components(
    nx: usize,
    ny: usize,
    lattice_to_cell: &[Option<usize>],
    cell_ij: &[(usize, usize)],
) -> usize {
    let mut seen = vec![false; cell_ij.len()];
    let mut components = 0;
    let mut stack = Vec::new();
    for start in 0..cell_ij.len() {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(c) = stack.pop() {
            let (i, j) = cell_ij[c];
            for side in Side::ALL {
                let (di, dj) = side.offset();
                let (ni, nj) = (i as isize + di, j as isize + dj);
                if ni < 0 || nj < 0 || ni >= nx as isize || nj >= ny as isize {
                    continue;
                }
                if let Some(other) = lattice_to_cell[nj as usize * nx + ni as usize] {
                    if !seen[other] {
                        seen[other] = true;
                        stack.push(other);
                    }
                }
            }
        }
    }
    components
}

/// Discrete gradient across interior faces: row `f` of face `(a, b)` holds
/// `-1/d` at `a` and `+1/d` at `b`.
pub fn gradient_operator(mesh: &Mesh) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(2 * mesh.interior_faces.len());
    for (f, face) in mesh.interior_faces.iter().enumerate() {
        let w = 1.0 / face.distance;
        triplets.push((f, face.a, -w));
        triplets.push((f, face.b, w));
    }
    SparseMatrix::from_triplets(mesh.interior_faces.len(), mesh.n_cells(), &triplets)
        .expect("face cells are valid indices")
}

/// Rows of the `n × n` identity selected by `indices`.
pub fn observation_matrix(indices: &[usize], n: usize) -> Result<SparseMatrix, MeshError> {
    let mut triplets = Vec::with_capacity(indices.len());
    for (k, &idx) in indices.iter().enumerate() {
        if idx >= n {
            return Err(MeshError::IndexOutOfRange { index: idx, n });
        }
        triplets.push((k, idx, 1.0));
    }
    Ok(SparseMatrix::from_triplets(indices.len(), n, &triplets).expect("indices checked"))
}

/// Point measurements at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl ObservationSet {
    pub fn new(indices: Vec<usize>, values: Vec<f64>, n_cells: usize) -> Result<Self, MeshError> {
        if indices.len() != values.len() {
            return Err(MeshError::LengthMismatch {
                indices: indices.len(),
                values: values.len(),
            });
        }
        let mut seen = HashSet::with_capacity(indices.len());
        for (&idx, &v) in indices.iter().zip(&values) {
            if idx >= n_cells {
                return Err(MeshError::IndexOutOfRange {
                    index: idx,
                    n: n_cells,
                });
            }
            if !seen.insert(idx) {
                return Err(MeshError::DuplicateIndex(idx));
            }
            if !v.is_finite() {
                return Err(MeshError::NonFiniteValue(idx));
            }
        }
        Ok(Self { indices, values })
    }

    /// Observes `field` at `indices`.
    pub fn gather(field: &[f64], indices: Vec<usize>) -> Result<Self, MeshError> {
        let values = indices
            .iter()
            .map(|&i| field.get(i).copied().unwrap_or(f64::NAN))
            .collect();
        Self::new(indices, values, field.len())
    }

    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}
