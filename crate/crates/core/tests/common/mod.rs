#![allow(dead_code, clippy::needless_range_loop)]

use cklemap::ckle::{build_basis, CkleBasis, Truncation};
use cklemap::gpr::matern52;
use cklemap::gpr::{condition, fit_hyperparameters, FitOptions, GpPosterior, KernelParams};
use cklemap::mesh::{BcKind, BoundaryRule, Mesh, MeshSpec, Side};
use cklemap::sparsechol::{CholeskyFactor, SparseMatrix};
use cklemap::synth::{generate_dataset, Dataset, SynthSpec, WellPolicy};
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random sparse symmetric, strictly diagonally dominant matrix.
pub fn random_spd(n: usize, density: f64, rng: &mut impl Rng) -> SparseMatrix {
    let mut trips = Vec::new();
    let mut diag = vec![1.0; n];
    for j in 0..n {
        for i in j + 1..n {
            if rng.random::<f64>() < density {
                let v: f64 = rng.random_range(-1.0..1.0);
                trips.push((i, j, v));
                trips.push((j, i, v));
                diag[i] += v.abs();
                diag[j] += v.abs();
            }
        }
    }
    for (i, d) in diag.into_iter().enumerate() {
        trips.push((i, i, d + rng.random::<f64>()));
    }
    SparseMatrix::from_triplets(n, n, &trips).unwrap()
}

pub fn dense(a: &SparseMatrix) -> Vec<Vec<f64>> {
    let (m, n) = a.shape();
    let mut d = vec![vec![0.0; n]; m];
    for j in 0..n {
        let (rows, vals) = a.col(j);
        for (&i, &v) in rows.iter().zip(vals) {
            d[i][j] = v;
        }
    }
    d
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, &bi)| {
            let mut r = r.clone();
            r.push(bi);
            r
        })
        .collect();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&x, &y| m[x][k].abs().total_cmp(&m[y][k].abs()))
            .unwrap();
        m.swap(k, p);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for j in k..=n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

/// Forward substitution with a dense lower-triangular matrix.
pub fn dense_forward(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|j| l[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

pub fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[k] = 1.0;
    e
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn frobenius(m: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}

pub fn rule(side: Side, kind: BcKind, value: f64) -> BoundaryRule {
    BoundaryRule {
        side,
        range: None,
        kind,
        value,
    }
}

/// Square `n × n` grid over a domain of side `side_len`: unit head drop from
/// left to right, no-flow top and bottom.
pub fn darcy_mesh(n: usize, side_len: f64) -> Mesh {
    let h = side_len / n as f64;
    Mesh::new(MeshSpec::rectangle(
        n,
        n,
        h,
        h,
        vec![
            rule(Side::Left, BcKind::Dirichlet, 1.0),
            rule(Side::Right, BcKind::Dirichlet, 0.0),
            rule(Side::Bottom, BcKind::Neumann, 0.0),
            rule(Side::Top, BcKind::Neumann, 0.0),
        ],
    ))
    .unwrap()
}

pub fn synth_spec(seed: u64, n_u: usize, n_y: usize, length: f64) -> SynthSpec {
    SynthSpec {
        kernel: KernelParams::new(1.0, length, 0.0).unwrap(),
        seed,
        n_y_obs: n_y,
        n_u_obs: n_u,
        well_policy: WellPolicy::AllCells,
        trend: None,
    }
}

/// Dataset, fitted GP posterior and conditional basis for one synthetic problem.
pub struct Problem {
    pub mesh: Mesh,
    pub data: Dataset,
    pub post: GpPosterior,
    pub basis: CkleBasis,
}

pub fn problem(mesh: Mesh, spec: &SynthSpec, trunc: Truncation) -> Problem {
    let data = generate_dataset(&mesh, spec).unwrap();
    let xs: Vec<[f64; 2]> = data
        .obs_y
        .indices()
        .iter()
        .map(|&i| mesh.centers()[i])
        .collect();
    let fit = fit_hyperparameters(&xs, data.obs_y.values(), &FitOptions::default()).unwrap();
    let post = condition(&fit.params, &data.obs_y, &mesh).unwrap();
    let basis = build_basis(&post, trunc).unwrap();
    Problem {
        mesh,
        data,
        post,
        basis,
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

pub fn etree_path(f: &CholeskyFactor, x: usize) -> Vec<usize> {
    let mut path = vec![x];
    let mut j = x;
    while let Some(p) = f.etree()[j] {
        path.push(p);
        j = p;
    }
    path
}

// Directed graph with edges 1→2, 1→3, 2→3, 1→4, 3→4, 3→6, 5→6, 4→7, 6→8,
// 7→8 (1-based), used as the pattern of a lower-triangular matrix.
pub const EDGES: [(usize, usize); 10] = [
    (1, 2),
    (1, 3),
    (2, 3),
    (1, 4),
    (3, 4),
    (3, 6),
    (5, 6),
    (4, 7),
    (6, 8),
    (7, 8),
];

pub fn graph_lower() -> Vec<Vec<f64>> {
    let mut l = vec![vec![0.0; 8]; 8];
    for (i, row) in l.iter_mut().enumerate() {
        row[i] = 2.0 + i as f64 * 0.25;
    }
    for (k, &(from, to)) in EDGES.iter().enumerate() {
        l[to - 1][from - 1] = 0.3 + 0.05 * k as f64;
    }
    l
}

pub fn reachable(from: usize) -> Vec<usize> {
    let mut seen = [false; 9];
    let mut stack = vec![from];
    while let Some(v) = stack.pop() {
        if std::mem::replace(&mut seen[v], true) {
            continue;
        }
        stack.extend(EDGES.iter().filter(|e| e.0 == v).map(|e| e.1));
    }
    (1..=8).filter(|&v| seen[v]).collect()
}

pub fn dense_cov(p: &KernelParams, xs: &[[f64; 2]]) -> Vec<Vec<f64>> {
    xs.iter()
        .map(|a| {
            xs.iter()
                .map(|b| matern52((a[0] - b[0]).hypot(a[1] - b[1]), p))
                .collect()
        })
        .collect()
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut det = 1.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&x, &y| m[x][k].abs().total_cmp(&m[y][k].abs()))
            .unwrap();
        if p != k {
            m.swap(k, p);
            det = -det;
        }
        det *= m[k][k];
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    det
}

pub fn brute_nlml(p: &KernelParams, xs: &[[f64; 2]], ys: &[f64]) -> f64 {
    let c = dense_cov(p, xs);
    let n = ys.len();
    let mut inv = vec![vec![0.0; n]; n];
    for k in 0..n {
        let col = dense_solve(&c, &unit(n, k));
        for i in 0..n {
            inv[i][k] = col[i];
        }
    }
    let quad: f64 = (0..n)
        .map(|i| (0..n).map(|j| ys[i] * inv[i][j] * ys[j]).sum::<f64>())
        .sum();
    0.5 * quad + 0.5 * determinant(&c).ln() + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

pub fn random_points(n: usize, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect()
}
