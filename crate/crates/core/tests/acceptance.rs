mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use cklemap::bench::{run_scaling, summarize, BenchConfig, Experiment};
use cklemap::ckle::{build_basis, build_basis_from, eigendecompose, Truncation};
use cklemap::fvtpfa::{assemble, face_transmissibility, solve_forward};
use cklemap::gpr::{condition, neg_log_marginal_likelihood, FitOptions, KernelParams};
use cklemap::inverse::*;
use cklemap::mesh::{BcKind, Mesh, MeshSpec, ObservationSet, Side};
use cklemap::pipeline::{self, Config, InvertOptions};
use cklemap::sparsechol::*;
use common::*;
use faer::Mat;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(started: Instant, limit: Duration) -> Result<String, String> {
    let t = started.elapsed();
    check(
        t < limit,
        format!(
            "runtime {:.1}s exceeds {:.0}s",
            t.as_secs_f64(),
            limit.as_secs_f64()
        ),
    )?;
    Ok(format!("{:.1}s", t.as_secs_f64()))
}

fn experiment_problem(seed: u64, n: usize, trunc: Truncation) -> Problem {
    problem(
        darcy_mesh(n, 100.0),
        &synth_spec(seed, (n * n) / 4, 50, 20.0),
        trunc,
    )
}

fn run(cfg: &InverseConfig, p: &Problem, basis: &cklemap::ckle::CkleBasis) -> InversionReport {
    invert(
        cfg,
        &p.mesh,
        &basis.mean,
        Some(basis),
        &p.data.obs_u,
        &p.data.obs_y,
        Some(&p.data.y_ref),
    )
    .unwrap()
}

fn max_fd_error(jac: &Mat<f64>, x: &[f64], mut res: impl FnMut(&[f64]) -> Vec<f64>) -> f64 {
    let mut scale: f64 = 0.0;
    for j in 0..jac.ncols() {
        for i in 0..jac.nrows() {
            scale = scale.max(jac[(i, j)].abs());
        }
    }
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        let h = 1e-6 * x[k].abs().max(1.0);
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[k] += h;
        xm[k] -= h;
        let (fp, fm) = (res(&xp), res(&xm));
        for i in 0..fp.len() {
            worst = worst.max(((fp[i] - fm[i]) / (2.0 * h) - jac[(i, k)]).abs() / scale);
        }
    }
    worst
}

fn jacobian_correctness() -> Outcome {
    let t0 = Instant::now();
    let p = problem(
        darcy_mesh(8, 100.0),
        &synth_spec(1, 10, 5, 20.0),
        Truncation::Count(20),
    );
    let mut rng = rng(2);
    let xi: Vec<f64> = (0..20).map(|_| rng.random_range(-0.5..0.5)).collect();
    let y = p.basis.expand(&xi).unwrap();
    let mut worst: f64 = 0.0;
    for path in [SolvePath::Accelerated, SolvePath::Naive] {
        let model = || {
            ForwardModel::new(
                &p.mesh,
                p.data.obs_u.clone(),
                p.data.obs_y.clone(),
                1e-6,
                path,
            )
            .unwrap()
        };
        let mut ck = CklemapProblem::new(model(), &p.basis).unwrap();
        let j = ck.jacobian(&xi).unwrap();
        worst = worst.max(max_fd_error(&j, &xi, |x| ck.residual(x).unwrap()));
        let mut map = MapProblem::new(model());
        let j = map.jacobian(&y).unwrap();
        worst = worst.max(max_fd_error(&j, &y, |x| map.residual(x).unwrap()));
    }
    check(worst <= 1e-5, format!("max relative FD error {worst:.2e}"))?;
    Ok(format!(
        "max relative FD error {worst:.2e}, {}",
        within(t0, Duration::from_secs(10))?
    ))
}

fn accelerated_equivalence() -> Outcome {
    let t0 = Instant::now();
    let p = experiment_problem(
        1,
        32,
        Truncation::Capped {
            rtol: 1e-8,
            max_modes: 1000,
        },
    );
    let solve = |method| {
        run(
            &InverseConfig {
                method,
                ..Default::default()
            },
            &p,
            &p.basis,
        )
    };
    let naive = solve(Method::Cklemap);
    let accel = solve(Method::CklemapAccel);
    let diff = max_abs_diff(&naive.y_hat, &accel.y_hat);
    check(diff <= 1e-8, format!("y_hat differs by {diff:.2e}"))?;
    check(
        naive.iterations == accel.iterations,
        format!("iterations {} vs {}", naive.iterations, accel.iterations),
    )?;
    Ok(format!(
        "N_y = {}, |dy|_inf = {diff:.1e}, {} iterations, {}",
        p.basis.n_modes(),
        accel.iterations,
        within(t0, Duration::from_secs(60))?
    ))
}

fn closure_oracle() -> Outcome {
    let mut rng = rng(3);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.random_range(2..=128);
        let a = random_spd(n, rng.random_range(0.01..0.1), &mut rng);
        let f = factorize(&a, &Ordering::Natural).unwrap();
        let l = dense(f.l());
        for x in 0..n {
            let closure = find_sparsity(&f, x);
            check(
                closure.indices() == &etree_path(&f, x)[..],
                format!("trial {trial}: closure of {x} is not the etree path"),
            )?;
            let z = partial_forward_solve(&f, x);
            worst = worst.max(max_abs_diff(&z.to_dense(), &dense_forward(&l, &unit(n, x))));
        }
        let k = rng.random_range(1..=n.min(8));
        let mut obs = rand::seq::index::sample(&mut rng, n, k).into_vec();
        obs.sort_unstable();
        let w = solve_columns(&f, &obs);
        let ad = dense(&a);
        for (c, &o) in obs.iter().enumerate() {
            let col: Vec<f64> = (0..n).map(|i| w[(i, c)]).collect();
            worst = worst.max(max_abs_diff(&col, &dense_solve(&ad, &unit(n, o))));
        }
    }
    check(
        worst <= 1e-10,
        format!("max deviation from dense oracle {worst:.2e}"),
    )?;

    check(
        reachable(3) == [3, 4, 6, 7, 8],
        "graph reachability of node 3",
    )?;
    let l = graph_lower();
    let mut trips = Vec::new();
    for i in 0..8 {
        for j in 0..8 {
            let v: f64 = (0..8).map(|k| l[i][k] * l[j][k]).sum();
            if v != 0.0 {
                trips.push((i, j, v));
            }
        }
    }
    let f = factorize(
        &SparseMatrix::from_triplets(8, 8, &trips).unwrap(),
        &Ordering::Natural,
    )
    .unwrap();
    let closure: Vec<usize> = find_sparsity(&f, 2)
        .indices()
        .iter()
        .map(|i| i + 1)
        .collect();
    check(
        closure == [3, 4, 6, 7, 8],
        format!("closure of node 3 is {closure:?}"),
    )?;
    Ok(format!(
        "max deviation {worst:.1e}, closure of node 3 = {closure:?}"
    ))
}

fn forward_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for (n, h) in [(5, 1.0), (17, 0.3), (64, 2.5)] {
        let mesh = Mesh::new(MeshSpec::rectangle(
            n,
            1,
            h,
            h,
            vec![
                rule(Side::Left, BcKind::Dirichlet, 1.0),
                rule(Side::Right, BcKind::Dirichlet, 0.0),
                rule(Side::Bottom, BcKind::Neumann, 0.0),
                rule(Side::Top, BcKind::Neumann, 0.0),
            ],
        ))
        .unwrap();
        let u = solve_forward(&assemble(&mesh, &vec![0.0; n]).unwrap()).unwrap();
        for (i, ui) in u.iter().enumerate() {
            worst = worst.max((ui - (1.0 - (i as f64 + 0.5) / n as f64)).abs());
        }
    }
    check(worst <= 1e-12, format!("strip error {worst:.2e}"))?;
    let t = face_transmissibility(1f64.ln(), 3f64.ln(), 1.0, 1.0).unwrap();
    check(t == 1.5, format!("harmonic mean {t}"))?;
    Ok(format!("strip error {worst:.1e}, T(1, 3) = {t}"))
}

fn gpr_contracts() -> Outcome {
    let mesh = darcy_mesh(16, 100.0);
    let mut rng = rng(5);
    let p = KernelParams::new(1.0, 20.0, 1e-12).unwrap();
    let mut idx = rand::seq::index::sample(&mut rng, 256, 30).into_vec();
    idx.sort_unstable();
    let vals: Vec<f64> = idx.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
    let post = condition(
        &p,
        &ObservationSet::new(idx.clone(), vals.clone(), 256).unwrap(),
        &mesh,
    )
    .unwrap();
    let interp = idx
        .iter()
        .zip(&vals)
        .map(|(&i, v)| (post.mean[i] - v).abs())
        .fold(0.0, f64::max);
    check(interp <= 1e-6, format!("interpolation error {interp:.2e}"))?;
    let prior = p.sigma * p.sigma + p.nugget;
    let excess = (0..256)
        .map(|i| post.cov[(i, i)] - prior)
        .fold(f64::NEG_INFINITY, f64::max);
    check(
        excess <= 1e-10,
        format!("posterior variance exceeds prior by {excess:.2e}"),
    )?;

    let mut nlml_err: f64 = 0.0;
    for _ in 0..5 {
        let xs = random_points(10, &mut rng);
        let ys: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q = KernelParams::new(rng.random_range(0.5..2.0), rng.random_range(0.1..0.5), 1e-6)
            .unwrap();
        let oracle = brute_nlml(&q, &xs, &ys);
        nlml_err = nlml_err.max(
            (neg_log_marginal_likelihood(&q, &xs, &ys) - oracle).abs() / oracle.abs().max(1.0),
        );
    }
    check(nlml_err <= 1e-8, format!("NLML error {nlml_err:.2e}"))?;
    Ok(format!(
        "interpolation {interp:.1e}, variance excess {excess:.1e}, NLML error {nlml_err:.1e}"
    ))
}

fn ckle_truncation() -> Outcome {
    let t0 = Instant::now();
    let p = experiment_problem(1, 32, Truncation::Count(1));
    let pairs = eigendecompose(&p.post.cov).unwrap();
    let mut worst_tail: f64 = 0.0;
    for rtol in [1e-2, 1e-4, 1e-8] {
        let b = build_basis(&p.post, Truncation::Rtol(rtol)).unwrap();
        check(
            b.rtol_achieved <= rtol,
            format!("rtol achieved {} > {rtol}", b.rtol_achieved),
        )?;
        let tail = pairs.lambdas[b.n_modes()..]
            .iter()
            .map(|l| l * l)
            .sum::<f64>()
            .sqrt();
        let resid = frobenius(&(&b.psi * b.psi.transpose() - &p.post.cov));
        worst_tail = worst_tail.max((resid - tail).abs());
    }
    check(
        worst_tail <= 1e-8,
        format!("tail energy mismatch {worst_tail:.2e}"),
    )?;

    let counts = [25, 50, 100, 200];
    let mut errs = vec![Vec::new(); counts.len()];
    for seed in 1..=5 {
        let p = experiment_problem(seed, 32, Truncation::Count(1));
        for (k, &ny) in counts.iter().enumerate() {
            let basis = build_basis_from(&p.post.mean, &p.post.cov, Truncation::Count(ny)).unwrap();
            let cfg = InverseConfig {
                method: Method::CklemapAccel,
                ..Default::default()
            };
            errs[k].push(run(&cfg, &p, &basis).rel_l2_error.unwrap());
        }
    }
    let medians: Vec<f64> = errs.iter().map(|e| median(e)).collect();
    let shown = medians
        .iter()
        .map(|m| format!("{m:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        medians.windows(2).all(|w| w[1] <= w[0]),
        format!("median eps2 over N_y {counts:?}: {shown}"),
    )?;
    Ok(format!(
        "tail mismatch {worst_tail:.1e}, median eps2 over N_y {counts:?}: {shown}, {}",
        within(t0, Duration::from_secs(600))?
    ))
}

fn parity() -> Outcome {
    let t0 = Instant::now();
    let (mut map, mut ck) = (Vec::new(), Vec::new());
    for seed in 1..=5 {
        let p = experiment_problem(
            seed,
            32,
            Truncation::Capped {
                rtol: 1e-8,
                max_modes: 1000,
            },
        );
        for (method, out) in [(Method::Map, &mut map), (Method::CklemapAccel, &mut ck)] {
            out.push(
                run(
                    &InverseConfig {
                        method,
                        ..Default::default()
                    },
                    &p,
                    &p.basis,
                )
                .rel_l2_error
                .unwrap(),
            );
        }
    }
    let (m, c) = (median(&map), median(&ck));
    let rel = (c - m).abs() / m;
    check(
        rel <= 0.2,
        format!("median eps2 CKLEMAP {c:.4} vs MAP {m:.4}"),
    )?;
    Ok(format!(
        "median eps2 CKLEMAP {c:.4}, MAP {m:.4} ({:.1}% apart), {}",
        100.0 * rel,
        within(t0, Duration::from_secs(900))?
    ))
}

fn scaling_trend() -> Outcome {
    let t0 = Instant::now();
    let exp = Experiment {
        mesh: darcy_mesh(16, 100.0).spec().clone(),
        synth: synth_spec(1, 200, 50, 20.0),
        gp: FitOptions::default(),
        truncation: Truncation::Capped {
            rtol: 1e-8,
            max_modes: 1000,
        },
        inverse: InverseConfig::default(),
    };
    let table = run_scaling(
        &exp,
        &BenchConfig {
            levels: 3,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    check(
        table.errors.is_empty(),
        format!("bench errors: {:?}", table.errors),
    )?;
    let fit = summarize(&table);
    let exponent = |m: Method| {
        fit.methods[m.name()]
            .s
            .ok_or(format!("no fit for {}", m.name()))
    };
    let (s_map, s_ck, s_acc) = (
        exponent(Method::Map)?,
        exponent(Method::Cklemap)?,
        exponent(Method::CklemapAccel)?,
    );
    let time_at = |m: Method| {
        table
            .rows
            .iter()
            .find(|r| r.method == m && r.n == 4096)
            .and_then(|r| r.time_s)
            .ok_or(format!("no 64x64 time for {}", m.name()))
    };
    let (t_map, t_ck, t_acc) = (
        time_at(Method::Map)?,
        time_at(Method::Cklemap)?,
        time_at(Method::CklemapAccel)?,
    );
    let summary = format!(
        "exponents MAP {s_map:.2}, CKLEMAP {s_ck:.2}, CKLEMAP-accel {s_acc:.2} (reference values 2.91, 1.33, 1.35); \
         64x64 times MAP {t_map:.2}s, CKLEMAP {t_ck:.2}s, CKLEMAP-accel {t_acc:.2}s"
    );
    check(s_ck < s_map && s_acc < s_map, summary.clone())?;
    check(t_ck < t_map && t_acc < t_map, summary.clone())?;
    Ok(format!(
        "{summary}, {}",
        within(t0, Duration::from_secs(1800))?
    ))
}

const CONFIG: &str = r#"{
  "mesh": {
    "nx": 16, "ny": 16, "dx": 6.25, "dy": 6.25,
    "boundaries": [
      {"side": "left", "kind": "dirichlet", "value": 1.0},
      {"side": "right", "kind": "dirichlet", "value": 0.0},
      {"side": "bottom", "kind": "neumann", "value": 0.0},
      {"side": "top", "kind": "neumann", "value": 0.0}
    ]
  },
  "synth": {
    "kernel": {"sigma": 1.0, "length": 20.0, "nugget": 0.0},
    "seed": 7, "n_y_obs": 20, "n_u_obs": 64, "well_policy": "all_cells"
  },
  "inverse": {"method": "cklemap-accel", "gamma": 1e-6}
}"#;

fn determinism() -> Outcome {
    let cfg = Config::parse(CONFIG).map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let data = tmp.path().join("data");
        let map = tmp.path().join("map");
        let e = |e: pipeline::PipelineError| e.to_string();
        pipeline::cmd_generate(&cfg, &data).map_err(e)?;
        pipeline::cmd_fit_gp(&cfg, &data, &data).map_err(e)?;
        pipeline::cmd_build_basis(&cfg, &data, &data).map_err(e)?;
        pipeline::cmd_invert(&cfg, &data, &data, InvertOptions::default()).map_err(e)?;
        let mut map_cfg = cfg.clone();
        map_cfg.inverse.method = Method::Map;
        pipeline::cmd_invert(&map_cfg, &data, &map, InvertOptions::default()).map_err(e)?;
        let mut files = Vec::new();
        for dir in [&data, &map] {
            for name in ["manifest.json", "report.json", "y_hat.txt", "u_hat.txt"] {
                files.push(std::fs::read(dir.join(name)).map_err(|e| e.to_string())?);
            }
        }
        runs.push(files);
    }
    check(
        runs[0] == runs[1],
        "reruns produced different manifests or reports",
    )?;
    Ok(format!(
        "{} files byte-identical across reruns",
        runs[0].len()
    ))
}

#[test]
fn acceptance_criteria() {
    faer::set_global_parallelism(faer::Par::Seq);
    let criteria: [Criterion; 9] = [
        ("Jacobian correctness", jacobian_correctness),
        ("accelerated-path equivalence", accelerated_equivalence),
        ("closure and partial-solve oracle", closure_oracle),
        ("forward-solver exactness", forward_exactness),
        ("GPR contracts", gpr_contracts),
        ("CKLE truncation", ckle_truncation),
        ("MAP/CKLEMAP parity", parity),
        ("scaling trend", scaling_trend),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let line = match &outcome {
            Ok(detail) => format!("PASS criterion {} ({name}): {detail}", k + 1),
            Err(detail) => {
                failed.push(k + 1);
                format!("FAIL criterion {} ({name}): {detail}", k + 1)
            }
        };
        // Bypasses the test harness capture so the line always shows.
        let _ = writeln!(std::io::stderr(), "{line}");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
