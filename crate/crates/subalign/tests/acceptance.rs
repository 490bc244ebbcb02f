//! Acceptance suite. Prints one PASS/FAIL/SKIPPED line per criterion and
//! exits non-zero if any criterion fails.
//!
//! The COIL criterion reads `COIL1` and `COIL2` feature files (`.csv` with a
//! `label` column, or `.sdam`) from the directory named by
//! `SUBALIGN_COIL_DIR`. Without it that criterion is skipped.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;

use common::*;
use subalign::alm_solver::run_algorithm_1b;
use subalign::data_model::{load_dataset, make_synthetic_pair, Format, Matrix, NormalizeMode, SubDomainIndex};
use subalign::linalg_kernels::{nuclear_norm, numerical_rank_psd, shrink, svt};
use subalign::mmd_matrices::{assemble_mmd, mmd_distance_oracle, MmdOptions};
use subalign::pipeline_cli::{run_baseline_nn, run_benchmark_suite, run_rsa_cdda, strip_timing, zero_gap_pair};
use subalign::subspace_init::{run_rayleigh_loop, scatter_matrix};
use subalign::{AdaptationConfig, DomainPair};

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

type Check = std::result::Result<String, String>;

fn within(budget: Duration, start: Instant, detail: String) -> Check {
    let took = start.elapsed();
    if took <= budget {
        Ok(format!("{detail}; {:.2}s", took.as_secs_f64()))
    } else {
        Err(format!("{detail}; took {:.2}s, budget {}s", took.as_secs_f64(), budget.as_secs()))
    }
}

fn trace_form(a: &Matrix, x: &Matrix, m: &Matrix) -> f64 {
    let ax = a.transpose() * x;
    (&ax * m * ax.transpose()).trace()
}

fn mmd_trace_identity() -> Check {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let c = r.random_range(1..=3usize);
        let m = r.random_range(1..=6usize);
        let ns = r.random_range(c..=12);
        let nt = r.random_range(1..=12usize);
        let k = r.random_range(1..=3usize);
        let pair = random_pair(&mut r, m, ns, nt, c);
        let pseudo = random_labels(&mut r, nt, c);
        let a = gauss(&mut r, m, k);
        let set = assemble_mmd(&SubDomainIndex::from_labels(pair.source_labels(), &pseudo, c).unwrap());
        let x = pair.joint_features();
        let oracle = mmd_distance_oracle(&pair, &pseudo, &a).map_err(|e| e.to_string())?;
        let conditional: f64 = set.mc.iter().flatten().map(|mc| trace_form(&a, &x, mc)).sum();
        let pairs = [
            ("marginal", trace_form(&a, &x, &set.m0), oracle.marginal),
            ("conditional", conditional, oracle.conditional),
            ("repulsive", trace_form(&a, &x, &set.m_rep), oracle.repulsive),
        ];
        for (name, got, want) in pairs {
            let rel = (got - want).abs() / want.abs().max(got.abs()).max(f64::MIN_POSITIVE);
            worst = worst.max(if got == want { 0.0 } else { rel });
            if !rel_close(got, want, 1e-10) {
                return Err(format!("case {case} {name}: trace form {got:e} vs oracle {want:e}"));
            }
        }
    }
    within(Duration::from_secs(10), start, format!("200 instances, worst relative error {worst:.1e}"))
}

fn perturbation_gap(rng: &mut rand_chacha::ChaCha8Rng, out: &Matrix, objective: &dyn Fn(&Matrix) -> f64) -> f64 {
    let base = objective(out);
    let mut best_improvement = f64::NEG_INFINITY;
    for i in 0..100 {
        let scale = [1e-1, 1e-3, 1e-6][i % 3];
        let mut d = gauss(rng, out.nrows(), out.ncols()) * scale;
        if i % 4 == 0 {
            // sparse perturbations probe the kinks of the l1 objective
            d.iter_mut().for_each(|v| {
                if rng.random_bool(0.7) {
                    *v = 0.0
                }
            });
        }
        best_improvement = best_improvement.max(base - objective(&(out + d)));
    }
    best_improvement
}

fn proximal_operators() -> Check {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst = f64::NEG_INFINITY;
    for case in 0..50 {
        let (rows, cols) = (r.random_range(1..=8usize), r.random_range(1..=8usize));
        let m = gauss(&mut r, rows, cols) * r.random_range(0.5..3.0);
        let tau = r.random_range(0.0..2.0);
        let fro = |x: &Matrix| 0.5 * (x - &m).norm_squared();
        let svt_obj = |x: &Matrix| tau * nuclear_norm(x) + fro(x);
        let shrink_obj = |x: &Matrix| tau * x.iter().map(|v| v.abs()).sum::<f64>() + fro(x);
        let s = svt(&m, tau).map_err(|e| e.to_string())?;
        let h = shrink(&m, tau).map_err(|e| e.to_string())?;
        let gap_s = perturbation_gap(&mut r, &s, &svt_obj);
        let gap_h = perturbation_gap(&mut r, &h, &shrink_obj);
        worst = worst.max(gap_s).max(gap_h);
        if gap_s > 1e-12 || gap_h > 1e-12 {
            return Err(format!("case {case}: improvement svt {gap_s:e}, shrink {gap_h:e}"));
        }
    }
    within(Duration::from_secs(10), start, format!("50 matrices x 100 perturbations, largest improvement {worst:.1e}"))
}

/// Central differences of `f` over every entry of `at`.
fn fd_gradient(at: &Matrix, f: &dyn Fn(&Matrix) -> f64) -> Matrix {
    let h = 1e-5;
    let mut g = Matrix::zeros(at.nrows(), at.ncols());
    for i in 0..at.nrows() {
        for j in 0..at.ncols() {
            let mut p = at.clone();
            p[(i, j)] += h;
            let mut q = at.clone();
            q[(i, j)] -= h;
            g[(i, j)] = (f(&p) - f(&q)) / (2.0 * h);
        }
    }
    g
}

fn stationarity() -> Check {
    use subalign::alm_solver::{energy, update_a, update_z};
    let start = Instant::now();
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let c = r.random_range(1..=3usize);
        let m = r.random_range(2..=6usize);
        let (ns, nt) = (r.random_range(c.max(2)..=8), r.random_range(2..=8usize));
        let k = r.random_range(1..=m.min(3));
        let pair = random_pair(&mut r, m, ns, nt, c);
        let (xs, xt) = (pair.source.features().clone(), pair.target.features().clone());
        let cfg = alm_defaults(k);
        let state = random_state(&mut r, &pair, k);

        let energy_at_a = |a: &Matrix| {
            let mut s = state.clone();
            s.a = a.clone();
            energy(&s, &xs, &xt, &cfg)
        };
        let before = fd_gradient(&state.a, &energy_at_a).norm();
        let a_star = update_a(&state, &xs, &xt, cfg.ridge()).map_err(|e| e.to_string())?;
        let rel_a = fd_gradient(&a_star, &energy_at_a).norm() / before;

        let mut s = state.clone();
        s.a = a_star;
        let energy_at_z = |z: &Matrix| {
            let mut t = s.clone();
            t.z = z.clone();
            energy(&t, &xs, &xt, &cfg)
        };
        let before = fd_gradient(&s.z, &energy_at_z).norm();
        let z_star = update_z(&s, &xs, &xt);
        let rel_z = fd_gradient(&z_star, &energy_at_z).norm() / before;
        worst = worst.max(rel_a).max(rel_z);
        if rel_a >= 1e-5 || rel_z >= 1e-5 {
            return Err(format!("case {case}: relative gradient A {rel_a:e}, Z {rel_z:e}"));
        }
    }
    within(Duration::from_secs(30), start, format!("20 instances, worst relative gradient {worst:.1e}"))
}

fn alm_convergence() -> Check {
    let start = Instant::now();
    let mut iterations = Vec::new();
    for (name, pair) in toy_pairs(10) {
        let x = pair.joint_features();
        if x.ncols() > 60 || x.nrows() > 20 {
            return Err(format!("{name}: toy pair exceeds n <= 60, m <= 20"));
        }
        let k = 10.min(numerical_rank_psd(&scatter_matrix(&x)));
        let init = run_rayleigh_loop(&pair, k, 0.1, 10, MmdOptions::default()).map_err(|e| format!("{name}: {e}"))?;
        let cfg = alm_defaults(k);
        let (_, trace) =
            run_algorithm_1b(&pair, &init.m_rsa, &init.pseudo_labels, &cfg).map_err(|e| format!("{name}: {e}"))?;
        let last = trace.last().ok_or(format!("{name}: empty trace"))?;
        if !trace.rows.iter().all(|row| row.max_residual().is_finite() && row.energy.is_finite()) {
            return Err(format!("{name}: non-finite trajectory"));
        }
        if trace.rows.iter().any(|row| row.mu > 1e8) {
            return Err(format!("{name}: mu exceeded 1e8"));
        }
        if !(last.r1 < 1e-7 && last.r2 < 1e-7 && last.r3 < 1e-7) || trace.rows.len() > 1000 {
            return Err(format!(
                "{name}: after {} iterations residuals ({:e}, {:e}, {:e})",
                trace.rows.len(),
                last.r1,
                last.r2,
                last.r3
            ));
        }
        iterations.push(trace.rows.len());
    }
    within(Duration::from_secs(120), start, format!("10 toy pairs, iterations {iterations:?}"))
}

fn zero_gap() -> Check {
    let mut details = Vec::new();
    let mut r = rng(5);
    let synthetic = make_synthetic_pair(7, 30, 3, 30.0, 0.3).unwrap().source;
    let gaussian = random_pair(&mut r, 8, 40, 1, 3).source;
    for (name, d) in [("synthetic", synthetic), ("gaussian", gaussian)] {
        let pair = zero_gap_pair(&d).map_err(|e| e.to_string())?;
        let report = run_rsa_cdda(&pair, &AdaptationConfig::default()).map_err(|e| format!("{name}: {e}"))?;
        match report.accuracy {
            Some(1.0) => details.push(format!("{name} 1.0")),
            other => return Err(format!("{name}: accuracy {other:?}")),
        }
    }
    Ok(details.join(", "))
}

/// Recorded on the first validated run.
const SYNTHETIC_NN_ACCURACY: f64 = 0.895;
const SYNTHETIC_RSA_ACCURACY: f64 = 0.995;

fn synthetic_gain() -> Check {
    let start = Instant::now();
    let pair = make_synthetic_pair(7, 100, 2, 30.0, 0.3).map_err(|e| e.to_string())?;
    let cfg = AdaptationConfig {
        normalize_mode: NormalizeMode::None,
        ..AdaptationConfig::default()
    };
    let nn = run_baseline_nn(&pair, &cfg).map_err(|e| e.to_string())?;
    let rsa = run_rsa_cdda(&pair, &cfg).map_err(|e| e.to_string())?;
    let truth = pair.target.labels().unwrap();
    let hits = |p: &[usize]| p.iter().zip(truth).filter(|(a, b)| a == b).count();
    let (nn_hits, rsa_hits) = (hits(&nn.predictions), hits(&rsa.predictions));
    // 10 points of nt samples, compared in whole samples
    let needed = truth.len() / 10;
    let (nn_acc, rsa_acc) = (nn.accuracy.unwrap(), rsa.accuracy.unwrap());
    let detail = format!("nn {nn_acc:.3}, rsa-cdda {rsa_acc:.3}, gain {} of {} samples", rsa_hits as i64 - nn_hits as i64, truth.len());
    if rsa_hits < nn_hits + needed {
        return Err(format!("{detail}; need {needed}"));
    }
    if nn_acc != SYNTHETIC_NN_ACCURACY || rsa_acc != SYNTHETIC_RSA_ACCURACY {
        return Err(format!("{detail}; fixtures {SYNTHETIC_NN_ACCURACY} / {SYNTHETIC_RSA_ACCURACY} changed"));
    }
    within(Duration::from_secs(60), start, detail)
}

fn find_coil(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["csv", "sdam"].iter().map(|ext| dir.join(format!("{stem}.{ext}"))).find(|p| p.is_file())
}

fn coil() -> Outcome {
    let Some(dir) = std::env::var_os("SUBALIGN_COIL_DIR").map(PathBuf::from) else {
        return Outcome::Skipped("SUBALIGN_COIL_DIR not set".into());
    };
    let (Some(p1), Some(p2)) = (find_coil(&dir, "COIL1"), find_coil(&dir, "COIL2")) else {
        return Outcome::Skipped(format!("COIL1/COIL2 feature files not found in {}", dir.display()));
    };
    let run = || -> std::result::Result<(f64, f64), String> {
        let load = |p: &Path| load_dataset(p, Format::from_path(p)).map_err(|e| e.to_string());
        let (c1, c2) = (load(&p1)?, load(&p2)?);
        let acc = |s, t| -> std::result::Result<f64, String> {
            let pair = DomainPair::new(s, t).map_err(|e| e.to_string())?;
            let report = run_rsa_cdda(&pair, &AdaptationConfig::default()).map_err(|e| e.to_string())?;
            report.accuracy.ok_or("target labels missing".to_string())
        };
        Ok((acc(c1.clone(), c2.clone())?, acc(c2, c1)?))
    };
    match run() {
        Err(e) => Outcome::Fail(e),
        Ok((a12, a21)) => {
            let detail = format!("COIL1->COIL2 {:.2}% (target 95.42), COIL2->COIL1 {:.2}% (target 95.28)", 100.0 * a12, 100.0 * a21);
            if (100.0 * a12 - 95.42).abs() <= 3.0 && (100.0 * a21 - 95.28).abs() <= 3.0 {
                Outcome::Pass(detail)
            } else {
                Outcome::Fail(detail)
            }
        }
    }
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = dir.path().join("manifest.json");
    let body = serde_json::json!({
        "tasks": [
            {"name": "rot30", "synthetic": {"seed": 7, "n_per_class": 40, "rotation_deg": 30.0},
             "config": {"normalize_mode": "none"}},
            {"name": "rot45_3class", "synthetic": {"seed": 11, "n_per_class": 20, "class_count": 3, "rotation_deg": 45.0}},
        ]
    });
    std::fs::write(&manifest, body.to_string()).map_err(|e| e.to_string())?;
    let run = |name: &str| -> std::result::Result<String, String> {
        let out = dir.path().join(name);
        run_benchmark_suite(&manifest, &out, false).map_err(|e| e.to_string())?;
        std::fs::read_to_string(out.join("summary.csv")).map_err(|e| e.to_string())
    };
    let (first, second) = (strip_timing(&run("a")?), strip_timing(&run("b")?));
    if first == second {
        Ok(format!("{} summary lines identical", first.lines().count()))
    } else {
        Err(format!("summaries differ:\n{first}\n---\n{second}"))
    }
}

fn main() {
    type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);
    let checks: Vec<Criterion> = vec![
        ("1 MMD trace identity", Box::new(|| mmd_trace_identity().into())),
        ("2 proximal operators", Box::new(|| proximal_operators().into())),
        ("3 stationarity", Box::new(|| stationarity().into())),
        ("4 ALM convergence", Box::new(|| alm_convergence().into())),
        ("5 zero-gap sanity", Box::new(|| zero_gap().into())),
        ("6 synthetic adaptation gain", Box::new(|| synthetic_gain().into())),
        ("7 COIL reproduction", Box::new(coil)),
        ("8 benchmark determinism", Box::new(|| determinism().into())),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Outcome::Pass(d) => println!("PASS    {name}: {d}"),
            Outcome::Skipped(d) => println!("SKIPPED {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL    {name}: {d}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

impl From<Check> for Outcome {
    fn from(c: Check) -> Self {
        match c {
            Ok(d) => Outcome::Pass(d),
            Err(d) => Outcome::Fail(d),
        }
    }
}

