//! Inexact augmented Lagrange multiplier solver for the joint objective
//!
//! ```text
//! min tr(Aᵀ X M Xᵀ A) + λ‖A‖² + λ1‖E‖₁ + λ2‖Zs‖₁ + ‖Zl‖*
//! s.t. AᵀXt = AᵀXs Z + E,  Zl = Z,  Zs = Z,  Aᵀ X H Xᵀ A = I
//! ```
//!
//! `Z` is `ns x nt` (source coefficients reconstructing each target column)
//! and `E` is `k x nt`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify_eval::nn_classify;
use crate::data_model::{index_subdomains, DomainPair, Matrix};
use crate::error::{Error, Result};
use crate::linalg_kernels::{gen_eig_smallest, shrink, svd, svt_with_norm, sym_eigen_ascending};
use crate::mmd_matrices::MmdOperator;
use crate::subspace_init::scatter_matrix;

/// How step 1 produces `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AStep {
    /// Closed form with a proximal pull toward the previous `A`, followed by
    /// an `XHXᵀ`-orthonormal retraction aligned to the previous `A`.
    #[default]
    Anchored,
    /// The closed form alone, with the orthogonality constraint only as the
    /// linear trace penalty. Starts from all-zero state.
    Penalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmConfig {
    /// Weight of `‖A‖²`; falls back to the Rayleigh stage λ when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_ridge: Option<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu0: f64,
    pub rho: f64,
    pub mu_max: f64,
    pub epsilon: f64,
    pub k_final: usize,
    pub max_iterations: usize,
    /// Pseudo-labels and `M_RSA` are rebuilt every this many iterations.
    pub refresh_every: usize,
    pub a_step: AStep,
}

pub const DEFAULT_LAMBDA: f64 = 0.1;

impl Default for AlmConfig {
    fn default() -> Self {
        AlmConfig {
            lambda_ridge: None,
            lambda1: 1.0,
            lambda2: 0.1,
            mu0: 0.18,
            rho: 1.01,
            mu_max: 1e8,
            epsilon: 1e-7,
            k_final: 10,
            max_iterations: 1000,
            refresh_every: 1,
            a_step: AStep::Anchored,
        }
    }
}

impl AlmConfig {
    pub fn ridge(&self) -> f64 {
        self.lambda_ridge.unwrap_or(DEFAULT_LAMBDA)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_ridge", self.ridge()),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("mu0", self.mu0),
            ("mu_max", self.mu_max),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(format!("alm.{name} must be > 0, got {v}")));
            }
        }
        if !(self.rho > 1.0) || !self.rho.is_finite() {
            return Err(Error::config(format!("alm.rho must be > 1, got {}", self.rho)));
        }
        if self.mu0 > self.mu_max {
            return Err(Error::config("alm.mu0 exceeds alm.mu_max"));
        }
        if self.k_final == 0 || self.max_iterations == 0 || self.refresh_every == 0 {
            return Err(Error::config("alm.k_final, alm.max_iterations and alm.refresh_every must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlmState {
    pub a: Matrix,
    pub z: Matrix,
    pub z_l: Matrix,
    pub z_s: Matrix,
    pub e: Matrix,
    pub y1: Matrix,
    pub y2: Matrix,
    pub y3: Matrix,
    pub mu: f64,
    pub m_rsa: MmdOperator,
    pub iteration: usize,
}

impl AlmState {
    /// All blocks zero, `A` zero of width `k`.
    pub fn zeros(m: usize, k: usize, ns: usize, nt: usize, mu: f64, m_rsa: MmdOperator) -> Self {
        AlmState {
            a: Matrix::zeros(m, k),
            z: Matrix::zeros(ns, nt),
            z_l: Matrix::zeros(ns, nt),
            z_s: Matrix::zeros(ns, nt),
            e: Matrix::zeros(k, nt),
            y1: Matrix::zeros(k, nt),
            y2: Matrix::zeros(ns, nt),
            y3: Matrix::zeros(ns, nt),
            mu,
            m_rsa,
            iteration: 0,
        }
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        let blocks: [(&'static str, &Matrix); 8] = [
            ("A", &self.a),
            ("Z", &self.z),
            ("Z_l", &self.z_l),
            ("Z_s", &self.z_s),
            ("E", &self.e),
            ("Y1", &self.y1),
            ("Y2", &self.y2),
            ("Y3", &self.y3),
        ];
        if !self.mu.is_finite() {
            return Some("mu");
        }
        blocks.iter().find(|(_, m)| m.iter().any(|v| !v.is_finite())).map(|(n, _)| *n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub energy: f64,
    pub mu: f64,
}

impl TraceRow {
    pub fn max_residual(&self) -> f64 {
        self.r1.max(self.r2).max(self.r3)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
}

impl ConvergenceTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,r1,r2,r3,energy,mu\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{},{}\n", r.iteration, r.r1, r.r2, r.r3, r.energy, r.mu));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        f.write_all(self.to_csv().as_bytes()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Data-dependent quantities reused across iterations.
struct Problem<'a> {
    x_s: &'a Matrix,
    x_t: &'a Matrix,
    x: Matrix,
    xhx: Matrix,
}

impl<'a> Problem<'a> {
    fn new(x_s: &'a Matrix, x_t: &'a Matrix) -> Self {
        let (m, ns, nt) = (x_s.nrows(), x_s.ncols(), x_t.ncols());
        let mut x = Matrix::zeros(m, ns + nt);
        x.columns_mut(0, ns).copy_from(x_s);
        x.columns_mut(ns, nt).copy_from(x_t);
        let xhx = scatter_matrix(&x);
        Problem { x_s, x_t, x, xhx }
    }

    /// `AᵀXt - AᵀXs Z - E`.
    fn r1(&self, s: &AlmState) -> Matrix {
        s.a.transpose() * (self.x_t - self.x_s * &s.z) - &s.e
    }
}

fn solve_a(p: &Problem, s: &AlmState, lambda: f64, anchor: Option<&Matrix>) -> Result<Matrix> {
    let m = p.x.nrows();
    let mu = s.mu;
    let pm = p.x_t - p.x_s * &s.z;
    let mut lhs = s.m_rsa.scatter(&p.x) * 2.0 + Matrix::identity(m, m) * (2.0 * lambda) + &p.xhx * mu;
    lhs.gemm(mu, &pm, &pm.transpose(), 1.0);
    let mut rhs = &pm * (&s.e - &s.y1 / mu).transpose() * mu;
    if let Some(prev) = anchor {
        rhs += &p.xhx * prev * mu;
    }
    let lu = lhs.lu();
    lu.solve(&rhs)
        .filter(|a| a.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::numerical("A-update system is singular; increase lambda_ridge"))
}

/// Step 1: `(2XMXᵀ + 2λI + μPPᵀ + μXHXᵀ) A = μ P (E - Y1/μ)ᵀ` with
/// `P = Xt - Xs Z`.
pub fn update_a(state: &AlmState, x_s: &Matrix, x_t: &Matrix, lambda_ridge: f64) -> Result<Matrix> {
    solve_a(&Problem::new(x_s, x_t), state, lambda_ridge, None)
}

fn solve_z(p: &Problem, s: &AlmState) -> Matrix {
    let mu = s.mu;
    let k = s.a.ncols();
    let b = p.x_s.transpose() * &s.a;
    let inner = s.a.transpose() * p.x_t - &s.e + &s.y1 / mu;
    let rhs = &b * inner + &s.z_l + &s.z_s - (&s.y2 + &s.y3) / mu;
    // (BBᵀ + 2I)^-1 = (I - B (2I + BᵀB)^-1 Bᵀ) / 2
    let small = Matrix::identity(k, k) * 2.0 + b.transpose() * &b;
    let corr = small
        .cholesky()
        .expect("2I + BᵀB is positive definite")
        .solve(&(b.transpose() * &rhs));
    (rhs - &b * corr) * 0.5
}

/// Step 3: `(μ XsᵀA AᵀXs + 2μI) Z = μ XsᵀA (AᵀXt - E + Y1/μ) + μ(Zl + Zs) - (Y2 + Y3)`.
pub fn update_z(state: &AlmState, x_s: &Matrix, x_t: &Matrix) -> Matrix {
    solve_z(&Problem::new(x_s, x_t), state)
}

/// Step 4: `svt(Z + Y2/μ, 1/μ)`.
pub fn update_z_l(state: &AlmState) -> Result<Matrix> {
    svt_with_norm(&(&state.z + &state.y2 / state.mu), 1.0 / state.mu).map(|(z, _)| z)
}

/// Step 5: `shrink(Z + Y3/μ, λ2/μ)`.
pub fn update_z_s(state: &AlmState, lambda2: f64) -> Result<Matrix> {
    shrink(&(&state.z + &state.y3 / state.mu), lambda2 / state.mu)
}

/// Step 6: `shrink(AᵀXt - AᵀXs Z + Y1/μ, λ1/μ)`.
pub fn update_e(state: &AlmState, x_s: &Matrix, x_t: &Matrix, lambda1: f64) -> Result<Matrix> {
    let v = state.a.transpose() * (x_t - x_s * &state.z) + &state.y1 / state.mu;
    shrink(&v, lambda1 / state.mu)
}

/// Step 7: dual ascent on the three equality constraints and `μ ← min(ρμ, μ_max)`.
pub fn update_multipliers(state: &AlmState, x_s: &Matrix, x_t: &Matrix, rho: f64, mu_max: f64) -> (Matrix, Matrix, Matrix, f64) {
    let mu = state.mu;
    let r1 = state.a.transpose() * (x_t - x_s * &state.z) - &state.e;
    let y1 = &state.y1 + r1 * mu;
    let y2 = &state.y2 + (&state.z - &state.z_l) * mu;
    let y3 = &state.y3 + (&state.z - &state.z_s) * mu;
    (y1, y2, y3, (rho * mu).min(mu_max))
}

/// `(‖r1‖∞, ‖Z - Zl‖∞, ‖Z - Zs‖∞)`.
pub fn residuals(state: &AlmState, x_s: &Matrix, x_t: &Matrix) -> (f64, f64, f64) {
    let p = Problem::new(x_s, x_t);
    residuals_of(&p, state)
}

fn residuals_of(p: &Problem, s: &AlmState) -> (f64, f64, f64) {
    (p.r1(s).amax(), (&s.z - &s.z_l).amax(), (&s.z - &s.z_s).amax())
}

fn energy_of(p: &Problem, s: &AlmState, cfg: &AlmConfig, nuclear: f64) -> f64 {
    let a = &s.a;
    let k = a.ncols() as f64;
    let r1 = p.r1(s);
    let dl = &s.z - &s.z_l;
    let ds = &s.z - &s.z_s;
    let l1 = |m: &Matrix| m.iter().map(|v| v.abs()).sum::<f64>();
    (a.transpose() * s.m_rsa.scatter(&p.x) * a).trace()
        + cfg.ridge() * a.norm_squared()
        + cfg.lambda1 * l1(&s.e)
        + cfg.lambda2 * l1(&s.z_s)
        + nuclear
        + s.y1.dot(&r1)
        + s.y2.dot(&dl)
        + s.y3.dot(&ds)
        + 0.5 * s.mu * (r1.norm_squared() + dl.norm_squared() + ds.norm_squared())
        + 0.5 * s.mu * ((a.transpose() * &p.xhx * a).trace() - k)
}

/// Augmented Lagrangian value at `state`.
pub fn energy(state: &AlmState, x_s: &Matrix, x_t: &Matrix, cfg: &AlmConfig) -> f64 {
    let p = Problem::new(x_s, x_t);
    let nuclear = crate::linalg_kernels::nuclear_norm(&state.z_l);
    energy_of(&p, state, cfg, nuclear)
}

/// `A (AᵀGA)^-1/2`, then rotated to best match `prev` in the `G` inner
/// product.
fn retract(a: &Matrix, g: &Matrix, prev: &Matrix) -> Result<Matrix> {
    let gram = a.transpose() * g * a;
    let (w, v) = sym_eigen_ascending(&gram);
    let top = w[w.len() - 1];
    if !(w[0] > 1e-14 * top) {
        return Err(Error::numerical("A lost rank in the XHXᵀ metric; reduce k_final"));
    }
    let inv_sqrt = &v * Matrix::from_diagonal(&w.map(|x| 1.0 / x.sqrt())) * v.transpose();
    let a = a * inv_sqrt;
    let cross = svd(&(a.transpose() * g * prev))?;
    Ok(a * (cross.u * cross.v.transpose()))
}

fn embed_labels(pair: &DomainPair, a: &Matrix) -> Result<Vec<usize>> {
    let zs = a.transpose() * pair.source.features();
    let zt = a.transpose() * pair.target.features();
    Ok(nn_classify(&zs, pair.source_labels(), &zt)?.labels)
}

/// Iterates steps 1 to 8 until all residuals fall below `epsilon` or the
/// iteration budget runs out.
pub fn run_algorithm_1b(
    pair: &DomainPair,
    m_rsa_init: &MmdOperator,
    pseudo_init: &[usize],
    cfg: &AlmConfig,
) -> Result<(AlmState, ConvergenceTrace)> {
    cfg.validate()?;
    if pseudo_init.len() != pair.nt() {
        return Err(Error::data("pseudo-label count differs from target size"));
    }
    let (x_s, x_t) = (pair.source.features(), pair.target.features());
    let p = Problem::new(x_s, x_t);
    let (m, ns, nt, k) = (x_s.nrows(), pair.ns(), pair.nt(), cfg.k_final);
    if k > m {
        return Err(Error::config(format!("k_final = {k} exceeds feature dimension {m}")));
    }
    let lambda = cfg.ridge();
    let mut s = AlmState::zeros(m, k, ns, nt, cfg.mu0, m_rsa_init.clone());
    if cfg.a_step == AStep::Anchored {
        let lhs = m_rsa_init.scatter(&p.x) + Matrix::identity(m, m) * lambda;
        s.a = gen_eig_smallest(&lhs, &p.xhx, k, 0.0)?.vectors;
        s.e = s.a.transpose() * x_t;
    }

    let mut trace = ConvergenceTrace::default();
    let fail = |it: usize, what: &str| Error::numerical(format!("iteration {it}: non-finite entries in {what}"));
    for it in 1..=cfg.max_iterations {
        s.iteration = it;
        // step 1
        s.a = match cfg.a_step {
            AStep::Anchored => {
                let raw = solve_a(&p, &s, lambda, Some(&s.a))?;
                retract(&raw, &p.xhx, &s.a)?
            }
            AStep::Penalty => solve_a(&p, &s, lambda, None)?,
        };
        // step 2
        if it % cfg.refresh_every == 0 {
            let pseudo = embed_labels(pair, &s.a)?;
            s.m_rsa = s.m_rsa.rebuild(&index_subdomains(pair, &pseudo)?)?;
        }
        // steps 3 to 6
        s.z = solve_z(&p, &s);
        let (z_l, nuclear) = svt_with_norm(&(&s.z + &s.y2 / s.mu), 1.0 / s.mu)?;
        s.z_l = z_l;
        s.z_s = update_z_s(&s, cfg.lambda2)?;
        s.e = update_e(&s, x_s, x_t, cfg.lambda1)?;
        if let Some(what) = s.first_non_finite() {
            return Err(fail(it, what));
        }
        // step 7
        let (y1, y2, y3, mu) = update_multipliers(&s, x_s, x_t, cfg.rho, cfg.mu_max);
        s.y1 = y1;
        s.y2 = y2;
        s.y3 = y3;
        s.mu = mu;
        // step 8
        let (r1, r2, r3) = residuals_of(&p, &s);
        let row = TraceRow {
            iteration: it,
            r1,
            r2,
            r3,
            energy: energy_of(&p, &s, cfg, nuclear),
            mu: s.mu,
        };
        if let Some(what) = s.first_non_finite() {
            return Err(fail(it, what));
        }
        if !row.energy.is_finite() || !row.max_residual().is_finite() {
            return Err(fail(it, "residuals"));
        }
        trace.rows.push(row);
        if row.max_residual() < cfg.epsilon {
            trace.converged = true;
            break;
        }
    }
    Ok((s, trace))
}
