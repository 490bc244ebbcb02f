//! PCA embedding and the Rayleigh-quotient loop that produces the initial
//! `M_RSA` and target pseudo-labels.

use serde::{Deserialize, Serialize};

use crate::classify_eval::{accuracy, nn_classify};
use crate::data_model::{index_subdomains, DomainPair, Matrix};
use crate::error::{Error, Result};
use crate::linalg_kernels::{gen_eig_smallest, sym_eigen_ascending, RANK_RTOL};
use crate::mmd_matrices::{MmdOperator, MmdOptions, Skip};
use crate::pipeline_cli::AdaptationConfig;

/// `H = I - (1/n) 11ᵀ`.
pub fn centering_matrix(n: usize) -> Matrix {
    assert!(n >= 1, "centering_matrix needs n >= 1");
    Matrix::identity(n, n) - Matrix::from_element(n, n, 1.0 / n as f64)
}

/// `X H Xᵀ` computed from row-centered data.
pub fn scatter_matrix(x: &Matrix) -> Matrix {
    let mut xc = x.clone();
    let n = x.ncols() as f64;
    for mut row in xc.row_iter_mut() {
        let mean = row.sum() / n;
        row.add_scalar_mut(-mean);
    }
    &xc * xc.transpose()
}

/// Top-`k` eigenvectors of `X H Xᵀ` and the embedding `Z = Aᵀ X`.
pub fn pca_embed(x_all: &Matrix, k: usize) -> Result<(Matrix, Matrix)> {
    let (m, n) = x_all.shape();
    if k == 0 || k > m || k + 1 > n {
        return Err(Error::data(format!("pca k = {k} outside 1..=min(m={m}, n-1={})", n.saturating_sub(1))));
    }
    let (w, v) = sym_eigen_ascending(&scatter_matrix(x_all));
    let top = w[m - 1].max(0.0);
    let rank = w.iter().filter(|&&x| x > RANK_RTOL * top).count();
    if k > rank {
        return Err(Error::data(format!("pca k = {k} exceeds numerical rank {rank} of the data")));
    }
    let cols: Vec<usize> = (0..k).map(|i| m - 1 - i).collect();
    let mut a = v.select_columns(&cols);
    crate::linalg_kernels::fix_signs(&mut a);
    let z = a.transpose() * x_all;
    Ok((a, z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitTraceRow {
    /// 0 is the PCA bootstrap.
    pub iteration: usize,
    pub accuracy: Option<f64>,
    pub skipped_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    pub m_rsa: MmdOperator,
    pub a_mmd: Matrix,
    pub pseudo_labels: Vec<usize>,
    pub per_iteration_trace: Vec<InitTraceRow>,
    pub skipped: Vec<Skip>,
}

fn pseudo_label(pair: &DomainPair, a: &Matrix) -> Result<Vec<usize>> {
    let zs = a.transpose() * pair.source.features();
    let zt = a.transpose() * pair.target.features();
    Ok(nn_classify(&zs, pair.source_labels(), &zt)?.labels)
}

fn score(pair: &DomainPair, pseudo: &[usize]) -> Option<f64> {
    pair.target.labels().and_then(|t| accuracy(pseudo, t).ok())
}

/// The loop with explicit settings; `mmd.repulsion = false` gives the
/// plain joint-distribution iteration.
pub fn run_rayleigh_loop(pair: &DomainPair, k: usize, lambda: f64, iterations: usize, mmd: MmdOptions) -> Result<InitResult> {
    if iterations == 0 {
        return Err(Error::config("iterations_T must be >= 1"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("lambda {lambda} must be >= 0")));
    }
    let x = pair.joint_features();
    let m = x.nrows();
    if k == 0 || k > m {
        return Err(Error::config(format!("k_init = {k} outside 1..={m}")));
    }
    let (a0, _) = pca_embed(&x, k)?;
    let mut pseudo = pseudo_label(pair, &a0)?;
    let mut trace = vec![InitTraceRow {
        iteration: 0,
        accuracy: score(pair, &pseudo),
        skipped_classes: 0,
    }];
    let xhx = scatter_matrix(&x);
    let ridge = Matrix::identity(m, m) * lambda;
    let mut last = None;
    let mut skipped = Vec::new();
    for t in 1..=iterations {
        let idx = index_subdomains(pair, &pseudo)?;
        let op = MmdOperator::from_index(&idx, mmd)?;
        let lhs = op.scatter(&x) + &ridge;
        let eig = gen_eig_smallest(&lhs, &xhx, k, 0.0)?;
        pseudo = pseudo_label(pair, &eig.vectors)?;
        let skipped_classes = op.skipped().iter().filter(|s| s.term == crate::mmd_matrices::MmdTermKind::Conditional).count();
        trace.push(InitTraceRow {
            iteration: t,
            accuracy: score(pair, &pseudo),
            skipped_classes,
        });
        skipped.extend_from_slice(op.skipped());
        last = Some(eig.vectors);
    }
    // final M_RSA reflects the last pseudo-labels
    let idx = index_subdomains(pair, &pseudo)?;
    let m_rsa = MmdOperator::from_index(&idx, mmd)?;
    Ok(InitResult {
        m_rsa,
        a_mmd: last.expect("iterations >= 1"),
        pseudo_labels: pseudo,
        per_iteration_trace: trace,
        skipped,
    })
}

pub fn run_algorithm_1a(pair: &DomainPair, cfg: &AdaptationConfig) -> Result<InitResult> {
    run_rayleigh_loop(
        pair,
        cfg.k_init,
        cfg.lambda,
        cfg.iterations_t,
        MmdOptions {
            repulsion: true,
            normalize: cfg.normalize_mmd,
        },
    )
}
