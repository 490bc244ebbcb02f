#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use subalign::alm_solver::{AlmConfig, AlmState};
use subalign::data_model::{make_synthetic_pair, Dataset, DomainPair, Matrix, SubDomainIndex};
use subalign::mmd_matrices::{MmdOperator, MmdOptions};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Labels in `1..=c`, each class present at least once (needs `n >= c`).
pub fn covering_labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<usize> {
    assert!(n >= c);
    let mut y: Vec<usize> = (1..=c).collect();
    y.extend((c..n).map(|_| rng.random_range(1..=c)));
    y
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=c)).collect()
}

/// Unstructured Gaussian pair with source labels covering every class.
pub fn random_pair(rng: &mut ChaCha8Rng, m: usize, ns: usize, nt: usize, c: usize) -> DomainPair {
    let ys = covering_labels(rng, ns, c);
    let s = Dataset::new(gauss(rng, m, ns), Some(ys)).unwrap();
    let t = Dataset::unlabeled(gauss(rng, m, nt)).unwrap();
    DomainPair::new(s, t).unwrap()
}

pub fn operator(pair: &DomainPair, pseudo: &[usize]) -> MmdOperator {
    let idx = SubDomainIndex::from_labels(pair.source_labels(), pseudo, pair.class_count).unwrap();
    MmdOperator::from_index(&idx, MmdOptions::default()).unwrap()
}

/// A state with every block filled with Gaussian noise.
pub fn random_state(rng: &mut ChaCha8Rng, pair: &DomainPair, k: usize) -> AlmState {
    let (m, ns, nt) = (pair.source.dim(), pair.ns(), pair.nt());
    let pseudo = covering_labels(rng, nt, pair.class_count.min(nt));
    let mu = rng.random_range(0.2..3.0);
    let mut s = AlmState::zeros(m, k, ns, nt, mu, operator(pair, &pseudo));
    s.a = gauss(rng, m, k);
    s.z = gauss(rng, ns, nt);
    s.z_l = gauss(rng, ns, nt);
    s.z_s = gauss(rng, ns, nt);
    s.e = gauss(rng, k, nt);
    s.y1 = gauss(rng, k, nt);
    s.y2 = gauss(rng, ns, nt);
    s.y3 = gauss(rng, ns, nt);
    s
}

/// The toy pairs of the convergence suite: small rotated-blob pairs with
/// `n <= 60` and `m = 20`.
pub fn toy_pairs(count: usize) -> Vec<(String, DomainPair)> {
    let mut r = rng(2024);
    (0..count as u64)
        .map(|i| {
            let c = r.random_range(2..=3usize);
            let npc = r.random_range(3..=30 / c);
            let rot = r.random_range(0.0..60.0);
            let sd = r.random_range(0.1..0.5);
            let name = format!("seed={} C={c} n_per_class={npc} rotation={rot:.1} noise={sd:.2}", 1000 + i);
            (name, make_synthetic_pair(1000 + i, npc, c, rot, sd).unwrap())
        })
        .collect()
}

pub fn alm_defaults(k_final: usize) -> AlmConfig {
    AlmConfig {
        k_final,
        ..AlmConfig::default()
    }
}

pub fn rel_close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()) + 1e-300
}
