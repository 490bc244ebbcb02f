//! MMD coefficient matrices over the joint sample set `X = [Xs Xt]`.
//!
//! Every matrix here is a signed sum of rank-one terms `(a - b)(a - b)ᵀ`
//! where `a` and `b` are indicator vectors of two sample sets normalized to
//! sum to one. [`MmdOperator`] keeps that term form so `X M Xᵀ` costs
//! `O(m n)` per term instead of `O(m n²)`. The dense builders are provided
//! for inspection and testing.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data_model::{DomainPair, Matrix, SubDomainIndex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdTermKind {
    Marginal,
    Conditional,
    SourceToTarget,
    TargetToSource,
    SourceToSource,
}

/// A term that could not be formed because one of its sample sets is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub class: usize,
    pub term: MmdTermKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassMatrix {
    Built(Matrix),
    Skipped(Skip),
}

impl ClassMatrix {
    pub fn built(self) -> Option<Matrix> {
        match self {
            ClassMatrix::Built(m) => Some(m),
            ClassMatrix::Skipped(_) => None,
        }
    }
}

/// Two sample sets in joint positions (`0..ns` source, `ns..ns+nt` target).
#[derive(Debug, Clone, PartialEq)]
pub struct MmdTerm {
    pub kind: MmdTermKind,
    pub class: usize,
    /// `+1` for closeness terms, `-1` for repulsive ones.
    pub sign: f64,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

impl MmdTerm {
    fn vector(&self, n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        let (p, q) = (1.0 / self.pos.len() as f64, 1.0 / self.neg.len() as f64);
        for &i in &self.pos {
            v[i] += p;
        }
        for &j in &self.neg {
            v[j] -= q;
        }
        v
    }

    /// `X (a - b)`: difference of the two column means.
    fn mean_difference(&self, x: &Matrix) -> DVector<f64> {
        let mean = |idx: &[usize]| {
            let mut acc = DVector::zeros(x.nrows());
            for &i in idx {
                acc += x.column(i);
            }
            acc / idx.len() as f64
        };
        mean(&self.pos) - mean(&self.neg)
    }
}

fn term(kind: MmdTermKind, class: usize, sign: f64, pos: Vec<usize>, neg: Vec<usize>) -> std::result::Result<MmdTerm, Skip> {
    if pos.is_empty() || neg.is_empty() {
        Err(Skip { class, term: kind })
    } else {
        Ok(MmdTerm { kind, class, sign, pos, neg })
    }
}

fn joint_target(idx: &SubDomainIndex, local: &[usize]) -> Vec<usize> {
    local.iter().map(|&j| idx.ns() + j).collect()
}

fn others(idx: &SubDomainIndex, c: usize, source: bool) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=idx.class_count())
        .filter(|&r| r != c)
        .flat_map(|r| {
            if source {
                idx.source_indices(r).to_vec()
            } else {
                joint_target(idx, idx.target_indices(r))
            }
        })
        .collect();
    out.sort_unstable();
    out
}

fn marginal_term(ns: usize, nt: usize) -> MmdTerm {
    MmdTerm {
        kind: MmdTermKind::Marginal,
        class: 0,
        sign: 1.0,
        pos: (0..ns).collect(),
        neg: (ns..ns + nt).collect(),
    }
}

fn conditional_term(idx: &SubDomainIndex, c: usize) -> std::result::Result<MmdTerm, Skip> {
    term(
        MmdTermKind::Conditional,
        c,
        1.0,
        idx.source_indices(c).to_vec(),
        joint_target(idx, idx.target_indices(c)),
    )
}

fn repulsive_terms(idx: &SubDomainIndex, c: usize) -> [std::result::Result<MmdTerm, Skip>; 3] {
    let sc = idx.source_indices(c).to_vec();
    let tc = joint_target(idx, idx.target_indices(c));
    [
        term(MmdTermKind::SourceToTarget, c, -1.0, sc.clone(), others(idx, c, false)),
        term(MmdTermKind::TargetToSource, c, -1.0, tc, others(idx, c, true)),
        term(MmdTermKind::SourceToSource, c, -1.0, sc, others(idx, c, true)),
    ]
}

fn dense_sum<'a>(terms: impl IntoIterator<Item = &'a MmdTerm>, n: usize) -> Matrix {
    let mut out = Matrix::zeros(n, n);
    for t in terms {
        let v = t.vector(n);
        out.ger(t.sign.abs(), &v, &v, 1.0);
    }
    out
}

/// Marginal matrix: `1/ns²` on the source block, `1/nt²` on the target
/// block, `-1/(ns nt)` across.
pub fn build_m0(ns: usize, nt: usize) -> Matrix {
    assert!(ns >= 1 && nt >= 1, "build_m0 needs ns, nt >= 1");
    dense_sum([&marginal_term(ns, nt)], ns + nt)
}

/// Conditional matrix for class `c` (1-based), or a skip signal when the
/// class is empty on either side.
pub fn build_mc(idx: &SubDomainIndex, c: usize) -> ClassMatrix {
    match conditional_term(idx, c) {
        Ok(t) => ClassMatrix::Built(dense_sum([&t], idx.ns() + idx.nt())),
        Err(skip) => ClassMatrix::Skipped(skip),
    }
}

/// `M_{S→T} + M_{T→S} + M_{S→S}` summed over classes, each "other" side
/// pooled across all remaining classes. Degenerate terms are skipped.
pub fn build_repulsive(idx: &SubDomainIndex) -> (Matrix, Vec<Skip>) {
    let n = idx.ns() + idx.nt();
    let mut built = Vec::new();
    let mut skipped = Vec::new();
    for c in 1..=idx.class_count() {
        for t in repulsive_terms(idx, c) {
            match t {
                Ok(t) => built.push(t),
                Err(s) => skipped.push(s),
            }
        }
    }
    (dense_sum(&built, n), skipped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdSet {
    pub m0: Matrix,
    /// One entry per class; `None` when the class was skipped.
    pub mc: Vec<Option<Matrix>>,
    pub m_rep: Matrix,
    pub m_c_total: Matrix,
    pub m_rsa: Matrix,
    pub skipped: Vec<Skip>,
}

pub fn assemble_mmd(idx: &SubDomainIndex) -> MmdSet {
    let m0 = build_m0(idx.ns(), idx.nt());
    let mut skipped = Vec::new();
    let mut m_c_total = m0.clone();
    let mc: Vec<Option<Matrix>> = (1..=idx.class_count())
        .map(|c| match build_mc(idx, c) {
            ClassMatrix::Built(m) => {
                m_c_total += &m;
                Some(m)
            }
            ClassMatrix::Skipped(s) => {
                skipped.push(s);
                None
            }
        })
        .collect();
    let (m_rep, rep_skips) = build_repulsive(idx);
    skipped.extend(rep_skips);
    let m_rsa = &m_c_total - &m_rep;
    MmdSet {
        m0,
        mc,
        m_rep,
        m_c_total,
        m_rsa,
        skipped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmdOptions {
    pub repulsion: bool,
    /// Divide `M_RSA` by its Frobenius norm.
    pub normalize: bool,
}

impl Default for MmdOptions {
    fn default() -> Self {
        MmdOptions {
            repulsion: true,
            normalize: false,
        }
    }
}

/// `M_RSA` in term form.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdOperator {
    n: usize,
    terms: Vec<MmdTerm>,
    scale: f64,
    options: MmdOptions,
    skipped: Vec<Skip>,
}

impl MmdOperator {
    pub fn from_index(idx: &SubDomainIndex, options: MmdOptions) -> Result<Self> {
        if idx.ns() == 0 || idx.nt() == 0 {
            return Err(Error::data("both domains need at least one sample"));
        }
        let mut terms = vec![marginal_term(idx.ns(), idx.nt())];
        let mut skipped = Vec::new();
        for c in 1..=idx.class_count() {
            match conditional_term(idx, c) {
                Ok(t) => terms.push(t),
                Err(s) => skipped.push(s),
            }
        }
        if terms.len() == 1 && idx.class_count() > 0 {
            return Err(Error::data(
                "no class is populated in both domains; pseudo-labels give no conditional term",
            ));
        }
        if options.repulsion {
            for c in 1..=idx.class_count() {
                for t in repulsive_terms(idx, c) {
                    match t {
                        Ok(t) => terms.push(t),
                        Err(s) => skipped.push(s),
                    }
                }
            }
        }
        let mut op = MmdOperator {
            n: idx.ns() + idx.nt(),
            terms,
            scale: 1.0,
            options,
            skipped,
        };
        if options.normalize {
            let f = op.frobenius_norm();
            if f > 0.0 {
                op.scale = 1.0 / f;
            }
        }
        Ok(op)
    }

    /// Same options, new pseudo-labels.
    pub fn rebuild(&self, idx: &SubDomainIndex) -> Result<Self> {
        MmdOperator::from_index(idx, self.options)
    }

    pub fn options(&self) -> MmdOptions {
        self.options
    }

    pub fn terms(&self) -> &[MmdTerm] {
        &self.terms
    }

    pub fn skipped(&self) -> &[Skip] {
        &self.skipped
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.n, self.n);
        for t in &self.terms {
            let v = t.vector(self.n);
            out.ger(t.sign * self.scale, &v, &v, 1.0);
        }
        out
    }

    /// `X M Xᵀ` for an `m x n` matrix `X`.
    pub fn scatter(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.ncols(), self.n, "scatter: X has {} columns, operator is {}", x.ncols(), self.n);
        let m = x.nrows();
        let mut out = Matrix::zeros(m, m);
        for t in &self.terms {
            let d = t.mean_difference(x);
            out.ger(t.sign * self.scale, &d, &d, 1.0);
        }
        out
    }

    /// `‖Σ s_i v_i v_iᵀ‖_F` without forming the matrix.
    pub fn frobenius_norm(&self) -> f64 {
        let vs: Vec<DVector<f64>> = self.terms.iter().map(|t| t.vector(self.n)).collect();
        let mut acc = 0.0;
        for (i, a) in self.terms.iter().enumerate() {
            for (j, b) in self.terms.iter().enumerate() {
                let d = vs[i].dot(&vs[j]);
                acc += a.sign * b.sign * d * d;
            }
        }
        self.scale * acc.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdDistances {
    pub marginal: f64,
    pub conditional: f64,
    pub repulsive: f64,
}

/// Distances from explicit class means of the projected samples `Aᵀx`.
pub fn mmd_distance_oracle(pair: &DomainPair, pseudo: &[usize], a_matrix: &Matrix) -> Result<MmdDistances> {
    let m = pair.source.dim();
    if a_matrix.nrows() != m {
        return Err(Error::data(format!("projection has {} rows, features have {m}", a_matrix.nrows())));
    }
    if pseudo.len() != pair.nt() {
        return Err(Error::data("pseudo-label count differs from target size"));
    }
    let zs = a_matrix.transpose() * pair.source.features();
    let zt = a_matrix.transpose() * pair.target.features();
    let ys = pair.source_labels();
    let c_count = pair.class_count;

    let mean_where = |z: &Matrix, labels: &[usize], keep: &dyn Fn(usize) -> bool| -> Option<DVector<f64>> {
        let mut acc = DVector::zeros(z.nrows());
        let mut count = 0usize;
        for (j, &l) in labels.iter().enumerate() {
            if keep(l) {
                acc += z.column(j);
                count += 1;
            }
        }
        (count > 0).then(|| acc / count as f64)
    };
    let dist = |a: Option<DVector<f64>>, b: Option<DVector<f64>>| match (a, b) {
        (Some(a), Some(b)) => (a - b).norm_squared(),
        _ => 0.0,
    };

    let marginal = dist(mean_where(&zs, ys, &|_| true), mean_where(&zt, pseudo, &|_| true));
    let mut conditional = 0.0;
    let mut repulsive = 0.0;
    for c in 1..=c_count {
        let is_c = move |l: usize| l == c;
        let not_c = move |l: usize| l != c;
        conditional += dist(mean_where(&zs, ys, &is_c), mean_where(&zt, pseudo, &is_c));
        repulsive += dist(mean_where(&zs, ys, &is_c), mean_where(&zt, pseudo, &not_c));
        repulsive += dist(mean_where(&zt, pseudo, &is_c), mean_where(&zs, ys, &not_c));
        repulsive += dist(mean_where(&zs, ys, &is_c), mean_where(&zs, ys, &not_c));
    }
    Ok(MmdDistances {
        marginal,
        conditional,
        repulsive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m0_single_samples() {
        let m = build_m0(1, 1);
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn m0_two_by_two() {
        let m = build_m0(2, 2);
        let q = 0.25;
        let want = Matrix::from_row_slice(4, 4, &[q, q, -q, -q, q, q, -q, -q, -q, -q, q, q, -q, -q, q, q]);
        assert!((m - want).amax() < 1e-15);
    }

    #[test]
    fn mc_single_pair() {
        let idx = SubDomainIndex::from_labels(&[1, 2], &[1, 2], 2).unwrap();
        let m = build_mc(&idx, 1).built().unwrap();
        // source position 0, target position ns + 0 = 2
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(2, 2)], 1.0);
        assert_eq!(m[(0, 2)], -1.0);
        assert_eq!(m[(2, 0)], -1.0);
        assert_eq!(m.iter().filter(|v| **v != 0.0).count(), 4);
    }

    #[test]
    fn mc_empty_target_is_skipped() {
        let idx = SubDomainIndex::from_labels(&[1, 2], &[2, 2], 2).unwrap();
        assert_eq!(
            build_mc(&idx, 1),
            ClassMatrix::Skipped(Skip {
                class: 1,
                term: MmdTermKind::Conditional
            })
        );
    }

    #[test]
    fn single_class_no_repulsion() {
        let idx = SubDomainIndex::from_labels(&[1, 1], &[1], 1).unwrap();
        let (rep, skipped) = build_repulsive(&idx);
        assert!(rep.iter().all(|v| *v == 0.0));
        assert_eq!(skipped.len(), 3);
    }

    #[test]
    fn empty_target_class_skips_its_conditional() {
        let idx = SubDomainIndex::from_labels(&[1, 2], &[2], 2).unwrap();
        let set = assemble_mmd(&idx);
        assert!(set.mc[0].is_none());
        assert!(set.mc[1].is_some());
        assert_eq!(set.m_rsa, &set.m_c_total - &set.m_rep);
    }

    #[test]
    fn operator_matches_dense_set() {
        let idx = SubDomainIndex::from_labels(&[1, 2, 2, 3], &[1, 1, 3], 3).unwrap();
        let set = assemble_mmd(&idx);
        let op = MmdOperator::from_index(&idx, MmdOptions::default()).unwrap();
        assert!((op.dense() - &set.m_rsa).amax() < 1e-14);
        assert!((op.frobenius_norm() - set.m_rsa.norm()).abs() < 1e-12);
        let norm = MmdOperator::from_index(
            &idx,
            MmdOptions {
                repulsion: true,
                normalize: true,
            },
        )
        .unwrap();
        assert!((norm.dense().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn operator_without_repulsion_is_mc() {
        let idx = SubDomainIndex::from_labels(&[1, 2, 2], &[1, 2], 2).unwrap();
        let set = assemble_mmd(&idx);
        let op = MmdOperator::from_index(
            &idx,
            MmdOptions {
                repulsion: false,
                normalize: false,
            },
        )
        .unwrap();
        assert!((op.dense() - &set.m_c_total).amax() < 1e-15);
    }
}
