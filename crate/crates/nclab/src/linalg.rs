//! Dense Hermitian eigensolves that first split the matrix into the connected
//! components of its sparsity graph. Truncated Landau operators decompose into
//! blocks of size O(L), so this is far cheaper than one dense solve.

use nalgebra::{DMatrix, DVector};

use crate::basis::{max_abs, C64, ZERO};
use crate::error::{Error, Result};

/// Connected components of the graph with an edge i~j when |m_ij| > tol.
pub fn components(m: &DMatrix<C64>, tol: f64) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for j in 0..n {
        for i in 0..n {
            if i != j && m[(i, j)].norm() > tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Eigen-decomposition of a Hermitian matrix block by block.
#[derive(Clone, Debug)]
pub struct BlockEigen {
    pub dim: usize,
    /// (eigenvalue, support indices, eigenvector restricted to the support)
    pub pairs: Vec<(f64, Vec<usize>, DVector<C64>)>,
    /// Frobenius norm of the entries dropped between blocks; bounds the
    /// eigenvalue perturbation.
    pub dropped: f64,
}

impl BlockEigen {
    pub fn values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn dense_vector(&self, k: usize) -> DVector<C64> {
        let (_, idx, v) = &self.pairs[k];
        let mut out = DVector::zeros(self.dim);
        for (a, &i) in idx.iter().enumerate() {
            out[i] = v[a];
        }
        out
    }
}

pub fn block_eigh(m: &DMatrix<C64>) -> BlockEigen {
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let tol = 1e-14 * scale;
    let comps = components(m, tol);
    let mut blocked = vec![0usize; m.nrows()];
    for (k, c) in comps.iter().enumerate() {
        for &i in c {
            blocked[i] = k;
        }
    }
    let mut dropped = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if blocked[i] != blocked[j] {
                dropped += m[(i, j)].norm_sqr();
            }
        }
    }
    let solved = crate::par::map(comps.len(), |k| {
        let idx = &comps[k];
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])]);
        let eig = sub.symmetric_eigen();
        (0..idx.len())
            .map(|a| (eig.eigenvalues[a], idx.clone(), eig.eigenvectors.column(a).into_owned()))
            .collect::<Vec<_>>()
    });
    BlockEigen { dim: m.nrows(), pairs: solved.into_iter().flatten().collect(), dropped: dropped.sqrt() }
}

pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    block_eigh(m).values()
}

/// Solve (a - z) w = v by LU.
pub fn shifted_solve(a: &DMatrix<C64>, z: C64, v: &DVector<C64>) -> Result<DVector<C64>> {
    let n = a.nrows();
    let shifted = a - DMatrix::from_diagonal_element(n, n, z);
    shifted.lu().solve(v).ok_or(Error::Solver)
}

/// (a - z)^{-1} as a dense matrix.
pub fn shifted_inverse(a: &DMatrix<C64>, z: C64) -> Result<DMatrix<C64>> {
    let n = a.nrows();
    let shifted = a - DMatrix::from_diagonal_element(n, n, z);
    shifted.lu().try_inverse().ok_or(Error::Solver)
}

pub fn unit_vector(n: usize, i: usize) -> DVector<C64> {
    let mut v = DVector::from_element(n, ZERO);
    v[i] = C64::new(1.0, 0.0);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_solve_matches_dense() {
        let mut m = DMatrix::<C64>::zeros(5, 5);
        m[(0, 3)] = C64::new(1.0, 2.0);
        m[(3, 0)] = C64::new(1.0, -2.0);
        m[(1, 1)] = C64::new(0.5, 0.0);
        m[(2, 4)] = C64::new(0.0, 1.0);
        m[(4, 2)] = C64::new(0.0, -1.0);
        let be = block_eigh(&m);
        assert_eq!(components(&m, 0.0).len(), 3);
        let mut a = be.values();
        let mut b: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().cloned().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        for k in 0..5 {
            let v = be.dense_vector(k);
            assert!((&m * &v - &v * C64::new(be.pairs[k].0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn resolvent_of_zero() {
        let v = DVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-3.0, 0.5)]);
        let w = shifted_solve(&DMatrix::zeros(2, 2), C64::new(0.0, 1.0), &v).unwrap();
        assert!((w - &v * C64::new(0.0, 1.0)).norm() < 1e-15);
    }
}
