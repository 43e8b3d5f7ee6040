//! Block-structured symmetric linear systems and their solvers: dense
//! Cholesky for small graphs, block-sparse Cholesky above.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Cholesky, DMatrix, DVector};

use super::factor::LinearizedFactor;
use super::key::VariableKey;

/// Ordered key layout of a linear system.
#[derive(Clone, Debug)]
pub struct BlockLayout {
    pub keys: Vec<VariableKey>,
    pub offsets: Vec<usize>,
    pub index: BTreeMap<VariableKey, usize>,
    pub total_dim: usize,
}

impl BlockLayout {
    pub fn new(keys: &BTreeSet<VariableKey>) -> Self {
        let keys: Vec<VariableKey> = keys.iter().cloned().collect();
        let mut offsets = Vec::with_capacity(keys.len());
        let mut index = BTreeMap::new();
        let mut off = 0;
        for (i, k) in keys.iter().enumerate() {
            offsets.push(off);
            index.insert(*k, i);
            off += k.dim();
        }
        Self { keys, offsets, index, total_dim: off }
    }

    pub fn dim_of(&self, block: usize) -> usize {
        self.keys[block].dim()
    }
}

/// Accumulated normal equations `H delta = -b` in block form (lower
/// triangle stored column-wise).
pub struct BlockSystem {
    pub layout: BlockLayout,
    cols: Vec<BTreeMap<usize, DMatrix<f64>>>,
    pub grad: DVector<f64>,
}

impl BlockSystem {
    pub fn new(layout: BlockLayout) -> Self {
        let n = layout.keys.len();
        let dim = layout.total_dim;
        Self { layout, cols: vec![BTreeMap::new(); n], grad: DVector::zeros(dim) }
    }

    pub fn add_linearized(&mut self, lin: &LinearizedFactor) {
        let idx: Vec<usize> = lin.keys.iter().map(|k| self.layout.index[k]).collect();
        for (k, g) in idx.iter().zip(&lin.grads) {
            let off = self.layout.offsets[*k];
            let mut view = self.grad.rows_mut(off, g.len());
            view += g;
        }
        for ((a, b), h) in &lin.hessians {
            let (ia, ib) = (idx[*a], idx[*b]);
            // Store in the lower triangle: block (row, col) with row >= col.
            // H_ab maps (key_a rows x key_b cols), so the entry is H_ab when
            // key_a sorts after key_b and H_ab^T otherwise.
            let (row, col, block) = if ia >= ib {
                (ia, ib, h.clone())
            } else {
                (ib, ia, h.transpose())
            };
            // H_ab has shape (dim_a x dim_b); lower block (row,col) needs
            // (dim_row x dim_col).
            let want = (self.layout.dim_of(row), self.layout.dim_of(col));
            debug_assert_eq!((block.nrows(), block.ncols()), want);
            self.cols[col]
                .entry(row)
                .and_modify(|m| *m += &block)
                .or_insert(block);
        }
    }

    /// Infinity norm of the cost gradient `2 b`.
    pub fn gradient_inf_norm(&self) -> f64 {
        2.0 * self.grad.amax()
    }

    /// Keys whose diagonal block carries no information at all.
    pub fn structurally_unconstrained(&self) -> Vec<VariableKey> {
        let mut out = Vec::new();
        for (j, key) in self.layout.keys.iter().enumerate() {
            let ok = self.cols[j].get(&j).map(|d| d.norm() > 0.0).unwrap_or(false);
            if !ok {
                out.push(*key);
            }
        }
        out
    }

    fn damped_diagonal(&self, j: usize, lambda: f64) -> DMatrix<f64> {
        let dim = self.layout.dim_of(j);
        let mut d = self.cols[j].get(&j).cloned().unwrap_or_else(|| DMatrix::zeros(dim, dim));
        for i in 0..dim {
            d[(i, i)] += lambda * d[(i, i)].max(1e-12);
        }
        d
    }

    /// Solves `(H + lambda diag(H)) delta = -b`. `None` when the damped
    /// factorization fails.
    pub fn solve(&self, lambda: f64, dense_threshold: usize) -> Option<DVector<f64>> {
        if self.layout.total_dim <= dense_threshold {
            self.solve_dense(lambda)
        } else {
            self.solve_block_sparse(lambda)
        }
    }

    pub fn dense_matrix(&self, lambda: f64) -> DMatrix<f64> {
        let n = self.layout.total_dim;
        let mut h = DMatrix::zeros(n, n);
        for (j, col) in self.cols.iter().enumerate() {
            let oj = self.layout.offsets[j];
            for (i, block) in col {
                let oi = self.layout.offsets[*i];
                h.view_mut((oi, oj), (block.nrows(), block.ncols())).copy_from(block);
                if i != &j {
                    h.view_mut((oj, oi), (block.ncols(), block.nrows()))
                        .copy_from(&block.transpose());
                }
            }
        }
        for i in 0..n {
            h[(i, i)] += lambda * h[(i, i)].max(1e-12);
        }
        h
    }

    fn solve_dense(&self, lambda: f64) -> Option<DVector<f64>> {
        let h = self.dense_matrix(lambda);
        let chol = Cholesky::new(h)?;
        Some(chol.solve(&(-&self.grad)))
    }

    /// Right-looking block Cholesky with fill-in, then two triangular sweeps.
    fn solve_block_sparse(&self, lambda: f64) -> Option<DVector<f64>> {
        let n = self.layout.keys.len();
        let mut work: Vec<BTreeMap<usize, DMatrix<f64>>> = self.cols.clone();
        for (j, col) in work.iter_mut().enumerate() {
            col.insert(j, self.damped_diagonal(j, lambda));
        }

        // L columns: factor[j][i] = L_ij for i >= j.
        let mut factor: Vec<BTreeMap<usize, DMatrix<f64>>> = vec![BTreeMap::new(); n];
        for j in 0..n {
            let col = std::mem::take(&mut work[j]);
            let diag = col.get(&j)?;
            let chol = Cholesky::new(diag.clone())?;
            let l_jj = chol.l();
            let mut below: Vec<(usize, DMatrix<f64>)> = Vec::new();
            for (i, a_ij) in col.iter().filter(|(i, _)| **i > j) {
                // L_ij = A_ij L_jj^-T  =>  (L_jj L_ij^T = A_ij^T).
                let l_ij = l_jj.solve_lower_triangular(&a_ij.transpose())?.transpose();
                below.push((*i, l_ij));
            }
            // Trailing update A_{i2,i1} -= L_{i2,j} L_{i1,j}^T for i1 <= i2.
            for (a_pos, (i1, l1)) in below.iter().enumerate() {
                for (i2, l2) in below.iter().skip(a_pos) {
                    let upd = l2 * l1.transpose();
                    work[*i1]
                        .entry(*i2)
                        .and_modify(|m| *m -= &upd)
                        .or_insert_with(|| -upd.clone());
                }
            }
            factor[j].insert(j, l_jj.into());
            for (i, l) in below {
                factor[j].insert(i, l);
            }
        }

        // Forward: L y = -b.
        let mut rhs = -self.grad.clone();
        for j in 0..n {
            let oj = self.layout.offsets[j];
            let dj = self.layout.dim_of(j);
            let l_jj = &factor[j][&j];
            let y_j = l_jj.solve_lower_triangular(&rhs.rows(oj, dj).into_owned())?;
            rhs.rows_mut(oj, dj).copy_from(&y_j);
            for (i, l_ij) in factor[j].iter().filter(|(i, _)| **i > j) {
                let oi = self.layout.offsets[*i];
                let di = self.layout.dim_of(*i);
                let upd = l_ij * &y_j;
                let mut seg = rhs.rows_mut(oi, di);
                seg -= upd;
            }
        }
        // Backward: L^T x = y.
        for j in (0..n).rev() {
            let oj = self.layout.offsets[j];
            let dj = self.layout.dim_of(j);
            let mut acc = rhs.rows(oj, dj).into_owned();
            for (i, l_ij) in factor[j].iter().filter(|(i, _)| **i > j) {
                let oi = self.layout.offsets[*i];
                let di = self.layout.dim_of(*i);
                acc -= l_ij.transpose() * rhs.rows(oi, di).into_owned();
            }
            let l_jj = &factor[j][&j];
            let x_j = l_jj.transpose().solve_upper_triangular(&acc)?;
            rhs.rows_mut(oj, dj).copy_from(&x_j);
        }
        Some(rhs)
    }

    /// Keys aligned with near-null eigendirections of the (undamped) dense
    /// Hessian; used to name indeterminate directions in errors.
    pub fn null_space_keys(&self) -> Vec<VariableKey> {
        let mut out: Vec<VariableKey> = self.structurally_unconstrained();
        if self.layout.total_dim <= 2400 {
            let h = self.dense_matrix(0.0);
            let eig = h.symmetric_eigen();
            let max = eig.eigenvalues.amax().max(1e-300);
            for (c, &l) in eig.eigenvalues.iter().enumerate() {
                if l.abs() <= 1e-10 * max {
                    let v = eig.eigenvectors.column(c);
                    // Attribute the direction to the dominant block.
                    let mut best = (0usize, 0.0f64);
                    for (b, key) in self.layout.keys.iter().enumerate() {
                        let o = self.layout.offsets[b];
                        let norm = v.rows(o, key.dim()).norm();
                        if norm > best.1 {
                            best = (b, norm);
                        }
                    }
                    out.push(self.layout.keys[best.0]);
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}
