//! Marginalization by Schur complement onto boundary keys.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use super::factor::{GraphFactor, LinearPriorFactor};
use super::graph::FactorGraph;
use super::key::VariableKey;
use super::linear::BlockLayout;
use super::values::Values;
use crate::Result;

/// Absorbs every factor touching `departing` into a Gaussian prior over the
/// remaining (boundary) keys, linearized at `values`.
///
/// Subsequent optimization of the reduced graph at the linearization point
/// reproduces the full-graph solution to first order.
pub fn marginalize(
    graph: &mut FactorGraph,
    values: &Values,
    departing: &BTreeSet<VariableKey>,
) -> Result<()> {
    let mut absorbed = graph.take_touching(departing);
    if absorbed.is_empty() {
        return Ok(());
    }

    let mut all_keys: BTreeSet<VariableKey> = BTreeSet::new();
    for f in &absorbed {
        all_keys.extend(f.keys());
    }
    let dep: Vec<VariableKey> = all_keys.intersection(departing).cloned().collect();
    let boundary: Vec<VariableKey> = all_keys.difference(departing).cloned().collect();

    // Joint dense system ordered (departing, boundary).
    let mut ordered = BTreeSet::new();
    ordered.extend(dep.iter().cloned());
    ordered.extend(boundary.iter().cloned());
    let layout = BlockLayout::new(&ordered);
    // Column offsets in (departing first) order, not BTree order.
    let mut offset = 0usize;
    let mut offsets = std::collections::BTreeMap::new();
    for k in dep.iter().chain(boundary.iter()) {
        offsets.insert(*k, offset);
        offset += k.dim();
    }
    let total = offset;
    let dep_dim: usize = dep.iter().map(|k| k.dim()).sum();
    let bnd_dim = total - dep_dim;

    let mut h = DMatrix::<f64>::zeros(total, total);
    let mut b = DVector::<f64>::zeros(total);
    let mut cost0 = 0.0;
    for f in absorbed.iter_mut() {
        f.prepare(values)?;
        let lin = f.linearize(values)?;
        cost0 += lin.cost;
        for (k, g) in lin.keys.iter().zip(&lin.grads) {
            let o = offsets[k];
            let mut seg = b.rows_mut(o, g.len());
            seg += g;
        }
        for ((a, bb), block) in &lin.hessians {
            let (ka, kb) = (lin.keys[*a], lin.keys[*bb]);
            let (oa, ob) = (offsets[&ka], offsets[&kb]);
            h.view_mut((oa, ob), (block.nrows(), block.ncols())).add_assign_block(block);
            if a != bb {
                h.view_mut((ob, oa), (block.ncols(), block.nrows()))
                    .add_assign_block(&block.transpose());
            }
        }
    }
    let _ = layout;

    if boundary.is_empty() {
        // Everything absorbed was interior; nothing to carry forward.
        return Ok(());
    }
    if dep.is_empty() {
        // Nothing actually departing: put the factors back untouched.
        for f in absorbed {
            graph.add(f);
        }
        return Ok(());
    }

    let h_dd = h.view((0, 0), (dep_dim, dep_dim)).into_owned();
    let h_bd = h.view((dep_dim, 0), (bnd_dim, dep_dim)).into_owned();
    let h_bb = h.view((dep_dim, dep_dim), (bnd_dim, bnd_dim)).into_owned();
    let b_d = b.rows(0, dep_dim).into_owned();
    let b_b = b.rows(dep_dim, bnd_dim).into_owned();

    // Jitter keeps near-singular interior blocks factorizable.
    let scale = h_dd.diagonal().amax().max(1.0);
    let h_dd_reg = &h_dd + DMatrix::identity(dep_dim, dep_dim) * (1e-12 * scale);
    let chol = nalgebra::Cholesky::new(h_dd_reg)
        .ok_or_else(|| crate::Error::IndeterminateSystem { keys: dep.clone() })?;
    let hdd_inv_hdb = chol.solve(&h_bd.transpose());
    let hdd_inv_bd = chol.solve(&b_d);

    let mut h_schur = &h_bb - &h_bd * &hdd_inv_hdb;
    h_schur = (&h_schur + h_schur.transpose()) * 0.5;
    let b_schur = &b_b - &h_bd * &hdd_inv_bd;
    let cost_schur = cost0 - b_d.dot(&hdd_inv_bd);

    let lin_values = boundary
        .iter()
        .map(|k| values.get(k).expect("boundary key has a value").clone())
        .collect();
    graph.add(GraphFactor::LinearPrior(LinearPriorFactor {
        keys: boundary,
        lin_values,
        hessian: h_schur,
        grad: b_schur,
        cost0: cost_schur,
    }));
    Ok(())
}

trait AddAssignBlock {
    fn add_assign_block(&mut self, other: &DMatrix<f64>);
}

impl AddAssignBlock for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign_block(&mut self, other: &DMatrix<f64>) {
        *self += other;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::factor::LinearPriorFactor;
    use crate::optim::lm::{lm_optimize, LmConfig};
    use crate::optim::values::Value;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn landmark_values(n: usize) -> (Vec<VariableKey>, Values) {
        let keys: Vec<VariableKey> = (0..n as u64).map(VariableKey::landmark).collect();
        let mut values = Values::new();
        for k in &keys {
            values.insert(*k, Value::Point(Vector3::zeros()));
        }
        (keys, values)
    }

    /// Quadratic factor `w * || x_b - x_a - d ||^2` in information form at
    /// the current (zero) values.
    fn spring(keys: [VariableKey; 2], d: Vector3<f64>, w: f64, values: &Values) -> GraphFactor {
        let r0 = values.point(&keys[1]) - values.point(&keys[0]) - d;
        let mut h = DMatrix::zeros(6, 6);
        let i3 = DMatrix::<f64>::identity(3, 3);
        h.view_mut((0, 0), (3, 3)).copy_from(&(&i3 * w));
        h.view_mut((3, 3), (3, 3)).copy_from(&(&i3 * w));
        h.view_mut((0, 3), (3, 3)).copy_from(&(&i3 * -w));
        h.view_mut((3, 0), (3, 3)).copy_from(&(&i3 * -w));
        let mut g = DVector::zeros(6);
        g.rows_mut(0, 3).copy_from(&(-r0 * w));
        g.rows_mut(3, 3).copy_from(&(r0 * w));
        GraphFactor::LinearPrior(LinearPriorFactor {
            keys: keys.to_vec(),
            lin_values: vec![
                values.get(&keys[0]).unwrap().clone(),
                values.get(&keys[1]).unwrap().clone(),
            ],
            hessian: h,
            grad: g,
            cost0: w * r0.norm_squared(),
        })
    }

    fn anchor(key: VariableKey, target: Vector3<f64>, w: f64, values: &Values) -> GraphFactor {
        let r0 = values.point(&key) - target;
        GraphFactor::LinearPrior(LinearPriorFactor {
            keys: vec![key],
            lin_values: vec![values.get(&key).unwrap().clone()],
            hessian: DMatrix::identity(3, 3) * w,
            grad: DVector::from_column_slice((r0 * w).as_slice()),
            cost0: w * r0.norm_squared(),
        })
    }

    #[test]
    fn chain_marginalization_matches_dense_gaussian_conditional() {
        // x0 - x1 - x2 linear chain; marginalize x0; the induced prior on x1
        // must equal the dense joint-covariance conditional.
        let (keys, values) = landmark_values(3);
        let build = |values: &Values| {
            let mut g = FactorGraph::new();
            g.add(anchor(keys[0], Vector3::new(1.0, 0.0, 0.0), 4.0, values));
            g.add(spring([keys[0], keys[1]], Vector3::new(0.5, 0.0, 0.0), 2.0, values));
            g.add(spring([keys[1], keys[2]], Vector3::new(0.25, 0.0, 0.0), 3.0, values));
            g
        };

        // Full batch solution as the oracle.
        let mut full = build(&values);
        let (full_sol, _) = lm_optimize(&mut full, &values, &LmConfig::default()).unwrap();

        // Marginalize x0, then optimize the reduced graph.
        let mut reduced = build(&values);
        let departing: BTreeSet<VariableKey> = [keys[0]].into_iter().collect();
        marginalize(&mut reduced, &values, &departing).unwrap();
        let mut reduced_values = values.clone();
        reduced_values.remove(&keys[0]);
        let (red_sol, _) = lm_optimize(&mut reduced, &reduced_values, &LmConfig::default()).unwrap();

        for k in &keys[1..] {
            assert_relative_eq!(red_sol.point(k), full_sol.point(k), epsilon = 1e-9);
        }

        // Dense Gaussian-marginalization oracle for the prior on x1:
        // H = J^T W J over (x0,x1) block for anchor+first spring, Schur onto x1.
        let w_anchor = 4.0;
        let w_spring = 2.0;
        let h00 = w_anchor + w_spring;
        let h01 = -w_spring;
        let h11 = w_spring;
        let schur = h11 - h01 * h01 / h00;
        // Pull the LinearPrior the marginalization appended.
        let prior = reduced
            .factors()
            .iter()
            .find_map(|f| match f {
                GraphFactor::LinearPrior(p) if p.keys == vec![keys[1]] => Some(p),
                _ => None,
            })
            .expect("boundary prior on x1");
        assert_relative_eq!(prior.hessian[(0, 0)], schur, epsilon = 1e-12);
    }

    #[test]
    fn unary_prior_only_leaves_no_boundary_prior() {
        let (keys, values) = landmark_values(2);
        let mut graph = FactorGraph::new();
        graph.add(anchor(keys[0], Vector3::zeros(), 1.0, &values));
        graph.add(anchor(keys[1], Vector3::new(1.0, 0.0, 0.0), 1.0, &values));
        let n_before = graph.len();
        let departing: BTreeSet<VariableKey> = [keys[0]].into_iter().collect();
        marginalize(&mut graph, &values, &departing).unwrap();
        // The unary factor on x0 is absorbed without touching x1's factor.
        assert_eq!(graph.len(), n_before - 1);
        assert!(graph.keys().iter().all(|k| *k != keys[0]));
    }

    #[test]
    fn marginalize_then_solve_equals_batch_on_linear_problem() {
        let (keys, values) = landmark_values(4);
        let build = |values: &Values| {
            let mut g = FactorGraph::new();
            g.add(anchor(keys[0], Vector3::new(0.3, -0.2, 0.1), 5.0, values));
            g.add(spring([keys[0], keys[1]], Vector3::new(1.0, 0.0, 0.0), 2.0, values));
            g.add(spring([keys[1], keys[2]], Vector3::new(0.0, 1.0, 0.0), 2.5, values));
            g.add(spring([keys[2], keys[3]], Vector3::new(0.0, 0.0, 1.0), 1.5, values));
            g.add(spring([keys[0], keys[2]], Vector3::new(1.0, 1.0, 0.0), 0.5, values));
            g
        };
        let mut full = build(&values);
        let (full_sol, _) = lm_optimize(&mut full, &values, &LmConfig::default()).unwrap();

        let mut reduced = build(&values);
        let departing: BTreeSet<VariableKey> = [keys[0], keys[1]].into_iter().collect();
        marginalize(&mut reduced, &values, &departing).unwrap();
        let mut rv = values.clone();
        rv.remove(&keys[0]);
        rv.remove(&keys[1]);
        let (red_sol, _) = lm_optimize(&mut reduced, &rv, &LmConfig::default()).unwrap();
        for k in &keys[2..] {
            assert_relative_eq!(red_sol.point(k), full_sol.point(k), epsilon = 1e-9);
        }
    }
}
