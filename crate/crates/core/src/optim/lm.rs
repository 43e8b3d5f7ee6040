//! Levenberg-Marquardt over a factor graph with optional selective
//! relinearization and warm-started incremental updates.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;

use super::factor::LinearizedFactor;
use super::graph::FactorGraph;
use super::key::VariableKey;
use super::linear::{BlockLayout, BlockSystem};
use super::values::{Value, Values};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Relative cost-change convergence threshold.
    pub rel_cost_tol: f64,
    /// Gradient infinity-norm convergence threshold.
    pub grad_tol: f64,
    pub lambda_init: f64,
    pub lambda_factor: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub max_inner: usize,
    /// Factors whose variables moved less than this (tangent infinity norm)
    /// since their last linearization keep their cached quadratic model;
    /// zero relinearizes everything each iteration.
    pub relin_threshold: f64,
    /// Systems at or below this dimension solve densely.
    pub dense_dim_threshold: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            rel_cost_tol: 1e-6,
            grad_tol: 1e-8,
            lambda_init: 1e-6,
            lambda_factor: 10.0,
            lambda_min: 1e-12,
            lambda_max: 1e10,
            max_inner: 14,
            relin_threshold: 0.0,
            dense_dim_threshold: 180,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    CostConverged,
    GradientSmall,
    MaxIterations,
    Stalled,
}

#[derive(Clone, Debug)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub accepted_steps: usize,
    pub termination: Termination,
}

struct Cache {
    lin: LinearizedFactor,
    lin_point: Vec<Value>,
}

/// Persistent optimizer state for warm-started incremental updates.
#[derive(Default)]
pub struct Linearizer {
    caches: BTreeMap<usize, Cache>,
}

impl Linearizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops cached linearizations (after graph surgery renumbers factors).
    pub fn invalidate(&mut self) {
        self.caches.clear();
    }

    fn deltas_from(cache: &Cache, values: &Values) -> Option<Vec<DVector<f64>>> {
        cache
            .lin
            .keys
            .iter()
            .zip(&cache.lin_point)
            .map(|(k, lin_v)| values.get(k).map(|cur| lin_v.local(cur)))
            .collect()
    }

    /// Linearizes (or shifts) every factor at `values`. Matching factors are
    /// processed as one parallel batch; per-factor accumulation stays
    /// sequential so results are deterministic.
    fn linearize_all(
        &mut self,
        graph: &mut FactorGraph,
        values: &Values,
        threshold: f64,
    ) -> Result<Vec<(LinearizedFactor, bool)>> {
        let n = graph.len();
        let mut fresh: Vec<bool> = vec![true; n];
        if threshold > 0.0 {
            for (idx, factor) in graph.factors().iter().enumerate() {
                if let Some(cache) = self.caches.get(&idx) {
                    if cache.lin.keys == factor.keys() {
                        if let Some(deltas) = Self::deltas_from(cache, values) {
                            let moved =
                                deltas.iter().map(|d| d.amax()).fold(0.0f64, f64::max);
                            if moved <= threshold {
                                fresh[idx] = false;
                            }
                        }
                    }
                }
            }
        }

        // Batch path: gather matching tasks needing relinearization.
        let matching_idx: Vec<usize> = graph
            .factors()
            .iter()
            .enumerate()
            .filter(|(i, f)| fresh[*i] && f.as_matching().is_some())
            .map(|(i, _)| i)
            .collect();
        let batch: Vec<(usize, LinearizedFactor)> = matching_idx
            .par_iter()
            .map(|&i| {
                let f = graph.factors()[i].as_matching().unwrap();
                f.linearize(values).map(|lin| (i, lin))
            })
            .collect::<Result<_>>()?;

        let mut out: Vec<Option<(LinearizedFactor, bool)>> = (0..n).map(|_| None).collect();
        for (i, lin) in batch {
            out[i] = Some((lin, true));
        }
        for (idx, factor) in graph.factors_mut().iter_mut().enumerate() {
            if out[idx].is_some() {
                continue;
            }
            if fresh[idx] {
                factor.prepare(values)?;
                out[idx] = Some((factor.linearize(values)?, true));
            } else {
                let cache = &self.caches[&idx];
                let deltas = Self::deltas_from(cache, values).expect("cache keys present");
                out[idx] = Some((cache.lin.shifted(&deltas), false));
            }
        }

        let result: Vec<(LinearizedFactor, bool)> = out.into_iter().map(|o| o.unwrap()).collect();
        // Refresh caches for factors linearized this round.
        for (idx, (lin, was_fresh)) in result.iter().enumerate() {
            if *was_fresh {
                let lin_point =
                    lin.keys.iter().map(|k| values.get(k).unwrap().clone()).collect();
                self.caches.insert(idx, Cache { lin: lin.clone(), lin_point });
            }
        }
        Ok(result)
    }

    /// Total cost at `candidate`: exact for freshly linearized factors,
    /// quadratic-model for cached ones.
    fn cost_at(
        &self,
        graph: &FactorGraph,
        lins: &[(LinearizedFactor, bool)],
        candidate: &Values,
    ) -> Result<f64> {
        let exact: f64 = graph
            .factors()
            .par_iter()
            .zip(lins.par_iter())
            .filter(|(_, (_, fresh))| *fresh)
            .map(|(f, _)| f.cost(candidate))
            .sum::<Result<f64>>()?;
        let mut model = 0.0;
        for (idx, (_, fresh)) in lins.iter().enumerate() {
            if !fresh {
                let cache = &self.caches[&idx];
                let deltas = Self::deltas_from(cache, candidate).expect("keys present");
                model += cache.lin.model_cost(&deltas);
            }
        }
        Ok(exact + model)
    }
}

fn split_delta(layout: &BlockLayout, delta: &DVector<f64>) -> BTreeMap<VariableKey, DVector<f64>> {
    let mut map = BTreeMap::new();
    for (i, key) in layout.keys.iter().enumerate() {
        map.insert(*key, delta.rows(layout.offsets[i], key.dim()).into_owned());
    }
    map
}

/// Minimizes the graph cost from `initial` by damped Gauss-Newton steps.
/// Accepted steps never increase the (model-consistent) total cost.
pub fn lm_optimize(
    graph: &mut FactorGraph,
    initial: &Values,
    config: &LmConfig,
) -> Result<(Values, OptimizeReport)> {
    lm_optimize_with(graph, initial, config, &mut Linearizer::new())
}

/// [`lm_optimize`] reusing a persistent linearization cache.
pub fn lm_optimize_with(
    graph: &mut FactorGraph,
    initial: &Values,
    config: &LmConfig,
    linearizer: &mut Linearizer,
) -> Result<(Values, OptimizeReport)> {
    for factor in graph.factors() {
        for key in factor.keys() {
            if !initial.contains(&key) {
                return Err(Error::MissingValue(key));
            }
        }
    }

    let mut values = initial.clone();
    let mut lambda = config.lambda_init;
    let mut lins = linearizer.linearize_all(graph, &values, config.relin_threshold)?;
    let mut cost: f64 = lins.iter().map(|(l, _)| l.cost).sum();
    let initial_cost = cost;
    let mut accepted = 0usize;
    let mut termination = Termination::MaxIterations;

    for iter in 0..config.max_iterations {
        let layout = BlockLayout::new(&graph.keys());
        if layout.keys.is_empty() {
            termination = Termination::CostConverged;
            break;
        }
        let mut system = BlockSystem::new(layout);
        for (lin, _) in &lins {
            system.add_linearized(lin);
        }

        let unconstrained = system.structurally_unconstrained();
        if !unconstrained.is_empty() {
            return Err(Error::IndeterminateSystem { keys: unconstrained });
        }

        if system.gradient_inf_norm() < config.grad_tol {
            termination = Termination::GradientSmall;
            break;
        }

        let mut step_accepted = false;
        for _ in 0..config.max_inner {
            let Some(delta) = system.solve(lambda, config.dense_dim_threshold) else {
                lambda *= config.lambda_factor;
                if lambda > config.lambda_max {
                    return Err(Error::IndeterminateSystem { keys: system.null_space_keys() });
                }
                continue;
            };
            let deltas = split_delta(&system.layout, &delta);
            let candidate = values.retracted(&deltas);
            let new_cost = linearizer.cost_at(graph, &lins, &candidate)?;
            log::debug!(
                "lm iter={iter} cost={cost:.6e} candidate={new_cost:.6e} lambda={lambda:.3e} step_norm={:.3e}",
                delta.norm()
            );
            if new_cost.is_finite() && new_cost <= cost {
                values = candidate;
                let rel_change = (cost - new_cost) / cost.max(1e-300);
                cost = new_cost;
                lambda = (lambda / config.lambda_factor).max(config.lambda_min);
                accepted += 1;
                step_accepted = true;
                if rel_change < config.rel_cost_tol {
                    termination = Termination::CostConverged;
                }
                break;
            }
            lambda *= config.lambda_factor;
            if lambda > config.lambda_max {
                break;
            }
        }

        if !step_accepted {
            termination = Termination::Stalled;
            break;
        }
        if termination == Termination::CostConverged {
            break;
        }
        lins = linearizer.linearize_all(graph, &values, config.relin_threshold)?;
        cost = lins.iter().map(|(l, _)| l.cost).sum();
    }

    Ok((
        values,
        OptimizeReport { initial_cost, final_cost: cost, accepted_steps: accepted, termination },
    ))
}

/// Warm-started incremental update: merge new variables, optimize, and
/// return the refined assignment. The final cost never exceeds the
/// warm-start cost.
pub fn incremental_update(
    graph: &mut FactorGraph,
    values: &mut Values,
    new_values: Values,
    config: &LmConfig,
) -> Result<OptimizeReport> {
    for (k, v) in new_values.iter() {
        values.insert(*k, v.clone());
    }
    let (optimized, report) = lm_optimize(graph, values, config)?;
    *values = optimized;
    Ok(report)
}
