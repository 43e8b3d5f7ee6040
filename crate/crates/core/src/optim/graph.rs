use std::collections::BTreeSet;

use super::factor::GraphFactor;
use super::key::VariableKey;
use super::values::Values;
use crate::Result;

/// Container of heterogeneous factors.
#[derive(Default)]
pub struct FactorGraph {
    factors: Vec<GraphFactor>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, factor: GraphFactor) {
        self.factors.push(factor);
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factors(&self) -> &[GraphFactor] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut Vec<GraphFactor> {
        &mut self.factors
    }

    /// All keys referenced by at least one factor.
    pub fn keys(&self) -> BTreeSet<VariableKey> {
        let mut keys = BTreeSet::new();
        for f in &self.factors {
            keys.extend(f.keys());
        }
        keys
    }

    /// Removes and returns every factor touching any of `keys`.
    pub fn take_touching(&mut self, keys: &BTreeSet<VariableKey>) -> Vec<GraphFactor> {
        let mut taken = Vec::new();
        let mut kept = Vec::with_capacity(self.factors.len());
        for f in self.factors.drain(..) {
            if f.keys().iter().any(|k| keys.contains(k)) {
                taken.push(f);
            } else {
                kept.push(f);
            }
        }
        self.factors = kept;
        taken
    }

    /// Total cost, accumulated factor by factor.
    pub fn cost(&self, values: &Values) -> Result<f64> {
        let mut total = 0.0;
        for f in &self.factors {
            total += f.cost(values)?;
        }
        Ok(total)
    }
}
