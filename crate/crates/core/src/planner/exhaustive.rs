//! Minimum-bootstrap planning by enumeration.
//!
//! Lower chain indices never hurt feasibility, so a bootstrapped value can
//! serve every consumer of the original. A plan is therefore characterised by
//! the set of nodes whose outputs get bootstrapped. Sets are tried in order of
//! size (lexicographic within a size); the first feasible one is minimal.

use std::collections::{BTreeSet, HashMap};

use crate::graph::{topo_order, Graph, NodeId, OpKind};
use crate::levels::{LevelError, LevelRules, ADD_COST};

use super::{Engine, Plan, PlanError, PlannerConfig};

/// Largest number of level-consuming nodes the enumeration accepts.
pub const EXHAUSTIVE_LIMIT: usize = 12;

pub fn plan_exhaustive(
    g: &Graph,
    rules: &LevelRules,
    cfg: &PlannerConfig,
) -> Result<Plan, PlanError> {
    cfg.check()?;
    let order = topo_order(g)?;
    let step: HashMap<&str, u32> = order
        .iter()
        .map(|id| {
            let node = g.node(id).unwrap();
            let cost = match &node.op {
                OpKind::Input { .. } => Ok(0),
                OpKind::Add => Ok(ADD_COST),
                OpKind::Mul => Ok(rules.cc_mult_cost),
                op => rules
                    .unary_cost(op)
                    .ok_or_else(|| LevelError::NotHeFriendly {
                        node: id.clone(),
                        op: op.name(),
                    }),
            };
            cost.map(|c| (id.as_str(), c))
        })
        .collect::<Result<_, _>>()?;
    let consuming = step.values().filter(|&&c| c > 0).count();
    if consuming > EXHAUSTIVE_LIMIT {
        return Err(PlanError::TooLarge {
            count: consuming,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    if let Some((id, &cost)) = step.iter().find(|(_, &c)| c > cfg.budget()) {
        return Err(PlanError::Infeasible {
            node: id.to_string(),
            cost,
            budget: cfg.budget(),
        });
    }

    let consumers = g.consumers();
    let candidates: Vec<&str> = order
        .iter()
        .map(String::as_str)
        .filter(|id| !consumers[id].is_empty())
        .collect();

    let feasible = |chosen: &[usize]| -> bool {
        let set: BTreeSet<&str> = chosen.iter().map(|&i| candidates[i]).collect();
        let mut level: HashMap<&str, u32> = HashMap::new();
        for id in &order {
            let node = g.node(id).unwrap();
            let base = node
                .inputs
                .iter()
                .map(|i| level[i.as_str()])
                .max()
                .unwrap_or(0);
            let out = base + step[id.as_str()];
            if out > cfg.max_level {
                return false;
            }
            let out = if set.contains(id.as_str()) {
                cfg.bootstrap_reset_to
            } else {
                out
            };
            level.insert(id, out);
        }
        true
    };

    for size in 0..=candidates.len() {
        if let Some(chosen) = first_combination(candidates.len(), size, &feasible) {
            let set: BTreeSet<NodeId> = chosen.iter().map(|&i| candidates[i].to_string()).collect();
            return Engine::new(g, rules, cfg, Some(&set))?.run();
        }
    }
    unreachable!("bootstrapping every value is always feasible once single steps fit")
}

/// First `k`-subset of `0..n` in lexicographic order accepted by `pred`.
fn first_combination(n: usize, k: usize, pred: &dyn Fn(&[usize]) -> bool) -> Option<Vec<usize>> {
    if k > n {
        return None;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if pred(&idx) {
            return Some(idx);
        }
        // Advance to the next combination.
        let i = (0..k).rev().find(|&i| idx[i] != i + n - k)?;
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::first_combination;

    #[test]
    fn enumerates_all_combinations() {
        let seen = std::cell::RefCell::new(Vec::new());
        first_combination(5, 3, &|c: &[usize]| {
            seen.borrow_mut().push(c.to_vec());
            false
        });
        let seen = seen.into_inner();
        assert_eq!(seen.len(), 10);
        assert_eq!(seen[0], [0, 1, 2]);
        assert_eq!(seen[9], [2, 3, 4]);
        assert_eq!(
            first_combination(3, 0, &|c: &[usize]| c.is_empty()),
            Some(vec![])
        );
        assert_eq!(first_combination(2, 3, &|_: &[usize]| true), None);
    }
}
