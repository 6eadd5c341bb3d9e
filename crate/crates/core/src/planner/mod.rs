//! Bootstrap, rescale and tile-transform placement.
//!
//! The greedy planner walks the graph in topological order tracking the live
//! chain index of every value:
//!
//! * Before an op that would push its input past `max_level`, the input is
//!   bootstrapped (once per value; later consumers reuse the result).
//! * At a join whose operands sit at `x > y`, the default is to rescale the
//!   low operand up to `x`, deferring bootstrap work to later ops. When the
//!   high side feeds at least `fanout_threshold` joins against lower operands,
//!   it is instead bootstrapped once and rescaled down to `y`, so every such
//!   join shares a single bootstrap.
//! * Operands with different tile shapes are repacked; the operand with the
//!   smaller producing subtree is transformed, ties transform the right one.
//!
//! [`plan_exhaustive`] finds a minimum-bootstrap plan by enumeration; it is
//! the reference the greedy planner is tested against.

mod exhaustive;

pub use exhaustive::{plan_exhaustive, EXHAUSTIVE_LIMIT};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::graph::{
    infer_meta, output_tile, topo_order, Graph, GraphError, Node, NodeId, OpKind, TensorMeta,
    TileShape,
};
use crate::levels::{self, propagate_with, LevelError, LevelRules, LevelTrace, PlannerOps};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("node `{node}` needs {cost} levels in one step but only {budget} fit between bootstrap and max_level")]
    Infeasible {
        node: NodeId,
        cost: u32,
        budget: u32,
    },
    #[error(
        "exhaustive planning supports at most {limit} level-consuming nodes, graph has {count}"
    )]
    TooLarge { count: usize, limit: usize },
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error("graph is already planned (node `{0}`)")]
    AlreadyPlanned(NodeId),
    #[error(transparent)]
    Level(#[from] LevelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    #[default]
    Greedy,
    ExhaustiveTiny,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "exhaustive" | "exhaustive-tiny" => Ok(Strategy::ExhaustiveTiny),
            _ => Err(format!("unknown planner strategy `{s}`")),
        }
    }
}

/// `fanout_threshold` value meaning "never bootstrap in advance".
pub const NO_FANOUT: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannerConfig {
    pub max_level: u32,
    pub bootstrap_reset_to: u32,
    pub fanout_threshold: u32,
    pub strategy: Strategy,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            max_level: 22,
            bootstrap_reset_to: 0,
            fanout_threshold: 2,
            strategy: Strategy::Greedy,
        }
    }
}

impl PlannerConfig {
    pub fn with_max_level(max_level: u32) -> Self {
        PlannerConfig {
            max_level,
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<(), PlanError> {
        if self.bootstrap_reset_to >= self.max_level {
            return Err(PlanError::Config(format!(
                "bootstrap_reset_to ({}) must be below max_level ({})",
                self.bootstrap_reset_to, self.max_level
            )));
        }
        if self.fanout_threshold == 0 {
            return Err(PlanError::Config("fanout_threshold must be >= 1".into()));
        }
        Ok(())
    }

    fn budget(&self) -> u32 {
        self.max_level - self.bootstrap_reset_to
    }
}

/// How a join's operands were brought to a common chain index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinFix {
    /// Operands already agreed.
    Aligned,
    /// The lower operand was rescaled up to the higher one.
    RescaleLow,
    /// The higher operand was bootstrapped and rescaled down.
    BootstrapHigh,
}

/// Chain indices at one join of the original graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JoinRecord {
    pub node: NodeId,
    pub op: &'static str,
    /// Operand indices as they arrived, before alignment.
    pub left_cidx: u32,
    pub right_cidx: u32,
    /// Common index the operands were aligned to.
    pub resolved: u32,
    pub fix: JoinFix,
}

/// A graph with planner ops inserted, plus counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub planned: Graph,
    pub bootstrap_count: usize,
    pub rescale_count: usize,
    pub transform_count: usize,
    pub trace: LevelTrace,
    pub joins: Vec<JoinRecord>,
    pub rules: LevelRules,
    pub config: PlannerConfig,
}

#[derive(Serialize)]
struct Counters<'a> {
    name: &'a str,
    bootstraps: usize,
    rescales: usize,
    transforms: usize,
    depth: u32,
    peak_cidx: u32,
    max_level: u32,
    joins: &'a [JoinRecord],
}

impl Plan {
    /// Wrap an already planned graph (e.g. one read from disk). Counters come
    /// from a census of planner ops; nothing is checked.
    pub fn from_planned(
        planned: Graph,
        rules: &LevelRules,
        config: &PlannerConfig,
    ) -> Result<Plan, PlanError> {
        let trace = propagate_with(
            &planned,
            rules,
            PlannerOps::Accept {
                reset_to: config.bootstrap_reset_to,
            },
        )?;
        let joins = planned
            .nodes()
            .filter(|n| n.op.is_join())
            .map(|n| {
                let (l, r) = (trace.cidx(&n.inputs[0]), trace.cidx(&n.inputs[1]));
                JoinRecord {
                    node: n.id.clone(),
                    op: n.op.name(),
                    left_cidx: l,
                    right_cidx: r,
                    resolved: l.max(r),
                    fix: JoinFix::Aligned,
                }
            })
            .collect();
        Ok(Plan {
            bootstrap_count: planned.count_ops(|o| *o == OpKind::Bootstrap),
            rescale_count: planned.count_ops(|o| matches!(o, OpKind::Rescale { .. })),
            transform_count: planned.count_ops(|o| matches!(o, OpKind::TileTransform { .. })),
            planned,
            trace,
            joins,
            rules: rules.clone(),
            config: config.clone(),
        })
    }

    /// JSON sidecar with the plan counters and per-join records.
    pub fn counters_json(&self) -> String {
        serde_json::to_string_pretty(&Counters {
            name: &self.planned.name,
            bootstraps: self.bootstrap_count,
            rescales: self.rescale_count,
            transforms: self.transform_count,
            depth: self.trace.depth,
            peak_cidx: self.trace.peak(),
            max_level: self.config.max_level,
            joins: &self.joins,
        })
        .expect("counters serialize")
    }
}

/// Plan `g` with the configured strategy.
pub fn plan(g: &Graph, rules: &LevelRules, cfg: &PlannerConfig) -> Result<Plan, PlanError> {
    match cfg.strategy {
        Strategy::Greedy => plan_greedy(g, rules, cfg),
        Strategy::ExhaustiveTiny => plan_exhaustive(g, rules, cfg),
    }
}

/// Greedy single-pass planning.
pub fn plan_greedy(g: &Graph, rules: &LevelRules, cfg: &PlannerConfig) -> Result<Plan, PlanError> {
    Engine::new(g, rules, cfg, None)?.run()
}

// ---------------------------------------------------------------------------
// Materialisation engine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Value {
    id: NodeId,
    cidx: u32,
    tile: TileShape,
}

pub(crate) struct Engine<'a> {
    g: &'a Graph,
    rules: &'a LevelRules,
    cfg: &'a PlannerConfig,
    meta: std::collections::BTreeMap<NodeId, TensorMeta>,
    /// Outputs forced through a bootstrap (exhaustive mode). `None` is greedy.
    forced: Option<&'a BTreeSet<NodeId>>,
    /// Joins each value feeds against a statically lower operand.
    mismatched_fanout: HashMap<NodeId, usize>,
    ids: HashSet<NodeId>,
    nodes: Vec<Node>,
    values: HashMap<NodeId, Value>,
    boots: HashMap<NodeId, Value>,
    rescales: HashMap<(NodeId, u32), Value>,
    transforms: HashMap<(NodeId, TileShape), Value>,
    joins: Vec<JoinRecord>,
    subtree: HashMap<NodeId, usize>,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(
        g: &'a Graph,
        rules: &'a LevelRules,
        cfg: &'a PlannerConfig,
        forced: Option<&'a BTreeSet<NodeId>>,
    ) -> Result<Self, PlanError> {
        cfg.check()?;
        if let Some(n) = g.nodes().find(|n| n.op.is_planner_op()) {
            return Err(PlanError::AlreadyPlanned(n.id.clone()));
        }
        let trace = levels::propagate(g, rules)?;
        let mut mismatched_fanout: HashMap<NodeId, usize> = HashMap::new();
        for node in g.nodes().filter(|n| n.op.is_join()) {
            let (l, r) = (&node.inputs[0], &node.inputs[1]);
            let (cl, cr) = (trace.cidx(l), trace.cidx(r));
            if cl > cr {
                *mismatched_fanout.entry(l.clone()).or_default() += 1;
            } else if cr > cl {
                *mismatched_fanout.entry(r.clone()).or_default() += 1;
            }
        }
        Ok(Engine {
            g,
            rules,
            cfg,
            meta: infer_meta(g)?,
            forced,
            mismatched_fanout,
            ids: g.nodes().map(|n| n.id.clone()).collect(),
            nodes: Vec::with_capacity(g.len()),
            values: HashMap::new(),
            boots: HashMap::new(),
            rescales: HashMap::new(),
            transforms: HashMap::new(),
            joins: Vec::new(),
            subtree: HashMap::new(),
        })
    }

    fn fresh_id(&mut self, base: String) -> NodeId {
        let mut id = base.clone();
        let mut n = 1;
        while self.ids.contains(&id) {
            n += 1;
            id = format!("{base}{n}");
        }
        self.ids.insert(id.clone());
        id
    }

    fn emit(&mut self, id: NodeId, op: OpKind, inputs: Vec<NodeId>) {
        self.nodes.push(Node { id, op, inputs });
    }

    fn bootstrap(&mut self, v: &Value) -> Value {
        if let Some(b) = self.boots.get(&v.id) {
            return b.clone();
        }
        let id = self.fresh_id(format!("{}#boot", v.id));
        self.emit(id.clone(), OpKind::Bootstrap, vec![v.id.clone()]);
        let b = Value {
            id,
            cidx: self.cfg.bootstrap_reset_to,
            tile: v.tile,
        };
        self.boots.insert(v.id.clone(), b.clone());
        b
    }

    fn rescale(&mut self, v: &Value, target: u32) -> Value {
        debug_assert!(target >= v.cidx);
        if target == v.cidx {
            return v.clone();
        }
        let key = (v.id.clone(), target);
        if let Some(r) = self.rescales.get(&key) {
            return r.clone();
        }
        let id = self.fresh_id(format!("{}#rs{target}", v.id));
        self.emit(
            id.clone(),
            OpKind::Rescale {
                target_cidx: target,
            },
            vec![v.id.clone()],
        );
        let r = Value {
            id,
            cidx: target,
            tile: v.tile,
        };
        self.rescales.insert(key, r.clone());
        r
    }

    fn transform(&mut self, v: &Value, target: TileShape) -> Value {
        let key = (v.id.clone(), target);
        if let Some(t) = self.transforms.get(&key) {
            return t.clone();
        }
        let id = self.fresh_id(format!("{}#tt{target}", v.id));
        self.emit(
            id.clone(),
            OpKind::TileTransform {
                target_tile: target,
            },
            vec![v.id.clone()],
        );
        let t = Value {
            id,
            cidx: v.cidx,
            tile: target,
        };
        self.transforms.insert(key, t.clone());
        t
    }

    /// Current best copy of `id`: its bootstrap if one was already emitted.
    fn live(&self, id: &str) -> Value {
        self.boots.get(id).unwrap_or(&self.values[id]).clone()
    }

    fn subtree_size(&mut self, id: &str) -> usize {
        if let Some(&n) = self.subtree.get(id) {
            return n;
        }
        let n = self.g.ancestors(id).len() + 1;
        self.subtree.insert(id.to_string(), n);
        n
    }

    fn infeasible(&self, node: &str, cost: u32) -> PlanError {
        PlanError::Infeasible {
            node: node.to_string(),
            cost,
            budget: self.cfg.budget(),
        }
    }

    /// Make `v` able to absorb `cost` more levels.
    fn make_room(&mut self, node: &str, v: Value, cost: u32) -> Result<Value, PlanError> {
        if cost > self.cfg.budget() {
            return Err(self.infeasible(node, cost));
        }
        if v.cidx + cost <= self.cfg.max_level {
            return Ok(v);
        }
        if self.forced.is_some() {
            // Forced bootstraps were chosen up front; running out here means
            // the chosen set is not a feasible plan.
            return Err(self.infeasible(node, v.cidx + cost));
        }
        Ok(self.bootstrap(&v))
    }

    fn join(&mut self, node: &Node, extra_cost: u32) -> Result<(Value, Value), PlanError> {
        let (lsrc, rsrc) = (&node.inputs[0], &node.inputs[1]);
        let mut l = self.live(lsrc);
        let mut r = self.live(rsrc);
        if extra_cost > 0 {
            l = self.make_room(&node.id, l, extra_cost)?;
            r = if rsrc == lsrc {
                l.clone()
            } else {
                self.make_room(&node.id, r, extra_cost)?
            };
        }
        let (lc, rc) = (l.cidx, r.cidx);
        let mut fix = JoinFix::Aligned;
        if lc != rc {
            let left_high = lc > rc;
            let (high_src, high, low) = if left_high {
                (lsrc, l.clone(), r.clone())
            } else {
                (rsrc, r.clone(), l.clone())
            };
            let fanout = self.mismatched_fanout.get(high_src).copied().unwrap_or(0);
            let (high, low) =
                if self.forced.is_none() && fanout as u64 >= self.cfg.fanout_threshold as u64 {
                    fix = JoinFix::BootstrapHigh;
                    let booted = self.bootstrap(&high);
                    if booted.cidx <= low.cidx {
                        (self.rescale(&booted, low.cidx), low)
                    } else {
                        let raised = self.rescale(&low, booted.cidx);
                        (booted, raised)
                    }
                } else {
                    fix = JoinFix::RescaleLow;
                    let raised = self.rescale(&low, high.cidx);
                    (high, raised)
                };
            (l, r) = if left_high { (high, low) } else { (low, high) };
        }
        if l.tile != r.tile {
            let (ls, rs) = (self.subtree_size(lsrc), self.subtree_size(rsrc));
            if ls < rs {
                l = self.transform(&l, r.tile);
            } else {
                r = self.transform(&r, l.tile);
            }
        }
        self.joins.push(JoinRecord {
            node: node.id.clone(),
            op: node.op.name(),
            left_cidx: lc,
            right_cidx: rc,
            resolved: l.cidx,
            fix,
        });
        Ok((l, r))
    }

    pub(crate) fn run(mut self) -> Result<Plan, PlanError> {
        for id in topo_order(self.g)? {
            let node = self.g.node(&id).unwrap();
            let out_dims = self.meta[&id].dims.clone();
            let value = match &node.op {
                OpKind::Input { .. } => {
                    self.emit(id.clone(), node.op.clone(), Vec::new());
                    Value {
                        id: id.clone(),
                        cidx: 0,
                        tile: output_tile(&node.op, &[], &out_dims),
                    }
                }
                OpKind::Add | OpKind::Mul => {
                    let cost = if node.op == OpKind::Mul {
                        self.rules.cc_mult_cost
                    } else {
                        levels::ADD_COST
                    };
                    let (l, r) = self.join(node, cost)?;
                    self.emit(
                        id.clone(),
                        node.op.clone(),
                        vec![l.id.clone(), r.id.clone()],
                    );
                    Value {
                        id: id.clone(),
                        cidx: l.cidx + cost,
                        tile: l.tile,
                    }
                }
                op => {
                    let cost = self.rules.unary_cost(op).ok_or_else(|| {
                        PlanError::Level(LevelError::NotHeFriendly {
                            node: id.clone(),
                            op: op.name(),
                        })
                    })?;
                    let input = self.live(&node.inputs[0]);
                    let input = self.make_room(&id, input, cost)?;
                    self.emit(id.clone(), op.clone(), vec![input.id.clone()]);
                    Value {
                        id: id.clone(),
                        cidx: input.cidx + cost,
                        tile: output_tile(op, &[input.tile], &out_dims),
                    }
                }
            };
            let value = match self.forced {
                Some(set) if set.contains(&id) => self.bootstrap(&value),
                _ => value,
            };
            self.values.insert(id, value);
        }
        let planned = Graph::new(self.g.name.clone(), self.nodes, self.g.outputs().to_vec())?;
        let mut plan = Plan::from_planned(planned, self.rules, self.cfg)?;
        plan.joins = self.joins;
        Ok(plan)
    }
}

// ---------------------------------------------------------------------------
// Plan verification
// ---------------------------------------------------------------------------

/// A broken plan invariant.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanViolation {
    #[error("node `{node}` sits at cidx {cidx}, above max_level {max_level}")]
    OverBudget {
        node: NodeId,
        cidx: u32,
        max_level: u32,
    },
    #[error("join `{node}` has operands at cidx {left} and {right}")]
    LevelMismatch { node: NodeId, left: u32, right: u32 },
    #[error("join `{node}` has operands packed as {left} and {right}")]
    TileMismatch {
        node: NodeId,
        left: TileShape,
        right: TileShape,
    },
    #[error("rescale `{node}` lowers cidx {from} to {to}")]
    DownwardRescale { node: NodeId, from: u32, to: u32 },
    #[error("plan counters disagree with the planned graph: {0}")]
    Counters(String),
    #[error("stored trace disagrees with re-propagation at `{0}`")]
    Trace(NodeId),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Re-propagate the planned graph and check every plan invariant.
pub fn verify_plan(plan: &Plan) -> Result<(), PlanViolation> {
    let g = &plan.planned;
    let census = Plan::from_planned(g.clone(), &plan.rules, &plan.config)?;
    let trace = &census.trace;
    if let Some((id, _)) = trace
        .cidx_of
        .iter()
        .find(|(id, c)| plan.trace.cidx_of.get(*id) != Some(c))
    {
        return Err(PlanViolation::Trace(id.clone()));
    }
    if (
        census.bootstrap_count,
        census.rescale_count,
        census.transform_count,
    ) != (
        plan.bootstrap_count,
        plan.rescale_count,
        plan.transform_count,
    ) {
        return Err(PlanViolation::Counters(format!(
            "census {}/{}/{} vs recorded {}/{}/{}",
            census.bootstrap_count,
            census.rescale_count,
            census.transform_count,
            plan.bootstrap_count,
            plan.rescale_count,
            plan.transform_count
        )));
    }
    let meta = infer_meta(g).map_err(PlanError::from)?;
    for id in topo_order(g).map_err(PlanError::from)? {
        let node = g.node(&id).unwrap();
        let cidx = trace.cidx(&id);
        // The operand of a bootstrap may sit exactly at the budget; no node
        // may exceed it.
        if cidx > plan.config.max_level {
            return Err(PlanViolation::OverBudget {
                node: id,
                cidx,
                max_level: plan.config.max_level,
            });
        }
        match &node.op {
            op if op.is_join() => {
                let (l, r) = (&node.inputs[0], &node.inputs[1]);
                let (cl, cr) = (trace.cidx(l), trace.cidx(r));
                if cl != cr {
                    return Err(PlanViolation::LevelMismatch {
                        node: id,
                        left: cl,
                        right: cr,
                    });
                }
                if meta[l].tile != meta[r].tile {
                    return Err(PlanViolation::TileMismatch {
                        node: id,
                        left: meta[l].tile,
                        right: meta[r].tile,
                    });
                }
            }
            OpKind::Rescale { target_cidx } => {
                let from = trace.cidx(&node.inputs[0]);
                if *target_cidx < from {
                    return Err(PlanViolation::DownwardRescale {
                        node: id,
                        from,
                        to: *target_cidx,
                    });
                }
            }
            _ => {}
        }
    }
    Ok(())
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} bootstraps, {} rescales, {} transforms, depth {}",
            self.planned.name,
            self.bootstrap_count,
            self.rescale_count,
            self.transform_count,
            self.trace.depth
        )
    }
}
