//! Linear CPU-time model over plan op counts.
//!
//! A plan is priced as `sum(count(class) * weight(class))`, with weights in
//! seconds of accumulated CPU time per op instance. Weights can be fitted to
//! observed timings with non-negative least squares.

mod nnls;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Add;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::arch::{self, ArchConfig, Variant};
use crate::graph::OpKind;
use crate::levels::LevelRules;
use crate::planner::{plan, Plan, PlanError, PlannerConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("op-count matrix has rank {rank} but {free} weights are free")]
    RankDeficient { rank: usize, free: usize },
    #[error("no non-negative weights explain the observations: {0}")]
    InfeasibleNonNegativity(String),
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("invalid cost weights: {0}")]
    Weights(String),
}

/// Priced op classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    Bootstrap,
    Rescale,
    Transform,
    CcMult,
    CpMult,
    Add,
    /// One level of polynomial activation evaluation.
    #[serde(rename = "polyact_per_level")]
    PolyActLevel,
}

impl OpClass {
    pub const ALL: [OpClass; 7] = [
        OpClass::Bootstrap,
        OpClass::Rescale,
        OpClass::Transform,
        OpClass::CcMult,
        OpClass::CpMult,
        OpClass::Add,
        OpClass::PolyActLevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpClass::Bootstrap => "bootstrap",
            OpClass::Rescale => "rescale",
            OpClass::Transform => "transform",
            OpClass::CcMult => "cc_mult",
            OpClass::CpMult => "cp_mult",
            OpClass::Add => "add",
            OpClass::PolyActLevel => "polyact_per_level",
        }
    }
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown op class `{s}`"))
    }
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Seconds of CPU time per op instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostWeights {
    pub w_bootstrap: f64,
    pub w_rescale: f64,
    pub w_transform: f64,
    pub w_cc_mult: f64,
    pub w_cp_mult: f64,
    pub w_add: f64,
    pub w_polyact_per_level: f64,
}

impl CostWeights {
    /// Uncalibrated placeholder magnitudes (arbitrary; bootstrap dominates).
    pub fn fallback() -> Self {
        CostWeights {
            w_bootstrap: 25e-3,
            w_rescale: 0.1e-3,
            w_transform: 1e-3,
            w_cc_mult: 0.5e-3,
            w_cp_mult: 0.5e-3,
            w_add: 0.1e-3,
            w_polyact_per_level: 0.5e-3,
        }
    }

    /// Fit of [`REFERENCE_CPU_HOURS`] over default plans; see
    /// [`reference_calibration`].
    pub fn calibrated() -> Self {
        CALIBRATED
    }

    pub fn zero() -> Self {
        CostWeights {
            w_bootstrap: 0.0,
            w_rescale: 0.0,
            w_transform: 0.0,
            w_cc_mult: 0.0,
            w_cp_mult: 0.0,
            w_add: 0.0,
            w_polyact_per_level: 0.0,
        }
    }

    pub fn get(&self, class: OpClass) -> f64 {
        match class {
            OpClass::Bootstrap => self.w_bootstrap,
            OpClass::Rescale => self.w_rescale,
            OpClass::Transform => self.w_transform,
            OpClass::CcMult => self.w_cc_mult,
            OpClass::CpMult => self.w_cp_mult,
            OpClass::Add => self.w_add,
            OpClass::PolyActLevel => self.w_polyact_per_level,
        }
    }

    pub fn set(&mut self, class: OpClass, value: f64) {
        let slot = match class {
            OpClass::Bootstrap => &mut self.w_bootstrap,
            OpClass::Rescale => &mut self.w_rescale,
            OpClass::Transform => &mut self.w_transform,
            OpClass::CcMult => &mut self.w_cc_mult,
            OpClass::CpMult => &mut self.w_cp_mult,
            OpClass::Add => &mut self.w_add,
            OpClass::PolyActLevel => &mut self.w_polyact_per_level,
        };
        *slot = value;
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut w = *self;
        for c in OpClass::ALL {
            w.set(c, self.get(c) * alpha);
        }
        w
    }

    /// Non-negative, finite, and bootstraps strictly dearer than rescales.
    pub fn check(&self) -> Result<(), CostError> {
        for c in OpClass::ALL {
            let w = self.get(c);
            if !w.is_finite() || w < 0.0 {
                return Err(CostError::Weights(format!("w_{c} = {w}")));
            }
        }
        if self.w_bootstrap <= self.w_rescale {
            return Err(CostError::Weights(format!(
                "w_bootstrap ({}) must exceed w_rescale ({})",
                self.w_bootstrap, self.w_rescale
            )));
        }
        Ok(())
    }
}

const CALIBRATED: CostWeights = CostWeights {
    w_bootstrap: 1207.9210818316021,
    w_rescale: 0.0,
    w_transform: 1966.79956235474,
    w_cc_mult: 0.0,
    w_cp_mult: 437.86516940861566,
    w_add: 0.0,
    w_polyact_per_level: 0.0,
};

/// Reference accumulated CPU time (hours) of full ResNet50 inference:
/// `(poly_degree, variant, hours)`.
pub const REFERENCE_CPU_HOURS: [(u32, Variant, f64); 6] = [
    (2, Variant::Reference, 12.33),
    (2, Variant::SharedSourceDirac, 10.40),
    (4, Variant::Reference, 11.36),
    (4, Variant::SharedSourceDirac, 8.69),
    (8, Variant::Reference, 18.06),
    (8, Variant::SharedSourceDirac, 13.38),
];

/// Weights fitted by [`reference_calibration`]; the rest are held at zero.
///
/// Rescale and add counts are collinear with the transform count across the
/// two variants, so only one of them can be free. Larger free sets reach a
/// lower residual only by driving `w_bootstrap` to zero.
pub const CALIBRATION_FREE: [OpClass; 3] =
    [OpClass::Bootstrap, OpClass::Transform, OpClass::CpMult];

/// Plans behind [`REFERENCE_CPU_HOURS`] as observations.
pub fn reference_observations(
    rules: &LevelRules,
    cfg: &PlannerConfig,
) -> Result<Vec<Observation>, PlanError> {
    REFERENCE_CPU_HOURS
        .iter()
        .map(|&(degree, variant, hours)| {
            let g = arch::build(&ArchConfig::resnet50(variant, degree))
                .expect("ResNet50 presets are valid");
            Ok(Observation::new(&plan(&g, rules, cfg)?, hours * 3600.0))
        })
        .collect()
}

/// Fit [`CALIBRATION_FREE`] to [`REFERENCE_CPU_HOURS`] under default rules.
pub fn reference_calibration() -> Calibration {
    let obs = reference_observations(&LevelRules::default(), &PlannerConfig::default())
        .expect("default planning of the presets succeeds");
    calibrate(&obs, &CALIBRATION_FREE, &CostWeights::zero()).expect("reference fit is well posed")
}

// ---------------------------------------------------------------------------
// Census and pricing
// ---------------------------------------------------------------------------

/// Op counts per class.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct OpCensus(pub BTreeMap<OpClass, u64>);

impl OpCensus {
    pub fn of(plan: &Plan) -> Self {
        let mut counts: BTreeMap<OpClass, u64> = OpClass::ALL.iter().map(|&c| (c, 0)).collect();
        for node in plan.planned.nodes() {
            let (class, n) = match &node.op {
                OpKind::Bootstrap => (OpClass::Bootstrap, 1),
                OpKind::Rescale { .. } => (OpClass::Rescale, 1),
                OpKind::TileTransform { .. } => (OpClass::Transform, 1),
                OpKind::Mul => (OpClass::CcMult, 1),
                OpKind::Conv { .. } | OpKind::Dense { .. } | OpKind::AvgPool { .. } => {
                    (OpClass::CpMult, 1)
                }
                OpKind::Add => (OpClass::Add, 1),
                OpKind::PolyAct { degree } => {
                    // A generic evaluator forms every power x^2..x^d once.
                    *counts.get_mut(&OpClass::CcMult).unwrap() += u64::from(*degree - 1);
                    (
                        OpClass::PolyActLevel,
                        plan.rules.polyact_depth(*degree) as u64,
                    )
                }
                _ => continue,
            };
            *counts.get_mut(&class).unwrap() += n;
        }
        OpCensus(counts)
    }

    pub fn get(&self, class: OpClass) -> u64 {
        self.0.get(&class).copied().unwrap_or(0)
    }
}

impl Add for &OpCensus {
    type Output = OpCensus;

    fn add(self, rhs: &OpCensus) -> OpCensus {
        let mut out = self.clone();
        for (&c, &n) in &rhs.0 {
            *out.0.entry(c).or_default() += n;
        }
        out
    }
}

/// Count and subtotal for one op class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineItem {
    pub count: u64,
    pub subtotal: f64,
}

/// Priced plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub variant_name: String,
    pub total_cpu_seconds: f64,
    pub breakdown: BTreeMap<OpClass, LineItem>,
}

impl CostReport {
    pub fn count(&self, class: OpClass) -> u64 {
        self.breakdown.get(&class).map_or(0, |l| l.count)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// `op_class,count,subtotal_seconds` rows followed by a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("op_class,count,subtotal_seconds\n");
        for (class, item) in &self.breakdown {
            out.push_str(&format!("{class},{},{}\n", item.count, item.subtotal));
        }
        out.push_str(&format!("total,,{}\n", self.total_cpu_seconds));
        out
    }
}

/// Price a census.
pub fn price_census(name: &str, census: &OpCensus, w: &CostWeights) -> CostReport {
    let breakdown: BTreeMap<OpClass, LineItem> = OpClass::ALL
        .iter()
        .map(|&c| {
            let count = census.get(c);
            (
                c,
                LineItem {
                    count,
                    subtotal: count as f64 * w.get(c),
                },
            )
        })
        .collect();
    CostReport {
        variant_name: name.to_string(),
        total_cpu_seconds: breakdown.values().map(|l| l.subtotal).sum(),
        breakdown,
    }
}

/// Price a plan.
pub fn price(p: &Plan, w: &CostWeights) -> CostReport {
    price_census(&p.planned.name, &OpCensus::of(p), w)
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// An observed CPU time for a known op census.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub census: OpCensus,
    pub cpu_seconds: f64,
}

impl Observation {
    pub fn new(plan: &Plan, cpu_seconds: f64) -> Self {
        Observation {
            census: OpCensus::of(plan),
            cpu_seconds,
        }
    }
}

/// Fitted weights and fit quality.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub weights: CostWeights,
    /// Euclidean norm of the residual, in seconds.
    pub residual: f64,
    /// Per-observation `(predicted - observed) / observed`.
    pub relative_errors: Vec<f64>,
}

/// Fit the `free` weights by non-negative least squares. Classes not in
/// `free` keep their value from `fixed`, and their cost is subtracted from
/// each observation before fitting.
pub fn calibrate(
    observations: &[Observation],
    free: &[OpClass],
    fixed: &CostWeights,
) -> Result<Calibration, CostError> {
    if observations.len() < free.len() || free.is_empty() {
        return Err(CostError::TooFewObservations {
            needed: free.len().max(1),
            got: observations.len(),
        });
    }
    let mut base = *fixed;
    for &c in free {
        base.set(c, 0.0);
    }
    let rows = observations.len();
    let mut a = DMatrix::<f64>::zeros(rows, free.len());
    let mut b = DVector::<f64>::zeros(rows);
    for (i, obs) in observations.iter().enumerate() {
        if !obs.cpu_seconds.is_finite() || obs.cpu_seconds < 0.0 {
            return Err(CostError::InfeasibleNonNegativity(format!(
                "observation {i} has cpu time {}",
                obs.cpu_seconds
            )));
        }
        for (j, &c) in free.iter().enumerate() {
            a[(i, j)] = obs.census.get(c) as f64;
        }
        b[i] = obs.cpu_seconds - price_census("", &obs.census, &base).total_cpu_seconds;
    }
    let rank = a.clone().svd(false, false).rank(1e-10 * a.norm().max(1.0));
    if rank < free.len() {
        return Err(CostError::RankDeficient {
            rank,
            free: free.len(),
        });
    }
    if b.iter().all(|&v| v <= 0.0) && b.iter().any(|&v| v < 0.0) {
        return Err(CostError::InfeasibleNonNegativity(
            "fixed weights alone exceed every observation".into(),
        ));
    }
    // Fit relative residuals: scale every row by its observation.
    let mut a_rel = a.clone();
    let mut b_rel = b.clone();
    for (i, obs) in observations.iter().enumerate() {
        if obs.cpu_seconds > 0.0 {
            a_rel.row_mut(i).scale_mut(1.0 / obs.cpu_seconds);
            b_rel[i] /= obs.cpu_seconds;
        }
    }
    let x = nnls::solve(&a_rel, &b_rel);
    let mut weights = base;
    for (j, &c) in free.iter().enumerate() {
        weights.set(c, x[j]);
    }
    let predicted = &a * &x;
    let residual = (&predicted - &b).norm();
    let relative_errors = observations
        .iter()
        .map(|obs| {
            let p = price_census("", &obs.census, &weights).total_cpu_seconds;
            (p - obs.cpu_seconds) / obs.cpu_seconds
        })
        .collect();
    Ok(Calibration {
        weights,
        residual,
        relative_errors,
    })
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub bootstraps: u64,
    pub rescales: u64,
    pub transforms: u64,
    pub cpu_seconds: f64,
    /// Reference CPU time over this row's CPU time.
    pub ratio_vs_ref: f64,
    /// Reference bootstrap count over this row's.
    pub bootstrap_ratio_vs_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

fn ratio(reference: f64, this: f64) -> f64 {
    if this == 0.0 {
        if reference == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        reference / this
    }
}

/// Compare reports against the first one.
pub fn compare(reports: &[CostReport]) -> Comparison {
    let Some(first) = reports.first() else {
        return Comparison { rows: Vec::new() };
    };
    let ref_boots = first.count(OpClass::Bootstrap) as f64;
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            variant: r.variant_name.clone(),
            bootstraps: r.count(OpClass::Bootstrap),
            rescales: r.count(OpClass::Rescale),
            transforms: r.count(OpClass::Transform),
            cpu_seconds: r.total_cpu_seconds,
            ratio_vs_ref: ratio(first.total_cpu_seconds, r.total_cpu_seconds),
            bootstrap_ratio_vs_ref: ratio(ref_boots, r.count(OpClass::Bootstrap) as f64),
        })
        .collect();
    Comparison { rows }
}

pub const COMPARISON_CSV_HEADER: &str =
    "variant,bootstraps,rescales,transforms,cpu_seconds,ratio_vs_ref,bootstrap_ratio_vs_ref";

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{COMPARISON_CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }
}

impl ComparisonRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6}",
            self.variant,
            self.bootstraps,
            self.rescales,
            self.transforms,
            self.cpu_seconds,
            self.ratio_vs_ref,
            self.bootstrap_ratio_vs_ref
        )
    }
}
