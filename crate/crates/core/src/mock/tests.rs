use super::*;
use crate::arch::{build, toy_preset};
use crate::graph::Node;
use crate::levels::LevelRules;
use crate::planner::{plan, PlannerConfig};

fn toy_plan(name: &str) -> Plan {
    let g = build(&toy_preset(name).unwrap()).unwrap();
    plan(&g, &LevelRules::default(), &PlannerConfig::default()).unwrap()
}

fn run(p: &Plan, opts: &ExecOptions) -> Result<Execution, MockError> {
    let inputs = random_inputs(&p.planned, 1);
    let weights = random_weights(&p.planned, 2)?;
    execute(p, &inputs, &weights, opts)
}

#[test]
fn identity_graph_is_bit_exact() {
    let g = Graph::new(
        "id",
        [
            Node::new(
                "x",
                OpKind::Input {
                    dims: vec![2, 3, 3],
                    tile: None,
                },
                &[],
            ),
            Node::new("out", OpKind::Output, &["x"]),
        ],
        vec!["out".into()],
    )
    .unwrap();
    let p = plan(&g, &LevelRules::default(), &PlannerConfig::default()).unwrap();
    let inputs = random_inputs(&g, 5);
    let exec = execute(&p, &inputs, &Tensors::new(), &ExecOptions::default()).unwrap();
    assert_eq!(exec.outputs["out"], inputs["x"]);
}

#[test]
fn toy_ssd_matches_cleartext_and_static_trace() {
    let p = toy_plan("toy-ssd");
    let inputs = random_inputs(&p.planned, 3);
    let weights = random_weights(&p.planned, 4).unwrap();
    let exec = execute(&p, &inputs, &weights, &ExecOptions::default()).unwrap();
    let clear = cleartext_reference(&p.planned, &inputs, &weights, &PolyTable::shipped()).unwrap();
    for (id, t) in &exec.outputs {
        assert!(t.max_abs_diff(&clear[id]) < 1e-4);
    }
    assert_eq!(exec.runtime_trace, p.trace);
    assert_eq!(exec.census, OpCensus::of(&p));
}

#[test]
fn stripped_bootstraps_overflow() {
    let p = toy_plan("toy-ref");
    assert!(p.bootstrap_count > 0);
    let g = p.planned.bypass(|op| *op == OpKind::Bootstrap).unwrap();
    let broken = Plan::from_planned(g, &p.rules, &p.config).unwrap();
    let err = run(&broken, &ExecOptions::default()).unwrap_err();
    assert!(
        matches!(err, MockError::LevelOverflow { max_level: 22, .. }),
        "{err}"
    );
}

#[test]
fn stripped_rescales_break_joins() {
    let p = toy_plan("toy-ref");
    assert!(p.rescale_count > 0);
    let g = p
        .planned
        .bypass(|op| matches!(op, OpKind::Rescale { .. }))
        .unwrap();
    let broken = Plan::from_planned(g, &p.rules, &p.config).unwrap();
    let err = run(&broken, &ExecOptions::default()).unwrap_err();
    assert!(matches!(err, MockError::JoinMismatch { .. }), "{err}");
}

#[test]
fn noise_is_seeded_and_bounded_per_bootstrap() {
    let p = toy_plan("toy-ssd");
    let noisy = |seed| ExecOptions {
        noise: NoiseConfig {
            epsilon: 1e-3,
            seed,
        },
        ..ExecOptions::default()
    };
    let a = run(&p, &noisy(7)).unwrap();
    assert_eq!(a, run(&p, &noisy(7)).unwrap());
    assert_ne!(a.outputs, run(&p, &noisy(8)).unwrap().outputs);
    let clean = run(&p, &ExecOptions::default()).unwrap();
    // Right after a bootstrap the perturbation is at most epsilon.
    for (id, v) in &a.values {
        if p.planned.node(id).unwrap().op == OpKind::Bootstrap {
            let src = &p.planned.node(id).unwrap().inputs[0];
            assert!(v.values.max_abs_diff(&a.values[src].values) <= 1e-3 + 1e-12);
        }
    }
    assert!(a.outputs != clean.outputs);
}

#[test]
fn missing_and_misshapen_weights_are_reported() {
    let p = toy_plan("toy-dirac");
    let inputs = random_inputs(&p.planned, 1);
    let mut weights = random_weights(&p.planned, 2).unwrap();
    let name = weights
        .keys()
        .find(|k| k.ends_with(".dirac"))
        .unwrap()
        .clone();
    let t = weights.remove(&name).unwrap();
    let opts = ExecOptions::default();
    assert_eq!(
        execute(&p, &inputs, &weights, &opts).unwrap_err(),
        MockError::Missing(name.clone())
    );
    weights.insert(name, Tensor::zeros(vec![t.len() + 1]));
    assert!(matches!(
        execute(&p, &inputs, &weights, &opts),
        Err(MockError::Shape { .. })
    ));
}

#[test]
fn relu_is_not_executable() {
    let g = Graph::new(
        "r",
        [
            Node::new(
                "x",
                OpKind::Input {
                    dims: vec![1, 2, 2],
                    tile: None,
                },
                &[],
            ),
            Node::new("r", OpKind::Relu, &["x"]),
        ],
        vec!["r".into()],
    )
    .unwrap();
    let p = Plan::from_planned(g.clone(), &LevelRules::default(), &PlannerConfig::default());
    if let Ok(p) = p {
        let err = execute(
            &p,
            &random_inputs(&g, 0),
            &Tensors::new(),
            &ExecOptions::default(),
        );
        assert!(matches!(
            err,
            Err(MockError::NotHeFriendly { op: "ReLU", .. })
        ));
    }
    let clear = cleartext_reference(
        &g,
        &random_inputs(&g, 0),
        &Tensors::new(),
        &PolyTable::shipped(),
    );
    assert!(clear.unwrap()["r"].data.iter().all(|&v| v >= 0.0));
}
