use helevel::corpus::{fanout_fixture, mul_chain, preset_corpus, random_dags, DagSpec};
use helevel::planner::{
    plan, plan_greedy, verify_plan, JoinFix, PlannerConfig, Strategy, NO_FANOUT,
};
use helevel::{LevelRules, OpKind};

#[test]
fn every_plan_revalidates() {
    let rules = LevelRules::default();
    let mut graphs = random_dags(0, 300, &DagSpec::default());
    graphs.extend(preset_corpus());
    for g in &graphs {
        for max_level in [5, 8, 22] {
            let cfg = PlannerConfig::with_max_level(max_level);
            let p = plan(g, &rules, &cfg).unwrap();
            verify_plan(&p).unwrap_or_else(|e| panic!("{} at {max_level}: {e}", g.name));
            assert!(p.trace.peak() <= max_level);
        }
    }
}

#[test]
fn greedy_stays_near_exhaustive_minimum() {
    let rules = LevelRules::default();
    let spec = DagSpec {
        max_nodes: 30,
        max_consuming: 12,
    };
    let cfg = PlannerConfig::with_max_level(6);
    let exhaustive = PlannerConfig {
        strategy: Strategy::ExhaustiveTiny,
        ..cfg.clone()
    };
    let graphs = random_dags(5_000, 200, &spec);
    let mut within = 0;
    for g in &graphs {
        let greedy = plan_greedy(g, &rules, &cfg).unwrap().bootstrap_count;
        let best = plan(g, &rules, &exhaustive).unwrap().bootstrap_count;
        assert!(
            best <= greedy,
            "{}: exhaustive {best} above greedy {greedy}",
            g.name
        );
        within += usize::from(greedy <= best + 1);
    }
    assert!(
        within * 100 >= graphs.len() * 95,
        "{within}/{}",
        graphs.len()
    );
}

#[test]
fn ten_multiplies_at_budget_four_bootstrap_twice() {
    let p = plan(
        &mul_chain(10),
        &LevelRules::default(),
        &PlannerConfig::with_max_level(4),
    )
    .unwrap();
    assert_eq!(p.bootstrap_count, 2);
    verify_plan(&p).unwrap();
}

#[test]
fn shared_deep_operand_is_bootstrapped_once() {
    let rules = LevelRules::default();
    let eager = PlannerConfig {
        fanout_threshold: 2,
        ..PlannerConfig::default()
    };
    let p = plan(&fanout_fixture(), &rules, &eager).unwrap();
    assert_eq!(p.bootstrap_count, 1);
    assert_eq!(p.planned.count_ops(|o| *o == OpKind::Bootstrap), 1);
    assert!(p.joins.iter().any(|j| j.fix == JoinFix::BootstrapHigh));
    verify_plan(&p).unwrap();

    let lazy = PlannerConfig {
        fanout_threshold: NO_FANOUT,
        ..PlannerConfig::default()
    };
    let p = plan(&fanout_fixture(), &rules, &lazy).unwrap();
    assert_eq!((p.bootstrap_count, p.rescale_count), (0, 3));
    assert!(p.joins.iter().all(|j| j.fix == JoinFix::RescaleLow));
    verify_plan(&p).unwrap();
}

#[test]
fn planning_is_deterministic() {
    let rules = LevelRules::default();
    for g in random_dags(77, 50, &DagSpec::default()) {
        let cfg = PlannerConfig::with_max_level(5);
        assert_eq!(
            plan(&g, &rules, &cfg).unwrap(),
            plan(&g, &rules, &cfg).unwrap()
        );
    }
}
