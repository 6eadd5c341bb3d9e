use helevel::corpus::{preset_corpus, random_dag, DagSpec};
use helevel::graph::{emit_graph, parse_graph};
use helevel::planner::{plan, PlannerConfig};
use helevel::LevelRules;
use proptest::prelude::*;

fn check(g: &helevel::Graph) {
    let text = emit_graph(g);
    let back = parse_graph(&text).unwrap();
    assert_eq!(&back, g, "{}", g.name);
    assert_eq!(emit_graph(&back), text, "{}", g.name);
}

#[test]
fn presets_round_trip_planned_and_unplanned() {
    for g in preset_corpus() {
        check(&g);
        check(
            &plan(&g, &LevelRules::default(), &PlannerConfig::default())
                .unwrap()
                .planned,
        );
    }
}

proptest! {
    #[test]
    fn random_dags_round_trip(seed in any::<u64>(), max_level in 4u32..24) {
        let g = random_dag(seed, &DagSpec::default());
        check(&g);
        check(&plan(&g, &LevelRules::default(), &PlannerConfig::with_max_level(max_level)).unwrap().planned);
    }
}
