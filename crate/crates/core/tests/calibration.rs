use helevel::corpus::{preset_corpus, random_dags, DagSpec};
use helevel::cost::{calibrate, price, reference_calibration, Observation, CALIBRATION_FREE};
use helevel::planner::{plan, PlannerConfig};
use helevel::{CostWeights, LevelRules, OpClass, Plan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plans() -> Vec<Plan> {
    let rules = LevelRules::default();
    let mut graphs = preset_corpus();
    graphs.extend(random_dags(900, 40, &DagSpec::default()));
    let mut out = Vec::new();
    for g in &graphs {
        for max_level in [5, 22] {
            out.push(plan(g, &rules, &PlannerConfig::with_max_level(max_level)).unwrap());
        }
    }
    out
}

#[test]
fn synthetic_weights_are_recovered() {
    let plans = plans();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let mut truth = CostWeights::zero();
        for c in OpClass::ALL {
            truth.set(c, rng.gen_range(0.1..10.0));
        }
        truth.set(OpClass::Bootstrap, rng.gen_range(50.0..100.0));
        let obs: Vec<Observation> = plans
            .iter()
            .map(|p| Observation::new(p, price(p, &truth).total_cpu_seconds))
            .collect();
        let fit = calibrate(&obs, &OpClass::ALL, &CostWeights::zero()).unwrap();
        for c in OpClass::ALL {
            let rel = (fit.weights.get(c) - truth.get(c)).abs() / truth.get(c);
            assert!(
                rel < 1e-6,
                "{c}: {} vs {}",
                fit.weights.get(c),
                truth.get(c)
            );
        }
        assert!(fit.relative_errors.iter().all(|e| e.abs() < 1e-9));
    }
}

#[test]
fn reference_fit_keeps_bootstrap_dominant() {
    let fit = reference_calibration();
    fit.weights.check().unwrap();
    assert!(fit.weights.w_bootstrap > fit.weights.w_rescale);
    for c in OpClass::ALL
        .iter()
        .filter(|c| !CALIBRATION_FREE.contains(c))
    {
        assert_eq!(fit.weights.get(*c), 0.0);
    }
    for c in OpClass::ALL {
        let (got, shipped) = (fit.weights.get(c), CostWeights::calibrated().get(c));
        assert!((got - shipped).abs() <= 1e-9 * shipped.abs(), "{c}");
    }
}

#[test]
fn reference_fit_reproduces_the_degree_eight_ratio() {
    let fit = reference_calibration();
    let rules = LevelRules::default();
    let cost = |v| {
        let g = helevel::arch::build(&helevel::ArchConfig::resnet50(v, 8)).unwrap();
        price(
            &plan(&g, &rules, &PlannerConfig::default()).unwrap(),
            &fit.weights,
        )
        .total_cpu_seconds
    };
    let ratio = cost(helevel::Variant::Reference) / cost(helevel::Variant::SharedSourceDirac);
    assert!((1.2..=1.45).contains(&ratio), "{ratio}");
}
