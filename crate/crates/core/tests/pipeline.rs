//! Cross-module flows: artifacts written by one stage drive the
//! next, and estimates survive save/load round trips bitwise.

use oppe_core::estimators::{
    dr_estimate, is_estimate, model_estimate, mrdr_q_estimate, mrdr_train, DrVariant, IsVariant,
    ModelProvider, MrdrConfig, MrdrVariant, QProvider, SOFT_EPS,
};
use oppe_core::harness::{behavior_policy, run_experiment, ExperimentConfig, PolicySource};
use oppe_core::policies::{fit_q_iteration, Policy, QLearningBudget};
use oppe_core::repbm::{self, RepBmConfig};
use oppe_core::{collect, make_env, Dataset};

fn tiny_budget() -> QLearningBudget {
    QLearningBudget {
        episodes: 10,
        hidden: 8,
        batch_size: 8,
        warmup: 8,
        eval_every: 5,
        eval_rollouts: 2,
        ..QLearningBudget::default()
    }
}

#[test]
fn artifacts_flow_from_policy_to_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let env = make_env("lineartoy").unwrap();

    let q = fit_q_iteration(&*env, &tiny_budget(), 3).unwrap();
    let pi = Policy::Greedy { q };
    let policy_path = dir.path().join("policy.json");
    pi.save(&policy_path).unwrap();
    let pi = Policy::load(&policy_path).unwrap();

    let mu = behavior_policy(&pi, 0.2).unwrap();
    let mut dataset = collect(&*env, &mu, 24, 3).unwrap();
    dataset.annotate(&pi).unwrap();
    dataset.split(0.9, 3).unwrap();
    let data_path = dir.path().join("data.jsonl");
    dataset.save(&data_path).unwrap();
    let loaded = Dataset::load(&data_path).unwrap();
    assert_eq!(loaded, dataset);

    let mut cfg = RepBmConfig::am();
    cfg.epochs = 3;
    cfg.rep_dim = 4;
    let (model, _) = repbm::train(&loaded, &cfg).unwrap();
    let model_path = dir.path().join("model.json");
    model.save(&model_path, &cfg).unwrap();
    let (model2, cfg2) = repbm::RepBmModel::load(&model_path).unwrap();
    assert_eq!(cfg2.rep_dim, 4);

    let direct = model_estimate(&loaded, &model, &pi, "am").unwrap();
    let reloaded = model_estimate(&loaded, &model2, &pi, "am").unwrap();
    assert_eq!(direct.mean, reloaded.mean, "save/load preserves estimates bitwise");

    let provider = ModelProvider { model: &model2, pi: &pi, label: "am".into() };
    let dr = dr_estimate(&loaded, &pi, &provider, DrVariant::Wdr, SOFT_EPS).unwrap();
    assert!(dr.mean.unwrap().is_finite());

    let is = is_estimate(&loaded, &pi, IsVariant::Is, SOFT_EPS).unwrap();
    let is_again = is_estimate(&dataset, &pi, IsVariant::Is, SOFT_EPS).unwrap();
    assert_eq!(is.per_trajectory, is_again.per_trajectory);
}

#[test]
fn mrdr_pipeline_produces_usable_q_functions() {
    let env = make_env("lineartoy").unwrap();
    let q = fit_q_iteration(&*env, &tiny_budget(), 5).unwrap();
    let pi = Policy::Greedy { q };
    let mu = behavior_policy(&pi, 0.2).unwrap();
    let mut dataset = collect(&*env, &mu, 16, 5).unwrap();
    dataset.annotate(&pi).unwrap();

    let cfg = MrdrConfig { epochs: 20, hidden: 8, ..MrdrConfig::new(MrdrVariant::Mrdr) };
    let fitted = mrdr_train(&dataset, &pi, &cfg).unwrap();

    let direct = mrdr_q_estimate(&dataset, &fitted, &pi).unwrap();
    let by_hand: f64 = dataset
        .trajectories
        .iter()
        .map(|t| {
            let s0 = &t.states[0];
            fitted.q.q_values(s0)[pi.deterministic_action(s0).unwrap()]
        })
        .sum::<f64>()
        / dataset.len() as f64;
    assert_eq!(direct.mean, Some(by_hand), "mrdr_q reads Q(s0, pi(s0)) directly");

    let provider = QProvider { q: &fitted.q, pi: &pi, label: "mrdr".into() };
    let dr = dr_estimate(&dataset, &pi, &provider, DrVariant::Dr, SOFT_EPS).unwrap();
    assert!(dr.mean.unwrap().is_finite());
}

#[test]
fn experiment_on_a_tree_keeps_dr_zero_equal_to_pdis() {
    let dir = tempfile::tempdir().unwrap();
    let pi = Policy::Tabular { probs: vec![vec![1.0, 0.0]; 7] };
    let policy_path = dir.path().join("tabular.json");
    pi.save(&policy_path).unwrap();

    let mut config = ExperimentConfig::desk_scale("tree:2");
    config.policy = PolicySource::Path(policy_path);
    config.n = 32;
    config.runs = 3;
    config.estimators = vec!["pdis".into(), "dr(zero)".into()];
    config.out_dir = dir.path().join("out");

    let report = run_experiment(&config).unwrap();
    assert_eq!(report.runs.len(), 3);
    for run in &report.runs {
        assert!(run.error.is_none());
        let value = |name: &str| {
            run.estimates
                .iter()
                .find(|e| e.estimator == name)
                .and_then(|e| e.mean)
                .unwrap()
        };
        assert_eq!(value("pdis"), value("dr(zero)"));
    }
}
