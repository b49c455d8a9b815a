//! Acceptance checks for the whole toolkit, one criterion per test.
//! Every test prints a single `criterion NN PASS|FAIL` line so the
//! suite doubles as a scoreboard; thresholds are pinned here and are
//! not tunable from outside.

use std::rc::Rc;
use std::sync::OnceLock;
use std::time::Instant;

use oppe_core::balance::{mmd_estimate, KernelSpec};
use oppe_core::environments::TabularEnv;
use oppe_core::estimators::{
    dr_estimate, is_estimate, pdis_estimate, DrVariant, IsVariant, PdisVariant, ZeroProvider,
    SOFT_EPS,
};
use oppe_core::harness::{
    behavior_policy, ground_truth, run_experiment, ExperimentConfig, PolicySource, RmseReport,
    RunRecord,
};
use oppe_core::policies::{Policy, QLearningBudget, QNetwork};
use oppe_core::repbm::{self, BatchMode, RepBmConfig, RepBmModel};
use oppe_core::{collect, make_env, oracle, rng, Graph, Parameter, TabularMdp, Var};
use rand::Rng;

fn report(number: u8, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {number:02} {verdict} {name}: {detail}");
    assert!(pass, "criterion {number:02} {name}: {detail}");
}

/// `|a − f|` relative to the larger magnitude, absolute for tiny pairs.
fn grad_error(analytic: f64, fd: f64) -> f64 {
    let scale = analytic.abs().max(fd.abs());
    if scale < 1e-6 {
        (analytic - fd).abs()
    } else {
        (analytic - fd).abs() / scale
    }
}

// ---------------------------------------------------------------- 1

struct OpCase {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    positive: bool,
    build: Box<dyn Fn(&mut Graph, &[Var]) -> oppe_core::Result<Var>>,
}

fn op_cases() -> Vec<OpCase> {
    let case = |name: &'static str,
                shapes: Vec<Vec<usize>>,
                positive: bool,
                build: Box<dyn Fn(&mut Graph, &[Var]) -> oppe_core::Result<Var>>| {
        OpCase { name, shapes, positive, build }
    };
    vec![
        case("add", vec![vec![2, 3], vec![2, 3]], false, Box::new(|g, v| g.add(v[0], v[1]))),
        case("sub", vec![vec![2, 3], vec![2, 3]], false, Box::new(|g, v| g.sub(v[0], v[1]))),
        case("mul", vec![vec![2, 3], vec![2, 3]], false, Box::new(|g, v| g.mul(v[0], v[1]))),
        case("matmul", vec![vec![2, 3], vec![3, 2]], false, Box::new(|g, v| g.matmul(v[0], v[1]))),
        case("add_bias", vec![vec![2, 3], vec![3]], false, Box::new(|g, v| g.add_bias(v[0], v[1]))),
        case("relu", vec![vec![2, 3]], false, Box::new(|g, v| g.relu(v[0]))),
        case("sigmoid", vec![vec![2, 3]], false, Box::new(|g, v| g.sigmoid(v[0]))),
        case("exp", vec![vec![2, 3]], false, Box::new(|g, v| g.exp(v[0]))),
        case("ln", vec![vec![2, 3]], true, Box::new(|g, v| g.ln(v[0]))),
        case("sqrt", vec![vec![2, 3]], true, Box::new(|g, v| g.sqrt(v[0]))),
        case("square", vec![vec![2, 3]], false, Box::new(|g, v| g.square(v[0]))),
        case("clamp", vec![vec![2, 3]], false, Box::new(|g, v| g.clamp(v[0], -1.2, 1.2))),
        case("scale", vec![vec![2, 3]], false, Box::new(|g, v| g.scale(v[0], 1.7))),
        case("sum", vec![vec![2, 3]], false, Box::new(|g, v| g.sum(v[0]))),
        case("mean", vec![vec![2, 3]], false, Box::new(|g, v| g.mean(v[0]))),
        case("concat", vec![vec![2, 3], vec![2, 3]], false, Box::new(|g, v| g.concat(v[0], v[1]))),
        case(
            "index_select",
            vec![vec![3, 3]],
            false,
            Box::new(|g, v| g.index_select(v[0], Rc::new(vec![2, 0, 1, 2]))),
        ),
        case(
            "take_per_row",
            vec![vec![2, 3]],
            false,
            Box::new(|g, v| g.take_per_row(v[0], Rc::new(vec![2, 0]))),
        ),
        case(
            "pairwise_sqdist",
            vec![vec![3, 2], vec![2, 2]],
            false,
            Box::new(|g, v| g.pairwise_sqdist(v[0], v[1])),
        ),
    ]
}

fn case_data(case: &OpCase, index: u64) -> Vec<Vec<f64>> {
    let mut stream = rng::stream(11, index, "fd-suite");
    case.shapes
        .iter()
        .map(|shape| {
            let len: usize = shape.iter().product();
            (0..len)
                .map(|_| {
                    // Keep magnitudes in [0.4, 1.6] so relu/clamp kinks
                    // and ln/sqrt domains stay an FD step away.
                    let magnitude = stream.random_range(0.4..1.6);
                    if case.positive || stream.random_bool(0.5) {
                        magnitude
                    } else {
                        -magnitude
                    }
                })
                .collect()
        })
        .collect()
}

fn case_loss(case: &OpCase, data: &[Vec<f64>]) -> (Graph, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = case
        .shapes
        .iter()
        .zip(data)
        .map(|(shape, values)| {
            let tensor = oppe_core::Tensor::new(shape.clone(), values.clone()).unwrap();
            g.input(tensor, true)
        })
        .collect();
    let out = (case.build)(&mut g, &vars).unwrap();
    let sq = g.square(out).unwrap();
    let loss = g.mean(sq).unwrap();
    (g, vars, loss)
}

#[test]
fn criterion_01_gradient_suite() {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst_op = 0.0f64;
    let mut worst_name = "";
    for (index, case) in op_cases().iter().enumerate() {
        let data = case_data(case, index as u64);
        let (mut g, vars, loss) = case_loss(case, &data);
        g.backward(loss).unwrap();
        let grads: Vec<Vec<f64>> =
            vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();
        for (vi, values) in data.iter().enumerate() {
            for ci in 0..values.len() {
                let eval = |delta: f64| {
                    let mut shifted = data.clone();
                    shifted[vi][ci] += delta;
                    let (g, _, loss) = case_loss(case, &shifted);
                    g.value(loss).data()[0]
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let err = grad_error(grads[vi][ci], fd);
                if err > worst_op {
                    worst_op = err;
                    worst_name = case.name;
                }
            }
        }
    }

    // The full training objective on a four-trajectory toy, with the
    // bandwidth pinned so the kernel does not move with the params.
    let env = make_env("lineartoy").unwrap();
    let pi = constant_policy();
    let mu = behavior_policy(&pi, 1.0).unwrap();
    // Seed 2 splits t = 0 two factual / two counterfactual, so the
    // balance penalty is active on this tiny dataset.
    let mut data = collect(&*env, &mu, 4, 2).unwrap();
    data.annotate(&pi).unwrap();
    let mut cfg = RepBmConfig::repbm(0.5);
    cfg.kernel = KernelSpec::Rbf { bandwidth: Some(1.0) };
    cfg.weight_decay = 1e-2;
    let mut init = rng::stream(17, 0, "fd-objective");
    let model = RepBmModel::init(2, 2, 4, 1.0, &mut init);
    let mut alpha_off = cfg.clone();
    alpha_off.alpha = 0.0;
    assert_ne!(
        model.objective(&data, &cfg).unwrap(),
        model.objective(&data, &alpha_off).unwrap(),
        "toy dataset must exercise the balance penalty"
    );
    let grads = model.objective_gradients(&data, &cfg).unwrap();
    let h = 1e-4;
    let mut worst_obj = 0.0f64;
    for (p, grad) in grads.iter().enumerate() {
        for (i, &analytic) in grad.iter().enumerate() {
            let eval = |delta: f64| {
                let mut shifted = model.clone();
                shifted.params[p].data[i] += delta;
                shifted.objective(&data, &cfg).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst_obj = worst_obj.max(grad_error(analytic, fd));
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst_op < 1e-4 && worst_obj < 1e-4 && elapsed < 30.0;
    report(
        1,
        "gradient suite",
        pass,
        &format!(
            "worst op error {worst_op:.2e} ({worst_name}), worst objective error \
             {worst_obj:.2e}, {elapsed:.1}s"
        ),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_mmd_properties() {
    let mut stream = rng::stream(23, 0, "mmd");
    let draw = |stream: &mut rand_chacha::ChaCha8Rng, n: usize, shift: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..3).map(|_| stream.random_range(-1.0..1.0) + shift).collect())
            .collect()
    };
    let group_f = draw(&mut stream, 5, 0.0);
    let group_c = draw(&mut stream, 4, 0.6);

    let rbf = KernelSpec::Rbf { bandwidth: Some(0.9) }.resolve(&[]).unwrap();
    let self_mmd = mmd_estimate(&rbf, &group_f, &group_f).unwrap().value().unwrap();
    let forward = mmd_estimate(&rbf, &group_f, &group_c).unwrap().value().unwrap();
    let backward = mmd_estimate(&rbf, &group_c, &group_f).unwrap().value().unwrap();

    let linear = KernelSpec::Linear.resolve(&[]).unwrap();
    let linear_mmd = mmd_estimate(&linear, &group_f, &group_c).unwrap().value().unwrap();
    let mean_of = |group: &[Vec<f64>]| -> Vec<f64> {
        let mut acc = vec![0.0; group[0].len()];
        for row in group {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x;
            }
        }
        acc.into_iter().map(|a| a / group.len() as f64).collect()
    };
    let (mf, mc) = (mean_of(&group_f), mean_of(&group_c));
    let mean_diff: f64 =
        mf.iter().zip(&mc).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();

    let scale = 2.0;
    let scaled_f: Vec<Vec<f64>> =
        group_f.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
    let scaled_c: Vec<Vec<f64>> =
        group_c.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
    let rbf_scaled =
        KernelSpec::Rbf { bandwidth: Some(0.9 * scale) }.resolve(&[]).unwrap();
    let scaled = mmd_estimate(&rbf_scaled, &scaled_f, &scaled_c).unwrap().value().unwrap();

    let pass = self_mmd == 0.0
        && forward == backward
        && (linear_mmd - mean_diff).abs() < 1e-10
        && (forward - scaled).abs() < 1e-10;
    report(
        2,
        "mmd properties",
        pass,
        &format!(
            "self {self_mmd:.1e}, symmetry gap {:.1e}, linear vs mean-diff gap {:.1e}, \
             scale gap {:.1e}",
            (forward - backward).abs(),
            (linear_mmd - mean_diff).abs(),
            (forward - scaled).abs()
        ),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_simulation_lemma() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let mut stream = rng::stream(31, i, "simulation");
        let states = 2 + (i as usize) % 3;
        let horizon = 2 + (i as usize) % 3;
        let mdp = oracle::random_mdp(states, 2, horizon, &mut stream);
        let model = oracle::random_mdp(states, 2, horizon, &mut stream);
        let pi = oracle::random_deterministic_policy(states, 2, &mut stream);
        worst = worst.max(oracle::simulation_identity_gap(&mdp, &model, &pi, horizon).unwrap());
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst < 1e-10 && elapsed < 10.0;
    report(
        3,
        "simulation lemma",
        pass,
        &format!("max identity gap {worst:.2e} over 50 MDPs, {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_is_unbiasedness() {
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let mut stream = rng::stream(37, i, "unbiased");
        let states = 2 + (i as usize) % 3;
        let horizon = 2 + (i as usize) % 3;
        let mdp = oracle::random_mdp(states, 2, horizon, &mut stream);
        let mu = oracle::random_positive_policy(states, 2, &mut stream);
        let pi = oracle::random_deterministic_policy(states, 2, &mut stream);
        let expected = oracle::is_expected_value(&mdp, &mu, &mu, &pi, horizon).unwrap();
        let exact = oracle::exact_value(&mdp, &pi, horizon).unwrap();
        worst = worst.max((expected - exact).abs());
    }
    let pass = worst < 1e-10;
    report(
        4,
        "is unbiasedness",
        pass,
        &format!("max |E[V_IS] - V| {worst:.2e} over 50 instances"),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_variance_theorem() {
    let mut violations = 0usize;
    for i in 0..100u64 {
        let mut stream = rng::stream(41, i, "variance");
        let states = 2 + (i as usize) % 3;
        let horizon = 2 + (i as usize) % 3;
        let mdp = oracle::random_mdp(states, 2, horizon, &mut stream);
        let mu = oracle::random_positive_policy(states, 2, &mut stream);
        let pi = oracle::random_deterministic_policy(states, 2, &mut stream);
        let dists = oracle::weight_distributions(&mdp, &mu, &pi, horizon).unwrap();
        if dists.is_weights.variance() < dists.marginal_ratios.variance() - 1e-12 {
            violations += 1;
        }
    }

    // Two-state bandit: states A/B equiprobable, μ(a0|A) = 1/2,
    // μ(a0|B) = 1/4, π plays a0 everywhere.
    let bandit = TabularMdp::new(
        vec![vec![vec![1.0, 0.0]; 2]; 2],
        vec![vec![1.0, 0.0]; 2],
        vec![0.5, 0.5],
        1,
    )
    .unwrap();
    let mu = Policy::Tabular { probs: vec![vec![0.5, 0.5], vec![0.25, 0.75]] };
    let pi = Policy::Tabular { probs: vec![vec![1.0, 0.0]; 2] };
    let dists = oracle::weight_distributions(&bandit, &mu, &pi, 1).unwrap();
    let var_is = dists.is_weights.variance();
    let var_marginal = dists.marginal_ratios.variance();

    let pass = violations == 0
        && var_is == 2.0
        && (var_marginal - 5.0 / 3.0).abs() < 1e-12;
    report(
        5,
        "variance theorem",
        pass,
        &format!(
            "{violations} violations in 100 instances; bandit Var(IS) = {var_is}, \
             Var(marginal) = {var_marginal:.15}"
        ),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_estimated_mu_bias() {
    let mut worst = 0.0f64;
    for delta in [0.05, 0.1, 0.2] {
        for depth in [2usize, 4, 6] {
            let enumerated = oracle::is_bias_with_estimated_mu(depth, delta).unwrap();
            let closed_form = (1.0 - delta).powi(-(depth as i32));
            worst = worst.max((enumerated - closed_form).abs());
        }
    }
    let pass = worst < 1e-10;
    report(
        6,
        "estimated-mu bias",
        pass,
        &format!("max |enumerated - (1-d)^-H| {worst:.2e} over 9 (d, H) pairs"),
    );
}

// ---------------------------------------------------------------- 7

/// Always plays action 0; the Q net is zero except a one-hot output
/// bias, so the argmax is pinned.
fn constant_policy() -> Policy {
    let q = QNetwork::from_params(
        2,
        2,
        2,
        vec![
            Parameter::new("w1", vec![2, 2], vec![0.0; 4]).unwrap(),
            Parameter::new("b1", vec![2], vec![0.0; 2]).unwrap(),
            Parameter::new("w2", vec![2, 2], vec![0.0; 4]).unwrap(),
            Parameter::new("b2", vec![2], vec![1.0, 0.0]).unwrap(),
        ],
    )
    .unwrap();
    Policy::Greedy { q }
}

#[test]
fn criterion_07_consistency() {
    let start = Instant::now();
    let env = make_env("lineartoy").unwrap();
    let pi = constant_policy();
    let mu = behavior_policy(&pi, 0.2).unwrap();

    // A fixed evaluation grid keeps the target identical across n.
    let eval_states = collect(&*env, &mu, 64, 999).unwrap().initial_states();
    let truth = ground_truth(&*env, &pi, &eval_states, 5).unwrap();

    let mut mses = Vec::new();
    for (ni, n) in [32usize, 128, 512].into_iter().enumerate() {
        let mut total = 0.0;
        let seeds = 3u64;
        for seed in 0..seeds {
            let mut data = collect(&*env, &mu, n, 1000 + 10 * ni as u64 + seed).unwrap();
            data.annotate(&pi).unwrap();
            data.split(0.9, seed).unwrap();
            let mut cfg = RepBmConfig::repbm(0.01);
            cfg.epochs = 300;
            cfg.seed = seed;
            let (model, _) = repbm::train(&data, &cfg).unwrap();
            let mse = eval_states
                .iter()
                .zip(&truth.values)
                .map(|(s, &v)| (model.value(s, &pi, 5).unwrap() - v).powi(2))
                .sum::<f64>()
                / eval_states.len() as f64;
            total += mse;
        }
        mses.push(total / seeds as f64);
    }

    let inversions = mses.windows(2).filter(|w| w[1] > w[0]).count();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = inversions <= 1 && elapsed < 600.0;
    report(
        7,
        "consistency",
        pass,
        &format!(
            "individual MSE over n = 32/128/512: {:.2e} / {:.2e} / {:.2e} \
             ({inversions} inversions), {elapsed:.0}s",
            mses[0], mses[1], mses[2]
        ),
    );
}

// ----------------------------------------------------------- 8 / 10

fn short_horizon_report() -> &'static RmseReport {
    static REPORT: OnceLock<RmseReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let mut config = ExperimentConfig::desk_scale("cartpole");
        config.policy = PolicySource::Train(QLearningBudget {
            episodes: 400,
            eval_every: 5,
            return_band: (15.0, 45.0),
            ..QLearningBudget::default()
        });
        config.n = 256;
        config.runs = 20;
        config.alphas = vec![0.0, 0.01];
        config.estimators = vec!["repbm".into(), "am".into()];
        config.model.epochs = 400;
        run_experiment(&config).expect("short-horizon experiment")
    })
}

fn aggregate(report: &RmseReport, label: &str) -> (f64, f64) {
    let row = report
        .rows
        .iter()
        .find(|r| r.estimator == label)
        .unwrap_or_else(|| panic!("row {label} missing"));
    (row.rmse_mean.unwrap(), row.rmse_individual.unwrap())
}

/// Fraction of paired seeds where `a` beats `b` on the given per-run
/// squared error.
fn win_rate(
    runs: &[RunRecord],
    a: &str,
    b: &str,
    metric: impl Fn(&oppe_core::harness::RunEstimate) -> Option<f64>,
) -> f64 {
    let mut wins = 0usize;
    let mut total = 0usize;
    for run in runs {
        let get = |label: &str| {
            run.estimates.iter().find(|e| e.estimator == label).and_then(&metric)
        };
        if let (Some(va), Some(vb)) = (get(a), get(b)) {
            total += 1;
            if va < vb {
                wins += 1;
            }
        }
    }
    assert!(total > 0, "no paired runs for {a} vs {b}");
    wins as f64 / total as f64
}

#[test]
fn criterion_08_short_horizon_ordering() {
    let start = Instant::now();
    let report_data = short_horizon_report();
    let (repbm_mean, repbm_ind) = aggregate(report_data, "repbm@0.01");
    let (am_mean, am_ind) = aggregate(report_data, "am");
    let wins_mean =
        win_rate(&report_data.runs, "repbm@0.01", "am", |e| e.squared_error_mean);
    let wins_ind = win_rate(&report_data.runs, "repbm@0.01", "am", |e| e.mse_individual);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = repbm_mean < am_mean
        && repbm_ind < am_ind
        && wins_mean >= 0.7
        && wins_ind >= 0.7
        && elapsed < 3600.0;
    report(
        8,
        "short-horizon ordering",
        pass,
        &format!(
            "mean RMSE {repbm_mean:.3} vs {am_mean:.3}, individual {repbm_ind:.3} vs \
             {am_ind:.3}, seed wins {wins_mean:.0}%/{wins_ind:.0}%, {elapsed:.0}s",
            wins_mean = wins_mean * 100.0,
            wins_ind = wins_ind * 100.0
        ),
    );
}

#[test]
fn criterion_10_alpha_sweep() {
    let report_data = short_horizon_report();
    let (with_alpha, _) = aggregate(report_data, "repbm@0.01");
    let (without, _) = aggregate(report_data, "repbm@0");
    let pass = with_alpha <= without;
    report(
        10,
        "alpha sweep",
        pass,
        &format!("mean RMSE {with_alpha:.3} at alpha 0.01 vs {without:.3} at alpha 0"),
    );
}

// ---------------------------------------------------------------- 9

/// Energy pumping as a hand-set Q network: push in the direction of
/// the velocity, which solves MountainCar well before the step cap.
fn energy_policy() -> Policy {
    let q = QNetwork::from_params(
        2,
        2,
        2,
        vec![
            Parameter::new("w1", vec![2, 2], vec![0.0, 0.0, 1.0, -1.0]).unwrap(),
            Parameter::new("b1", vec![2], vec![0.0; 2]).unwrap(),
            Parameter::new("w2", vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
            Parameter::new("b2", vec![2], vec![0.0; 2]).unwrap(),
        ],
    )
    .unwrap();
    Policy::Greedy { q }
}

#[test]
fn criterion_09_mountaincar_ordering() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let policy_path = dir.path().join("mountaincar-policy.json");
    energy_policy().save(&policy_path).unwrap();

    let mut config = ExperimentConfig::desk_scale("mountaincar");
    config.policy = PolicySource::Path(policy_path);
    config.n = 256;
    config.runs = 10;
    config.estimators = vec!["repbm".into(), "am".into()];
    config.model.epochs = 1200;
    config.model.batch = BatchMode::Minibatch { size: 64 };
    let report_data = run_experiment(&config).expect("mountaincar experiment");

    let (_, repbm_ind) = aggregate(&report_data, "repbm");
    let (_, am_ind) = aggregate(&report_data, "am");
    let wins_ind = win_rate(&report_data.runs, "repbm", "am", |e| e.mse_individual);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = repbm_ind < am_ind && wins_ind >= 0.7 && elapsed < 3600.0;
    report(
        9,
        "mountaincar ordering",
        pass,
        &format!(
            "individual RMSE {repbm_ind:.2} vs {am_ind:.2}, seed wins {:.0}%, {elapsed:.0}s",
            wins_ind * 100.0
        ),
    );
}

// --------------------------------------------------------------- 11

#[test]
fn criterion_11_estimator_degeneracies() {
    // A deterministic π whose actions never fully match the log: IS
    // averages zeros and WIS has nothing to normalize.
    let env = make_env("tree:2").unwrap();
    let pi = Policy::Tabular { probs: vec![vec![1.0, 0.0]; 7] };
    let mu = Policy::Tabular { probs: vec![vec![0.05, 0.95]; 7] };
    let mut data = collect(&*env, &mu, 12, 3).unwrap();
    data.annotate(&pi).unwrap();
    let matches = data
        .trajectories
        .iter()
        .filter(|t| t.mask.as_ref().unwrap().last() == Some(&true))
        .count();
    assert_eq!(matches, 0, "seed must produce no fully matching trajectory");

    let is = is_estimate(&data, &pi, IsVariant::Is, SOFT_EPS).unwrap();
    let wis = is_estimate(&data, &pi, IsVariant::Wis, SOFT_EPS).unwrap();
    let is_zero = is.mean == Some(0.0);
    let wis_undefined =
        wis.mean.is_none() && wis.flags.iter().any(|f| f.contains("undefined"));

    // DR with a zero model collapses to PDIS, bitwise.
    let mut dr_matches_pdis = true;
    for seed in 0..20u64 {
        let mut stream = rng::stream(53, seed, "dr-pdis");
        let mdp = oracle::random_mdp(3, 2, 3, &mut stream);
        let mu = oracle::random_positive_policy(3, 2, &mut stream);
        let pi = oracle::random_deterministic_policy(3, 2, &mut stream);
        let env = TabularEnv::new("dr-pdis".into(), mdp);
        let mut data = collect(&env, &mu, 6, seed).unwrap();
        data.annotate(&pi).unwrap();
        let dr = dr_estimate(&data, &pi, &ZeroProvider, DrVariant::Dr, SOFT_EPS).unwrap();
        let pdis = pdis_estimate(&data, &pi, PdisVariant::Pdis, SOFT_EPS).unwrap();
        if dr.mean != pdis.mean || dr.per_trajectory != pdis.per_trajectory {
            dr_matches_pdis = false;
        }
    }

    let pass = is_zero && wis_undefined && dr_matches_pdis;
    report(
        11,
        "estimator degeneracies",
        pass,
        &format!(
            "IS mean {:?}, WIS undefined {wis_undefined}, DR(zero) == PDIS on 20 datasets: \
             {dr_matches_pdis}",
            is.mean
        ),
    );
}
