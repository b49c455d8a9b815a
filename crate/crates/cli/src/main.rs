//! `oppe` — command-line driver for the OPPE toolkit: collect logged
//! data, train policies and models, run single estimators, and drive
//! full seeded experiments or oracle checks.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use oppe_core::environments::TabularMdp;
use oppe_core::estimators::{
    dr_estimate, is_estimate, model_estimate, mrdr_q_estimate, mrdr_train, parse_estimator,
    pdis_estimate, EstimateResult, EstimatorKind, ModelProvider, MrdrConfig, ProviderKind,
    QProvider, ZeroProvider, SOFT_EPS,
};
use oppe_core::harness::{
    behavior_policy, emit_report, run_experiment, ExperimentConfig, ReportFormat, RmseReport,
};
use oppe_core::policies::{average_return, fit_q_iteration, Policy, QLearningBudget};
use oppe_core::repbm::{self, ModelObjective, RepBmConfig, RepBmModel};
use oppe_core::{collect, make_env, oracle, rng, Dataset};

#[derive(Parser)]
#[command(name = "oppe", version, about = "Off-policy policy evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect logged trajectories under an ε-greedy behavior policy.
    Collect(CollectArgs),
    /// Train an evaluation policy by Q iteration and save it.
    TrainPolicy(TrainPolicyArgs),
    /// Fit a dynamics model (repbm, am, or am_pi) on a dataset.
    FitModel(FitModelArgs),
    /// Run one estimator on a dataset and print the result as JSON.
    Evaluate(EvaluateArgs),
    /// Run a seeded experiment from a JSON config and emit reports.
    Experiment(ExperimentArgs),
    /// Print exact-enumeration oracle checks on tabular MDPs.
    Oracle(OracleArgs),
    /// Run the experiment once per α with RepBM as the estimator.
    SweepAlpha(SweepAlphaArgs),
}

#[derive(Args)]
struct CollectArgs {
    /// Environment name (cartpole, mountaincar, lineartoy, tree:<d>).
    #[arg(long)]
    env: String,
    /// Saved evaluation policy; behavior is ε-greedy around it.
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    /// Trajectories to collect.
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainPolicyArgs {
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 300)]
    episodes: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Accept the first checkpoint whose mean return is at least this.
    #[arg(long)]
    band_low: Option<f64>,
    /// Accept only checkpoints whose mean return is at most this.
    #[arg(long)]
    band_high: Option<f64>,
    /// Episodes between return checkpoints.
    #[arg(long, default_value_t = 10)]
    eval_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output policy path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitModelArgs {
    /// Dataset path (from `oppe collect`).
    #[arg(long)]
    data: PathBuf,
    /// Training objective: repbm, am, or am_pi.
    #[arg(long, default_value = "repbm")]
    objective: String,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    rep_dim: usize,
    /// Trajectories per optimizer step (full batch when omitted).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Train/validation split used when the dataset has none yet.
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Evaluation policy file.
    #[arg(long)]
    policy: PathBuf,
    /// Estimator name, e.g. is, wis, pdis, dr(repbm), mrdr, mrdr_q.
    #[arg(long)]
    estimator: String,
    /// Saved model, required by model-backed estimators.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Epochs for MRDR's regression when the estimator needs one.
    #[arg(long, default_value_t = 200)]
    mrdr_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Write a desk-scale config template for this environment to
    /// --config and exit.
    #[arg(long)]
    template: Option<String>,
}

#[derive(Args)]
struct OracleArgs {
    /// Random instances per check.
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepAlphaArgs {
    /// Experiment config (JSON); its estimator list is replaced by
    /// RepBM and its α list by --alphas.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated α values, e.g. 0,0.01,0.1.
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Collect(a) => cmd_collect(a),
        Command::TrainPolicy(a) => cmd_train_policy(a),
        Command::FitModel(a) => cmd_fit_model(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::SweepAlpha(a) => cmd_sweep_alpha(a),
    }
}

fn cmd_collect(a: CollectArgs) -> anyhow::Result<()> {
    let env = make_env(&a.env)?;
    let pi = Policy::load(&a.policy)
        .with_context(|| format!("loading policy {}", a.policy.display()))?;
    let mu = behavior_policy(&pi, a.epsilon)?;
    let mut dataset = collect(&*env, &mu, a.n, a.seed)?;
    dataset.annotate(&pi)?;
    dataset.save(&a.out)?;
    println!(
        "collected {} trajectories from {} (horizon {}) into {}",
        dataset.len(),
        dataset.env,
        dataset.horizon,
        a.out.display()
    );
    Ok(())
}

fn cmd_train_policy(a: TrainPolicyArgs) -> anyhow::Result<()> {
    let env = make_env(&a.env)?;
    let budget = QLearningBudget {
        episodes: a.episodes,
        hidden: a.hidden,
        lr: a.lr,
        eval_every: a.eval_every,
        return_band: (
            a.band_low.unwrap_or(f64::NEG_INFINITY),
            a.band_high.unwrap_or(f64::INFINITY),
        ),
        ..QLearningBudget::default()
    };
    let q = fit_q_iteration(&*env, &budget, a.seed)?;
    let pi = Policy::Greedy { q };
    let ret = average_return(&*env, &pi, 20, &mut rng::stream(a.seed, 0, "policy-report"))?;
    pi.save(&a.out)?;
    println!("trained policy on {} (mean return {ret:.3}) into {}", a.env, a.out.display());
    Ok(())
}

fn parse_objective(name: &str) -> anyhow::Result<ModelObjective> {
    match parse_estimator(name) {
        Ok(EstimatorKind::Model(objective)) => Ok(objective),
        _ => bail!("--objective must be repbm, am, or am_pi (got {name})"),
    }
}

fn cmd_fit_model(a: FitModelArgs) -> anyhow::Result<()> {
    let objective = parse_objective(&a.objective)?;
    let mut dataset = Dataset::load(&a.data)?;
    if dataset.split.is_none() {
        dataset.split(a.train_fraction, a.seed)?;
    }
    let mut cfg = RepBmConfig::new(objective, a.alpha);
    cfg.epochs = a.epochs;
    cfg.lr = a.lr;
    cfg.rep_dim = a.rep_dim;
    cfg.seed = a.seed;
    if let Some(size) = a.batch_size {
        cfg.batch = oppe_core::repbm::BatchMode::Minibatch { size };
    }
    let (model, report) = repbm::train(&dataset, &cfg)?;
    model.save(&a.out, &cfg)?;
    println!(
        "fitted {} (best epoch {}, validation risk {:.6}) into {}",
        a.objective,
        report.best_epoch,
        report.validation_risk[report.best_epoch],
        a.out.display()
    );
    Ok(())
}

fn load_model(path: Option<&Path>, provider: &str) -> anyhow::Result<RepBmModel> {
    let path = path.with_context(|| format!("estimator needs --model for provider {provider}"))?;
    let (model, _) = RepBmModel::load(path)?;
    Ok(model)
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let dataset = Dataset::load(&a.data)?;
    let pi = Policy::load(&a.policy)?;
    let kind = parse_estimator(&a.estimator)?;
    let mrdr_cfg = |variant| MrdrConfig {
        variant,
        epochs: a.mrdr_epochs,
        seed: a.seed,
        ..MrdrConfig::default()
    };

    let result: EstimateResult = match kind {
        EstimatorKind::Model(objective) => {
            let name = ProviderKind::Model(objective).name();
            let model = load_model(a.model.as_deref(), name)?;
            model_estimate(&dataset, &model, &pi, name)?
        }
        EstimatorKind::Is(v) => is_estimate(&dataset, &pi, v, SOFT_EPS)?,
        EstimatorKind::Pdis(v) => pdis_estimate(&dataset, &pi, v, SOFT_EPS)?,
        EstimatorKind::Dr(v, ProviderKind::Model(objective)) => {
            let label = ProviderKind::Model(objective).name();
            let model = load_model(a.model.as_deref(), label)?;
            let provider = ModelProvider { model: &model, pi: &pi, label: label.to_string() };
            dr_estimate(&dataset, &pi, &provider, v, SOFT_EPS)?
        }
        EstimatorKind::Dr(v, ProviderKind::Mrdr(variant)) => {
            let fitted = mrdr_train(&dataset, &pi, &mrdr_cfg(variant))?;
            let provider = QProvider {
                q: &fitted.q,
                pi: &pi,
                label: ProviderKind::Mrdr(variant).name().to_string(),
            };
            dr_estimate(&dataset, &pi, &provider, v, SOFT_EPS)?
        }
        EstimatorKind::Dr(v, ProviderKind::Zero) => {
            dr_estimate(&dataset, &pi, &ZeroProvider, v, SOFT_EPS)?
        }
        EstimatorKind::MrdrQ => {
            let fitted = mrdr_train(
                &dataset,
                &pi,
                &mrdr_cfg(oppe_core::estimators::MrdrVariant::Mrdr),
            )?;
            mrdr_q_estimate(&dataset, &fitted, &pi)?
        }
    };
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn print_report(report: &RmseReport) {
    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
    println!(
        "{:<22} {:>12} {:>16} {:>4} {:>7}",
        "estimator", "rmse_mean", "rmse_individual", "ok", "failed"
    );
    for row in &report.rows {
        println!(
            "{:<22} {:>12} {:>16} {:>4} {:>7}",
            row.estimator,
            cell(row.rmse_mean),
            cell(row.rmse_individual),
            row.runs_ok,
            row.runs_failed
        );
    }
}

fn run_and_emit(config: &ExperimentConfig) -> anyhow::Result<()> {
    let report = run_experiment(config)?;
    let csv = emit_report(&report, ReportFormat::Csv)?;
    let json = emit_report(&report, ReportFormat::Json)?;
    print_report(&report);
    println!("reports: {} and {}", csv.display(), json.display());
    Ok(())
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    if let Some(env) = a.template {
        let config = ExperimentConfig::desk_scale(&env);
        std::fs::write(&a.config, serde_json::to_string_pretty(&config)?)?;
        println!("wrote desk-scale template for {env} to {}", a.config.display());
        return Ok(());
    }
    run_and_emit(&load_config(&a.config)?)
}

fn cmd_sweep_alpha(a: SweepAlphaArgs) -> anyhow::Result<()> {
    let mut config = load_config(&a.config)?;
    config.alphas = a.alphas;
    config.estimators = vec!["repbm".to_string()];
    run_and_emit(&config)
}

/// Random renormalized perturbation of transitions and rewards, the
/// "approximate model" side of the Simulation Lemma check.
fn perturb(mdp: &TabularMdp, scale: f64, rng: &mut impl rand::Rng) -> TabularMdp {
    let mut out = mdp.clone();
    for s in 0..out.state_count {
        for a in 0..out.action_count {
            let row = &mut out.transition[s][a];
            for p in row.iter_mut() {
                *p = (*p + scale * rng.random::<f64>()).max(1e-3);
            }
            let total: f64 = row.iter().sum();
            for p in row.iter_mut() {
                *p /= total;
            }
            out.reward[s][a] += scale * (rng.random::<f64>() - 0.5);
        }
    }
    out
}

fn cmd_oracle(a: OracleArgs) -> anyhow::Result<()> {
    println!("oracle checks ({} instances, seed {})", a.instances, a.seed);

    let mut max_gap = 0.0f64;
    let mut max_bias = 0.0f64;
    let mut dominated = 0usize;
    for i in 0..a.instances {
        let mut stream = rng::stream(a.seed, i as u64, "oracle");
        let states = 2 + i % 3;
        let horizon = 2 + i % 3;
        let mdp = oracle::random_mdp(states, 2, horizon, &mut stream);
        let mu = oracle::random_positive_policy(states, 2, &mut stream);
        let pi = oracle::random_deterministic_policy(states, 2, &mut stream);

        let model = perturb(&mdp, 0.1, &mut stream);
        max_gap = max_gap.max(oracle::simulation_identity_gap(&mdp, &model, &pi, horizon)?);

        let expected = oracle::is_expected_value(&mdp, &mu, &mu, &pi, horizon)?;
        max_bias = max_bias.max((expected - oracle::exact_value(&mdp, &pi, horizon)?).abs());

        let dists = oracle::weight_distributions(&mdp, &mu, &pi, horizon)?;
        if dists.is_weights.variance() + 1e-12 >= dists.marginal_ratios.variance() {
            dominated += 1;
        }
    }
    println!("simulation lemma   max identity gap {max_gap:.3e}");
    println!("is unbiasedness    max |E[V_IS] - V^pi| {max_bias:.3e}");
    println!(
        "variance theorem   Var(IS) >= Var(marginal) on {dominated}/{} instances",
        a.instances
    );

    let mut max_err = 0.0f64;
    for delta in [0.05, 0.1, 0.2] {
        for h in [2, 4, 6] {
            let expected = oracle::is_bias_with_estimated_mu(h, delta)?;
            max_err = max_err.max((expected - (1.0 - delta).powi(-(h as i32))).abs());
        }
    }
    println!("estimated-mu bias  max |enumerated - (1-d)^-H| {max_err:.3e} over 9 (d, H) pairs");
    Ok(())
}
