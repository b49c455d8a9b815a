//! Seeded fixtures shared by the criterion benches so timings
//! compare like against like across runs.

use oppe_core::environments::Environment;
use oppe_core::policies::{Policy, QNetwork};
use oppe_core::{collect, make_env, rng, Dataset};

/// A greedy policy over a randomly initialized Q network for `env`.
pub fn fixture_policy(env: &dyn Environment, seed: u64) -> Policy {
    let spec = env.spec();
    let q = QNetwork::init(
        spec.state_dim,
        spec.action_count,
        16,
        &mut rng::stream(seed, 0, "bench-policy"),
    );
    Policy::Greedy { q }
}

/// An annotated lineartoy dataset with a train/validation split,
/// collected under the softened fixture policy.
pub fn fixture_dataset(n: usize, seed: u64) -> Dataset {
    let env = make_env("lineartoy").expect("lineartoy exists");
    let pi = fixture_policy(&*env, seed);
    let mu = pi.soften(0.2).expect("greedy policies soften");
    let mut dataset = collect(&*env, &mu, n, seed).expect("collection succeeds");
    dataset.annotate(&pi).expect("annotation succeeds");
    dataset.split(0.9, seed).expect("split succeeds");
    dataset
}
