#![allow(dead_code)]

use mondeq_core::netio::generate_network;
use mondeq_core::{MonDEQ, Norm, PerturbationSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn net_and_input(p0: usize, p: usize, k: usize, seed: u64) -> (MonDEQ, Vec<f64>) {
    let net = generate_network(p0, p, k, 1.0, seed, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x0 = (0..p0).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (net, x0)
}

pub fn pert(x0: &[f64], eps: f64, q: Norm) -> PerturbationSpec {
    PerturbationSpec::new(x0.to_vec(), eps, q).unwrap()
}

pub const NORMS: [Norm; 2] = [Norm::L2, Norm::Inf];

pub fn cases(n: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config { cases: n, failure_persistence: None, ..Default::default() }
}
