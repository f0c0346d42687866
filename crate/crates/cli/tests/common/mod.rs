#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rbon_core::{Candidate, CandidateSet};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Runs the CLI in-process with string arguments.
pub fn rbon(args: &[&str]) -> i32 {
    let argv = std::iter::once("rbon").chain(args.iter().copied()).map(String::from);
    rbon_cli::run(argv)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` candidates with Gaussian embeddings, proxy and gold rewards and
/// negative log-probabilities.
pub fn random_set(rng: &mut ChaCha8Rng, id: usize, n: usize, d: usize) -> CandidateSet {
    let candidates = (0..n)
        .map(|i| Candidate {
            id: i,
            text: format!("candidate {i}"),
            rewards: [
                ("proxy".to_string(), gaussian(rng)),
                ("gold".to_string(), gaussian(rng)),
            ]
            .into_iter()
            .collect(),
            embedding: (0..d).map(|_| gaussian(rng)).collect(),
            logprob: Some(-rng.random_range(0.5..30.0)),
        })
        .collect();
    rbon_core::validate_set(CandidateSet {
        instruction_id: format!("rand-{id:04}"),
        instruction_text: String::new(),
        candidates,
    })
    .expect("random set is valid")
}
