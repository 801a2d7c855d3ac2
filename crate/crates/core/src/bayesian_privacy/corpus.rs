//! Seeded random worlds for the verification suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use super::{FiniteWorld, ProtectionPair};
use crate::distributions::DiscreteDist;
use crate::error::Result;
use crate::seed::{derive_seed, rng};

pub const DEFAULT_ALPHAS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone, Serialize)]
pub struct CorpusEntry {
    pub index: usize,
    pub alpha: f64,
    pub worlds: Vec<FiniteWorld>,
    pub pairs: Vec<ProtectionPair>,
    /// Uniform mixture of the client pairs.
    pub aggregated: ProtectionPair,
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("unit gamma");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // Reject draws with an underflowing coordinate so log leakage stays finite.
        if total > 0.0 && draws.iter().all(|&v| v / total > 1e-12) {
            return draws.into_iter().map(|v| v / total).collect();
        }
    }
}

pub fn random_dist(rng: &mut ChaCha8Rng, atoms: Vec<String>) -> DiscreteDist {
    let probs = dirichlet(rng, atoms.len());
    DiscreteDist::new(atoms, probs).expect("dirichlet draw is a distribution")
}

/// Dirichlet(1) prior and kernel rows, uniform [0, 1] utilities.
pub fn random_world(rng: &mut ChaCha8Rng, data_atoms: usize, param_atoms: usize) -> FiniteWorld {
    let prior = dirichlet(rng, data_atoms);
    let kernel = (0..param_atoms).map(|_| dirichlet(rng, data_atoms)).collect();
    let utility = (0..param_atoms)
        .map(|_| (0..data_atoms).map(|_| rng.gen::<f64>()).collect())
        .collect();
    FiniteWorld::from_tables(prior, kernel, utility).expect("random world is valid")
}

fn random_pair(rng: &mut ChaCha8Rng, world: &FiniteWorld) -> ProtectionPair {
    let atoms = world.param_atoms().to_vec();
    let p_o = if rng.gen_bool(0.5) {
        let optimal = world.optimal_params();
        let weights = dirichlet(rng, optimal.len());
        let mut probs = vec![0.0; atoms.len()];
        for (&i, w) in optimal.iter().zip(weights) {
            probs[i] = w;
        }
        DiscreteDist::new(atoms.clone(), probs).expect("valid")
    } else {
        random_dist(rng, atoms.clone())
    };
    let p_d = random_dist(rng, atoms);
    ProtectionPair::new(p_o, p_d).expect("shared support")
}

fn uniform_mixture(dists: &[&DiscreteDist]) -> Result<DiscreteDist> {
    let n = dists.len() as f64;
    let mut probs = vec![0.0; dists[0].len()];
    for d in dists {
        for (o, p) in probs.iter_mut().zip(d.probs()) {
            *o += p / n;
        }
    }
    DiscreteDist::new(dists[0].support().to_vec(), probs)
}

pub fn aggregate(pairs: &[ProtectionPair]) -> Result<ProtectionPair> {
    let p_o: Vec<_> = pairs.iter().map(|p| &p.p_o).collect();
    let p_d: Vec<_> = pairs.iter().map(|p| &p.p_d).collect();
    ProtectionPair::new(uniform_mixture(&p_o)?, uniform_mixture(&p_d)?)
}

/// Entry `i` depends only on `(master, i)`, so corpora of different sizes
/// share their common prefix.
pub fn generate_corpus(master: u64, size: usize, alphas: &[f64]) -> Result<Vec<CorpusEntry>> {
    let alphas = if alphas.is_empty() { &DEFAULT_ALPHAS[..] } else { alphas };
    (0..size)
        .map(|index| {
            let mut r = rng(derive_seed(master, "bayes_corpus", index as u64));
            let clients = r.gen_range(1..=2);
            let nd = r.gen_range(2..=4);
            let nw = r.gen_range(2..=5);
            let worlds: Vec<_> = (0..clients).map(|_| random_world(&mut r, nd, nw)).collect();
            let pairs: Vec<_> = worlds.iter().map(|w| random_pair(&mut r, w)).collect();
            let aggregated = aggregate(&pairs)?;
            Ok(CorpusEntry {
                index,
                alpha: alphas[index % alphas.len()],
                worlds,
                pairs,
                aggregated,
            })
        })
        .collect()
}

/// Every client pair has `p_o == p_d`.
pub fn trivial_corpus(master: u64, size: usize) -> Result<Vec<CorpusEntry>> {
    let mut entries = generate_corpus(master, size, &DEFAULT_ALPHAS)?;
    for e in &mut entries {
        for p in &mut e.pairs {
            p.p_o = p.p_d.clone();
        }
        e.aggregated = aggregate(&e.pairs)?;
    }
    Ok(entries)
}
