use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClientDataset, FederationData};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Client size range used for the MNIST-style benchmarks.
pub const MNIST_SIZE_RANGE: (usize, usize) = (1165, 3834);

/// Label-skewed partition: client `i` holds classes `(i + j) mod C` for
/// `j < classes_per_client`, with a total size drawn uniformly from
/// `size_range` and split evenly across its classes. Samples are drawn
/// without replacement from shuffled per-class pools, so no sample is given
/// to two clients. Class pairs may repeat across clients when `N·k > C`.
pub fn shard_by_label(
    name: &str,
    features: &Matrix,
    labels: &[usize],
    n_clients: usize,
    classes_per_client: usize,
    size_range: (usize, usize),
    seed: u64,
) -> Result<FederationData> {
    if labels.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            context: "label count",
            expected: features.rows(),
            actual: labels.len(),
        });
    }
    let classes = labels.iter().copied().max().ok_or(Error::Empty("dataset"))? + 1;
    if n_clients == 0 {
        return Err(Error::config("client count must be positive"));
    }
    if classes_per_client == 0 || classes_per_client > classes {
        return Err(Error::config(format!(
            "classes per client must lie in [1, {classes}], got {classes_per_client}"
        )));
    }
    let (lo, hi) = size_range;
    if lo < 2 * classes_per_client || lo > hi {
        return Err(Error::config(format!(
            "invalid client size range [{lo}, {hi}] for {classes_per_client} classes per client"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l].push(i);
    }
    for p in pools.iter_mut() {
        p.shuffle(&mut rng);
    }

    // (class, count) requests per client
    let mut plans = Vec::with_capacity(n_clients);
    let mut demand = vec![0usize; classes];
    for i in 0..n_clients {
        let size = rng.random_range(lo..=hi);
        let plan: Vec<(usize, usize)> = (0..classes_per_client)
            .map(|j| {
                let class = (i + j) % classes;
                let count = size / classes_per_client + usize::from(j < size % classes_per_client);
                (class, count)
            })
            .collect();
        for &(class, count) in &plan {
            demand[class] += count;
        }
        plans.push(plan);
    }
    for (class, (&needed, pool)) in demand.iter().zip(&pools).enumerate() {
        if needed > pool.len() {
            return Err(Error::InsufficientSamples {
                class,
                needed,
                available: pool.len(),
            });
        }
    }

    let mut cursor = vec![0usize; classes];
    let mut clients = Vec::with_capacity(n_clients);
    for (i, plan) in plans.into_iter().enumerate() {
        let mut idx = Vec::new();
        for (class, count) in plan {
            idx.extend_from_slice(&pools[class][cursor[class]..cursor[class] + count]);
            cursor[class] += count;
        }
        idx.sort_unstable();
        let x = features.select_rows(&idx)?;
        let y: Vec<usize> = idx.iter().map(|&j| labels[j]).collect();
        clients.push(ClientDataset::split(i, &x, &y, &mut rng)?);
    }
    FederationData::new(name, features.cols(), classes, clients)
}
