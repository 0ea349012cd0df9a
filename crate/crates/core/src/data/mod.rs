//! Client datasets: the synthetic Non-IID generator, label sharding of real
//! image datasets, binary readers, and the per-client 75/25 split.

mod export;
mod readers;
mod shard;
mod synthetic;

pub use export::{read_federation_csv, write_federation_csv};
pub use readers::{
    load_image_dataset, read_cifar_bin, read_idx, read_idx_images, read_idx_labels,
    write_idx_images, write_idx_labels, ImageDataset,
};
pub use shard::{shard_by_label, MNIST_SIZE_RANGE};
pub use synthetic::{generate_synthetic, SYNTHETIC_CLASSES, SYNTHETIC_DIM, SYNTHETIC_SIZE_RANGE};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, Model};

/// Fraction of each client's samples held out for testing.
pub const TEST_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub id: usize,
    pub train_x: Matrix,
    pub train_y: Vec<usize>,
    pub test_x: Matrix,
    pub test_y: Vec<usize>,
    /// Distinct labels present on this client, ascending.
    pub classes: Vec<usize>,
    /// The labelling model, for synthetic clients.
    pub ground_truth: Option<Model>,
}

impl ClientDataset {
    /// Splits `x`/`y` per label so that both sides see every class with at
    /// least two samples; the overall test share is `TEST_FRACTION`.
    pub fn split<R: Rng + ?Sized>(id: usize, x: &Matrix, y: &[usize], rng: &mut R) -> Result<Self> {
        let (train_idx, test_idx) = stratified_split(y, TEST_FRACTION, rng);
        if train_idx.is_empty() {
            return Err(Error::Empty("client train split"));
        }
        if test_idx.is_empty() {
            return Err(Error::Empty("client test split"));
        }
        let mut classes: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
        classes.sort_unstable();
        classes.dedup();
        Ok(Self {
            id,
            train_x: x.select_rows(&train_idx)?,
            train_y: train_idx.iter().map(|&i| y[i]).collect(),
            test_x: x.select_rows(&test_idx)?,
            test_y: test_idx.iter().map(|&i| y[i]).collect(),
            classes,
            ground_truth: None,
        })
    }

    pub fn train_len(&self) -> usize {
        self.train_y.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_y.len()
    }

    pub fn len(&self) -> usize {
        self.train_len() + self.test_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Returns sorted `(train, test)` index lists.
///
/// The test total is `round(fraction * n)`. Every class with at least two
/// samples contributes at least one test and one train sample; the rest of
/// the test budget goes to the largest fractional remainders.
pub(crate) fn stratified_split<R: Rng + ?Sized>(
    labels: &[usize],
    fraction: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    for g in groups.iter_mut() {
        g.shuffle(rng);
    }

    let target = (fraction * labels.len() as f64).round() as usize;
    let mut take: Vec<usize> = groups
        .iter()
        .map(|g| {
            if g.len() < 2 {
                0
            } else {
                ((fraction * g.len() as f64).floor() as usize).clamp(1, g.len() - 1)
            }
        })
        .collect();
    let mut assigned: usize = take.iter().sum();
    if assigned < target {
        let mut order: Vec<usize> = (0..classes).collect();
        let remainder = |c: usize| fraction * groups[c].len() as f64 - take[c] as f64;
        order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));
        while assigned < target {
            let mut progressed = false;
            for &c in &order {
                if assigned == target {
                    break;
                }
                if take[c] + 1 < groups[c].len() {
                    take[c] += 1;
                    assigned += 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    }

    let mut train = Vec::with_capacity(labels.len() - assigned);
    let mut test = Vec::with_capacity(assigned);
    for (g, &t) in groups.iter().zip(&take) {
        test.extend_from_slice(&g[..t]);
        train.extend_from_slice(&g[t..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// All clients of one federation; they share feature width and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationData {
    pub name: String,
    pub feature_width: usize,
    pub classes: usize,
    pub clients: Vec<ClientDataset>,
}

impl FederationData {
    pub fn new(name: impl Into<String>, feature_width: usize, classes: usize, clients: Vec<ClientDataset>) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::Empty("federation"));
        }
        for c in &clients {
            for m in [&c.train_x, &c.test_x] {
                if m.cols() != feature_width {
                    return Err(Error::DimensionMismatch {
                        context: "client feature width",
                        expected: feature_width,
                        actual: m.cols(),
                    });
                }
            }
            if let Some(&label) = c.train_y.iter().chain(&c.test_y).find(|&&l| l >= classes) {
                return Err(Error::InvalidLabel { label, classes });
            }
        }
        Ok(Self {
            name: name.into(),
            feature_width,
            classes,
            clients,
        })
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }
}

/// Which benchmark a federation is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Mnist,
    Fmnist,
    Cifar10,
}

impl DatasetKind {
    pub fn id(self) -> &'static str {
        match self {
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fmnist => "fmnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn feature_width(self) -> usize {
        match self {
            DatasetKind::Synthetic => SYNTHETIC_DIM,
            DatasetKind::Mnist | DatasetKind::Fmnist => 784,
            DatasetKind::Cifar10 => 3072,
        }
    }

    /// DNN hidden width used with this dataset.
    pub fn hidden_width(self) -> usize {
        match self {
            DatasetKind::Synthetic => 20,
            _ => 100,
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "synthetic" => Ok(DatasetKind::Synthetic),
            "mnist" => Ok(DatasetKind::Mnist),
            "fmnist" | "fashion-mnist" => Ok(DatasetKind::Fmnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::config(format!(
                "unknown dataset `{other}` (expected synthetic, mnist, fmnist or cifar10)"
            ))),
        }
    }
}
