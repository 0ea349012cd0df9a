use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use super::{ClientDataset, FederationData};
use crate::error::{Error, Result};
use crate::nn::{self, Matrix, Model, ModelSpec};

pub const SYNTHETIC_DIM: usize = 60;
pub const SYNTHETIC_CLASSES: usize = 10;
/// Per-client sample count bounds.
pub const SYNTHETIC_SIZE_RANGE: (usize, usize) = (250, 25810);

fn normal(mean: f64, std: f64) -> Result<Normal<f64>> {
    Normal::new(mean, std).map_err(|e| Error::config(format!("normal({mean}, {std}): {e}")))
}

/// Synthetic Non-IID federation.
///
/// Client `k` draws a model mean `u_k ~ N(0, alpha)` and a feature-mean seed
/// `b_k ~ N(0, beta)`. Its labelling model has weights and biases drawn from
/// `N(u_k, 1)`; its features come from `N(v_k, diag(j^-1.2))` with
/// `v_k[j] ~ N(b_k, 1)`; labels are the argmax of the labelling model's
/// softmax. Client sizes are `5 (⌊LogNormal(4, 2)⌋ + 50)` clipped to
/// [`SYNTHETIC_SIZE_RANGE`] (heavy tailed).
///
/// `alpha == beta == 0` is the IID limit: every client shares one labelling
/// model and one feature mean.
pub fn generate_synthetic(n_clients: usize, alpha: f64, beta: f64, seed: u64) -> Result<FederationData> {
    if n_clients < 2 {
        return Err(Error::config(format!(
            "synthetic federation needs at least 2 clients, got {n_clients}"
        )));
    }
    if !(alpha.is_finite() && alpha >= 0.0 && beta.is_finite() && beta >= 0.0) {
        return Err(Error::config(format!(
            "alpha and beta must be finite and >= 0, got {alpha}, {beta}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = SYNTHETIC_SIZE_RANGE;
    let size_dist = LogNormal::<f64>::new(4.0, 2.0).expect("valid lognormal");
    let sizes: Vec<usize> = (0..n_clients)
        .map(|_| ((size_dist.sample(&mut rng).floor() + 50.0) * 5.0).clamp(lo as f64, hi as f64) as usize)
        .collect();

    let model_means: Vec<f64> = {
        let d = normal(0.0, alpha)?;
        (0..n_clients).map(|_| d.sample(&mut rng)).collect()
    };
    let feature_seeds: Vec<f64> = {
        let d = normal(0.0, beta)?;
        (0..n_clients).map(|_| d.sample(&mut rng)).collect()
    };
    let iid = alpha == 0.0 && beta == 0.0;
    let mut feature_means: Vec<Vec<f64>> = feature_seeds
        .iter()
        .map(|&b| {
            let d = normal(b, 1.0)?;
            Ok((0..SYNTHETIC_DIM).map(|_| d.sample(&mut rng)).collect())
        })
        .collect::<Result<_>>()?;
    if iid {
        let shared = feature_means[0].clone();
        feature_means.iter_mut().for_each(|m| m.clone_from(&shared));
    }
    let feature_std: Vec<f64> = (1..=SYNTHETIC_DIM).map(|j| (j as f64).powf(-1.2).sqrt()).collect();
    let std_normal = normal(0.0, 1.0)?;

    let spec = ModelSpec::mlr(SYNTHETIC_DIM, SYNTHETIC_CLASSES);
    let mut clients = Vec::with_capacity(n_clients);
    let mut shared_truth: Option<Model> = None;
    for k in 0..n_clients {
        let truth = match &shared_truth {
            Some(t) => t.clone(),
            None => {
                let d = normal(model_means[k], 1.0)?;
                let w: Vec<f64> = (0..SYNTHETIC_DIM * SYNTHETIC_CLASSES).map(|_| d.sample(&mut rng)).collect();
                let b: Vec<f64> = (0..SYNTHETIC_CLASSES).map(|_| d.sample(&mut rng)).collect();
                Model::from_components(spec, vec![w, b])?
            }
        };
        if iid {
            shared_truth = Some(truth.clone());
        }

        let mut features = Vec::with_capacity(sizes[k] * SYNTHETIC_DIM);
        for _ in 0..sizes[k] {
            for (mean, std) in feature_means[k].iter().zip(&feature_std) {
                features.push(mean + std * std_normal.sample(&mut rng));
            }
        }
        let x = Matrix::new(sizes[k], SYNTHETIC_DIM, features)?;
        let labels = label_with(&truth, &x)?;
        let mut client = ClientDataset::split(k, &x, &labels, &mut rng)?;
        client.ground_truth = Some(truth);
        clients.push(client);
    }
    FederationData::new("synthetic", SYNTHETIC_DIM, SYNTHETIC_CLASSES, clients)
}

/// Argmax of the labelling model's class probabilities.
pub(crate) fn label_with(truth: &Model, x: &Matrix) -> Result<Vec<usize>> {
    Ok(nn::forward(truth, x)?.iter_rows().map(nn::argmax).collect())
}
