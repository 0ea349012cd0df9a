use serde::{Deserialize, Serialize};

use super::Algorithm;
use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::nn::Architecture;

/// Every knob of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub dataset: DatasetKind,
    pub model: Architecture,
    /// Number of clients N.
    pub clients: usize,
    /// Communication rounds T.
    pub rounds: usize,
    /// Clients sampled per round S.
    pub clients_per_round: usize,
    /// Local iterations R per round.
    pub local_epochs: usize,
    /// Mini-batch size |D|.
    pub batch_size: usize,
    /// Learning rate η.
    pub eta: f64,
    /// Proximal strength λ of the client step.
    pub lambda: f64,
    /// Attention scale σ.
    pub sigma: f64,
    /// FedProx proximal strength μ.
    pub mu: f64,
    /// pFedMe inner steps K.
    pub pfedme_steps: usize,
    /// pFedMe personal learning rate.
    pub personal_lr: f64,
    /// HeurFedAMP self weight.
    pub self_weight: f64,
    /// HeurFedAMP attention scale.
    pub heur_sigma: f64,
    /// ℓ2 coefficient on weight components.
    pub l2: f64,
    /// DNN hidden width.
    pub hidden: usize,
    /// Synthetic model heterogeneity ᾱ.
    pub alpha: f64,
    /// Synthetic feature heterogeneity β̄.
    pub beta: f64,
    pub seed: u64,
    /// Let unsampled clients keep training between receipts.
    pub all_clients_train: bool,
    /// Draw every client's starting model independently instead of sharing one.
    pub per_client_init: bool,
    /// Weight averages by training-set size instead of uniformly.
    pub weighted_average: bool,
    /// Keep every round's attention matrices in the result.
    pub record_attention: bool,
}

impl RunConfig {
    /// Defaults for a dataset/model pair.
    pub fn defaults(algorithm: Algorithm, dataset: DatasetKind, model: Architecture) -> Self {
        let synthetic = dataset == DatasetKind::Synthetic;
        Self {
            algorithm,
            dataset,
            model,
            clients: if synthetic { 100 } else { 20 },
            rounds: 800,
            clients_per_round: if synthetic { 20 } else { 10 },
            local_epochs: 20,
            batch_size: 20,
            eta: 0.02,
            lambda: 5.0,
            sigma: 50.0,
            mu: 0.001,
            pfedme_steps: 5,
            personal_lr: 0.02,
            self_weight: 0.5,
            heur_sigma: 50.0,
            l2: match model {
                Architecture::Mlr => 1e-4,
                Architecture::Dnn => 0.0,
            },
            hidden: dataset.hidden_width(),
            alpha: 0.5,
            beta: 0.5,
            seed: 1,
            all_clients_train: false,
            per_client_init: true,
            weighted_average: false,
            record_attention: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rounds", self.rounds),
            ("clients", self.clients),
            ("clients-per-round", self.clients_per_round),
            ("local-epochs", self.local_epochs),
            ("batch-size", self.batch_size),
            ("pfedme-steps", self.pfedme_steps),
            ("hidden", self.hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("--{name} must be at least 1")));
            }
        }
        if self.clients_per_round > self.clients {
            return Err(Error::config(format!(
                "--clients-per-round ({}) exceeds --clients ({})",
                self.clients_per_round, self.clients
            )));
        }
        let nonneg = [
            ("eta", self.eta),
            ("lambda", self.lambda),
            ("sigma", self.sigma),
            ("mu", self.mu),
            ("personal-lr", self.personal_lr),
            ("heur-sigma", self.heur_sigma),
            ("l2", self.l2),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("--{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.self_weight > 0.0 && self.self_weight <= 1.0) {
            return Err(Error::config(format!(
                "--self-weight must lie in (0, 1], got {}",
                self.self_weight
            )));
        }
        Ok(())
    }
}
