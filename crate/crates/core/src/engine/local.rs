use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::nn::{self, Gradient, Model};

/// A client's private objective, observed through fresh mini-batches.
pub trait Objective: Sync {
    /// Loss and gradient at `params` on a newly drawn mini-batch.
    fn minibatch_grad(&self, params: &Model, rng: &mut ChaCha8Rng) -> Result<(f64, Gradient)>;
}

/// Softmax cross-entropy (plus ℓ2 on weights) over a client's training split.
pub struct MiniBatchObjective<'a> {
    pub data: &'a ClientDataset,
    pub batch_size: usize,
    pub l2: f64,
}

impl Objective for MiniBatchObjective<'_> {
    fn minibatch_grad(&self, params: &Model, rng: &mut ChaCha8Rng) -> Result<(f64, Gradient)> {
        let n = self.data.train_len();
        if n == 0 {
            return Err(Error::Empty("client training set"));
        }
        if n <= self.batch_size {
            return nn::loss_and_grad(params, &self.data.train_x, &self.data.train_y, self.l2);
        }
        // distinct samples within a batch; batches are independent draws
        let idx = index::sample(rng, n, self.batch_size).into_vec();
        let x = self.data.train_x.select_rows(&idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| self.data.train_y[i]).collect();
        nn::loss_and_grad(params, &x, &y, self.l2)
    }
}

/// Per-client state carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    /// Latest local model Θ_i.
    pub local: Model,
    /// Last personalized model received from the server (proximal anchor).
    pub anchor: Model,
    /// pFedMe personal model θ_i.
    pub personal: Option<Model>,
}

impl ClientState {
    pub fn new(id: usize, init: Model) -> Self {
        Self {
            id,
            local: init.clone(),
            anchor: init,
            personal: None,
        }
    }

    /// Adopts a model sent by the server as both the starting point and the anchor.
    pub fn receive(&mut self, model: Model) {
        self.local = model.clone();
        self.anchor = model;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalRule {
    Sgd,
    /// Gradient of `f + (strength/2)‖Θ − anchor‖²`.
    Proximal { strength: f64 },
    /// pFedMe: `inner_steps` SGD steps at `personal_lr` on
    /// `f(θ) + (λ/2)‖θ − w‖²` approximate the personal model, then
    /// `w ← w − η λ (w − θ)`.
    PFedMe {
        lambda: f64,
        inner_steps: usize,
        personal_lr: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSchedule {
    /// Outer iterations R.
    pub steps: usize,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub model: Model,
    pub personal: Option<Model>,
    /// Mean mini-batch loss over the outer iterations.
    pub mean_loss: f64,
}

fn finite_or(client: usize, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: "local update",
            client,
        })
    }
}

/// Runs `schedule.steps` local iterations from `client.local`, each on a fresh
/// mini-batch, keeping `client.anchor` fixed throughout.
pub fn local_update<O: Objective + ?Sized>(
    client: &ClientState,
    objective: &O,
    rule: LocalRule,
    schedule: LocalSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<LocalOutcome> {
    client.local.check_congruent(&client.anchor)?;
    let mut model = client.local.clone();
    let mut personal = None;
    let mut loss_total = 0.0;

    for _ in 0..schedule.steps {
        match rule {
            LocalRule::Sgd | LocalRule::Proximal { .. } => {
                let (loss, mut grad) = objective.minibatch_grad(&model, rng)?;
                if let LocalRule::Proximal { strength } = rule {
                    if strength != 0.0 {
                        grad.add_proximal(&model, &client.anchor, strength)?;
                    }
                }
                finite_or(client.id, loss.is_finite() && grad.is_finite())?;
                nn::sgd_step_in_place(&mut model, &grad, schedule.eta)?;
                loss_total += loss;
            }
            LocalRule::PFedMe {
                lambda,
                inner_steps,
                personal_lr,
            } => {
                let mut theta = personal.take().unwrap_or_else(|| model.clone());
                let mut last_loss = 0.0;
                for _ in 0..inner_steps {
                    let (loss, mut grad) = objective.minibatch_grad(&theta, rng)?;
                    grad.add_proximal(&theta, &model, lambda)?;
                    finite_or(client.id, loss.is_finite() && grad.is_finite())?;
                    nn::sgd_step_in_place(&mut theta, &grad, personal_lr)?;
                    last_loss = loss;
                }
                for l in 0..model.num_components() {
                    let t = theta.component(l).to_vec();
                    for (w, tv) in model.component_mut(l).iter_mut().zip(t) {
                        *w -= schedule.eta * lambda * (*w - tv);
                    }
                }
                personal = Some(theta);
                loss_total += last_loss;
            }
        }
    }
    finite_or(client.id, model.is_finite())?;
    Ok(LocalOutcome {
        model,
        personal,
        mean_loss: loss_total / schedule.steps.max(1) as f64,
    })
}
