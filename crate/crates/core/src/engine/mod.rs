//! The federated round loop: client sampling, server aggregation, model
//! distribution, local training and per-round evaluation.
//!
//! Every client update draws from its own RNG stream keyed by
//! `(seed, client, round)`, so results do not depend on how rayon schedules
//! the parallel sections.

mod config;
mod local;
mod registry;

use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::RunConfig;
pub use local::{
    local_update, ClientState, LocalOutcome, LocalRule, LocalSchedule, MiniBatchObjective, Objective,
};
pub use registry::{Algorithm, ClientRule, EvalTarget, ServerRule};

use crate::aggregation::{average_aggregate, heurfedamp_aggregate, mcsa_aggregate, AttentionWeights, CohortMatrix};
use crate::data::{
    generate_synthetic, load_image_dataset, shard_by_label, DatasetKind, FederationData, MNIST_SIZE_RANGE,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_cohort, MetricsSeries, RoundMetrics};
use crate::nn::{Architecture, Model, ModelSpec};

const SALT_SERVER: u64 = 0x5EED_5E4E_0000_0001;
const SALT_INIT: u64 = 0x5EED_1417_0000_0002;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for one client in one round.
pub fn stream_rng(seed: u64, client: usize, round: usize) -> ChaCha8Rng {
    let h = splitmix(splitmix(splitmix(seed) ^ client as u64) ^ round as u64);
    ChaCha8Rng::seed_from_u64(h)
}

fn salted_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ salt))
}

/// `s` distinct ids drawn uniformly from `0..n`, in ascending order.
pub fn sample_clients(n: usize, s: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if s == 0 || s > n {
        return Err(Error::config(format!("cannot sample {s} of {n} clients")));
    }
    let mut ids = index::sample(rng, n, s).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Model shape implied by a configuration and a federation.
pub fn model_spec(cfg: &RunConfig, data: &FederationData) -> ModelSpec {
    match cfg.model {
        Architecture::Mlr => ModelSpec::mlr(data.feature_width, data.classes),
        Architecture::Dnn => ModelSpec::dnn(data.feature_width, cfg.hidden, data.classes),
    }
}

/// Generates (synthetic) or loads and shards (image datasets) the federation
/// described by `cfg`. Image files are looked up under `data_dir`.
pub fn build_federation(cfg: &RunConfig, data_dir: Option<&Path>) -> Result<FederationData> {
    match cfg.dataset {
        DatasetKind::Synthetic => generate_synthetic(cfg.clients, cfg.alpha, cfg.beta, cfg.seed),
        kind => {
            let dir = data_dir.ok_or_else(|| {
                Error::config(format!(
                    "dataset `{}` needs a data directory (--data-dir or FEDMCSA_DATA_DIR)",
                    kind.id()
                ))
            })?;
            let images = load_image_dataset(kind, dir)?;
            shard_by_label(
                kind.id(),
                &images.features,
                &images.labels,
                cfg.clients,
                2,
                MNIST_SIZE_RANGE,
                cfg.seed,
            )
        }
    }
}

/// Server side of the federation.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    /// Personalized model held for every client; only sampled columns change.
    pub columns: Vec<Model>,
    /// Latest averaged model (average-rule algorithms only).
    pub global: Option<Model>,
    /// Rounds completed so far.
    pub round: usize,
    rng: ChaCha8Rng,
}

impl ServerState {
    pub fn new(init: &Model, n_clients: usize, seed: u64) -> Self {
        Self {
            columns: vec![init.clone(); n_clients],
            global: None,
            round: 0,
            rng: salted_rng(seed, SALT_SERVER),
        }
    }
}

/// Everything one round produced besides the updated states.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub metrics: RoundMetrics,
    pub sampled: Vec<usize>,
    pub attention: Option<AttentionWeights>,
}

/// Fresh server and client states for a run.
pub fn initial_states(cfg: &RunConfig, data: &FederationData) -> Result<(ServerState, Vec<ClientState>)> {
    let spec = model_spec(cfg, data);
    let mut rng = salted_rng(cfg.seed, SALT_INIT);
    let init = Model::init(spec, &mut rng)?;
    let mut server = ServerState::new(&init, data.len(), cfg.seed);
    let mut clients = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let start = if cfg.per_client_init && i > 0 {
            Model::init(spec, &mut rng)?
        } else {
            init.clone()
        };
        server.columns[i] = start.clone();
        clients.push(ClientState::new(i, start));
    }
    Ok((server, clients))
}

fn local_rule(cfg: &RunConfig) -> LocalRule {
    match cfg.algorithm.client_rule() {
        ClientRule::Sgd => LocalRule::Sgd,
        ClientRule::Proximal => LocalRule::Proximal { strength: cfg.lambda },
        ClientRule::FedProx => LocalRule::Proximal { strength: cfg.mu },
        ClientRule::PFedMe => LocalRule::PFedMe {
            lambda: cfg.lambda,
            inner_steps: cfg.pfedme_steps,
            personal_lr: cfg.personal_lr,
        },
    }
}

/// The model that stands for each client at evaluation time.
pub fn evaluated_models<'a>(
    cfg: &RunConfig,
    server: &'a ServerState,
    clients: &'a [ClientState],
) -> Vec<&'a Model> {
    match cfg.algorithm.eval_target() {
        EvalTarget::Global => match &server.global {
            Some(g) => vec![g; clients.len()],
            None => clients.iter().map(|c| &c.local).collect(),
        },
        EvalTarget::Server => server.columns.iter().collect(),
        EvalTarget::Local => clients.iter().map(|c| &c.local).collect(),
        EvalTarget::Personal => clients.iter().map(|c| c.personal.as_ref().unwrap_or(&c.local)).collect(),
    }
}

/// One communication round.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    data: &FederationData,
    cfg: &RunConfig,
) -> Result<RoundOutput> {
    let round = server.round + 1;
    let mut step = || -> Result<RoundOutput> {
        let started = Instant::now();
        let n = clients.len();
        if n != data.len() || server.columns.len() != n {
            return Err(Error::DimensionMismatch {
                context: "client count",
                expected: data.len(),
                actual: n,
            });
        }

        let sampled = sample_clients(n, cfg.clients_per_round, &mut server.rng)?;
        let cohort = CohortMatrix::new(sampled.iter().map(|&i| clients[i].local.clone()).collect(), round)?;

        let mut attention = None;
        match cfg.algorithm.server_rule() {
            ServerRule::Average => {
                let counts: Option<Vec<f64>> = cfg
                    .weighted_average
                    .then(|| sampled.iter().map(|&i| data.clients[i].train_len() as f64).collect());
                let global = average_aggregate(&cohort, counts.as_deref())?;
                for &i in &sampled {
                    server.columns[i] = global.clone();
                }
                server.global = Some(global);
            }
            ServerRule::Mcsa => {
                let (out, psi) = mcsa_aggregate(&cohort, cfg.sigma)?;
                for (&i, m) in sampled.iter().zip(out.into_models()) {
                    server.columns[i] = m;
                }
                attention = cfg.record_attention.then_some(psi);
            }
            ServerRule::HeurFedAmp => {
                let out = heurfedamp_aggregate(&cohort, cfg.heur_sigma, cfg.self_weight)?;
                for (&i, m) in sampled.iter().zip(out.into_models()) {
                    server.columns[i] = m;
                }
            }
        }

        for &i in &sampled {
            clients[i].receive(server.columns[i].clone());
        }

        let mut trains = vec![cfg.all_clients_train; n];
        for &i in &sampled {
            trains[i] = true;
        }
        let rule = local_rule(cfg);
        let schedule = LocalSchedule {
            steps: cfg.local_epochs,
            eta: cfg.eta,
        };
        let outcomes: Vec<Option<LocalOutcome>> = clients
            .par_iter()
            .zip(&data.clients)
            .zip(&trains)
            .map(|((client, ds), &train)| {
                if !train {
                    return Ok(None);
                }
                let objective = MiniBatchObjective {
                    data: ds,
                    batch_size: cfg.batch_size,
                    l2: cfg.l2,
                };
                let mut rng = stream_rng(cfg.seed, client.id, round);
                local_update(client, &objective, rule, schedule, &mut rng).map(Some)
            })
            .collect::<Result<_>>()?;
        for (client, outcome) in clients.iter_mut().zip(outcomes) {
            if let Some(o) = outcome {
                client.local = o.model;
                if o.personal.is_some() {
                    client.personal = o.personal;
                }
            }
        }

        let models = evaluated_models(cfg, server, clients);
        let mut metrics = evaluate_cohort(&models, &data.clients, cfg.l2)?;
        metrics.round = round;
        metrics.duration_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(RoundOutput {
            metrics,
            sampled,
            attention,
        })
    };
    let out = step().map_err(|e| e.in_round(round))?;
    server.round = round;
    Ok(out)
}

/// Attention matrices of one round, with cohort positions mapped to client ids.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub round: usize,
    pub ids: Vec<usize>,
    pub weights: AttentionWeights,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub series: MetricsSeries,
    /// The model each client was evaluated with after the last round.
    pub final_models: Vec<Model>,
    pub attention: Vec<AttentionRecord>,
}

/// Runs `cfg.rounds` rounds. `threads` caps the worker count; `None` uses the
/// global rayon pool.
pub fn run_experiment(cfg: &RunConfig, data: &FederationData, threads: Option<usize>) -> Result<ExperimentResult> {
    cfg.validate()?;
    if data.len() != cfg.clients {
        return Err(Error::config(format!(
            "federation has {} clients but the configuration asks for {}",
            data.len(),
            cfg.clients
        )));
    }
    let body = || -> Result<ExperimentResult> {
        let (mut server, mut clients) = initial_states(cfg, data)?;
        let mut rounds = Vec::with_capacity(cfg.rounds);
        let mut attention = Vec::new();
        for _ in 0..cfg.rounds {
            let out = run_round(&mut server, &mut clients, data, cfg)?;
            if let Some(weights) = out.attention {
                attention.push(AttentionRecord {
                    round: out.metrics.round,
                    ids: out.sampled,
                    weights,
                });
            }
            rounds.push(out.metrics);
        }
        let final_models = evaluated_models(cfg, &server, &clients).into_iter().cloned().collect();
        Ok(ExperimentResult {
            series: MetricsSeries::new(cfg.clone(), rounds)?,
            final_models,
            attention,
        })
    };
    match threads {
        None => body(),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::config(format!("cannot start {t} worker threads: {e}")))?
            .install(body),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_clients(5, 5, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(sample_clients(1, 1, &mut rng).unwrap(), vec![0]);
        assert!(sample_clients(3, 4, &mut rng).is_err());
        let ids = sample_clients(100, 10, &mut rng).unwrap();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn streams_differ_by_key() {
        use rand::Rng;
        let a: u64 = stream_rng(1, 2, 3).random();
        let b: u64 = stream_rng(1, 3, 2).random();
        let c: u64 = stream_rng(1, 2, 3).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
