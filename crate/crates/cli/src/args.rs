use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "fedmcsa", version, about = "Personalized federated learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one algorithm.
    Run(RunArgs),
    /// Run several algorithms on the same federation and join their series.
    Compare {
        /// Comma-separated algorithm ids.
        #[arg(long, value_delimiter = ',', required = true)]
        algorithms: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run one configuration per `--sigma` value.
    Sweep(RunArgs),
    /// Attention ablations with their base methods, plus a delta table.
    Ablate(RunArgs),
    /// Build a federation and export it as CSV.
    GenData(GenDataArgs),
}

/// Hyperparameter flags. Unset flags fall back to the config file, then to
/// the dataset defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Algorithm id, e.g. fedmcsa, fedavg, pfedme-pm.
    #[arg(long)]
    pub algorithm: Option<String>,
    /// synthetic, mnist, fmnist or cifar10.
    #[arg(long)]
    pub dataset: Option<String>,
    /// mlr or dnn.
    #[arg(long)]
    pub model: Option<String>,
    /// Number of clients N.
    #[arg(long)]
    pub clients: Option<usize>,
    /// Communication rounds T.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Clients sampled per round S.
    #[arg(long)]
    pub clients_per_round: Option<usize>,
    /// Local iterations R.
    #[arg(long)]
    pub local_epochs: Option<usize>,
    /// Mini-batch size B.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Proximal strength of the client step.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Attention scale; `sweep` takes a comma-separated list.
    #[arg(long)]
    pub sigma: Option<String>,
    /// FedProx proximal strength.
    #[arg(long)]
    pub mu: Option<f64>,
    /// pFedMe inner steps.
    #[arg(long)]
    pub pfedme_steps: Option<usize>,
    /// pFedMe personal learning rate.
    #[arg(long)]
    pub personal_lr: Option<f64>,
    /// HeurFedAMP self weight.
    #[arg(long)]
    pub self_weight: Option<f64>,
    /// HeurFedAMP attention scale.
    #[arg(long)]
    pub heur_sigma: Option<f64>,
    /// L2 coefficient on weight matrices.
    #[arg(long)]
    pub l2: Option<f64>,
    /// DNN hidden width.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Synthetic model heterogeneity.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Synthetic feature heterogeneity.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Master seed for data generation, sampling and training.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Unsampled clients also train every round.
    #[arg(long)]
    pub all_clients_train: bool,
    /// Start every client from one shared model.
    #[arg(long)]
    pub shared_init: bool,
    /// Weight averages by training-set size.
    #[arg(long)]
    pub weighted_average: bool,
}

impl ConfigFlags {
    /// Set flags as `(key, value)` pairs using configuration-file key names.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("algorithm", self.algorithm.clone());
        push("dataset", self.dataset.clone());
        push("model", self.model.clone());
        push("clients", self.clients.map(|v| v.to_string()));
        push("rounds", self.rounds.map(|v| v.to_string()));
        push("clients-per-round", self.clients_per_round.map(|v| v.to_string()));
        push("local-epochs", self.local_epochs.map(|v| v.to_string()));
        push("batch-size", self.batch_size.map(|v| v.to_string()));
        push("eta", self.eta.map(|v| v.to_string()));
        push("lambda", self.lambda.map(|v| v.to_string()));
        push("sigma", self.sigma.clone());
        push("mu", self.mu.map(|v| v.to_string()));
        push("pfedme-steps", self.pfedme_steps.map(|v| v.to_string()));
        push("personal-lr", self.personal_lr.map(|v| v.to_string()));
        push("self-weight", self.self_weight.map(|v| v.to_string()));
        push("heur-sigma", self.heur_sigma.map(|v| v.to_string()));
        push("l2", self.l2.map(|v| v.to_string()));
        push("hidden", self.hidden.map(|v| v.to_string()));
        push("alpha", self.alpha.map(|v| v.to_string()));
        push("beta", self.beta.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("all-clients-train", self.all_clients_train.then(|| "true".into()));
        push("per-client-init", self.shared_init.then(|| "false".into()));
        push("weighted-average", self.weighted_average.then(|| "true".into()));
        out
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigFlags,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Worker thread cap.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Directory holding mnist/, fmnist/ and cifar10/ raw files.
    #[arg(long, env = "FEDMCSA_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Federation CSV written by `gen-data`; replaces generation/sharding.
    #[arg(long)]
    pub data_file: Option<PathBuf>,
    /// Also write every round's attention matrices to attention.csv.
    #[arg(long)]
    pub attention_dump: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    /// synthetic, mnist, fmnist or cifar10.
    pub dataset: String,
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, env = "FEDMCSA_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long, default_value = "federation.csv")]
    pub out: PathBuf,
}
