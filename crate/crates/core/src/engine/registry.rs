use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the server turns the sampled cohort into models sent back to clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerRule {
    /// One averaged model broadcast to every sampled client.
    Average,
    /// Per-layer model-components self-attention.
    Mcsa,
    /// Whole-model attention with a fixed self weight.
    HeurFedAmp,
}

/// What a client optimizes between receipts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientRule {
    Sgd,
    /// SGD on `f + (λ/2)‖Θ − W‖²`.
    Proximal,
    /// SGD on `f + (μ/2)‖Θ − W‖²`.
    FedProx,
    /// Bi-level Moreau-envelope update.
    PFedMe,
}

/// Which model represents a client at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    /// The server's latest averaged model.
    Global,
    /// The personalized model the server last produced for the client.
    Server,
    /// The client's latest local model.
    Local,
    /// The client's pFedMe personal model.
    Personal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedprox")]
    FedProx,
    #[serde(rename = "pfedme-gm")]
    PFedMeGm,
    #[serde(rename = "pfedme-pm")]
    PFedMePm,
    #[serde(rename = "heurfedamp")]
    HeurFedAmp,
    #[serde(rename = "fedmcsa")]
    FedMcsa,
    #[serde(rename = "fedmcsa-minus-mcsa")]
    FedMcsaMinusMcsa,
    #[serde(rename = "fedavg-plus-mcsa")]
    FedAvgPlusMcsa,
    #[serde(rename = "pfedme-plus-mcsa")]
    PFedMePlusMcsa,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::FedAvg,
        Algorithm::FedProx,
        Algorithm::PFedMeGm,
        Algorithm::PFedMePm,
        Algorithm::HeurFedAmp,
        Algorithm::FedMcsa,
        Algorithm::FedMcsaMinusMcsa,
        Algorithm::FedAvgPlusMcsa,
        Algorithm::PFedMePlusMcsa,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::PFedMeGm => "pfedme-gm",
            Algorithm::PFedMePm => "pfedme-pm",
            Algorithm::HeurFedAmp => "heurfedamp",
            Algorithm::FedMcsa => "fedmcsa",
            Algorithm::FedMcsaMinusMcsa => "fedmcsa-minus-mcsa",
            Algorithm::FedAvgPlusMcsa => "fedavg-plus-mcsa",
            Algorithm::PFedMePlusMcsa => "pfedme-plus-mcsa",
        }
    }

    pub fn server_rule(self) -> ServerRule {
        match self {
            Algorithm::FedAvg
            | Algorithm::FedProx
            | Algorithm::PFedMeGm
            | Algorithm::PFedMePm
            | Algorithm::FedMcsaMinusMcsa => ServerRule::Average,
            Algorithm::HeurFedAmp => ServerRule::HeurFedAmp,
            Algorithm::FedMcsa | Algorithm::FedAvgPlusMcsa | Algorithm::PFedMePlusMcsa => ServerRule::Mcsa,
        }
    }

    pub fn client_rule(self) -> ClientRule {
        match self {
            Algorithm::FedAvg | Algorithm::FedAvgPlusMcsa => ClientRule::Sgd,
            Algorithm::FedProx => ClientRule::FedProx,
            Algorithm::PFedMeGm | Algorithm::PFedMePm | Algorithm::PFedMePlusMcsa => ClientRule::PFedMe,
            Algorithm::HeurFedAmp | Algorithm::FedMcsa | Algorithm::FedMcsaMinusMcsa => ClientRule::Proximal,
        }
    }

    pub fn eval_target(self) -> EvalTarget {
        match self {
            Algorithm::FedAvg | Algorithm::FedProx | Algorithm::PFedMeGm => EvalTarget::Global,
            Algorithm::PFedMePm | Algorithm::PFedMePlusMcsa => EvalTarget::Personal,
            Algorithm::HeurFedAmp
            | Algorithm::FedMcsa
            | Algorithm::FedMcsaMinusMcsa
            | Algorithm::FedAvgPlusMcsa => EvalTarget::Server,
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        let key = match key.as_str() {
            "pfedme" => "pfedme-pm",
            other => other,
        };
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == key)
            .ok_or_else(|| {
                let known: Vec<&str> = Algorithm::ALL.iter().map(|a| a.id()).collect();
                Error::config(format!("unknown algorithm `{s}` (expected one of {})", known.join(", ")))
            })
    }
}
