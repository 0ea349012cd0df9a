//! Per-round evaluation, best mean test accuracy (BMTA) and CSV output.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::exact_sum;
use crate::data::ClientDataset;
use crate::engine::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{self, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based round index.
    pub round: usize,
    pub client_accuracy: Vec<f64>,
    /// Unweighted mean of `client_accuracy`.
    pub mean_test_accuracy: f64,
    /// Unweighted mean over clients of the loss on their full training split.
    pub mean_train_loss: f64,
    pub duration_ms: f64,
}

impl RoundMetrics {
    pub fn min_client_accuracy(&self) -> f64 {
        self.client_accuracy.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_client_accuracy(&self) -> f64 {
        self.client_accuracy.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Evaluates each client's model on that client's test split (accuracy) and
/// training split (loss). The cohort mean weighs every client equally.
pub fn evaluate_cohort(models: &[&Model], clients: &[ClientDataset], l2: f64) -> Result<RoundMetrics> {
    if models.len() != clients.len() {
        return Err(Error::DimensionMismatch {
            context: "evaluated model count",
            expected: clients.len(),
            actual: models.len(),
        });
    }
    if clients.is_empty() {
        return Err(Error::Empty("cohort"));
    }
    let per_client: Vec<(f64, f64)> = models
        .par_iter()
        .zip(clients)
        .map(|(m, c)| {
            let acc = nn::accuracy(m, &c.test_x, &c.test_y)?;
            let loss = nn::loss(m, &c.train_x, &c.train_y, l2)?;
            Ok((acc, loss))
        })
        .collect::<Result<_>>()?;
    let n = per_client.len() as f64;
    let client_accuracy: Vec<f64> = per_client.iter().map(|p| p.0).collect();
    Ok(RoundMetrics {
        round: 0,
        mean_test_accuracy: exact_sum(client_accuracy.iter().copied()) / n,
        mean_train_loss: exact_sum(per_client.iter().map(|p| p.1)) / n,
        client_accuracy,
        duration_ms: 0.0,
    })
}

/// Test accuracy averaged with per-client test-set sizes as weights.
pub fn sample_weighted_accuracy(client_accuracy: &[f64], clients: &[ClientDataset]) -> Result<f64> {
    if client_accuracy.len() != clients.len() {
        return Err(Error::DimensionMismatch {
            context: "accuracy count",
            expected: clients.len(),
            actual: client_accuracy.len(),
        });
    }
    let total = clients.iter().map(|c| c.test_len()).sum::<usize>();
    if total == 0 {
        return Err(Error::Empty("test set"));
    }
    let weighted = exact_sum(
        client_accuracy
            .iter()
            .zip(clients)
            .map(|(a, c)| a * c.test_len() as f64),
    );
    Ok(weighted / total as f64)
}

/// Highest value and the earliest 1-based position attaining it.
pub fn bmta(mean_accuracies: &[f64]) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &v) in mean_accuracies.iter().enumerate() {
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, i + 1));
        }
    }
    best.ok_or(Error::Empty("metrics series"))
}

/// All rounds of one run together with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub config: RunConfig,
    pub rounds: Vec<RoundMetrics>,
    pub bmta: f64,
    pub bmta_round: usize,
}

impl MetricsSeries {
    pub fn new(config: RunConfig, rounds: Vec<RoundMetrics>) -> Result<Self> {
        let means: Vec<f64> = rounds.iter().map(|r| r.mean_test_accuracy).collect();
        let (bmta, pos) = bmta(&means)?;
        let bmta_round = rounds[pos - 1].round;
        Ok(Self {
            config,
            rounds,
            bmta,
            bmta_round,
        })
    }

    pub fn mean_accuracies(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.mean_test_accuracy).collect()
    }

    /// BMTA in percent, rounded to two decimals.
    pub fn bmta_percent(&self) -> f64 {
        (self.bmta * 10_000.0).round() / 100.0
    }

    pub fn final_client_accuracy(&self) -> &[f64] {
        self.rounds.last().map_or(&[], |r| &r.client_accuracy)
    }
}

pub const ROUNDS_CSV_HEADER: &str =
    "round,mean_train_loss,mean_test_acc,min_client_acc,max_client_acc,duration_ms";

pub fn format_round_row(r: &RoundMetrics) -> String {
    format!(
        "{},{:.6},{:.4},{:.4},{:.4},{:.3}",
        r.round,
        r.mean_train_loss,
        r.mean_test_accuracy,
        r.min_client_accuracy(),
        r.max_client_accuracy(),
        r.duration_ms
    )
}

pub fn write_rounds_csv<W: Write>(out: &mut W, rounds: &[RoundMetrics]) -> std::io::Result<()> {
    writeln!(out, "{ROUNDS_CSV_HEADER}")?;
    for r in rounds {
        writeln!(out, "{}", format_round_row(r))?;
    }
    Ok(())
}

/// Mean and population standard deviation.
pub fn mean_and_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("value list"));
    }
    let n = values.len() as f64;
    let mean = exact_sum(values.iter().copied()) / n;
    let var = exact_sum(values.iter().map(|v| (v - mean).powi(2))) / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Matrix, ModelSpec};

    fn client(id: usize, labels: Vec<usize>) -> ClientDataset {
        let n = labels.len();
        ClientDataset {
            id,
            train_x: Matrix::zeros(n, 2),
            train_y: labels.clone(),
            test_x: Matrix::zeros(n, 2),
            test_y: labels,
            classes: vec![0, 1],
            ground_truth: None,
        }
    }

    #[test]
    fn bmta_rules() {
        assert_eq!(bmta(&[0.5, 0.7, 0.6]).unwrap(), (0.7, 2));
        assert_eq!(bmta(&[0.1, 0.2, 0.3]).unwrap(), (0.3, 3));
        assert_eq!(bmta(&[0.1, 0.2, 0.4, 0.3, 0.4]).unwrap(), (0.4, 3));
        assert!(bmta(&[]).is_err());
    }

    #[test]
    fn mean_is_unweighted() {
        // zero model predicts class 0: client 0 all correct, client 1 all wrong
        let m = Model::zeros(ModelSpec::mlr(2, 2)).unwrap();
        let clients = vec![client(0, vec![0; 3]), client(1, vec![1; 9])];
        let r = evaluate_cohort(&[&m, &m], &clients, 0.0).unwrap();
        assert_eq!(r.client_accuracy, vec![1.0, 0.0]);
        assert_eq!(r.mean_test_accuracy, 0.5);
        assert_eq!(sample_weighted_accuracy(&r.client_accuracy, &clients).unwrap(), 0.25);

        let single = evaluate_cohort(&[&m], &clients[..1], 0.0).unwrap();
        assert_eq!(single.mean_test_accuracy, 1.0);
        assert!(evaluate_cohort(&[&m], &clients, 0.0).is_err());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_and_std(&[1.0, 3.0]).unwrap();
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn csv_row_format() {
        let r = RoundMetrics {
            round: 4,
            client_accuracy: vec![0.5, 0.25, 1.0],
            mean_test_accuracy: 0.58333333,
            mean_train_loss: 1.2345678,
            duration_ms: 12.5,
        };
        assert_eq!(format_round_row(&r), "4,1.234568,0.5833,0.2500,1.0000,12.500");
    }
}
