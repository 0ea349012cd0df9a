//! Server-side aggregation rules.
//!
//! The central kernel is model-components self-attention: for every layer
//! component `l` independently, client `i` receives
//!
//! ```text
//! w_{i,l} = Σ_k ψ_{i,l,k} θ_{k,l},   ψ_{i,l,·} = softmax_k(σ · cos(θ_{i,l}, θ_{k,l}))
//! ```
//!
//! Rows are normalized over the querying client's own scores, so every
//! output is a convex combination of the inputs. All per-coordinate sums are
//! correctly rounded, which makes outputs independent of client order.

mod exact_sum;

pub use exact_sum::{exact_sum, ExactSum};

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{Matrix, Model};

/// Norm below which a component is treated as having no direction.
pub const ZERO_NORM: f64 = 1e-12;

/// Cosine similarity clamped to `[-1, 1]`; 0 when either vector is (numerically) zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine similarity operands",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::config(format!(
            "attention scale must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Max-subtracted softmax of `scores`, normalized with a correctly rounded sum.
fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let denom = exact_sum(exps.iter().copied());
    exps.into_iter().map(|e| e / denom).collect()
}

/// Row-stochastic `N × N` attention matrix for one layer: row `i` is the
/// softmax over `k` of `sigma * cos(components[i], components[k])`.
///
/// Entries stay strictly positive as long as `2 * sigma` is well below the
/// exponent range (σ ≤ 300 is safe).
pub fn attention_weights<V: AsRef<[f64]>>(components: &[V], sigma: f64) -> Result<Matrix> {
    check_sigma(sigma)?;
    let n = components.len();
    if n == 0 {
        return Err(Error::Empty("cohort"));
    }
    let mut sims = vec![0.0; n * n];
    for i in 0..n {
        for k in i..n {
            let c = cosine_similarity(components[i].as_ref(), components[k].as_ref())?;
            sims[i * n + k] = c;
            sims[k * n + i] = c;
        }
    }
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        let scores: Vec<f64> = sims[i * n..(i + 1) * n].iter().map(|c| sigma * c).collect();
        data.extend(softmax(&scores));
    }
    Matrix::new(n, n, data)
}

/// `Σ_k weights[k] * inputs[k]`, coordinate by coordinate, for convex
/// `weights`. Each result is clamped into the inputs' range at that
/// coordinate so rounding cannot leave the convex hull.
pub fn weighted_combination<V: AsRef<[f64]>>(weights: &[f64], inputs: &[V]) -> Vec<f64> {
    debug_assert_eq!(weights.len(), inputs.len());
    let len = inputs[0].as_ref().len();
    let mut acc = ExactSum::new();
    (0..len)
        .map(|j| {
            acc.clear();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (w, x) in weights.iter().zip(inputs) {
                let v = x.as_ref()[j];
                lo = lo.min(v);
                hi = hi.max(v);
                acc.add(w * v);
            }
            acc.value().clamp(lo, hi)
        })
        .collect()
}

/// The models a server aggregates in one round, all sharing one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortMatrix {
    models: Vec<Model>,
    round: usize,
}

impl CohortMatrix {
    pub fn new(models: Vec<Model>, round: usize) -> Result<Self> {
        let first = models.first().ok_or(Error::Empty("cohort"))?;
        for m in &models[1..] {
            first.check_congruent(m)?;
        }
        Ok(Self { models, round })
    }

    pub fn models(&self) -> &[Model] {
        &self.models
    }

    pub fn into_models(self) -> Vec<Model> {
        self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn num_components(&self) -> usize {
        self.models[0].num_components()
    }

    fn layer(&self, l: usize) -> Vec<&[f64]> {
        self.models.iter().map(|m| m.component(l)).collect()
    }
}

/// Per-layer attention matrices produced by one aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub layers: Vec<Matrix>,
    pub sigma: f64,
}

impl AttentionWeights {
    /// Writes `round,layer,i,k,psi` rows; `ids` maps cohort positions to client ids.
    pub fn write_csv<W: Write>(&self, out: &mut W, round: usize, ids: &[usize]) -> std::io::Result<()> {
        for (l, psi) in self.layers.iter().enumerate() {
            for i in 0..psi.rows() {
                for k in 0..psi.cols() {
                    writeln!(out, "{round},{l},{},{},{:.6e}", ids[i], ids[k], psi.get(i, k))?;
                }
            }
        }
        Ok(())
    }
}

pub const ATTENTION_CSV_HEADER: &str = "round,layer,i,k,psi";

/// Model-components self-attention over a cohort: `L` independent attention
/// passes, one per layer component.
pub fn mcsa_aggregate(cohort: &CohortMatrix, sigma: f64) -> Result<(CohortMatrix, AttentionWeights)> {
    check_sigma(sigma)?;
    let layers: Vec<(Matrix, Vec<Vec<f64>>)> = (0..cohort.num_components())
        .into_par_iter()
        .map(|l| {
            let inputs = cohort.layer(l);
            let psi = attention_weights(&inputs, sigma)?;
            let outputs = (0..inputs.len())
                .map(|i| weighted_combination(psi.row(i), &inputs))
                .collect();
            Ok((psi, outputs))
        })
        .collect::<Result<_>>()?;

    let mut models = cohort.models.clone();
    let mut weights = Vec::with_capacity(layers.len());
    for (l, (psi, outputs)) in layers.into_iter().enumerate() {
        for (model, values) in models.iter_mut().zip(outputs) {
            model.component_mut(l).copy_from_slice(&values);
        }
        weights.push(psi);
    }
    Ok((
        CohortMatrix {
            models,
            round: cohort.round,
        },
        AttentionWeights {
            layers: weights,
            sigma,
        },
    ))
}

/// Normalized mixing weights: uniform `1/N`, or proportional to `counts`.
pub fn mixing_weights(n: usize, counts: Option<&[f64]>) -> Result<Vec<f64>> {
    match counts {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(c) => {
            if c.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "aggregation weight count",
                    expected: n,
                    actual: c.len(),
                });
            }
            if c.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::config("aggregation weights must be finite and nonnegative"));
            }
            let total = exact_sum(c.iter().copied());
            if total <= 0.0 {
                return Err(Error::config("aggregation weights must not all be zero"));
            }
            Ok(c.iter().map(|w| w / total).collect())
        }
    }
}

/// FedAvg-style average of the cohort, uniform unless `client_weights` (e.g.
/// sample counts) are given.
pub fn average_aggregate(cohort: &CohortMatrix, client_weights: Option<&[f64]>) -> Result<Model> {
    let weights = mixing_weights(cohort.len(), client_weights)?;
    let mut out = cohort.models[0].clone();
    for l in 0..cohort.num_components() {
        let values = weighted_combination(&weights, &cohort.layer(l));
        out.component_mut(l).copy_from_slice(&values);
    }
    Ok(out)
}

/// Whole-model attentive message passing with a fixed self weight: client `i`
/// keeps `self_weight` of its own model and spreads `1 - self_weight` over the
/// other clients in proportion to `exp(sigma * cos(Θ_i, Θ_k))`.
pub fn heurfedamp_aggregate(cohort: &CohortMatrix, sigma: f64, self_weight: f64) -> Result<CohortMatrix> {
    check_sigma(sigma)?;
    if !(self_weight > 0.0 && self_weight <= 1.0) {
        return Err(Error::config(format!(
            "self weight must lie in (0, 1], got {self_weight}"
        )));
    }
    let n = cohort.len();
    let flat: Vec<Vec<f64>> = cohort.models.iter().map(Model::flatten).collect();
    let mut mixing = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = vec![0.0; n];
        row[i] = self_weight;
        if n > 1 {
            let others: Vec<usize> = (0..n).filter(|&k| k != i).collect();
            let scores = others
                .iter()
                .map(|&k| Ok(sigma * cosine_similarity(&flat[i], &flat[k])?))
                .collect::<Result<Vec<f64>>>()?;
            for (&k, share) in others.iter().zip(softmax(&scores)) {
                row[k] = (1.0 - self_weight) * share;
            }
        } else {
            row[i] = 1.0;
        }
        mixing.push(row);
    }

    let mut models = cohort.models.clone();
    for l in 0..cohort.num_components() {
        let inputs = cohort.layer(l);
        for (model, row) in models.iter_mut().zip(&mixing) {
            let values = weighted_combination(row, &inputs);
            model.component_mut(l).copy_from_slice(&values);
        }
    }
    Ok(CohortMatrix {
        models,
        round: cohort.round,
    })
}
