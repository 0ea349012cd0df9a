//! Dense numerical core: the MLR and one-hidden-layer DNN models, softmax
//! cross-entropy with analytic gradients, and plain SGD.

mod matrix;
mod model;

pub use matrix::Matrix;
pub use model::{Architecture, Component, Gradient, Model, ModelSpec, Role};

use crate::error::{Error, Result};

/// Pre-softmax logits plus, for the DNN, the hidden pre-activations and activations.
struct Activations {
    logits: Matrix,
    hidden: Option<(Matrix, Matrix)>,
}

fn check_width(model: &Model, x: &Matrix) -> Result<()> {
    let expected = model.spec().input_dim;
    if x.cols() != expected {
        return Err(Error::DimensionMismatch {
            context: "feature width",
            expected,
            actual: x.cols(),
        });
    }
    Ok(())
}

/// `x · w + b` with `w` stored `[fan_in, fan_out]` row-major.
fn affine(x: &Matrix, w: &[f64], b: &[f64]) -> Matrix {
    let fan_out = b.len();
    let mut out = Matrix::zeros(x.rows(), fan_out);
    for i in 0..x.rows() {
        let xi = x.row(i);
        let oi = out.row_mut(i);
        oi.copy_from_slice(b);
        for (k, &xv) in xi.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wk = &w[k * fan_out..(k + 1) * fan_out];
            for (o, &wv) in oi.iter_mut().zip(wk) {
                *o += xv * wv;
            }
        }
    }
    out
}

fn activations(model: &Model, x: &Matrix) -> Result<Activations> {
    check_width(model, x)?;
    Ok(match model.architecture() {
        Architecture::Mlr => Activations {
            logits: affine(x, model.component(0), model.component(1)),
            hidden: None,
        },
        Architecture::Dnn => {
            let pre = affine(x, model.component(0), model.component(1));
            let mut act = pre.clone();
            for i in 0..act.rows() {
                for v in act.row_mut(i) {
                    *v = v.max(0.0);
                }
            }
            Activations {
                logits: affine(&act, model.component(2), model.component(3)),
                hidden: Some((pre, act)),
            }
        }
    })
}

/// In-place max-subtracted softmax of one row; returns `log Σ exp(z - max)`.
fn softmax_row(row: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    sum.ln()
}

/// Class probabilities, one row per sample.
pub fn forward(model: &Model, x: &Matrix) -> Result<Matrix> {
    let mut probs = activations(model, x)?.logits;
    for i in 0..probs.rows() {
        softmax_row(probs.row_mut(i));
    }
    Ok(probs)
}

fn check_labels(model: &Model, x: &Matrix, y: &[usize]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if y.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            context: "label count",
            expected: x.rows(),
            actual: y.len(),
        });
    }
    let classes = model.spec().classes;
    if let Some(&label) = y.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidLabel { label, classes });
    }
    Ok(())
}

/// Mean cross-entropy of softmaxed logits; leaves probabilities in `logits`.
fn cross_entropy(logits: &mut Matrix, y: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &label) in y.iter().enumerate() {
        let row = logits.row_mut(i);
        let shifted = row[label] - row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = softmax_row(row);
        total += log_norm - shifted;
    }
    total / y.len() as f64
}

/// Mean cross-entropy plus `(l2 / 2) * Σ‖W‖²` over weight components.
pub fn loss(model: &Model, x: &Matrix, y: &[usize], l2: f64) -> Result<f64> {
    check_labels(model, x, y)?;
    let mut logits = activations(model, x)?.logits;
    Ok(cross_entropy(&mut logits, y) + 0.5 * l2 * model.weight_sq_norm())
}

/// Loss as in [`loss`] together with its analytic gradient.
pub fn loss_and_grad(model: &Model, x: &Matrix, y: &[usize], l2: f64) -> Result<(f64, Gradient)> {
    check_labels(model, x, y)?;
    let Activations { mut logits, hidden } = activations(model, x)?;
    let value = cross_entropy(&mut logits, y) + 0.5 * l2 * model.weight_sq_norm();

    // dL/dlogits = (p - onehot) / B
    let scale = 1.0 / y.len() as f64;
    let mut delta = logits;
    for (i, &label) in y.iter().enumerate() {
        let row = delta.row_mut(i);
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }

    let mut grad = Gradient::zeros_like(model);
    match hidden {
        None => {
            outer_accumulate(x, &delta, grad.component_mut(0));
            column_sums(&delta, grad.component_mut(1));
        }
        Some((pre, act)) => {
            outer_accumulate(&act, &delta, grad.component_mut(2));
            column_sums(&delta, grad.component_mut(3));

            let w2 = model.component(2);
            let classes = model.spec().classes;
            let mut dh = Matrix::zeros(pre.rows(), pre.cols());
            for i in 0..pre.rows() {
                let di = delta.row(i);
                let pi = pre.row(i);
                for (h, out) in dh.row_mut(i).iter_mut().enumerate() {
                    if pi[h] > 0.0 {
                        let w2h = &w2[h * classes..(h + 1) * classes];
                        *out = w2h.iter().zip(di).map(|(w, d)| w * d).sum();
                    }
                }
            }
            outer_accumulate(x, &dh, grad.component_mut(0));
            column_sums(&dh, grad.component_mut(1));
        }
    }

    if l2 != 0.0 {
        for (layer, c) in model.components().iter().enumerate() {
            if c.role == Role::Weight {
                for (g, w) in grad.component_mut(layer).iter_mut().zip(&c.values) {
                    *g += l2 * w;
                }
            }
        }
    }
    Ok((value, grad))
}

/// `out += aᵀ · b` with `out` laid out `[a.cols, b.cols]`.
fn outer_accumulate(a: &Matrix, b: &Matrix, out: &mut [f64]) {
    let width = b.cols();
    for i in 0..a.rows() {
        let bi = b.row(i);
        for (k, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[k * width..(k + 1) * width].iter_mut().zip(bi) {
                *o += av * bv;
            }
        }
    }
}

fn column_sums(m: &Matrix, out: &mut [f64]) {
    for row in m.iter_rows() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// `model - eta * grad`, componentwise.
pub fn sgd_step(model: &Model, grad: &Gradient, eta: f64) -> Result<Model> {
    let mut out = model.clone();
    sgd_step_in_place(&mut out, grad, eta)?;
    Ok(out)
}

pub fn sgd_step_in_place(model: &mut Model, grad: &Gradient, eta: f64) -> Result<()> {
    grad.check_congruent(model)?;
    for (layer, g) in grad.components().iter().enumerate() {
        for (p, gv) in model.component_mut(layer).iter_mut().zip(g) {
            *p -= eta * gv;
        }
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(model: &Model, x: &Matrix, y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("test set"));
    }
    check_labels(model, x, y)?;
    let probs = forward(model, x)?;
    let correct = probs
        .iter_rows()
        .zip(y)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(correct as f64 / y.len() as f64)
}
