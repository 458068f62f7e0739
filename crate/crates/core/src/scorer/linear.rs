use serde::{Deserialize, Serialize};

use super::{inverse_link, point_loss, TrainConfig};
use crate::data_model::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Penalised objective and its gradient at `params = [weights.., bias]`.
///
/// `(1/Σw) Σ w_i ℓ(g_i, y_i) + (l2/2)‖weights‖²`; the bias is not penalised.
pub fn linear_loss_and_gradient(
    params: &[f64],
    x: &Matrix,
    targets: &[bool],
    weights: &[f64],
    l2: f64,
) -> (f64, Vec<f64>) {
    let d = x.cols();
    assert_eq!(params.len(), d + 1);
    let total: f64 = weights.iter().sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for ((row, &y), &w) in x.iter_rows().zip(targets).zip(weights) {
        let g = params[d] + row.iter().zip(params).map(|(v, p)| v * p).sum::<f64>();
        loss += w * point_loss(g, y);
        let r = w * (inverse_link(g) - f64::from(u8::from(y)));
        for (gk, v) in grad.iter_mut().zip(row) {
            *gk += r * v;
        }
        grad[d] += r;
    }
    loss /= total;
    for gk in &mut grad {
        *gk /= total;
    }
    for k in 0..d {
        loss += 0.5 * l2 * params[k] * params[k];
        grad[k] += l2 * params[k];
    }
    (loss, grad)
}

fn hessian(params: &[f64], x: &Matrix, weights: &[f64], l2: f64) -> Vec<f64> {
    let d = x.cols();
    let m = d + 1;
    let total: f64 = weights.iter().sum();
    let mut h = vec![0.0; m * m];
    // (index, value) of the non-zero entries of [row, 1]; one-hot encoded
    // inputs are mostly zeros
    let mut nz: Vec<(usize, f64)> = Vec::with_capacity(m);
    for (row, &w) in x.iter_rows().zip(weights) {
        let g = params[d] + row.iter().zip(params).map(|(v, p)| v * p).sum::<f64>();
        let p = inverse_link(g);
        let s = w * p * (1.0 - p) / total;
        if s == 0.0 {
            continue;
        }
        nz.clear();
        nz.extend(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, &v)| (k, v)));
        nz.push((d, 1.0));
        for (ia, &(a, za)) in nz.iter().enumerate() {
            let za = s * za;
            for &(b, zb) in &nz[..=ia] {
                h[a * m + b] += za * zb;
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            h[b * m + a] = h[a * m + b];
        }
    }
    for k in 0..d {
        h[k * m + k] += l2;
    }
    // keeps the system positive definite on separable data
    for k in 0..m {
        h[k * m + k] += 1e-10;
    }
    h
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major, n×n).
fn cholesky_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

pub(super) fn fit(
    x: &Matrix,
    targets: &[bool],
    weights: &[f64],
    config: &TrainConfig,
    initial_bias: f64,
) -> LinearModel {
    let d = x.cols();
    let mut params = vec![0.0; d + 1];
    params[d] = initial_bias;
    let (mut loss, mut grad) = linear_loss_and_gradient(&params, x, targets, weights, config.l2);

    for _ in 0..config.max_iterations {
        if grad.iter().all(|g| g.abs() < 1e-10) {
            break;
        }
        let h = hessian(&params, x, weights, config.l2);
        let step = cholesky_solve(&h, &grad).unwrap_or_else(|| grad.clone());
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let trial: Vec<f64> = params.iter().zip(&step).map(|(p, s)| p - t * s).collect();
            let (trial_loss, trial_grad) =
                linear_loss_and_gradient(&trial, x, targets, weights, config.l2);
            if trial_loss <= loss {
                let improvement = loss - trial_loss;
                params = trial;
                loss = trial_loss;
                grad = trial_grad;
                accepted = improvement > 0.0;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    LinearModel {
        bias: params[d],
        weights: params[..d].to_vec(),
    }
}
