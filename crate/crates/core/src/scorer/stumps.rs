//! Gradient-boosted decision stumps with second-order leaf values.
//!
//! Features are pre-binned into at most [`MAX_BINS`] quantile bins; each round
//! picks the single (feature, cut) with the largest regularised gain.

use serde::{Deserialize, Serialize};

use super::{inverse_link, TrainConfig};
use crate::data_model::Matrix;

pub const MAX_BINS: usize = 64;
const MIN_CHILD_HESSIAN: f64 = 1e-3;
const MIN_GAIN: f64 = 1e-12;

/// `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

impl Stump {
    fn eval(&self, x: &[f64]) -> f64 {
        if x[self.feature] <= self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpEnsemble {
    pub base_score: f64,
    pub stumps: Vec<Stump>,
}

impl StumpEnsemble {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.base_score + self.stumps.iter().map(|s| s.eval(x)).sum::<f64>()
    }
}

/// Cut points for one column: midpoints of distinct values when few,
/// otherwise empirical quantiles.
fn cut_points(column: &mut [f64]) -> Vec<f64> {
    column.sort_by(|a, b| a.total_cmp(b));
    let mut distinct: Vec<f64> = Vec::new();
    for &v in column.iter() {
        if distinct.last() != Some(&v) {
            distinct.push(v);
        }
    }
    if distinct.len() <= 1 {
        return Vec::new();
    }
    if distinct.len() <= MAX_BINS {
        return distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let n = column.len();
    let mut cuts: Vec<f64> = (1..MAX_BINS)
        .map(|q| column[q * n / MAX_BINS])
        .collect();
    cuts.dedup();
    // the largest value must stay on the right of every cut
    let max = *distinct.last().unwrap();
    cuts.retain(|&c| c < max);
    cuts
}

pub(super) fn fit(
    x: &Matrix,
    targets: &[bool],
    weights: &[f64],
    config: &TrainConfig,
    initial_score: f64,
) -> StumpEnsemble {
    let n = x.rows();
    let d = x.cols();
    let mean_w = weights.iter().sum::<f64>() / n as f64;
    let w: Vec<f64> = weights.iter().map(|v| v / mean_w).collect();
    let y: Vec<f64> = targets.iter().map(|&t| f64::from(u8::from(t))).collect();

    let mut cuts = Vec::with_capacity(d);
    let mut bins = vec![0u8; n * d];
    for k in 0..d {
        let mut col: Vec<f64> = (0..n).map(|r| x.get(r, k)).collect();
        let c = cut_points(&mut col);
        for r in 0..n {
            let v = x.get(r, k);
            bins[r * d + k] = c.partition_point(|&cut| cut < v) as u8;
        }
        cuts.push(c);
    }

    let mut f = vec![initial_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut stumps = Vec::new();
    let mut hist_g = vec![0.0; MAX_BINS + 1];
    let mut hist_h = vec![0.0; MAX_BINS + 1];
    let lambda = config.l2;

    for _ in 0..config.max_iterations {
        let (mut g_tot, mut h_tot) = (0.0, 0.0);
        for r in 0..n {
            let p = inverse_link(f[r]);
            grad[r] = w[r] * (p - y[r]);
            hess[r] = w[r] * p * (1.0 - p);
            g_tot += grad[r];
            h_tot += hess[r];
        }
        let parent = g_tot * g_tot / (h_tot + lambda);

        let mut best: Option<(f64, usize, usize, f64, f64)> = None;
        for k in 0..d {
            let n_cuts = cuts[k].len();
            if n_cuts == 0 {
                continue;
            }
            hist_g[..=n_cuts].fill(0.0);
            hist_h[..=n_cuts].fill(0.0);
            for r in 0..n {
                let b = bins[r * d + k] as usize;
                hist_g[b] += grad[r];
                hist_h[b] += hess[r];
            }
            let (mut gl, mut hl) = (0.0, 0.0);
            for c in 0..n_cuts {
                gl += hist_g[c];
                hl += hist_h[c];
                let (gr, hr) = (g_tot - gl, h_tot - hl);
                if hl < MIN_CHILD_HESSIAN || hr < MIN_CHILD_HESSIAN {
                    continue;
                }
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if gain > MIN_GAIN && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, k, c, -gl / (hl + lambda), -gr / (hr + lambda)));
                }
            }
        }

        let Some((_, k, c, left, right)) = best else {
            break;
        };
        let stump = Stump {
            feature: k,
            threshold: cuts[k][c],
            left: config.learning_rate * left,
            right: config.learning_rate * right,
        };
        for r in 0..n {
            f[r] += if (bins[r * d + k] as usize) <= c {
                stump.left
            } else {
                stump.right
            };
        }
        stumps.push(stump);
    }

    StumpEnsemble {
        base_score: initial_score,
        stumps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuts_separate_distinct_values() {
        let mut col = vec![3.0, 1.0, 2.0, 1.0];
        assert_eq!(cut_points(&mut col), vec![1.5, 2.5]);
        let mut constant = vec![4.0; 5];
        assert!(cut_points(&mut constant).is_empty());
    }

    #[test]
    fn quantile_cuts_are_bounded() {
        let mut col: Vec<f64> = (0..1000).map(|i| (i as f64).sqrt()).collect();
        let cuts = cut_points(&mut col);
        assert!(cuts.len() < MAX_BINS);
        assert!(cuts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn learns_a_step_function() {
        let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 200.0]).collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<bool> = (0..200).map(|i| i >= 120).collect();
        let cfg = TrainConfig::stumps();
        let m = fit(&x, &y, &vec![1.0; 200], &cfg, 0.0);
        assert!(inverse_link(m.score(&[0.9])) > 0.9);
        assert!(inverse_link(m.score(&[0.1])) < 0.1);
    }
}
