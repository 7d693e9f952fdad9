//! Linear soft-margin SVM trained with full-batch Pegasos subgradient steps.

use serde::{Deserialize, Serialize};

use crate::labeling::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    pub iterations: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            iterations: 500,
        }
    }
}

/// The bias is learned as the weight of a constant input, so it is
/// regularized along with the other weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    weights: Vec<f64>,
    bias: f64,
}

impl LinearSvm {
    /// Minimizes `lambda/2 |w|^2 + mean(hinge)` with `lambda = 1/(C n)` and
    /// returns the averaged iterate.
    pub fn fit(rows: &[Vec<f64>], labels: &[Label], params: &SvmParams) -> LinearSvm {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len) + 1;
        let lambda = 1.0 / (params.c * n as f64);
        let ys: Vec<f64> = labels.iter().map(|l| if l.is_high() { 1.0 } else { -1.0 }).collect();
        let mut w = vec![0.0; d];
        let mut avg = vec![0.0; d];
        let mut g = vec![0.0; d];
        let radius = 1.0 / lambda.sqrt();
        let iterations = params.iterations.max(1);
        for t in 1..=iterations {
            g.iter_mut().zip(&w).for_each(|(gi, wi)| *gi = lambda * wi);
            for (x, &y) in rows.iter().zip(&ys) {
                let margin = y * (w[d - 1] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>());
                if margin < 1.0 {
                    for (gi, xi) in g.iter_mut().zip(x) {
                        *gi -= y * xi / n as f64;
                    }
                    g[d - 1] -= y / n as f64;
                }
            }
            let eta = 1.0 / (lambda * t as f64);
            w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= eta * gi);
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                w.iter_mut().for_each(|v| *v *= radius / norm);
            }
            avg.iter_mut().zip(&w).for_each(|(a, wi)| *a += (wi - *a) / t as f64);
        }
        let bias = avg.pop().unwrap_or(0.0);
        LinearSvm { weights: avg, bias }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Logistic squashing of the margin; crosses 0.5 exactly at the boundary.
    pub fn proba(&self, x: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.decision(x)).exp())
    }

    pub fn weights(&self) -> (&[f64], f64) {
        (&self.weights, self.bias)
    }
}
