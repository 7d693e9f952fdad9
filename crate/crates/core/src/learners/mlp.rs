//! Single-hidden-layer perceptron: ReLU hidden units, sigmoid output,
//! binary cross-entropy, per-sample SGD.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::labeling::Label;
use crate::rng::PipelineRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: 16,
            learning_rate: 0.01,
            epochs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// `hidden x inputs`, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    inputs: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Mlp {
        let hidden = hidden.max(1);
        let lim1 = (6.0 / (inputs + hidden) as f64).sqrt();
        let lim2 = (6.0 / (hidden + 1) as f64).sqrt();
        let u1 = Uniform::new_inclusive(-lim1, lim1).expect("finite bounds");
        let u2 = Uniform::new_inclusive(-lim2, lim2).expect("finite bounds");
        Mlp {
            w1: (0..inputs * hidden).map(|_| u1.sample(rng)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| u2.sample(rng)).collect(),
            b2: 0.0,
            inputs,
        }
    }

    pub fn fit(rows: &[Vec<f64>], labels: &[Label], params: &MlpParams, rng: &mut PipelineRng) -> Mlp {
        let inputs = rows.first().map_or(0, Vec::len);
        let mut m = Mlp::init(inputs, params.hidden, rng);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut grad = vec![0.0; m.n_params()];
        for _ in 0..params.epochs {
            order.shuffle(rng);
            for &i in &order {
                let y = if labels[i].is_high() { 1.0 } else { 0.0 };
                m.accumulate_gradient(&rows[i], y, &mut grad);
                m.step(&grad, params.learning_rate);
            }
        }
        m
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Flattened parameters: `w1`, `b1`, `w2`, `b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = d[0];
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden())
            .map(|h| {
                let w = &self.w1[h * self.inputs..(h + 1) * self.inputs];
                self.b1[h] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn proba(&self, x: &[f64]) -> f64 {
        let a: f64 = self
            .hidden_pre(x)
            .iter()
            .zip(&self.w2)
            .map(|(z, w)| z.max(0.0) * w)
            .sum();
        sigmoid(a + self.b2)
    }

    /// Cross-entropy of one sample with target `y` in {0, 1}.
    pub fn loss(&self, x: &[f64], y: f64) -> f64 {
        let p = self.proba(x).clamp(1e-15, 1.0 - 1e-15);
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    }

    /// Writes d(loss)/d(params) into `grad`, in [`Mlp::params`] order.
    pub fn accumulate_gradient(&self, x: &[f64], y: f64, grad: &mut [f64]) {
        let pre = self.hidden_pre(x);
        let out: f64 = pre.iter().zip(&self.w2).map(|(z, w)| z.max(0.0) * w).sum::<f64>() + self.b2;
        let delta = sigmoid(out) - y;
        let (gw1, rest) = grad.split_at_mut(self.w1.len());
        let (gb1, rest) = rest.split_at_mut(self.b1.len());
        let (gw2, gb2) = rest.split_at_mut(self.w2.len());
        for h in 0..self.hidden() {
            gw2[h] = delta * pre[h].max(0.0);
            let dh = if pre[h] > 0.0 { delta * self.w2[h] } else { 0.0 };
            gb1[h] = dh;
            for (g, xi) in gw1[h * self.inputs..(h + 1) * self.inputs].iter_mut().zip(x) {
                *g = dh * xi;
            }
        }
        gb2[0] = delta;
    }

    fn step(&mut self, grad: &[f64], lr: f64) {
        let (gw1, rest) = grad.split_at(self.w1.len());
        let (gb1, rest) = rest.split_at(self.b1.len());
        let (gw2, gb2) = rest.split_at(self.w2.len());
        for (p, g) in self.w1.iter_mut().zip(gw1) {
            *p -= lr * g;
        }
        for (p, g) in self.b1.iter_mut().zip(gb1) {
            *p -= lr * g;
        }
        for (p, g) in self.w2.iter_mut().zip(gw2) {
            *p -= lr * g;
        }
        self.b2 -= lr * gb2[0];
    }
}
