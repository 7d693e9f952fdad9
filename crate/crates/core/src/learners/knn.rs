use serde::{Deserialize, Serialize};

use crate::labeling::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams { k: 5 }
    }
}

/// Euclidean k-nearest-neighbours. Distance ties are broken by training
/// order, so predictions are deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    k: usize,
    rows: Vec<Vec<f64>>,
    labels: Vec<Label>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Knn {
    pub fn fit(rows: &[Vec<f64>], labels: &[Label], params: &KnnParams) -> Knn {
        Knn {
            k: params.k.clamp(1, rows.len().max(1)),
            rows: rows.to_vec(),
            labels: labels.to_vec(),
        }
    }

    /// Fraction of the `k` nearest training rows labelled `High`.
    pub fn proba(&self, row: &[f64]) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (sq_dist(r, row), i))
            .collect();
        let k = self.k.min(d.len());
        d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let high = d[..k].iter().filter(|&&(_, i)| self.labels[i].is_high()).count();
        high as f64 / k as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_neighbour() {
        let rows = vec![vec![0.0, 0.0], vec![10.0, 10.0]];
        let m = Knn::fit(&rows, &[Label::Low, Label::High], &KnnParams { k: 1 });
        assert_eq!(m.proba(&[1.0, 1.0]), 0.0);
        assert_eq!(m.proba(&[9.0, 9.0]), 1.0);
    }

    #[test]
    fn vote_fraction_and_k_cap() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let labels = [Label::High, Label::High, Label::Low, Label::Low];
        let m = Knn::fit(&rows, &labels, &KnnParams { k: 3 });
        assert!((m.proba(&[0.0]) - 2.0 / 3.0).abs() < 1e-12);
        let m = Knn::fit(&rows, &labels, &KnnParams { k: 50 });
        assert_eq!(m.proba(&[0.0]), 0.5);
    }
}
