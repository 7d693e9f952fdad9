//! Random forest of CART trees (Gini impurity) with bootstrap sampling and
//! per-split feature subsampling.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::labeling::Label;
use crate::rng::SeedTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    All,
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::All => n_features.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        label: Label,
        high_fraction: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

struct TreeBuilder<'a, R> {
    rows: &'a [Vec<f64>],
    labels: &'a [Label],
    params: &'a ForestParams,
    n_candidates: usize,
    rng: R,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn gini(high: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = high as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let high = idx.iter().filter(|&&i| self.labels[i].is_high()).count();
        let frac = high as f64 / idx.len() as f64;
        self.nodes.push(Node::Leaf {
            label: Label::from_proba(frac),
            high_fraction: frac,
        });
        self.nodes.len() - 1
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<BestSplit> {
        let n = idx.len();
        let n_features = self.rows[idx[0]].len();
        let total_high = idx.iter().filter(|&&i| self.labels[i].is_high()).count();
        let parent = gini(total_high, n);
        let min_leaf = self.params.min_samples_leaf.max(1);

        let mut candidates = sample(&mut self.rng, n_features, self.n_candidates).into_vec();
        candidates.sort_unstable();

        let mut best: Option<BestSplit> = None;
        let mut column: Vec<(f64, bool)> = Vec::with_capacity(n);
        for f in candidates {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.rows[i][f], self.labels[i].is_high())));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_high = 0;
            for j in 0..n - 1 {
                if column[j].1 {
                    left_high += 1;
                }
                let n_left = j + 1;
                if column[j].0 == column[j + 1].0 || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let impurity = (n_left as f64 * gini(left_high, n_left)
                    + (n - n_left) as f64 * gini(total_high - left_high, n - n_left))
                    / n as f64;
                if best.is_none_or(|b| impurity < b.impurity) {
                    let (lo, hi) = (column[j].0, column[j + 1].0);
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some(BestSplit {
                        feature: f,
                        threshold: if mid < hi { mid } else { lo },
                        impurity,
                    });
                }
            }
        }
        best.filter(|b| parent - b.impurity > 1e-12)
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        let high = idx.iter().filter(|&&i| self.labels[i].is_high()).count();
        let pure = high == 0 || high == idx.len();
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || idx.len() < 2 * self.params.min_samples_leaf.max(1) {
            return self.leaf(idx);
        }
        let Some(split) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.rows[i][split.feature] <= split.threshold);
        let me = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let left = self.grow(&left_idx, depth + 1);
        let right = self.grow(&right_idx, depth + 1);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[me] {
            *l = left;
            *r = right;
        }
        me
    }
}

impl DecisionTree {
    /// Grows a tree on the rows listed in `idx` (duplicates allowed).
    pub fn fit<R: Rng>(
        rows: &[Vec<f64>],
        labels: &[Label],
        idx: &[usize],
        params: &ForestParams,
        rng: R,
    ) -> DecisionTree {
        let n_features = rows.first().map_or(0, Vec::len);
        let mut b = TreeBuilder {
            rows,
            labels,
            params,
            n_candidates: params.max_features.resolve(n_features).min(n_features.max(1)),
            rng,
            nodes: Vec::new(),
        };
        if n_features == 0 {
            b.leaf(idx);
        } else {
            b.grow(idx, 0);
        }
        DecisionTree { nodes: b.nodes }
    }

    fn leaf_for(&self, row: &[f64]) -> &Node {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
                leaf => return leaf,
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> Label {
        match self.leaf_for(row) {
            Node::Leaf { label, .. } => *label,
            Node::Split { .. } => unreachable!("leaf_for returns leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Trees are grown in parallel; tree `i` draws only from `seed.child(i)`,
    /// so the result matches a sequential build.
    pub fn fit(rows: &[Vec<f64>], labels: &[Label], params: &ForestParams, seed: SeedTree) -> Self {
        let n = rows.len();
        let trees = (0..params.n_trees.max(1))
            .into_par_iter()
            .map(|t| {
                let mut rng = seed.child(t as u64).rng();
                let idx: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit(rows, labels, &idx, params, rng)
            })
            .collect();
        RandomForest { trees }
    }

    pub fn from_trees(trees: Vec<DecisionTree>) -> Self {
        RandomForest { trees }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Fraction of trees voting `High`.
    pub fn proba(&self, row: &[f64]) -> f64 {
        let high = self.trees.iter().filter(|t| t.predict(row).is_high()).count();
        high as f64 / self.trees.len() as f64
    }
}
