//! A small CART random forest for binary labels with Gini impurity and
//! mean-decrease-in-impurity feature importances.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 200,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            max_depth: None,
            min_samples_leaf: 1,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ForestError {
    #[error("training data has a single class")]
    SingleClass,
    #[error("training data is empty")]
    Empty,
    #[error("row {row} has {got} features, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("n_trees and min_samples_leaf must be at least 1")]
    BadParams,
    #[error("no tree found an informative split")]
    NoSplits,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { p_true: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    /// Unnormalized total impurity decrease per feature.
    decrease: Vec<f64>,
}

impl Tree {
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { p_true } => return *p_true,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Index of the feature used at the root, if the root splits.
    pub fn root_feature(&self) -> Option<usize> {
        match self.nodes.first() {
            Some(Node::Split { feature, .. }) => Some(*feature),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<Tree>,
    n_features: usize,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    mtry: usize,
    max_depth: Option<usize>,
    min_leaf: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    decrease: Vec<f64>,
    order: Vec<usize>,
    pairs: Vec<(f64, bool)>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl Builder<'_> {
    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        self.nodes.push(Node::Leaf {
            p_true: pos as f64 / n as f64,
        });
        let pure = pos == 0 || pos == n;
        let depth_ok = self.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_ok || n < 2 * self.min_leaf {
            return at;
        }
        let Some(best) = self.best_split(&idx, pos) else { return at };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][best.feature] <= best.threshold);
        self.decrease[best.feature] += best.decrease;
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        at
    }

    /// Visit features in random order until `mtry` non-constant ones have
    /// been examined; keep the split with the largest weighted Gini decrease.
    fn best_split(&mut self, idx: &[usize], pos: usize) -> Option<BestSplit> {
        let n = idx.len();
        let parent = n as f64 * gini(pos, n);
        self.order.shuffle(&mut self.rng);
        let mut examined = 0;
        let mut best: Option<BestSplit> = None;
        for oi in 0..self.order.len() {
            if examined == self.mtry {
                break;
            }
            let f = self.order[oi];
            self.pairs.clear();
            self.pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if self.pairs[0].0 == self.pairs[n - 1].0 {
                continue;
            }
            examined += 1;
            let mut left_pos = 0;
            for k in 1..n {
                if self.pairs[k - 1].1 {
                    left_pos += 1;
                }
                if self.pairs[k - 1].0 == self.pairs[k].0 || k < self.min_leaf || n - k < self.min_leaf {
                    continue;
                }
                let child = k as f64 * gini(left_pos, k) + (n - k) as f64 * gini(pos - left_pos, n - k);
                let decrease = parent - child;
                if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: (self.pairs[k - 1].0 + self.pairs[k].0) / 2.0,
                        decrease,
                    });
                }
            }
        }
        best
    }
}

fn fit_tree(x: &[Vec<f64>], y: &[bool], params: &ForestParams, seed: u64) -> Tree {
    let n_features = x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = if params.bootstrap {
        (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect()
    } else {
        (0..x.len()).collect()
    };
    let mut b = Builder {
        x,
        y,
        mtry: params.max_features.resolve(n_features),
        max_depth: params.max_depth,
        min_leaf: params.min_samples_leaf,
        rng,
        nodes: Vec::new(),
        decrease: vec![0.0; n_features],
        order: (0..n_features).collect(),
        pairs: Vec::with_capacity(x.len()),
    };
    b.build(idx, 0);
    Tree {
        nodes: b.nodes,
        decrease: b.decrease,
    }
}

impl RandomForest {
    /// Train on rows `x` (all the same width) with labels `y`. Per-tree seeds
    /// are drawn from the master seed up front, so the result does not depend
    /// on how trees are spread over threads.
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: &ForestParams) -> Result<RandomForest, ForestError> {
        if params.n_trees == 0 || params.min_samples_leaf == 0 {
            return Err(ForestError::BadParams);
        }
        if x.is_empty() || x.len() != y.len() {
            return Err(ForestError::Empty);
        }
        let n_features = x[0].len();
        if n_features == 0 {
            return Err(ForestError::Empty);
        }
        if let Some((row, r)) = x.iter().enumerate().find(|(_, r)| r.len() != n_features) {
            return Err(ForestError::Ragged {
                row,
                got: r.len(),
                expected: n_features,
            });
        }
        if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
            return Err(ForestError::SingleClass);
        }
        let mut master = ChaCha8Rng::seed_from_u64(params.seed);
        let seeds: Vec<u64> = (0..params.n_trees).map(|_| master.gen()).collect();
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len());
        let chunk = seeds.len().div_ceil(threads);
        let trees: Vec<Tree> = std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|&s| fit_tree(x, y, params, s)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("tree worker panicked"))
                .collect()
        });
        Ok(RandomForest { trees, n_features })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Mean decrease in impurity: each tree's decreases normalized to sum to
    /// one, averaged over trees that split at all, then renormalized.
    pub fn importances(&self) -> Result<Vec<f64>, ForestError> {
        let mut acc = vec![0.0; self.n_features];
        let mut used = 0usize;
        for t in &self.trees {
            let total: f64 = t.decrease.iter().sum();
            if t.node_count() > 1 && total > 0.0 {
                used += 1;
                for (a, d) in acc.iter_mut().zip(&t.decrease) {
                    *a += d / total;
                }
            }
        }
        if used == 0 {
            return Err(ForestError::NoSplits);
        }
        let total: f64 = acc.iter().sum();
        Ok(acc.into_iter().map(|a| a / total).collect())
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_proba(row)).sum::<f64>() / self.trees.len() as f64
    }

    /// True when the mean tree probability is strictly above one half.
    pub fn predict(&self, row: &[f64]) -> bool {
        self.predict_proba(row) > 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stump_picks_larger_decrease() {
        // feature 0 splits 4/4 perfectly, feature 1 only partly.
        let x = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let y = [false, false, false, false, true, true, true, true];
        let params = ForestParams {
            n_trees: 1,
            max_features: MaxFeatures::All,
            bootstrap: false,
            max_depth: Some(1),
            ..ForestParams::default()
        };
        let f = RandomForest::fit(&x, &y, &params).unwrap();
        assert_eq!(f.trees()[0].root_feature(), Some(0));
        assert_eq!(f.importances().unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn single_class_errors() {
        let x = vec![vec![0.0], vec![1.0]];
        assert_eq!(RandomForest::fit(&x, &[true, true], &ForestParams::default()), Err(ForestError::SingleClass));
    }

    #[test]
    fn fits_training_data_without_bootstrap() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 2) as f64, (i % 3) as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i % 2 == 0 || i % 3 == 0).collect();
        let params = ForestParams {
            n_trees: 5,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..ForestParams::default()
        };
        let f = RandomForest::fit(&x, &y, &params).unwrap();
        for (r, &t) in x.iter().zip(&y) {
            assert_eq!(f.predict(r), t);
        }
        let sum: f64 = f.importances().unwrap().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
