use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ClassicalModel, Dataset2D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf(f64),
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features drawn at random for every node.
    pub feature_subsample: usize,
    pub seed: u64,
}

struct Grower<'a> {
    data: &'a Dataset2D,
    params: &'a TreeParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn mean(&self, rows: &[usize]) -> f64 {
        rows.iter().map(|&i| self.data.y[i]).sum::<f64>() / rows.len() as f64
    }

    /// Best (feature, threshold, sse reduction) over a random feature subset.
    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let d = self.data.n_features();
        let k = self.params.feature_subsample.clamp(1, d);
        let features = sample(&mut self.rng, d, k).into_vec();
        let n = rows.len() as f64;
        let total: f64 = rows.iter().map(|&i| self.data.y[i]).sum();
        let parent = total * total / n;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = rows.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.data.get(a, f).total_cmp(&self.data.get(b, f)));
            let mut left_sum = 0.0;
            for pos in 0..order.len() - 1 {
                left_sum += self.data.y[order[pos]];
                let nl = pos + 1;
                let nr = order.len() - nl;
                let (xl, xr) = (self.data.get(order[pos], f), self.data.get(order[pos + 1], f));
                if nl < self.params.min_leaf || nr < self.params.min_leaf || xl == xr {
                    continue;
                }
                let right_sum = total - left_sum;
                // sse(parent) - sse(children) = sum_l^2/nl + sum_r^2/nr - total^2/n
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - parent;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.2) {
                    best = Some((f, 0.5 * (xl + xr), gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.mean(&rows)));
        let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
        if !depth_ok || rows.len() < 2 * self.params.min_leaf.max(1) {
            return id;
        }
        if let Some((feature, threshold)) = self.best_split(&rows) {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.data.get(i, feature) <= threshold);
            let left = self.grow(l, depth + 1);
            let right = self.grow(r, depth + 1);
            self.nodes[id] = Node::Split { feature, threshold, left, right };
        }
        id
    }
}

fn grow_tree(data: &Dataset2D, rows: Vec<usize>, params: &TreeParams) -> Tree {
    let mut g = Grower { data, params, rng: ChaCha8Rng::seed_from_u64(params.seed), nodes: Vec::new() };
    g.grow(rows, 0);
    Tree { nodes: g.nodes }
}

/// CART variance-reduction tree with a fresh random feature subset per node.
pub fn fit_random_tree(data: &Dataset2D, params: &TreeParams) -> Result<ClassicalModel> {
    if data.n_rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(ClassicalModel::Tree(grow_tree(data, (0..data.n_rows()).collect(), params)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: None, min_leaf: 5, seed: 0, bootstrap: true }
    }
}

/// Bagged random trees on `ceil(d / 3)` features per node; tree `i` uses
/// seed `seed + i` for both its bootstrap draw and its splits.
pub fn fit_random_forest(data: &Dataset2D, params: &ForestParams) -> Result<ClassicalModel> {
    if data.n_rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if params.n_trees == 0 {
        return Err(Error::Config("a forest needs at least one tree".into()));
    }
    let n = data.n_rows();
    let subsample = data.n_features().div_ceil(3).max(1);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let seed = params.seed.wrapping_add(t as u64);
            let tp = TreeParams { max_depth: params.max_depth, min_leaf: params.min_leaf, feature_subsample: subsample, seed };
            let rows: Vec<usize> = if params.bootstrap {
                // separate stream so the split draws match an unbagged tree's
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(data, rows, &tp)
        })
        .collect();
    Ok(ClassicalModel::Forest(trees))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_data() -> Dataset2D {
        let xs: Vec<f64> = (-10..10).map(|i| i as f64 + 0.5).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, (x * 7.3).sin()]).collect();
        let y = xs.iter().map(|&x| if x < 0.0 { 0.0 } else { 10.0 }).collect();
        Dataset2D::anonymous(&rows, y).unwrap()
    }

    fn friedman(n: usize, seed: u64) -> Dataset2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect();
        let y = rows
            .iter()
            .map(|x| {
                10.0 * (std::f64::consts::PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
                    + rng.random_range(-1.0..1.0)
            })
            .collect();
        Dataset2D::anonymous(&rows, y).unwrap()
    }

    fn train_mae(m: &ClassicalModel, d: &Dataset2D) -> f64 {
        m.predict_all(d).iter().zip(&d.y).map(|(p, y)| (p - y).abs()).sum::<f64>() / d.n_rows() as f64
    }

    #[test]
    fn depth_zero_is_the_mean() {
        let d = step_data();
        let m = fit_random_tree(&d, &TreeParams { max_depth: Some(0), min_leaf: 5, feature_subsample: 2, seed: 1 }).unwrap();
        assert_eq!(m.predict(&[-5.0, 0.0]), 5.0);
    }

    #[test]
    fn one_split_separates_a_step() {
        let d = step_data();
        let m = fit_random_tree(&d, &TreeParams { max_depth: Some(1), min_leaf: 5, feature_subsample: 2, seed: 1 }).unwrap();
        assert_eq!(train_mae(&m, &d), 0.0);
    }

    #[test]
    fn same_seed_same_tree() {
        let d = friedman(80, 3);
        let p = TreeParams { max_depth: None, min_leaf: 5, feature_subsample: 2, seed: 11 };
        assert_eq!(fit_random_tree(&d, &p).unwrap(), fit_random_tree(&d, &p).unwrap());
    }

    #[test]
    fn unbagged_single_tree_forest_equals_tree() {
        let d = friedman(60, 4);
        let f = fit_random_forest(&d, &ForestParams { n_trees: 1, bootstrap: false, seed: 5, ..Default::default() }).unwrap();
        let t = fit_random_tree(&d, &TreeParams { max_depth: None, min_leaf: 5, feature_subsample: 2, seed: 5 }).unwrap();
        match (f, t) {
            (ClassicalModel::Forest(trees), ClassicalModel::Tree(tree)) => assert_eq!(trees[0], tree),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_target_is_reproduced() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let d = Dataset2D::anonymous(&rows, vec![42.0; 20]).unwrap();
        let m = fit_random_forest(&d, &ForestParams { n_trees: 10, ..Default::default() }).unwrap();
        assert_eq!(train_mae(&m, &d), 0.0);
    }

    #[test]
    fn forest_fits_friedman_at_least_as_well_as_a_tree() {
        let (mut forest, mut tree) = (0.0, 0.0);
        for seed in 0..10 {
            let d = friedman(200, seed);
            let f = fit_random_forest(&d, &ForestParams { seed, ..Default::default() }).unwrap();
            let t = fit_random_tree(&d, &TreeParams { max_depth: None, min_leaf: 5, feature_subsample: 2, seed }).unwrap();
            forest += train_mae(&f, &d);
            tree += train_mae(&t, &d);
        }
        assert!(forest <= tree, "forest {forest} tree {tree}");
    }
}
