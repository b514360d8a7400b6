//! Classical single-target regressors over tabular features.

mod codec;
mod linear;
mod tree;

pub use codec::{decode_model, encode_model, load_model, save_model};
pub use linear::{fit_elastic_net, fit_simple_linear, fit_zeror, ElasticNetParams};
pub use tree::{fit_random_forest, fit_random_tree, ForestParams, Node, Tree, TreeParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `n x d` design matrix with one target column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset2D {
    n: usize,
    d: usize,
    x: Vec<f64>,
    pub y: Vec<f64>,
    pub ids: Vec<String>,
}

impl Dataset2D {
    pub fn new(rows: &[Vec<f64>], y: Vec<f64>, ids: Vec<String>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let d = rows[0].len();
        if y.len() != n || ids.len() != n || rows.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch(format!("{n} rows, {} targets, {} ids, ragged rows", y.len(), ids.len())));
        }
        let x: Vec<f64> = rows.iter().flatten().copied().collect();
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite value in dataset".into()));
        }
        Ok(Self { n, d, x, y, ids })
    }

    /// Rows without participant ids.
    pub fn anonymous(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(rows, y, ids)
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.d + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// Rows at `indices`, in that order; repeats allowed.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut x = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        Self {
            n: indices.len(),
            d: self.d,
            x,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    pub fn mean_y(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.n as f64
    }
}

/// Trained single-target regressor.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassicalModel {
    ZeroR { mean: f64 },
    SimpleLinear { attribute: usize, slope: f64, intercept: f64 },
    /// Coefficients act on features standardized with `mean` and `scale`.
    ElasticNet { mean: Vec<f64>, scale: Vec<f64>, coef: Vec<f64>, intercept: f64 },
    Tree(Tree),
    Forest(Vec<Tree>),
}

impl ClassicalModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            Self::ZeroR { mean } => *mean,
            Self::SimpleLinear { attribute, slope, intercept } => intercept + slope * row[*attribute],
            Self::ElasticNet { mean, scale, coef, intercept } => {
                let mut acc = *intercept;
                for j in 0..coef.len() {
                    if scale[j] > 0.0 {
                        acc += coef[j] * (row[j] - mean[j]) / scale[j];
                    }
                }
                acc
            }
            Self::Tree(t) => t.predict(row),
            Self::Forest(trees) => trees.iter().map(|t| t.predict(row)).sum::<f64>() / trees.len() as f64,
        }
    }

    pub fn predict_all(&self, data: &Dataset2D) -> Vec<f64> {
        (0..data.n_rows()).map(|i| self.predict(data.row(i))).collect()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ZeroR { .. } => "zeror",
            Self::SimpleLinear { .. } => "simple-linear",
            Self::ElasticNet { .. } => "elastic-net",
            Self::Tree(_) => "random-tree",
            Self::Forest(_) => "random-forest",
        }
    }
}

/// A classical method and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum ClassicalMethod {
    Zeror,
    SimpleLinear,
    ElasticNet(ElasticNetParams),
    RandomTree { max_depth: Option<usize>, min_leaf: usize },
    RandomForest { n_trees: usize, max_depth: Option<usize>, min_leaf: usize },
}

impl ClassicalMethod {
    pub fn fit(&self, data: &Dataset2D, seed: u64) -> Result<ClassicalModel> {
        let subsample = data.n_features().div_ceil(3).max(1);
        match *self {
            Self::Zeror => fit_zeror(data),
            Self::SimpleLinear => fit_simple_linear(data),
            Self::ElasticNet(p) => fit_elastic_net(data, &p),
            Self::RandomTree { max_depth, min_leaf } => {
                fit_random_tree(data, &TreeParams { max_depth, min_leaf, feature_subsample: subsample, seed })
            }
            Self::RandomForest { n_trees, max_depth, min_leaf } => fit_random_forest(
                data,
                &ForestParams { n_trees, max_depth, min_leaf, seed, bootstrap: true },
            ),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Zeror => "zeror",
            Self::SimpleLinear => "simple-linear",
            Self::ElasticNet(_) => "elastic-net",
            Self::RandomTree { .. } => "random-tree",
            Self::RandomForest { .. } => "random-forest",
        }
    }
}

/// Column-wise z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Constant columns get scale 0 and map to 0.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let s = (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                if s < 1e-12 { 0.0 } else { s }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }
}
