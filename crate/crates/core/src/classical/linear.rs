use log::warn;
use serde::{Deserialize, Serialize};

use super::{ClassicalModel, Dataset2D, Standardizer};
use crate::error::Result;

pub fn fit_zeror(data: &Dataset2D) -> Result<ClassicalModel> {
    Ok(ClassicalModel::ZeroR { mean: data.mean_y() })
}

/// Least-squares line on the single attribute with the smallest squared
/// error; ties go to the lowest index. A constant target gives slope 0.
pub fn fit_simple_linear(data: &Dataset2D) -> Result<ClassicalModel> {
    let n = data.n_rows() as f64;
    let my = data.mean_y();
    let mut best = ClassicalModel::SimpleLinear { attribute: 0, slope: 0.0, intercept: my };
    let mut best_sse = f64::INFINITY;
    for j in 0..data.n_features() {
        let col = data.column(j);
        let mx = col.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (x, y) in col.iter().zip(&data.y) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
        }
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let intercept = my - slope * mx;
        let sse: f64 = col.iter().zip(&data.y).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        if sse < best_sse {
            best_sse = sse;
            best = ClassicalModel::SimpleLinear { attribute: j, slope, intercept };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetParams {
    pub lambda: f64,
    /// 1 is lasso, 0 is ridge.
    pub alpha_mix: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ElasticNetParams {
    fn default() -> Self {
        Self { lambda: 0.01, alpha_mix: 0.5, max_iter: 1000, tol: 1e-6 }
    }
}

#[inline]
fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// `(1/2n)|y - Xb|^2 + lambda (alpha |b|_1 + (1 - alpha)/2 |b|^2)` for
/// centred `y` and standardized columns.
fn objective(xs: &[Vec<f64>], yc: &[f64], beta: &[f64], p: &ElasticNetParams) -> f64 {
    let n = yc.len() as f64;
    let mut rss = 0.0;
    for (i, y) in yc.iter().enumerate() {
        let fit: f64 = xs.iter().zip(beta).map(|(c, b)| c[i] * b).sum();
        rss += (y - fit).powi(2);
    }
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let l2: f64 = beta.iter().map(|b| b * b).sum();
    rss / (2.0 * n) + p.lambda * (p.alpha_mix * l1 + 0.5 * (1.0 - p.alpha_mix) * l2)
}

/// Cyclic coordinate descent; returns coefficients and the objective after
/// every sweep.
pub(crate) fn coordinate_descent(xs: &[Vec<f64>], yc: &[f64], p: &ElasticNetParams) -> (Vec<f64>, Vec<f64>, bool) {
    let n = yc.len() as f64;
    let d = xs.len();
    let mut beta = vec![0.0; d];
    let mut resid = yc.to_vec();
    let norms: Vec<f64> = xs.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / n).collect();
    let mut trace = Vec::new();
    for _ in 0..p.max_iter {
        let mut max_change: f64 = 0.0;
        for j in 0..d {
            if norms[j] == 0.0 {
                continue;
            }
            let col = &xs[j];
            let old = beta[j];
            let rho = col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n + norms[j] * old;
            let new = soft_threshold(rho, p.lambda * p.alpha_mix) / (norms[j] + p.lambda * (1.0 - p.alpha_mix));
            if new != old {
                let delta = new - old;
                for (r, x) in resid.iter_mut().zip(col) {
                    *r -= delta * x;
                }
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        trace.push(objective(xs, yc, &beta, p));
        if max_change < p.tol {
            return (beta, trace, true);
        }
    }
    (beta, trace, false)
}

/// Elastic net on internally standardized features.
pub fn fit_elastic_net(data: &Dataset2D, params: &ElasticNetParams) -> Result<ClassicalModel> {
    let rows: Vec<Vec<f64>> = (0..data.n_rows()).map(|i| data.row(i).to_vec()).collect();
    let st = Standardizer::fit(&rows);
    let xs: Vec<Vec<f64>> = (0..data.n_features())
        .map(|j| rows.iter().map(|r| if st.scale[j] > 0.0 { (r[j] - st.mean[j]) / st.scale[j] } else { 0.0 }).collect())
        .collect();
    let my = data.mean_y();
    let yc: Vec<f64> = data.y.iter().map(|y| y - my).collect();
    let (coef, _, converged) = coordinate_descent(&xs, &yc, params);
    if !converged {
        warn!("elastic net did not converge in {} sweeps; keeping the last iterate", params.max_iter);
    }
    Ok(ClassicalModel::ElasticNet { mean: st.mean, scale: st.scale, coef, intercept: my })
}
