//! Diagonal-covariance Gaussian mixture fit by EM, used as the inlier
//! model of the discriminative baseline. Scores are negative
//! log-likelihoods computed in log space.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

pub const VAR_FLOOR: f64 = 1e-6;
const CONVERGENCE_TOL: f64 = 1e-6;
const MAX_ITERS: usize = 200;

#[derive(Debug, Clone)]
pub struct GmmModel {
    /// Mixture weights on the simplex.
    pub weights: Vec<f64>,
    /// `[n_components x dim]`
    pub means: Array2<f64>,
    /// Diagonal variances, `[n_components x dim]`, floored at [`VAR_FLOOR`].
    pub variances: Array2<f64>,
}

pub struct GmmFit {
    pub model: GmmModel,
    /// Mean log-likelihood after each EM iteration (non-decreasing).
    pub log_likelihood_trace: Vec<f64>,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let doc = GmmDoc::from(self);
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(file, &doc).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let doc: GmmDoc = serde_json::from_reader(file).map_err(|e| Error::Parse(e.to_string()))?;
        doc.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct GmmDoc {
    n_components: usize,
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl From<&GmmModel> for GmmDoc {
    fn from(m: &GmmModel) -> Self {
        GmmDoc {
            n_components: m.n_components(),
            dim: m.dim(),
            weights: m.weights.clone(),
            means: m.means.iter().copied().collect(),
            variances: m.variances.iter().copied().collect(),
        }
    }
}

impl TryFrom<GmmDoc> for GmmModel {
    type Error = Error;

    fn try_from(doc: GmmDoc) -> Result<Self> {
        let shape = (doc.n_components, doc.dim);
        Ok(GmmModel {
            weights: doc.weights,
            means: Array2::from_shape_vec(shape, doc.means)
                .map_err(|e| Error::Format(e.to_string()))?,
            variances: Array2::from_shape_vec(shape, doc.variances)
                .map_err(|e| Error::Format(e.to_string()))?,
        })
    }
}

fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-component log of `w_k N(x; mu_k, diag sigma_k^2)`.
fn component_log_densities(model: &GmmModel, x: &ArrayView1<f64>) -> Vec<f64> {
    let d = model.dim() as f64;
    (0..model.n_components())
        .map(|k| {
            let mut quad = 0.0;
            let mut log_det = 0.0;
            for j in 0..model.dim() {
                let var = model.variances[(k, j)];
                let diff = x[j] - model.means[(k, j)];
                quad += diff * diff / var;
                log_det += var.ln();
            }
            model.weights[k].ln() - 0.5 * (d * (2.0 * PI).ln() + log_det + quad)
        })
        .collect()
}

/// Negative log-likelihood anomaly score.
pub fn gmm_score(model: &GmmModel, x: &ArrayView1<f64>) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::Shape(format!(
            "point dim {} does not match model dim {}",
            x.len(),
            model.dim()
        )));
    }
    Ok(-logsumexp(&component_log_densities(model, x)))
}

/// k-means++-style seeding: first mean uniform, later means drawn with
/// probability proportional to squared distance from the chosen set.
fn seed_means(data: &Array2<f64>, n_components: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let mut means = Array2::zeros((n_components, data.ncols()));
    let first = rng.random_range(0..n);
    means.row_mut(0).assign(&data.row(first));

    let mut dist2: Vec<f64> = (0..n)
        .map(|i| {
            data.row(i)
                .iter()
                .zip(means.row(0).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect();
    for k in 1..n_components {
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        means.row_mut(k).assign(&data.row(pick));
        for i in 0..n {
            let d: f64 = data
                .row(i)
                .iter()
                .zip(means.row(k).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < dist2[i] {
                dist2[i] = d;
            }
        }
    }
    means
}

/// Fit by EM until the mean log-likelihood improves by less than 1e-6 or
/// 200 iterations pass.
pub fn fit_gmm(data: &Array2<f64>, n_components: usize, seed: u64) -> Result<GmmFit> {
    let n = data.nrows();
    let dim = data.ncols();
    if n_components == 0 {
        return Err(Error::Config("n_components must be >= 1".into()));
    }
    if n < n_components {
        return Err(Error::Config(format!(
            "{n} points cannot support {n_components} components"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let global_mean = data.sum_axis(Axis(0)) / n as f64;
    let global_var: Array1<f64> = {
        let mut v = Array1::zeros(dim);
        for i in 0..n {
            for j in 0..dim {
                let d = data[(i, j)] - global_mean[j];
                v[j] += d * d;
            }
        }
        v.mapv(|x: f64| (x / n as f64).max(VAR_FLOOR))
    };

    let mut model = GmmModel {
        weights: vec![1.0 / n_components as f64; n_components],
        means: seed_means(data, n_components, &mut rng),
        variances: Array2::from_shape_fn((n_components, dim), |(_, j)| global_var[j]),
    };

    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    for _iter in 0..MAX_ITERS {
        // E-step: log responsibilities.
        let mut resp = Array2::zeros((n, n_components));
        let mut ll = 0.0;
        for i in 0..n {
            let logs = component_log_densities(&model, &data.row(i));
            let norm = logsumexp(&logs);
            ll += norm;
            for k in 0..n_components {
                resp[(i, k)] = (logs[k] - norm).exp();
            }
        }
        let ll = ll / n as f64;
        trace.push(ll);

        // M-step.
        let counts = resp.sum_axis(Axis(0));
        for k in 0..n_components {
            let nk = counts[k].max(1e-12);
            model.weights[k] = nk / n as f64;
            for j in 0..dim {
                let mut mean = 0.0;
                for i in 0..n {
                    mean += resp[(i, k)] * data[(i, j)];
                }
                mean /= nk;
                let mut var = 0.0;
                for i in 0..n {
                    let d = data[(i, j)] - mean;
                    var += resp[(i, k)] * d * d;
                }
                model.means[(k, j)] = mean;
                model.variances[(k, j)] = (var / nk).max(VAR_FLOOR);
            }
        }

        if (ll - prev_ll).abs() < CONVERGENCE_TOL {
            break;
        }
        prev_ll = ll;
    }

    Ok(GmmFit {
        model,
        log_likelihood_trace: trace,
    })
}
