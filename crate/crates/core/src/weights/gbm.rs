//! Boosted regression trees for the exposure mean with a balance-based
//! stopping rule: boosting proceeds on squared-error residuals of A given
//! the covariates, and the retained iteration count minimises the
//! root-mean-squared absolute weighted exposure-covariate correlation in the
//! full sample. Weights are the ratio of a normal marginal density of A
//! (sample mean and variance) to a normal conditional density centered at
//! the boosted mean with the current residual variance. Matching normal
//! tails in numerator and denominator keeps the ratio bounded for the
//! right-truncated counts; a kernel numerator puts a point-mass floor under
//! every observed level and blows up tail weights.

use crate::data_model::{Dataset, MethodId};
use crate::error::{Error, Result};
use crate::stats::{normal_log_pdf, quantile_type7};

use super::WeightVector;

#[derive(Debug, Clone)]
pub struct GbmConfig {
    pub shrinkage: f64,
    pub max_depth: usize,
    pub min_node: usize,
    pub max_trees: usize,
    pub eval_every: usize,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            shrinkage: 0.05,
            max_depth: 3,
            min_node: 10,
            max_trees: 2000,
            eval_every: 1,
        }
    }
}

/// One regression tree node. Leaves carry the fitted constant.
#[derive(Debug, Clone)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

/// Fitted boosting model with its balance path.
#[derive(Debug, Clone)]
pub struct GbmModel {
    pub m0: f64,
    pub trees: Vec<Tree>,
    pub shrinkage: f64,
    /// Iteration minimising the balance criterion (0 = intercept only).
    pub chosen_m: usize,
    /// Residual standard deviation at the chosen iteration.
    pub residual_sd: f64,
    /// Balance criterion per evaluated iteration, index 0 first.
    pub balance_path: Vec<f64>,
    /// Set when max_trees was reached with the criterion still strictly
    /// decreasing over the last tenth of the path.
    pub underfit_warning: bool,
}

struct FeatureBins {
    /// Bin index per row.
    codes: Vec<u16>,
    /// Upper edge value of each bin except the last; a split after bin b
    /// uses threshold edges[b].
    edges: Vec<f64>,
    n_bins: usize,
}

fn bin_feature(values: &[f64], max_bins: usize) -> FeatureBins {
    let n = values.len();
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let cuts: Vec<f64> = if sorted.len() <= max_bins {
        sorted.clone()
    } else {
        (0..max_bins)
            .map(|b| {
                let q = (b as f64 + 0.5) / max_bins as f64;
                quantile_type7(&sorted, q)
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .fold(Vec::new(), |mut acc, v| {
                if acc.last().map_or(true, |&l| v > l) {
                    acc.push(v);
                }
                acc
            })
    };
    // boundaries between consecutive cut values
    let edges: Vec<f64> = cuts
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect();
    let n_bins = cuts.len();
    let mut codes = Vec::with_capacity(n);
    for &v in values {
        // first edge the value does not exceed
        let code = edges.partition_point(|&e| v > e);
        codes.push(code as u16);
    }
    FeatureBins {
        codes,
        edges,
        n_bins,
    }
}

struct TreeBuilder<'a> {
    bins: &'a [FeatureBins],
    min_node: usize,
    max_depth: usize,
}

impl<'a> TreeBuilder<'a> {
    /// Fit one depth-limited least-squares tree to `residuals`, returning the
    /// tree and per-row leaf values.
    fn fit(&self, residuals: &[f64], leaf_of_row: &mut [usize]) -> Tree {
        let n = residuals.len();
        let mut nodes: Vec<TreeNode> = Vec::new();
        // rows per open node
        let mut open: Vec<(usize, Vec<u32>, usize)> = Vec::new(); // (node_id, rows, depth)
        nodes.push(TreeNode::Leaf { value: 0.0 });
        open.push((0, (0..n as u32).collect(), 0));

        while let Some((node_id, rows, depth)) = open.pop() {
            let sum: f64 = rows.iter().map(|&i| residuals[i as usize]).sum();
            let cnt = rows.len() as f64;
            let mean = sum / cnt;
            let mut best: Option<(usize, usize, f64)> = None; // (feature, bin, gain)
            if depth < self.max_depth && rows.len() >= 2 * self.min_node {
                for (f, fb) in self.bins.iter().enumerate() {
                    if fb.n_bins < 2 {
                        continue;
                    }
                    let mut hist_sum = vec![0.0f64; fb.n_bins];
                    let mut hist_cnt = vec![0u32; fb.n_bins];
                    for &i in &rows {
                        let b = fb.codes[i as usize] as usize;
                        hist_sum[b] += residuals[i as usize];
                        hist_cnt[b] += 1;
                    }
                    let mut left_sum = 0.0;
                    let mut left_cnt = 0u32;
                    for b in 0..fb.n_bins - 1 {
                        left_sum += hist_sum[b];
                        left_cnt += hist_cnt[b];
                        let right_cnt = rows.len() as u32 - left_cnt;
                        if (left_cnt as usize) < self.min_node
                            || (right_cnt as usize) < self.min_node
                        {
                            continue;
                        }
                        let right_sum = sum - left_sum;
                        let gain = left_sum * left_sum / left_cnt as f64
                            + right_sum * right_sum / right_cnt as f64
                            - sum * sum / cnt;
                        if gain > best.map_or(1e-12, |(_, _, g)| g) {
                            best = Some((f, b, gain));
                        }
                    }
                }
            }
            match best {
                Some((feature, bin, _)) => {
                    let fb = &self.bins[feature];
                    let threshold = fb.edges[bin];
                    let left_id = nodes.len();
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    let right_id = nodes.len();
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
                        .iter()
                        .partition(|&&i| (fb.codes[i as usize] as usize) <= bin);
                    nodes[node_id] = TreeNode::Split {
                        feature,
                        threshold,
                        left: left_id,
                        right: right_id,
                    };
                    open.push((left_id, left_rows, depth + 1));
                    open.push((right_id, right_rows, depth + 1));
                }
                None => {
                    nodes[node_id] = TreeNode::Leaf { value: mean };
                    for &i in &rows {
                        leaf_of_row[i as usize] = node_id;
                    }
                }
            }
        }
        Tree { nodes }
    }
}

/// Normal marginal density of the exposure at each observed value, using
/// the sample mean and (1/n) variance.
fn normal_numerator(a: &[f64]) -> Result<Vec<f64>> {
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(Error::InvalidParameter("constant exposure".into()));
    }
    Ok(a.iter().map(|&v| normal_log_pdf(v, mean, var).exp()).collect())
}

/// Boost the exposure on the covariates and return the weights at the
/// balance-optimal iteration together with the fitted model.
pub fn gbm_weights(ds: &Dataset, config: &GbmConfig) -> Result<(WeightVector, GbmModel)> {
    if !ds.is_complete() {
        return Err(Error::InvalidParameter(
            "gbm_weights requires complete data".into(),
        ));
    }
    let n = ds.n;
    if n < 2 * config.min_node {
        return Err(Error::InvalidParameter("too few rows for boosting".into()));
    }
    let a: Vec<f64> = ds.a.iter().map(|&v| v as f64).collect();
    let features: [Vec<f64>; 3] = [
        ds.c1.iter().map(|&v| v as f64).collect(),
        ds.c2.clone(),
        ds.c3.clone(),
    ];
    let bins: Vec<FeatureBins> = features.iter().map(|f| bin_feature(f, 256)).collect();
    let numerator = normal_numerator(&a)?;

    let m0 = a.iter().sum::<f64>() / n as f64;
    let mut m_hat = vec![m0; n];
    let mut residuals: Vec<f64> = a.iter().map(|&v| v - m0).collect();

    let builder = TreeBuilder {
        bins: &bins,
        min_node: config.min_node,
        max_depth: config.max_depth,
    };

    let eval_balance = |m_hat: &[f64], residuals: &[f64]| -> Result<(f64, f64, Vec<f64>, Vec<f64>)> {
        let sigma2 = residuals.iter().map(|r| r * r).sum::<f64>() / n as f64;
        let mut w = Vec::with_capacity(n);
        let mut den = Vec::with_capacity(n);
        for i in 0..n {
            let d = normal_log_pdf(a[i], m_hat[i], sigma2).exp();
            den.push(d);
            w.push(numerator[i] / d);
        }
        let mut ss = 0.0;
        for f in &features {
            let rho = crate::diagnostics::weighted_correlation(&a, f, &w)?;
            ss += rho * rho;
        }
        Ok(((ss / 3.0).sqrt(), sigma2, w, den))
    };

    let (crit0, sigma2_0, w0, den0) = eval_balance(&m_hat, &residuals)?;
    let mut balance_path = vec![crit0];
    let mut best_crit = crit0;
    let mut best_m = 0usize;
    let mut best_weights = w0;
    let mut best_denominator = den0;
    let mut best_sigma2 = sigma2_0;

    let mut trees = Vec::with_capacity(config.max_trees);
    let mut leaf_of_row = vec![0usize; n];
    for m in 1..=config.max_trees {
        let tree = builder.fit(&residuals, &mut leaf_of_row);
        for i in 0..n {
            if let TreeNode::Leaf { value } = tree.nodes[leaf_of_row[i]] {
                m_hat[i] += config.shrinkage * value;
                residuals[i] = a[i] - m_hat[i];
            }
        }
        trees.push(tree);
        if m % config.eval_every == 0 {
            let (crit, sigma2, w, den) = eval_balance(&m_hat, &residuals)?;
            balance_path.push(crit);
            if crit < best_crit {
                best_crit = crit;
                best_m = m;
                best_weights = w;
                best_denominator = den;
                best_sigma2 = sigma2;
            }
        }
    }

    // warn when the path is still strictly decreasing through its last tenth
    let tail_len = (balance_path.len() / 10).max(2);
    let tail = &balance_path[balance_path.len() - tail_len..];
    let still_decreasing = tail.windows(2).all(|w| w[1] < w[0]);
    let underfit_warning = best_m == config.max_trees && still_decreasing;

    let model = GbmModel {
        m0,
        trees,
        shrinkage: config.shrinkage,
        chosen_m: best_m,
        residual_sd: best_sigma2.sqrt(),
        balance_path,
        underfit_warning,
    };
    let wv = WeightVector {
        w: best_weights,
        numerator: Some(numerator),
        denominator: Some(best_denominator),
        method: MethodId::Gbm,
        winsorised_at: None,
    };
    wv.validate()?;
    Ok((wv, model))
}
