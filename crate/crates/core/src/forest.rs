//! Random-forest regression (CART trees on row subsamples with random
//! feature subsets), used for all three nuisance functions.
//!
//! Trees are grown independently from `(seed, tree index)` random streams
//! and predictions are averaged in tree-index order, so a fitted forest and
//! its predictions do not depend on how rayon schedules the work.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats::{derive_seed, stream_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Share of rows drawn without replacement for each tree.
    pub subsample_fraction: f64,
    pub features_per_split: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl ForestParams {
    /// 1000 trees on 50% subsamples, `ceil(sqrt(p))` candidate features per
    /// split, `min_leaf = 5`.
    pub fn defaults_for(n_features: usize, seed: u64) -> Self {
        ForestParams {
            n_trees: 1000,
            subsample_fraction: 0.5,
            features_per_split: default_features_per_split(n_features),
            min_leaf: 5,
            seed,
        }
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::config("n_trees must be positive"));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::config(format!(
                "subsample_fraction {} outside (0, 1]",
                self.subsample_fraction
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::config("min_leaf must be at least 1"));
        }
        if self.features_per_split == 0 || self.features_per_split > n_features {
            return Err(Error::config(format!(
                "features_per_split {} must lie in 1..={n_features}",
                self.features_per_split
            )));
        }
        Ok(())
    }
}

pub fn default_features_per_split(n_features: usize) -> usize {
    ((n_features as f64).sqrt().ceil() as usize).clamp(1, n_features.max(1))
}

/// Which conditional mean a forest estimates; carried for reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingTarget {
    Mu1,
    Mu0,
    Propensity,
    Generic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        prediction: f64,
        n_leaf: usize,
    },
}

/// Flat node array; node 0 is the root. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    fn predict_row(&self, x: &Matrix, row: usize) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x.get(row, feature) <= threshold { left } else { right },
                TreeNode::Leaf { prediction, .. } => return prediction,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    pub training_target: TrainingTarget,
    pub n_features: usize,
    pub warnings: Vec<String>,
}

pub fn fit_forest(x: &Matrix, y: &[f64], params: &ForestParams) -> Result<ForestModel> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n == 0 || p == 0 {
        return Err(Error::data("cannot fit a forest on empty data"));
    }
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: y.len(),
        });
    }
    params.validate(p)?;
    if n < 2 * params.min_leaf {
        return Err(Error::data(format!(
            "{n} rows cannot support min_leaf {}",
            params.min_leaf
        )));
    }
    if y.iter().any(|v| !v.is_finite()) || (0..p).any(|j| x.column(j).iter().any(|v| !v.is_finite())) {
        return Err(Error::data("forest inputs must be finite"));
    }
    let mut warnings = Vec::new();
    if y.iter().all(|&v| v == y[0]) {
        warnings.push(format!("constant target {}; every leaf predicts it", y[0]));
    }
    let m = ((params.subsample_fraction * n as f64).floor() as usize).clamp(1, n);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(derive_seed(params.seed, 0x7265_6573), t as u64);
            let mut rows: Vec<usize> = if m == n {
                (0..n).collect()
            } else {
                sample(&mut rng, n, m).into_vec()
            };
            rows.sort_unstable();
            grow_tree(x, y, rows, params, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        trees,
        params: params.clone(),
        feature_names: (0..p).map(|j| format!("x{j}")).collect(),
        training_target: TrainingTarget::Generic,
        n_features: p,
        warnings,
    })
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn grow_tree<R: Rng>(
    x: &Matrix,
    y: &[f64],
    mut rows: Vec<usize>,
    params: &ForestParams,
    rng: &mut R,
) -> Tree {
    let p = x.n_cols();
    let min_leaf = params.min_leaf;
    let mut nodes = vec![TreeNode::Leaf {
        prediction: 0.0,
        n_leaf: 0,
    }];
    // (node id, start, end) over `rows`
    let mut stack = vec![(0usize, 0usize, rows.len())];
    let mut features: Vec<usize> = (0..p).collect();
    let mut buf: Vec<(f64, f64)> = Vec::with_capacity(rows.len());

    while let Some((id, start, end)) = stack.pop() {
        let slice = &rows[start..end];
        let count = slice.len();
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &r in slice {
            lo = lo.min(y[r]);
            hi = hi.max(y[r]);
            sum += y[r];
        }
        let leaf = TreeNode::Leaf {
            prediction: (sum / count as f64).clamp(lo, hi),
            n_leaf: count,
        };
        if lo == hi || count < 2 * min_leaf {
            nodes[id] = leaf;
            continue;
        }

        features.shuffle(rng);
        let mut best: Option<Candidate> = None;
        let mut visited = 0;
        for &f in &features {
            if visited == params.features_per_split {
                break;
            }
            buf.clear();
            buf.extend(slice.iter().map(|&r| (x.get(r, f), y[r])));
            buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if buf[0].0 == buf[count - 1].0 {
                continue;
            }
            visited += 1;
            let mut left_sum = 0.0;
            for k in 0..count - 1 {
                left_sum += buf[k].1;
                let n_left = k + 1;
                if n_left < min_leaf {
                    continue;
                }
                if count - n_left < min_leaf {
                    break;
                }
                let (a, b) = (buf[k].0, buf[k + 1].0);
                if a == b {
                    continue;
                }
                let right_sum = sum - left_sum;
                // maximizing this minimizes the summed child squared error
                let score = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / (count - n_left) as f64;
                if best.as_ref().is_none_or(|c| score > c.score) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }

        let Some(best) = best else {
            nodes[id] = leaf;
            continue;
        };
        let region = &mut rows[start..end];
        let mut split = 0;
        for k in 0..region.len() {
            if x.get(region[k], best.feature) <= best.threshold {
                region.swap(k, split);
                split += 1;
            }
        }
        let left = nodes.len();
        let right = left + 1;
        nodes.push(TreeNode::Leaf {
            prediction: 0.0,
            n_leaf: 0,
        });
        nodes.push(TreeNode::Leaf {
            prediction: 0.0,
            n_leaf: 0,
        });
        nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        stack.push((right, start + split, end));
        stack.push((left, start, start + split));
    }
    Tree { nodes }
}

impl ForestModel {
    pub fn with_target(mut self, target: TrainingTarget) -> Self {
        self.training_target = target;
        self
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: names.len(),
            });
        }
        self.feature_names = names;
        Ok(self)
    }

    /// Mean of the per-tree leaf predictions for each row.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: x.n_cols(),
            });
        }
        let k = self.trees.len() as f64;
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| {
                let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
                for t in &self.trees {
                    let v = t.predict_row(x, i);
                    lo = lo.min(v);
                    hi = hi.max(v);
                    sum += v;
                }
                (sum / k).clamp(lo, hi)
            })
            .collect())
    }

    /// Plain-text dump, one block per tree:
    ///
    /// ```text
    /// tree 0
    /// node 0 split feature=1 threshold=0.5 left=1 right=2
    /// node 1 leaf value=0.25 n=12
    /// ```
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (t, tree) in self.trees.iter().enumerate() {
            let _ = writeln!(s, "tree {t}");
            for (id, node) in tree.nodes.iter().enumerate() {
                let _ = match node {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => writeln!(
                        s,
                        "node {id} split feature={feature} threshold={threshold} left={left} right={right}"
                    ),
                    TreeNode::Leaf { prediction, n_leaf } => {
                        writeln!(s, "node {id} leaf value={prediction} n={n_leaf}")
                    }
                };
            }
        }
        s
    }
}

/// Random `k`-fold assignment of `n` rows with (near) equal fold sizes.
pub(crate) fn random_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Out-of-fold mean squared error of one parameter set.
pub fn cv_mse(x: &Matrix, y: &[f64], params: &ForestParams, folds: &[usize], k: usize) -> Result<f64> {
    let mut sse = 0.0;
    for f in 0..k {
        let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let model = fit_forest(&x.select_rows(&train), &ytr, params)?;
        let pred = model.predict(&x.select_rows(&test))?;
        sse += test
            .iter()
            .zip(&pred)
            .map(|(&i, p)| (y[i] - p).powi(2))
            .sum::<f64>();
    }
    Ok(sse / y.len() as f64)
}

/// Picks the grid entry with the lowest k-fold out-of-fold MSE; ties go to
/// the smaller `min_leaf`, then to the earlier grid entry. Entries that
/// cannot be fitted on some training fold are skipped.
pub fn cross_validate(
    x: &Matrix,
    y: &[f64],
    grid: &[ForestParams],
    k_folds: usize,
    seed: u64,
) -> Result<ForestParams> {
    if grid.is_empty() {
        return Err(Error::config("empty tuning grid"));
    }
    if k_folds < 2 {
        return Err(Error::config("cross-validation needs at least 2 folds"));
    }
    if y.len() < k_folds {
        return Err(Error::data(format!(
            "{} rows cannot be split into {k_folds} folds",
            y.len()
        )));
    }
    if grid.len() == 1 {
        return Ok(grid[0].clone());
    }
    let folds = random_folds(y.len(), k_folds, seed);
    let mut best: Option<(f64, usize, usize)> = None;
    for (g, params) in grid.iter().enumerate() {
        let Ok(mse) = cv_mse(x, y, params, &folds, k_folds) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((b_mse, b_leaf, _)) => {
                mse < b_mse || (mse == b_mse && params.min_leaf < b_leaf)
            }
        };
        if better {
            best = Some((mse, params.min_leaf, g));
        }
    }
    best.map(|(_, _, g)| grid[g].clone())
        .ok_or_else(|| Error::data("no grid entry could be fitted on the training folds"))
}
