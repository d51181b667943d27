//! Cross-fitted nuisance estimation, AIPW orthogonal scores, the ATE and
//! common-support diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::{cross_validate, fit_forest, ForestParams, TrainingTarget};
use crate::matrix::Matrix;
use crate::stats::{check_level, derive_seed, mean, sample_sd, stream_rng, EffectEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimBounds {
    pub low: f64,
    pub high: f64,
}

impl Default for TrimBounds {
    fn default() -> Self {
        TrimBounds {
            low: 0.01,
            high: 0.99,
        }
    }
}

impl TrimBounds {
    fn validate(&self) -> Result<()> {
        if self.low > 0.0 && self.low < self.high && self.high < 1.0 {
            Ok(())
        } else {
            Err(Error::config(format!(
                "trim bounds [{}, {}] must satisfy 0 < low < high < 1",
                self.low, self.high
            )))
        }
    }
}

/// Grid of leaf sizes searched by k-fold CV before each nuisance fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuning {
    pub min_leaf_grid: Vec<usize>,
    pub k_folds: usize,
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning {
            min_leaf_grid: vec![2, 5, 10, 20],
            k_folds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    /// Forest settings; `seed` is replaced by a per-fold, per-nuisance seed.
    pub forest: ForestParams,
    pub tuning: Option<Tuning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitConfig {
    pub n_folds: usize,
    /// Assign whole clusters to folds instead of single observations.
    pub cluster_folds: bool,
    pub trim: TrimBounds,
    pub seed: u64,
    pub learner: LearnerConfig,
}

impl CrossFitConfig {
    pub fn new(learner: LearnerConfig, seed: u64) -> Self {
        CrossFitConfig {
            n_folds: 2,
            cluster_folds: false,
            trim: TrimBounds::default(),
            seed,
            learner,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TrimLog {
    pub clipped_low: usize,
    pub clipped_high: usize,
}

impl TrimLog {
    pub fn total(&self) -> usize {
        self.clipped_low + self.clipped_high
    }
}

/// Rows used to train the three models that predict one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldTraining {
    pub mu1_rows: Vec<usize>,
    pub mu0_rows: Vec<usize>,
    pub p_rows: Vec<usize>,
    pub min_leaf: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub mu1_hat: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    /// Propensity after clipping to the trim bounds.
    pub p_hat: Vec<f64>,
    pub p_hat_raw: Vec<f64>,
    pub fold_id: Vec<usize>,
    pub treatment: Vec<u8>,
    pub trim: TrimBounds,
    pub trim_log: TrimLog,
    pub training: Vec<FoldTraining>,
    pub warnings: Vec<String>,
}

impl NuisanceFit {
    pub fn n(&self) -> usize {
        self.p_hat.len()
    }
}

/// Assign rows to folds: a seeded random partition of rows, or of sorted
/// unique cluster ids when `clusters` is given.
pub fn assign_folds(n: usize, n_folds: usize, clusters: Option<&[u64]>, seed: u64) -> Result<Vec<usize>> {
    if n_folds < 2 {
        return Err(Error::config("cross-fitting needs at least 2 folds"));
    }
    let mut rng = stream_rng(seed, 0);
    match clusters {
        None => {
            if n < n_folds {
                return Err(Error::data(format!("{n} rows cannot fill {n_folds} folds")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut fold = vec![0; n];
            for (pos, &i) in order.iter().enumerate() {
                fold[i] = pos % n_folds;
            }
            Ok(fold)
        }
        Some(c) => {
            let mut ids: Vec<u64> = c.to_vec();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() < n_folds {
                return Err(Error::data(format!(
                    "{} clusters cannot fill {n_folds} folds",
                    ids.len()
                )));
            }
            ids.shuffle(&mut rng);
            let map: BTreeMap<u64, usize> = ids
                .iter()
                .enumerate()
                .map(|(pos, &id)| (id, pos % n_folds))
                .collect();
            Ok(c.iter().map(|id| map[id]).collect())
        }
    }
}

fn fit_predict(
    x: &Matrix,
    target: &[f64],
    rows: &[usize],
    predict_rows: &[usize],
    learner: &LearnerConfig,
    seed: u64,
    kind: TrainingTarget,
) -> Result<(Vec<f64>, usize, Vec<String>)> {
    let xt = x.select_rows(rows);
    let yt: Vec<f64> = rows.iter().map(|&i| target[i]).collect();
    let mut params = learner.forest.clone();
    params.seed = seed;
    if let Some(t) = &learner.tuning {
        let grid: Vec<ForestParams> = t
            .min_leaf_grid
            .iter()
            .map(|&m| ForestParams {
                min_leaf: m,
                ..params.clone()
            })
            .collect();
        params = cross_validate(&xt, &yt, &grid, t.k_folds, derive_seed(seed, 0x6376))?;
    }
    let model = fit_forest(&xt, &yt, &params)?.with_target(kind);
    let pred = model.predict(&x.select_rows(predict_rows))?;
    let warnings = model
        .warnings
        .iter()
        .map(|w| format!("{kind:?} forest: {w}"))
        .collect();
    Ok((pred, params.min_leaf, warnings))
}

/// Out-of-fold nuisance predictions: for each fold, `μ₁` is fit on treated
/// rows of the other folds, `μ₀` on their control rows and the propensity
/// on all of them; only the held-out fold is predicted. Propensities are
/// then clipped to the trim bounds.
pub fn crossfit_nuisances(data: &Dataset, cfg: &CrossFitConfig) -> Result<NuisanceFit> {
    cfg.trim.validate()?;
    let n = data.n();
    let clusters = data.cluster_ids();
    let fold_id = assign_folds(
        n,
        cfg.n_folds,
        cfg.cluster_folds.then_some(clusters.as_slice()),
        derive_seed(cfg.seed, 0x666f_6c64),
    )?;
    let d = data.d();
    let y = data.y();
    let dv: Vec<f64> = d.iter().map(|&v| f64::from(v)).collect();
    let x = data.x_matrix();

    let mut training = Vec::with_capacity(cfg.n_folds);
    for f in 0..cfg.n_folds {
        let comp: Vec<usize> = (0..n).filter(|&i| fold_id[i] != f).collect();
        let mu1_rows: Vec<usize> = comp.iter().copied().filter(|&i| d[i] == 1).collect();
        let mu0_rows: Vec<usize> = comp.iter().copied().filter(|&i| d[i] == 0).collect();
        if mu1_rows.is_empty() || mu0_rows.is_empty() {
            return Err(Error::data(format!(
                "training data for fold {f} lacks a treatment arm; re-seed or supply more data"
            )));
        }
        if comp.len() == n {
            return Err(Error::data(format!("fold {f} is empty; re-seed or supply more data")));
        }
        training.push(FoldTraining {
            mu1_rows,
            mu0_rows,
            p_rows: comp,
            min_leaf: [0; 3],
        });
    }

    let per_fold = training
        .par_iter()
        .enumerate()
        .map(|(f, t)| {
            let held: Vec<usize> = (0..n).filter(|&i| fold_id[i] == f).collect();
            let seed = |k: u64| derive_seed(cfg.seed, 0x6e75_6973_0000 + 3 * f as u64 + k);
            let mu1 = fit_predict(&x, &y, &t.mu1_rows, &held, &cfg.learner, seed(0), TrainingTarget::Mu1)?;
            let mu0 = fit_predict(&x, &y, &t.mu0_rows, &held, &cfg.learner, seed(1), TrainingTarget::Mu0)?;
            let p = fit_predict(&x, &dv, &t.p_rows, &held, &cfg.learner, seed(2), TrainingTarget::Propensity)?;
            Ok((held, mu1, mu0, p))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mu1_hat = vec![f64::NAN; n];
    let mut mu0_hat = vec![f64::NAN; n];
    let mut p_hat_raw = vec![f64::NAN; n];
    let mut warnings = Vec::new();
    for (f, (held, mu1, mu0, p)) in per_fold.into_iter().enumerate() {
        for (k, &i) in held.iter().enumerate() {
            mu1_hat[i] = mu1.0[k];
            mu0_hat[i] = mu0.0[k];
            p_hat_raw[i] = p.0[k];
        }
        training[f].min_leaf = [mu1.1, mu0.1, p.1];
        for w in mu1.2.into_iter().chain(mu0.2).chain(p.2) {
            warnings.push(format!("fold {f}: {w}"));
        }
    }
    let mut trim_log = TrimLog::default();
    let p_hat = p_hat_raw
        .iter()
        .map(|&p| {
            if p < cfg.trim.low {
                trim_log.clipped_low += 1;
                cfg.trim.low
            } else if p > cfg.trim.high {
                trim_log.clipped_high += 1;
                cfg.trim.high
            } else {
                p
            }
        })
        .collect();
    if trim_log.total() > 0 {
        warnings.push(format!(
            "propensity clipped: {} below {}, {} above {}",
            trim_log.clipped_low, cfg.trim.low, trim_log.clipped_high, cfg.trim.high
        ));
    }
    Ok(NuisanceFit {
        mu1_hat,
        mu0_hat,
        p_hat,
        p_hat_raw,
        fold_id,
        treatment: d,
        trim: cfg.trim,
        trim_log,
        training,
        warnings,
    })
}

/// Verifies that no row's nuisance predictions came from a model whose
/// training set contains that row.
pub fn audit_crossfit(fit: &NuisanceFit) -> Result<()> {
    for (f, t) in fit.training.iter().enumerate() {
        for rows in [&t.mu1_rows, &t.mu0_rows, &t.p_rows] {
            if let Some(&i) = rows.iter().find(|&&i| fit.fold_id[i] == f) {
                return Err(Error::numeric(format!(
                    "row {i} (fold {f}) is in the training set of its own predictors"
                )));
            }
        }
    }
    Ok(())
}

/// Verifies that every cluster id sits in exactly one fold.
pub fn audit_cluster_folds(fold_id: &[usize], clusters: &[u64]) -> Result<()> {
    let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
    for (&f, &c) in fold_id.iter().zip(clusters) {
        if let Some(&prev) = seen.get(&c) {
            if prev != f {
                return Err(Error::numeric(format!("cluster {c} straddles folds {prev} and {f}")));
            }
        } else {
            seen.insert(c, f);
        }
    }
    Ok(())
}

/// Per-observation AIPW score
/// `μ₁ − μ₀ + D(Y − μ₁)/p − (1 − D)(Y − μ₀)/(1 − p)`.
#[inline]
pub fn aipw_score(y: f64, d: f64, mu1: f64, mu0: f64, p: f64) -> f64 {
    mu1 - mu0 + d * (y - mu1) / p - (1.0 - d) * (y - mu0) / (1.0 - p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub y_star: Vec<f64>,
    /// SHA-256 of the dataset content and nuisance predictions.
    pub provenance: String,
}

impl ScoreVector {
    pub fn from_values(y_star: Vec<f64>) -> Result<Self> {
        if let Some(i) = y_star.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite score at row {i}")));
        }
        let mut h = Sha256::new();
        for v in &y_star {
            h.update(v.to_bits().to_le_bytes());
        }
        Ok(ScoreVector {
            y_star,
            provenance: hex::encode(h.finalize()),
        })
    }

    pub fn n(&self) -> usize {
        self.y_star.len()
    }
}

pub fn orthogonal_scores(data: &Dataset, nuisance: &NuisanceFit) -> Result<ScoreVector> {
    let n = data.n();
    for len in [nuisance.mu1_hat.len(), nuisance.mu0_hat.len(), nuisance.p_hat.len()] {
        if len != n {
            return Err(Error::Dimension { expected: n, got: len });
        }
    }
    let y = data.y();
    let d = data.d();
    let mut y_star = Vec::with_capacity(n);
    for i in 0..n {
        let p = nuisance.p_hat[i];
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::numeric(format!("propensity {p} at row {i} outside (0, 1)")));
        }
        let s = aipw_score(y[i], f64::from(d[i]), nuisance.mu1_hat[i], nuisance.mu0_hat[i], p);
        if !s.is_finite() {
            return Err(Error::numeric(format!("non-finite score at row {i}")));
        }
        y_star.push(s);
    }
    let mut h = Sha256::new();
    h.update(data.content_hash().as_bytes());
    for v in nuisance.mu1_hat.iter().chain(&nuisance.mu0_hat).chain(&nuisance.p_hat) {
        h.update(v.to_bits().to_le_bytes());
    }
    Ok(ScoreVector {
        y_star,
        provenance: hex::encode(h.finalize()),
    })
}

/// Mean score with `sd / sqrt(n)` standard error.
pub fn ate(scores: &ScoreVector, level: f64) -> Result<EffectEstimate> {
    check_level(level)?;
    let n = scores.n();
    if n < 2 {
        return Err(Error::data("ATE needs at least 2 scores"));
    }
    let m = mean(&scores.y_star);
    let se = sample_sd(&scores.y_star) / (n as f64).sqrt();
    Ok(EffectEstimate::from_estimate(m, se, level, n))
}

/// Mean score with a cluster-robust (CR1) standard error.
pub fn ate_clustered(scores: &ScoreVector, clusters: &[u64], level: f64) -> Result<EffectEstimate> {
    check_level(level)?;
    let n = scores.n();
    if n < 2 {
        return Err(Error::data("ATE needs at least 2 scores"));
    }
    if clusters.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: clusters.len(),
        });
    }
    let m = mean(&scores.y_star);
    let mut sums: BTreeMap<u64, f64> = BTreeMap::new();
    for (v, c) in scores.y_star.iter().zip(clusters) {
        *sums.entry(*c).or_default() += v - m;
    }
    let g = sums.len();
    if g < 2 {
        return Err(Error::data("cluster-robust inference needs at least 2 clusters"));
    }
    let meat: f64 = sums.values().map(|s| s * s).sum();
    let var = g as f64 / (g as f64 - 1.0) * meat / (n as f64 * n as f64);
    Ok(EffectEstimate::from_estimate(m, var.sqrt(), level, n))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportReport {
    pub bin_edges: Vec<f64>,
    pub treated_counts: Vec<usize>,
    pub control_counts: Vec<usize>,
    pub treated_range: (f64, f64),
    pub control_range: (f64, f64),
    /// Share of raw propensities outside the trim bounds.
    pub share_outside_trim: f64,
    /// Bins holding at least 1% of one arm and none of the other.
    pub flagged_bins: Vec<usize>,
}

impl SupportReport {
    pub fn support_concern(&self) -> bool {
        !self.flagged_bins.is_empty()
    }

    /// `bin_low,bin_high,treated,control`
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,treated,control\n");
        for b in 0..self.treated_counts.len() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                self.bin_edges[b],
                self.bin_edges[b + 1],
                self.treated_counts[b],
                self.control_counts[b]
            );
        }
        s
    }
}

/// Histogram of the raw propensity by arm over `bins` equal-width bins.
pub fn common_support(nuisance: &NuisanceFit, bins: usize) -> Result<SupportReport> {
    if bins == 0 {
        return Err(Error::config("need at least one histogram bin"));
    }
    let mut treated = vec![0usize; bins];
    let mut control = vec![0usize; bins];
    let mut tr = (f64::INFINITY, f64::NEG_INFINITY);
    let mut cr = (f64::INFINITY, f64::NEG_INFINITY);
    let mut outside = 0usize;
    for (&p, &d) in nuisance.p_hat_raw.iter().zip(&nuisance.treatment) {
        let b = ((p * bins as f64).floor() as usize).min(bins - 1);
        let (counts, range) = if d == 1 {
            (&mut treated, &mut tr)
        } else {
            (&mut control, &mut cr)
        };
        counts[b] += 1;
        range.0 = range.0.min(p);
        range.1 = range.1.max(p);
        if p < nuisance.trim.low || p > nuisance.trim.high {
            outside += 1;
        }
    }
    let n1: usize = treated.iter().sum();
    let n0: usize = control.iter().sum();
    let flagged_bins = (0..bins)
        .filter(|&b| {
            let share1 = treated[b] as f64 / n1.max(1) as f64;
            let share0 = control[b] as f64 / n0.max(1) as f64;
            (share1 >= 0.01 && control[b] == 0) || (share0 >= 0.01 && treated[b] == 0)
        })
        .collect();
    Ok(SupportReport {
        bin_edges: (0..=bins).map(|b| b as f64 / bins as f64).collect(),
        treated_counts: treated,
        control_counts: control,
        treated_range: tr,
        control_range: cr,
        share_outside_trim: outside as f64 / nuisance.n().max(1) as f64,
        flagged_bins,
    })
}

/// One line of the scores file `row,fold,mu0,mu1,p,y_star`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub row: usize,
    pub fold: usize,
    pub mu0: f64,
    pub mu1: f64,
    pub p: f64,
    pub y_star: f64,
}

pub fn scores_csv(nuisance: &NuisanceFit, scores: &ScoreVector) -> String {
    let mut s = String::from("row,fold,mu0,mu1,p,y_star\n");
    for i in 0..scores.n() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{}",
            nuisance.fold_id[i], nuisance.mu0_hat[i], nuisance.mu1_hat[i], nuisance.p_hat[i], scores.y_star[i]
        );
    }
    s
}

/// Reads a scores file; rows must be numbered 0..n in order.
pub fn read_scores_csv<R: std::io::Read>(input: R) -> Result<Vec<ScoreRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let records: Vec<ScoreRecord> = rdr
        .deserialize()
        .map(|r| r.map_err(|e| Error::data(format!("scores file: {e}"))))
        .collect::<Result<_>>()?;
    for (i, r) in records.iter().enumerate() {
        if r.row != i {
            return Err(Error::Row {
                row: i + 1,
                message: format!("scores file out of order: expected row {i}, found {}", r.row),
            });
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contest::{simulate, PiModel, SimConfig};

    #[test]
    fn score_hand_examples() {
        assert!((aipw_score(1.0, 1.0, 0.6, 0.4, 0.5) - 1.0).abs() < 1e-15);
        assert!((aipw_score(0.0, 0.0, 0.6, 0.4, 0.5) - 1.0).abs() < 1e-15);
        assert_eq!(aipw_score(0.3, 1.0, 0.3, 0.3, 0.4), 0.0);
        assert_eq!(aipw_score(0.3, 0.0, 0.3, 0.3, 0.4), 0.0);
    }

    #[test]
    fn constant_scores_have_zero_se() {
        let s = ScoreVector::from_values(vec![0.25; 10]).unwrap();
        let e = ate(&s, 0.9).unwrap();
        assert_eq!(e.estimate, 0.25);
        assert_eq!(e.std_error, 0.0);
        assert!(ate(&ScoreVector::from_values(vec![1.0]).unwrap(), 0.9).is_err());
        assert!(ScoreVector::from_values(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn clustered_se_with_singletons_matches_plain_up_to_factor() {
        let v: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 / 7.0).collect();
        let s = ScoreVector::from_values(v).unwrap();
        let plain = ate(&s, 0.9).unwrap();
        let ids: Vec<u64> = (0..50).collect();
        let cl = ate_clustered(&s, &ids, 0.9).unwrap();
        assert!((cl.std_error - plain.std_error).abs() < 1e-14);
        assert!(ate_clustered(&s, &[1; 50], 0.9).is_err());
    }

    #[test]
    fn cluster_folds_partition_clusters() {
        let clusters: Vec<u64> = (0..300).map(|i| (i * 7 % 41) as u64).collect();
        let folds = assign_folds(300, 3, Some(&clusters), 5).unwrap();
        audit_cluster_folds(&folds, &clusters).unwrap();
        let folds = assign_folds(300, 2, None, 5).unwrap();
        assert_eq!(folds.iter().filter(|&&f| f == 0).count(), 150);
        assert!(audit_cluster_folds(&folds, &clusters).is_err());
        assert!(assign_folds(3, 1, None, 1).is_err());
    }

    fn small_learner() -> LearnerConfig {
        LearnerConfig {
            forest: ForestParams {
                n_trees: 30,
                subsample_fraction: 0.5,
                features_per_split: 3,
                min_leaf: 10,
                seed: 0,
            },
            tuning: None,
        }
    }

    #[test]
    fn crossfit_audit_and_trim_accounting() {
        let sim = simulate(&SimConfig::darts_like(1500, 4)).unwrap();
        let mut cfg = CrossFitConfig::new(small_learner(), 8);
        cfg.trim = TrimBounds { low: 0.2, high: 0.8 };
        let fit = crossfit_nuisances(&sim.dataset, &cfg).unwrap();
        audit_crossfit(&fit).unwrap();
        let clipped = fit.p_hat_raw.iter().filter(|&&p| !(0.2..=0.8).contains(&p)).count();
        assert_eq!(clipped, fit.trim_log.total());
        assert!(fit.trim_log.total() > 0);
        assert!(fit.p_hat.iter().all(|&p| (0.2..=0.8).contains(&p)));

        let mut broken = fit.clone();
        broken.training[0].p_rows.push(
            broken.fold_id.iter().position(|&f| f == 0).unwrap(),
        );
        assert!(audit_crossfit(&broken).is_err());
    }

    #[test]
    fn cluster_crossfit_keeps_players_together() {
        let sim = simulate(&SimConfig::darts_like(1200, 6)).unwrap();
        let mut cfg = CrossFitConfig::new(small_learner(), 2);
        cfg.cluster_folds = true;
        let fit = crossfit_nuisances(&sim.dataset, &cfg).unwrap();
        audit_crossfit(&fit).unwrap();
        audit_cluster_folds(&fit.fold_id, &sim.dataset.cluster_ids()).unwrap();
    }

    #[test]
    fn fold_relabeling_leaves_scores_unchanged() {
        let sim = simulate(&SimConfig::darts_like(600, 1)).unwrap();
        let fit = crossfit_nuisances(&sim.dataset, &CrossFitConfig::new(small_learner(), 3)).unwrap();
        let s = orthogonal_scores(&sim.dataset, &fit).unwrap();
        let mut relabeled = fit.clone();
        for f in &mut relabeled.fold_id {
            *f = 1 - *f;
        }
        relabeled.training.reverse();
        let s2 = orthogonal_scores(&sim.dataset, &relabeled).unwrap();
        assert_eq!(s.y_star, s2.y_star);
        audit_crossfit(&relabeled).unwrap();
    }

    #[test]
    fn scores_csv_roundtrip_is_exact() {
        let sim = simulate(&SimConfig::darts_like(300, 2)).unwrap();
        let fit = crossfit_nuisances(&sim.dataset, &CrossFitConfig::new(small_learner(), 3)).unwrap();
        let s = orthogonal_scores(&sim.dataset, &fit).unwrap();
        let text = scores_csv(&fit, &s);
        let back = read_scores_csv(text.as_bytes()).unwrap();
        let ys: Vec<f64> = back.iter().map(|r| r.y_star).collect();
        assert_eq!(ys, s.y_star);
        assert_eq!(back[5].fold, fit.fold_id[5]);
    }

    #[test]
    fn randomized_treatment_propensity_near_half() {
        let mut c = SimConfig::darts_like(5000, 12);
        c.pi = PiModel::randomized();
        let sim = simulate(&c).unwrap();
        let fit = crossfit_nuisances(&sim.dataset, &CrossFitConfig::new(small_learner(), 1)).unwrap();
        let m = mean(&fit.p_hat);
        assert!((m - 0.5).abs() < 0.03, "{m}");
    }

    #[test]
    fn support_flags() {
        let make = |p: Vec<f64>, d: Vec<u8>| NuisanceFit {
            mu1_hat: vec![0.0; p.len()],
            mu0_hat: vec![0.0; p.len()],
            p_hat: p.clone(),
            p_hat_raw: p,
            fold_id: vec![0; d.len()],
            treatment: d,
            trim: TrimBounds::default(),
            trim_log: TrimLog::default(),
            training: vec![],
            warnings: vec![],
        };
        let same = make(vec![0.4, 0.6, 0.4, 0.6], vec![1, 1, 0, 0]);
        assert!(!common_support(&same, 10).unwrap().support_concern());
        let apart = make(vec![0.9, 0.91, 0.05, 0.06], vec![1, 1, 0, 0]);
        let r = common_support(&apart, 10).unwrap();
        assert!(r.support_concern());
        assert_eq!(r.treated_range, (0.9, 0.91));
        assert!(r.histogram_csv().starts_with("bin_low,bin_high,treated,control\n0,0.1,0,2"));
    }
}
