//! Sorted individualized effects with weighted-bootstrap uniform bands, and
//! classification analysis (CLAN) comparing characteristics of the most
//! and least affected observations.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats::{argsort, check_level, derive_seed, stream_rng, weighted_quantile_sorted};

const SORTED_TAG: u64 = 0x736f_7274;
const CLAN_TAG: u64 = 0x636c_616e;

/// Replicate IATE procedure: receives observation weights (all ones for the
/// main estimate) and returns one effect per observation.
pub type IateFn<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub level: f64,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(seed: u64) -> Self {
        BootstrapConfig {
            replications: 999,
            level: 0.90,
            seed,
        }
    }

    fn validate(&self, min_replications: usize) -> Result<()> {
        if self.replications < min_replications {
            return Err(Error::config(format!(
                "at least {min_replications} bootstrap replications required, got {}",
                self.replications
            )));
        }
        check_level(self.level)
    }
}

/// Standard-exponential observation weights for replicate `b`.
pub fn bootstrap_weights(n: usize, seed: u64, b: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, b as u64);
    (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect()
}

/// The 99-point grid 0.01, …, 0.99.
pub fn quantile_levels() -> Vec<f64> {
    (1..100).map(|k| k as f64 / 100.0).collect()
}

fn weighted_curve(iates: &[f64], weights: &[f64], u: &[f64]) -> Vec<f64> {
    let order = argsort(iates);
    u.iter()
        .map(|&q| weighted_quantile_sorted(iates, weights, &order, q))
        .collect()
}

fn check_finite(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: v.len(),
        });
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::numeric(format!("non-finite IATE at row {i} in {what}")));
    }
    Ok(())
}

/// `level`-quantile (type 1) of a non-empty sample.
fn upper_quantile(mut v: Vec<f64>, level: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = ((level * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SortedCurve {
    pub u: Vec<f64>,
    /// Bias-corrected and rearranged to be non-decreasing.
    pub theta: Vec<f64>,
    /// Sorted IATEs of the full-sample estimate, before correction.
    pub estimate: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Sup-t critical value of the uniform band.
    pub critical_value: f64,
    pub replications: usize,
    pub level: f64,
}

impl SortedCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("u,theta,lo,hi\n");
        for k in 0..self.u.len() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                self.u[k], self.theta[k], self.ci_low[k], self.ci_high[k]
            );
        }
        s
    }
}

/// Sorted effects curve over [`quantile_levels`] from `replications`
/// weighted-bootstrap re-estimates of the IATEs.
pub fn sorted_effects(iate_fn: &IateFn<'_>, n: usize, cfg: &BootstrapConfig) -> Result<SortedCurve> {
    cfg.validate(100)?;
    if n == 0 {
        return Err(Error::data("no observations"));
    }
    let u = quantile_levels();
    let ones = vec![1.0; n];
    let main_iates = iate_fn(&ones)?;
    check_finite(&main_iates, n, "full-sample estimate")?;
    let main = weighted_curve(&main_iates, &ones, &u);
    let seed = derive_seed(cfg.seed, SORTED_TAG);
    let replicates: Vec<Vec<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|b| {
            let w = bootstrap_weights(n, seed, b);
            let iates = iate_fn(&w)?;
            check_finite(&iates, n, &format!("bootstrap replicate {b}"))?;
            Ok(weighted_curve(&iates, &w, &u))
        })
        .collect::<Result<_>>()?;
    let nb = cfg.replications as f64;
    let g = u.len();
    let mut corrected = vec![0.0; g];
    let mut se = vec![0.0; g];
    for k in 0..g {
        let dev: Vec<f64> = replicates.iter().map(|r| r[k] - main[k]).collect();
        let mean_dev = dev.iter().sum::<f64>() / nb;
        // 2·main − mean(replicates), written so zero dispersion is exact
        corrected[k] = main[k] - mean_dev;
        se[k] = (dev.iter().map(|d| (d - mean_dev).powi(2)).sum::<f64>() / (nb - 1.0)).sqrt();
    }
    let sup_t: Vec<f64> = replicates
        .iter()
        .map(|r| {
            (0..g)
                .filter(|&k| se[k] > 0.0)
                .map(|k| (r[k] - main[k]).abs() / se[k])
                .fold(0.0, f64::max)
        })
        .collect();
    let crit = upper_quantile(sup_t, cfg.level);
    let mut theta = corrected.clone();
    let mut lo: Vec<f64> = (0..g).map(|k| corrected[k] - crit * se[k]).collect();
    let mut hi: Vec<f64> = (0..g).map(|k| corrected[k] + crit * se[k]).collect();
    // monotone rearrangement of the curve and of each band edge
    theta.sort_by(f64::total_cmp);
    lo.sort_by(f64::total_cmp);
    hi.sort_by(f64::total_cmp);
    Ok(SortedCurve {
        u,
        theta,
        estimate: main,
        ci_low: lo,
        ci_high: hi,
        critical_value: crit,
        replications: cfg.replications,
        level: cfg.level,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClanRow {
    pub characteristic: String,
    /// Mean among the most affected minus mean among the least affected.
    pub estimate: f64,
    pub bias_corrected: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub joint_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClanTable {
    pub rows: Vec<ClanRow>,
    pub q: f64,
    pub group_size: usize,
    pub replications: usize,
    pub full_reestimation: bool,
}

impl ClanTable {
    pub fn row(&self, name: &str) -> Option<&ClanRow> {
        self.rows.iter().find(|r| r.characteristic == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("characteristic,estimate,bias_corrected,se,joint_p_value,p_value\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.characteristic, r.estimate, r.bias_corrected, r.std_error, r.joint_p_value, r.p_value
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClanConfig {
    /// Share of observations in each extreme group.
    pub q: f64,
    pub bootstrap: BootstrapConfig,
}

impl ClanConfig {
    pub fn new(seed: u64) -> Self {
        ClanConfig {
            q: 0.10,
            bootstrap: BootstrapConfig::new(seed),
        }
    }
}

/// Membership masks (least, most) of the extreme groups. Sorting is by IATE
/// with ties in row order; each group takes rows from its end while the
/// cumulative weight stays within `q` of the total, and at least one row.
fn extreme_groups(iates: &[f64], weights: &[f64], q: f64) -> (Vec<bool>, Vec<bool>) {
    let n = iates.len();
    let order = argsort(iates);
    let cap = q * weights.iter().sum::<f64>();
    let take = |it: &mut dyn Iterator<Item = usize>| {
        let mut mask = vec![false; n];
        let mut cum = 0.0;
        for i in it {
            cum += weights[i];
            if cum > cap && mask.iter().any(|m| *m) {
                break;
            }
            mask[i] = true;
        }
        mask
    };
    let least = take(&mut order.iter().copied());
    // mirror image of the ascending pass so negating IATEs swaps the groups
    let desc = argsort(&iates.iter().map(|v| -v).collect::<Vec<_>>());
    let most = take(&mut desc.iter().copied());
    (least, most)
}

fn fixed_size_groups(iates: &[f64], size: usize) -> (Vec<bool>, Vec<bool>) {
    let n = iates.len();
    let mut least = vec![false; n];
    let mut most = vec![false; n];
    for &i in argsort(iates).iter().take(size) {
        least[i] = true;
    }
    let neg: Vec<f64> = iates.iter().map(|v| -v).collect();
    for &i in argsort(&neg).iter().take(size) {
        most[i] = true;
    }
    (least, most)
}

fn group_differences(x: &Matrix, weights: &[f64], least: &[bool], most: &[bool]) -> Vec<f64> {
    (0..x.n_cols())
        .map(|j| {
            let c = x.column(j);
            let (mut wl, mut sl, mut wm, mut sm) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..c.len() {
                if least[i] {
                    wl += weights[i];
                    sl += weights[i] * c[i];
                }
                if most[i] {
                    wm += weights[i];
                    sm += weights[i] * c[i];
                }
            }
            sm / wm - sl / wl
        })
        .collect()
}

fn check_clan(n: usize, x: &Matrix, names: &[String], cfg: &ClanConfig) -> Result<usize> {
    cfg.bootstrap.validate(2)?;
    if x.n_cols() == 0 {
        return Err(Error::config("CLAN needs at least one characteristic"));
    }
    if names.len() != x.n_cols() {
        return Err(Error::Dimension {
            expected: x.n_cols(),
            got: names.len(),
        });
    }
    if x.n_rows() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x.n_rows(),
        });
    }
    if !(cfg.q > 0.0 && cfg.q <= 0.5) {
        return Err(Error::config("CLAN quantile cut must lie in (0, 0.5]"));
    }
    let size = (cfg.q * n as f64).floor() as usize;
    if size < 2 {
        return Err(Error::data(format!(
            "extreme groups would hold {size} observations; need at least 2"
        )));
    }
    Ok(size)
}

fn clan_inner(
    iates: &[f64],
    x: &Matrix,
    names: &[String],
    cfg: &ClanConfig,
    size: usize,
    replicate_iates: Option<&IateFn<'_>>,
) -> Result<ClanTable> {
    let n = iates.len();
    let k = x.n_cols();
    let ones = vec![1.0; n];
    let (least, most) = fixed_size_groups(iates, size);
    let est = group_differences(x, &ones, &least, &most);
    let seed = derive_seed(cfg.bootstrap.seed, CLAN_TAG);
    let draws: Vec<Vec<f64>> = (0..cfg.bootstrap.replications)
        .into_par_iter()
        .map(|b| {
            let w = bootstrap_weights(n, seed, b);
            let (l, m) = match replicate_iates {
                Some(f) => {
                    let v = f(&w)?;
                    check_finite(&v, n, &format!("bootstrap replicate {b}"))?;
                    extreme_groups(&v, &w, cfg.q)
                }
                None => extreme_groups(iates, &w, cfg.q),
            };
            Ok(group_differences(x, &w, &l, &m))
        })
        .collect::<Result<_>>()?;
    let nb = draws.len() as f64;
    let degenerate: Vec<bool> = (0..k)
        .map(|j| {
            let c = x.column(j);
            c.iter().all(|v| *v == c[0])
        })
        .collect();
    let mut bias_corrected = vec![0.0; k];
    let mut se = vec![0.0; k];
    for j in 0..k {
        let dev: Vec<f64> = draws.iter().map(|d| d[j] - est[j]).collect();
        let mean_dev = dev.iter().sum::<f64>() / nb;
        bias_corrected[j] = est[j] - mean_dev;
        se[j] = (dev.iter().map(|d| (d - mean_dev).powi(2)).sum::<f64>() / (nb - 1.0)).sqrt();
    }
    let active: Vec<usize> = (0..k).filter(|&j| !degenerate[j] && se[j] > 0.0).collect();
    let max_t: Vec<f64> = draws
        .iter()
        .map(|d| {
            active
                .iter()
                .map(|&j| (d[j] - est[j]).abs() / se[j])
                .fold(0.0, f64::max)
        })
        .collect();
    let rows = (0..k)
        .map(|j| {
            let (p, joint) = if degenerate[j] {
                (1.0, 1.0)
            } else if se[j] == 0.0 {
                let p = if est[j] == 0.0 { 1.0 } else { 0.0 };
                (p, p)
            } else {
                let t = est[j].abs() / se[j];
                let p = draws
                    .iter()
                    .filter(|d| (d[j] - est[j]).abs() / se[j] >= t)
                    .count() as f64
                    / nb;
                let joint = max_t.iter().filter(|m| **m >= t).count() as f64 / nb;
                (p, joint)
            };
            ClanRow {
                characteristic: names[j].clone(),
                estimate: est[j],
                bias_corrected: bias_corrected[j],
                std_error: se[j],
                p_value: p,
                joint_p_value: joint,
            }
        })
        .collect();
    Ok(ClanTable {
        rows,
        q: cfg.q,
        group_size: size,
        replications: cfg.bootstrap.replications,
        full_reestimation: replicate_iates.is_some(),
    })
}

/// CLAN with the IATEs held fixed across bootstrap replicates; only group
/// assignment and group means are re-weighted.
pub fn clan(iates: &[f64], x: &Matrix, names: &[String], cfg: &ClanConfig) -> Result<ClanTable> {
    let size = check_clan(iates.len(), x, names, cfg)?;
    check_finite(iates, iates.len(), "IATE input")?;
    clan_inner(iates, x, names, cfg, size, None)
}

/// CLAN re-estimating the IATEs in every replicate with its bootstrap
/// weights.
pub fn clan_full(
    iate_fn: &IateFn<'_>,
    x: &Matrix,
    names: &[String],
    cfg: &ClanConfig,
) -> Result<ClanTable> {
    let n = x.n_rows();
    let size = check_clan(n, x, names, cfg)?;
    let iates = iate_fn(&vec![1.0; n])?;
    check_finite(&iates, n, "full-sample estimate")?;
    clan_inner(&iates, x, names, cfg, size, Some(iate_fn))
}
