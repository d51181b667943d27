//! Nadaraya–Watson regression of the orthogonal scores on one or two
//! heterogeneity variables, giving GATE curves with pointwise confidence
//! bands.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats::{check_level, normal_critical, sample_sd};

/// Grid points whose effective sample size falls below this are reported
/// as unavailable instead of extrapolated.
pub const MIN_EFFECTIVE_SAMPLE: f64 = 10.0;

/// Gaussian weights beyond this many bandwidths are below 1e-17 and are
/// skipped during bandwidth cross-validation.
const GAUSSIAN_CV_REACH: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Gaussian,
    Epanechnikov,
}

impl Kernel {
    /// Unnormalized profile; constants cancel in the weighted mean.
    #[inline]
    pub fn weight(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp(),
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    fn reach(self) -> f64 {
        match self {
            Kernel::Gaussian => GAUSSIAN_CV_REACH,
            Kernel::Epanechnikov => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSpec {
    pub kernel: Kernel,
    /// Bandwidth per heterogeneity dimension, before undersmoothing.
    pub bandwidth: Vec<f64>,
    /// Multiplier in (0, 1] applied once to `bandwidth`.
    pub undersmoothing: f64,
}

impl KernelSpec {
    pub fn new(kernel: Kernel, bandwidth: Vec<f64>, undersmoothing: f64) -> Result<Self> {
        let spec = KernelSpec {
            kernel,
            bandwidth,
            undersmoothing,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.bandwidth.is_empty() || self.bandwidth.len() > 2 {
            return Err(Error::config("kernel regression supports one or two dimensions"));
        }
        if self.bandwidth.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::config("bandwidths must be positive"));
        }
        if !(self.undersmoothing > 0.0 && self.undersmoothing <= 1.0) {
            return Err(Error::config("undersmoothing factor must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn used_bandwidth(&self) -> Vec<f64> {
        self.bandwidth.iter().map(|h| h * self.undersmoothing).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalEstimate {
    pub theta: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatePoint {
    pub z: Vec<f64>,
    /// `None` where the effective sample size is below the floor.
    pub estimate: Option<LocalEstimate>,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CateCurve {
    pub points: Vec<CatePoint>,
    pub bandwidth: Vec<f64>,
    pub level: f64,
}

impl CateCurve {
    pub fn thetas(&self) -> Vec<Option<f64>> {
        self.points
            .iter()
            .map(|p| p.estimate.map(|e| e.theta))
            .collect()
    }

    pub fn n_unavailable(&self) -> usize {
        self.points.iter().filter(|p| p.estimate.is_none()).count()
    }

    /// `z[,z2],theta,ci_low,ci_high,ess`; unavailable points have empty
    /// estimate fields.
    pub fn to_csv(&self) -> String {
        let dim = self.points.first().map_or(1, |p| p.z.len());
        let mut s = if dim == 1 {
            String::from("z,theta,ci_low,ci_high,ess\n")
        } else {
            String::from("z1,z2,theta,ci_low,ci_high,ess\n")
        };
        for p in &self.points {
            for z in &p.z {
                let _ = write!(s, "{z},");
            }
            match p.estimate {
                Some(e) => {
                    let _ = writeln!(s, "{},{},{},{}", e.theta, e.ci_low, e.ci_high, p.ess);
                }
                None => {
                    let _ = writeln!(s, ",,,{}", p.ess);
                }
            }
        }
        s
    }
}

fn check_inputs(scores: &[f64], z: &Matrix) -> Result<()> {
    if z.n_rows() != scores.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            got: z.n_rows(),
        });
    }
    if z.n_cols() == 0 || z.n_cols() > 2 {
        return Err(Error::config(format!(
            "heterogeneity dimension must be 1 or 2, got {}",
            z.n_cols()
        )));
    }
    if scores.len() < 2 {
        return Err(Error::data("kernel regression needs at least 2 observations"));
    }
    for j in 0..z.n_cols() {
        if sample_sd(z.column(j)) == 0.0 {
            return Err(Error::data(format!("heterogeneity variable {j} has zero variance")));
        }
    }
    Ok(())
}

#[inline]
fn product_weight(kernel: Kernel, z: &Matrix, i: usize, at: &[f64], h: &[f64]) -> f64 {
    let mut w = 1.0;
    for (j, (a, hj)) in at.iter().zip(h).enumerate() {
        w *= kernel.weight((z.get(i, j) - a) / hj);
    }
    w
}

/// Nadaraya–Watson estimate and local inference at one point.
fn local_fit(
    scores: &[f64],
    z: &Matrix,
    kernel: Kernel,
    h: &[f64],
    at: &[f64],
    crit: f64,
) -> CatePoint {
    let mut sw = 0.0;
    let mut sw2 = 0.0;
    let mut swy = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let weights: Vec<f64> = (0..scores.len())
        .map(|i| product_weight(kernel, z, i, at, h))
        .collect();
    for (w, y) in weights.iter().zip(scores) {
        if *w > 0.0 {
            sw += w;
            sw2 += w * w;
            swy += w * y;
            lo = lo.min(*y);
            hi = hi.max(*y);
        }
    }
    let ess = if sw2 > 0.0 { sw * sw / sw2 } else { 0.0 };
    if sw <= 0.0 || ess < MIN_EFFECTIVE_SAMPLE {
        return CatePoint {
            z: at.to_vec(),
            estimate: None,
            ess,
        };
    }
    let theta = (swy / sw).clamp(lo, hi);
    let sigma2 = weights
        .iter()
        .zip(scores)
        .map(|(w, y)| w * (y - theta).powi(2))
        .sum::<f64>()
        / sw;
    let se = (sigma2 * sw2 / (sw * sw)).sqrt();
    CatePoint {
        z: at.to_vec(),
        estimate: Some(LocalEstimate {
            theta,
            std_error: se,
            ci_low: theta - crit * se,
            ci_high: theta + crit * se,
        }),
        ess,
    }
}

/// Evaluates the kernel regression of `scores` on `z` at each row of
/// `eval`, using the undersmoothed bandwidth of `spec`.
pub fn kernel_cate(
    scores: &[f64],
    z: &Matrix,
    spec: &KernelSpec,
    eval: &Matrix,
    level: f64,
) -> Result<CateCurve> {
    check_inputs(scores, z)?;
    spec.validate()?;
    check_level(level)?;
    if spec.bandwidth.len() != z.n_cols() || eval.n_cols() != z.n_cols() {
        return Err(Error::Dimension {
            expected: z.n_cols(),
            got: if spec.bandwidth.len() != z.n_cols() {
                spec.bandwidth.len()
            } else {
                eval.n_cols()
            },
        });
    }
    if z.n_cols() == 1 {
        let g = eval.column(0);
        if g.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("evaluation grid must be strictly increasing"));
        }
    }
    let h = spec.used_bandwidth();
    let crit = normal_critical(level);
    let points = (0..eval.n_rows())
        .into_par_iter()
        .map(|g| local_fit(scores, z, spec.kernel, &h, &eval.row(g), crit))
        .collect();
    Ok(CateCurve {
        points,
        bandwidth: h,
        level,
    })
}

/// k-fold out-of-fold squared error of the kernel regression for one
/// bandwidth. Rows are assigned to folds by `row % k`.
pub fn cv_error(scores: &[f64], z: &Matrix, kernel: Kernel, h: &[f64], k_folds: usize) -> f64 {
    let n = scores.len();
    // sort by the first dimension so each point only scans its window
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z.get(a, 0).total_cmp(&z.get(b, 0)));
    let first: Vec<f64> = order.iter().map(|&i| z.get(i, 0)).collect();
    let reach = kernel.reach() * h[0];
    let fold_mean: Vec<f64> = (0..k_folds)
        .map(|f| {
            let v: Vec<f64> = (0..n).filter(|i| i % k_folds != f).map(|i| scores[i]).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        })
        .collect();
    let sse: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let fi = i % k_folds;
            let zi = z.row(i);
            let start = first.partition_point(|v| *v < zi[0] - reach);
            let end = first.partition_point(|v| *v <= zi[0] + reach);
            let (mut sw, mut swy) = (0.0, 0.0);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &j in &order[start..end] {
                if j % k_folds == fi {
                    continue;
                }
                let w = product_weight(kernel, z, j, &zi, h);
                if w > 0.0 {
                    sw += w;
                    swy += w * scores[j];
                    lo = lo.min(scores[j]);
                    hi = hi.max(scores[j]);
                }
            }
            let pred = if sw > 0.0 {
                (swy / sw).clamp(lo, hi)
            } else {
                fold_mean[fi]
            };
            (scores[i] - pred).powi(2)
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    sse / n as f64
}

/// Bandwidth (per dimension) with the smallest k-fold CV error; ties go to
/// the smaller bandwidth.
pub fn cv_bandwidth(
    scores: &[f64],
    z: &Matrix,
    kernel: Kernel,
    grid: &[Vec<f64>],
    k_folds: usize,
) -> Result<Vec<f64>> {
    check_inputs(scores, z)?;
    if grid.is_empty() {
        return Err(Error::config("empty bandwidth grid"));
    }
    if k_folds < 2 || k_folds > scores.len() {
        return Err(Error::config(format!("invalid number of CV folds {k_folds}")));
    }
    for h in grid {
        if h.len() != z.n_cols() || h.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config("bandwidth grid entries must be positive, one per dimension"));
        }
    }
    if grid.len() == 1 {
        return Ok(grid[0].clone());
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| {
        grid[a]
            .iter()
            .zip(&grid[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut best: Option<(f64, usize)> = None;
    for g in order {
        let err = cv_error(scores, z, kernel, &grid[g], k_folds);
        if best.is_none_or(|(b, _)| err < b) {
            best = Some((err, g));
        }
    }
    Ok(grid[best.expect("non-empty grid").1].clone())
}

/// Candidate bandwidths `factor · 1.06 · sd_j · n^(-1/5)` per dimension.
pub fn bandwidth_grid(z: &Matrix, factors: &[f64]) -> Vec<Vec<f64>> {
    let n = z.n_rows() as f64;
    let base: Vec<f64> = (0..z.n_cols())
        .map(|j| 1.06 * sample_sd(z.column(j)) * n.powf(-0.2))
        .collect();
    factors
        .iter()
        .map(|f| base.iter().map(|b| b * f).collect())
        .collect()
}

/// Factors 1/4 … 4 on a geometric scale.
pub fn default_bandwidth_factors() -> Vec<f64> {
    (0..9).map(|k| 2f64.powf(-2.0 + 0.5 * k as f64)).collect()
}

/// `k` equally spaced points from `lo` to `hi`.
pub fn linear_grid(lo: f64, hi: f64, k: usize) -> Matrix {
    let pts = if k == 1 {
        vec![lo]
    } else {
        (0..k)
            .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect()
    };
    Matrix::from_columns(vec![pts]).expect("one column")
}

/// Grid between the `q`-th and `(1 - q)`-th sample quantiles of each
/// column; two dimensions give the `k x k` product grid.
pub fn quantile_grid(z: &Matrix, k: usize, q: f64) -> Matrix {
    let axes: Vec<Vec<f64>> = (0..z.n_cols())
        .map(|j| {
            let mut v = z.column(j).to_vec();
            v.sort_by(f64::total_cmp);
            let at = |u: f64| v[((u * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
            linear_grid(at(q), at(1.0 - q), k).column(0).to_vec()
        })
        .collect();
    if axes.len() == 1 {
        return Matrix::from_columns(axes).expect("one column");
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for x in &axes[0] {
        for y in &axes[1] {
            a.push(*x);
            b.push(*y);
        }
    }
    Matrix::from_columns(vec![a, b]).expect("two columns")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthChoice {
    pub kernel: Kernel,
    pub grid: Vec<Vec<f64>>,
    pub k_folds: usize,
    pub undersmoothing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCurves {
    /// Curve for `group == 0`.
    pub group0: CateCurve,
    /// Curve for `group == 1`.
    pub group1: CateCurve,
    /// Grid points where at least one group has no estimate.
    pub truncated: Vec<usize>,
}

/// Separate kernel GATE curves for the two groups of a binary variable,
/// each with its own cross-validated bandwidth, on a common grid.
pub fn gate_curve_by_group(
    scores: &[f64],
    z: &Matrix,
    group: &[u8],
    choice: &BandwidthChoice,
    eval: &Matrix,
    level: f64,
) -> Result<GroupCurves> {
    if group.len() != scores.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            got: group.len(),
        });
    }
    let curve_for = |g: u8| -> Result<CateCurve> {
        let rows: Vec<usize> = (0..group.len()).filter(|&i| group[i] == g).collect();
        if rows.len() < 2 {
            return Err(Error::data(format!(
                "group {g} has {} observations; no curve available",
                rows.len()
            )));
        }
        let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
        let zg = z.select_rows(&rows);
        let h = cv_bandwidth(&s, &zg, choice.kernel, &choice.grid, choice.k_folds)?;
        let spec = KernelSpec::new(choice.kernel, h, choice.undersmoothing)?;
        kernel_cate(&s, &zg, &spec, eval, level)
    };
    let group0 = curve_for(0)?;
    let group1 = curve_for(1)?;
    let truncated = (0..eval.n_rows())
        .filter(|&g| group0.points[g].estimate.is_none() || group1.points[g].estimate.is_none())
        .collect();
    Ok(GroupCurves {
        group0,
        group1,
        truncated,
    })
}
