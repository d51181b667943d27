//! Small numeric helpers shared by the estimators: moments, normal-reference
//! inference, weighted quantiles and reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased (n - 1) sample variance. Returns 0 for fewer than two values.
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn sample_sd(v: &[f64]) -> f64 {
    sample_variance(v).sqrt()
}

/// Two-sided p-value of `t` under the standard normal reference.
pub fn normal_two_sided_p(t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    erfc(t.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Critical value `z` with P(|N(0,1)| <= z) = level.
pub fn normal_critical(level: f64) -> f64 {
    let n = Normal::standard();
    n.inverse_cdf(0.5 + level / 2.0)
}

pub fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("confidence level {level} outside (0,1)")))
    }
}

/// Significance stars at the 1%/5%/10% levels.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// A scalar estimate with normal-reference inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub n: usize,
}

impl EffectEstimate {
    pub fn from_estimate(estimate: f64, std_error: f64, level: f64, n: usize) -> Self {
        let t_value = if std_error > 0.0 {
            estimate / std_error
        } else if estimate == 0.0 {
            0.0
        } else {
            estimate.signum() * f64::INFINITY
        };
        let p_value = normal_two_sided_p(t_value);
        let half = normal_critical(level) * std_error;
        EffectEstimate {
            estimate,
            std_error,
            t_value,
            p_value,
            ci_low: estimate - half,
            ci_high: estimate + half,
            level,
            n,
        }
    }
}

/// Weighted quantile with midpoint plotting positions.
///
/// Sorted value `k` sits at cumulative position `(S_k - w_k / 2) / S_n` and
/// the quantile is linearly interpolated between positions, clamped to the
/// extreme values outside them. With unit weights `u = 0.5` is the ordinary
/// sample median. `order` must sort `values` ascending.
pub fn weighted_quantile_sorted(values: &[f64], weights: &[f64], order: &[usize], u: f64) -> f64 {
    let total: f64 = order.iter().map(|&i| weights[i]).sum();
    let mut cum = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for &i in order {
        let w = weights[i];
        if w <= 0.0 {
            continue;
        }
        let pos = (cum + w / 2.0) / total;
        cum += w;
        let v = values[i];
        if pos >= u {
            return match prev {
                None => v,
                Some((p0, v0)) => {
                    if pos == p0 {
                        v
                    } else {
                        v0 + (v - v0) * (u - p0) / (pos - p0)
                    }
                }
            };
        }
        prev = Some((pos, v));
    }
    prev.map(|(_, v)| v).unwrap_or(f64::NAN)
}

/// Indices that sort `values` ascending, ties kept in row order.
pub fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// Mix a base seed with a tag into an independent 64-bit seed (splitmix64).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream `stream` of the generator family identified by `seed`.
/// Used wherever work is split by index so results do not depend on
/// scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
