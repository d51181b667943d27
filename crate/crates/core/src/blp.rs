//! Best linear predictor of the effect: OLS of the orthogonal scores on a
//! constant plus heterogeneity variables, with heteroscedasticity-robust
//! (HC1) or cluster-robust (CR1) covariance.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::dml::ScoreVector;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats::{stars, EffectEstimate};

pub const CONSTANT: &str = "constant";

/// Columns with R² above this against earlier columns count as collinear.
pub const COLLINEAR_R2: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeType {
    HeteroscedasticityRobust,
    ClusterRobust,
}

/// Regression design: a constant followed by named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Design {
    pub fn constant_only(n: usize) -> Self {
        Design {
            names: vec![CONSTANT.into()],
            columns: vec![vec![1.0; n]],
        }
    }

    /// Prepends the constant to `columns`.
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Dimension {
                expected: names.len(),
                got: columns.len(),
            });
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::data("design columns differ in length"));
        }
        if names.iter().any(|nm| nm == CONSTANT) {
            return Err(Error::data("`constant` is reserved for the intercept"));
        }
        let mut d = Design::constant_only(n);
        d.names.extend(names);
        d.columns.extend(columns);
        Ok(d)
    }

    pub fn from_dataset(data: &Dataset, names: &[&str]) -> Result<Self> {
        let cols = names
            .iter()
            .map(|n| data.column(n))
            .collect::<Result<Vec<_>>>()?;
        if cols.is_empty() {
            return Ok(Design::constant_only(data.n()));
        }
        Design::new(names.iter().map(|s| s.to_string()).collect(), cols)
    }

    pub fn n(&self) -> usize {
        self.columns[0].len()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Fitted values `X β`.
    pub fn predict(&self, beta: &[f64]) -> Result<Vec<f64>> {
        if beta.len() != self.width() {
            return Err(Error::Dimension {
                expected: self.width(),
                got: beta.len(),
            });
        }
        let mut out = vec![0.0; self.n()];
        for (c, b) in self.columns.iter().zip(beta) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += b * v;
            }
        }
        Ok(out)
    }

    /// Design restricted to the columns at `idx`, in that order.
    pub fn keep(&self, idx: &[usize]) -> Design {
        Design {
            names: idx.iter().map(|&j| self.names[j].clone()).collect(),
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
        }
    }
}

/// Indices of columns whose weighted R² against the columns kept before
/// them exceeds [`COLLINEAR_R2`] (modified Gram–Schmidt, left to right).
pub fn collinear_columns(design: &Design, weights: Option<&[f64]>) -> Vec<usize> {
    let n = design.n();
    let sw: Vec<f64> = match weights {
        Some(w) => w.iter().map(|v| v.sqrt()).collect(),
        None => vec![1.0; n],
    };
    let wsum: f64 = sw.iter().map(|s| s * s).sum();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut dropped = Vec::new();
    for (j, col) in design.columns.iter().enumerate() {
        let mut r: Vec<f64> = col.iter().zip(&sw).map(|(x, s)| x * s).collect();
        for q in &basis {
            let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= dot * qi;
            }
        }
        let rss: f64 = r.iter().map(|v| v * v).sum();
        let tss = if j == 0 {
            col.iter().zip(&sw).map(|(x, s)| (x * s).powi(2)).sum::<f64>()
        } else {
            let m = col.iter().zip(&sw).map(|(x, s)| x * s * s).sum::<f64>() / wsum;
            col.iter().zip(&sw).map(|(x, s)| ((x - m) * s).powi(2)).sum::<f64>()
        };
        if tss <= 0.0 || 1.0 - rss / tss > COLLINEAR_R2 {
            dropped.push(j);
            continue;
        }
        let norm = rss.sqrt();
        basis.push(r.into_iter().map(|v| v / norm).collect());
    }
    dropped
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlpFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Row-major q x q covariance.
    pub covariance: Vec<Vec<f64>>,
    pub se_type: SeType,
    pub n: usize,
    pub n_clusters: Option<usize>,
    /// Requested columns removed as collinear (table drivers only).
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term {
    pub name: String,
    #[serde(flatten)]
    pub estimate: EffectEstimate,
}

impl BlpFit {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.names.len())
            .map(|j| self.covariance[j][j].max(0.0).sqrt())
            .collect()
    }

    pub fn terms(&self, level: f64) -> Vec<Term> {
        self.names
            .iter()
            .zip(&self.coefficients)
            .zip(self.std_errors())
            .map(|((name, &b), se)| Term {
                name: name.clone(),
                estimate: EffectEstimate::from_estimate(b, se, level, self.n),
            })
            .collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.coefficients[j])
    }
}

struct Ols {
    beta: Vec<f64>,
    bread: DMatrix<f64>,
    residuals: Vec<f64>,
}

fn weighted_ols(y: &[f64], design: &Design, weights: Option<&[f64]>) -> Result<Ols> {
    let n = design.n();
    let q = design.width();
    if y.len() != n {
        return Err(Error::Dimension { expected: n, got: y.len() });
    }
    if n <= q {
        return Err(Error::data(format!("{n} observations cannot identify {q} coefficients")));
    }
    let sw: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::Dimension { expected: n, got: w.len() });
            }
            w.iter().map(|v| v.sqrt()).collect()
        }
        None => vec![1.0; n],
    };
    let a = DMatrix::from_fn(n, q, |i, j| design.columns[j][i] * sw[i]);
    let mut b = DVector::from_fn(n, |i, _| y[i] * sw[i]);
    let qr = a.qr();
    qr.q_tr_mul(&mut b);
    let r = qr.r();
    let rhs = b.rows(0, q).into_owned();
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::numeric("singular design in least squares"))?;
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(q, q))
        .ok_or_else(|| Error::numeric("singular design in least squares"))?;
    let bread = &rinv * rinv.transpose();
    let residuals = (0..n)
        .map(|i| y[i] - (0..q).map(|j| design.columns[j][i] * beta[j]).sum::<f64>())
        .collect();
    Ok(Ols {
        beta: beta.iter().copied().collect(),
        bread,
        residuals,
    })
}

/// OLS of `scores` on `design` with robust or clustered covariance.
/// Errors on rank deficiency, naming the collinear columns.
pub fn blp_fit(
    scores: &ScoreVector,
    design: &Design,
    se_type: SeType,
    clusters: Option<&[u64]>,
) -> Result<BlpFit> {
    let collinear = collinear_columns(design, None);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient {
            columns: collinear.iter().map(|&j| design.names[j].clone()).collect(),
        });
    }
    let y = &scores.y_star;
    let ols = weighted_ols(y, design, None)?;
    let n = design.n();
    let q = design.width();
    let row = |i: usize| DVector::from_fn(q, |j, _| design.columns[j][i]);
    let (meat, factor, n_clusters) = match se_type {
        SeType::HeteroscedasticityRobust => {
            let mut m = DMatrix::zeros(q, q);
            for i in 0..n {
                let x = row(i);
                m += (&x * x.transpose()) * ols.residuals[i].powi(2);
            }
            (m, n as f64 / (n - q) as f64, None)
        }
        SeType::ClusterRobust => {
            let c = clusters.ok_or_else(|| {
                Error::config("cluster-robust standard errors need cluster ids")
            })?;
            if c.len() != n {
                return Err(Error::Dimension { expected: n, got: c.len() });
            }
            let mut sums: BTreeMap<u64, DVector<f64>> = BTreeMap::new();
            for i in 0..n {
                let e = sums.entry(c[i]).or_insert_with(|| DVector::zeros(q));
                *e += row(i) * ols.residuals[i];
            }
            let g = sums.len();
            if g < 2 {
                return Err(Error::data("cluster-robust inference needs at least 2 clusters"));
            }
            let mut m = DMatrix::zeros(q, q);
            for u in sums.values() {
                m += u * u.transpose();
            }
            let factor = g as f64 / (g - 1) as f64 * (n - 1) as f64 / (n - q) as f64;
            (m, factor, Some(g))
        }
    };
    let v = &ols.bread * meat * &ols.bread * factor;
    let v = (&v + v.transpose()) * 0.5;
    Ok(BlpFit {
        names: design.names.clone(),
        coefficients: ols.beta,
        covariance: (0..q).map(|i| (0..q).map(|j| v[(i, j)]).collect()).collect(),
        se_type,
        n,
        n_clusters,
        dropped: vec![],
    })
}

/// Weighted least-squares coefficients only, for bootstrap replicates.
pub fn blp_coefficients_weighted(y: &[f64], design: &Design, weights: &[f64]) -> Result<Vec<f64>> {
    Ok(weighted_ols(y, design, Some(weights))?.beta)
}

/// Fitted effects `(1, z) β` for rows of the non-constant design columns.
pub fn blp_iates(fit: &BlpFit, z: &Matrix) -> Result<Vec<f64>> {
    let q = fit.coefficients.len();
    if z.n_cols() + 1 != q {
        return Err(Error::Dimension {
            expected: q - 1,
            got: z.n_cols(),
        });
    }
    Ok((0..z.n_rows())
        .map(|i| {
            fit.coefficients[0]
                + (1..q).map(|j| fit.coefficients[j] * z.get(i, j - 1)).sum::<f64>()
        })
        .collect())
}

/// One column of a GATE table: a label and the heterogeneity variables.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSpec {
    pub label: String,
    pub columns: Vec<String>,
}

/// Fits every spec in order; collinear columns are dropped and reported in
/// [`BlpFit::dropped`] rather than failing the table.
pub fn gate_table(
    scores: &ScoreVector,
    data: &Dataset,
    specs: &[GateSpec],
    se_type: SeType,
) -> Result<Vec<BlpFit>> {
    let clusters = data.cluster_ids();
    specs
        .par_iter()
        .map(|spec| {
            let names: Vec<&str> = spec.columns.iter().map(String::as_str).collect();
            let full = Design::from_dataset(data, &names)?;
            let drop = collinear_columns(&full, None);
            if drop.contains(&0) {
                return Err(Error::numeric("intercept column is degenerate"));
            }
            let keep: Vec<usize> = (0..full.width()).filter(|j| !drop.contains(j)).collect();
            let mut fit = blp_fit(scores, &full.keep(&keep), se_type, Some(&clusters))?;
            fit.dropped = drop.iter().map(|&j| full.names[j].clone()).collect();
            Ok(fit)
        })
        .collect()
}

/// `model,term,estimate,se,t,p,stars`, one line per coefficient.
pub fn gate_table_csv(labels: &[String], fits: &[BlpFit], level: f64) -> String {
    let mut s = String::from("model,term,estimate,se,t,p,stars\n");
    for (label, fit) in labels.iter().zip(fits) {
        for t in fit.terms(level) {
            let e = &t.estimate;
            let _ = writeln!(
                s,
                "{label},{},{},{},{},{},{}",
                t.name,
                e.estimate,
                e.std_error,
                e.t_value,
                e.p_value,
                stars(e.p_value)
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dml::ate;

    fn scores(v: Vec<f64>) -> ScoreVector {
        ScoreVector::from_values(v).unwrap()
    }

    fn wiggle(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect()
    }

    #[test]
    fn constant_only_reproduces_ate() {
        let s = scores(wiggle(200));
        let fit = blp_fit(&s, &Design::constant_only(200), SeType::HeteroscedasticityRobust, None).unwrap();
        let a = ate(&s, 0.9).unwrap();
        assert!((fit.coefficients[0] - a.estimate).abs() < 1e-12);
        assert!((fit.std_errors()[0] - a.std_error).abs() < 1e-12);
    }

    #[test]
    fn saturated_binary_design_gives_group_means() {
        let y = wiggle(300);
        let home: Vec<f64> = (0..300).map(|i| ((i * 31) % 7 < 3) as u8 as f64).collect();
        let d = Design::new(vec!["home".into()], vec![home.clone()]).unwrap();
        let fit = blp_fit(&scores(y.clone()), &d, SeType::HeteroscedasticityRobust, None).unwrap();
        let g = |h: f64| {
            let v: Vec<f64> = y.iter().zip(&home).filter(|(_, &x)| x == h).map(|(a, _)| *a).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((fit.coefficients[0] - g(0.0)).abs() < 1e-12);
        assert!((fit.coefficients[0] + fit.coefficients[1] - g(1.0)).abs() < 1e-12);
        let z = Matrix::from_columns(vec![home.clone()]).unwrap();
        let iates = blp_iates(&fit, &z).unwrap();
        let mut distinct: Vec<f64> = iates.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v + 1.0).collect();
        let d = Design::new(vec!["a".into(), "b".into()], vec![a, b]).unwrap();
        match blp_fit(&scores(wiggle(50)), &d, SeType::HeteroscedasticityRobust, None) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["b"]),
            other => panic!("{other:?}"),
        }
        let c = Design::new(vec!["c".into()], vec![vec![3.0; 50]]).unwrap();
        assert_eq!(collinear_columns(&c, None), vec![1]);
    }

    #[test]
    fn cluster_errors() {
        let s = scores(wiggle(40));
        let d = Design::constant_only(40);
        assert!(matches!(
            blp_fit(&s, &d, SeType::ClusterRobust, None),
            Err(Error::Config(_))
        ));
        let singletons: Vec<u64> = (0..40).collect();
        let cl = blp_fit(&s, &d, SeType::ClusterRobust, Some(&singletons)).unwrap();
        let hc = blp_fit(&s, &d, SeType::HeteroscedasticityRobust, None).unwrap();
        assert!((cl.std_errors()[0] - hc.std_errors()[0]).abs() < 1e-14);
    }

    #[test]
    fn iate_width_checked() {
        let s = scores(wiggle(40));
        let fit = blp_fit(&s, &Design::constant_only(40), SeType::HeteroscedasticityRobust, None).unwrap();
        let z = Matrix::from_columns(vec![vec![0.0; 3]]).unwrap();
        assert!(blp_iates(&fit, &z).is_err());
    }

    #[test]
    fn weighted_unit_weights_match_ols() {
        let y = wiggle(80);
        let x: Vec<f64> = (0..80).map(|i| (i as f64 / 9.0).sin()).collect();
        let d = Design::new(vec!["x".into()], vec![x]).unwrap();
        let a = blp_fit(&scores(y.clone()), &d, SeType::HeteroscedasticityRobust, None).unwrap();
        let b = blp_coefficients_weighted(&y, &d, &[1.0; 80]).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn rescaling_z_rescales_coefficient(scale in 0.01f64..100.0, seed in 0usize..1000) {
                let n = 60;
                let y: Vec<f64> = (0..n).map(|i| (((i + seed) * 7919) % 97) as f64 / 40.0).collect();
                let z: Vec<f64> = (0..n).map(|i| (((i + seed) * 104729) % 89) as f64 / 10.0).collect();
                let zs: Vec<f64> = z.iter().map(|v| v * scale).collect();
                let s = scores(y);
                let f1 = blp_fit(&s, &Design::new(vec!["z".into()], vec![z.clone()]).unwrap(), SeType::HeteroscedasticityRobust, None).unwrap();
                let f2 = blp_fit(&s, &Design::new(vec!["z".into()], vec![zs.clone()]).unwrap(), SeType::HeteroscedasticityRobust, None).unwrap();
                prop_assert!((f2.coefficients[1] * scale - f1.coefficients[1]).abs() <= 1e-8 * f1.coefficients[1].abs().max(1e-8));
                let i1 = blp_iates(&f1, &Matrix::from_columns(vec![z]).unwrap()).unwrap();
                let i2 = blp_iates(&f2, &Matrix::from_columns(vec![zs]).unwrap()).unwrap();
                for (a, b) in i1.iter().zip(&i2) {
                    prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
                }
            }

            #[test]
            fn permuting_rows_permutes_iates(shift in 1usize..59) {
                let n = 60;
                let y: Vec<f64> = (0..n).map(|i| ((i * 7919) % 97) as f64 / 40.0).collect();
                let z: Vec<f64> = (0..n).map(|i| ((i * 104729) % 89) as f64 / 10.0).collect();
                let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
                let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
                let zp: Vec<f64> = perm.iter().map(|&i| z[i]).collect();
                let f1 = blp_fit(&scores(y), &Design::new(vec!["z".into()], vec![z.clone()]).unwrap(), SeType::HeteroscedasticityRobust, None).unwrap();
                let f2 = blp_fit(&scores(yp), &Design::new(vec!["z".into()], vec![zp.clone()]).unwrap(), SeType::HeteroscedasticityRobust, None).unwrap();
                for (a, b) in f1.coefficients.iter().zip(&f2.coefficients) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
                let i1 = blp_iates(&f1, &Matrix::from_columns(vec![z]).unwrap()).unwrap();
                let i2 = blp_iates(&f2, &Matrix::from_columns(vec![zp]).unwrap()).unwrap();
                for (k, &i) in perm.iter().enumerate() {
                    prop_assert!((i2[k] - i1[i]).abs() < 1e-10);
                }
            }

            #[test]
            fn covariance_is_symmetric_psd(seed in 0usize..500) {
                let n = 50;
                let y: Vec<f64> = (0..n).map(|i| (((i + seed) * 7919) % 97) as f64).collect();
                let z: Vec<f64> = (0..n).map(|i| (((i * 3 + seed) * 104729) % 89) as f64).collect();
                let f = blp_fit(&scores(y), &Design::new(vec!["z".into()], vec![z]).unwrap(), SeType::HeteroscedasticityRobust, None).unwrap();
                let c = &f.covariance;
                prop_assert_eq!(c[0][1], c[1][0]);
                prop_assert!(c[0][0] >= 0.0 && c[1][1] >= 0.0);
                prop_assert!(c[0][0] * c[1][1] - c[0][1] * c[1][0] >= -1e-12 * c[0][0] * c[1][1]);
            }
        }
    }
}
