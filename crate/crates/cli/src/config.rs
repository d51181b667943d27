//! Run configurations. Both files are flat TOML tables with a versioned
//! schema; unknown keys are rejected. Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use hte_core::contest::{
    DeltaModel, DgpKind, LegOrder, LinearDgp, MatchFormat, PiModel, SimConfig,
};
use hte_core::dataset::{ColumnRole, Schema};
use hte_core::dml::{CrossFitConfig, LearnerConfig, TrimBounds, Tuning};
use hte_core::forest::{default_features_per_split, ForestParams};
use hte_core::kernel_cate::{default_bandwidth_factors, Kernel};
use hte_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeChoice {
    Robust,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: Option<u64>,
    /// Observation CSV.
    pub data: Option<PathBuf>,
    /// Column schema TOML.
    pub columns: Option<PathBuf>,
    /// Cached scores file; when set the nuisance stage is skipped.
    pub scores: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,

    pub n_trees: usize,
    pub subsample_fraction: f64,
    pub features_per_split: Option<usize>,
    pub min_leaf: usize,
    pub tune_min_leaf: bool,
    pub min_leaf_grid: Vec<usize>,
    pub tuning_folds: usize,
    pub n_folds: usize,
    pub cluster_folds: bool,
    pub trim_low: f64,
    pub trim_high: f64,

    pub se_type: SeChoice,
    pub level: f64,

    pub ate: bool,
    /// Each entry is a comma-separated list of heterogeneity variables,
    /// fitted as one BLP model and labelled by the names joined with `+`.
    pub blp_models: Vec<String>,
    /// Variables for one-dimensional kernel GATE curves.
    pub cate: Vec<String>,
    /// Binary variable splitting every kernel curve into two groups.
    pub cate_by: Option<String>,
    pub kernel: Kernel,
    pub undersmoothing: f64,
    pub bandwidth_factors: Vec<f64>,
    pub cv_folds: usize,
    pub cate_grid_points: usize,
    /// Grid spans the `q` to `1 - q` sample quantiles.
    pub cate_grid_trim: f64,

    pub sorted: bool,
    /// Variables of the linear IATE model; empty means all heterogeneity
    /// columns of the schema.
    pub iate_variables: Vec<String>,
    pub clan: bool,
    pub clan_q: f64,
    /// Characteristics compared by CLAN; empty means every covariate.
    pub clan_variables: Vec<String>,
    pub clan_full_reestimation: bool,
    pub bootstrap_replications: usize,

    pub support_bins: usize,
    /// Wall-clock stage timings in the manifest. Off by default because
    /// they make manifests differ between identical runs.
    pub record_timings: bool,

    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: None,
            data: None,
            columns: None,
            scores: None,
            output_dir: None,
            n_trees: 500,
            subsample_fraction: 0.5,
            features_per_split: None,
            min_leaf: 5,
            tune_min_leaf: false,
            min_leaf_grid: Tuning::default().min_leaf_grid,
            tuning_folds: 3,
            n_folds: 2,
            cluster_folds: true,
            trim_low: TrimBounds::default().low,
            trim_high: TrimBounds::default().high,
            se_type: SeChoice::Cluster,
            level: 0.90,
            ate: true,
            blp_models: vec![],
            cate: vec![],
            cate_by: None,
            kernel: Kernel::Gaussian,
            undersmoothing: 0.9,
            bandwidth_factors: default_bandwidth_factors(),
            cv_folds: 5,
            cate_grid_points: 41,
            cate_grid_trim: 0.05,
            sorted: true,
            iate_variables: vec![],
            clan: true,
            clan_q: 0.10,
            clan_variables: vec![],
            clan_full_reestimation: false,
            bootstrap_replications: 999,
            support_bins: 20,
            record_timings: false,
            base_dir: PathBuf::new(),
        }
    }
}

fn read_config_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn base_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn check_version(v: u32) -> Result<()> {
    if v != CONFIG_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported config schema_version {v}; expected {CONFIG_SCHEMA_VERSION}"
        )));
    }
    Ok(())
}

/// SHA-256 of the canonical JSON form, with the output directory removed
/// so identical settings hash identically wherever they write.
fn hash_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = parse_toml(&read_config_text(path)?, path)?;
        cfg.base_dir = base_of(path);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = parse_toml(text, Path::new("<config>"))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_version(self.schema_version)?;
        if self.seed.is_none() {
            return Err(Error::Config("`seed` is mandatory".into()));
        }
        if self.data.is_none() || self.columns.is_none() {
            return Err(Error::Config("`data` and `columns` are mandatory".into()));
        }
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be positive".into()));
        }
        if self.n_folds < 2 {
            return Err(Error::Config("n_folds must be at least 2".into()));
        }
        if self.tune_min_leaf && (self.min_leaf_grid.is_empty() || self.tuning_folds < 2) {
            return Err(Error::Config("tuning needs a non-empty min_leaf_grid and at least 2 tuning_folds".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level {} outside (0, 1)", self.level)));
        }
        if self.cate_grid_points < 2 || !(0.0..0.5).contains(&self.cate_grid_trim) {
            return Err(Error::Config("cate grid needs at least 2 points and a trim in [0, 0.5)".into()));
        }
        if self.bandwidth_factors.is_empty() || self.bandwidth_factors.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config("bandwidth_factors must be positive and non-empty".into()));
        }
        if self.support_bins == 0 {
            return Err(Error::Config("support_bins must be positive".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_path(&self) -> PathBuf {
        self.resolve(self.data.as_deref().expect("validated"))
    }

    pub fn columns_path(&self) -> PathBuf {
        self.resolve(self.columns.as_deref().expect("validated"))
    }

    pub fn scores_path(&self) -> Option<PathBuf> {
        self.scores.as_deref().map(|p| self.resolve(p))
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(self.output_dir.as_deref().unwrap_or(Path::new("hte-output")))
    }

    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.record_timings = false;
        hash_of(&c)
    }

    pub fn blp_specs(&self) -> Vec<(String, Vec<String>)> {
        self.blp_models
            .iter()
            .map(|m| {
                let cols: Vec<String> = m
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                (cols.join("+"), cols)
            })
            .collect()
    }

    /// Every referenced column must be a covariate of the schema.
    pub fn check_columns(&self, schema: &Schema) -> Result<()> {
        let covariates: Vec<&str> = schema
            .columns
            .iter()
            .filter(|c| matches!(c.role, ColumnRole::Confounder | ColumnRole::Heterogeneity))
            .map(|c| c.name.as_str())
            .collect();
        let mut referenced: Vec<String> = self.blp_specs().into_iter().flat_map(|(_, c)| c).collect();
        referenced.extend(self.cate.iter().cloned());
        referenced.extend(self.cate_by.iter().cloned());
        referenced.extend(self.iate_variables.iter().cloned());
        referenced.extend(self.clan_variables.iter().cloned());
        for name in referenced {
            if !covariates.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "column `{name}` is not a confounder or heterogeneity column of the schema"
                )));
            }
        }
        Ok(())
    }

    pub fn crossfit(&self, n_features: usize) -> CrossFitConfig {
        let forest = ForestParams {
            n_trees: self.n_trees,
            subsample_fraction: self.subsample_fraction,
            features_per_split: self
                .features_per_split
                .unwrap_or_else(|| default_features_per_split(n_features)),
            min_leaf: self.min_leaf,
            seed: self.seed(),
        };
        let tuning = self.tune_min_leaf.then(|| Tuning {
            min_leaf_grid: self.min_leaf_grid.clone(),
            k_folds: self.tuning_folds,
        });
        CrossFitConfig {
            n_folds: self.n_folds,
            cluster_folds: self.cluster_folds,
            trim: TrimBounds {
                low: self.trim_low,
                high: self.trim_high,
            },
            seed: self.seed(),
            learner: LearnerConfig { forest, tuning },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpChoice {
    Contest,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub n_matches: Option<usize>,
    pub dgp: DgpChoice,
    pub output_dir: Option<PathBuf>,

    pub n_players: usize,
    pub ability_sd: f64,
    pub home_share: f64,
    pub delta_base: f64,
    pub delta_home_shift: f64,
    pub delta_experience_shift: f64,
    pub pi_intercept: f64,
    pub pi_ability_slope: f64,
    pub noise_covariates: usize,
    /// 1 draws the match result directly; an odd K > 1 plays best-of-K legs.
    pub legs: usize,
    pub leg_order: LegOrder,
    pub catch_up: bool,

    pub outcome_intercept: f64,
    pub outcome_slope: f64,
    pub effect_intercept: f64,
    pub effect_slope: f64,
    pub propensity_intercept: f64,
    pub propensity_slope: f64,

    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let d = SimConfig::darts_like(0, 0);
        SimulateConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: None,
            n_matches: None,
            dgp: DgpChoice::Contest,
            output_dir: None,
            n_players: d.n_players,
            ability_sd: d.ability_sd,
            home_share: d.home_share,
            delta_base: d.delta.base,
            delta_home_shift: d.delta.home_shift,
            delta_experience_shift: d.delta.experience_shift,
            pi_intercept: d.pi.intercept,
            pi_ability_slope: d.pi.ability_slope,
            noise_covariates: d.noise_covariates,
            legs: 1,
            leg_order: LegOrder::Alternating,
            catch_up: false,
            outcome_intercept: 0.3,
            outcome_slope: 0.3,
            effect_intercept: 0.02,
            effect_slope: 0.12,
            propensity_intercept: -0.5,
            propensity_slope: 1.0,
            base_dir: PathBuf::new(),
        }
    }
}

impl SimulateConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: SimulateConfig = parse_toml(&read_config_text(path)?, path)?;
        cfg.base_dir = base_of(path);
        cfg.to_sim_config()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: SimulateConfig = parse_toml(text, Path::new("<config>"))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.to_sim_config()?;
        Ok(cfg)
    }

    pub fn output_path(&self) -> PathBuf {
        let p = self.output_dir.as_deref().unwrap_or(Path::new("hte-simulated"));
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        hash_of(&c)
    }

    pub fn to_sim_config(&self) -> Result<SimConfig> {
        check_version(self.schema_version)?;
        let seed = self
            .seed
            .ok_or_else(|| Error::Config("`seed` is mandatory".into()))?;
        let n = self
            .n_matches
            .ok_or_else(|| Error::Config("`n_matches` is mandatory".into()))?;
        let dgp = match self.dgp {
            DgpChoice::Contest => DgpKind::Contest {
                format: (self.legs != 1).then_some(MatchFormat {
                    legs: self.legs,
                    order: self.leg_order,
                    catch_up: self.catch_up,
                }),
            },
            DgpChoice::Linear => DgpKind::GenericLinear(LinearDgp {
                outcome_intercept: self.outcome_intercept,
                outcome_slopes: vec![self.outcome_slope],
                effect_intercept: self.effect_intercept,
                effect_slopes: vec![self.effect_slope],
                propensity_intercept: self.propensity_intercept,
                propensity_slopes: vec![self.propensity_slope],
            }),
        };
        let cfg = SimConfig {
            n_matches: n,
            n_players: self.n_players,
            ability_sd: self.ability_sd,
            home_share: self.home_share,
            delta: DeltaModel {
                base: self.delta_base,
                home_shift: self.delta_home_shift,
                experience_shift: self.delta_experience_shift,
            },
            pi: PiModel {
                intercept: self.pi_intercept,
                ability_slope: self.pi_ability_slope,
            },
            noise_covariates: self.noise_covariates,
            seed,
            dgp,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::from_toml_str("seed = 1\ndata = \"a\"\ncolumns = \"b\"\nbogus = 3\n", Path::new(".")).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("bogus"));
    }

    #[test]
    fn seed_is_mandatory() {
        let e = RunConfig::from_toml_str("data = \"a\"\ncolumns = \"b\"\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("seed"));
        let e = SimulateConfig::from_toml_str("n_matches = 10\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("seed"));
    }

    #[test]
    fn version_checked() {
        let e = RunConfig::from_toml_str(
            "schema_version = 2\nseed = 1\ndata = \"a\"\ncolumns = \"b\"\n",
            Path::new("."),
        )
        .unwrap_err();
        assert!(e.to_string().contains("schema_version"));
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = RunConfig::from_toml_str("seed = 1\ndata = \"a\"\ncolumns = \"b\"\noutput_dir = \"x\"\n", Path::new(".")).unwrap();
        let b = RunConfig::from_toml_str("seed = 1\ndata = \"a\"\ncolumns = \"b\"\noutput_dir = \"y\"\n", Path::new(".")).unwrap();
        let c = RunConfig::from_toml_str("seed = 2\ndata = \"a\"\ncolumns = \"b\"\n", Path::new(".")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn blp_specs_split_on_commas() {
        let a = RunConfig::from_toml_str(
            "seed = 1\ndata = \"a\"\ncolumns = \"b\"\nblp_models = [\"home_i\", \"home_i, experience_i\"]\n",
            Path::new("."),
        )
        .unwrap();
        let specs = a.blp_specs();
        assert_eq!(specs[1].1, vec!["home_i", "experience_i"]);
        assert_eq!(specs[1].0, "home_i+experience_i");
    }

    #[test]
    fn simulate_rejects_tiny_n() {
        let e = SimulateConfig::from_toml_str("seed = 1\nn_matches = 0\n", Path::new(".")).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }
}
