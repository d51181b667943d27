//! The subcommands. Each stage reads its inputs, writes CSV outputs through
//! a [`RunRecorder`] and adds any warnings to the manifest.

use std::fmt::Write as _;
use std::path::PathBuf;

use hte_core::blp::{
    blp_coefficients_weighted, collinear_columns, gate_table, gate_table_csv, Design, GateSpec, SeType,
};
use hte_core::contest::simulate;
use hte_core::dataset::{descriptives, load_csv, Dataset, DescriptiveRole, Schema};
use hte_core::dml::{
    ate, ate_clustered, audit_cluster_folds, audit_crossfit, common_support, crossfit_nuisances,
    orthogonal_scores, read_scores_csv, scores_csv, ScoreVector,
};
use hte_core::kernel_cate::{
    bandwidth_grid, cv_bandwidth, gate_curve_by_group, kernel_cate, quantile_grid, BandwidthChoice,
    CateCurve, GroupCurves, KernelSpec,
};
use hte_core::sorted_clan::{clan, clan_full, sorted_effects, BootstrapConfig, ClanConfig};
use hte_core::stats::EffectEstimate;
use hte_core::Error;

use crate::config::{RunConfig, SeChoice, SimulateConfig};
use crate::error::{CliError, CliResult, Stage};
use crate::manifest::{io_err, RunManifest, RunRecorder};

pub const SCORES_FILE: &str = "scores.csv";
pub const SUPPORT_FILE: &str = "support.csv";
pub const ATE_FILE: &str = "ate.csv";
pub const BLP_FILE: &str = "blp.csv";
pub const SORTED_FILE: &str = "sorted.csv";
pub const CLAN_FILE: &str = "clan.csv";
pub const DESCRIPTIVES_FILE: &str = "descriptives.csv";

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub level: Option<f64>,
    pub scores: Option<PathBuf>,
    pub record_timings: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> CliResult<()> {
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = Some(absolute(d));
        }
        if let Some(l) = self.level {
            cfg.level = l;
        }
        if let Some(s) = &self.scores {
            cfg.scores = Some(absolute(s));
        }
        cfg.record_timings |= self.record_timings;
        cfg.validate().stage("config")
    }

    pub fn apply_simulate(&self, cfg: &mut SimulateConfig) -> CliResult<()> {
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = Some(absolute(d));
        }
        cfg.to_sim_config().stage("config").map(|_| ())
    }
}

fn absolute(p: &std::path::Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().unwrap_or_default().join(p)
    }
}

pub fn run_simulate(cfg: &SimulateConfig) -> CliResult<RunManifest> {
    let sim_cfg = cfg.to_sim_config().stage("config")?;
    let mut rec = RunRecorder::create(&cfg.output_path(), false)?;
    let sim = simulate(&sim_cfg).stage("simulate")?;
    let mut data = Vec::new();
    sim.dataset.write_csv(&mut data).stage("simulate")?;
    rec.write("data.csv", &data)?;
    rec.write("truth.csv", sim.truth_csv().as_bytes())?;
    rec.write("columns.toml", sim.dataset.schema().to_toml_string().as_bytes())?;
    let hash = sim.dataset.content_hash();
    rec.finish("simulate", cfg.hash(), Some(hash), sim_cfg.seed, None)
}

fn load_inputs(cfg: &RunConfig, rec: &mut RunRecorder) -> CliResult<Dataset> {
    let schema = Schema::load(&cfg.columns_path()).stage("config")?;
    cfg.check_columns(&schema).stage("config")?;
    let data = load_csv(&cfg.data_path(), &schema).stage("data")?;
    for line in data.provenance.drop_log() {
        rec.warn(format!("dropped rows: {line}"));
    }
    rec.lap("data");
    Ok(data)
}

/// Cross-fits the nuisances, audits the folds and writes scores and the
/// common-support histogram.
fn nuisance_stage(cfg: &RunConfig, data: &Dataset, rec: &mut RunRecorder) -> CliResult<ScoreVector> {
    let cf = cfg.crossfit(data.x_columns().len());
    let fit = crossfit_nuisances(data, &cf).stage("nuisance")?;
    audit_crossfit(&fit).stage("nuisance")?;
    if cf.cluster_folds {
        audit_cluster_folds(&fit.fold_id, &data.cluster_ids()).stage("nuisance")?;
    }
    for w in &fit.warnings {
        rec.warn(format!("nuisance: {w}"));
    }
    let scores = orthogonal_scores(data, &fit).stage("scores")?;
    rec.write(SCORES_FILE, scores_csv(&fit, &scores).as_bytes())?;
    let support = common_support(&fit, cfg.support_bins).stage("support")?;
    if support.support_concern() {
        rec.warn(format!(
            "support: {:.4} of propensity scores outside the trim bounds; {} histogram bins with only one treatment arm",
            support.share_outside_trim,
            support.flagged_bins.len()
        ));
    }
    rec.write(SUPPORT_FILE, support.histogram_csv().as_bytes())?;
    rec.lap("nuisance");
    Ok(scores)
}

fn cached_scores(path: &std::path::Path, data: &Dataset) -> CliResult<ScoreVector> {
    let file = std::fs::File::open(path).map_err(|e| io_err("scores", path, e))?;
    let records = read_scores_csv(file).stage("scores")?;
    if records.len() != data.n() {
        return Err(CliError::new(
            "scores",
            Error::Dimension {
                expected: data.n(),
                got: records.len(),
            },
        ));
    }
    ScoreVector::from_values(records.iter().map(|r| r.y_star).collect()).stage("scores")
}

fn se_type(cfg: &RunConfig) -> SeType {
    match cfg.se_type {
        SeChoice::Robust => SeType::HeteroscedasticityRobust,
        SeChoice::Cluster => SeType::ClusterRobust,
    }
}

pub fn ate_csv(term: &str, e: &EffectEstimate) -> String {
    format!(
        "term,estimate,se,t,p,ci_low,ci_high\n{term},{},{},{},{},{},{}\n",
        e.estimate, e.std_error, e.t_value, e.p_value, e.ci_low, e.ci_high
    )
}

fn group_curves_csv(g: &GroupCurves) -> String {
    let mut s = String::from("group,z,theta,ci_low,ci_high,ess\n");
    for (label, curve) in [(0, &g.group0), (1, &g.group1)] {
        for p in &curve.points {
            match p.estimate {
                Some(e) => {
                    let _ = writeln!(s, "{label},{},{},{},{},{}", p.z[0], e.theta, e.ci_low, e.ci_high, p.ess);
                }
                None => {
                    let _ = writeln!(s, "{label},{},,,,{}", p.z[0], p.ess);
                }
            }
        }
    }
    s
}

fn warn_unavailable(rec: &mut RunRecorder, what: &str, curve: &CateCurve) {
    let k = curve.n_unavailable();
    if k > 0 {
        rec.warn(format!(
            "cate {what}: {k} of {} grid points below the effective sample floor",
            curve.points.len()
        ));
    }
}

fn cate_stage(cfg: &RunConfig, data: &Dataset, scores: &ScoreVector, rec: &mut RunRecorder) -> CliResult<()> {
    let y = &scores.y_star;
    for var in &cfg.cate {
        let z = data.columns_matrix(&[var.as_str()]).stage("cate")?;
        let grid = bandwidth_grid(&z, &cfg.bandwidth_factors);
        let eval = quantile_grid(&z, cfg.cate_grid_points, cfg.cate_grid_trim);
        let h = cv_bandwidth(y, &z, cfg.kernel, &grid, cfg.cv_folds).stage("cate")?;
        let spec = KernelSpec::new(cfg.kernel, h, cfg.undersmoothing).stage("cate")?;
        let curve = kernel_cate(y, &z, &spec, &eval, cfg.level).stage("cate")?;
        warn_unavailable(rec, var, &curve);
        rec.write(&format!("cate_{var}.csv"), curve.to_csv().as_bytes())?;
        if let Some(by) = &cfg.cate_by {
            let g = data.column(by).stage("cate")?;
            if g.iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(CliError::new(
                    "cate",
                    Error::Data(format!("cate_by column `{by}` must be binary")),
                ));
            }
            let group: Vec<u8> = g.iter().map(|v| *v as u8).collect();
            let choice = BandwidthChoice {
                kernel: cfg.kernel,
                grid,
                k_folds: cfg.cv_folds,
                undersmoothing: cfg.undersmoothing,
            };
            let curves = gate_curve_by_group(y, &z, &group, &choice, &eval, cfg.level).stage("cate")?;
            if !curves.truncated.is_empty() {
                rec.warn(format!(
                    "cate {var} by {by}: {} grid points lack an estimate in at least one group",
                    curves.truncated.len()
                ));
            }
            rec.write(&format!("cate_{var}_by_{by}.csv"), group_curves_csv(&curves).as_bytes())?;
        }
    }
    rec.lap("cate");
    Ok(())
}

/// Linear IATE model on the configured variables, collinear columns
/// removed.
fn iate_design(cfg: &RunConfig, data: &Dataset, rec: &mut RunRecorder) -> CliResult<Design> {
    let names: Vec<String> = if cfg.iate_variables.is_empty() {
        data.z_names()
    } else {
        cfg.iate_variables.clone()
    };
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let full = Design::from_dataset(data, &refs).stage("iate")?;
    let drop = collinear_columns(&full, None);
    if drop.contains(&0) {
        return Err(CliError::new("iate", Error::Numeric("intercept column is degenerate".into())));
    }
    for &j in &drop {
        rec.warn(format!("iate model: dropped collinear column `{}`", full.names()[j]));
    }
    let keep: Vec<usize> = (0..full.width()).filter(|j| !drop.contains(j)).collect();
    Ok(full.keep(&keep))
}

fn sorted_clan_stage(
    cfg: &RunConfig,
    data: &Dataset,
    scores: &ScoreVector,
    rec: &mut RunRecorder,
) -> CliResult<()> {
    if !cfg.sorted && !cfg.clan {
        return Ok(());
    }
    let design = iate_design(cfg, data, rec)?;
    let y = scores.y_star.clone();
    let iate_fn = |w: &[f64]| -> hte_core::Result<Vec<f64>> {
        let beta = blp_coefficients_weighted(&y, &design, w)?;
        design.predict(&beta)
    };
    let boot = BootstrapConfig {
        replications: cfg.bootstrap_replications,
        level: cfg.level,
        seed: cfg.seed(),
    };
    if cfg.sorted {
        let curve = sorted_effects(&iate_fn, data.n(), &boot).stage("sorted")?;
        rec.write(SORTED_FILE, curve.to_csv().as_bytes())?;
        rec.lap("sorted");
    }
    if cfg.clan {
        let names = if cfg.clan_variables.is_empty() {
            data.x_names()
        } else {
            cfg.clan_variables.clone()
        };
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let x = data.columns_matrix(&refs).stage("clan")?;
        let ccfg = ClanConfig {
            q: cfg.clan_q,
            bootstrap: boot,
        };
        let table = if cfg.clan_full_reestimation {
            clan_full(&iate_fn, &x, &names, &ccfg)
        } else {
            let iates = iate_fn(&vec![1.0; data.n()]).stage("clan")?;
            clan(&iates, &x, &names, &ccfg)
        }
        .stage("clan")?;
        rec.write(CLAN_FILE, table.to_csv().as_bytes())?;
        rec.lap("clan");
    }
    Ok(())
}

/// Full pipeline: nuisances (or cached scores), ATE, BLP/GATE table,
/// kernel curves, sorted effects and CLAN.
pub fn run_estimate(cfg: &RunConfig) -> CliResult<RunManifest> {
    let mut rec = RunRecorder::create(&cfg.output_path(), cfg.record_timings)?;
    let data = load_inputs(cfg, &mut rec)?;
    let (scores, source) = match cfg.scores_path() {
        Some(p) => {
            let s = cached_scores(&p, &data)?;
            rec.lap("scores");
            (s, "cached")
        }
        None => (nuisance_stage(cfg, &data, &mut rec)?, "computed"),
    };
    if cfg.ate {
        let e = match cfg.se_type {
            SeChoice::Robust => ate(&scores, cfg.level),
            SeChoice::Cluster => ate_clustered(&scores, &data.cluster_ids(), cfg.level),
        }
        .stage("ate")?;
        rec.write(ATE_FILE, ate_csv("ATE", &e).as_bytes())?;
        rec.lap("ate");
    }
    let specs = cfg.blp_specs();
    if !specs.is_empty() {
        let gate: Vec<GateSpec> = specs
            .iter()
            .map(|(label, cols)| GateSpec {
                label: label.clone(),
                columns: cols.clone(),
            })
            .collect();
        let fits = gate_table(&scores, &data, &gate, se_type(cfg)).stage("blp")?;
        for (g, f) in gate.iter().zip(&fits) {
            for d in &f.dropped {
                rec.warn(format!("blp model `{}`: dropped collinear column `{d}`", g.label));
            }
        }
        let labels: Vec<String> = gate.iter().map(|g| g.label.clone()).collect();
        rec.write(BLP_FILE, gate_table_csv(&labels, &fits, cfg.level).as_bytes())?;
        rec.lap("blp");
    }
    cate_stage(cfg, &data, &scores, &mut rec)?;
    sorted_clan_stage(cfg, &data, &scores, &mut rec)?;
    rec.finish(
        "estimate",
        cfg.hash(),
        Some(data.content_hash()),
        cfg.seed(),
        Some(source.to_string()),
    )
}

/// Nuisance stage alone: scores and the common-support histogram.
pub fn run_support(cfg: &RunConfig) -> CliResult<RunManifest> {
    let mut rec = RunRecorder::create(&cfg.output_path(), cfg.record_timings)?;
    let data = load_inputs(cfg, &mut rec)?;
    nuisance_stage(cfg, &data, &mut rec)?;
    rec.finish(
        "support",
        cfg.hash(),
        Some(data.content_hash()),
        cfg.seed(),
        Some("computed".into()),
    )
}

/// Balance table: means by treatment arm and standardized differences.
pub fn run_descriptives(cfg: &RunConfig) -> CliResult<RunManifest> {
    let mut rec = RunRecorder::create(&cfg.output_path(), cfg.record_timings)?;
    let data = load_inputs(cfg, &mut rec)?;
    let table = descriptives(&data);
    for row in &table.rows {
        if row.role == DescriptiveRole::Covariate && row.difference.is_none() {
            rec.warn(format!(
                "descriptives: no standardized difference for constant variable `{}`",
                row.variable
            ));
        }
    }
    rec.write(DESCRIPTIVES_FILE, table.to_csv().as_bytes())?;
    rec.finish("descriptives", cfg.hash(), Some(data.content_hash()), cfg.seed(), None)
}
