use std::fs;
use std::path::Path;
use std::process::Command;

use hte_cli::RunManifest;

fn hte(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hte"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn simulate(dir: &Path, extra: &str) {
    write(dir, "sim.toml", &format!("seed = 9\nn_matches = 1500\noutput_dir = \"sim\"\n{extra}"));
    let out = hte(&["simulate", "--config", "sim.toml"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const RUN: &str = "seed = 4
data = \"sim/data.csv\"
columns = \"sim/columns.toml\"
n_trees = 30
blp_models = [\"home_i\", \"home_i,experience_i\"]
cate = [\"experience_i\"]
cate_grid_points = 11
bootstrap_replications = 100
";

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "");
    let first = fs::read(dir.path().join("sim/data.csv")).unwrap();
    let truth = fs::read(dir.path().join("sim/truth.csv")).unwrap();
    simulate(dir.path(), "");
    assert_eq!(first, fs::read(dir.path().join("sim/data.csv")).unwrap());
    assert_eq!(truth, fs::read(dir.path().join("sim/truth.csv")).unwrap());
    let header = String::from_utf8(first).unwrap();
    assert!(header.starts_with("won,starts,player,ability_i,ability_j"));
}

#[test]
fn simulate_rejects_zero_matches() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "sim.toml", "seed = 1\nn_matches = 0\n");
    let out = hte(&["simulate", "--config", "sim.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn no_advantage_means_zero_effects() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "delta_base = 1.0\n");
    let text = fs::read_to_string(dir.path().join("sim/truth.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let tau = header.iter().position(|h| *h == "tau").unwrap();
    for line in lines {
        let v: f64 = line.split(',').nth(tau).unwrap().parse().unwrap();
        assert_eq!(v, 0.0);
    }
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "");
    write(dir.path(), "bad.toml", &format!("{RUN}unknown_key = 1\n"));
    let out = hte(&["estimate", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));
    write(dir.path(), "bad2.toml", &format!("{RUN}clan_variables = [\"nope\"]\n"));
    let out = hte(&["estimate", "--config", "bad2.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "");
    write(dir.path(), "run.toml", &RUN.replace("sim/data.csv", "missing.csv"));
    let out = hte(&["estimate", "--config", "run.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = hte(&["report", "nowhere"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn estimate_outputs_and_cached_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "");
    write(d, "run.toml", &format!("{RUN}output_dir = \"out\"\n"));
    let out = hte(&["estimate", "--config", "run.toml"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ate = fs::read_to_string(d.join("out/ate.csv")).unwrap();
    assert!(ate.starts_with("term,estimate,se,t,p,"));
    let blp = fs::read_to_string(d.join("out/blp.csv")).unwrap();
    assert!(blp.contains("home_i+experience_i,experience_i,"));
    let manifest = RunManifest::load(&d.join("out/manifest-estimate.json")).unwrap();
    assert_eq!(manifest.scores_source.as_deref(), Some("computed"));
    for f in ["scores.csv", "support.csv", "ate.csv", "blp.csv", "cate_experience_i.csv", "sorted.csv", "clan.csv"] {
        assert!(manifest.outputs.contains_key(f), "{f} missing from manifest");
    }

    // downstream stages from the cached scores reproduce every file
    let out = hte(
        &["estimate", "--config", "run.toml", "--scores", "out/scores.csv", "--output-dir", "cached"],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cached = RunManifest::load(&d.join("cached/manifest-estimate.json")).unwrap();
    assert_eq!(cached.scores_source.as_deref(), Some("cached"));
    assert!(!cached.outputs.contains_key("scores.csv"));
    for (name, hash) in &cached.outputs {
        assert_eq!(manifest.outputs.get(name), Some(hash), "{name} differs");
    }
    assert_eq!(cached.config_hash, {
        // the scores override is part of the configuration
        let mut c = hte_cli::RunConfig::load(&d.join("run.toml")).unwrap();
        c.scores = Some(d.join("out/scores.csv"));
        c.hash()
    });
}

#[test]
fn level_flag_widens_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "");
    write(d, "run.toml", "seed = 4\ndata = \"sim/data.csv\"\ncolumns = \"sim/columns.toml\"\nn_trees = 20\nsorted = false\nclan = false\n");
    assert!(hte(&["estimate", "--config", "run.toml", "--output-dir", "a"], d).status.success());
    assert!(hte(&["estimate", "--config", "run.toml", "--output-dir", "b", "--level", "0.95"], d).status.success());
    let width = |p: &str| {
        let t = fs::read_to_string(d.join(p)).unwrap();
        let f: Vec<f64> = t.lines().nth(1).unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        f[5] - f[4]
    };
    assert!(width("b/ate.csv") > width("a/ate.csv"));
}

#[test]
fn report_marks_absent_sections_and_repeats_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "");
    // tight trimming guarantees clipping warnings
    write(
        d,
        "run.toml",
        &format!("{RUN}output_dir = \"out\"\ntrim_low = 0.3\ntrim_high = 0.7\nsorted = false\n"),
    );
    let out = hte(&["estimate", "--config", "run.toml"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = hte(&["report", "out"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(d.join("out/report/summary.txt")).unwrap();
    assert!(summary.contains("== Sorted effects ==\nabsent (sorted.csv not found)"));
    let manifest = RunManifest::load(&d.join("out/manifest-estimate.json")).unwrap();
    assert!(!manifest.warnings.is_empty());
    for w in &manifest.warnings {
        assert!(summary.lines().any(|l| l == w), "warning not repeated: {w}");
    }
    let index = fs::read_to_string(d.join("out/report/index.csv")).unwrap();
    assert!(index.contains("Sorted effects,figure_sorted_effects.csv,absent"));
    let cate = fs::read_to_string(d.join("out/report/figure_cate_experience_i.csv")).unwrap();
    assert!(cate.starts_with("z,theta,ci_low,ci_high,ess"));
}

#[test]
fn descriptives_and_support_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "");
    write(d, "run.toml", &format!("{RUN}output_dir = \"out\"\n"));
    assert!(hte(&["descriptives", "--config", "run.toml"], d).status.success());
    let t = fs::read_to_string(d.join("out/descriptives.csv")).unwrap();
    assert!(t.starts_with("variable,role,mean,sd,mean_treated,mean_control,difference\nwon,outcome,"));
    assert!(hte(&["support", "--config", "run.toml"], d).status.success());
    let s = fs::read_to_string(d.join("out/support.csv")).unwrap();
    assert!(s.starts_with("bin_low,bin_high,treated,control"));
    assert!(d.join("out/manifest-support.json").exists());
}
