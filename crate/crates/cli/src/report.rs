//! Consolidates an estimate run directory into a `report/` bundle of
//! figure and table CSVs plus a plain-text summary.

use std::fmt::Write as _;
use std::path::Path;

use hte_core::Error;

use crate::error::{CliError, CliResult};
use crate::manifest::{io_err, RunManifest};
use crate::pipeline::{ATE_FILE, BLP_FILE, CLAN_FILE, DESCRIPTIVES_FILE, SORTED_FILE, SUPPORT_FILE};

pub const REPORT_DIR: &str = "report";
pub const SUMMARY_FILE: &str = "summary.txt";

struct Section {
    title: String,
    source: String,
    target: String,
    curve: bool,
}

fn sections(run_dir: &Path) -> CliResult<Vec<Section>> {
    let table = |title: &str, source: &str, target: &str| Section {
        title: title.into(),
        source: source.into(),
        target: target.into(),
        curve: false,
    };
    let mut out = vec![
        table("Descriptives", DESCRIPTIVES_FILE, "table_descriptives.csv"),
        table("Average treatment effect", ATE_FILE, "table_ate.csv"),
        table("Best linear predictors", BLP_FILE, "table_blp.csv"),
        table("Classification analysis", CLAN_FILE, "table_clan.csv"),
        table("Common support", SUPPORT_FILE, "figure_support.csv"),
        Section {
            title: "Sorted effects".into(),
            source: SORTED_FILE.into(),
            target: "figure_sorted_effects.csv".into(),
            curve: true,
        },
    ];
    let mut cate: Vec<String> = std::fs::read_dir(run_dir)
        .map_err(|e| io_err("report", run_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("cate_") && n.ends_with(".csv"))
        .collect();
    cate.sort();
    if cate.is_empty() {
        out.push(Section {
            title: "Kernel GATE curves".into(),
            source: "cate_*.csv".into(),
            target: "figure_cate.csv".into(),
            curve: true,
        });
    }
    for name in cate {
        out.push(Section {
            title: format!("Kernel GATE curve {}", &name[5..name.len() - 4]),
            target: format!("figure_{name}"),
            source: name,
            curve: true,
        });
    }
    Ok(out)
}

/// Range of the `theta` column and mean band width.
fn curve_summary(text: &str) -> String {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (Some(t), Some(lo), Some(hi)) = (
        col("theta"),
        col("ci_low").or(col("lo")),
        col("ci_high").or(col("hi")),
    ) else {
        return "unrecognized curve layout".into();
    };
    let mut thetas = vec![];
    let mut widths = vec![];
    let mut missing = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        match (
            f.get(t).and_then(|v| v.parse::<f64>().ok()),
            f.get(lo).and_then(|v| v.parse::<f64>().ok()),
            f.get(hi).and_then(|v| v.parse::<f64>().ok()),
        ) {
            (Some(th), Some(l), Some(h)) => {
                thetas.push(th);
                widths.push(h - l);
            }
            _ => missing += 1,
        }
    }
    if thetas.is_empty() {
        return format!("no estimated points ({missing} unavailable)");
    }
    let min = thetas.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = thetas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w = widths.iter().sum::<f64>() / widths.len() as f64;
    format!(
        "{} points, theta from {min:.4} to {max:.4}, mean band width {w:.4}, {missing} unavailable",
        thetas.len()
    )
}

pub fn run_report(run_dir: &Path) -> CliResult<()> {
    let manifest_path = run_dir.join(RunManifest::file_name("estimate"));
    if !manifest_path.exists() {
        return Err(CliError::new(
            "report",
            Error::Data(format!(
                "{} is not a complete run directory: {} missing",
                run_dir.display(),
                manifest_path.display()
            )),
        ));
    }
    let manifest = RunManifest::load(&manifest_path)?;
    let out = run_dir.join(REPORT_DIR);
    std::fs::create_dir_all(&out).map_err(|e| io_err("report", &out, e))?;

    let mut summary = String::new();
    let _ = writeln!(summary, "hte run summary");
    let _ = writeln!(summary, "version: {}", manifest.version);
    let _ = writeln!(summary, "seed: {}", manifest.seed);
    let _ = writeln!(summary, "config hash: {}", manifest.config_hash);
    if let Some(h) = &manifest.data_hash {
        let _ = writeln!(summary, "data hash: {h}");
    }
    if let Some(s) = &manifest.scores_source {
        let _ = writeln!(summary, "scores: {s}");
    }
    let mut index = String::from("section,file,status\n");
    for s in sections(run_dir)? {
        let _ = writeln!(summary, "\n== {} ==", s.title);
        let src = run_dir.join(&s.source);
        match std::fs::read_to_string(&src) {
            Ok(text) => {
                let dst = out.join(&s.target);
                std::fs::write(&dst, &text).map_err(|e| io_err("report", &dst, e))?;
                let _ = writeln!(index, "{},{},present", s.title, s.target);
                if s.curve {
                    let _ = writeln!(summary, "{}", curve_summary(&text));
                } else {
                    for line in text.lines() {
                        let _ = writeln!(summary, "  {line}");
                    }
                }
            }
            Err(_) => {
                let _ = writeln!(index, "{},{},absent", s.title, s.target);
                let _ = writeln!(summary, "absent ({} not found)", s.source);
            }
        }
    }
    let _ = writeln!(summary, "\n== Warnings ==");
    if manifest.warnings.is_empty() {
        let _ = writeln!(summary, "none");
    }
    for w in &manifest.warnings {
        let _ = writeln!(summary, "{w}");
    }
    let idx = out.join("index.csv");
    std::fs::write(&idx, index).map_err(|e| io_err("report", &idx, e))?;
    let sp = out.join(SUMMARY_FILE);
    std::fs::write(&sp, summary).map_err(|e| io_err("report", &sp, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_summary_reads_both_layouts() {
        let a = curve_summary("u,theta,lo,hi\n0.1,0.2,0.1,0.3\n0.2,0.4,0.3,0.5\n");
        assert!(a.starts_with("2 points, theta from 0.2000 to 0.4000"));
        let b = curve_summary("z,theta,ci_low,ci_high,ess\n0.5,,,,3\n");
        assert_eq!(b, "no estimated points (1 unavailable)");
    }
}
