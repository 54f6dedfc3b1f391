//! Result aggregation: collects per-run AUC summaries into the benchmark
//! tables (cases as rows, variant x score columns, mean +/- std over seeds,
//! and an average row), written as `results.json` and `report.md` plus
//! score-distribution plots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use ssadapt_core::training::Variant;

use crate::config::ExperimentConfig;
use crate::grid::plan_runs;
use crate::rundir::{is_done, read_summary, score_kinds_for};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CellStat {
    pub mean: f64,
    /// Sample standard deviation over seeds; absent for a single seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    pub seeds: Vec<f64>,
}

impl CellStat {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            Some(var.sqrt())
        } else {
            None
        };
        Self {
            mean,
            std,
            seeds: values.to_vec(),
        }
    }
}

/// results.json structure: kind -> case row ("case1".."case3", "avg") ->
/// variant -> score -> statistics. AUC values are percentages.
pub type ResultTable = BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, CellStat>>>>;

/// Collects summaries for all runs of the config. Missing variants are
/// tolerated (their columns are absent); missing seeds of a present variant
/// are an error.
pub fn collect(cfg: &ExperimentConfig) -> Result<(ResultTable, Vec<String>)> {
    let root = &cfg.experiment.output_root;
    let mut warnings = Vec::new();

    // (kind, case, variant, score) -> per-seed values.
    let mut cells: BTreeMap<(String, u8, String, String), Vec<f64>> = BTreeMap::new();
    let mut missing_variants: BTreeMap<String, usize> = BTreeMap::new();

    for key in plan_runs(cfg) {
        let dir = key.dir(root);
        if !is_done(&dir) || !dir.join("summary.json").exists() {
            *missing_variants.entry(key.variant.id().to_string()).or_default() += 1;
            continue;
        }
        let summary = read_summary(&dir)?;
        for (kind, table) in [
            ("seen", &summary.seen_auc_percent),
            ("unseen", &summary.unseen_auc_percent),
        ] {
            for (score, value) in table {
                cells
                    .entry((
                        kind.to_string(),
                        key.case_id,
                        summary.variant.clone(),
                        score.clone(),
                    ))
                    .or_default()
                    .push(*value);
            }
        }
    }
    for (variant, n) in missing_variants {
        warnings.push(format!(
            "variant {variant}: {n} run(s) not evaluated; column omitted where empty"
        ));
    }
    if cells.is_empty() {
        bail!(
            "no evaluated runs found under {} (run `ssadapt train` and `ssadapt evaluate`)",
            root.display()
        );
    }

    let mut table: ResultTable = BTreeMap::new();
    for ((kind, case_id, variant, score), values) in &cells {
        table
            .entry(kind.clone())
            .or_default()
            .entry(format!("case{case_id}"))
            .or_default()
            .entry(variant.clone())
            .or_default()
            .insert(score.clone(), CellStat::from_values(values));
    }

    // Average row over the cases present for each (variant, score).
    for kind in ["seen", "unseen"] {
        let Some(kind_table) = table.get(kind).cloned() else {
            continue;
        };
        let mut avg: BTreeMap<String, BTreeMap<String, CellStat>> = BTreeMap::new();
        let mut acc: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for (case_row, variants) in &kind_table {
            if case_row == "avg" {
                continue;
            }
            for (variant, scores) in variants {
                for (score, stat) in scores {
                    acc.entry((variant.clone(), score.clone()))
                        .or_default()
                        .push(stat.mean);
                }
            }
        }
        for ((variant, score), case_means) in acc {
            let mean = case_means.iter().sum::<f64>() / case_means.len() as f64;
            avg.entry(variant).or_default().insert(
                score,
                CellStat {
                    mean,
                    std: None,
                    seeds: case_means,
                },
            );
        }
        table.get_mut(kind).unwrap().insert("avg".to_string(), avg);
    }

    Ok((table, warnings))
}

fn fmt_cell(stat: &CellStat) -> String {
    match stat.std {
        Some(sd) => format!("{:.1} ± {:.1}", stat.mean, sd),
        None => format!("{:.1}", stat.mean),
    }
}

/// Renders one markdown table (seen or unseen) in the benchmark layout.
fn render_table(
    kind_table: &BTreeMap<String, BTreeMap<String, BTreeMap<String, CellStat>>>,
    variants: &[Variant],
) -> String {
    let mut columns: Vec<(Variant, &'static str)> = Vec::new();
    for v in variants {
        for kind in score_kinds_for(*v) {
            columns.push((*v, kind.id()));
        }
    }
    let mut out = String::from("| Case |");
    for (v, s) in &columns {
        out.push_str(&format!(" {} {} |", v.id(), s.to_uppercase()));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in &columns {
        out.push_str("---|");
    }
    out.push('\n');

    let mut rows: Vec<String> = kind_table
        .keys()
        .filter(|r| r.as_str() != "avg")
        .cloned()
        .collect();
    rows.sort();
    rows.push("avg".to_string());
    for row in rows {
        let Some(variants_map) = kind_table.get(&row) else {
            continue;
        };
        let label = if row == "avg" {
            "Avg.".to_string()
        } else {
            format!("Case {}", &row["case".len()..])
        };
        out.push_str(&format!("| {label} |"));
        for (v, s) in &columns {
            let cell = variants_map
                .get(v.id())
                .and_then(|scores| scores.get(*s))
                .map(fmt_cell)
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

pub fn report_paths(cfg: &ExperimentConfig) -> (PathBuf, PathBuf, PathBuf) {
    let root = &cfg.experiment.output_root;
    (
        root.join("results.json"),
        root.join("report.md"),
        root.join("plots"),
    )
}

/// Writes results.json, report.md, and the score-distribution plots.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let (table, warnings) = collect(cfg)?;
    let (json_path, md_path, plots_dir) = report_paths(cfg);

    std::fs::write(&json_path, serde_json::to_string_pretty(&table)?)?;

    let variants = cfg.variants();
    let mut md = String::new();
    md.push_str("# Benchmark results\n\n");
    md.push_str("AUC percentages on target-domain test data; mean ± sample std over seeds.\n");
    for (kind, title) in [
        ("seen", "Seen anomalies (normal vs seen-anomaly AUC)"),
        ("unseen", "Unseen anomalies (normal vs unseen-anomaly AUC)"),
    ] {
        if let Some(kind_table) = table.get(kind) {
            md.push_str(&format!("\n## {title}\n\n"));
            md.push_str(&render_table(kind_table, &variants));
        }
    }
    if !warnings.is_empty() {
        md.push_str("\n## Warnings\n\n");
        for w in &warnings {
            md.push_str(&format!("- {w}\n"));
        }
    }
    md.push_str("\nScore-distribution plots: see `plots/` (ELBO histograms per case and variant; for the unsupervised baseline the reconstruction score is plotted instead).\n");
    std::fs::write(&md_path, md)?;

    crate::plots::write_score_plots(cfg, &plots_dir)?;
    Ok(warnings)
}

/// Convenience accessor used by tests and the acceptance suite.
pub fn mean_auc(
    table: &ResultTable,
    kind: &str,
    case_row: &str,
    variant: Variant,
    score: &str,
) -> Option<f64> {
    table
        .get(kind)?
        .get(case_row)?
        .get(variant.id())?
        .get(score)
        .map(|c| c.mean)
}

pub fn results_json_path(root: &Path) -> PathBuf {
    root.join("results.json")
}
