//! Static score-distribution plots: per case and variant, overlaid
//! histograms of the anomaly score for normal, seen-anomaly, and
//! unseen-anomaly test samples, rendered directly to PNG.
//!
//! Colors: normal = blue, seen anomaly = red, unseen anomaly = orange; the
//! legend lives in the report text, keeping the renderer free of font
//! dependencies.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

use ssadapt_core::Role;

use crate::config::ExperimentConfig;
use crate::grid::plan_runs;
use crate::rundir::role_id;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 20;
const BINS: usize = 60;

fn color_for(role: Role) -> Rgb<u8> {
    match role {
        Role::Normal => Rgb([40, 90, 200]),
        Role::SeenAnomaly => Rgb([200, 50, 50]),
        Role::UnseenAnomaly => Rgb([235, 150, 30]),
    }
}

fn blend(dst: &mut Rgb<u8>, src: Rgb<u8>, alpha: f64) {
    for i in 0..3 {
        dst[i] = (dst[i] as f64 * (1.0 - alpha) + src[i] as f64 * alpha) as u8;
    }
}

/// Renders overlaid histograms of `(score, role)` pairs.
pub fn histogram_png(points: &[(f64, Role)], path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));

    let finite: Vec<f64> = points.iter().map(|(s, _)| *s).filter(|s| s.is_finite()).collect();
    if finite.is_empty() {
        img.save(path).context("writing empty plot")?;
        return Ok(());
    }
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);

    // Per-role bin counts.
    let roles = [Role::Normal, Role::SeenAnomaly, Role::UnseenAnomaly];
    let mut counts = [[0usize; BINS]; 3];
    for (s, role) in points {
        if !s.is_finite() {
            continue;
        }
        let bin = (((s - lo) / span) * (BINS as f64 - 1e-9)) as usize;
        let ri = roles.iter().position(|r| r == role).unwrap();
        counts[ri][bin.min(BINS - 1)] += 1;
    }
    let peak = counts
        .iter()
        .flat_map(|c| c.iter())
        .cloned()
        .max()
        .unwrap_or(1)
        .max(1) as f64;

    let plot_w = WIDTH - 2 * MARGIN;
    let plot_h = HEIGHT - 2 * MARGIN;

    // Axes.
    for x in MARGIN..WIDTH - MARGIN {
        img.put_pixel(x, HEIGHT - MARGIN, Rgb([0, 0, 0]));
    }
    for y in MARGIN..HEIGHT - MARGIN {
        img.put_pixel(MARGIN, y, Rgb([0, 0, 0]));
    }

    // Translucent filled bars per role.
    let bin_w = plot_w as f64 / BINS as f64;
    for (ri, role) in roles.iter().enumerate() {
        let color = color_for(*role);
        for (b, &count) in counts[ri].iter().enumerate() {
            if count == 0 {
                continue;
            }
            let h = ((count as f64 / peak) * (plot_h as f64 - 2.0)) as u32;
            let x0 = MARGIN + (b as f64 * bin_w) as u32;
            let x1 = MARGIN + (((b + 1) as f64 * bin_w) as u32).min(plot_w);
            for x in x0..x1.max(x0 + 1) {
                for dy in 0..h {
                    let y = HEIGHT - MARGIN - 1 - dy;
                    blend(img.get_pixel_mut(x, y), color, 0.35);
                }
            }
        }
    }

    img.save(path)
        .with_context(|| format!("writing plot {}", path.display()))
}

/// One plot per (case, variant): the ELBO score distribution by role (the
/// reconstruction score for the unsupervised baseline, whose other scores
/// are undefined).
pub fn write_score_plots(cfg: &ExperimentConfig, plots_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(plots_dir)?;
    let root = &cfg.experiment.output_root;
    let mut done: std::collections::BTreeSet<(u8, &'static str)> = Default::default();
    for key in plan_runs(cfg) {
        if !done.insert((key.case_id, key.variant.id())) {
            continue; // one plot per (case, variant): first seed wins
        }
        let dir = key.dir(root);
        let scores_path = dir.join("scores.csv");
        if !scores_path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&scores_path)?;
        let use_elbo = !matches!(key.variant, ssadapt_core::training::Variant::Vae);
        let mut points = Vec::new();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                continue;
            }
            let role = match cols[1] {
                r if r == role_id(Role::Normal) => Role::Normal,
                r if r == role_id(Role::SeenAnomaly) => Role::SeenAnomaly,
                r if r == role_id(Role::UnseenAnomaly) => Role::UnseenAnomaly,
                _ => continue,
            };
            let value: f64 = if use_elbo {
                cols[4].parse().unwrap_or(f64::NAN)
            } else {
                cols[2].parse().unwrap_or(f64::NAN)
            };
            points.push((value, role));
        }
        let score_name = if use_elbo { "elbo" } else { "rl" };
        let out = plots_dir.join(format!(
            "case{}_{}_{score_name}.png",
            key.case_id,
            key.variant.id()
        ));
        histogram_png(&points, &out)?;
    }
    Ok(())
}
