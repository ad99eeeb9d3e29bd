//! Cross-run comparison reports: juxtaposes run summaries (e.g. assist on
//! vs off) and computes per-group ratios against the first run, with
//! optional static SVG bar charts.

use serde::Serialize;
use serde_json::Value;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("summary not found in `{0}`")]
    MissingSummary(PathBuf),
    #[error("corrupt summary `{path}`: {source}")]
    CorruptSummary {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Serialize)]
pub struct RunEntry {
    pub dir: String,
    pub summary: Value,
}

/// Per-group metric ratios, one entry per run, relative to the first run.
/// `null` marks a ratio against a zero baseline.
#[derive(Debug, Serialize)]
pub struct GroupRatios {
    pub pdr: Vec<Option<f64>>,
    pub goodput_bps: Vec<Option<f64>>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub runs: Vec<RunEntry>,
    pub ratios: BTreeMap<String, GroupRatios>,
}

fn group_metric(summary: &Value, group: &str, metric: &str) -> Option<f64> {
    summary.get(group)?.get(metric)?.as_f64()
}

fn ratio(base: Option<f64>, value: Option<f64>) -> Option<f64> {
    match (base, value) {
        (Some(b), Some(v)) if b != 0.0 => Some(v / b),
        (Some(b), Some(v)) if b == 0.0 && v == 0.0 => Some(1.0),
        _ => None,
    }
}

/// Reads `summary.json` from every run directory and juxtaposes them. The
/// first directory is the baseline for all ratios; a single run compares to
/// itself (identity ratios).
pub fn build_report(run_dirs: &[PathBuf]) -> Result<Report, ReportError> {
    let mut runs = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        let path = dir.join("summary.json");
        if !path.exists() {
            return Err(ReportError::MissingSummary(dir.clone()));
        }
        let text = fs::read_to_string(&path)?;
        let summary: Value =
            serde_json::from_str(&text).map_err(|source| ReportError::CorruptSummary {
                path: path.clone(),
                source,
            })?;
        runs.push(RunEntry {
            dir: dir.display().to_string(),
            summary,
        });
    }

    let mut groups: Vec<String> = Vec::new();
    for run in &runs {
        if let Some(map) = run.summary.as_object() {
            for key in map.keys().filter(|k| k.as_str() != "run") {
                if !groups.contains(key) {
                    groups.push(key.clone());
                }
            }
        }
    }
    groups.sort();

    let mut ratios = BTreeMap::new();
    for group in groups {
        let base = &runs[0].summary;
        let entry = GroupRatios {
            pdr: runs
                .iter()
                .map(|r| {
                    ratio(
                        group_metric(base, &group, "pdr"),
                        group_metric(&r.summary, &group, "pdr"),
                    )
                })
                .collect(),
            goodput_bps: runs
                .iter()
                .map(|r| {
                    ratio(
                        group_metric(base, &group, "goodput_bps"),
                        group_metric(&r.summary, &group, "goodput_bps"),
                    )
                })
                .collect(),
        };
        ratios.insert(group, entry);
    }

    Ok(Report { runs, ratios })
}

/// Writes `report.json`; with `svg` set, also writes `<stem>_pdr.svg` and
/// `<stem>_goodput.svg` bar charts next to it.
pub fn write_report(
    report: &Report,
    out_path: &Path,
    svg: bool,
) -> Result<Vec<PathBuf>, ReportError> {
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut written = vec![out_path.to_path_buf()];
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    fs::write(out_path, json)?;

    if svg {
        for (metric, max_is_one) in [("pdr", true), ("goodput_bps", false)] {
            let path = svg_path(out_path, metric);
            fs::write(&path, render_bar_chart(report, metric, max_is_one))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn svg_path(out_path: &Path, metric: &str) -> PathBuf {
    let stem = out_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "report".to_string());
    let metric = metric.trim_end_matches("_bps");
    out_path.with_file_name(format!("{stem}_{metric}.svg"))
}

/// Minimal grouped bar chart: one cluster per group key, one bar per run.
fn render_bar_chart(report: &Report, metric: &str, max_is_one: bool) -> String {
    const BAR_W: f64 = 22.0;
    const GAP: f64 = 30.0;
    const PLOT_H: f64 = 220.0;
    const MARGIN: f64 = 46.0;

    let groups: Vec<&String> = report.ratios.keys().collect();
    let n_runs = report.runs.len().max(1);
    let cluster_w = BAR_W * n_runs as f64 + GAP;
    let width = MARGIN * 2.0 + cluster_w * groups.len().max(1) as f64;
    let height = PLOT_H + 70.0;

    let mut max_v = if max_is_one { 1.0 } else { f64::MIN_POSITIVE };
    for group in &groups {
        for run in &report.runs {
            if let Some(v) = group_metric(&run.summary, group, metric) {
                max_v = max_v.max(v);
            }
        }
    }

    let palette = [
        "#4878cf", "#ee854a", "#6acc65", "#d65f5f", "#956cb4", "#8c613c",
    ];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         font-family=\"sans-serif\" font-size=\"11\">\n\
         <text x=\"{MARGIN}\" y=\"16\" font-size=\"13\">{metric} per layer:rat group</text>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{y}\" x2=\"{x2:.0}\" y2=\"{y}\" stroke=\"#333\"/>",
        y = PLOT_H + 24.0,
        x2 = width - MARGIN / 2.0,
    );
    for (gi, group) in groups.iter().enumerate() {
        let x0 = MARGIN + gi as f64 * cluster_w;
        for (ri, run) in report.runs.iter().enumerate() {
            let v = group_metric(&run.summary, group, metric).unwrap_or(0.0);
            let h = if max_v > 0.0 { v / max_v * PLOT_H } else { 0.0 };
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{BAR_W:.1}\" height=\"{h:.1}\" \
                 fill=\"{color}\"><title>{group} run {ri}: {v}</title></rect>",
                x = x0 + ri as f64 * BAR_W,
                y = PLOT_H + 24.0 - h,
                color = palette[ri % palette.len()],
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{x:.1}\" y=\"{y}\" transform=\"rotate(30 {x:.1} {y})\">{group}</text>",
            x = x0,
            y = PLOT_H + 40.0,
        );
    }
    for (ri, run) in report.runs.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.0}\" y=\"24\" width=\"10\" height=\"10\" fill=\"{color}\"/>\
             <text x=\"{tx:.0}\" y=\"33\">{dir}</text>",
            x = MARGIN + ri as f64 * 180.0,
            tx = MARGIN + ri as f64 * 180.0 + 14.0,
            color = palette[ri % palette.len()],
            dir = run.dir,
        );
    }
    svg.push_str("</svg>\n");
    svg
}
