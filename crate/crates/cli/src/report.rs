//! Prediction files, report aggregation and scatter plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use jova_core::metrics::{MetricsReport, MetricsRow};
use jova_core::MetricsError;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_FILE: &str = "metrics.csv";

/// One test-set prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub scheme: String,
    pub seed: u64,
    pub fold: usize,
    pub compound_id: String,
    pub target_id: String,
    pub truth: f64,
    pub prediction: f64,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut rdr = csv::Reader::from_reader(file);
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| {
                MetricsError::MalformedRow {
                    line: i + 2,
                    reason: format!("{}: {e}", path.display()),
                }
                .into()
            })
        })
        .collect()
}

/// Files named `name` under `dir`, in sorted path order.
pub fn find_files(dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(CliError::io(&d))? {
            let path = entry.map_err(CliError::io(&d))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == name) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Metrics rows recomputed from predictions, one per `(scheme, seed, fold)`.
pub fn metrics_from_predictions(rows: &[PredictionRow]) -> Result<MetricsReport> {
    type Key<'a> = (&'a str, u64, usize);
    let mut groups: BTreeMap<Key, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let g = groups.entry((&r.scheme, r.seed, r.fold)).or_default();
        g.0.push(r.prediction);
        g.1.push(r.truth);
    }
    let mut report = MetricsReport::default();
    for ((scheme, seed, fold), (pred, truth)) in groups {
        report.push(MetricsRow::score(scheme, fold, seed, &pred, &truth)?);
    }
    Ok(report)
}

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;

/// Standalone SVG of predicted (y) against true (x) values on equal axes,
/// with the identity line.
pub fn scatter_svg(title: &str, points: &[(f64, f64)]) -> String {
    let finite: Vec<(f64, f64)> = points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let (mut lo, mut hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| (lo.min(x).min(y), hi.max(x).max(y)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot = SIZE - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - lo) / (hi - lo) * plot;
    let py = |y: f64| SIZE - MARGIN - (y - lo) / (hi - lo) * plot;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, SIZE / 2.0, escape(title));
    let (a, b) = (MARGIN, SIZE - MARGIN);
    let _ = writeln!(s, r#"<rect x="{a}" y="{a}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r##"<line class="identity" x1="{a}" y1="{b}" x2="{b}" y2="{a}" stroke="#888" stroke-dasharray="4 3"/>"##
    );
    for v in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(s, r#"<text x="{:.3}" y="{}" text-anchor="middle">{v:.2}</text>"#, px(v), b + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.3}" text-anchor="end">{v:.2}</text>"#, a - 6.0, py(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">true affinity</text>"#, SIZE / 2.0, SIZE - 16.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">predicted affinity</text>"#,
        SIZE / 2.0
    );
    for &(x, y) in &finite {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.3}" cy="{:.3}" r="2.5" fill="#1f77b4" fill-opacity="0.6" data-true="{x}" data-pred="{y}"/>"##,
            px(x),
            py(y)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Aggregated table plus one scatter file per scheme in `out`.
pub fn write_report(out: &Path, metrics: &MetricsReport, predictions: &[PredictionRow]) -> Result<String> {
    std::fs::create_dir_all(out).map_err(CliError::io(out))?;
    let table = metrics.table();
    let summary = out.join("summary.txt");
    File::create(&summary)
        .and_then(|mut f| f.write_all(table.as_bytes()))
        .map_err(CliError::io(&summary))?;

    let mut by_scheme: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for p in predictions {
        by_scheme.entry(&p.scheme).or_default().push((p.truth, p.prediction));
    }
    for (scheme, points) in by_scheme {
        let path = out.join(format!("scatter_{scheme}.svg"));
        let svg = scatter_svg(&format!("{scheme}: predicted vs true ({} pairs)", points.len()), &points);
        std::fs::write(&path, svg).map_err(CliError::io(&path))?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(tag: &str, name: &str) -> f64 {
        let start = tag.find(&format!(" {name}=\"")).unwrap() + name.len() + 3;
        let end = start + tag[start..].find('"').unwrap();
        tag[start..end].parse().unwrap()
    }

    #[test]
    fn perfect_predictions_sit_on_the_identity_line() {
        let pts: Vec<(f64, f64)> = [4.2, 5.0, 6.7, 9.1, 7.3].iter().map(|&v| (v, v)).collect();
        let svg = scatter_svg("t", &pts);
        let circles: Vec<&str> = svg.lines().filter(|l| l.starts_with("<circle")).collect();
        assert_eq!(circles.len(), 5);
        for c in circles {
            assert_eq!(attr(c, "data-true"), attr(c, "data-pred"));
            let (cx, cy) = (attr(c, "cx"), attr(c, "cy"));
            // identity line runs from (MARGIN, SIZE-MARGIN) to (SIZE-MARGIN, MARGIN)
            assert!((cx - MARGIN - (SIZE - MARGIN - cy)).abs() < 2e-3, "{c}");
        }
    }

    #[test]
    fn empty_and_constant_inputs_render() {
        assert!(scatter_svg("empty", &[]).ends_with("</svg>\n"));
        let svg = scatter_svg("const", &[(1.0, 1.0), (1.0, 1.0)]);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn metrics_recomputed_per_fold() {
        let row = |fold, truth: f64, prediction| PredictionRow {
            scheme: "warm".into(),
            seed: 1,
            fold,
            compound_id: "c".into(),
            target_id: "t".into(),
            truth,
            prediction,
        };
        let rows = vec![row(0, 1.0, 1.0), row(0, 2.0, 2.0), row(1, 1.0, 2.0), row(1, 2.0, 1.0)];
        let rep = metrics_from_predictions(&rows).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0].rmse, 0.0);
        assert_eq!(rep.rows[1].rmse, 1.0);
        assert_eq!(rep.rows[1].ci, 0.0);
    }
}
