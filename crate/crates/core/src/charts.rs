//! Static SVG line charts from sweep tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::MetricsRecord;
use crate::experiment::read_metrics_csv;
use crate::format::write_file;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One point: x, median, min, max over trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryPoint {
    pub x: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<SummaryPoint>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Groups rows by `(learner, m_hyper)` and summarizes `metric` across trials
/// at each N.
pub fn summarize(
    records: &[MetricsRecord],
    include: impl Fn(&MetricsRecord) -> bool,
    metric: impl Fn(&MetricsRecord) -> f64,
) -> Vec<Series> {
    let mut groups: BTreeMap<(String, usize), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records.iter().filter(|r| include(r)) {
        let v = metric(r);
        if v.is_finite() {
            groups
                .entry((r.learner.clone(), r.m_hyper))
                .or_default()
                .entry(r.n_train)
                .or_default()
                .push(v);
        }
    }
    groups
        .into_iter()
        .map(|((learner, m), by_n)| Series {
            label: format!("{learner} m={m}"),
            points: by_n
                .into_iter()
                .map(|(n, vals)| SummaryPoint {
                    x: n as f64,
                    median: median(&vals),
                    min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                    max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                })
                .collect(),
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders series on a log10 x axis and a linear y axis.
pub fn line_chart_svg(title: &str, y_label: &str, series: &[Series], whiskers: bool) -> String {
    let points = series.iter().flat_map(|s| s.points.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        let lx = p.x.max(1e-300).log10();
        x_lo = x_lo.min(lx);
        x_hi = x_hi.max(lx);
        let (lo, hi) = if whiskers { (p.min, p.max) } else { (p.median, p.median) };
        y_lo = y_lo.min(lo);
        y_hi = y_hi.max(hi);
    }
    if !x_lo.is_finite() {
        (x_lo, x_hi, y_lo, y_hi) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_hi - x_lo < 1e-9 {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    y_lo = y_lo.min(0.0);
    if y_hi - y_lo < 1e-12 {
        y_hi = y_lo + 1.0;
    }
    y_hi += 0.05 * (y_hi - y_lo);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x.max(1e-300).log10() - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );
    // axes
    let (x0, y0, x1, y1) = (MARGIN_LEFT, MARGIN_TOP + plot_h, MARGIN_LEFT + plot_w, MARGIN_TOP);
    let _ = writeln!(svg, r#"<path d="M{x0:.2} {y1:.2} L{x0:.2} {y0:.2} L{x1:.2} {y0:.2}" stroke="black" fill="none"/>"#);
    for decade in (x_lo.ceil() as i64)..=(x_hi.floor() as i64) {
        let x = sx(10f64.powi(decade as i32));
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{decade}</text>"#,
            y0 + 5.0,
            y0 + 20.0
        );
    }
    for k in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            x0,
            x0 - 6.0,
            y + 4.0,
            format_tick(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">training sequences N</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| format!("{}{:.2} {:.2}", if k == 0 { "M" } else { "L" }, sx(p.x), sy(p.median)))
            .collect();
        let _ = writeln!(svg, r#"<path d="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, path.join(" "));
        for p in &s.points {
            let (cx, cy) = (sx(p.x), sy(p.median));
            if whiskers {
                let _ = writeln!(
                    svg,
                    r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{color}"/>"#,
                    sy(p.min),
                    sy(p.max)
                );
            }
            let _ = writeln!(svg, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{color}"/>"#);
        }
        let ly = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Writes `<experiment_id>_l1.svg`, `<experiment_id>_neg_prop.svg` and
/// `<experiment_id>_em_vs_spectral.svg` for every experiment in the table.
/// Nothing is written if the table has no rows.
pub fn render_records(records: &[MetricsRecord], output_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::invalid("metrics table has no data rows"));
    }
    let mut by_experiment: BTreeMap<&str, Vec<MetricsRecord>> = BTreeMap::new();
    for r in records {
        by_experiment.entry(&r.experiment_id).or_default().push(r.clone());
    }

    let mut rendered = Vec::new();
    for (id, rows) in &by_experiment {
        let spectral = |r: &MetricsRecord| r.learner == "spectral";
        let charts = [
            (
                "l1",
                line_chart_svg(&format!("{id}: normalized L1"), "L1", &summarize(rows, spectral, |r| r.l1), false),
            ),
            (
                "neg_prop",
                line_chart_svg(
                    &format!("{id}: negative probability proportion"),
                    "NEG_PROP",
                    &summarize(rows, spectral, |r| r.neg_prop),
                    false,
                ),
            ),
            (
                "em_vs_spectral",
                line_chart_svg(
                    &format!("{id}: EM vs spectral"),
                    "L1",
                    &summarize(rows, |r| r.learner != "true-model", |r| r.l1),
                    true,
                ),
            ),
        ];
        for (metric, svg) in charts {
            rendered.push((output_dir.join(format!("{id}_{metric}.svg")), svg));
        }
    }
    for (path, svg) in &rendered {
        write_file(path, svg)?;
    }
    Ok(rendered.into_iter().map(|(p, _)| p).collect())
}

pub fn render_charts(csv_path: &Path, output_dir: &Path) -> Result<Vec<PathBuf>> {
    render_records(&read_metrics_csv(csv_path)?, output_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(learner: &str, n: usize, m: usize, trial: usize, l1: f64) -> MetricsRecord {
        MetricsRecord {
            experiment_id: "t".into(),
            learner: learner.into(),
            n_train: n,
            m_hyper: m,
            trial,
            seed: 0,
            l1,
            neg_prop: 0.1,
            loglik: -1.0,
            wall_time_ms: 0.0,
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn summary_groups_by_learner_and_rank() {
        let rows = vec![
            row("spectral", 100, 2, 0, 1.0),
            row("spectral", 100, 2, 1, 3.0),
            row("spectral", 1000, 2, 0, 0.5),
            row("em", 100, 2, 0, 0.2),
        ];
        let s = summarize(&rows, |_| true, |r| r.l1);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].label, "spectral m=2");
        assert_eq!(s[1].points[0], SummaryPoint { x: 100.0, median: 2.0, min: 1.0, max: 3.0 });
    }

    #[test]
    fn empty_table_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(render_records(&[], dir.path()).is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn single_cell_renders_one_point_per_series() {
        let dir = tempfile::tempdir().unwrap();
        let files = render_records(&[row("spectral", 100, 2, 0, 1.0)], dir.path()).unwrap();
        let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["t_l1.svg", "t_neg_prop.svg", "t_em_vs_spectral.svg"]);
        let svg = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
    }
}
