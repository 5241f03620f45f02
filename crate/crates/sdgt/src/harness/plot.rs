//! Self-contained SVG convergence plots.
//!
//! One polyline per run, x = global round or cumulative communication
//! cost, y = any metrics column, optionally on a log scale.  The output
//! embeds everything (no scripts, no external assets) and is a pure
//! function of its inputs, so plots regenerate bit-identically.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::MetricsRecord;
use crate::{Error, Result};

/// What to put on the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XAxis {
    Round,
    Cost,
}

impl XAxis {
    fn label(self) -> &'static str {
        match self {
            XAxis::Round => "global round",
            XAxis::Cost => "cumulative communication cost",
        }
    }

    fn value(self, r: &MetricsRecord) -> f64 {
        match self {
            XAxis::Round => r.t as f64,
            XAxis::Cost => r.comm_cost_cum,
        }
    }
}

fn default_x_axis() -> XAxis {
    XAxis::Round
}

/// Plot parameters; `metric` is a CSV column name from the diagnostics
/// contract (`loss`, `grad_norm_sq`, `dist_to_opt_sq`, `Delta`, `Gamma`,
/// `Y`, `Z`, `comm_cost_cum`, `wall_clock`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub metric: String,
    #[serde(default = "default_x_axis")]
    pub x_axis: XAxis,
    #[serde(default)]
    pub log_y: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

/// One input curve of a plot-spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotInput {
    pub label: String,
    pub path: PathBuf,
}

/// On-disk plot description: parameters plus the CSVs to draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotFileSpec {
    #[serde(flatten)]
    pub plot: PlotSpec,
    pub inputs: Vec<PlotInput>,
    pub output: PathBuf,
}

impl PlotFileSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

const KNOWN_COLUMNS: &[&str] = &[
    "loss",
    "grad_norm_sq",
    "dist_to_opt_sq",
    "Delta",
    "Gamma",
    "Y",
    "Z",
    "comm_cost_cum",
    "wall_clock",
];

fn column(metric: &str, r: &MetricsRecord) -> Option<f64> {
    match metric {
        "loss" => Some(r.loss),
        "grad_norm_sq" => Some(r.grad_norm_sq),
        "dist_to_opt_sq" => r.dist_to_opt_sq,
        "Delta" => r.in_round_deviation,
        "Gamma" => r.round_end_deviation,
        "Y" => r.inter_tracker_gap,
        "Z" => r.in_subnet_tracker_gap,
        "comm_cost_cum" => Some(r.comm_cost_cum),
        "wall_clock" => Some(r.wall_clock),
        _ => None,
    }
}

fn escape_xml(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn fmt_value(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1e5 || a < 1e-3 {
        format!("{v:e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Evenly spaced "nice" ticks (1/2/5 x 10^k spacing) covering [min, max].
fn linear_ticks(min: f64, max: f64) -> Vec<f64> {
    let span = (max - min).max(f64::MIN_POSITIVE);
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    } * mag;
    let mut ticks = Vec::new();
    let mut v = (min / step).ceil() * step;
    while v <= max + step * 1e-9 {
        // Snap near-zero accumulation error so labels read "0", not "1e-17".
        ticks.push(if v.abs() < step * 1e-9 { 0.0 } else { v });
        v += step;
    }
    ticks
}

/// Ticks for a log10-transformed axis: decade marks when the range spans
/// at least one decade, otherwise nice ticks in log space.  Returns
/// (position in log space, label).
fn log_ticks(lmin: f64, lmax: f64) -> Vec<(f64, String)> {
    let lo = lmin.floor() as i64;
    let hi = lmax.ceil() as i64;
    let decades: Vec<i64> = (lo..=hi)
        .filter(|&k| (k as f64) >= lmin - 1e-9 && (k as f64) <= lmax + 1e-9)
        .collect();
    if decades.len() >= 2 {
        let stride = decades.len().div_ceil(9).max(1);
        return decades
            .iter()
            .step_by(stride)
            .map(|&k| {
                let label = if (-3..=3).contains(&k) {
                    fmt_value(10f64.powi(k as i32))
                } else {
                    format!("1e{k}")
                };
                (k as f64, label)
            })
            .collect();
    }
    linear_ticks(lmin, lmax)
        .into_iter()
        .map(|v| (v, fmt_value(10f64.powf(v))))
        .collect()
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 560.0;
const MARGIN_L: f64 = 76.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 46.0;
const MARGIN_B: f64 = 58.0;

/// Render the plot to SVG text.  Errors if a series is empty, the metric
/// column is unknown, or the column holds no plottable value in some series
/// (all-empty diagnostic column, or nothing positive under a log scale).
pub fn render_plot(series: &[(String, Vec<MetricsRecord>)], spec: &PlotSpec) -> Result<String> {
    if series.is_empty() {
        return Err(Error::config("plot needs at least one input series"));
    }
    if !KNOWN_COLUMNS.contains(&spec.metric.as_str()) {
        return Err(Error::Missing(format!(
            "unknown metric column {:?}; known columns: {}",
            spec.metric,
            KNOWN_COLUMNS.join(", ")
        )));
    }

    let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (label, records) in series {
        if records.is_empty() {
            return Err(Error::Missing(format!("run {label:?} has no records")));
        }
        let mut points = Vec::with_capacity(records.len());
        for r in records {
            let x = spec.x_axis.value(r);
            let Some(y) = column(&spec.metric, r) else {
                continue;
            };
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            if spec.log_y {
                if y > 0.0 {
                    points.push((x, y.log10()));
                }
            } else {
                points.push((x, y));
            }
        }
        if points.is_empty() {
            return Err(Error::Missing(format!(
                "column {} has no plottable values in run {label:?}{}",
                spec.metric,
                if spec.log_y {
                    " (log scale drops values <= 0)"
                } else {
                    ""
                }
            )));
        }
        curves.push((label.clone(), points));
    }

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, pts) in &curves {
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if x_min == x_max {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_min == y_max {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let y_pad = 0.04 * (y_max - y_min);
    y_min -= y_pad;
    y_max += y_pad;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| MARGIN_T + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    let mut svg = String::with_capacity(16 * 1024);
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"Helvetica, Arial, sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n"
    ));

    let title = spec
        .title
        .clone()
        .unwrap_or_else(|| format!("{} vs {}", spec.metric, spec.x_axis.label()));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" fill=\"#222\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        escape_xml(&title)
    ));

    // Grid and tick labels.
    for x in linear_ticks(x_min, x_max) {
        let gx = px(x);
        svg.push_str(&format!(
            "<line x1=\"{gx:.1}\" y1=\"{MARGIN_T}\" x2=\"{gx:.1}\" y2=\"{:.1}\" stroke=\"#e6e6e6\"/>\n",
            MARGIN_T + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{gx:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#444\">{}</text>\n",
            MARGIN_T + plot_h + 18.0,
            fmt_value(x)
        ));
    }
    let y_ticks: Vec<(f64, String)> = if spec.log_y {
        log_ticks(y_min, y_max)
    } else {
        linear_ticks(y_min, y_max)
            .into_iter()
            .map(|v| (v, fmt_value(v)))
            .collect()
    };
    for (y, label) in &y_ticks {
        let gy = py(*y);
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{gy:.1}\" x2=\"{:.1}\" y2=\"{gy:.1}\" stroke=\"#e6e6e6\"/>\n",
            MARGIN_L + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" fill=\"#444\">{}</text>\n",
            MARGIN_L - 8.0,
            gy + 4.0,
            escape_xml(label)
        ));
    }

    // Axes.
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
         fill=\"none\" stroke=\"#333\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#222\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0,
        spec.x_axis.label()
    ));
    let y_title = if spec.log_y {
        format!("{} (log10)", spec.metric)
    } else {
        spec.metric.clone()
    };
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#222\" \
         transform=\"rotate(-90 18 {:.1})\">{}</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape_xml(&y_title)
    ));

    // Curves.
    for (i, (_, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            coords.join(" ")
        ));
    }

    // Legend, top-right inside the plot area.
    let longest = curves.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0);
    let legend_w = 40.0 + 7.2 * longest as f64;
    let legend_h = 10.0 + 17.0 * curves.len() as f64;
    let lx = MARGIN_L + plot_w - legend_w - 10.0;
    let ly = MARGIN_T + 10.0;
    svg.push_str(&format!(
        "<rect x=\"{lx:.1}\" y=\"{ly:.1}\" width=\"{legend_w:.1}\" height=\"{legend_h:.1}\" \
         fill=\"#ffffff\" fill-opacity=\"0.85\" stroke=\"#cccccc\"/>\n"
    ));
    for (i, (label, _)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let row_y = ly + 17.0 * (i as f64 + 1.0) - 4.0;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{row_y:.1}\" x2=\"{:.1}\" y2=\"{row_y:.1}\" \
             stroke=\"{color}\" stroke-width=\"2.5\"/>\n",
            lx + 6.0,
            lx + 26.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#222\">{}</text>\n",
            lx + 32.0,
            row_y + 4.0,
            escape_xml(label)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Render and write atomically.  Nothing is written when rendering fails.
pub fn emit_plot(
    series: &[(String, Vec<MetricsRecord>)],
    spec: &PlotSpec,
    path: &Path,
) -> Result<()> {
    let svg = render_plot(series, spec)?;
    super::write_atomic(path, svg.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: u64, loss: f64, cost: f64, gap: Option<f64>) -> MetricsRecord {
        MetricsRecord {
            t,
            loss,
            grad_norm_sq: loss * 2.0,
            dist_to_opt_sq: Some(loss * 0.5),
            in_round_deviation: gap,
            round_end_deviation: gap,
            inter_tracker_gap: gap,
            in_subnet_tracker_gap: gap,
            comm_cost_cum: cost,
            wall_clock: 0.0,
        }
    }

    fn run(points: &[(u64, f64)]) -> Vec<MetricsRecord> {
        points
            .iter()
            .map(|&(t, l)| record(t, l, (t + 1) as f64 * 3.0, Some(l)))
            .collect()
    }

    #[test]
    fn renders_one_polyline_per_series_and_escapes_labels() {
        let series = vec![
            ("K<3>".to_string(), run(&[(0, 1.0), (1, 0.5), (2, 0.25)])),
            ("plain".to_string(), run(&[(0, 0.9), (1, 0.6)])),
        ];
        let spec = PlotSpec {
            metric: "loss".into(),
            x_axis: XAxis::Round,
            log_y: false,
            title: Some("a & b".into()),
        };
        let svg = render_plot(&series, &spec).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("K&lt;3&gt;"));
        assert!(svg.contains("a &amp; b"));
        assert!(svg.contains("global round"));
        assert!(!svg.contains("http://") || svg.contains("xmlns"), "no external refs");
    }

    #[test]
    fn cost_axis_and_log_scale_are_applied() {
        let series = vec![("run".to_string(), run(&[(0, 1.0), (1, 1e-4), (2, 1e-8)]))];
        let spec = PlotSpec {
            metric: "loss".into(),
            x_axis: XAxis::Cost,
            log_y: true,
            title: None,
        };
        let svg = render_plot(&series, &spec).unwrap();
        assert!(svg.contains("cumulative communication cost"));
        assert!(svg.contains("loss (log10)"));
        assert!(svg.contains("1e-8"));
    }

    #[test]
    fn log_scale_skips_nonpositive_and_errors_when_nothing_remains() {
        let mut records = run(&[(0, 0.0), (1, 0.0)]);
        let spec = PlotSpec {
            metric: "loss".into(),
            x_axis: XAxis::Round,
            log_y: true,
            title: None,
        };
        let err = render_plot(&[("zeros".into(), records.clone())], &spec).unwrap_err();
        assert!(err.to_string().contains("zeros"), "{err}");
        records.push(record(2, 0.5, 9.0, None));
        assert!(render_plot(&[("mixed".into(), records)], &spec).is_ok());
    }

    #[test]
    fn missing_or_unknown_columns_error_by_name() {
        let no_gaps: Vec<MetricsRecord> = run(&[(0, 1.0), (1, 0.5)])
            .into_iter()
            .map(|mut r| {
                r.inter_tracker_gap = None;
                r
            })
            .collect();
        let spec = |metric: &str| PlotSpec {
            metric: metric.into(),
            x_axis: XAxis::Round,
            log_y: false,
            title: None,
        };
        let err = render_plot(&[("base".into(), no_gaps.clone())], &spec("Y")).unwrap_err();
        assert!(err.to_string().contains('Y') && err.to_string().contains("base"), "{err}");
        let err = render_plot(&[("base".into(), no_gaps.clone())], &spec("bogus")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = render_plot(&[("empty".into(), Vec::new())], &spec("loss")).unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
        assert!(render_plot(&[], &spec("loss")).is_err());
    }

    #[test]
    fn emit_writes_nothing_on_error_and_is_deterministic_on_success() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("plot.svg");
        let spec = PlotSpec {
            metric: "loss".into(),
            x_axis: XAxis::Round,
            log_y: false,
            title: None,
        };
        assert!(emit_plot(&[("empty".into(), Vec::new())], &spec, &target).is_err());
        assert!(!target.exists());
        let series = vec![("ok".to_string(), run(&[(0, 2.0), (1, 1.0)]))];
        emit_plot(&series, &spec, &target).unwrap();
        let first = std::fs::read(&target).unwrap();
        emit_plot(&series, &spec, &target).unwrap();
        assert_eq!(std::fs::read(&target).unwrap(), first);
    }
}
