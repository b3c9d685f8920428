//! Result tables and cost-versus-accuracy scatter plots.

use crate::error::{Error, Result};

use super::config::Method;
use super::run::RunResult;

fn method_order(key: &str) -> usize {
    Method::ALL.iter().position(|m| m.key() == key).unwrap_or(usize::MAX)
}

fn method_display(key: &str) -> String {
    Method::ALL
        .iter()
        .find(|m| m.key() == key)
        .map(|m| m.display().to_string())
        .unwrap_or_else(|| key.to_string())
}

/// Deduplicate on (method, depth) keeping the latest entry, then sort rows
/// by method order and depth. Returns the kept rows plus dedup warnings.
fn prepare(results: &[RunResult]) -> (Vec<RunResult>, Vec<String>) {
    let mut kept: Vec<RunResult> = Vec::new();
    let mut warnings = Vec::new();
    for r in results {
        if let Some(prev) = kept.iter_mut().find(|k| k.method == r.method && k.depth == r.depth) {
            warnings.push(format!(
                "duplicate result for {} / ResNet {}; keeping the latest",
                method_display(&r.method),
                r.depth
            ));
            *prev = r.clone();
        } else {
            kept.push(r.clone());
        }
    }
    kept.sort_by(|a, b| {
        method_order(&a.method).cmp(&method_order(&b.method)).then(a.depth.cmp(&b.depth))
    });
    (kept, warnings)
}

/// Aligned text table: rows grouped by method then depth, costs and
/// accuracies to two decimals. Byte-stable for identical input.
pub fn emit_results_table(results: &[RunResult]) -> (String, Vec<String>) {
    let (rows, warnings) = prepare(results);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} | {:<10} | {:>9} | {:>12}\n",
        "Method", "Model", "MegaFLOPs", "Accuracy (%)"
    ));
    out.push_str(&format!("{:-<17}+{:-<12}+{:-<11}+{:-<13}\n", "", "", "", ""));
    for r in rows {
        out.push_str(&format!(
            "{:<16} | {:<10} | {:>9.2} | {:>12.2}\n",
            method_display(&r.method),
            format!("ResNet {}", r.depth),
            r.mega_flops,
            r.accuracy
        ));
    }
    (out, warnings)
}

/// Machine-readable companion of the table.
pub fn results_csv(results: &[RunResult]) -> String {
    let (rows, _) = prepare(results);
    let mut out = String::from("method,depth,mega_flops,accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.2},{:.2}\n", r.method, r.depth, r.mega_flops, r.accuracy));
    }
    out
}

/// One polyline of the scatter plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(mega_flops, accuracy)` sorted by cost.
    pub points: Vec<(f64, f64)>,
}

/// Cost-versus-accuracy plot data plus its SVG rendering.
#[derive(Debug, Clone)]
pub struct ScatterPlot {
    pub series: Vec<Series>,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn padded(min: f64, max: f64) -> (f64, f64) {
    // 5% padding on each side; degenerate ranges widen around the value.
    let span = max - min;
    let pad = if span > 0.0 { 0.05 * span } else { (max.abs() * 0.05).max(1.0) };
    (min - pad, max + pad)
}

/// Group results by method into cost-sorted series.
pub fn build_scatter(results: &[RunResult]) -> Result<ScatterPlot> {
    if results.is_empty() {
        return Err(Error::contract("scatter plot needs at least one result".to_string()));
    }
    let (rows, _) = prepare(results);
    let mut series: Vec<Series> = Vec::new();
    for r in &rows {
        let label = method_display(&r.method);
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((r.mega_flops, r.accuracy)),
            None => series.push(Series { label, points: vec![(r.mega_flops, r.accuracy)] }),
        }
    }
    for s in series.iter_mut() {
        s.points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite costs"));
    }
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let fold = |v: &[f64], init, f: fn(f64, f64) -> f64| v.iter().fold(init, |a, &b| f(a, b));
    let x_range = padded(fold(&xs, f64::INFINITY, f64::min), fold(&xs, f64::NEG_INFINITY, f64::max));
    let y_range = padded(fold(&ys, f64::INFINITY, f64::min), fold(&ys, f64::NEG_INFINITY, f64::max));
    Ok(ScatterPlot { series, x_range, y_range })
}

impl ScatterPlot {
    fn x_px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        MARGIN_L + (x - lo) / (hi - lo) * (SVG_W - MARGIN_L - MARGIN_R)
    }

    fn y_px(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        SVG_H - MARGIN_B - (y - lo) / (hi - lo) * (SVG_H - MARGIN_T - MARGIN_B)
    }

    /// Deterministic SVG rendering: identical input yields identical bytes.
    pub fn to_svg(&self) -> String {
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
        ));
        svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

        // Axes.
        let (x0, y0) = (MARGIN_L, SVG_H - MARGIN_B);
        let (x1, y1) = (SVG_W - MARGIN_R, MARGIN_T);
        svg.push_str(&format!(
            "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"black\"/>\n"
        ));
        svg.push_str(&format!(
            "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\" stroke=\"black\"/>\n"
        ));

        // Ticks and labels.
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x_range.0 + f * (self.x_range.1 - self.x_range.0);
            let xp = self.x_px(xv);
            svg.push_str(&format!(
                "<line x1=\"{xp:.2}\" y1=\"{y0:.2}\" x2=\"{xp:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
                y0 + 5.0
            ));
            svg.push_str(&format!(
                "<text x=\"{xp:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{xv:.1}</text>\n",
                y0 + 18.0
            ));
            let yv = self.y_range.0 + f * (self.y_range.1 - self.y_range.0);
            let yp = self.y_px(yv);
            svg.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{yp:.2}\" x2=\"{x0:.2}\" y2=\"{yp:.2}\" stroke=\"black\"/>\n",
                x0 - 5.0
            ));
            svg.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{yv:.1}</text>\n",
                x0 - 8.0,
                yp + 4.0
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">MegaFLOPs</text>\n",
            (x0 + x1) / 2.0,
            SVG_H - 20.0
        ));
        svg.push_str(&format!(
            "<text x=\"18\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">Accuracy (%)</text>\n",
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0
        ));

        // Series polylines, markers, legend.
        for (si, s) in self.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            if s.points.len() > 1 {
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", self.x_px(x), self.y_px(y)))
                    .collect();
                svg.push_str(&format!(
                    "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                    pts.join(" ")
                ));
            }
            for &(x, y) in &s.points {
                svg.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                    self.x_px(x),
                    self.y_px(y)
                ));
            }
            let ly = MARGIN_T + 14.0 * si as f64;
            svg.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"3\"/>\n",
                x1 - 150.0,
                x1 - 130.0
            ));
            svg.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{}</text>\n",
                x1 - 124.0,
                ly + 4.0,
                s.label
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(method: &str, depth: usize, mflops: f64, acc: f64) -> RunResult {
        RunResult {
            method: method.into(),
            depth,
            mega_flops: mflops,
            accuracy: acc,
            config_hash: "deadbeef".into(),
            checkpoint: String::new(),
        }
    }

    #[test]
    fn empty_input_yields_header_only_table() {
        let (table, warnings) = emit_results_table(&[]);
        assert_eq!(table.lines().count(), 2);
        assert!(table.starts_with("Method"));
        assert!(warnings.is_empty());
    }

    #[test]
    fn duplicates_keep_the_latest_and_warn() {
        let rows = vec![run("control", 20, 40.55, 90.0), run("control", 20, 40.55, 91.63)];
        let (table, warnings) = emit_results_table(&rows);
        assert_eq!(warnings.len(), 1);
        assert!(table.contains("91.63") && !table.contains("90.00"));
    }

    #[test]
    fn rows_group_by_method_then_depth() {
        let rows = vec![
            run("prune", 20, 34.37, 91.09),
            run("control", 110, 252.89, 92.58),
            run("control", 20, 40.55, 91.63),
        ];
        let (table, _) = emit_results_table(&rows);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[2].starts_with("Control") && lines[2].contains("ResNet 20"));
        assert!(lines[3].starts_with("Control") && lines[3].contains("ResNet 110"));
        assert!(lines[4].starts_with("Pruning"));
    }

    #[test]
    fn single_point_plot_has_one_marker_and_padded_axes() {
        let plot = build_scatter(&[run("control", 20, 40.55, 91.63)]).unwrap();
        assert_eq!(plot.series.len(), 1);
        assert_eq!(plot.series[0].points.len(), 1);
        assert!(plot.x_range.0 < 40.55 && plot.x_range.1 > 40.55);
        let svg = plot.to_svg();
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn identical_input_gives_identical_svg_bytes() {
        let rows =
            vec![run("control", 20, 40.55, 91.63), run("control", 32, 68.86, 92.11)];
        let a = build_scatter(&rows).unwrap().to_svg();
        let b = build_scatter(&rows).unwrap().to_svg();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_plot_is_rejected() {
        assert!(build_scatter(&[]).is_err());
    }
}
