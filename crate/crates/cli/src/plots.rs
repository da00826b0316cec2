//! Minimal SVG charts for run outputs.
//!
//! Fixed 800x500 canvas, one polyline per series, straightforward ticks.
//! Kept dependency-free on purpose: these files exist so a run directory
//! can be eyeballed without firing up a notebook.

use std::fmt::Write as _;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f",
];

/// One named line on a chart.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

struct Scale {
    lo: f64,
    hi: f64,
    out_lo: f64,
    out_hi: f64,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, out_lo: f64, out_hi: f64) -> Scale {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            // Degenerate span: pad so the lone value sits mid-axis.
            lo -= 0.5;
            hi += 0.5;
        }
        Scale { lo, hi, out_lo, out_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.out_lo + (v - self.lo) / (self.hi - self.lo) * (self.out_hi - self.out_lo)
    }

    fn ticks(&self, count: usize) -> Vec<f64> {
        (0..=count)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / count as f64)
            .collect()
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1e4 || a < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Draws every series as a polyline over shared axes. Panics never;
/// charts with no finite points come out as empty axes.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let points = || {
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite())
    };
    let xs = Scale::new(points().map(|&(x, _)| x), MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    // SVG y grows downward, so the value axis maps high-to-low.
    let ys = Scale::new(points().map(|&(_, y)| y), HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);

    let mut svg = header(title);
    axes(&mut svg, &xs, &ys, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        for &(x, y) in &s.points {
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            let _ = write!(path, "{:.2},{:.2} ", xs.map(x), ys.map(y));
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            path.trim_end()
        );
        for &(x, y) in &s.points {
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                xs.map(x),
                ys.map(y)
            );
        }
    }
    legend(&mut svg, series.iter().map(|s| s.name.as_str()));
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bar chart: one group per bin, one bar per series. Used for
/// the compare histogram.
pub fn bar_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    bin_edges: &[(f64, f64)],
    series: &[Series],
) -> String {
    let top = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(_, y)| y))
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let xs = Scale::new(
        bin_edges.iter().flat_map(|&(lo, hi)| [lo, hi]).filter(|v| v.is_finite()),
        MARGIN_LEFT,
        WIDTH - MARGIN_RIGHT,
    );
    let ys = Scale {
        lo: 0.0,
        hi: top,
        out_lo: HEIGHT - MARGIN_BOTTOM,
        out_hi: MARGIN_TOP,
    };

    let mut svg = header(title);
    axes(&mut svg, &xs, &ys, x_label, y_label);
    let lanes = series.len().max(1) as f64;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for (bin, &(_, count)) in s.points.iter().enumerate() {
            let Some(&(lo, hi)) = bin_edges.get(bin) else { break };
            let full = xs.map(hi) - xs.map(lo);
            let lane = full / lanes;
            let x0 = xs.map(lo) + lane * i as f64;
            let y0 = ys.map(count);
            let h = ys.map(0.0) - y0;
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.8\"/>",
                x0,
                y0,
                (lane - 1.0).max(0.5),
                h.max(0.0)
            );
        }
    }
    legend(&mut svg, series.iter().map(|s| s.name.as_str()));
    svg.push_str("</svg>\n");
    svg
}

fn header(title: &str) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.0}\" y=\"22\" text-anchor=\"middle\" font-size=\"16\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    svg
}

fn axes(svg: &mut String, xs: &Scale, ys: &Scale, x_label: &str, y_label: &str) {
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    let _ = writeln!(
        svg,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    for tick in xs.ticks(5) {
        let x = xs.map(tick);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            y0 + 20.0,
            tick_label(tick)
        );
    }
    for tick in ys.ticks(5) {
        let y = ys.map(tick);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\"/>",
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            x0 - 8.0,
            y + 4.0,
            tick_label(tick)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{:.0}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.0})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend<'a>(svg: &mut String, names: impl Iterator<Item = &'a str>) {
    for (i, name) in names.enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MARGIN_TOP + 8.0 + 18.0 * i as f64;
        let x = WIDTH - MARGIN_RIGHT - 170.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.0}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{color}\"/>",
            y - 10.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.0}\" y=\"{y:.2}\">{}</text>",
            x + 18.0,
            escape(name)
        );
    }
}
