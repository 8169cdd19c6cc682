//! Minimal SVG line plots for run artifacts.
//!
//! Hand-rolled on purpose: the output is a handful of polylines, axes, and a
//! legend, and emitting the SVG directly keeps the artifact byte-stable
//! across machines. Numbers are formatted with a fixed shortest-roundtrip
//! style so replotting the same run reproduces the same file.

use std::fmt::Write as _;

/// One named curve.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Optional shaded band (x, low, high), drawn behind the curves. Used for
/// min/max envelopes over seeds.
#[derive(Debug, Clone)]
pub struct Band {
    pub name: String,
    pub points: Vec<(f64, f64, f64)>,
}

/// A complete line chart.
#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
    /// Log-scale the y axis (KL curves span decades).
    pub log_y: bool,
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 180.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 56.0;

/// Fixed palette, cycled. Chosen to stay readable on white.
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Round-up/round-down to a "nice" step (1/2/5 times a power of ten) and lay
/// ticks on multiples of it.
pub fn nice_ticks(min: f64, max: f64, target: usize) -> Vec<f64> {
    if !(min.is_finite() && max.is_finite()) || target == 0 {
        return Vec::new();
    }
    if min == max {
        return vec![min];
    }
    let span = max - min;
    let raw = span / target as f64;
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
    let first = (min / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = first;
    while t <= max + step * 1e-9 {
        // Snap near-zero ticks to exactly zero so labels don't read -0.
        ticks.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    ticks
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (0.01..10000.0).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        LinePlot {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            series: Vec::new(),
            bands: Vec::new(),
            log_y: false,
        }
    }

    fn y_value(&self, y: f64) -> f64 {
        if self.log_y {
            y.max(1e-300).log10()
        } else {
            y
        }
    }

    fn data_range(&self) -> Option<(f64, f64, f64, f64)> {
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                if x.is_finite() && y.is_finite() {
                    xs.push(x);
                    ys.push(self.y_value(y));
                }
            }
        }
        for b in &self.bands {
            for &(x, lo, hi) in &b.points {
                if x.is_finite() && lo.is_finite() && hi.is_finite() {
                    xs.push(x);
                    ys.push(self.y_value(lo));
                    ys.push(self.y_value(hi));
                }
            }
        }
        if xs.is_empty() {
            return None;
        }
        let (x0, x1) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        let (y0, y1) = ys
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        // Degenerate spans still need a visible window.
        let (x0, x1) = if x0 == x1 {
            (x0 - 0.5, x1 + 0.5)
        } else {
            (x0, x1)
        };
        let (y0, y1) = if y0 == y1 {
            (y0 - 0.5, y1 + 0.5)
        } else {
            (y0, y1)
        };
        let pad = (y1 - y0) * 0.05;
        Some((x0, x1, y0 - pad, y1 + pad))
    }

    /// Render the chart as a standalone SVG document.
    pub fn render(&self) -> String {
        let plot_w = WIDTH - MARGIN_L - MARGIN_R;
        let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
        );
        let _ = writeln!(
            out,
            "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"26\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
            MARGIN_L + plot_w / 2.0,
            esc(&self.title)
        );

        let range = self.data_range();
        let (x0, x1, y0, y1) = range.unwrap_or((0.0, 1.0, 0.0, 1.0));
        let sx = move |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * plot_w;
        let sy = move |y: f64| MARGIN_T + plot_h - (y - y0) / (y1 - y0) * plot_h;

        // Frame.
        let _ = writeln!(
            out,
            "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>"
        );

        // Ticks and grid.
        for t in nice_ticks(x0, x1, 8) {
            let px = sx(t);
            let _ = writeln!(
                out,
                "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#ddd\" stroke-width=\"1\"/>",
                MARGIN_T,
                MARGIN_T + plot_h
            );
            let _ = writeln!(
                out,
                "<text x=\"{px:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
                MARGIN_T + plot_h + 18.0,
                fmt_num(t)
            );
        }
        for t in nice_ticks(y0, y1, 6) {
            let py = sy(t);
            let _ = writeln!(
                out,
                "<line x1=\"{MARGIN_L}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\" stroke=\"#ddd\" stroke-width=\"1\"/>",
                MARGIN_L + plot_w
            );
            let label = if self.log_y {
                format!("1e{}", fmt_num(t))
            } else {
                fmt_num(t)
            };
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{label}</text>",
                MARGIN_L - 6.0,
                py + 4.0
            );
        }

        // Axis labels.
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
            MARGIN_L + plot_w / 2.0,
            HEIGHT - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            out,
            "<text x=\"18\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{}</text>",
            MARGIN_T + plot_h / 2.0,
            MARGIN_T + plot_h / 2.0,
            esc(&self.y_label)
        );

        if range.is_some() {
            // Bands first so curves draw on top.
            for (bi, band) in self.bands.iter().enumerate() {
                if band.points.is_empty() {
                    continue;
                }
                let color = PALETTE[bi % PALETTE.len()];
                let mut pts = String::new();
                for &(x, lo, _) in &band.points {
                    let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(self.y_value(lo)));
                }
                for &(x, _, hi) in band.points.iter().rev() {
                    let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(self.y_value(hi)));
                }
                let _ = writeln!(
                    out,
                    "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>",
                    pts.trim_end()
                );
            }
            for (si, s) in self.series.iter().enumerate() {
                if s.points.is_empty() {
                    continue;
                }
                let color = PALETTE[si % PALETTE.len()];
                let mut pts = String::new();
                for &(x, y) in &s.points {
                    if x.is_finite() && y.is_finite() {
                        let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(self.y_value(y)));
                    }
                }
                let _ = writeln!(
                    out,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
                    pts.trim_end()
                );
            }
            // Legend.
            let lx = MARGIN_L + plot_w + 14.0;
            for (si, s) in self.series.iter().enumerate() {
                let color = PALETTE[si % PALETTE.len()];
                let ly = MARGIN_T + 14.0 + si as f64 * 20.0;
                let _ = writeln!(
                    out,
                    "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2.5\"/>",
                    lx + 22.0
                );
                let _ = writeln!(
                    out,
                    "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
                    lx + 28.0,
                    ly + 4.0,
                    esc(&s.name)
                );
            }
        } else {
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" fill=\"#888\">no data</text>",
                MARGIN_L + plot_w / 2.0,
                MARGIN_T + plot_h / 2.0
            );
        }

        out.push_str("</svg>\n");
        out
    }
}
