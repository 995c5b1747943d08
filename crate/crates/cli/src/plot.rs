//! Minimal SVG line plots with optional shaded bands.
//!
//! The plotted data is embedded verbatim as JSON in a `<metadata>` element so
//! that figures can be read back.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Half-width of a shaded band around `ys`.
    pub band: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LinePlot {
    fn x_of(&self, x: f64) -> f64 {
        if self.log_x {
            x.max(f64::MIN_POSITIVE).log10()
        } else {
            x
        }
    }

    fn ranges(&self) -> ((f64, f64), (f64, f64)) {
        let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
        let mut yr = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for (i, (&x, &y)) in s.xs.iter().zip(&s.ys).enumerate() {
                let x = self.x_of(x);
                let w = s.band.as_ref().map_or(0.0, |b| b[i]);
                if !(x.is_finite() && y.is_finite() && w.is_finite()) {
                    continue;
                }
                xr = (xr.0.min(x), xr.1.max(x));
                yr = (yr.0.min(y - w), yr.1.max(y + w));
            }
        }
        let widen = |(lo, hi): (f64, f64)| {
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo <= 1e-300 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        (widen(xr), widen(yr))
    }

    pub fn render(&self) -> String {
        let ((x0, x1), (y0, y1)) = self.ranges();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (self.x_of(x) - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let data = serde_json::to_string(self).expect("plot data serializes");
        let _ = writeln!(svg, "<metadata id=\"plot-data\"><![CDATA[{data}]]></metadata>");
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="16" font-family="sans-serif">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let px = LEFT + f * pw;
            let label = if self.log_x {
                tick_label(10f64.powf(xv))
            } else {
                tick_label(xv)
            };
            let _ = writeln!(
                svg,
                r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle" font-size="11" font-family="sans-serif">{label}</text>"#,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 18.0
            );
            let yv = y0 + f * (y1 - y0);
            let py = TOP + (1.0 - f) * ph;
            let _ = writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11" font-family="sans-serif">{}</text>"#,
                LEFT - 5.0,
                LEFT - 8.0,
                py + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="13" font-family="sans-serif">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{}" text-anchor="middle" font-size="13" font-family="sans-serif" transform="rotate(-90 18 {})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (k, s) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let finite: Vec<usize> = (0..s.xs.len().min(s.ys.len()))
                .filter(|&i| s.xs[i].is_finite() && s.ys[i].is_finite())
                .collect();
            if let Some(band) = &s.band {
                let upper = finite
                    .iter()
                    .map(|&i| format!("{:.2},{:.2}", sx(s.xs[i]), sy(s.ys[i] + band[i])));
                let lower = finite
                    .iter()
                    .rev()
                    .map(|&i| format!("{:.2},{:.2}", sx(s.xs[i]), sy(s.ys[i] - band[i])));
                let points: Vec<String> = upper.chain(lower).collect();
                let _ = writeln!(
                    svg,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                    points.join(" ")
                );
            }
            let points: Vec<String> = finite
                .iter()
                .map(|&i| format!("{:.2},{:.2}", sx(s.xs[i]), sy(s.ys[i])))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                points.join(" ")
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-size="12" font-family="sans-serif" fill="{color}">{}</text>"#,
                LEFT + 10.0,
                TOP + 16.0 + 16.0 * k as f64,
                escape(&s.name)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Reads back the data block of a rendered plot.
pub fn read_metadata(svg: &str) -> Option<LinePlot> {
    let start = svg.find("<![CDATA[")? + "<![CDATA[".len();
    let end = svg[start..].find("]]>")? + start;
    serde_json::from_str(&svg[start..end]).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_round_trips() {
        let plot = LinePlot {
            title: "a <b>".into(),
            x_label: "t".into(),
            y_label: "regret".into(),
            log_x: true,
            series: vec![Series {
                name: "mean".into(),
                xs: vec![1.0, 2.0, 4.0],
                ys: vec![0.1, -0.25, 3.5],
                band: Some(vec![0.0, 0.1, 0.2]),
            }],
        };
        let svg = plot.render();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("<polygon") && svg.contains("a &lt;b&gt;"));
        assert_eq!(read_metadata(&svg), Some(plot.clone()));
        assert_eq!(svg, plot.render());
    }

    #[test]
    fn degenerate_ranges_render() {
        let plot = LinePlot {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            log_x: false,
            series: vec![Series {
                name: "flat".into(),
                xs: vec![1.0],
                ys: vec![0.0],
                band: None,
            }],
        };
        assert!(!plot.render().contains("NaN"));
    }
}
