//! Minimal SVG line and scatter plots.

use std::fmt::Write;

pub const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

pub fn colour(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Debug, Clone)]
enum Mark {
    Points { xy: Vec<(f64, f64)>, colour: String, radius: f64, opacity: f64 },
    Line { xy: Vec<(f64, f64)>, colour: String, width: f64, opacity: f64 },
}

#[derive(Debug, Clone)]
pub struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    x_range: Option<(f64, f64)>,
    y_range: Option<(f64, f64)>,
    marks: Vec<Mark>,
    legend: Vec<(String, String)>,
}

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

/// Splits a series at non-finite points so gaps stay visible.
fn finite_runs(xy: &[(f64, f64)]) -> Vec<&[(f64, f64)]> {
    xy.split(|(x, y)| !x.is_finite() || !y.is_finite())
        .filter(|r| !r.is_empty())
        .collect()
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_range: None,
            y_range: None,
            marks: Vec::new(),
            legend: Vec::new(),
        }
    }

    pub fn y_range(mut self, lo: f64, hi: f64) -> Self {
        self.y_range = Some((lo, hi));
        self
    }

    pub fn points(&mut self, xy: Vec<(f64, f64)>, colour: &str, radius: f64, opacity: f64) {
        self.marks.push(Mark::Points { xy, colour: colour.into(), radius, opacity });
    }

    pub fn line(&mut self, xy: Vec<(f64, f64)>, colour: &str, width: f64, opacity: f64) {
        self.marks.push(Mark::Line { xy, colour: colour.into(), width, opacity });
    }

    pub fn legend(&mut self, label: &str, colour: &str) {
        self.legend.push((label.into(), colour.into()));
    }

    fn data_range(&self, pick: impl Fn(&(f64, f64)) -> f64) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for m in &self.marks {
            let (Mark::Points { xy, .. } | Mark::Line { xy, .. }) = m;
            for p in xy {
                let v = pick(p);
                if v.is_finite() {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        if !lo.is_finite() {
            return (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            return (lo - 0.5, hi + 0.5);
        }
        (lo, hi)
    }

    pub fn render(&self) -> String {
        let (x0, x1) = self.x_range.unwrap_or_else(|| self.data_range(|p| p.0));
        let (y0, y1) = self.y_range.unwrap_or_else(|| self.data_range(|p| p.1));
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                TOP,
                TOP + ph,
                TOP + ph + 16.0,
                fmt_tick(t)
            );
        }
        for t in ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT,
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        let _ = writeln!(s, r#"<g clip-path="url(#plot)"><clipPath id="plot"><rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/></clipPath>"#);
        for m in &self.marks {
            match m {
                Mark::Points { xy, colour, radius, opacity } => {
                    let _ = writeln!(s, r#"<g fill="{colour}" fill-opacity="{opacity}">"#);
                    for &(x, y) in xy.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="{radius}"/>"#, sx(x), sy(y));
                    }
                    s.push_str("</g>\n");
                }
                Mark::Line { xy, colour, width, opacity } => {
                    for run in finite_runs(xy) {
                        let pts: Vec<String> = run.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                        let _ = writeln!(
                            s,
                            r#"<polyline fill="none" stroke="{colour}" stroke-width="{width}" stroke-opacity="{opacity}" points="{}"/>"#,
                            pts.join(" ")
                        );
                    }
                }
            }
        }
        s.push_str("</g>\n");
        for (k, (label, c)) in self.legend.iter().enumerate() {
            let y = TOP + 10.0 + 20.0 * k as f64;
            let x = LEFT + pw + 15.0;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="14" height="10" fill="{c}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                y - 9.0,
                x + 20.0,
                y,
                escape(label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Indices `0, k, 2k, ...` keeping at most `max` of `len`.
pub fn every_kth(len: usize, max: usize) -> impl Iterator<Item = usize> {
    let k = len.div_ceil(max.max(1)).max(1);
    (0..len).step_by(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsampling_respects_cap() {
        assert_eq!(every_kth(12_000, 5000).count(), 4000);
        assert_eq!(every_kth(10, 5000).count(), 10);
        assert_eq!(every_kth(10_000, 5000).count(), 5000);
    }

    #[test]
    fn ticks_are_round() {
        let t = ticks(0.0, 1.0);
        assert_eq!(t.len(), 6);
        assert_eq!(fmt_tick(t[3]), "0.6");
        assert_eq!(fmt_tick(t[5]), "1");
    }

    #[test]
    fn gaps_split_lines() {
        let mut p = Plot::new("t", "x", "y");
        p.line(vec![(0.0, 0.0), (1.0, f64::NAN), (2.0, 1.0), (3.0, 2.0)], colour(0), 1.0, 1.0);
        assert_eq!(p.render().matches("<polyline").count(), 2);
    }
}
