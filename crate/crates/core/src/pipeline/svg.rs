//! Small, byte-stable SVG writer for the report figures.

use std::fmt::Write;

use crate::gamm::PartialEffect;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#637939",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round step of 1, 2 or 5 times a power of ten giving about `n` ticks.
fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn pad(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let m = 0.05 * (hi - lo);
        (lo - m, hi + m)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height, body: String::new() }
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            esc(s)
        );
    }

    fn axes(&mut self, f: &Frame, title: &str, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            self.body,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
            f.x0, f.y0, f.w, f.h
        );
        for t in ticks(f.xr.0, f.xr.1, 5) {
            let x = f.px(t);
            let yb = f.y0 + f.h;
            let _ = writeln!(self.body, r##"<line x1="{x:.2}" y1="{yb:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##, yb + 4.0);
            self.text(x, yb + 15.0, 10.0, "middle", &tick_label(t));
        }
        for t in ticks(f.yr.0, f.yr.1, 5) {
            let y = f.py(t);
            let _ = writeln!(self.body, r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#333"/>"##, f.x0 - 4.0, f.x0);
            self.text(f.x0 - 6.0, y + 3.0, 10.0, "end", &tick_label(t));
        }
        self.text(f.x0 + f.w / 2.0, f.y0 - 8.0, 12.0, "middle", title);
        self.text(f.x0 + f.w / 2.0, f.y0 + f.h + 30.0, 11.0, "middle", xlabel);
        let (lx, ly) = (f.x0 - 38.0, f.y0 + f.h / 2.0);
        let _ = writeln!(
            self.body,
            r#"<text x="{lx:.2}" y="{ly:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
            esc(ylabel)
        );
    }

    /// One partial-effect panel: CI band, estimate, quantile ticks on the x axis.
    fn effect_panel(&mut self, x0: f64, y0: f64, w: f64, h: f64, title: &str, ylabel: &str, e: &PartialEffect) {
        let lo = e.ci_low.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = e.ci_high.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let xr = pad(*e.grid.first().unwrap_or(&0.0), *e.grid.last().unwrap_or(&1.0));
        let f = Frame { x0, y0, w, h, xr, yr: pad(lo, hi) };
        let mut band = String::new();
        for (x, y) in e.grid.iter().zip(&e.ci_high) {
            let _ = write!(band, "{}{:.2},{:.2} ", if band.is_empty() { "M" } else { "L" }, f.px(*x), f.py(*y));
        }
        for (x, y) in e.grid.iter().zip(&e.ci_low).rev() {
            let _ = write!(band, "L{:.2},{:.2} ", f.px(*x), f.py(*y));
        }
        let _ = writeln!(self.body, r##"<path d="{}Z" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##, band);
        let pts: Vec<String> = e.grid.iter().zip(&e.estimate).map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y))).collect();
        let _ = writeln!(self.body, r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="1.5"/>"##, pts.join(" "));
        if f.yr.0 < 0.0 && f.yr.1 > 0.0 {
            let y = f.py(0.0);
            let _ = writeln!(
                self.body,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#999" stroke-dasharray="3,3"/>"##,
                f.x0,
                f.x0 + f.w
            );
        }
        for (_, q) in &e.quantile_marks {
            let x = f.px(*q);
            let yb = f.y0 + f.h;
            let _ = writeln!(self.body, r##"<line x1="{x:.2}" y1="{yb:.2}" x2="{x:.2}" y2="{:.2}" stroke="#d62728" stroke-width="2"/>"##, yb - 8.0);
        }
        self.axes(&f, title, &e.variable, ylabel);
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Grid of partial-effect panels, `(title, y label, curve)` each.
pub fn effects_figure(panels: &[(String, String, &PartialEffect)]) -> String {
    let cols = panels.len().clamp(1, 3);
    let rows = panels.len().div_ceil(cols).max(1);
    let (pw, ph) = (320.0, 250.0);
    let mut svg = Svg::new(cols as f64 * pw, rows as f64 * ph);
    for (i, (title, ylabel, e)) in panels.iter().enumerate() {
        let (c, r) = ((i % cols) as f64, (i / cols) as f64);
        svg.effect_panel(c * pw + 60.0, r * ph + 30.0, pw - 80.0, ph - 80.0, title, ylabel, e);
    }
    svg.finish()
}

/// Scatter coloured by a categorical label, with a legend in sorted label order.
pub fn scatter(coords: &[[f64; 2]], labels: &[String], title: &str) -> String {
    let mut levels: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
    levels.sort_unstable();
    levels.dedup();
    let (w, h) = (560.0, 460.0);
    let mut svg = Svg::new(w + 160.0, h);
    let xs = coords.iter().map(|c| c[0]);
    let ys = coords.iter().map(|c| c[1]);
    let xr = pad(xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let yr = pad(ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
    let f = Frame { x0: 60.0, y0: 30.0, w: w - 80.0, h: h - 80.0, xr, yr };
    for (c, l) in coords.iter().zip(labels) {
        let k = levels.iter().position(|v| v == l).unwrap_or(0);
        let _ = writeln!(
            svg.body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.75"/>"#,
            f.px(c[0]),
            f.py(c[1]),
            PALETTE[k % PALETTE.len()]
        );
    }
    svg.axes(&f, title, "t-SNE 1", "t-SNE 2");
    for (k, l) in levels.iter().enumerate() {
        let y = 40.0 + 18.0 * k as f64;
        let _ = writeln!(svg.body, r#"<circle cx="{:.2}" cy="{y:.2}" r="5" fill="{}"/>"#, w + 10.0, PALETTE[k % PALETTE.len()]);
        svg.text(w + 20.0, y + 4.0, 11.0, "start", l);
    }
    svg.finish()
}

/// Diverging heatmap of a correlation matrix with the values printed in each cell.
pub fn heatmap(columns: &[String], r: &[Vec<f64>], title: &str) -> String {
    let k = columns.len();
    let cell = 70.0;
    let (x0, y0) = (110.0, 40.0);
    let mut svg = Svg::new(x0 + cell * k as f64 + 20.0, y0 + cell * k as f64 + 90.0);
    svg.text(x0 + cell * k as f64 / 2.0, 22.0, 13.0, "middle", title);
    for i in 0..k {
        for j in 0..k {
            let v = r[i][j].clamp(-1.0, 1.0);
            let (cr, cg, cb) = if v >= 0.0 {
                (255.0 - 200.0 * v, 255.0 - 150.0 * v, 255.0)
            } else {
                (255.0, 255.0 + 150.0 * v, 255.0 + 200.0 * v)
            };
            let (x, y) = (x0 + j as f64 * cell, y0 + i as f64 * cell);
            let _ = writeln!(
                svg.body,
                r##"<rect x="{x:.2}" y="{y:.2}" width="{cell}" height="{cell}" fill="rgb({},{},{})" stroke="#fff"/>"##,
                cr.round() as u8,
                cg.round() as u8,
                cb.round() as u8
            );
            svg.text(x + cell / 2.0, y + cell / 2.0 + 4.0, 11.0, "middle", &format!("{:.2}", r[i][j]));
        }
        svg.text(x0 - 6.0, y0 + (i as f64 + 0.5) * cell + 4.0, 11.0, "end", &columns[i]);
        svg.text(x0 + (i as f64 + 0.5) * cell, y0 + k as f64 * cell + 18.0, 11.0, "middle", &columns[i]);
    }
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_steps() {
        assert_eq!(ticks(0.0, 10.0, 5), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(tick_label(0.30000000000000004), "0.3");
        assert_eq!(tick_label(-0.0), "0");
    }

    #[test]
    fn escapes_labels() {
        let s = scatter(&[[0.0, 0.0], [1.0, 1.0]], &["[0,1.5)".into(), "a<b".into()], "x & y");
        assert!(s.contains("a&lt;b") && s.contains("x &amp; y"));
    }
}
