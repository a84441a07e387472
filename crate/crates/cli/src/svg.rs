//! Minimal deterministic SVG charts. Coordinates are printed with fixed
//! precision so identical inputs give byte-identical files.

use contesta_core::cohort::Label;
use contesta_core::global_explain::{ImportanceReport, PdpCurve, PdpSurface};
use contesta_core::local_explain::{BoundaryEstimate, ContestReport, NeighborPanel};

pub const QUERY: &str = "#d7191c";
pub const LOSNEC: &str = "#7b3294";
pub const HEALTHY: &str = "#1b7837";
pub const BOUNDARY: &str = "#8c8c8c";
const AXIS: &str = "#333333";

struct Svg {
    buf: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        let mut buf = String::new();
        buf.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        ));
        buf.push_str(&format!("<rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"#ffffff\"/>\n"));
        Self { buf }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64, dash: bool) {
        let dash = if dash { " stroke-dasharray=\"4 3\"" } else { "" };
        self.buf.push_str(&format!(
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"{width:.1}\"{dash}/>\n"
        ));
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        self.buf.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"/>\n"
        ));
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str, title: &str) {
        self.buf.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r:.1}\" fill=\"{fill}\" fill-opacity=\"0.85\"><title>{}</title></circle>\n",
            esc(title)
        ));
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        self.buf.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"2\"/>\n",
            p.join(" ")
        ));
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        self.buf.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\">{}</text>\n",
            esc(s)
        ));
    }

    fn vtext(&mut self, x: f64, y: f64, s: &str) {
        self.buf.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 {x:.2} {y:.2})\">{}</text>\n",
            esc(s)
        ));
    }

    fn finish(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

/// Linear map from a data range onto a pixel range; a flat range maps to
/// the middle.
#[derive(Clone, Copy)]
struct Scale {
    d0: f64,
    d1: f64,
    p0: f64,
    p1: f64,
}

impl Scale {
    fn new((d0, d1): (f64, f64), p0: f64, p1: f64) -> Self {
        Self { d0, d1, p0, p1 }
    }

    fn at(&self, v: f64) -> f64 {
        if self.d1 > self.d0 {
            self.p0 + (v - self.d0) / (self.d1 - self.d0) * (self.p1 - self.p0)
        } else {
            (self.p0 + self.p1) / 2.0
        }
    }
}

fn extent(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
        (lo - pad, hi + pad)
    } else {
        (0.0, 1.0)
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// Frame, ticks and axis labels for a plot area.
fn axes(svg: &mut Svg, x: Scale, y: Scale, xlabel: &str, ylabel: &str) {
    svg.line(x.p0, y.p0, x.p1, y.p0, AXIS, 1.0, false);
    svg.line(x.p0, y.p0, x.p0, y.p1, AXIS, 1.0, false);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x.d0 + t * (x.d1 - x.d0);
        let px = x.at(xv);
        svg.line(px, y.p0, px, y.p0 + 4.0, AXIS, 1.0, false);
        svg.text(px, y.p0 + 16.0, "middle", &fmt_tick(xv));
        let yv = y.d0 + t * (y.d1 - y.d0);
        let py = y.at(yv);
        svg.line(x.p0 - 4.0, py, x.p0, py, AXIS, 1.0, false);
        svg.text(x.p0 - 6.0, py + 4.0, "end", &fmt_tick(yv));
    }
    svg.text((x.p0 + x.p1) / 2.0, y.p0 + 34.0, "middle", xlabel);
    svg.vtext(x.p0 - 48.0, (y.p0 + y.p1) / 2.0, ylabel);
}

pub fn importance(report: &ImportanceReport, title: &str) -> String {
    let ranked = report.ranked();
    let row = 22.0;
    let (left, top, width) = (90.0, 40.0, 360.0);
    let height = top + row * ranked.len() as f64 + 50.0;
    let mut svg = Svg::new(left + width + 40.0, height);
    svg.text(left, 20.0, "start", title);
    let values: Vec<f64> = ranked.iter().map(|f| report.get(*f).map_or(0.0, |i| i.importance)).collect();
    let lo = values.iter().copied().fold(0.0, f64::min);
    let hi = values.iter().copied().fold(0.0, f64::max);
    let x = Scale::new((lo, if hi > lo { hi } else { lo + 1.0 }), left, left + width);
    for (i, (f, v)) in ranked.iter().zip(&values).enumerate() {
        let y = top + row * i as f64;
        let (a, b) = (x.at(0.0), x.at(*v));
        svg.rect(a.min(b), y + 3.0, (b - a).abs(), row - 6.0, "#4575b4");
        svg.text(left - 6.0, y + row / 2.0 + 4.0, "end", f.name());
        svg.text(a.max(b) + 4.0, y + row / 2.0 + 4.0, "start", &format!("{v:.4}"));
    }
    let base = top + row * ranked.len() as f64;
    svg.line(x.at(0.0), top, x.at(0.0), base, AXIS, 1.0, false);
    svg.text(left + width / 2.0, base + 30.0, "middle", &format!("increase in {} after permutation", report.loss));
    svg.finish()
}

pub fn pdp_curve(curve: &PdpCurve) -> String {
    let (left, top, w, h) = (70.0, 30.0, 380.0, 240.0);
    let mut svg = Svg::new(left + w + 30.0, top + h + 60.0);
    let x = Scale::new(extent(curve.grid.iter().copied()), left, left + w);
    let y = Scale::new(extent(curve.pd.iter().copied()), top + h, top);
    axes(&mut svg, x, y, curve.feature.name(), "partial dependence (LosNec)");
    let pts: Vec<(f64, f64)> = curve.grid.iter().zip(&curve.pd).map(|(g, p)| (x.at(*g), y.at(*p))).collect();
    svg.polyline(&pts, "#4575b4");
    for r in &curve.rug {
        let px = x.at(*r);
        svg.line(px, top + h - 8.0, px, top + h, AXIS, 1.0, false);
    }
    svg.text(left, 18.0, "start", &format!("PDP of {}", curve.feature));
    svg.finish()
}

fn heat(t: f64) -> String {
    let stops = [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (t.floor() as usize).min(stops.len() - 2);
    let f = t - i as f64;
    let mix = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    let (a, b) = (stops[i], stops[i + 1]);
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

pub fn pdp_surface(s: &PdpSurface) -> String {
    let (left, top, w, h) = (70.0, 30.0, 360.0, 260.0);
    let mut svg = Svg::new(left + w + 90.0, top + h + 60.0);
    let (lo, hi) = s
        .pd
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (nx, ny) = (s.static_grid.len(), s.dynamic_grid.len());
    let (cw, ch) = (w / nx as f64, h / ny as f64);
    for (i, row) in s.pd.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let px = left + cw * i as f64;
            let py = top + h - ch * (j + 1) as f64;
            svg.rect(px, py, cw + 0.2, ch + 0.2, &heat((v - lo) / span));
        }
    }
    let x = Scale::new((s.static_grid[0], s.static_grid[nx - 1]), left, left + w);
    let y = Scale::new((s.dynamic_grid[0], s.dynamic_grid[ny - 1]), top + h, top);
    axes(&mut svg, x, y, s.static_feature.name(), s.dynamic_feature.name());
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let py = top + h - t * h;
        svg.rect(left + w + 20.0, py - h / 5.0, 14.0, h / 5.0, &heat(t.min(0.999)));
        svg.text(left + w + 40.0, py + 4.0, "start", &format!("{:.3}", lo + t * span));
    }
    svg.text(left, 18.0, "start", &format!("PDP of {} and {}", s.static_feature, s.dynamic_feature));
    svg.finish()
}

fn panel(svg: &mut Svg, p: &NeighborPanel, left: f64, top: f64, w: f64, h: f64) {
    let distances = p.points.iter().map(|q| q.distance).chain([0.0]);
    let (_, dmax) = extent(distances);
    let mut ys: Vec<f64> = p.points.iter().map(|q| q.value).collect();
    ys.push(p.query_value);
    if let BoundaryEstimate::Conclusive { boundary, .. } = p.boundary {
        ys.push(boundary);
    }
    let x = Scale::new((0.0, dmax), left, left + w);
    let y = Scale::new(extent(ys), top + h, top);
    axes(svg, x, y, "latent-space distance", p.feature.name());
    if let BoundaryEstimate::Conclusive { boundary, losnec_above, misclassified } = p.boundary {
        let py = y.at(boundary);
        svg.line(left, py, left + w, py, BOUNDARY, 1.5, true);
        svg.text(
            left + w - 4.0,
            py - 4.0,
            "end",
            &format!("boundary {boundary:.4}, LosNec {}, {misclassified} off", if losnec_above { "above" } else { "below" }),
        );
    }
    for q in &p.points {
        let fill = if q.label == Label::LosNec { LOSNEC } else { HEALTHY };
        let title = format!(
            "{} ({}): {} = {:.4}, distance {:.4}, ga {:.1}, w {:.0}, pna {:.1}, gen {}",
            q.record_id, q.label, p.feature, q.value, q.distance, q.demographics.ga, q.demographics.w, q.demographics.pna, q.demographics.gen
        );
        svg.circle(x.at(q.distance), y.at(q.value), 5.0, fill, &title);
    }
    svg.circle(x.at(0.0), y.at(p.query_value), 6.0, QUERY, &format!("case: {} = {:.4}", p.feature, p.query_value));
    let implied = p.implied_class.map_or("inconclusive".to_string(), |c| format!("suggests {c}"));
    svg.text(left, top - 8.0, "start", &format!("{}: {implied}", p.feature));
}

pub fn contest(report: &ContestReport) -> String {
    let (w, h, gap, left, top) = (320.0, 240.0, 90.0, 70.0, 60.0);
    let n = report.panels.len().max(1) as f64;
    let mut svg = Svg::new(left + n * (w + gap), top + h + 80.0);
    svg.text(
        left,
        20.0,
        "start",
        &format!(
            "{}: model {} predicts {} (score {:.3}); verdict {}",
            report.query_id, report.model, report.prediction, report.score, report.verdict
        ),
    );
    for (i, p) in report.panels.iter().enumerate() {
        panel(&mut svg, p, left + i as f64 * (w + gap), top, w, h);
    }
    let ly = top + h + 62.0;
    for (k, (fill, name)) in [(QUERY, "case"), (LOSNEC, "LosNec neighbour"), (HEALTHY, "Healthy neighbour")].iter().enumerate() {
        let lx = left + 150.0 * k as f64;
        svg.circle(lx, ly - 4.0, 5.0, fill, name);
        svg.text(lx + 10.0, ly, "start", name);
    }
    svg.finish()
}
