//! Bare-bones SVG scatter and quiver plots for a quick look at outputs.

use std::fmt::Write;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 20.0;

struct Frame {
    lo: [f64; 2],
    scale: f64,
}

impl Frame {
    fn fit<'a>(pts: impl Iterator<Item = &'a [f64; 2]>) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in pts.filter(|p| p[0].is_finite() && p[1].is_finite()) {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            return Self { lo: [0.0, 0.0], scale: 1.0 };
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        Self { lo, scale: (SIZE - 2.0 * MARGIN) / span }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (MARGIN + (p[0] - self.lo[0]) * self.scale, SIZE - MARGIN - (p[1] - self.lo[1]) * self.scale)
    }
}

fn open() -> String {
    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n")
}

/// One colour per series of points.
pub fn scatter(series: &[(&str, &[[f64; 2]])]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|(_, p)| p.iter()));
    let mut s = open();
    for (colour, pts) in series {
        for p in pts.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
            let (x, y) = frame.map(*p);
            let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.2\" fill=\"{colour}\"/>");
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Background points plus arrows, rescaled so the longest arrow spans about
/// one probe spacing.
pub fn quiver(points: &[[f64; 2]], arrows: &[([f64; 2], [f64; 2])]) -> String {
    let frame = Frame::fit(points.iter().chain(arrows.iter().map(|(p, _)| p)));
    let longest = arrows.iter().map(|(_, v)| v[0].hypot(v[1])).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let spacing = (SIZE - 2.0 * MARGIN) / (arrows.len() as f64).sqrt().max(1.0);
    let gain = if longest > 0.0 { spacing / (longest * frame.scale) } else { 0.0 };
    let mut s = open();
    for p in points {
        let (x, y) = frame.map(*p);
        let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1\" fill=\"lightgray\"/>");
    }
    for (p, v) in arrows.iter().filter(|(_, v)| v[0].is_finite() && v[1].is_finite()) {
        let (x0, y0) = frame.map(*p);
        let (x1, y1) = frame.map([p[0] + gain * v[0], p[1] + gain * v[1]]);
        let _ = writeln!(s, "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" stroke=\"steelblue\" stroke-width=\"1\"/>");
        let _ = writeln!(s, "<circle cx=\"{x1:.2}\" cy=\"{y1:.2}\" r=\"1.5\" fill=\"steelblue\"/>");
    }
    s.push_str("</svg>\n");
    s
}
