//! Minimal SVG writer for the simulate plot: 2D polylines, frame glyphs,
//! title, and a legend. Output is a static, self-contained document.

use nalgebra::DMatrix;
use tpgmm::frames::Frame;

pub struct Curve {
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub width: f64,
    pub dashed: bool,
    /// Legend entry; shown once per distinct label.
    pub label: Option<&'static str>,
}

/// A frame drawn as a dot at its origin and a tick along its local +y axis.
pub struct Marker {
    pub origin: (f64, f64),
    pub tip: (f64, f64),
}

/// First two columns of a trajectory as plot points.
pub fn matrix_points(m: &DMatrix<f64>) -> Vec<(f64, f64)> {
    (0..m.nrows()).map(|r| (m[(r, 0)], m[(r, 1)])).collect()
}

pub fn frame_glyph(frame: &Frame) -> Marker {
    let o = frame.translation();
    let r = frame.rotation();
    let len = 0.15;
    Marker {
        origin: (o[0], o[1]),
        tip: (o[0] + len * r[(0, 1)], o[1] + len * r[(1, 1)]),
    }
}

const CANVAS_W: f64 = 800.0;
const CANVAS_H: f64 = 620.0;
const MARGIN: f64 = 48.0;
const TITLE_STRIP: f64 = 28.0;

struct Mapper {
    scale: f64,
    x0: f64,
    y0: f64,
    ox: f64,
    oy: f64,
}

impl Mapper {
    fn new(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut min = (f64::INFINITY, f64::INFINITY);
        let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            min.0 = min.0.min(x);
            min.1 = min.1.min(y);
            max.0 = max.0.max(x);
            max.1 = max.1.max(y);
        }
        let dx = (max.0 - min.0).max(1e-9);
        let dy = (max.1 - min.1).max(1e-9);
        let w = CANVAS_W - 2.0 * MARGIN;
        let h = CANVAS_H - TITLE_STRIP - 2.0 * MARGIN;
        let scale = (w / dx).min(h / dy);
        // center the data in the drawing area; flip y so +y points up
        let ox = MARGIN + (w - scale * dx) / 2.0;
        let oy = TITLE_STRIP + MARGIN + (h - scale * dy) / 2.0;
        Self { scale, x0: min.0, y0: max.1, ox, oy }
    }

    fn map(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (
            self.ox + self.scale * (x - self.x0),
            self.oy + self.scale * (self.y0 - y),
        )
    }
}

pub fn render(title: &str, curves: &[Curve], markers: &[Marker]) -> String {
    let all_points = curves
        .iter()
        .flat_map(|c| c.points.iter().copied())
        .chain(markers.iter().flat_map(|m| [m.origin, m.tip]));
    let mapper = Mapper::new(all_points);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CANVAS_W}\" height=\"{CANVAS_H}\" \
         viewBox=\"0 0 {CANVAS_W} {CANVAS_H}\">\n\
         <rect width=\"{CANVAS_W}\" height=\"{CANVAS_H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"15\" \
         text-anchor=\"middle\">{}</text>\n",
        CANVAS_W / 2.0,
        escape(title),
    );

    for curve in curves {
        let points: Vec<String> = curve
            .points
            .iter()
            .map(|&p| {
                let (x, y) = mapper.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let dash = if curve.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"{}\"{} points=\"{}\"/>\n",
            curve.color,
            curve.width,
            dash,
            points.join(" "),
        ));
    }

    for marker in markers {
        let (ox, oy) = mapper.map(marker.origin);
        let (tx, ty) = mapper.map(marker.tip);
        svg.push_str(&format!(
            "<line x1=\"{ox:.2}\" y1=\"{oy:.2}\" x2=\"{tx:.2}\" y2=\"{ty:.2}\" \
             stroke=\"#333333\" stroke-width=\"1.5\"/>\n\
             <circle cx=\"{ox:.2}\" cy=\"{oy:.2}\" r=\"3\" fill=\"#333333\"/>\n"
        ));
    }

    // legend: one row per labelled curve
    let mut y = TITLE_STRIP + 14.0;
    for curve in curves.iter().filter(|c| c.label.is_some()) {
        let dash = if curve.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        svg.push_str(&format!(
            "<line x1=\"{x1}\" y1=\"{y:.1}\" x2=\"{x2}\" y2=\"{y:.1}\" stroke=\"{}\" \
             stroke-width=\"2\"{}/>\n\
             <text x=\"{xt}\" y=\"{yt:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            curve.color,
            dash,
            escape(curve.label.unwrap()),
            x1 = 12.0,
            x2 = 40.0,
            xt = 46.0,
            yt = y + 4.0,
        ));
        y += 18.0;
    }

    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
