//! Minimal hand-rolled SVG output: profile line plots and persistence
//! diagrams.  Everything is formatted with fixed precision so identical data
//! produces byte-identical files.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 42.0;
const MARGIN_B: f64 = 52.0;
const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_bounds(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Frame {
        let pad = |lo: f64, hi: f64| -> (f64, f64) {
            let span = (hi - lo).abs();
            let pad = if span < 1e-12 { lo.abs().max(1.0) * 0.1 } else { span * 0.06 };
            (lo - pad, hi + pad)
        };
        let (x_min, x_max) = pad(x_min, x_max);
        let (y_min, y_max) = pad(y_min, y_max);
        Frame { x_min, x_max, y_min, y_max }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }

    fn axes(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n",
            MARGIN_L,
            MARGIN_T,
            WIDTH - MARGIN_L - MARGIN_R,
            HEIGHT - MARGIN_T - MARGIN_B
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" font-family=\"sans-serif\">{}</text>\n",
            (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
            xml_escape(title)
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">{}</text>\n",
            (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
            HEIGHT - 12.0,
            xml_escape(x_label)
        ));
        out.push_str(&format!(
            "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" transform=\"rotate(-90 18 {:.2})\">{}</text>\n",
            (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
            (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
            xml_escape(y_label)
        ));
        for i in 0..5 {
            let t = i as f64 / 4.0;
            let xv = self.x_min + t * (self.x_max - self.x_min);
            let yv = self.y_min + t * (self.y_max - self.y_min);
            let sx = self.sx(xv);
            let sy = self.sy(yv);
            out.push_str(&format!(
                "<line x1=\"{sx:.2}\" y1=\"{:.2}\" x2=\"{sx:.2}\" y2=\"{:.2}\" stroke=\"#ccc\" stroke-width=\"0.5\"/>\n",
                MARGIN_T,
                HEIGHT - MARGIN_B
            ));
            out.push_str(&format!(
                "<text x=\"{sx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">{}</text>\n",
                HEIGHT - MARGIN_B + 16.0,
                fmt_tick(xv)
            ));
            out.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{sy:.2}\" x2=\"{:.2}\" y2=\"{sy:.2}\" stroke=\"#ccc\" stroke-width=\"0.5\"/>\n",
                MARGIN_L,
                WIDTH - MARGIN_R
            ));
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{sy:.2}\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\" dy=\"4\">{}</text>\n",
                MARGIN_L - 8.0,
                fmt_tick(yv)
            ));
        }
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header() -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" viewBox=\"0 0 {WIDTH:.0} {HEIGHT:.0}\">\n<rect width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" fill=\"white\"/>\n"
    )
}

/// Profile plot: one polyline with point markers per series.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, pts) in series {
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    let frame = Frame::from_bounds(x_min, x_max, y_min, y_max);
    let mut out = header();
    frame.axes(&mut out, title, x_label, y_label);
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if pts.len() > 1 {
            let path: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", frame.sx(x), frame.sy(y)))
                .collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                path.join(" ")
            ));
        }
        for &(x, y) in pts {
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>\n",
                frame.sx(x),
                frame.sy(y)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" font-family=\"sans-serif\" fill=\"{color}\">{}</text>\n",
            MARGIN_L + 10.0,
            MARGIN_T + 16.0 + 14.0 * si as f64,
            xml_escape(name)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Persistence diagram: finite pairs as dots above the diagonal, essential
/// classes as triangles pinned to the top edge.
pub fn persistence_diagram(title: &str, finite: &[(usize, f64, f64)], essential: &[(usize, f64)]) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(_, b, d) in finite {
        lo = lo.min(b);
        hi = hi.max(d);
    }
    for &(_, b) in essential {
        lo = lo.min(b);
        hi = hi.max(b);
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let frame = Frame::from_bounds(lo, hi, lo, hi);
    let mut out = header();
    frame.axes(&mut out, title, "birth", "death");
    out.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n",
        frame.sx(frame.x_min),
        frame.sy(frame.x_min),
        frame.sx(frame.x_max.min(frame.y_max)),
        frame.sy(frame.x_max.min(frame.y_max)),
    ));
    let mut dims: Vec<usize> = finite.iter().map(|&(d, _, _)| d).chain(essential.iter().map(|&(d, _)| d)).collect();
    dims.sort_unstable();
    dims.dedup();
    for &(dim, b, d) in finite {
        let color = PALETTE[dim % PALETTE.len()];
        out.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\" fill-opacity=\"0.75\"/>\n",
            frame.sx(b),
            frame.sy(d)
        ));
    }
    for &(dim, b) in essential {
        let color = PALETTE[dim % PALETTE.len()];
        let x = frame.sx(b);
        let y = MARGIN_T + 8.0;
        out.push_str(&format!(
            "<path d=\"M {:.2} {:.2} L {:.2} {:.2} L {:.2} {:.2} Z\" fill=\"{color}\"/>\n",
            x,
            y - 5.0,
            x - 4.5,
            y + 3.0,
            x + 4.5,
            y + 3.0
        ));
    }
    for (i, &dim) in dims.iter().enumerate() {
        let color = PALETTE[dim % PALETTE.len()];
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" font-family=\"sans-serif\" fill=\"{color}\">dim {dim}</text>\n",
            WIDTH - MARGIN_R - 60.0,
            MARGIN_T + 16.0 + 14.0 * i as f64
        ));
    }
    out.push_str("<text x=\"");
    out.push_str(&format!(
        "{:.2}\" y=\"{:.2}\" font-size=\"10\" font-family=\"sans-serif\" fill=\"#666\">▲ essential</text>\n",
        WIDTH - MARGIN_R - 60.0,
        MARGIN_T + 16.0 + 14.0 * dims.len() as f64
    ));
    out.push_str("</svg>\n");
    out
}
