//! Minimal SVG writers for trajectories, latent heatmaps and line charts.

use std::fmt::Write;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Wraps `content` in a translated group.
pub fn group(class: &str, id: &str, x: f64, y: f64, content: &str) -> String {
    format!("<g class=\"{class}\" id=\"{}\" transform=\"translate({x:.1},{y:.1})\">\n{content}</g>\n", escape(id))
}

/// One agent's observed window, true future and predicted future.
pub struct AgentTrack<'a> {
    pub observed: &'a [[f64; 2]],
    pub future: &'a [[f64; 2]],
    pub predicted: &'a [[f64; 2]],
}

/// Square panel mapping world coordinates in `[-extent, extent]²` onto `size` pixels.
pub fn trajectory_panel(title: &str, tracks: &[AgentTrack<'_>], extent: f64, size: f64) -> String {
    let map = |p: [f64; 2]| {
        (
            (p[0] / extent + 1.0) * 0.5 * size,
            (1.0 - p[1] / extent) * 0.5 * size,
        )
    };
    let polyline = |pts: &[[f64; 2]]| -> String {
        pts.iter()
            .map(|&p| {
                let (x, y) = map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<rect width=\"{size}\" height=\"{size}\" fill=\"none\" stroke=\"#ccc\"/>\n\
         <text x=\"4\" y=\"14\">{}</text>",
        escape(title)
    );
    for (i, t) in tracks.iter().enumerate() {
        let c = color(i);
        let _ = writeln!(out, "<g class=\"trajectory\" data-agent=\"{i}\">");
        let _ = writeln!(
            out,
            "<polyline class=\"observed\" points=\"{}\" fill=\"none\" stroke=\"{c}\" stroke-dasharray=\"2,3\"/>",
            polyline(t.observed)
        );
        let joined: Vec<[f64; 2]> = t.observed.last().into_iter().copied().chain(t.future.iter().copied()).collect();
        let _ = writeln!(
            out,
            "<polyline class=\"future\" points=\"{}\" fill=\"none\" stroke=\"{c}\"/>",
            polyline(&joined)
        );
        let steps = t.predicted.len().max(1) as f64;
        for (k, &p) in t.predicted.iter().enumerate() {
            let (x, y) = map(p);
            let r = 5.0 - 3.5 * k as f64 / steps;
            let _ = writeln!(
                out,
                "<circle class=\"predicted\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r:.2}\" fill=\"{c}\" fill-opacity=\"0.5\"/>"
            );
        }
        out.push_str("</g>\n");
    }
    out
}

/// Grey-scale matrix: darker cells carry more weight; row sums are annotated on the right.
pub fn heatmap(title: &str, matrix: &[Vec<f64>], cell: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<text x=\"0\" y=\"-4\">{}</text>", escape(title));
    for (i, row) in matrix.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - w.clamp(0.0, 1.0))).round() as u8;
            let _ = writeln!(
                out,
                "<rect class=\"cell\" data-row=\"{i}\" data-col=\"{j}\" data-weight=\"{w:.6}\" \
                 x=\"{:.1}\" y=\"{:.1}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"rgb({shade},{shade},{shade})\" stroke=\"#999\"/>",
                j as f64 * cell,
                i as f64 * cell
            );
        }
        let sum: f64 = row.iter().sum();
        let _ = writeln!(
            out,
            "<text class=\"row-sum\" x=\"{:.1}\" y=\"{:.1}\">{sum:.2}</text>",
            row.len() as f64 * cell + 4.0,
            (i as f64 + 0.65) * cell
        );
    }
    out
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line chart with shared axes for every series.
pub fn line_chart(title: &str, x_label: &str, series: &[Series], width: f64, height: f64) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let (left, bottom) = (48.0, 28.0);
    let (pw, ph) = (width - left - 8.0, height - bottom - 20.0);
    let map = |x: f64, y: f64| (left + (x - x0) / (x1 - x0) * pw, 20.0 + (1.0 - (y - y0) / (y1 - y0)) * ph);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<text x=\"{left}\" y=\"12\">{}</text>\n\
         <rect x=\"{left}\" y=\"20\" width=\"{pw:.1}\" height=\"{ph:.1}\" fill=\"none\" stroke=\"#999\"/>\n\
         <text x=\"{left}\" y=\"{:.1}\">{x0:.4}</text>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{x1:.4}</text>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{y1:.4}</text>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{y0:.4}</text>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        escape(title),
        height - 4.0,
        left + pw,
        height - 4.0,
        left - 2.0,
        28.0,
        left - 2.0,
        20.0 + ph,
        left + pw / 2.0,
        height - 4.0,
        escape(x_label)
    );
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| {
                let (px, py) = map(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            "<polyline class=\"series\" data-name=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" fill=\"{}\">{}</text>",
            escape(&s.name),
            pts.join(" "),
            color(i),
            left + 6.0,
            34.0 + 12.0 * i as f64,
            color(i),
            escape(&s.name)
        );
    }
    out
}
