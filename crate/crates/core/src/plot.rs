//! Bare-bones SVG rendering of histograms and scatter plots.

use std::fmt::Write as _;

use crate::report::SeriesHistogram;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n\
         <line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n",
        W / 2.0,
        escape(title),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axis_labels(out: &mut String, x: (f64, f64), y: (f64, f64)) {
    let _ = writeln!(
        out,
        "<text x=\"{PAD}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>\
         <text x=\"4\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>\
         <text x=\"4\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>",
        H - PAD + 14.0,
        x.0,
        W - PAD,
        H - PAD + 14.0,
        x.1,
        H - PAD,
        y.0,
        PAD,
        y.1,
    );
}

/// Overlaid step outlines, one per series; counts are normalized per series
/// so series of different sizes share the y axis.
pub fn histogram_svg(title: &str, series: &[SeriesHistogram]) -> String {
    let mut out = header(title);
    let bins = series.iter().flat_map(|s| s.bins.iter());
    let (x0, x1) = bins.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), bin| (a.min(bin.left), b.max(bin.right)));
    if x0.is_finite() && x1 > x0 {
        let sx = |v: f64| PAD + (v - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let fractions: Vec<Vec<f64>> = series
            .iter()
            .map(|s| {
                let total = s.bins.iter().map(|b| b.count).sum::<usize>().max(1) as f64;
                s.bins.iter().map(|b| b.count as f64 / total).collect()
            })
            .collect();
        let ymax = fractions.iter().flatten().fold(0.0f64, |a, &b| a.max(b)).max(1e-12);
        let sy = |v: f64| H - PAD - v / ymax * (H - 2.0 * PAD);
        for (k, (s, fr)) in series.iter().zip(&fractions).enumerate() {
            let color = COLORS[k % COLORS.len()];
            let mut path = format!("M {:.2} {:.2}", sx(s.bins[0].left), sy(0.0));
            for (b, f) in s.bins.iter().zip(fr) {
                let _ = write!(path, " L {:.2} {:.2} L {:.2} {:.2}", sx(b.left), sy(*f), sx(b.right), sy(*f));
            }
            let _ = write!(path, " L {:.2} {:.2}", sx(s.bins[s.bins.len() - 1].right), sy(0.0));
            let _ = writeln!(out, "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\"/>");
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" fill=\"{color}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
                W - PAD - 100.0,
                PAD + 14.0 * k as f64,
                escape(&s.series)
            );
        }
        axis_labels(&mut out, (x0, x1), (0.0, ymax));
    }
    out.push_str("</svg>\n");
    out
}

pub fn scatter_svg(x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let mut out = header(&format!("{y_label} vs {x_label}"));
    let finite: Vec<_> = points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    if !finite.is_empty() {
        let range = |f: fn(&(f64, f64)) -> f64| {
            let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(f(p)), b.max(f(p))));
            if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) }
        };
        let (x0, x1) = range(|p| p.0);
        let (y0, y1) = range(|p| p.1);
        for p in &finite {
            let cx = PAD + (p.0 - x0) / (x1 - x0) * (W - 2.0 * PAD);
            let cy = H - PAD - (p.1 - y0) / (y1 - y0) * (H - 2.0 * PAD);
            let _ = writeln!(out, "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3\" fill=\"{}\"/>", COLORS[0]);
        }
        axis_labels(&mut out, (x0, x1), (y0, y1));
    }
    out.push_str("</svg>\n");
    out
}
