//! Minimal SVG output for ROA slices and offset bars.

use std::fmt::Write as _;

use nalgebra::DVector;

const PANEL: f64 = 260.0;
const PAD: f64 = 30.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// One panel per coordinate plane, each scaled to its own slice.
pub fn roa_svg(slices: &[((usize, usize), Vec<[f64; 2]>)]) -> String {
    let cols = slices.len().clamp(1, 3);
    let rows = slices.len().div_ceil(cols).max(1);
    let mut s = open(cols as f64 * PANEL, rows as f64 * PANEL);
    for (k, ((i, j), pts)) in slices.iter().enumerate() {
        let ox = (k % cols) as f64 * PANEL;
        let oy = (k / cols) as f64 * PANEL;
        let r = pts
            .iter()
            .flat_map(|p| [p[0].abs(), p[1].abs()])
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let scale = (PANEL / 2.0 - PAD) / r;
        let (cx, cy) = (ox + PANEL / 2.0, oy + PANEL / 2.0);
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{cy:.2}\" x2=\"{:.2}\" y2=\"{cy:.2}\" stroke=\"#bbb\"/>\
             <line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"#bbb\"/>",
            ox + PAD / 2.0,
            ox + PANEL - PAD / 2.0,
            oy + PAD / 2.0,
            oy + PANEL - PAD / 2.0
        );
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", cx + scale * p[0], cy - scale * p[1]))
            .collect();
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"#1f77b4\" fill-opacity=\"0.15\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>",
            path.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\">x{j} vs x{i} (half-width {r:.3e})</text>",
            ox + 8.0,
            oy + 14.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Grouped bars: one group per step, one bar per facet, with the facet's
/// limit drawn as a tick. Unbounded facets are marked with a cross.
pub fn gamma_svg(table: &[Vec<Option<f64>>], limits: &DVector<f64>) -> String {
    let m = limits.len().max(1);
    let steps = table.len().max(1);
    let bar = 14.0;
    let group = bar * m as f64 + 16.0;
    let (w, h) = (2.0 * PAD + group * steps as f64 + 120.0, 300.0);
    let plot_h = h - 2.0 * PAD;
    let top = table
        .iter()
        .flatten()
        .flatten()
        .chain(limits.iter())
        .map(|v| v.abs())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let top = top * 1.1;
    let y0 = h / 2.0;
    let y = |v: f64| y0 - v / top * plot_h / 2.0;
    let mut s = open(w, h);
    let _ = writeln!(
        s,
        "<line x1=\"{PAD:.2}\" y1=\"{y0:.2}\" x2=\"{:.2}\" y2=\"{y0:.2}\" stroke=\"#888\"/>",
        PAD + group * steps as f64
    );
    for (k, row) in table.iter().enumerate() {
        let gx = PAD + group * k as f64 + 8.0;
        for (i, g) in row.iter().enumerate() {
            let x = gx + bar * i as f64;
            let c = COLORS[i % COLORS.len()];
            match g {
                Some(v) => {
                    let (a, b) = (y(*v).min(y0), y(*v).max(y0));
                    let _ = writeln!(
                        s,
                        "<rect x=\"{x:.2}\" y=\"{a:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{c}\"><title>step {} facet {i}: {v:e}</title></rect>",
                        bar - 2.0,
                        b - a,
                        k + 1
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        "<text x=\"{x:.2}\" y=\"{:.2}\" fill=\"{c}\">×</text>",
                        y0 - 4.0
                    );
                }
            }
            if let Some(&lim) = limits.get(i) {
                let _ = writeln!(
                    s,
                    "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"black\" stroke-dasharray=\"2,1\"/>",
                    x - 1.0,
                    x + bar - 1.0,
                    ly = y(lim)
                );
            }
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\">k={}</text>",
            gx,
            h - 8.0,
            k + 1
        );
    }
    let lx = PAD + group * steps as f64 + 10.0;
    for i in 0..limits.len() {
        let _ = writeln!(
            s,
            "<rect x=\"{lx:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.2}\" y=\"{:.2}\">facet {i}</text>",
            PAD + 14.0 * i as f64,
            COLORS[i % COLORS.len()],
            lx + 14.0,
            PAD + 14.0 * i as f64 + 9.0
        );
    }
    s.push_str("</svg>\n");
    s
}
