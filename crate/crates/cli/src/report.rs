//! Text/JSON report files and small hand-written SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::metrics::FlipTable;
use crate::train::EpochLog;

/// Writes `<name>.txt` and `<name>.json` into `dir`.
pub fn write_report<T: Serialize>(dir: &Path, name: &str, text: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{name}.txt")), text)?;
    fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn open_svg(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Polylines of `l_cls`, `l_av` and `l_total` per epoch.
pub fn loss_curves_svg(log: &[EpochLog]) -> String {
    let mut svg = open_svg("training losses");
    let series: [(&str, Vec<f64>); 3] = [
        ("l_cls", log.iter().map(|e| e.l_cls).collect()),
        ("l_av", log.iter().map(|e| e.l_av).collect()),
        ("l_total", log.iter().map(|e| e.l_total).collect()),
    ];
    let ymax = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold(1e-9f64, f64::max);
    let n = log.len().max(2) as f64 - 1.0;
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / n;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v / ymax).clamp(0.0, 1.0);
    let _ = writeln!(
        svg,
        "<line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/><line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{0}\" stroke=\"black\"/>",
        H - PAD,
        W - PAD
    );
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">epoch</text>", W / 2.0, H - 12.0);
    let _ = writeln!(svg, "<text x=\"8\" y=\"{}\">{ymax:.3}</text>", PAD);
    for (k, (name, values)) in series.iter().enumerate() {
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.1},{:.1}", x(i), y(v)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>",
            COLORS[k],
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{}\">{name}</text>",
            W - PAD - 60.0,
            PAD + 16.0 * k as f64,
            COLORS[k]
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bars of helps/hurts per class.
pub fn flip_bars_svg(table: &FlipTable) -> String {
    let mut svg = open_svg("prediction flips when audio is added");
    let groups = [("violent", &table.violent), ("nonviolent", &table.nonviolent), ("total", &table.overall)];
    let vmax = groups.iter().map(|(_, c)| c.helps.max(c.hurts)).max().unwrap_or(1).max(1) as f64;
    let slot = (W - 2.0 * PAD) / groups.len() as f64;
    let bar = slot / 4.0;
    let _ = writeln!(svg, "<line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>", H - PAD, W - PAD);
    for (g, (name, c)) in groups.iter().enumerate() {
        let x0 = PAD + slot * g as f64 + slot / 4.0;
        for (k, (label, v)) in [("helps", c.helps), ("hurts", c.hurts)].into_iter().enumerate() {
            let h = (H - 2.0 * PAD) * v as f64 / vmax;
            let x = x0 + bar * k as f64;
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\"><title>{label}</title></rect>",
                H - PAD - h,
                bar - 4.0,
                COLORS[k + 2]
            );
            let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v}</text>", x + bar / 2.0, H - PAD - h - 4.0);
        }
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{name}</text>", x0 + bar, H - PAD + 16.0);
    }
    let _ = writeln!(svg, "<text x=\"{}\" y=\"40\" fill=\"{}\">helps</text>", W - PAD - 60.0, COLORS[2]);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"56\" fill=\"{}\">hurts</text>", W - PAD - 60.0, COLORS[3]);
    svg.push_str("</svg>\n");
    svg
}
