//! Static SVG charts: the confusion heatmap and the grouped accuracy bars.

use std::fmt::Write;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// White → dark blue.
fn blue(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

/// 2×2 heatmap; rows are the true class, columns the prediction.
pub fn confusion_svg(title: &str, labels: [&str; 2], cm: &[[usize; 2]; 2]) -> String {
    let (cell, left, top) = (140.0, 130.0, 70.0);
    let max = cm.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let mut s = String::new();
    let (w, h) = (left + 2.0 * cell + 30.0, top + 2.0 * cell + 60.0);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="14">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="16" font-weight="bold">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    for (r, row) in cm.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let t = v as f64 / max;
            let (x, y) = (left + c as f64 * cell, top + r as f64 * cell);
            let ink = if t > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}" stroke="#888"/>"##,
                blue(t)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" font-size="22" fill="{ink}">{v}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 8.0
            );
        }
    }
    for (i, label) in labels.iter().enumerate() {
        let mid = i as f64 * cell + cell / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            left + mid,
            top + 2.0 * cell + 22.0,
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 10.0,
            top + mid + 5.0,
            escape(label)
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" text-anchor="middle" fill="#444">predicted</text>"##,
        left + cell,
        top + 2.0 * cell + 46.0
    );
    let _ = writeln!(
        s,
        r##"<text x="18" y="{}" text-anchor="middle" fill="#444" transform="rotate(-90 18 {})">true</text>"##,
        top + cell,
        top + cell
    );
    s.push_str("</svg>\n");
    s
}

/// Grouped bars in [0, 1]: one group per category, one bar per series.
pub fn grouped_bars_svg(title: &str, categories: &[String], series: &[(&str, Vec<f64>)]) -> String {
    const COLORS: [&str; 4] = ["#9ecae1", "#3182bd", "#fdae6b", "#e6550d"];
    let (left, top, plot_h, bar, gap) = (60.0, 60.0, 260.0, 34.0, 30.0);
    let group_w = bar * series.len() as f64 + gap;
    let w = left + group_w * categories.len().max(1) as f64 + 20.0;
    let h = top + plot_h + 90.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="26" text-anchor="middle" font-size="15" font-weight="bold">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{y}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##,
            w - 20.0,
            left - 6.0,
            y + 4.0
        );
    }
    for (g, cat) in categories.iter().enumerate() {
        let x0 = left + gap / 2.0 + g as f64 * group_w;
        for (k, (_, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let bh = plot_h * v;
            let x = x0 + k as f64 * bar;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{}" width="{}" height="{bh}" fill="{}"/><text x="{}" y="{}" text-anchor="middle" font-size="10">{v:.3}</text>"#,
                top + plot_h - bh,
                bar - 2.0,
                COLORS[k % COLORS.len()],
                x + bar / 2.0 - 1.0,
                top + plot_h - bh - 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + bar * series.len() as f64 / 2.0,
            top + plot_h + 18.0,
            escape(cat)
        );
    }
    for (k, (name, _)) in series.iter().enumerate() {
        let x = left + k as f64 * 140.0;
        let y = top + plot_h + 50.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="14" height="14" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 11.0,
            COLORS[k % COLORS.len()],
            x + 20.0,
            y,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
