//! Self-contained SVG heat map of a win matrix.

use super::stats::WinMatrix;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

/// Red (ratio 0) through yellow to green (ratio 1); grey when undefined.
fn colour(ratio: Option<f64>) -> String {
    match ratio {
        None => "#dddddd".into(),
        Some(r) => {
            let r = r.clamp(0.0, 1.0);
            let (red, green) = if r < 0.5 { (255.0, 510.0 * r) } else { (510.0 * (1.0 - r), 255.0) };
            format!("#{:02x}{:02x}40", red.round() as u8, green.round() as u8)
        }
    }
}

pub fn win_matrix_svg(m: &WinMatrix) -> String {
    let k = m.methods.len();
    let cell = 64.0;
    let label_w = 10.0 + 7.5 * m.methods.iter().map(|s| s.chars().count()).max().unwrap_or(4).max(9) as f64;
    let top = 40.0;
    let width = label_w + cell * (k + 1) as f64 + 10.0;
    let height = top + cell * k as f64 + 10.0;
    let mut out = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    for (j, name) in m.methods.iter().chain(std::iter::once(&"min ratio".to_string())).enumerate() {
        let x = label_w + cell * j as f64 + cell / 2.0;
        out.push_str(&format!(
            "  <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            top - 10.0,
            escape(name)
        ));
    }
    for i in 0..k {
        let y = top + cell * i as f64;
        out.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            label_w - 6.0,
            y + cell / 2.0 + 4.0,
            escape(&m.methods[i])
        ));
        for j in 0..=k {
            let x = label_w + cell * j as f64;
            let (ratio, text) = if j == k {
                let r = m.min_ratio(i);
                (r, r.map(|v| format!("{v:.2}")).unwrap_or_default())
            } else {
                (m.ratio(i, j), m.cell_label(i, j))
            };
            let fill = if i == j { "#ffffff".to_string() } else { colour(ratio) };
            out.push_str(&format!(
                "  <rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\" stroke=\"#888888\"/>\n"
            ));
            if !text.is_empty() {
                out.push_str(&format!(
                    "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                    x + cell / 2.0,
                    y + cell / 2.0 + 4.0,
                    escape(&text)
                ));
            }
        }
    }
    out.push_str("</svg>\n");
    out
}
