use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{Variant, LEFT_QFS, QF_PAIR_GAP};
use crate::error::{Error, Result};
use crate::metrics::ResultGrid;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn pair_label(left: u8) -> String {
    format!("{left}/{}", left + QF_PAIR_GAP)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "missing".to_string(), |m| format!("{m}"))
}

/// One line per model over the 15 QF pairs for `variant`; writes the SVG
/// and a sidecar `.csv` with the plotted values.
pub fn plot_qf_curves(grid: &ResultGrid, variant: Variant, svg_path: &Path) -> Result<()> {
    let models: Vec<String> = grid
        .models()
        .into_iter()
        .filter(|m| LEFT_QFS.iter().any(|&q| grid.get(m, q, variant).is_some()))
        .collect();
    if models.is_empty() {
        return Err(Error::Data(format!("no {variant} results to plot")));
    }

    let mut table = String::from("model,left_qf,right_qf,variant,mean_mcc,count\n");
    for m in &models {
        for &q in &LEFT_QFS {
            let cell = grid.get(m, q, variant);
            let _ = writeln!(
                table,
                "{m},{q},{},{variant},{},{}",
                q + QF_PAIR_GAP,
                fmt_cell(cell.map(|c| c.mean)),
                cell.map_or(0, |c| c.count)
            );
        }
    }
    write_text(&svg_path.with_extension("csv"), &table)?;

    let (w, h) = (760.0, 420.0);
    let (left, right, top, bottom) = (60.0, 150.0, 30.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x_at = |i: usize| left + pw * i as f64 / (LEFT_QFS.len() - 1) as f64;
    let y_at = |v: f64| top + ph * (1.0 - v.clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = y_at(v);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, left - 6.0, y + 4.0);
    }
    for (i, &q) in LEFT_QFS.iter().enumerate() {
        let x = x_at(i);
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="end" transform="rotate(-45 {x} {})">{}</text>"#,
            top + ph + 14.0,
            top + ph + 14.0,
            pair_label(q)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">QF pair</text>"#, left + pw / 2.0, h - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">mean best MCC ({variant})</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (mi, m) in models.iter().enumerate() {
        let color = PALETTE[mi % PALETTE.len()];
        // break the line where a cell is missing
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for (i, &q) in LEFT_QFS.iter().enumerate() {
            match grid.get(m, q, variant) {
                Some(c) => segments.last_mut().expect("non-empty").push((x_at(i), y_at(c.mean))),
                None => segments.push(Vec::new()),
            }
        }
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
            for (x, y) in seg {
                let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
            }
        }
        let ly = top + 14.0 + 18.0 * mi as f64;
        let lx = left + pw + 16.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, esc(m));
    }
    s.push_str("</svg>\n");
    write_text(svg_path, &s)
}

/// Rows in display order: lossless on top, then Rec. QF descending.
pub fn matrix_rows() -> Vec<Variant> {
    let mut v = Variant::all();
    v[1..].reverse();
    v
}

fn shade(v: f64) -> String {
    let t = v.clamp(0.0, 1.0);
    let c = (255.0 * (1.0 - 0.85 * t)).round() as u8;
    format!("rgb({c},{c},255)")
}

/// 8 x 15 matrix of mean best MCC for one model; cells without data carry
/// an explicit "missing" marker.
pub fn plot_recompression_matrix(grid: &ResultGrid, model: &str, svg_path: &Path) -> Result<()> {
    let known = grid.models();
    if !known.iter().any(|m| m == model) {
        return Err(Error::Config(format!(
            "unknown model '{model}'; known models: {}",
            if known.is_empty() { "(none)".to_string() } else { known.join(", ") }
        )));
    }
    let rows = matrix_rows();
    let mut table = String::from("variant");
    for &q in &LEFT_QFS {
        let _ = write!(table, ",{}", pair_label(q));
    }
    table.push('\n');
    for &v in &rows {
        table.push_str(&v.to_string());
        for &q in &LEFT_QFS {
            let _ = write!(table, ",{}", fmt_cell(grid.get(model, q, v).map(|c| c.mean)));
        }
        table.push('\n');
    }
    write_text(&svg_path.with_extension("csv"), &table)?;

    let (cw, ch) = (44.0, 30.0);
    let (left, top) = (80.0, 40.0);
    let w = left + cw * LEFT_QFS.len() as f64 + 20.0;
    let h = top + ch * rows.len() as f64 + 60.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, esc(model));
    for (r, &v) in rows.iter().enumerate() {
        let y = top + ch * r as f64;
        let label = match v {
            Variant::Lossless => "lossless".to_string(),
            Variant::Recompressed(q) => format!("Rec. {q}"),
        };
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#, left - 6.0, y + ch / 2.0 + 4.0);
        for (c, &q) in LEFT_QFS.iter().enumerate() {
            let x = left + cw * c as f64;
            match grid.get(model, q, v) {
                Some(cell) => {
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{}" stroke="white"/>"#,
                        shade(cell.mean)
                    );
                    let _ = writeln!(
                        s,
                        r#"<text x="{}" y="{}" text-anchor="middle">{:.2}</text>"#,
                        x + cw / 2.0,
                        y + ch / 2.0 + 4.0,
                        cell.mean
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r##"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="#eee" stroke="#999" stroke-dasharray="3,2" class="missing"/>"##
                    );
                    let _ = writeln!(
                        s,
                        r##"<text x="{}" y="{}" text-anchor="middle" fill="#888" font-size="8">missing</text>"##,
                        x + cw / 2.0,
                        y + ch / 2.0 + 3.0
                    );
                }
            }
        }
    }
    let yb = top + ch * rows.len() as f64;
    for (c, &q) in LEFT_QFS.iter().enumerate() {
        let x = left + cw * c as f64 + cw / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="end" transform="rotate(-45 {x} {})">{}</text>"#,
            yb + 14.0,
            yb + 14.0,
            pair_label(q)
        );
    }
    s.push_str("</svg>\n");
    write_text(svg_path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aggregate_grid, EvalRecord, Polarity};

    fn grid(models: &[&str], variants: &[Variant]) -> ResultGrid {
        let mut rs = Vec::new();
        for m in models {
            for &q in &LEFT_QFS {
                for &v in variants {
                    rs.push(EvalRecord {
                        model: m.to_string(),
                        source_id: "s".into(),
                        left_qf: q,
                        right_qf: q + 10,
                        variant: v,
                        best_mcc: f64::from(q) / 100.0,
                        best_threshold: 0.0,
                        polarity: Polarity::Positive,
                    });
                }
            }
        }
        aggregate_grid(&rs).unwrap()
    }

    #[test]
    fn curves_table_matches_grid() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid(&["HighQF", "WideQF", "HighQFRec"], &[Variant::Lossless]);
        let p = dir.path().join("c.svg");
        plot_qf_curves(&g, Variant::Lossless, &p).unwrap();
        let svg = std::fs::read_to_string(&p).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("20/30") && svg.contains("90/100"));
        let csv = std::fs::read_to_string(p.with_extension("csv")).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 45);
        for row in rows {
            let f: Vec<&str> = row.split(',').collect();
            let q: u8 = f[1].parse().unwrap();
            let mean: f64 = f[4].parse().unwrap();
            assert_eq!(mean, g.get(f[0], q, Variant::Lossless).unwrap().mean);
        }
        assert!(plot_qf_curves(&ResultGrid::default(), Variant::Lossless, &p).is_err());
    }

    #[test]
    fn matrix_shape_and_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid(&["HighQF"], &[Variant::Lossless, Variant::Recompressed(90)]);
        let p = dir.path().join("m.svg");
        plot_recompression_matrix(&g, "HighQF", &p).unwrap();
        let csv = std::fs::read_to_string(p.with_extension("csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 9);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 16));
        assert_eq!(csv.matches("missing").count(), 6 * 15);
        let svg = std::fs::read_to_string(&p).unwrap();
        assert_eq!(svg.matches("class=\"missing\"").count(), 6 * 15);
        let e = plot_recompression_matrix(&g, "Nope", &p).unwrap_err();
        assert!(e.to_string().contains("HighQF"));
    }
}
