//! SVG line charts and a text table for sweep results.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    /// (tick label, x, y)
    pub points: Vec<(String, f64, f64)>,
}

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("nothing to plot")]
    Empty,
    #[error("plot output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct PlotOutput {
    pub svgs: Vec<PathBuf>,
    pub table: String,
    pub warnings: Vec<String>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 60.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Chart for one series. Ticks sit at the data points.
pub fn svg(series: &Series) -> String {
    let pts = &series.points;
    let (xmin, xmax) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let (mut ymin, mut ymax) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.2), b.max(p.2)));
    if ymin > 0.0 {
        ymin = 0.0;
    }
    if (ymax - ymin).abs() < f64::EPSILON {
        ymax = ymin + 1.0;
    }
    let xspan = if (xmax - xmin).abs() < f64::EPSILON { 1.0 } else { xmax - xmin };
    let px = |x: f64| PAD + (x - xmin) / xspan * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - ymin) / (ymax - ymin) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, W / 2.0, esc(&series.name));
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    for (label, x, _) in pts {
        let _ = writeln!(
            s,
            r#"<g class="xtick"><line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/><text x="{0}" y="{3}" text-anchor="middle" font-size="12">{4}</text></g>"#,
            px(*x),
            H - PAD,
            H - PAD + 5.0,
            H - PAD + 20.0,
            esc(label)
        );
    }
    for i in 0..=4 {
        let y = ymin + (ymax - ymin) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="11">{:.3}</text>"#,
            PAD - 6.0,
            py(y) + 4.0,
            y
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, H - 12.0, esc(&series.x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {0})">{1}</text>"#,
        H / 2.0,
        esc(&series.y_label)
    );
    let path: Vec<String> = pts.iter().map(|(_, x, y)| format!("{:.1},{:.1}", px(*x), py(*y))).collect();
    let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, path.join(" "));
    for (_, x, y) in pts {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="steelblue"/>"#, px(*x), py(*y));
    }
    s.push_str("</svg>\n");
    s
}

pub fn table(series: &[Series]) -> String {
    let mut s = String::new();
    for se in series {
        let _ = writeln!(s, "{}", se.name);
        let _ = writeln!(s, "  {:<12} {:>14}", se.x_label, se.y_label);
        for (label, _, y) in &se.points {
            let _ = writeln!(s, "  {label:<12} {y:>14.4}");
        }
    }
    s
}

fn file_name(name: &str) -> String {
    let s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
    format!("{}.svg", s.trim_matches('_'))
}

/// Writes one SVG per series with at least two points, plus the table.
pub fn plot_report(series: &[Series], out_dir: &Path) -> Result<PlotOutput, PlotError> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(PlotError::Empty);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut out = PlotOutput { table: table(series), ..PlotOutput::default() };
    for se in series {
        if se.points.len() < 2 {
            out.warnings.push(format!("{}: {} point(s), table only", se.name, se.points.len()));
            continue;
        }
        let path = out_dir.join(file_name(&se.name));
        std::fs::write(&path, svg(se))?;
        out.svgs.push(path);
    }
    std::fs::write(out_dir.join("table.txt"), &out.table)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: usize) -> Series {
        Series {
            name: "Comm saved".into(),
            x_label: "dataset".into(),
            y_label: "ms".into(),
            points: (0..n).map(|i| (format!("p{i}"), i as f64, (i * i) as f64)).collect(),
        }
    }

    #[test]
    fn three_points_three_ticks() {
        let dir = tempfile::tempdir().unwrap();
        let out = plot_report(&[series(3)], dir.path()).unwrap();
        assert_eq!(out.svgs.len(), 1);
        let body = std::fs::read_to_string(&out.svgs[0]).unwrap();
        assert_eq!(body.matches(r#"class="xtick""#).count(), 3);
        assert!(out.table.contains("p2"));
    }

    #[test]
    fn empty_is_error_single_is_warning() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(plot_report(&[], dir.path()), Err(PlotError::Empty)));
        assert!(matches!(plot_report(&[series(0)], dir.path()), Err(PlotError::Empty)));
        let out = plot_report(&[series(1)], dir.path()).unwrap();
        assert!(out.svgs.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }
}
