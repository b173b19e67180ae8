//! Standalone SVG plots and the comparison table.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::curves::report::{comparison_table, overlay_groups, CurveSeries, Facet, FitReport};
use crate::curves::poly_eval;

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;
const MAX_SCATTER: usize = 1500;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    lo: f64,
    hi: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.lo) / (self.hi - self.lo) * (W - LEFT - RIGHT)
    }
    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.lo) / (self.hi - self.lo) * (H - TOP - BOTTOM)
    }
    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Overlay of several models' series on one pair of axes (nats), with the
/// X=Y reference line.
pub fn overlay_svg(title: &str, series: &[&CurveSeries]) -> String {
    let values = series.iter().flat_map(|s| s.points.iter().flat_map(|p| [p.0, p.1]));
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    lo = lo.min(0.0).floor();
    hi = hi.ceil().max(lo + 1.0);
    let f = Frame { lo, hi };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="22" font-size="14" text-anchor="middle">{}</text>"#, (LEFT + W - RIGHT) / 2.0, escape(title));

    // axes and ticks
    let (x0, x1, y0, y1) = (f.px(lo), f.px(hi), f.py(lo), f.py(hi));
    let _ = writeln!(out, r#"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
    let ticks = 5;
    for i in 0..=ticks {
        let v = lo + (hi - lo) * i as f64 / ticks as f64;
        let _ = writeln!(out, r#"<line x1="{:.1}" y1="{y0:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, f.px(v), f.px(v), y0 + 4.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#, f.px(v), y0 + 16.0);
        let _ = writeln!(out, r#"<line x1="{:.1}" y1="{:.1}" x2="{x0:.1}" y2="{:.1}" stroke="black"/>"#, x0 - 4.0, f.py(v), f.py(v));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, x0 - 6.0, f.py(v) + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">target entropy H (nats)</text>"#, (x0 + x1) / 2.0, H - 12.0);
    let _ = writeln!(
        out,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">cross-entropy CE (nats)</text>"#,
        (y0 + y1) / 2.0
    );
    let _ = writeln!(
        out,
        r##"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x1:.1}" y2="{y1:.1}" stroke="#555" stroke-dasharray="5 4"><title>X=Y</title></line>"##
    );

    let mut skipped = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let step = s.points.len().div_ceil(MAX_SCATTER).max(1);
        let _ = writeln!(out, r#"<g fill="{color}" fill-opacity="0.25">"#);
        for p in s.points.iter().step_by(step) {
            let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="1.5"/>"#, f.px(f.clamp(p.0)), f.py(f.clamp(p.1)));
        }
        out.push_str("</g>\n");
        match &s.coeffs {
            Some(c) => {
                let (a, b) = s.x_range;
                let path: Vec<String> = (0..=120)
                    .map(|k| {
                        let x = a + (b - a) * k as f64 / 120.0;
                        format!("{:.1},{:.1}", f.px(x), f.py(f.clamp(poly_eval(c, x))))
                    })
                    .collect();
                let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
                if let Some(inf) = s.inflection {
                    let y = f.clamp(poly_eval(c, inf.x));
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="none" stroke="{color}" stroke-width="2"><title>x* = {:.4} ({})</title></circle>"#,
                        f.px(inf.x),
                        f.py(y),
                        inf.x,
                        inf.flag.as_str()
                    );
                }
            }
            None => skipped.push(s.model.clone()),
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = W - RIGHT + 12.0;
        let label = match s.inflection {
            Some(inf) => format!("{} (x*={:.2})", s.model, inf.x),
            None => format!("{} (fit skipped)", s.model),
        };
        let _ = writeln!(out, r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, ly - 9.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 14.0, escape(&label));
    }
    if !skipped.is_empty() {
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" fill="#a00">fit skipped (fewer occupied bins than coefficients): {}</text>"##,
            x0 + 8.0,
            y1 + 16.0,
            escape(&skipped.join(", "))
        );
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportFiles {
    pub overall: PathBuf,
    pub setups: Vec<PathBuf>,
    pub facets: Vec<PathBuf>,
    pub table_csv: PathBuf,
    pub table_txt: PathBuf,
}

/// Writes `report.svg` (all models, all cases), one overlay per setup,
/// facet plots under `facets/`, and the comparison table.
pub fn emit_report(fits: &[FitReport], out: &Path) -> io::Result<ReportFiles> {
    fs::create_dir_all(out.join("facets"))?;
    let mut files = ReportFiles::default();
    for (facet, series) in overlay_groups(fits) {
        let title = match &facet {
            Facet::Overall => "All cases".to_string(),
            other => other.label(),
        };
        let svg = overlay_svg(&title, &series);
        let path = match &facet {
            Facet::Overall => {
                files.overall = out.join("report.svg");
                files.overall.clone()
            }
            Facet::Setup { setup } => {
                let p = out.join(format!("setup_{setup}.svg"));
                files.setups.push(p.clone());
                p
            }
            other => {
                let kind = if matches!(other, Facet::History { .. }) { "history" } else { "setting" };
                let p = out.join("facets").join(format!("{kind}_{}.svg", other.slug()));
                files.facets.push(p.clone());
                p
            }
        };
        fs::write(&path, svg)?;
    }
    let table = comparison_table(fits);
    files.table_csv = out.join("comparison.csv");
    files.table_txt = out.join("comparison.txt");
    fs::write(&files.table_csv, table.to_csv())?;
    fs::write(&files.table_txt, table.to_text())?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::casegen::Setup;
    use crate::curves::report::fit_model;
    use crate::curves::CurveParams;
    use crate::ingest::Domain;
    use crate::metrics::ScoredCase;
    use crate::promptio::ParseStatus;

    fn scores(model: &str, n: usize, shift: f64) -> Vec<ScoredCase> {
        (0..n)
            .map(|i| {
                let setup = Setup::ALL[i % 3];
                let h = if setup == Setup::C { 0 } else { 1 + i % 2 };
                let x = 0.5 + 3.0 * i as f64 / n as f64;
                ScoredCase {
                    case_id: format!("c{i}"),
                    model: model.into(),
                    domain: Domain::Movies,
                    setup,
                    setting: if setup == Setup::B { "NoProxy".into() } else { "Age".into() },
                    proxy: "none".into(),
                    h,
                    group_size: 5,
                    entropy: x,
                    cross_entropy: x + shift,
                    parse_status: ParseStatus::Ok,
                }
            })
            .collect()
    }

    #[test]
    fn two_models_three_setups() {
        let dir = tempfile::tempdir().unwrap();
        let p = CurveParams::default();
        let fits = vec![
            fit_model("a", &scores("a", 600, 0.0), &["x"], &p),
            fit_model("b", &scores("b", 600, 0.4), &["x"], &p),
        ];
        let files = emit_report(&fits, dir.path()).unwrap();
        assert_eq!(files.setups.len(), 3);
        assert!(files.facets.iter().any(|f| f.ends_with("setting_age_def.svg")));
        assert!(files.facets.iter().any(|f| f.ends_with("history_h_0.svg")));
        let svg = fs::read_to_string(&files.overall).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("X=Y") && svg.contains("(nats)"));
        let csv = fs::read_to_string(&files.table_csv).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn single_model_and_skipped_fit() {
        let dir = tempfile::tempdir().unwrap();
        let fits = vec![fit_model("a", &scores("a", 4, 0.1), &["x"], &CurveParams::default())];
        let files = emit_report(&fits, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(&files.table_csv).unwrap().lines().count(), 2);
        let svg = fs::read_to_string(&files.overall).unwrap();
        assert!(svg.contains("fit skipped"));
        assert!(svg.contains("<circle"));
    }
}
