//! CSV and SVG report emission. All writers are deterministic functions of
//! their inputs so identically-seeded runs produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

use super::stats::{EffectEstimate, RateRow};
use super::token_delta::DeltaTable;
use super::TextReport;

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

/// `id,count,spans` rows; spans are `start-end` token-index pairs joined
/// with `;`.
pub fn write_counts_csv(path: &Path, reports: &[(String, TextReport)]) -> Result<()> {
    let mut out = String::from("id,count,spans\n");
    for (id, report) in reports {
        let spans = report
            .matches
            .iter()
            .map(|m| format!("{}-{}", m.span.0, m.span.1))
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(out, "{id},{},{spans}", report.count);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a counts CSV back into `(id, count)` pairs.
pub fn read_counts_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let id = parts.next().unwrap_or("").to_string();
        let count: f64 = parts.next().unwrap_or("0").parse().unwrap_or(0.0);
        rows.push((id, count));
    }
    Ok(rows)
}

/// `method,dataset,point,ci_lo,ci_hi` effect table.
pub fn write_effect_csv(path: &Path, rows: &[(String, EffectEstimate)]) -> Result<()> {
    let mut out = String::from("method,dataset,point,ci_lo,ci_hi\n");
    for (dataset, e) in rows {
        let _ = writeln!(
            out,
            "{},{dataset},{},{},{}",
            e.method,
            fmt_f64(e.percent),
            fmt_f64(e.ci.0),
            fmt_f64(e.ci.1)
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `dataset,condition,n,mean,mean_lo,mean_hi,rate,rate_lo,rate_hi`.
pub fn write_rates_csv(path: &Path, rows: &[RateRow]) -> Result<()> {
    let mut out = String::from("dataset,condition,n,mean,mean_lo,mean_hi,rate,rate_lo,rate_hi\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.condition,
            r.n,
            fmt_f64(r.mean_mentions),
            fmt_f64(r.mean_ci.0),
            fmt_f64(r.mean_ci.1),
            fmt_f64(r.mention_rate),
            fmt_f64(r.rate_ci.0),
            fmt_f64(r.rate_ci.1)
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `token,p_base,p_steered,delta` for the top-k rows.
pub fn write_delta_csv(path: &Path, table: &DeltaTable) -> Result<()> {
    let mut out = String::from("token,p_base,p_steered,delta\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.token,
            fmt_f64(r.p_base),
            fmt_f64(r.p_steered),
            fmt_f64(r.delta)
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Horizontal bar chart of the top-k token deltas as a standalone SVG.
pub fn write_delta_svg(path: &Path, table: &DeltaTable) -> Result<()> {
    let rows = &table.rows;
    let bar_h = 18.0f64;
    let gap = 6.0f64;
    let label_w = 140.0f64;
    let chart_w = 420.0f64;
    let height = 40.0 + rows.len() as f64 * (bar_h + gap);
    let width = label_w + chart_w + 80.0;
    let max_abs = rows
        .iter()
        .map(|r| r.delta.abs())
        .fold(1e-12f64, f64::max);
    let mid = label_w + chart_w / 2.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" font-family=\"monospace\" font-size=\"12\">"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{label_w}\" y=\"16\">token probability delta (steered - baseline)</text>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{mid}\" y1=\"28\" x2=\"{mid}\" y2=\"{:.1}\" stroke=\"#888\"/>",
        height - 8.0
    );
    for (i, r) in rows.iter().enumerate() {
        let y = 32.0 + i as f64 * (bar_h + gap);
        let w = (r.delta.abs() / max_abs) * (chart_w / 2.0);
        let (x, color) = if r.delta < 0.0 {
            (mid - w, "#c0392b")
        } else {
            (mid, "#27ae60")
        };
        let _ = writeln!(
            svg,
            "<text x=\"4\" y=\"{:.1}\">{}</text>",
            y + bar_h - 5.0,
            xml_escape(&r.token)
        );
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{bar_h}\" fill=\"{color}\"/>"
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\">{:+.5}</text>",
            label_w + chart_w + 6.0,
            y + bar_h - 5.0,
            r.delta
        );
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg)?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// `step,loss` curve.
pub fn write_loss_csv(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for (step, loss) in curve {
        let _ = writeln!(out, "{step},{}", fmt_f64(*loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `layer,attr_rate,perplexity_ratio,selected` sweep report.
pub fn write_sweep_csv(
    path: &Path,
    rows: &[(String, f64, f64, bool)],
) -> Result<()> {
    let mut out = String::from("layer,attr_rate,perplexity_ratio,selected\n");
    for (layer, rate, ratio, selected) in rows {
        let _ = writeln!(
            out,
            "{layer},{},{},{}",
            fmt_f64(*rate),
            fmt_f64(*ratio),
            i32::from(*selected)
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{count_bigrams, AnnotationList, CountMode};

    #[test]
    fn counts_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.csv");
        let ann = AnnotationList::from_targets(vec!["tall".into()]).unwrap();
        let reports = vec![
            (
                "g0".to_string(),
                count_bigrams("a tall person", &ann, CountMode::Lenient),
            ),
            (
                "g1".to_string(),
                count_bigrams("nothing", &ann, CountMode::Lenient),
            ),
        ];
        write_counts_csv(&path, &reports).unwrap();
        let back = read_counts_csv(&path).unwrap();
        assert_eq!(back, vec![("g0".to_string(), 1.0), ("g1".to_string(), 0.0)]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("g0,1,1-2"));
    }

    #[test]
    fn svg_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let table = DeltaTable {
            rows: vec![
                super::super::DeltaRow {
                    token: "tall".into(),
                    p_base: 0.2,
                    p_steered: 0.05,
                    delta: -0.15,
                },
                super::super::DeltaRow {
                    token: "calm".into(),
                    p_base: 0.1,
                    p_steered: 0.18,
                    delta: 0.08,
                },
            ],
            full: vec![],
            full_delta_sum: 0.0,
            steps_base: 1,
            steps_steered: 1,
        };
        let a_path = dir.path().join("a.svg");
        let b_path = dir.path().join("b.svg");
        write_delta_svg(&a_path, &table).unwrap();
        write_delta_svg(&b_path, &table).unwrap();
        assert_eq!(
            std::fs::read(&a_path).unwrap(),
            std::fs::read(&b_path).unwrap()
        );
        let svg = std::fs::read_to_string(&a_path).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("tall"));
    }
}
