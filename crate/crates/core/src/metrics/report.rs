//! Plain-text outputs: a tab-separated PSNR table and gnuplot-ready gain curves.

use std::fmt::Write as _;

/// One row of the quality table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub sequence: String,
    pub qp: u8,
    pub baseline_db: f64,
    pub method_db: f64,
}

impl ReportRow {
    pub fn delta_db(&self) -> f64 {
        self.method_db - self.baseline_db
    }
}

/// Tab-separated table with a header line and a trailing mean row.
pub fn format_report_table(rows: &[ReportRow]) -> String {
    let mut s = String::from("sequence\tqp\tbaseline_psnr\tmethod_psnr\tdelta_psnr\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{:.4}\t{:.4}\t{:.4}", r.sequence, r.qp, r.baseline_db, r.method_db, r.delta_db());
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&ReportRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let _ = writeln!(
            s,
            "mean\t-\t{:.4}\t{:.4}\t{:.4}",
            mean(&|r| r.baseline_db),
            mean(&|r| r.method_db),
            mean(&|r| r.delta_db())
        );
    }
    s
}

/// Whitespace-separated columns `iteration <series...>`, one row per iteration.
///
/// Shorter series leave `NaN` cells, which gnuplot skips.
pub fn format_gain_curves(series: &[(String, Vec<f64>)]) -> String {
    let mut s = String::from("# iteration");
    for (name, _) in series {
        let _ = write!(s, " {}", name.replace(char::is_whitespace, "_"));
    }
    s.push('\n');
    let rows = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    for i in 0..rows {
        let _ = write!(s, "{i}");
        for (_, v) in series {
            match v.get(i) {
                Some(g) => {
                    let _ = write!(s, " {g:.6}");
                }
                None => s.push_str(" NaN"),
            }
        }
        s.push('\n');
    }
    s
}
