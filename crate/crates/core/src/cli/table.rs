use crate::bootstrap::BootstrapAssessment;

/// π̂ laid out with one row per resample size and one column per interval.
/// Rows that excluded degenerate resamples are marked with `*`.
pub fn assessment_table(k: usize, b: usize, labels: &[String], rows: &[Vec<BootstrapAssessment>]) -> String {
    let width = labels.iter().map(|l| l.chars().count()).max().unwrap_or(0).max(6);
    let mut s = format!("π̂ for extrema of ψ̂_{k}, B = {b}\n");
    s.push_str(&format!("{:>5}", "m"));
    for l in labels {
        s.push_str(&format!("  {l:>width$}"));
    }
    s.push('\n');
    let mut any_degenerate = false;
    for row in rows {
        let m = row.first().map_or(0, |a| a.m);
        s.push_str(&format!("{m:>5}"));
        for a in row {
            let mark = if a.degenerate_count > 0 { "*" } else { " " };
            any_degenerate |= a.degenerate_count > 0;
            s.push_str(&format!("  {:>width$}{mark}", format!("{:.2}", a.pi_hat)));
        }
        s.push('\n');
    }
    if any_degenerate {
        s.push_str("* some resamples were degenerate and excluded; see assessment.json\n");
    }
    s
}
