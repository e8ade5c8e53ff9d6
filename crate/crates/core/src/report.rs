//! CSV rendering of the posterior summaries.
//!
//! Floats are printed with 17 significant digits in a fixed scientific form,
//! so identical runs produce byte-identical files.

use crate::inference::{ScoredRow, SubjectScore, Summary};

/// Fixed 17-significant-digit rendering; negative zero normalizes to zero.
pub fn fmt_g17(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{:.16e}", x)
}

pub fn render_coefficients(summary: &Summary) -> String {
    let mut out = String::from("block,term,mean,cri_lower,cri_upper\n");
    for row in &summary.coefficients {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.block,
            row.term,
            fmt_g17(row.mean),
            fmt_g17(row.cri_lower),
            fmt_g17(row.cri_upper)
        ));
    }
    out
}

const SCORE_HEADER: &str = "subject_id,index_value,tbi,decision,decision_mean_rule,pred_arm0,pred_arm1,delta_mean,delta_cri_lower,delta_cri_upper";

fn push_score_fields(out: &mut String, s: &SubjectScore) {
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{}",
        s.subject_id,
        fmt_g17(s.index_value),
        fmt_g17(s.tbi),
        s.decision,
        s.decision_mean_rule,
        fmt_g17(s.pred_mean_arm0),
        fmt_g17(s.pred_mean_arm1),
        fmt_g17(s.delta_mean),
        fmt_g17(s.cri_delta.0),
        fmt_g17(s.cri_delta.1)
    ));
}

pub fn render_subject_scores(scores: &[SubjectScore]) -> String {
    let mut out = String::from(SCORE_HEADER);
    out.push('\n');
    for s in scores {
        push_score_fields(&mut out, s);
        out.push('\n');
    }
    out
}

/// Score output for new data: the subject-score columns plus the
/// extrapolation flag.
pub fn render_scored_rows(rows: &[ScoredRow]) -> String {
    let mut out = String::from(SCORE_HEADER);
    out.push_str(",extrapolated\n");
    for r in rows {
        push_score_fields(&mut out, &r.score);
        out.push_str(if r.extrapolated { ",true\n" } else { ",false\n" });
    }
    out
}

pub fn render_figure_left(summary: &Summary) -> String {
    let mut out = String::from("u,exp_delta_mean,cri_lower,cri_upper\n");
    for p in &summary.curve {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_g17(p.u),
            fmt_g17(p.mean),
            fmt_g17(p.cri_lower),
            fmt_g17(p.cri_upper)
        ));
    }
    out
}

pub fn render_figure_right(summary: &Summary) -> String {
    let mut out = String::from("subject_id,tbi,exp_delta_mean,cri_lower,cri_upper,decision\n");
    for p in &summary.subject_curve {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.subject_id,
            fmt_g17(p.tbi),
            fmt_g17(p.mean),
            fmt_g17(p.cri_lower),
            fmt_g17(p.cri_upper),
            p.decision
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_g17(2.5), "2.5000000000000000e0");
        assert_eq!(fmt_g17(-0.125), "-1.2500000000000000e-1");
        assert_eq!(fmt_g17(0.0), "0.0000000000000000e0");
        assert_eq!(fmt_g17(-0.0), "0.0000000000000000e0");
        // round-trips exactly
        let x = std::f64::consts::PI * 1e-7;
        assert_eq!(fmt_g17(x).parse::<f64>().unwrap(), x);
    }
}
