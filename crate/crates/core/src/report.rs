//! Machine-readable run reports: `report.csv`, per-iteration metrics
//! records, and static `curves.svg` evolution plots.
//!
//! Emission is fully deterministic — fixed row ordering, fixed float
//! formatting — so re-emitting from the same states is byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{EvalReport, SkillMatrix};
use crate::persist::write_atomic;

/// Everything measured for one evolution iteration. Serialized as the
/// iteration's `metrics.json`; the fields are exactly what `report.csv`
/// rows are derived from, so the two artifacts can never disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub dev: EvalReport,
    pub test: EvalReport,
    /// Skill matrix over the test split.
    pub test_skill: SkillMatrix,
    /// Instructions answered to build this iteration's distillation set.
    pub dataset_size: usize,
    /// Training accuracy of the iteration's router, when one was trained.
    pub router_accuracy: Option<f64>,
    /// Pool member chosen to summarize debates, when debating.
    pub debate_summarizer: Option<String>,
}

/// Renders the cross-iteration CSV. Columns: iteration, family, metric,
/// model_id, value. Aggregate rows carry `-` as the model id.
pub fn report_csv(states: &[IterationMetrics]) -> String {
    let mut out = String::from("iteration,family,metric,model_id,value\n");
    for st in states {
        for (family, fam) in &st.dev.families {
            let f = family.as_str();
            let t = st.iteration;
            for (id, score) in st.dev.model_ids.iter().zip(&fam.single_scores) {
                push_row(&mut out, t, f, "dev_single_exact", id, *score);
            }
            push_row(&mut out, t, f, "dev_single_avg", "-", fam.single_avg);
            push_row(&mut out, t, f, "dev_single_std", "-", fam.single_std);
            push_row(&mut out, t, f, "dev_best_single", "-", fam.best_single);
            push_row(&mut out, t, f, "dev_multi", "-", fam.multi_score);

            let test = &st.test.families[family];
            for (id, score) in st.test.model_ids.iter().zip(&test.single_scores) {
                push_row(&mut out, t, f, "test_single_exact", id, *score);
            }
            push_row(&mut out, t, f, "test_single_avg", "-", test.single_avg);
            push_row(&mut out, t, f, "test_single_std", "-", test.single_std);
            push_row(&mut out, t, f, "test_best_single", "-", test.best_single);
            push_row(&mut out, t, f, "test_multi", "-", test.multi_score);

            let skill = st.test_skill.families[family];
            push_row(&mut out, t, f, "test_skill_yy", "-", skill.yes_yes as f64);
            push_row(&mut out, t, f, "test_skill_yn", "-", skill.yes_no as f64);
            push_row(&mut out, t, f, "test_skill_ny", "-", skill.no_yes as f64);
            push_row(&mut out, t, f, "test_skill_nn", "-", skill.no_no as f64);
        }
    }
    out
}

fn push_row(out: &mut String, iteration: usize, family: &str, metric: &str, id: &str, v: f64) {
    out.push_str(&format!("{iteration},{family},{metric},{id},{v:.6}\n"));
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

/// Renders a static SVG of dev macro exact-match vs iteration: one polyline
/// per pool member plus one for the collaboration system. No scripts, no
/// external references.
pub fn curves_svg(states: &[IterationMetrics]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 180.0, 30.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let n = states.len().max(2) as f64;
    let x = |t: usize| left + plot_w * t as f64 / (n - 1.0);
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut series: Vec<(String, Vec<f64>)> = Vec::new();
    if let Some(first) = states.first() {
        for (i, id) in first.dev.model_ids.iter().enumerate() {
            let vals = states.iter().map(|s| s.dev.macro_models()[i]).collect();
            series.push((id.clone(), vals));
        }
        series.push((
            "multi".to_string(),
            states.iter().map(|s| s.dev.macro_multi()).collect(),
        ));
    }

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w:.0} {h:.0}\" \
         font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\">dev exact match by iteration</text>\n",
        left + plot_w / 2.0
    ));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let ty = y(tick);
        svg.push_str(&format!(
            "<line x1=\"{left:.1}\" y1=\"{ty:.1}\" x2=\"{:.1}\" y2=\"{ty:.1}\" \
             stroke=\"#dddddd\"/>\n",
            left + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{tick:.2}</text>\n",
            left - 6.0,
            ty + 4.0
        ));
    }
    for (t, _) in states.iter().enumerate() {
        let tx = x(t);
        svg.push_str(&format!(
            "<text x=\"{tx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">t={t}</text>\n",
            top + plot_h + 16.0
        ));
    }
    for (i, (name, vals)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = vals
            .iter()
            .enumerate()
            .map(|(t, v)| format!("{:.1},{:.1}", x(t), y(*v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = top + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n",
            left + plot_w + 10.0,
            left + plot_w + 30.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{name}</text>\n",
            left + plot_w + 36.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `report.csv` and `curves.svg` into the run directory.
pub fn emit_reports(run_dir: &Path, states: &[IterationMetrics]) -> Result<()> {
    write_atomic(&run_dir.join("report.csv"), report_csv(states).as_bytes())?;
    write_atomic(&run_dir.join("curves.svg"), curves_svg(states).as_bytes())?;
    Ok(())
}
