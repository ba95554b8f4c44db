//! Plain-text rendering of a JSON evaluation report.

use std::fmt::Write as _;

use serde_json::Value;

fn num(v: &Value, digits: usize) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.digits$}"),
        None => String::from("NA"),
    }
}

fn text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::from("-"),
        other => other.to_string(),
    }
}

fn summary(out: &mut String, r: &Value, indent: &str) {
    let _ = writeln!(
        out,
        "{indent}task {}  utterances {}",
        text(&r["task"]),
        text(&r["n_utterances"])
    );
    let _ = writeln!(
        out,
        "{indent}accuracy {}  macro-F1 {}  mean AUC {}",
        num(&r["accuracy"], 4),
        num(&r["macro_f1"], 4),
        num(&r["mean_ovr_auc"], 4)
    );
    if let Some(aucs) = r["per_class_auc"].as_array() {
        let cells: Vec<String> = aucs.iter().enumerate().map(|(k, a)| format!("{k}:{}", num(a, 3))).collect();
        let _ = writeln!(out, "{indent}per-class AUC  {}", cells.join("  "));
    }
}

/// Summary lines, the speaker table, the intelligibility summary and one
/// summary block per slice.
pub fn render_report(report: &Value) -> String {
    let mut out = String::new();
    summary(&mut out, report, "");
    if let Some(speakers) = report["speakers"].as_array() {
        let width = speakers
            .iter()
            .map(|s| text(&s["speaker_id"]).len())
            .max()
            .unwrap_or(0)
            .max("speaker".len());
        let _ = writeln!(
            out,
            "\n{:<width$}  {:>5}  {:>3}  {:>4}  {:>10}  {:>8}  {:>8}",
            "speaker", "utts", "ref", "pred", "binarized%", "intell%", "ref%"
        );
        for s in speakers {
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>3}  {:>4}  {:>10}  {:>8}  {:>8}",
                text(&s["speaker_id"]),
                text(&s["n_utterances"]),
                text(&s["reference"]),
                text(&s["predicted"]),
                num(&s["binarized_accuracy"], 1),
                num(&s["intelligibility_percent"], 1),
                num(&s["reference_percent"], 1)
            );
        }
    }
    let intel = &report["intelligibility"];
    if intel.is_object() {
        let map: Vec<String> = intel["class_map"]
            .as_array()
            .map(|a| a.iter().map(|v| num(v, 0)).collect())
            .unwrap_or_default();
        let _ = writeln!(out, "\nclass map {}  pearson {}", map.join(","), num(&intel["pearson"], 4));
        if intel["map_strictly_decreasing"] == Value::Bool(false) {
            let _ = writeln!(out, "warning: class map is not strictly decreasing");
        }
    }
    if let Some(slices) = report["slices"].as_object() {
        for (name, sub) in slices {
            let _ = writeln!(out, "\nslice {name}");
            summary(&mut out, sub, "  ");
        }
    }
    out
}
