//! Markdown grid and long-form CSV of benchmark results.

use std::fs;
use std::path::Path;

use super::metrics::MetricValue;
use super::train::MetricsReport;
use super::BenchError;

/// Display string for a cell, e.g. `60.20` or `0.629`.
pub fn format_value(r: &MetricsReport) -> String {
    match r.value {
        MetricValue::Value(v) => format!("{:.*}", r.metric.decimals(), v),
        other => other.to_string(),
    }
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_owned());
        }
    }
    out
}

/// Rows are tasks, columns are models, both in first-appearance order.
pub fn report_markdown(metrics: &[MetricsReport]) -> String {
    let tasks = first_seen(metrics.iter().map(|m| m.task.as_str()));
    let models = first_seen(metrics.iter().map(|m| m.model.as_str()));
    report_grid(metrics, &models, &tasks)
}

/// Grid with explicit row and column order. The best displayed value in each
/// row is bolded; ties are all bolded. Missing cells show `-`.
pub fn report_grid(metrics: &[MetricsReport], models: &[String], tasks: &[String]) -> String {
    let mut out = String::from("| Task |");
    for m in models {
        out += &format!(" {m} |");
    }
    out += "\n|---|";
    out += &"---|".repeat(models.len());
    out += "\n";
    for task in tasks {
        let cells: Vec<Option<(String, Option<f64>)>> = models
            .iter()
            .map(|model| {
                metrics.iter().rev().find(|r| &r.task == task && &r.model == model).map(|r| {
                    let text = format_value(r);
                    let shown = r.value.value().map(|_| text.parse::<f64>().expect("formatted number"));
                    (text, shown)
                })
            })
            .collect();
        let best = cells.iter().flatten().filter_map(|c| c.1).fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
        out += &format!("| {task} |");
        for cell in &cells {
            match cell {
                Some((text, Some(v))) if Some(*v) == best => out += &format!(" **{text}** |"),
                Some((text, _)) => out += &format!(" {text} |"),
                None => out += " - |",
            }
        }
        out += "\n";
    }
    out
}

/// `task,model,metric,value,n,seed`, one row per report in input order.
pub fn report_csv(metrics: &[MetricsReport]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "model", "metric", "value", "n", "seed"])?;
    for r in metrics {
        w.write_record([
            r.task.clone(),
            r.model.clone(),
            r.metric.name().to_string(),
            r.value.to_string(),
            r.n.to_string(),
            r.seed.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_metrics(path: &Path, metrics: &[MetricsReport]) -> Result<(), BenchError> {
    let text = serde_json::to_string_pretty(metrics).map_err(|e| BenchError::Json(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsReport>, BenchError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| BenchError::Json(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::super::metrics::Metric;
    use super::*;
    use crate::dataset_store::Subset;

    fn rep(task: &str, model: &str, metric: Metric, value: MetricValue) -> MetricsReport {
        MetricsReport { task: task.into(), model: model.into(), metric, value, n: 10, seed: 1, subset: Subset::Test }
    }

    #[test]
    fn single_staging_cell() {
        let md = report_markdown(&[rep("Staging", "ABMIL", Metric::Accuracy, MetricValue::Value(60.2))]);
        assert_eq!(md, "| Task | ABMIL |\n|---|---|\n| Staging | **60.20** |\n");
        assert!(md.replace("**", "").contains("Staging | 60.20"));
    }

    #[test]
    fn empty_is_header_only() {
        assert_eq!(report_markdown(&[]), "| Task |\n|---|\n");
        assert_eq!(report_csv(&[]).unwrap(), "task,model,metric,value,n,seed\n");
    }

    #[test]
    fn ties_all_bolded_and_negative_correlations_kept() {
        let m = [
            rep("Inv", "SlideAve", Metric::Pearson, MetricValue::Value(-0.1234)),
            rep("Inv", "SlideMax", Metric::Pearson, MetricValue::Value(-0.0501)),
            rep("Inv", "ABMIL", Metric::Pearson, MetricValue::Value(-0.05049)),
            rep("Grade", "SlideAve", Metric::Accuracy, MetricValue::Value(80.0)),
            rep("Grade", "SlideMax", Metric::Accuracy, MetricValue::Value(75.5)),
            rep("Grade", "ABMIL", Metric::Accuracy, MetricValue::Value(80.0)),
        ];
        let md = report_markdown(&m);
        assert!(md.contains("| Inv | -0.123 | **-0.050** | **-0.050** |"), "{md}");
        assert!(md.contains("| Grade | **80.00** | 75.50 | **80.00** |"), "{md}");
    }

    #[test]
    fn zero_variance_cells_are_explicit() {
        let m = [
            rep("OS", "SlideAve", Metric::Pearson, MetricValue::ZeroVariance),
            rep("OS", "ABMIL", Metric::Pearson, MetricValue::Value(0.629)),
        ];
        let md = report_markdown(&m);
        assert!(md.contains("| OS | ZeroVariance | **0.629** |"), "{md}");
        let csv = report_csv(&m).unwrap();
        assert_eq!(csv, "task,model,metric,value,n,seed\nOS,SlideAve,pearson,ZeroVariance,10,1\nOS,ABMIL,pearson,0.629,10,1\n");
    }

    #[test]
    fn explicit_order_and_missing_cells() {
        let m = [rep("A", "ABMIL", Metric::Accuracy, MetricValue::Value(50.0))];
        let md = report_grid(&m, &["SlideAve".into(), "ABMIL".into()], &["A".into(), "B".into()]);
        assert_eq!(md, "| Task | SlideAve | ABMIL |\n|---|---|---|\n| A | - | **50.00** |\n| B | - | - |\n");
    }

    #[test]
    fn metrics_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = vec![rep("A", "ABMIL", Metric::Accuracy, MetricValue::Value(50.0)), rep("B", "x", Metric::Spearman, MetricValue::NoSamples)];
        write_metrics(&p, &m).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), m);
    }
}
