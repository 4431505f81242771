//! Report generation: per-group mean/std summaries, rank-sum significance
//! markers between model arms, and value-exact CSV plus color-ramped HTML.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::wilcoxon_ranksum;

/// One scalar observation: a metric value for a volume under one model arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub dataset: String,
    pub model: String,
    pub class: String,
    pub metric: String,
    pub volume: String,
    pub value: f64,
}

/// One aggregated summary row (the value-exact CSV schema).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub model: String,
    pub class: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Name of the synthesized mean-over-classes row.
pub const ALL_CLASS: &str = "All";

/// A rank-sum comparison of one model arm against the baseline arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmComparison {
    pub dataset: String,
    pub class: String,
    pub metric: String,
    pub model: String,
    pub baseline: String,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Aggregated summary plus everything the renderers need.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub title: String,
    pub rows: Vec<SummaryRow>,
    pub comparisons: Vec<ArmComparison>,
    pub baseline: Option<String>,
    pub warnings: Vec<String>,
}

/// Group records by (dataset, model, class, metric) and emit mean,
/// population std, and count per group, plus a class-weighted "All" row per
/// (dataset, model, metric). Non-finite values drop their group membership;
/// a group left empty is omitted with a warning.
pub fn aggregate(records: &[ScoreRecord]) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::InvalidArg("no records to aggregate".into()));
    }
    let mut groups: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
    let mut warnings = Vec::new();
    for r in records {
        let key = (r.dataset.clone(), r.model.clone(), r.class.clone(), r.metric.clone());
        let bucket = groups.entry(key).or_default();
        if r.value.is_finite() {
            bucket.push(r.value);
        } else {
            warnings.push(format!(
                "dropped non-finite {} for {}/{}/{} volume {}",
                r.metric, r.dataset, r.model, r.class, r.volume
            ));
        }
    }
    let mut rows = Vec::new();
    for ((dataset, model, class, metric), values) in &groups {
        if values.is_empty() {
            warnings.push(format!(
                "group {dataset}/{model}/{class}/{metric} has no finite values; omitted"
            ));
            continue;
        }
        let (mean, std) = mean_std(values);
        rows.push(SummaryRow {
            dataset: dataset.clone(),
            model: model.clone(),
            class: class.clone(),
            metric: metric.clone(),
            mean,
            std,
            n: values.len(),
        });
    }
    // "All" per (dataset, model, metric): mean over the per-class means,
    // weighting every class equally regardless of volume counts.
    let mut by_table: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for row in &rows {
        if row.class != ALL_CLASS {
            by_table
                .entry((row.dataset.clone(), row.model.clone(), row.metric.clone()))
                .or_default()
                .push(row.mean);
        }
    }
    for ((dataset, model, metric), class_means) in by_table {
        if class_means.len() < 2 {
            continue;
        }
        let (mean, std) = mean_std(&class_means);
        rows.push(SummaryRow {
            dataset,
            model,
            class: ALL_CLASS.to_string(),
            metric,
            mean,
            std,
            n: class_means.len(),
        });
    }
    rows.sort_by(|a, b| {
        (&a.dataset, &a.model, &a.class, &a.metric)
            .cmp(&(&b.dataset, &b.model, &b.class, &b.metric))
    });
    Ok(Report { title: String::new(), rows, comparisons: Vec::new(), baseline: None, warnings })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Rank-sum tests of every non-baseline arm against `baseline`, per
/// (dataset, class, metric). Groups where either side is empty are skipped.
pub fn compare_arms(records: &[ScoreRecord], baseline: &str) -> Result<Vec<ArmComparison>> {
    let mut samples: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        if r.value.is_finite() {
            samples
                .entry((r.dataset.clone(), r.class.clone(), r.metric.clone(), r.model.clone()))
                .or_default()
                .push(r.value);
        }
    }
    let mut out = Vec::new();
    for ((dataset, class, metric, model), values) in &samples {
        if model == baseline {
            continue;
        }
        let key = (dataset.clone(), class.clone(), metric.clone(), baseline.to_string());
        let Some(base_values) = samples.get(&key) else { continue };
        let result = wilcoxon_ranksum(values, base_values)?;
        out.push(ArmComparison {
            dataset: dataset.clone(),
            class: class.clone(),
            metric: metric.clone(),
            model: model.clone(),
            baseline: baseline.to_string(),
            p_value: result.p_value,
            n1: result.n1,
            n2: result.n2,
        });
    }
    Ok(out)
}

/// Footnote marker: ‡ below 1e-7, † below 0.05, empty otherwise.
pub fn significance_marker(p_value: f64) -> &'static str {
    if p_value < 1e-7 {
        "‡"
    } else if p_value < 0.05 {
        "†"
    } else {
        ""
    }
}

/// "0.809 (0.054)" at three decimals.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3} ({std:.3})")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Value-exact summary CSV; floats use shortest round-trip formatting so
/// parsing recovers identical bits.
pub fn render_summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("dataset,model,class,metric,mean,std,n\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            csv_field(&r.dataset),
            csv_field(&r.model),
            csv_field(&r.class),
            csv_field(&r.metric),
            r.mean,
            r.std,
            r.n
        ));
    }
    out
}

/// Split one CSV record into fields, honoring double-quote escaping.
fn split_csv_line(line: &str) -> Result<Vec<String>> {
    let mut fields = Vec::new();
    let mut field = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        if quoted {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                    field.push('"');
                }
                '"' => quoted = false,
                _ => field.push(c),
            }
        } else {
            match c {
                '"' if field.is_empty() => quoted = true,
                ',' => fields.push(std::mem::take(&mut field)),
                _ => field.push(c),
            }
        }
    }
    if quoted {
        return Err(Error::CorruptData("unterminated quoted CSV field".into()));
    }
    fields.push(field);
    Ok(fields)
}

/// Parse a summary CSV produced by [`render_summary_csv`].
pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::CorruptData("empty CSV".into()))?;
    if header != "dataset,model,class,metric,mean,std,n" {
        return Err(Error::CorruptData(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f = split_csv_line(line)?;
        if f.len() != 7 {
            return Err(Error::CorruptData(format!("line {}: expected 7 fields", i + 2)));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::CorruptData(format!("line {}: bad {what} {s:?}", i + 2)))
        };
        rows.push(SummaryRow {
            dataset: f[0].clone(),
            model: f[1].clone(),
            class: f[2].clone(),
            metric: f[3].clone(),
            mean: num(&f[4], "mean")?,
            std: num(&f[5], "std")?,
            n: f[6]
                .parse()
                .map_err(|_| Error::CorruptData(format!("line {}: bad n {:?}", i + 2, f[6])))?,
        });
    }
    Ok(rows)
}

/// Value-exact per-volume score CSV (the stats command's input).
pub fn render_records_csv(records: &[ScoreRecord]) -> String {
    let mut out = String::from("dataset,model,class,metric,volume,value\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&r.dataset),
            csv_field(&r.model),
            csv_field(&r.class),
            csv_field(&r.metric),
            csv_field(&r.volume),
            r.value
        ));
    }
    out
}

/// Parse a records CSV produced by [`render_records_csv`].
pub fn parse_records_csv(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::CorruptData("empty CSV".into()))?;
    if header != "dataset,model,class,metric,volume,value" {
        return Err(Error::CorruptData(format!("unexpected CSV header {header:?}")));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f = split_csv_line(line)?;
        if f.len() != 6 {
            return Err(Error::CorruptData(format!("line {}: expected 6 fields", i + 2)));
        }
        let value = f[5]
            .parse::<f64>()
            .map_err(|_| Error::CorruptData(format!("line {}: bad value {:?}", i + 2, f[5])))?;
        records.push(ScoreRecord {
            dataset: f[0].clone(),
            model: f[1].clone(),
            class: f[2].clone(),
            metric: f[3].clone(),
            volume: f[4].clone(),
            value,
        });
    }
    Ok(records)
}

/// One pivoted table: rows are models, columns are classes, cells carry the
/// formatted value, its numeric mean (for the ramp), and a marker.
struct Pivot {
    dataset: String,
    metric: String,
    classes: Vec<String>,
    models: Vec<String>,
    /// (model, class) -> (mean, formatted cell text)
    cells: BTreeMap<(String, String), (f64, String)>,
}

fn build_pivots(report: &Report) -> Vec<Pivot> {
    let mut markers: BTreeMap<(&str, &str, &str, &str), &'static str> = BTreeMap::new();
    for c in &report.comparisons {
        markers.insert(
            (c.dataset.as_str(), c.class.as_str(), c.metric.as_str(), c.model.as_str()),
            significance_marker(c.p_value),
        );
    }
    let mut tables: BTreeMap<(String, String), Vec<&SummaryRow>> = BTreeMap::new();
    for row in &report.rows {
        tables.entry((row.dataset.clone(), row.metric.clone())).or_default().push(row);
    }
    let mut pivots = Vec::new();
    for ((dataset, metric), rows) in tables {
        let mut classes: Vec<String> = rows
            .iter()
            .filter(|r| r.class != ALL_CLASS)
            .map(|r| r.class.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if rows.iter().any(|r| r.class == ALL_CLASS) {
            classes.push(ALL_CLASS.to_string());
        }
        let models: Vec<String> =
            rows.iter().map(|r| r.model.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let mut cells = BTreeMap::new();
        for r in &rows {
            let marker = markers
                .get(&(dataset.as_str(), r.class.as_str(), metric.as_str(), r.model.as_str()))
                .copied()
                .unwrap_or("");
            let text = format!("{}{}", format_mean_std(r.mean, r.std), marker);
            cells.insert((r.model.clone(), r.class.clone()), (r.mean, text));
        }
        pivots.push(Pivot { dataset, metric, classes, models, cells });
    }
    pivots
}

/// Table-shaped CSV: one section per (dataset, metric), cells formatted as
/// "mean (std)" at three decimals with significance markers.
pub fn render_table_csv(report: &Report) -> String {
    let mut out = String::new();
    for pivot in build_pivots(report) {
        out.push_str(&format!(
            "dataset,{},metric,{}\n",
            csv_field(&pivot.dataset),
            csv_field(&pivot.metric)
        ));
        out.push_str("model");
        for class in &pivot.classes {
            out.push(',');
            out.push_str(&csv_field(class));
        }
        out.push('\n');
        for model in &pivot.models {
            out.push_str(&csv_field(model));
            for class in &pivot.classes {
                out.push(',');
                if let Some((_, text)) = pivot.cells.get(&(model.clone(), class.clone())) {
                    out.push_str(&csv_field(text));
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Linear color ramp green → yellow → orange → red; t = 0 is the largest
/// value, t = 1 the smallest.
pub fn ramp_color(t: f64) -> String {
    const STOPS: [[f64; 3]; 4] = [
        [26.0, 152.0, 80.0],   // green
        [254.0, 224.0, 139.0], // yellow
        [244.0, 109.0, 67.0],  // orange
        [165.0, 0.0, 38.0],    // red
    ];
    let t = t.clamp(0.0, 1.0) * 3.0;
    let i = (t.floor() as usize).min(2);
    let f = t - i as f64;
    let rgb: Vec<u8> = (0..3)
        .map(|c| (STOPS[i][c] + (STOPS[i + 1][c] - STOPS[i][c]) * f).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

/// Cell color by rank among the table's distinct values: largest gets green,
/// smallest red; a single distinct value sits at the neutral midpoint.
fn rank_colors(values: &[f64]) -> BTreeMap<u64, String> {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| b.partial_cmp(a).expect("finite means"));
    distinct.dedup();
    let k = distinct.len();
    distinct
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let t = if k <= 1 { 0.5 } else { i as f64 / (k - 1) as f64 };
            (v.to_bits(), ramp_color(t))
        })
        .collect()
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Self-contained HTML report: one color-ramped table per (dataset, metric),
/// significance footnotes, and aggregation warnings.
pub fn render_html(report: &Report) -> String {
    let title = if report.title.is_empty() { "Evaluation report" } else { &report.title };
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">");
    out.push_str(&format!("<title>{}</title></head>\n", html_escape(title)));
    out.push_str("<body style=\"font-family:sans-serif;margin:2em;color:#111;background:#fff\">\n");
    out.push_str(&format!("<h1>{}</h1>\n", html_escape(title)));
    for pivot in build_pivots(report) {
        out.push_str(&format!(
            "<h2>{} — {}</h2>\n",
            html_escape(&pivot.dataset),
            html_escape(&pivot.metric)
        ));
        let means: Vec<f64> = pivot.cells.values().map(|(m, _)| *m).collect();
        let colors = rank_colors(&means);
        out.push_str("<table style=\"border-collapse:collapse\">\n<tr>");
        out.push_str("<th style=\"border:1px solid #999;padding:4px 10px\">model</th>");
        for class in &pivot.classes {
            out.push_str(&format!(
                "<th style=\"border:1px solid #999;padding:4px 10px\">{}</th>",
                html_escape(class)
            ));
        }
        out.push_str("</tr>\n");
        for model in &pivot.models {
            out.push_str(&format!(
                "<tr><td style=\"border:1px solid #999;padding:4px 10px\">{}</td>",
                html_escape(model)
            ));
            for class in &pivot.classes {
                match pivot.cells.get(&(model.clone(), class.clone())) {
                    Some((mean, text)) => {
                        let color = colors.get(&mean.to_bits()).expect("ranked");
                        out.push_str(&format!(
                            "<td style=\"border:1px solid #999;padding:4px 10px;\
                             background:{color}\">{}</td>",
                            html_escape(text)
                        ));
                    }
                    None => out.push_str("<td style=\"border:1px solid #999\"></td>"),
                }
            }
            out.push_str("</tr>\n");
        }
        out.push_str("</table>\n");
    }
    let vs = report
        .baseline
        .as_deref()
        .map(|b| format!(" vs {}", html_escape(b)))
        .unwrap_or_default();
    out.push_str(&format!(
        "<p style=\"font-size:small\">† p &lt; 0.05{vs}; ‡ p &lt; 1e-7{vs}. \
         Cells show mean (population std); color ranks values within each table, \
         green largest to red smallest. \
         \"All\" rows average the per-class means (class-weighted).</p>\n"
    ));
    if !report.warnings.is_empty() {
        out.push_str("<h3>Warnings</h3>\n<ul>\n");
        for w in &report.warnings {
            out.push_str(&format!("<li>{}</li>\n", html_escape(w)));
        }
        out.push_str("</ul>\n");
    }
    out.push_str("</body></html>\n");
    out
}

/// Render a report to the requested format: CSV is the value-exact summary
/// schema, HTML the color-ramped document.
pub fn render_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_summary_csv(&report.rows),
        ReportFormat::Html => render_html(report),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Html,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(model: &str, class: &str, volume: &str, value: f64) -> ScoreRecord {
        ScoreRecord {
            dataset: "phantom".into(),
            model: model.into(),
            class: class.into(),
            metric: "dsc".into(),
            volume: volume.into(),
            value,
        }
    }

    #[test]
    fn single_score_mean_is_value_std_zero() {
        let report = aggregate(&[record("m", "c1", "v0", 0.75)]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].mean, 0.75);
        assert_eq!(report.rows[0].std, 0.0);
        assert_eq!(report.rows[0].n, 1);
    }

    #[test]
    fn pair_mean_and_population_std() {
        let report =
            aggregate(&[record("m", "c1", "v0", 0.7), record("m", "c1", "v1", 0.9)]).unwrap();
        assert!((report.rows[0].mean - 0.8).abs() < 1e-15);
        assert!((report.rows[0].std - 0.1).abs() < 1e-15);
    }

    #[test]
    fn all_row_is_class_weighted_mean_of_class_means() {
        // c1 has two volumes (mean 0.6), c2 one volume (mean 0.8): the All
        // row weights classes equally, not volumes.
        let report = aggregate(&[
            record("m", "c1", "v0", 0.5),
            record("m", "c1", "v1", 0.7),
            record("m", "c2", "v0", 0.8),
        ])
        .unwrap();
        let all = report.rows.iter().find(|r| r.class == ALL_CLASS).unwrap();
        assert!((all.mean - 0.7).abs() < 1e-15);
        assert_eq!(all.n, 2);
        // Footnote flags the convention.
        let html = render_html(&report);
        assert!(html.contains("class-weighted"));
    }

    #[test]
    fn non_finite_values_warn_and_empty_group_is_omitted() {
        let report = aggregate(&[
            record("m", "c1", "v0", 0.9),
            record("m", "c2", "v0", f64::NAN),
            record("m", "c2", "v1", f64::INFINITY),
        ])
        .unwrap();
        assert!(report.rows.iter().all(|r| r.class != "c2"));
        assert!(report.warnings.iter().any(|w| w.contains("c2") && w.contains("omitted")));
        assert_eq!(report.warnings.len(), 3);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn summary_csv_round_trips_exact_values() {
        let rows = vec![
            SummaryRow {
                dataset: "phantom".into(),
                model: "arm,one".into(),
                class: "c\"q\"".into(),
                metric: "dsc".into(),
                mean: 0.1 + 0.2,
                std: 1e-17,
                n: 3,
            },
            SummaryRow {
                dataset: "d".into(),
                model: "m".into(),
                class: "c".into(),
                metric: "thickness_mm".into(),
                mean: -0.0,
                std: f64::MIN_POSITIVE,
                n: 1,
            },
        ];
        let text = render_summary_csv(&rows);
        let parsed = parse_summary_csv(&text).unwrap();
        assert_eq!(parsed.len(), rows.len());
        for (a, b) in rows.iter().zip(&parsed) {
            assert_eq!(a.dataset, b.dataset);
            assert_eq!(a.model, b.model);
            assert_eq!(a.class, b.class);
            assert_eq!(a.mean.to_bits(), b.mean.to_bits());
            assert_eq!(a.std.to_bits(), b.std.to_bits());
            assert_eq!(a.n, b.n);
        }
    }

    #[test]
    fn records_csv_round_trips_including_non_finite() {
        let records = vec![
            record("m", "c1", "v0", 0.1 + 0.2),
            record("m,odd", "c2", "v1", f64::NAN),
        ];
        let text = render_records_csv(&records);
        let parsed = parse_records_csv(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].value.to_bits(), records[0].value.to_bits());
        assert_eq!(parsed[1].model, "m,odd");
        assert!(parsed[1].value.is_nan());
    }

    #[test]
    fn csv_parser_rejects_malformed_input() {
        assert!(parse_summary_csv("").is_err());
        assert!(parse_summary_csv("wrong,header\n").is_err());
        assert!(parse_summary_csv("dataset,model,class,metric,mean,std,n\na,b,c\n").is_err());
        assert!(
            parse_summary_csv("dataset,model,class,metric,mean,std,n\na,b,c,d,oops,0,1\n")
                .is_err()
        );
    }

    #[test]
    fn significance_markers_follow_strict_thresholds() {
        assert_eq!(significance_marker(0.05), "");
        assert_eq!(significance_marker(0.049), "†");
        assert_eq!(significance_marker(1e-7), "†");
        assert_eq!(significance_marker(9e-8), "‡");
        assert_eq!(significance_marker(0.5), "");
    }

    #[test]
    fn shaped_csv_formats_three_decimals_with_markers() {
        let mut report = aggregate(&[
            record("a", "c1", "v0", 0.70049),
            record("b", "c1", "v0", 0.9),
        ])
        .unwrap();
        report.comparisons = vec![ArmComparison {
            dataset: "phantom".into(),
            class: "c1".into(),
            metric: "dsc".into(),
            model: "b".into(),
            baseline: "a".into(),
            p_value: 0.01,
            n1: 1,
            n2: 1,
        }];
        let csv = render_table_csv(&report);
        assert!(csv.contains("0.700 (0.000)"), "{csv}");
        assert!(csv.contains("0.900 (0.000)†"), "{csv}");
    }

    #[test]
    fn compare_arms_reproduces_known_p_value() {
        let mut records = Vec::new();
        for (i, v) in [1.0, 2.0, 3.0].iter().enumerate() {
            records.push(record("new", "c1", &format!("v{i}"), *v));
        }
        for (i, v) in [4.0, 5.0, 6.0].iter().enumerate() {
            records.push(record("base", "c1", &format!("v{i}"), *v));
        }
        let comps = compare_arms(&records, "base").unwrap();
        assert_eq!(comps.len(), 1);
        assert!((comps[0].p_value - 0.1).abs() < 1e-12);
        assert_eq!(significance_marker(comps[0].p_value), "");
    }

    #[test]
    fn ramp_endpoints_and_neutral_midpoint() {
        assert_eq!(ramp_color(0.0), "#1a9850");
        assert_eq!(ramp_color(1.0), "#a50026");
        // Midpoint lies between yellow and orange.
        assert_eq!(ramp_color(0.5), "#f9a767");
    }

    #[test]
    fn html_ranks_cells_green_to_red() {
        let report = aggregate(&[
            record("best", "c1", "v0", 0.95),
            record("mid", "c1", "v0", 0.80),
            record("worst", "c1", "v0", 0.60),
        ])
        .unwrap();
        let html = render_html(&report);
        assert!(html.contains("#1a9850")); // largest → green
        assert!(html.contains("#a50026")); // smallest → red
        let green_pos = html.find("#1a9850").unwrap();
        let best_pos = html.find("0.950").unwrap();
        assert!(best_pos > green_pos && best_pos - green_pos < 60);
    }

    #[test]
    fn single_value_table_uses_neutral_midpoint() {
        let report = aggregate(&[record("only", "c1", "v0", 0.5)]).unwrap();
        let html = render_html(&report);
        assert!(html.contains("#f9a767"), "{html}");
    }

    #[test]
    fn identical_prediction_renders_perfect_rows() {
        // DSC 1.0 and AAE 0.0 (the pred == ref shape) format as 1.000/0.000.
        let mut records = vec![record("m", "c1", "v0", 1.0)];
        records.push(ScoreRecord { metric: "aae_mm".into(), value: 0.0, ..records[0].clone() });
        let report = aggregate(&records).unwrap();
        let csv = render_table_csv(&report);
        assert!(csv.contains("1.000 (0.000)"), "{csv}");
        assert!(csv.contains("0.000 (0.000)"), "{csv}");
    }
}
