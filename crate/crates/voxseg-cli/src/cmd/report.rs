//! Re-render an existing summary table as a colour-ramped HTML report and a
//! per-metric pivot CSV.

use std::path::PathBuf;

use voxseg::error::{Error, Result};
use voxseg::report::{
    compare_arms, parse_records_csv, parse_summary_csv, render_html, render_table_csv, Report,
};

use crate::config::{pick, EffectiveConfig, Globals};
use crate::io::require_file;

#[derive(clap::Args, Debug)]
pub struct ReportArgs {
    /// Aggregated summary table (summary.csv from eval).
    #[arg(long)]
    pub summary: PathBuf,

    /// Per-volume score table; enables significance markers.
    #[arg(long)]
    pub records: Option<PathBuf>,

    /// Baseline arm for markers (config "report.baseline"; requires
    /// --records).
    #[arg(long)]
    pub baseline: Option<String>,

    /// Report title (config "report.title").
    #[arg(long)]
    pub title: Option<String>,

    /// Run output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &ReportArgs, globals: &Globals) -> Result<()> {
    require_file(&args.summary, "summary table")?;
    let rows = parse_summary_csv(&std::fs::read_to_string(&args.summary)?)?;
    if rows.is_empty() {
        return Err(Error::DatasetError(format!(
            "{} holds no summary rows",
            args.summary.display()
        )));
    }
    let title = pick(
        args.title.clone(),
        globals.file.get_str("report.title")?,
        "Evaluation report".to_string(),
    );
    let baseline_cfg = pick(
        args.baseline.clone().map(Some),
        globals.file.get_str("report.baseline")?.map(Some),
        None,
    );

    let mut report = Report {
        title: title.clone(),
        rows,
        ..Report::default()
    };
    if let Some(records_path) = &args.records {
        require_file(records_path, "records table")?;
        let records = parse_records_csv(&std::fs::read_to_string(records_path)?)?;
        let mut models: Vec<&str> = records.iter().map(|r| r.model.as_str()).collect();
        models.sort();
        models.dedup();
        let baseline = baseline_cfg
            .clone()
            .unwrap_or_else(|| models.first().map(|m| m.to_string()).unwrap_or_default());
        report.comparisons = compare_arms(&records, &baseline)?;
        report.baseline = Some(baseline);
    } else if args.baseline.is_some() {
        return Err(Error::InvalidArg(
            "--baseline needs --records to test against".into(),
        ));
    }

    let mut cfg = EffectiveConfig::default();
    globals.echo(&mut cfg);
    cfg.set("report.summary", args.summary.display().to_string());
    if let Some(records) = &args.records {
        cfg.set("report.records", records.display().to_string());
    }
    if let Some(baseline) = &report.baseline {
        cfg.set("report.baseline", baseline.as_str());
    }
    cfg.set("report.title", title.as_str());
    cfg.write(&args.out)?;

    std::fs::write(args.out.join("report.html"), render_html(&report))?;
    std::fs::write(args.out.join("table.csv"), render_table_csv(&report))?;
    println!(
        "wrote report.html and table.csv ({} summary rows)",
        report.rows.len()
    );
    Ok(())
}
