//! Rank-sum significance tests between model arms from a per-volume score
//! table.

use std::path::PathBuf;

use voxseg::error::{Error, Result};
use voxseg::report::{compare_arms, parse_records_csv, significance_marker};

use crate::config::{pick, EffectiveConfig, Globals};
use crate::io::require_file;

#[derive(clap::Args, Debug)]
pub struct StatsArgs {
    /// Per-volume score table (records.csv from eval or sweep).
    #[arg(long)]
    pub records: PathBuf,

    /// Baseline arm the others are tested against (config "stats.baseline").
    #[arg(long)]
    pub baseline: Option<String>,

    /// Run output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &StatsArgs, globals: &Globals) -> Result<()> {
    require_file(&args.records, "records table")?;
    let text = std::fs::read_to_string(&args.records)?;
    let records = parse_records_csv(&text)?;
    if records.is_empty() {
        return Err(Error::DatasetError(format!(
            "{} holds no score rows",
            args.records.display()
        )));
    }
    let mut models: Vec<&str> = records.iter().map(|r| r.model.as_str()).collect();
    models.sort();
    models.dedup();
    let baseline = pick(
        args.baseline.clone(),
        globals.file.get_str("stats.baseline")?,
        models[0].to_string(),
    );
    if !models.contains(&baseline.as_str()) {
        return Err(Error::InvalidArg(format!(
            "baseline {baseline:?} not among models {models:?}"
        )));
    }

    let mut cfg = EffectiveConfig::default();
    globals.echo(&mut cfg);
    cfg.set("stats.records", args.records.display().to_string());
    cfg.set("stats.baseline", baseline.as_str());
    cfg.write(&args.out)?;

    let comparisons = compare_arms(&records, &baseline)?;
    if comparisons.is_empty() {
        return Err(Error::DatasetError(
            "no arm can be compared against the baseline".into(),
        ));
    }
    let mut csv = String::from("dataset,class,metric,model,baseline,p_value,n1,n2,marker\n");
    for c in &comparisons {
        let marker = significance_marker(c.p_value);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            c.dataset, c.class, c.metric, c.model, c.baseline, c.p_value, c.n1, c.n2, marker
        ));
        println!(
            "{:<12} {:<20} {:<12} {:<14} p = {:.6}{}",
            c.dataset, c.class, c.metric, c.model, c.p_value, marker
        );
    }
    std::fs::write(args.out.join("stats.csv"), &csv)?;
    println!("wrote stats.csv ({} comparisons)", comparisons.len());
    Ok(())
}
