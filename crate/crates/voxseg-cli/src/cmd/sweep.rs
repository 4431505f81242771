//! Compare propagation strategies over a corpus split.

use std::collections::BTreeMap;
use std::path::PathBuf;

use voxseg::error::{Error, Result};
use voxseg::model::Checkpoint;
use voxseg::propagate::{sweep_strategies, PropagationStrategy, SweepArm};
use voxseg::report::{render_records_csv, ScoreRecord};

use crate::config::{pick, EffectiveConfig, Globals};
use crate::io::{load_manifest, require_file};

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Corpus directory containing manifest.json.
    #[arg(long)]
    pub corpus: PathBuf,

    /// Comma-separated arms, "all" or "every:K", each with an optional
    /// "@clicks" budget (config "sweep.arms").
    #[arg(long)]
    pub arms: Option<String>,

    /// Default click budget for arms without "@clicks" (config "sweep.clicks").
    #[arg(long)]
    pub clicks: Option<usize>,

    /// Corpus split to segment (config "sweep.split").
    #[arg(long)]
    pub split: Option<String>,

    /// Run output directory (sweep.csv, records.csv, config.json).
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse "every:10@3" style arm specs.
pub fn parse_arms(text: &str, default_clicks: usize) -> Result<Vec<SweepArm>> {
    let mut arms = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (spec, clicks) = match part.split_once('@') {
            Some((spec, clicks)) => (
                spec,
                clicks.parse::<usize>().map_err(|_| {
                    Error::InvalidArg(format!("arm {part:?}: bad click budget {clicks:?}"))
                })?,
            ),
            None => (part, default_clicks),
        };
        arms.push(SweepArm {
            label: part.to_string(),
            strategy: PropagationStrategy::parse(spec)?,
            clicks,
        });
    }
    if arms.is_empty() {
        return Err(Error::InvalidArg("no sweep arms given".into()));
    }
    Ok(arms)
}

pub fn run(args: &SweepArgs, globals: &Globals) -> Result<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    let (model, _) = Checkpoint::load(&args.checkpoint)?.into_model();
    let manifest = load_manifest(&args.corpus)?;
    let split = pick(args.split.clone(), globals.file.get_str("sweep.split")?, "val".into());
    let cases = crate::io::load_cases(&manifest, &split)?;

    let default_clicks = pick(args.clicks, globals.file.get_usize("sweep.clicks")?, 1);
    let arms_label = pick(
        args.arms.clone(),
        globals.file.get_str("sweep.arms")?,
        "all,every:10,every:50".into(),
    );
    let arms = parse_arms(&arms_label, default_clicks)?;

    let mut cfg = EffectiveConfig::default();
    globals.echo(&mut cfg);
    cfg.set("sweep.checkpoint", args.checkpoint.display().to_string());
    cfg.set("sweep.corpus", args.corpus.display().to_string());
    cfg.set("sweep.split", split.as_str());
    cfg.set("sweep.arms", arms_label.as_str());
    cfg.set("sweep.clicks", default_clicks as u64);
    cfg.write(&args.out)?;

    let rows = sweep_strategies(&model, &cases, &arms, globals.seed)?;

    let mut csv = String::from("arm,volume,class_id,class_name,dsc,iou,clicks_used\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.arm, r.volume, r.class_id, r.class_name, r.dsc, r.iou, r.clicks_used
        ));
    }
    std::fs::write(args.out.join("sweep.csv"), csv)?;

    let dataset = args
        .corpus
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    let mut records = Vec::new();
    for r in &rows {
        for (metric, value) in [("dsc", r.dsc), ("iou", r.iou)] {
            records.push(ScoreRecord {
                dataset: dataset.clone(),
                model: r.arm.clone(),
                class: r.class_name.clone(),
                metric: metric.into(),
                volume: r.volume.clone(),
                value,
            });
        }
    }
    std::fs::write(args.out.join("records.csv"), render_records_csv(&records))?;

    // Per-arm per-class means on stdout.
    let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for r in &rows {
        let e = sums.entry((r.arm.clone(), r.class_name.clone())).or_insert((0.0, 0));
        e.0 += r.dsc;
        e.1 += 1;
    }
    for ((arm, class), (sum, n)) in sums {
        println!("{arm:<14} {class:<20} mean DSC {:.4} (n={n})", sum / n as f64);
    }
    println!("wrote sweep.csv, records.csv");
    Ok(())
}
