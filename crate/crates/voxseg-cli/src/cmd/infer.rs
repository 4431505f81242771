//! Segment one volume: simulated click sessions on prompted slices, memory
//! propagation everywhere else.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde_json::json;
use voxseg::error::Result;
use voxseg::metrics;
use voxseg::model::Checkpoint;
use voxseg::prompt::clicks_to_jsonl;
use voxseg::propagate::{propagate, PropagateOptions, PropagationStrategy};

use crate::config::{pick, EffectiveConfig, Globals};
use crate::io::{read_mask, read_volume, require_file, write_volume};

#[derive(clap::Args, Debug)]
pub struct InferArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Image volume (.nii or .raw).
    #[arg(long)]
    pub image: PathBuf,

    /// Reference mask; drives the simulated user's clicks and scoring.
    #[arg(long)]
    pub mask: PathBuf,

    /// Run output directory (pred.nii, clicks.jsonl, summary.json).
    #[arg(long)]
    pub out: PathBuf,

    /// Prompted-slice strategy: "all" or "every:K" (config "infer.strategy").
    #[arg(long)]
    pub strategy: Option<String>,

    /// Click budget per prompted slice (config "infer.clicks").
    #[arg(long)]
    pub clicks: Option<usize>,

    /// Add a reverse propagation pass (config "infer.reverse").
    #[arg(long)]
    pub reverse: bool,
}

pub fn run(args: &InferArgs, globals: &Globals) -> Result<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let (model, _) = checkpoint.into_model();

    let image = read_volume(&args.image)?;
    let mask = read_mask(&args.mask, model.config.num_classes)?;

    let strategy_label =
        pick(args.strategy.clone(), globals.file.get_str("infer.strategy")?, "all".into());
    let strategy = PropagationStrategy::parse(&strategy_label)?;
    let clicks = pick(args.clicks, globals.file.get_usize("infer.clicks")?, 1);
    let reverse = args.reverse || globals.file.get_bool("infer.reverse")?.unwrap_or(false);

    let mut cfg = EffectiveConfig::default();
    globals.echo(&mut cfg);
    cfg.set("infer.checkpoint", args.checkpoint.display().to_string());
    cfg.set("infer.image", args.image.display().to_string());
    cfg.set("infer.mask", args.mask.display().to_string());
    cfg.set("infer.strategy", strategy.label());
    cfg.set("infer.clicks", clicks as u64);
    cfg.set("infer.reverse", reverse);
    cfg.write(&args.out)?;

    let opts = PropagateOptions { strategy, clicks, seed: globals.seed, reverse };
    let result = propagate(&model, &image, &mask, &opts)?;

    write_volume(&result.mask.to_volume(), &args.out.join("pred.nii"))?;
    std::fs::write(args.out.join("clicks.jsonl"), clicks_to_jsonl(&result.clicks))?;

    let name_of = |class_id: u8| mask.class_names[class_id as usize].clone();
    let dsc = result.dsc_per_class(&mask)?;
    let mut iou = BTreeMap::new();
    for &class_id in dsc.keys() {
        let p = result.mask.labels.mapv(|l| u8::from(l == class_id));
        let r = mask.labels.mapv(|l| u8::from(l == class_id));
        iou.insert(class_id, metrics::iou(&p, &r)?);
    }
    let named = |m: &BTreeMap<u8, f64>| -> BTreeMap<String, f64> {
        m.iter().map(|(&c, &v)| (name_of(c), v)).collect()
    };
    let summary = json!({
        "strategy": strategy.label(),
        "clicks_budget": clicks,
        "reverse": reverse,
        "dsc": named(&dsc),
        "iou": named(&iou),
        "prompted_slices": result.prompted_slices.iter()
            .map(|(&c, z)| (name_of(c), z.clone()))
            .collect::<BTreeMap<String, Vec<usize>>>(),
        "clicks_used": result.clicks_used.iter()
            .map(|(&c, &n)| (name_of(c), n))
            .collect::<BTreeMap<String, usize>>(),
        "wall_seconds": if globals.deterministic {
            serde_json::Value::Null
        } else {
            json!(result.wall_seconds)
        },
    });
    std::fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializable summary") + "\n",
    )?;

    let mean_dsc = if dsc.is_empty() {
        f64::NAN
    } else {
        dsc.values().sum::<f64>() / dsc.len() as f64
    };
    println!(
        "segmented {} classes, mean DSC {:.4}; wrote pred.nii, clicks.jsonl, summary.json",
        dsc.len(),
        mean_dsc
    );
    Ok(())
}
