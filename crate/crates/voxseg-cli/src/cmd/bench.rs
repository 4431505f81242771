//! Time repeated whole-volume segmentation and confirm replays produce
//! identical masks.

use std::path::PathBuf;
use std::time::Instant;

use voxseg::error::Result;
use voxseg::model::Checkpoint;
use voxseg::propagate::{propagate, PropagateOptions, PropagationStrategy};

use crate::config::{pick, EffectiveConfig, Globals};
use crate::io::{load_cases, load_manifest, require_file};

#[derive(clap::Args, Debug)]
pub struct BenchArgs {
    /// Trained model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Corpus directory holding manifest.json.
    #[arg(long)]
    pub corpus: PathBuf,

    /// Manifest split to time (config "bench.split").
    #[arg(long)]
    pub split: Option<String>,

    /// Timed repetitions per volume (config "bench.reps").
    #[arg(long)]
    pub reps: Option<usize>,

    /// Propagation strategy, "all" or "every:K" (config "bench.strategy").
    #[arg(long)]
    pub strategy: Option<String>,

    /// Click budget per prompted slice (config "bench.clicks").
    #[arg(long)]
    pub clicks: Option<usize>,

    /// Run output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &BenchArgs, globals: &Globals) -> Result<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    let (model, _) = Checkpoint::load(&args.checkpoint)?.into_model();
    let manifest = load_manifest(&args.corpus)?;
    let split = pick(
        args.split.clone(),
        globals.file.get_str("bench.split")?,
        "val".to_string(),
    );
    let cases = load_cases(&manifest, &split)?;
    let reps = pick(args.reps, globals.file.get_usize("bench.reps")?, 2).max(1);
    let strategy_text = pick(
        args.strategy.clone(),
        globals.file.get_str("bench.strategy")?,
        "all".to_string(),
    );
    let strategy = PropagationStrategy::parse(&strategy_text)?;
    let clicks = pick(args.clicks, globals.file.get_usize("bench.clicks")?, 1);

    let mut cfg = EffectiveConfig::default();
    globals.echo(&mut cfg);
    cfg.set("bench.checkpoint", args.checkpoint.display().to_string());
    cfg.set("bench.corpus", args.corpus.display().to_string());
    cfg.set("bench.split", split.as_str());
    cfg.set("bench.reps", reps as u64);
    cfg.set("bench.strategy", strategy.label());
    cfg.set("bench.clicks", clicks as u64);
    cfg.write(&args.out)?;

    let opts = PropagateOptions {
        strategy,
        clicks,
        seed: globals.seed,
        reverse: false,
    };
    let mut times = Vec::new();
    let mut identical_masks = true;
    for (id, image, reference) in &cases {
        let mut first_labels = None;
        for _ in 0..reps {
            let start = Instant::now();
            let result = propagate(&model, image, reference, &opts)?;
            times.push(start.elapsed().as_secs_f64());
            match &first_labels {
                None => first_labels = Some(result.mask.labels),
                Some(first) => identical_masks &= *first == result.mask.labels,
            }
        }
        println!("timed {id} ({reps} reps)");
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let summary = serde_json::json!({
        "param_count": model.params.element_count(),
        "repetitions": reps,
        "volumes": cases.len(),
        "seconds_per_volume_mean": mean,
        "seconds_per_volume_std": var.sqrt(),
        "identical_masks": identical_masks,
    });
    std::fs::write(
        args.out.join("bench.json"),
        format!("{:#}\n", summary),
    )?;
    println!(
        "{} params, {:.3} s/volume (std {:.3}), replays identical: {identical_masks}",
        model.params.element_count(),
        mean,
        var.sqrt()
    );
    Ok(())
}
