//! Train the promptable segmentation model on a corpus.

use std::path::PathBuf;

use voxseg::augment::AugmentConfig;
use voxseg::error::{Error, Result};
use voxseg::model::{Checkpoint, ModelConfig};
use voxseg::train::{resume, train, EpochRecord, TrainConfig};

use crate::config::{pick, EffectiveConfig, Globals};
use crate::io::{load_manifest, load_split, require_file};

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// Corpus directory containing manifest.json.
    #[arg(long)]
    pub corpus: PathBuf,

    /// Run output directory (checkpoint.bin, log.csv, config.json).
    #[arg(long)]
    pub out: PathBuf,

    /// Continue from a checkpoint; epoch numbering carries on.
    #[arg(long)]
    pub resume: Option<PathBuf>,

    // Optimization (config namespace "train.").
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub plateau_epochs: Option<usize>,
    #[arg(long)]
    pub early_stop: Option<usize>,
    #[arg(long)]
    pub max_clicks: Option<usize>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub unprompted_rate: Option<f64>,
    #[arg(long)]
    pub absent_rate: Option<f64>,
    #[arg(long)]
    pub ce_weight_cap: Option<f64>,
    #[arg(long)]
    pub val_clicks: Option<usize>,

    /// Chunked shuffling; off trains the per-slice (S=1) baseline.
    #[arg(long, value_parser = ["on", "off"])]
    pub hss: Option<String>,

    /// Geometric/intensity augmentation.
    #[arg(long, value_parser = ["on", "off"])]
    pub augment: Option<String>,

    // Architecture (config namespace "model."); ignored with --resume.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub encoder_blocks: Option<usize>,
    #[arg(long)]
    pub decoder_blocks: Option<usize>,
    #[arg(long)]
    pub memory_capacity: Option<usize>,
}

fn on_off(value: &str, key: &str) -> Result<bool> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(Error::InvalidArg(format!("{key} must be \"on\" or \"off\", got {other:?}"))),
    }
}

/// Render the training log as CSV.
pub fn log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_dsc\n");
    for r in log {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, r.val_dsc));
    }
    out
}

pub fn run(args: &TrainArgs, globals: &Globals) -> Result<()> {
    let manifest = load_manifest(&args.corpus)?;
    let set = load_split(&manifest)?;
    if set.train.is_empty() || set.val.is_empty() {
        return Err(Error::DatasetError(
            "corpus must provide nonempty train and val splits".into(),
        ));
    }
    let file = &globals.file;
    let d = TrainConfig::default();
    let mut tc = TrainConfig {
        lr0: pick(args.lr0, file.get_f64("train.lr0")?, d.lr0),
        lr_min: pick(args.lr_min, file.get_f64("train.lr_min")?, d.lr_min),
        plateau_epochs: pick(args.plateau_epochs, file.get_usize("train.plateau_epochs")?, d.plateau_epochs),
        early_stop: pick(args.early_stop, file.get_usize("train.early_stop")?, d.early_stop),
        max_clicks: pick(args.max_clicks, file.get_usize("train.max_clicks")?, d.max_clicks),
        chunk_size: pick(args.chunk_size, file.get_usize("train.chunk_size")?, d.chunk_size),
        seed: globals.seed,
        max_epochs: pick(args.max_epochs, file.get_usize("train.max_epochs")?, d.max_epochs),
        unprompted_rate: pick(args.unprompted_rate, file.get_f64("train.unprompted_rate")?, d.unprompted_rate),
        absent_rate: pick(args.absent_rate, file.get_f64("train.absent_rate")?, d.absent_rate),
        ce_weight_cap: pick(args.ce_weight_cap, file.get_f64("train.ce_weight_cap")?, d.ce_weight_cap),
        val_clicks: pick(args.val_clicks, file.get_usize("train.val_clicks")?, d.val_clicks),
        augment: None,
    };
    let hss_label = pick(args.hss.clone(), file.get_str("train.hss")?, "on".into());
    if !on_off(&hss_label, "train.hss")? {
        tc.chunk_size = 1;
    }
    let augment_label = pick(args.augment.clone(), file.get_str("train.augment")?, "off".into());
    if on_off(&augment_label, "train.augment")? {
        tc.augment = Some(AugmentConfig { seed: globals.seed, ..AugmentConfig::default() });
    }

    // Architecture: from the checkpoint when resuming, else flags/config.
    let first = &set.train[0];
    let resume_ckpt = match &args.resume {
        Some(path) => {
            require_file(path, "checkpoint")?;
            Some(Checkpoint::load(path)?)
        }
        None => None,
    };
    let md = ModelConfig::default();
    let mc = match &resume_ckpt {
        Some(ckpt) => ckpt.config,
        None => ModelConfig {
            slice_size: first.image.dims()[1],
            patch: pick(args.patch, file.get_usize("model.patch")?, md.patch),
            embed_dim: pick(args.embed_dim, file.get_usize("model.embed_dim")?, md.embed_dim),
            heads: pick(args.heads, file.get_usize("model.heads")?, md.heads),
            encoder_blocks: pick(args.encoder_blocks, file.get_usize("model.encoder_blocks")?, md.encoder_blocks),
            decoder_blocks: pick(args.decoder_blocks, file.get_usize("model.decoder_blocks")?, md.decoder_blocks),
            memory_capacity: pick(args.memory_capacity, file.get_usize("model.memory_capacity")?, md.memory_capacity),
            num_classes: first.mask.class_names.len(),
        },
    };
    mc.validate()?;
    tc.validate()?;

    let mut cfg = EffectiveConfig::default();
    globals.echo(&mut cfg);
    cfg.set("train.corpus", args.corpus.display().to_string());
    cfg.set("train.lr0", tc.lr0);
    cfg.set("train.lr_min", tc.lr_min);
    cfg.set("train.plateau_epochs", tc.plateau_epochs as u64);
    cfg.set("train.early_stop", tc.early_stop as u64);
    cfg.set("train.max_clicks", tc.max_clicks as u64);
    cfg.set("train.chunk_size", tc.chunk_size as u64);
    cfg.set("train.max_epochs", tc.max_epochs as u64);
    cfg.set("train.unprompted_rate", tc.unprompted_rate);
    cfg.set("train.absent_rate", tc.absent_rate);
    cfg.set("train.ce_weight_cap", tc.ce_weight_cap);
    cfg.set("train.val_clicks", tc.val_clicks as u64);
    cfg.set("train.hss", hss_label.as_str());
    cfg.set("train.augment", augment_label.as_str());
    if let Some(path) = &args.resume {
        cfg.set("train.resume", path.display().to_string());
    }
    cfg.set("model.slice_size", mc.slice_size as u64);
    cfg.set("model.patch", mc.patch as u64);
    cfg.set("model.embed_dim", mc.embed_dim as u64);
    cfg.set("model.heads", mc.heads as u64);
    cfg.set("model.encoder_blocks", mc.encoder_blocks as u64);
    cfg.set("model.decoder_blocks", mc.decoder_blocks as u64);
    cfg.set("model.memory_capacity", mc.memory_capacity as u64);
    cfg.set("model.num_classes", mc.num_classes as u64);
    cfg.write(&args.out)?;

    let outcome = match resume_ckpt {
        Some(ckpt) => resume(&set, ckpt, &tc)?,
        None => train(&set, mc, &tc)?,
    };
    for r in &outcome.log {
        println!(
            "epoch {:>3}: lr {:.3e}  train_loss {:.4}  val_dsc {:.4}",
            r.epoch, r.lr, r.train_loss, r.val_dsc
        );
    }
    outcome.checkpoint.save(&args.out.join("checkpoint.bin"))?;
    std::fs::write(args.out.join("log.csv"), log_csv(&outcome.log))?;
    println!(
        "best val DSC {:.4} at epoch {}{}; wrote checkpoint.bin, log.csv",
        outcome.checkpoint.best_dsc,
        outcome.checkpoint.epoch,
        if outcome.stopped_early { " (stopped early)" } else { "" }
    );
    Ok(())
}
