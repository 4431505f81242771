//! Measure mean cartilage thickness over the bone-facing surface of each
//! labelled structure.

use std::path::PathBuf;

use voxseg::error::{Error, Result};
use voxseg::morpho::{central_region, extract_surfaces, thickness};

use crate::config::{pick, EffectiveConfig, Globals};
use crate::io::{read_mask, require_file};

#[derive(clap::Args, Debug)]
pub struct ThicknessArgs {
    /// Segmentation mask volume.
    #[arg(long)]
    pub mask: PathBuf,

    /// Bone mask volume defining the inner surface.
    #[arg(long)]
    pub bone: PathBuf,

    /// Run output directory.
    #[arg(long)]
    pub out: PathBuf,

    /// Comma-separated class ids to measure (default: every labelled class).
    #[arg(long)]
    pub classes: Option<String>,

    /// Keep only this central fraction of each surface before measuring.
    #[arg(long)]
    pub central: Option<f64>,
}

fn parse_classes(text: &str) -> Result<Vec<u8>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<u8>()
                .map_err(|_| Error::InvalidArg(format!("bad class id {part:?}")))
        })
        .collect()
}

pub fn run(args: &ThicknessArgs, globals: &Globals) -> Result<()> {
    require_file(&args.mask, "mask")?;
    require_file(&args.bone, "bone mask")?;
    let mask = read_mask(&args.mask, 2)?;
    let bone = read_mask(&args.bone, 2)?;
    if mask.labels.dim() != bone.labels.dim() {
        return Err(Error::DimensionError(format!(
            "mask {:?} vs bone {:?}",
            mask.labels.dim(),
            bone.labels.dim()
        )));
    }

    let classes_text = pick(
        args.classes.clone(),
        globals.file.get_str("thickness.classes")?,
        String::new(),
    );
    let classes = if classes_text.is_empty() {
        let mut seen = [false; 256];
        for &l in mask.labels.iter() {
            seen[l as usize] = true;
        }
        (1..256).filter(|&c| seen[c]).map(|c| c as u8).collect()
    } else {
        parse_classes(&classes_text)?
    };
    if classes.is_empty() {
        return Err(Error::EmptyStructure);
    }
    let central = match (args.central, globals.file.get_f64("thickness.central")?) {
        (Some(v), _) | (None, Some(v)) => {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidArg(format!(
                    "--central must be in (0, 1], got {v}"
                )));
            }
            Some(v)
        }
        (None, None) => None,
    };

    let mut cfg = EffectiveConfig::default();
    globals.echo(&mut cfg);
    cfg.set("thickness.mask", args.mask.display().to_string());
    cfg.set("thickness.bone", args.bone.display().to_string());
    if !classes_text.is_empty() {
        cfg.set("thickness.classes", classes_text.as_str());
    }
    if let Some(v) = central {
        cfg.set("thickness.central", v);
    }
    cfg.write(&args.out)?;

    let bone_binary = bone.labels.mapv(|l| u8::from(l != 0));
    let mut csv = String::from("class,name,mean_mm,std_mm,points\n");
    for &class_id in &classes {
        let name = mask
            .class_names
            .get(class_id as usize)
            .cloned()
            .unwrap_or_else(|| format!("class_{class_id}"));
        let binary = mask.labels.mapv(|l| u8::from(l == class_id));
        let report = extract_surfaces(&binary.view(), &bone_binary.view(), mask.spacing)
            .map(|pair| match central {
                Some(frac) => central_region(&pair, frac),
                None => pair,
            })
            .and_then(|pair| thickness(&pair));
        match report {
            Ok(t) => {
                csv.push_str(&format!(
                    "{class_id},{name},{:.6},{:.6},{}\n",
                    t.mean_mm, t.std_mm, t.count
                ));
                println!(
                    "class {class_id} {name:<20} {:.3} mm (std {:.3}, {} points)",
                    t.mean_mm, t.std_mm, t.count
                );
            }
            Err(
                e @ (Error::EmptyStructure
                | Error::NoBoneInterface
                | Error::MeasurementUnavailable(_)),
            ) => {
                eprintln!("warning: class {class_id} {name}: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    std::fs::write(args.out.join("thickness.csv"), &csv)?;
    println!("wrote thickness.csv");
    Ok(())
}
