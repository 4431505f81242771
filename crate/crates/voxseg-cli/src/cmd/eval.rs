//! Score prediction masks against references: overlap metrics, thickness
//! error, rank-sum significance between arms, and CSV/HTML reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use voxseg::error::{Error, Result};
use voxseg::metrics;
use voxseg::morpho::{extract_surfaces, thickness, thickness_error};
use voxseg::report::{
    aggregate, compare_arms, render_html, render_records_csv, render_summary_csv,
    render_table_csv, ScoreRecord,
};
use voxseg::volume::LabelMask;

use crate::config::{pick, EffectiveConfig, Globals};
use crate::io::{read_mask, require_dir};

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Predictions: a directory of <id>.nii, or one subdirectory per model
    /// arm.
    #[arg(long)]
    pub pred: PathBuf,

    /// Reference masks: <id>.nii.
    #[arg(long = "ref")]
    pub reference: PathBuf,

    /// Bone masks <id>.nii; enables thickness and AAE metrics.
    #[arg(long)]
    pub bone: Option<PathBuf>,

    /// Run output directory.
    #[arg(long)]
    pub out: PathBuf,

    /// Baseline arm for rank-sum comparisons (config "eval.baseline").
    #[arg(long)]
    pub baseline: Option<String>,

    /// Dataset label used in the reports (config "eval.dataset").
    #[arg(long)]
    pub dataset: Option<String>,
}

/// Reference volume ids: the .nii file stems of a directory.
fn nii_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "nii") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// Model arms under the prediction directory: subdirectories, or the
/// directory itself as a single arm.
fn discover_arms(pred: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut arms = Vec::new();
    for entry in std::fs::read_dir(pred)? {
        let path = entry?.path();
        if path.is_dir() {
            if let Some(name) = path.file_name().and_then(|s| s.to_str()) {
                arms.push((name.to_string(), path.clone()));
            }
        }
    }
    arms.sort();
    if arms.is_empty() {
        let name = pred
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        arms.push((name, pred.to_path_buf()));
    }
    Ok(arms)
}

/// Classes appearing in either mask (background excluded).
fn classes_in(a: &LabelMask, b: &LabelMask) -> Vec<u8> {
    let mut seen = [false; 256];
    for &l in a.labels.iter().chain(b.labels.iter()) {
        seen[l as usize] = true;
    }
    (1..256).filter(|&c| seen[c]).map(|c| c as u8).collect()
}

struct VolumeScores {
    records: Vec<ScoreRecord>,
}

#[allow(clippy::too_many_arguments)]
fn score_volume(
    dataset: &str,
    arm: &str,
    id: &str,
    pred: &LabelMask,
    reference: &LabelMask,
    bone: Option<&LabelMask>,
    include_reference_thickness: bool,
) -> Result<VolumeScores> {
    if pred.labels.dim() != reference.labels.dim() {
        return Err(Error::DimensionError(format!(
            "volume {id}: prediction {:?} vs reference {:?}",
            pred.labels.dim(),
            reference.labels.dim()
        )));
    }
    let mut records = Vec::new();
    let mut push = |model: &str, class: &str, metric: &str, value: f64| {
        records.push(ScoreRecord {
            dataset: dataset.into(),
            model: model.into(),
            class: class.into(),
            metric: metric.into(),
            volume: id.into(),
            value,
        });
    };
    for class_id in classes_in(pred, reference) {
        let name = reference
            .class_names
            .get(class_id as usize)
            .cloned()
            .unwrap_or_else(|| format!("class_{class_id}"));
        let p = pred.labels.mapv(|l| u8::from(l == class_id));
        let r = reference.labels.mapv(|l| u8::from(l == class_id));
        push(arm, &name, "dsc", metrics::dsc(&p, &r)?);
        push(arm, &name, "iou", metrics::iou(&p, &r)?);
        if let Some(bone) = bone {
            let spacing = reference.spacing;
            let bone_view = bone.labels.view();
            // Thickness failures (no surface in the prediction) score NaN;
            // aggregation warns and omits them.
            let t_pred = extract_surfaces(&p.view(), &bone_view, spacing)
                .and_then(|s| thickness(&s))
                .map_or(f64::NAN, |t| t.mean_mm);
            push(arm, &name, "thickness_mm", t_pred);
            let aae = thickness_error(&p.view(), &r.view(), &bone_view, spacing)
                .unwrap_or(f64::NAN);
            push(arm, &name, "aae_mm", aae);
            if include_reference_thickness {
                let t_ref = extract_surfaces(&r.view(), &bone_view, spacing)
                    .and_then(|s| thickness(&s))
                    .map_or(f64::NAN, |t| t.mean_mm);
                push("reference", &name, "thickness_mm", t_ref);
            }
        }
    }
    Ok(VolumeScores { records })
}

pub fn run(args: &EvalArgs, globals: &Globals) -> Result<()> {
    require_dir(&args.pred, "prediction directory")?;
    require_dir(&args.reference, "reference directory")?;
    if let Some(bone) = &args.bone {
        require_dir(bone, "bone directory")?;
    }
    let ids = nii_stems(&args.reference)?;
    if ids.is_empty() {
        return Err(Error::DatasetError(format!(
            "no .nii references under {}",
            args.reference.display()
        )));
    }
    let arms = discover_arms(&args.pred)?;
    let dataset = pick(
        args.dataset.clone(),
        globals.file.get_str("eval.dataset")?,
        args.reference
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
    );
    let baseline = pick(
        args.baseline.clone(),
        globals.file.get_str("eval.baseline")?,
        arms[0].0.clone(),
    );

    let mut cfg = EffectiveConfig::default();
    globals.echo(&mut cfg);
    cfg.set("eval.pred", args.pred.display().to_string());
    cfg.set("eval.ref", args.reference.display().to_string());
    if let Some(bone) = &args.bone {
        cfg.set("eval.bone", bone.display().to_string());
    }
    cfg.set("eval.dataset", dataset.as_str());
    cfg.set("eval.baseline", baseline.as_str());
    cfg.write(&args.out)?;

    let mut records = Vec::new();
    for (arm_index, (arm, arm_dir)) in arms.iter().enumerate() {
        for id in &ids {
            let pred_path = arm_dir.join(format!("{id}.nii"));
            if !pred_path.is_file() {
                return Err(Error::DatasetError(format!(
                    "arm {arm:?} is missing prediction {}",
                    pred_path.display()
                )));
            }
            let reference = read_mask(&args.reference.join(format!("{id}.nii")), 2)?;
            let pred = read_mask(&pred_path, reference.class_names.len())?;
            let bone = match &args.bone {
                Some(dir) => {
                    let path = dir.join(format!("{id}.nii"));
                    if !path.is_file() {
                        return Err(Error::DatasetError(format!(
                            "missing bone mask {}",
                            path.display()
                        )));
                    }
                    Some(read_mask(&path, 2)?)
                }
                None => None,
            };
            let scores = score_volume(
                &dataset,
                arm,
                id,
                &pred,
                &reference,
                bone.as_ref(),
                arm_index == 0,
            )?;
            records.extend(scores.records);
        }
    }

    let mut report = aggregate(&records)?;
    report.title = format!("{dataset} evaluation");
    if arms.len() > 1 {
        report.comparisons = compare_arms(&records, &baseline)?;
        report.baseline = Some(baseline.clone());
    }
    std::fs::write(args.out.join("records.csv"), render_records_csv(&records))?;
    std::fs::write(args.out.join("summary.csv"), render_summary_csv(&report.rows))?;
    std::fs::write(args.out.join("table.csv"), render_table_csv(&report))?;
    std::fs::write(args.out.join("report.html"), render_html(&report))?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }

    // Headline DSC means per arm on stdout.
    let mut by_arm: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in &records {
        if r.metric == "dsc" && r.value.is_finite() {
            let e = by_arm.entry(&r.model).or_insert((0.0, 0));
            e.0 += r.value;
            e.1 += 1;
        }
    }
    for (arm, (sum, n)) in by_arm {
        println!("{arm:<14} mean DSC {:.4} over {n} scores", sum / n as f64);
    }
    println!("wrote records.csv, summary.csv, table.csv, report.html");
    Ok(())
}
