//! Whole-volume inference: click sessions on planned slices, memory-bank
//! propagation to the rest, and cross-class fusion into a label volume.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{MemoryBank, MemoryEntry, Model};
use crate::prompt::{simulate_session, ClickPrompt};
use crate::volume::{LabelMask, Volume};

/// Which slices receive click prompts during propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropagationStrategy {
    /// Every slice containing the structure.
    All,
    /// The first containing slice, then every k-th subsequent containing
    /// slice through the end of the structure.
    EveryK(usize),
}

impl PropagationStrategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            PropagationStrategy::All => Ok(()),
            PropagationStrategy::EveryK(k) if *k >= 1 => Ok(()),
            PropagationStrategy::EveryK(_) => {
                Err(Error::InvalidArg("strategy stride must be at least 1".into()))
            }
        }
    }

    /// Parse `all` or `every:K`.
    pub fn parse(text: &str) -> Result<PropagationStrategy> {
        if text.eq_ignore_ascii_case("all") {
            return Ok(PropagationStrategy::All);
        }
        if let Some(k) = text.strip_prefix("every:") {
            let k: usize = k
                .parse()
                .map_err(|_| Error::InvalidArg(format!("bad stride in strategy {text:?}")))?;
            let strategy = PropagationStrategy::EveryK(k);
            strategy.validate()?;
            return Ok(strategy);
        }
        Err(Error::InvalidArg(format!("unknown strategy {text:?}, expected all or every:K")))
    }

    pub fn label(&self) -> String {
        match self {
            PropagationStrategy::All => "all".to_string(),
            PropagationStrategy::EveryK(k) => format!("every:{k}"),
        }
    }
}

/// Slices that get click sessions for `class_id` under `strategy`.
pub fn plan_prompt_slices(
    mask: &LabelMask,
    class_id: u8,
    strategy: PropagationStrategy,
) -> Result<Vec<usize>> {
    strategy.validate()?;
    let present = mask.present_slices(class_id);
    if present.is_empty() {
        return Err(Error::EmptyStructure);
    }
    Ok(match strategy {
        PropagationStrategy::All => present,
        PropagationStrategy::EveryK(k) => {
            present.into_iter().step_by(k).collect()
        }
    })
}

/// Zero-mean unit-variance intensity normalization, the model's expected
/// input scaling at both training and inference time.
pub fn normalize_image(volume: &Volume) -> Array3<f64> {
    let data = volume.data.mapv(f64::from);
    let n = data.len() as f64;
    let mean = data.sum() / n;
    let var = data.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    data.mapv(|x| (x - mean) / std)
}

#[derive(Clone, Copy, Debug)]
pub struct PropagateOptions {
    pub strategy: PropagationStrategy,
    /// Click budget per prompted slice (session max iterations).
    pub clicks: usize,
    pub seed: u64,
    /// Also run a descending-z pass with fresh banks and fuse by max logit.
    pub reverse: bool,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        PropagateOptions {
            strategy: PropagationStrategy::All,
            clicks: 1,
            seed: 0,
            reverse: false,
        }
    }
}

/// Per-slice, per-class summary of the raw prediction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LogitSummary {
    pub slice: usize,
    pub class_id: u8,
    pub max_logit: f64,
    /// Pixels with positive logit (probability > 0.5) before fusion.
    pub positive_pixels: usize,
}

#[derive(Clone, Debug)]
pub struct SegmentationResult {
    pub mask: LabelMask,
    pub summaries: Vec<LogitSummary>,
    pub prompted_slices: BTreeMap<u8, Vec<usize>>,
    /// Every simulated click, in the order the sessions placed them.
    pub clicks: Vec<ClickPrompt>,
    pub clicks_used: BTreeMap<u8, usize>,
    pub wall_seconds: f64,
}

impl SegmentationResult {
    /// Volume-level DSC per class against a reference, for every class
    /// present in the reference.
    pub fn dsc_per_class(&self, reference: &LabelMask) -> Result<BTreeMap<u8, f64>> {
        let mut out = BTreeMap::new();
        for class_id in 1..reference.class_names.len() as u8 {
            if reference.present_slices(class_id).is_empty() {
                continue;
            }
            let pred = self.mask.labels.mapv(|l| u8::from(l == class_id));
            let refm = reference.labels.mapv(|l| u8::from(l == class_id));
            out.insert(class_id, metrics::dsc(&pred, &refm)?);
        }
        Ok(out)
    }
}

/// One per-class slice prediction: logits plus the memory entry to push.
type Prediction = (Array2<f64>, MemoryEntry);

/// The per-slice predictor. Arguments: normalized slice, bank, clicks,
/// class, slice index.
pub trait SlicePredictor {
    fn predict(
        &mut self,
        image: &Array2<f64>,
        bank: &MemoryBank,
        clicks: &[ClickPrompt],
        class_id: u8,
        slice_index: usize,
    ) -> Result<Prediction>;
}

impl SlicePredictor for &Model {
    fn predict(
        &mut self,
        image: &Array2<f64>,
        bank: &MemoryBank,
        clicks: &[ClickPrompt],
        class_id: u8,
        slice_index: usize,
    ) -> Result<Prediction> {
        self.predict_with_memory(image, bank, clicks, class_id, slice_index)
    }
}

impl<F> SlicePredictor for F
where
    F: FnMut(&Array2<f64>, &MemoryBank, &[ClickPrompt], u8, usize) -> Result<Prediction>,
{
    fn predict(
        &mut self,
        image: &Array2<f64>,
        bank: &MemoryBank,
        clicks: &[ClickPrompt],
        class_id: u8,
        slice_index: usize,
    ) -> Result<Prediction> {
        self(image, bank, clicks, class_id, slice_index)
    }
}

/// Propagate one class across its extent in the given slice order,
/// accumulating per-slice logit maps into `grid` by elementwise max.
#[allow(clippy::too_many_arguments)]
fn propagate_class<P: SlicePredictor>(
    predictor: &mut P,
    image: &Array3<f64>,
    prompt_source: &LabelMask,
    class_id: u8,
    planned: &[usize],
    order: &[usize],
    capacity: usize,
    clicks_budget: usize,
    seed: u64,
    grid: &mut Array3<f64>,
    click_log: &mut Vec<ClickPrompt>,
) -> Result<()> {
    let mut bank = MemoryBank::new(capacity);
    for &z in order {
        let slice = image.index_axis(ndarray::Axis(0), z).to_owned();
        let (logits, entry) = if planned.contains(&z) {
            let rs = prompt_source.class_slice(z, class_id);
            // The session's segmenter reuses the model forward; capture the
            // final prediction so no extra pass is needed.
            let mut last: Option<Prediction> = None;
            let segmenter = |clicks: &[ClickPrompt]| -> Result<Array2<u8>> {
                let pred = predictor.predict(&slice, &bank, clicks, class_id, z)?;
                let mask = Model::binarize(&pred.0);
                last = Some(pred);
                Ok(mask)
            };
            let (clicks, _) =
                simulate_session(segmenter, &rs.view(), class_id, z, clicks_budget, seed)?;
            click_log.extend(clicks);
            let (logits, mut entry) = last.expect("session ran at least one prediction");
            entry.prompted = true;
            (logits, entry)
        } else {
            let (logits, mut entry) = predictor.predict(&slice, &bank, &[], class_id, z)?;
            entry.prompted = false;
            (logits, entry)
        };
        let mut plane = grid.index_axis_mut(ndarray::Axis(0), z);
        plane.zip_mut_with(&logits, |g, &l| *g = g.max(l));
        bank.push(entry);
    }
    Ok(())
}

/// Full-volume segmentation with any slice predictor (the public entry point
/// wraps a [`Model`]; tests may substitute an oracle).
pub fn propagate_with<P: SlicePredictor>(
    predictor: &mut P,
    num_classes: usize,
    memory_capacity: usize,
    image: &Volume,
    prompt_source: &LabelMask,
    opts: &PropagateOptions,
) -> Result<SegmentationResult> {
    let start = Instant::now();
    opts.strategy.validate()?;
    if opts.clicks == 0 {
        return Err(Error::InvalidArg("click budget must be at least 1".into()));
    }
    if !prompt_source.geometry_matches(image) {
        return Err(Error::DimensionError("prompt source geometry differs from image".into()));
    }
    let dims = image.dims();
    let normalized = normalize_image(image);
    let mut grids: BTreeMap<u8, Array3<f64>> = BTreeMap::new();
    let mut prompted_slices = BTreeMap::new();
    let mut clicks_used = BTreeMap::new();
    let mut all_clicks = Vec::new();
    for class_id in 1..num_classes as u8 {
        let present = prompt_source.present_slices(class_id);
        if present.is_empty() {
            continue;
        }
        let planned = plan_prompt_slices(prompt_source, class_id, opts.strategy)?;
        let extent: Vec<usize> = (present[0]..=*present.last().unwrap()).collect();
        let mut grid = Array3::from_elem(dims, f64::NEG_INFINITY);
        let mut clicks = Vec::new();
        propagate_class(
            predictor,
            &normalized,
            prompt_source,
            class_id,
            &planned,
            &extent,
            memory_capacity,
            opts.clicks,
            opts.seed,
            &mut grid,
            &mut clicks,
        )?;
        if opts.reverse {
            let descending: Vec<usize> = extent.iter().rev().copied().collect();
            propagate_class(
                predictor,
                &normalized,
                prompt_source,
                class_id,
                &planned,
                &descending,
                memory_capacity,
                opts.clicks,
                opts.seed,
                &mut grid,
                &mut clicks,
            )?;
        }
        prompted_slices.insert(class_id, planned);
        clicks_used.insert(class_id, clicks.len());
        all_clicks.append(&mut clicks);
        grids.insert(class_id, grid);
    }
    // Fusion: highest logit wins; background unless some class clears 0.5
    // probability (logit > 0).
    let mut labels = Array3::<u8>::zeros(dims);
    for ((z, y, x), out) in labels.indexed_iter_mut() {
        let mut best = f64::NEG_INFINITY;
        let mut best_class = 0u8;
        for (&class_id, grid) in &grids {
            let l = grid[[z, y, x]];
            if l > best {
                best = l;
                best_class = class_id;
            }
        }
        *out = if best > 0.0 { best_class } else { 0 };
    }
    let mut summaries = Vec::new();
    for (&class_id, grid) in &grids {
        for z in 0..dims[0] {
            let plane = grid.index_axis(ndarray::Axis(0), z);
            let max_logit = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max_logit == f64::NEG_INFINITY {
                continue;
            }
            let positive_pixels = plane.iter().filter(|&&l| l > 0.0).count();
            summaries.push(LogitSummary { slice: z, class_id, max_logit, positive_pixels });
        }
    }
    let mask = LabelMask::new(
        labels,
        image.spacing,
        image.origin,
        prompt_source.class_names.clone(),
    )?;
    Ok(SegmentationResult {
        mask,
        summaries,
        prompted_slices,
        clicks: all_clicks,
        clicks_used,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Segment a standardized volume with a trained model.
pub fn propagate(
    model: &Model,
    image: &Volume,
    prompt_source: &LabelMask,
    opts: &PropagateOptions,
) -> Result<SegmentationResult> {
    let dims = image.dims();
    let n = model.config.slice_size;
    if dims[1] != n || dims[2] != n {
        return Err(Error::ConfigMismatch(format!(
            "volume slices are {}×{}, model expects {n}×{n}",
            dims[1], dims[2]
        )));
    }
    let mut predictor = model;
    propagate_with(
        &mut predictor,
        model.config.num_classes,
        model.config.memory_capacity,
        image,
        prompt_source,
        opts,
    )
}

/// One arm of a strategy sweep.
#[derive(Clone, Debug)]
pub struct SweepArm {
    pub label: String,
    pub strategy: PropagationStrategy,
    pub clicks: usize,
}

/// One evaluated (arm, volume, class) outcome.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub arm: String,
    pub volume: String,
    pub class_id: u8,
    pub class_name: String,
    pub dsc: f64,
    pub iou: f64,
    pub clicks_used: usize,
}

/// Evaluate every arm on every case; one row per present class.
pub fn sweep_strategies(
    model: &Model,
    cases: &[(String, Volume, LabelMask)],
    arms: &[SweepArm],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for arm in arms {
        for (id, image, reference) in cases {
            let opts = PropagateOptions {
                strategy: arm.strategy,
                clicks: arm.clicks,
                seed,
                reverse: false,
            };
            let result = propagate(model, image, reference, &opts)?;
            for class_id in 1..reference.class_names.len() as u8 {
                if reference.present_slices(class_id).is_empty() {
                    continue;
                }
                let pred = result.mask.labels.mapv(|l| u8::from(l == class_id));
                let refm = reference.labels.mapv(|l| u8::from(l == class_id));
                rows.push(SweepRow {
                    arm: arm.label.clone(),
                    volume: id.clone(),
                    class_id,
                    class_name: reference.class_names[class_id as usize].clone(),
                    dsc: metrics::dsc(&pred, &refm)?,
                    iou: metrics::iou(&pred, &refm)?,
                    clicks_used: result.clicks_used.get(&class_id).copied().unwrap_or(0),
                });
            }
        }
    }
    Ok(rows)
}
