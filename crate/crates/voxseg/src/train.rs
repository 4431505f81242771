//! Training loop: chunk-shuffled slice batches, simulated click sessions,
//! combined Dice + weighted-BCE loss, Adam, plateau-halving learning rate,
//! early stopping, and best-checkpoint selection.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentConfig};
use crate::error::{Error, Result};
use crate::model::{
    adam_step, AdamState, Checkpoint, MemoryBank, MemoryEntry, Model, ModelConfig, Net,
};
use crate::prompt::{simulate_session, ClickPrompt};
use crate::propagate::{normalize_image, propagate, PropagateOptions, PropagationStrategy};
use crate::rng::{derive, Rng};
use crate::sampler::{epoch_schedule, iterate_batches, make_chunks};
use crate::volume::{LabelMask, Volume, VolumeBundle};

const PROMPT_COIN_TAG: u64 = 0x7E42;
const SESSION_TAG: u64 = 0x5E55;
const VAL_TAG: u64 = 0x7A11;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    /// Halve the learning rate after this many epochs without improvement.
    pub plateau_epochs: usize,
    /// Stop after this many epochs without improvement.
    pub early_stop: usize,
    /// Click budget per simulated session.
    pub max_clicks: usize,
    /// Chunk length S; 1 degenerates to plain per-slice shuffling.
    pub chunk_size: usize,
    pub seed: u64,
    /// Hard cap on epochs run by one invocation.
    pub max_epochs: usize,
    /// Probability that a present structure trains without clicks, from
    /// memory alone (exercises the propagation path).
    pub unprompted_rate: f64,
    /// Probability of a negative example: a forward for a class absent from
    /// the slice, trained toward an empty mask.
    pub absent_rate: f64,
    /// Upper bound on the inverse-frequency positive CE weight.
    pub ce_weight_cap: f64,
    /// Click budget per prompted slice during validation.
    pub val_clicks: usize,
    /// Geometric/intensity augmentation; None trains on the raw volumes.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            lr_min: 1e-6,
            plateau_epochs: 5,
            early_stop: 10,
            max_clicks: 8,
            chunk_size: 8,
            seed: 0,
            max_epochs: 60,
            unprompted_rate: 0.5,
            absent_rate: 0.1,
            ce_weight_cap: 20.0,
            val_clicks: 1,
            augment: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::InvalidArg(format!("lr0 {} must be positive", self.lr0)));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr0) {
            return Err(Error::InvalidArg("lr_min must lie in (0, lr0]".into()));
        }
        if self.plateau_epochs == 0 || self.early_stop == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArg("epoch counts must be at least 1".into()));
        }
        if self.max_clicks == 0 || self.val_clicks == 0 {
            return Err(Error::InvalidArg("click budgets must be at least 1".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::InvalidChunkSize);
        }
        for (name, rate) in
            [("unprompted_rate", self.unprompted_rate), ("absent_rate", self.absent_rate)]
        {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidArg(format!("{name} {rate} must lie in [0, 1]")));
            }
        }
        if self.ce_weight_cap < 1.0 {
            return Err(Error::InvalidArg("ce_weight_cap must be at least 1".into()));
        }
        if let Some(aug) = &self.augment {
            aug.validate()?;
        }
        Ok(())
    }
}

/// Plateau-halving schedule with early stop. Tracks the best score seen;
/// score must strictly improve to reset the counters.
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    lr: f64,
    lr_min: f64,
    plateau_epochs: usize,
    early_stop: usize,
    best: f64,
    since_improve: usize,
    since_halve: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleDecision {
    Continue,
    Halved,
    Stop,
}

impl PlateauSchedule {
    pub fn new(lr0: f64, lr_min: f64, plateau_epochs: usize, early_stop: usize) -> Self {
        Self::resume_at(lr0, lr_min, plateau_epochs, early_stop, f64::NEG_INFINITY)
    }

    /// Continue a schedule from a saved (lr, best-score) pair.
    pub fn resume_at(
        lr: f64,
        lr_min: f64,
        plateau_epochs: usize,
        early_stop: usize,
        best: f64,
    ) -> Self {
        PlateauSchedule {
            lr,
            lr_min,
            plateau_epochs,
            early_stop,
            best,
            since_improve: 0,
            since_halve: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Record one epoch's validation score. Returns whether it improved and
    /// what the schedule does next.
    pub fn observe(&mut self, score: f64) -> (bool, ScheduleDecision) {
        if score > self.best {
            self.best = score;
            self.since_improve = 0;
            self.since_halve = 0;
            return (true, ScheduleDecision::Continue);
        }
        self.since_improve += 1;
        self.since_halve += 1;
        if self.since_improve >= self.early_stop {
            return (false, ScheduleDecision::Stop);
        }
        if self.since_halve >= self.plateau_epochs {
            self.lr = (self.lr / 2.0).max(self.lr_min);
            self.since_halve = 0;
            return (false, ScheduleDecision::Halved);
        }
        (false, ScheduleDecision::Continue)
    }
}

/// One training or validation volume.
#[derive(Clone, Debug)]
pub struct TrainCase {
    pub id: String,
    pub image: Volume,
    pub mask: LabelMask,
}

/// Per-patient 80/20 split, resolved by the caller (manifest or explicit).
#[derive(Clone, Debug, Default)]
pub struct TrainSet {
    pub train: Vec<TrainCase>,
    pub val: Vec<TrainCase>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_dsc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The checkpoint with the highest validation DSC.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Positive-class CE weights from training-split inverse label frequency,
/// clamped to [1, cap]. Index 0 (background) is unused and set to 1.
pub fn class_weights(cases: &[TrainCase], num_classes: usize, cap: f64) -> Vec<f64> {
    let mut pos = vec![0u64; num_classes];
    let mut total = 0u64;
    for case in cases {
        for &l in case.mask.labels.iter() {
            if (l as usize) < num_classes {
                pos[l as usize] += 1;
            }
            total += 1;
        }
    }
    (0..num_classes)
        .map(|c| {
            if c == 0 || pos[c] == 0 {
                1.0
            } else {
                ((total - pos[c]) as f64 / pos[c] as f64).clamp(1.0, cap)
            }
        })
        .collect()
}

/// Mean validation DSC: ALL-strategy propagation per volume, per-class DSC
/// averaged over present classes, then over volumes.
pub fn validation_dsc(
    model: &Model,
    cases: &[TrainCase],
    clicks: usize,
    seed: u64,
) -> Result<f64> {
    let opts = PropagateOptions {
        strategy: PropagationStrategy::All,
        clicks,
        seed,
        reverse: false,
    };
    let mut volume_means = Vec::new();
    for case in cases {
        let result = propagate(model, &case.image, &case.mask, &opts)?;
        let per_class = result.dsc_per_class(&case.mask)?;
        if per_class.is_empty() {
            continue;
        }
        volume_means.push(per_class.values().sum::<f64>() / per_class.len() as f64);
    }
    if volume_means.is_empty() {
        return Err(Error::DatasetError("validation volumes contain no structures".into()));
    }
    Ok(volume_means.iter().sum::<f64>() / volume_means.len() as f64)
}

/// Train a fresh model.
pub fn train(set: &TrainSet, model_config: ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    let model = Model::init(model_config, config.seed)?;
    let schedule =
        PlateauSchedule::new(config.lr0, config.lr_min, config.plateau_epochs, config.early_stop);
    train_loop(set, model, AdamState::new(), 0, schedule, None, config)
}

/// Continue training from a checkpoint; epoch numbering carries on from it.
pub fn resume(set: &TrainSet, checkpoint: Checkpoint, config: &TrainConfig) -> Result<TrainOutcome> {
    let start_epoch = checkpoint.epoch + 1;
    let schedule = PlateauSchedule::resume_at(
        checkpoint.lr,
        config.lr_min,
        config.plateau_epochs,
        config.early_stop,
        checkpoint.best_dsc,
    );
    let initial_best = checkpoint.clone();
    let (model, adam) = checkpoint.into_model();
    train_loop(
        set,
        model,
        adam.unwrap_or_default(),
        start_epoch,
        schedule,
        Some(initial_best),
        config,
    )
}

fn train_loop(
    set: &TrainSet,
    mut model: Model,
    mut adam: AdamState,
    start_epoch: usize,
    mut schedule: PlateauSchedule,
    mut best_checkpoint: Option<Checkpoint>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if set.train.is_empty() || set.val.is_empty() {
        return Err(Error::DatasetError(
            "training requires nonempty train and validation splits".into(),
        ));
    }
    let n = model.config.slice_size;
    for case in set.train.iter().chain(&set.val) {
        let dims = case.image.dims();
        if dims[1] != n || dims[2] != n {
            return Err(Error::ConfigMismatch(format!(
                "volume {} slices are {}×{}, model expects {n}×{n}",
                case.id, dims[1], dims[2]
            )));
        }
        if case.mask.class_names.len() != model.config.num_classes {
            return Err(Error::ConfigMismatch(format!(
                "volume {} has {} classes, model expects {}",
                case.id,
                case.mask.class_names.len(),
                model.config.num_classes
            )));
        }
    }
    let weights = class_weights(&set.train, model.config.num_classes, config.ce_weight_cap);
    let volumes: Vec<(usize, usize)> =
        set.train.iter().enumerate().map(|(i, c)| (i, c.image.dims()[0])).collect();
    let chunks = make_chunks(&volumes, config.chunk_size)?;
    let base: Vec<(Array3<f32>, Array3<u8>)> = set
        .train
        .iter()
        .map(|c| (normalize_image(&c.image).mapv(|x| x as f32), c.mask.labels.clone()))
        .collect();
    let val_seed = derive(config.seed, &[VAL_TAG]);
    let mut log = Vec::new();
    let mut stopped_early = false;
    for epoch in start_epoch..start_epoch + config.max_epochs {
        // Augmentation resamples every volume once per epoch.
        let augmented: Option<Vec<(Array3<f32>, Array3<u8>)>> = match &config.augment {
            None => None,
            Some(aug) => Some(
                set.train
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let bundle =
                            VolumeBundle::new(c.image.clone()).with_mask(c.mask.clone())?;
                        let out =
                            augment(&bundle, aug, (epoch * set.train.len() + i) as u64)?;
                        let labels = out.mask.expect("augmentation preserves the mask").labels;
                        Ok((normalize_image(&out.image).mapv(|x| x as f32), labels))
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        let data: &[(Array3<f32>, Array3<u8>)] = augmented.as_deref().unwrap_or(&base);
        let loader = |vid: usize, z: usize| -> Result<(Array2<f32>, Array2<u8>)> {
            let (img, lab) = &data[vid];
            Ok((img.index_axis(Axis(0), z).to_owned(), lab.index_axis(Axis(0), z).to_owned()))
        };
        let order = epoch_schedule(&chunks, epoch, config.seed)?;
        let lr_used = schedule.lr();
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in iterate_batches(&chunks, &order, loader)? {
            let batch = batch?;
            // Chunk boundary: fresh per-class memory.
            let mut banks: BTreeMap<u8, MemoryBank> = BTreeMap::new();
            for (i, &z) in batch.slice_indices.iter().enumerate() {
                let image = batch.images[i].mapv(f64::from);
                let step = SliceStep {
                    z,
                    volume_id: batch.volume_id,
                    epoch,
                    lr: lr_used,
                };
                if let Some(loss) = train_slice(
                    &mut model,
                    &mut adam,
                    &mut banks,
                    &image,
                    &batch.masks[i],
                    &weights,
                    &step,
                    config,
                )? {
                    loss_sum += loss;
                    loss_count += 1;
                }
            }
        }
        if loss_count == 0 {
            return Err(Error::DatasetError(
                "no training slice produced a forward pass; split has no structures".into(),
            ));
        }
        let train_loss = loss_sum / loss_count as f64;
        let val_dsc = validation_dsc(&model, &set.val, config.val_clicks, val_seed)?;
        let (improved, decision) = schedule.observe(val_dsc);
        log.push(EpochRecord { epoch, lr: lr_used, train_loss, val_dsc });
        if improved || best_checkpoint.is_none() {
            best_checkpoint = Some(Checkpoint {
                config: model.config,
                epoch,
                best_dsc: schedule.best(),
                lr: schedule.lr(),
                params: model.params.clone(),
                adam: Some(adam.clone()),
            });
        }
        if decision == ScheduleDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        checkpoint: best_checkpoint.expect("at least one epoch runs"),
        log,
        stopped_early,
    })
}

struct SliceStep {
    z: usize,
    volume_id: usize,
    epoch: usize,
    lr: f64,
}

/// One planned forward pass on a slice.
struct ForwardPlan {
    class_id: u8,
    target: Array2<f64>,
    clicks: Vec<ClickPrompt>,
    prompted: bool,
    /// Whether the result feeds the memory bank (absent-class negatives
    /// don't).
    push: bool,
}

/// Train on one slice: simulate sessions per present class, take one Adam
/// step on the mean loss, push memory entries. Returns the loss, or None if
/// the slice produced no forwards.
#[allow(clippy::too_many_arguments)]
fn train_slice(
    model: &mut Model,
    adam: &mut AdamState,
    banks: &mut BTreeMap<u8, MemoryBank>,
    image: &Array2<f64>,
    labels: &Array2<u8>,
    weights: &[f64],
    step: &SliceStep,
    config: &TrainConfig,
) -> Result<Option<f64>> {
    let num_classes = model.config.num_classes;
    let capacity = model.config.memory_capacity;
    let session_seed =
        derive(config.seed, &[SESSION_TAG, step.epoch as u64, step.volume_id as u64]);
    let mut plans: Vec<ForwardPlan> = Vec::new();
    for class_id in 1..num_classes as u8 {
        let rs = labels.mapv(|l| u8::from(l == class_id));
        let present = rs.iter().any(|&v| v != 0);
        let mut coin = Rng::from_tags(
            config.seed,
            &[
                PROMPT_COIN_TAG,
                step.epoch as u64,
                step.volume_id as u64,
                step.z as u64,
                class_id as u64,
            ],
        );
        if present {
            // Memoryless slices must be prompted; afterwards, a fraction
            // trains unprompted from the bank alone.
            let has_memory = banks.get(&class_id).is_some_and(|b| !b.is_empty());
            let prompted = !(has_memory && coin.coin(config.unprompted_rate));
            let clicks = if prompted {
                // Vary the session budget so every click count up to the
                // maximum stays in-distribution (inference prompts once).
                let budget = 1 + coin.below(config.max_clicks);
                let bank: &MemoryBank =
                    banks.entry(class_id).or_insert_with(|| MemoryBank::new(capacity));
                let frozen: &Model = model;
                let segmenter = |clicks: &[ClickPrompt]| -> Result<Array2<u8>> {
                    let logits = frozen.predict(image, bank, clicks, class_id, step.z)?;
                    Ok(Model::binarize(&logits))
                };
                let (clicks, _) = simulate_session(
                    segmenter,
                    &rs.view(),
                    class_id,
                    step.z,
                    budget,
                    session_seed,
                )?;
                clicks
            } else {
                Vec::new()
            };
            plans.push(ForwardPlan {
                class_id,
                target: rs.mapv(f64::from),
                clicks,
                prompted,
                push: true,
            });
        } else if coin.coin(config.absent_rate) {
            plans.push(ForwardPlan {
                class_id,
                target: Array2::zeros(image.dim()),
                clicks: Vec::new(),
                prompted: false,
                push: false,
            });
        }
    }
    if plans.is_empty() {
        return Ok(None);
    }
    let (loss_value, grads, entries) = {
        let mut net = Net::new(&*model);
        let mut losses = Vec::with_capacity(plans.len());
        let mut outputs: Vec<(u8, bool, bool, crate::model::Var, crate::model::Var)> =
            Vec::with_capacity(plans.len());
        for plan in &plans {
            let bank: &MemoryBank =
                banks.entry(plan.class_id).or_insert_with(|| MemoryBank::new(capacity));
            let (tokens, logits) =
                net.segment(image, bank, &plan.clicks, plan.class_id, step.z)?;
            let loss = net.tape.dice_bce(
                logits,
                &plan.target,
                weights[plan.class_id as usize],
                1.0,
            );
            losses.push(loss);
            outputs.push((plan.class_id, plan.prompted, plan.push, tokens, logits));
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = net.tape.add(total, l);
        }
        let total = net.tape.scale(total, 1.0 / losses.len() as f64);
        let loss_value = net.tape.value(total)[[0, 0]];
        if !loss_value.is_finite() {
            return Err(Error::DivergenceError(format!(
                "loss {loss_value} at epoch {}, volume {}, slice {}",
                step.epoch, step.volume_id, step.z
            )));
        }
        net.tape.backward(total);
        let grads = net.param_grads();
        let entries: Vec<(u8, MemoryEntry)> = outputs
            .into_iter()
            .filter(|&(_, _, push, _, _)| push)
            .map(|(class_id, prompted, _, tokens, logits)| {
                (class_id, net.encode_memory(tokens, logits, step.z, prompted))
            })
            .collect();
        (loss_value, grads, entries)
    };
    adam_step(&mut model.params, &grads, adam, step.lr)?;
    for (class_id, entry) in entries {
        banks.entry(class_id).or_insert_with(|| MemoryBank::new(capacity)).push(entry);
    }
    Ok(Some(loss_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dtype;

    #[test]
    fn six_flat_scores_halve_exactly_once() {
        let mut s = PlateauSchedule::new(1e-4, 1e-6, 5, 10);
        let mut halvings = 0;
        for _ in 0..6 {
            let (_, decision) = s.observe(0.5);
            assert_ne!(decision, ScheduleDecision::Stop);
            if decision == ScheduleDecision::Halved {
                halvings += 1;
            }
        }
        assert_eq!(halvings, 1);
        assert_eq!(s.lr(), 5e-5);
    }

    #[test]
    fn ten_stale_epochs_stop_with_best_retained() {
        let mut s = PlateauSchedule::new(1e-4, 1e-6, 5, 10);
        assert!(s.observe(0.6).0);
        let mut stopped_at = None;
        for i in 1..=10 {
            let (improved, decision) = s.observe(0.55);
            assert!(!improved);
            if decision == ScheduleDecision::Stop {
                stopped_at = Some(i);
                break;
            }
        }
        assert_eq!(stopped_at, Some(10));
        assert_eq!(s.best(), 0.6);
    }

    #[test]
    fn improvement_resets_both_counters() {
        let mut s = PlateauSchedule::new(1e-4, 1e-6, 3, 10);
        s.observe(0.5);
        s.observe(0.4);
        s.observe(0.4);
        assert!(s.observe(0.7).0);
        // Two stale epochs after the improvement: not enough to halve.
        assert_eq!(s.observe(0.6).1, ScheduleDecision::Continue);
        assert_eq!(s.observe(0.6).1, ScheduleDecision::Continue);
        assert_eq!(s.lr(), 1e-4);
        assert_eq!(s.observe(0.6).1, ScheduleDecision::Halved);
    }

    #[test]
    fn lr_never_drops_below_floor() {
        let mut s = PlateauSchedule::new(1e-4, 3e-5, 1, 1000);
        for _ in 0..20 {
            s.observe(0.1);
        }
        assert_eq!(s.lr(), 3e-5);
    }

    /// A volume whose single structure is a bright centered square on every
    /// interior slice.
    fn trivial_case(id: &str, nz: usize, n: usize) -> TrainCase {
        let mut data = Array3::<f32>::from_elem((nz, n, n), 0.1);
        let mut labels = Array3::<u8>::zeros((nz, n, n));
        for z in 1..nz - 1 {
            for y in n / 4..3 * n / 4 {
                for x in n / 4..3 * n / 4 {
                    data[[z, y, x]] = 0.9;
                    labels[[z, y, x]] = 1;
                }
            }
        }
        TrainCase {
            id: id.to_string(),
            image: Volume::new(data, [0.5; 3], [0.0; 3], Dtype::F32).unwrap(),
            mask: LabelMask::new(
                labels,
                [0.5; 3],
                [0.0; 3],
                vec!["background".into(), "block".into()],
            )
            .unwrap(),
        }
    }

    fn trivial_set(n_train: usize) -> TrainSet {
        TrainSet {
            train: (0..n_train).map(|i| trivial_case(&format!("t{i}"), 8, 16)).collect(),
            val: vec![trivial_case("v0", 8, 16)],
        }
    }

    fn tiny_model_config() -> ModelConfig {
        ModelConfig {
            slice_size: 16,
            patch: 4,
            embed_dim: 16,
            heads: 2,
            encoder_blocks: 1,
            decoder_blocks: 1,
            memory_capacity: 4,
            num_classes: 2,
        }
    }

    fn smoke_config() -> TrainConfig {
        TrainConfig {
            lr0: 3e-4,
            max_clicks: 2,
            chunk_size: 4,
            max_epochs: 30,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn smoke_training_reaches_high_dsc_on_trivial_volumes() {
        let set = trivial_set(4);
        let outcome = train(&set, tiny_model_config(), &smoke_config()).unwrap();
        assert!(
            outcome.checkpoint.best_dsc >= 0.95,
            "best validation DSC {} after {} epochs",
            outcome.checkpoint.best_dsc,
            outcome.log.len()
        );
        // The learning rate never increases along the log.
        for pair in outcome.log.windows(2) {
            assert!(pair[1].lr <= pair[0].lr);
        }
    }

    #[test]
    fn training_replays_bit_identically() {
        let set = trivial_set(2);
        let config = TrainConfig { max_epochs: 2, ..smoke_config() };
        let a = train(&set, tiny_model_config(), &config).unwrap();
        let b = train(&set, tiny_model_config(), &config).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(
            a.checkpoint.to_bytes().unwrap(),
            b.checkpoint.to_bytes().unwrap()
        );
    }

    #[test]
    fn resume_continues_epoch_numbering() {
        let set = trivial_set(2);
        let config = TrainConfig { max_epochs: 3, ..smoke_config() };
        let first = train(&set, tiny_model_config(), &config).unwrap();
        let best_epoch = first.checkpoint.epoch;
        let first_best = first.checkpoint.best_dsc;
        let more = TrainConfig { max_epochs: 2, ..smoke_config() };
        let second = resume(&set, first.checkpoint, &more).unwrap();
        assert_eq!(second.log.first().unwrap().epoch, best_epoch + 1);
        assert_eq!(second.log.len(), 2);
        // The resumed best can only be at least as good.
        assert!(second.checkpoint.best_dsc >= first_best);
    }

    #[test]
    fn empty_split_is_a_dataset_error() {
        let set = TrainSet { train: vec![], val: vec![trivial_case("v", 8, 16)] };
        let err = train(&set, tiny_model_config(), &smoke_config()).unwrap_err();
        assert!(matches!(err, Error::DatasetError(_)));
        let set = TrainSet { train: vec![trivial_case("t", 8, 16)], val: vec![] };
        assert!(train(&set, tiny_model_config(), &smoke_config()).is_err());
    }

    #[test]
    fn non_finite_input_surfaces_as_divergence_with_context() {
        let mut set = trivial_set(1);
        set.train[0].image.data[[2, 8, 8]] = f32::NAN;
        let config = TrainConfig { max_epochs: 5, ..smoke_config() };
        match train(&set, tiny_model_config(), &config) {
            Err(Error::DivergenceError(msg)) => {
                assert!(msg.contains("epoch"), "context missing from {msg:?}");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn class_weights_follow_inverse_frequency_with_clamp() {
        let case = trivial_case("w", 8, 16);
        // 6 interior slices × 64 block pixels = 384 of 2048 voxels.
        let w = class_weights(std::slice::from_ref(&case), 2, 20.0);
        let expected = ((2048.0 - 384.0) / 384.0_f64).clamp(1.0, 20.0);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - expected).abs() < 1e-12);
        // A cap below the raw ratio clamps.
        let w = class_weights(std::slice::from_ref(&case), 2, 2.0);
        assert_eq!(w[1], 2.0);
    }

    #[test]
    fn geometry_mismatch_is_config_mismatch() {
        let mut set = trivial_set(1);
        set.train[0] = trivial_case("t", 8, 32);
        let err = train(&set, tiny_model_config(), &smoke_config()).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch(_)));
    }

    #[test]
    fn config_validation_rejects_bad_rates() {
        let bad = TrainConfig { unprompted_rate: 1.5, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { lr_min: 1.0, lr0: 1e-4, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
