//! Chunk-shuffled slice sampling.
//!
//! Training batches are contiguous runs ("chunks") of S slices from one
//! volume. Within a chunk, slice order is preserved so the memory bank sees
//! anatomically adjacent slices in sequence; across chunks, order is
//! reshuffled every epoch. Chunk size 1 degenerates to a plain per-slice
//! shuffler, which is the baseline arm of the strategy comparison.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

const SCHEDULE_TAG: u64 = 0x5C4E;

/// A contiguous run of slices within one volume.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub volume_id: usize,
    pub start_slice: usize,
    pub length: usize,
}

/// Chunk visiting order for one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSchedule {
    pub epoch: usize,
    pub order: Vec<usize>,
    pub seed: u64,
}

/// One training batch: the slices of a single chunk, in ascending order.
#[derive(Debug)]
pub struct Batch {
    pub volume_id: usize,
    pub slice_indices: Vec<usize>,
    pub images: Vec<Array2<f32>>,
    pub masks: Vec<Array2<u8>>,
}

/// Tile each volume's slices into chunks of `s` (short tail kept), volumes in
/// input order.
pub fn make_chunks(volumes: &[(usize, usize)], s: usize) -> Result<Vec<Chunk>> {
    if s == 0 {
        return Err(Error::InvalidChunkSize);
    }
    let mut chunks = Vec::new();
    for &(volume_id, slice_count) in volumes {
        let mut start = 0;
        while start < slice_count {
            let length = s.min(slice_count - start);
            chunks.push(Chunk { volume_id, start_slice: start, length });
            start += length;
        }
    }
    Ok(chunks)
}

/// Deterministic chunk permutation for (seed, epoch); every epoch shuffles,
/// including epoch 0.
pub fn epoch_schedule(chunks: &[Chunk], epoch: usize, seed: u64) -> Result<EpochSchedule> {
    if chunks.is_empty() {
        return Err(Error::EmptySchedule);
    }
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    let mut rng = Rng::from_tags(seed, &[SCHEDULE_TAG, epoch as u64]);
    rng.shuffle(&mut order);
    Ok(EpochSchedule { epoch, order, seed })
}

/// Yield chunks in schedule order, slices ascending within each chunk. The
/// loader maps (volume_id, slice_index) to one (image, mask) slice pair.
pub fn iterate_batches<'a, L>(
    chunks: &'a [Chunk],
    schedule: &'a EpochSchedule,
    mut loader: L,
) -> Result<impl Iterator<Item = Result<Batch>> + 'a>
where
    L: FnMut(usize, usize) -> Result<(Array2<f32>, Array2<u8>)> + 'a,
{
    if schedule.order.len() != chunks.len() {
        return Err(Error::InvalidArg(format!(
            "schedule covers {} chunks, dataset has {}",
            schedule.order.len(),
            chunks.len()
        )));
    }
    let mut seen = vec![false; chunks.len()];
    for &i in &schedule.order {
        if i >= chunks.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArg("schedule order is not a permutation".into()));
        }
    }
    Ok(schedule.order.iter().map(move |&ci| {
        let chunk = &chunks[ci];
        let mut batch = Batch {
            volume_id: chunk.volume_id,
            slice_indices: Vec::with_capacity(chunk.length),
            images: Vec::with_capacity(chunk.length),
            masks: Vec::with_capacity(chunk.length),
        };
        for s in chunk.start_slice..chunk.start_slice + chunk.length {
            let (image, mask) = loader(chunk.volume_id, s).map_err(|e| {
                Error::DatasetError(format!("volume {} slice {s}: {e}", chunk.volume_id))
            })?;
            batch.slice_indices.push(s);
            batch.images.push(image);
            batch.masks.push(mask);
        }
        Ok(batch)
    }))
}
