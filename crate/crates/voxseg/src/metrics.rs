//! Overlap metrics between predicted and reference binary masks.

use ndarray::{ArrayBase, Data, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// DSC and IoU of one (prediction, reference) pair for one class.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OverlapScores {
    pub dsc: f64,
    pub iou: f64,
    pub class_id: u8,
    pub volume_id: String,
}

fn counts<S1, S2, D>(p: &ArrayBase<S1, D>, r: &ArrayBase<S2, D>) -> Result<(u64, u64, u64)>
where
    S1: Data<Elem = u8>,
    S2: Data<Elem = u8>,
    D: Dimension,
{
    if p.shape() != r.shape() {
        return Err(Error::DimensionError(format!(
            "mask shapes differ: {:?} vs {:?}",
            p.shape(),
            r.shape()
        )));
    }
    let mut np = 0u64;
    let mut nr = 0u64;
    let mut ni = 0u64;
    for (&a, &b) in p.iter().zip(r.iter()) {
        let (a, b) = (a != 0, b != 0);
        np += u64::from(a);
        nr += u64::from(b);
        ni += u64::from(a && b);
    }
    Ok((np, nr, ni))
}

/// Dice similarity coefficient 2|P∩R| / (|P| + |R|); both empty scores 1.0.
pub fn dsc<S1, S2, D>(p: &ArrayBase<S1, D>, r: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = u8>,
    S2: Data<Elem = u8>,
    D: Dimension,
{
    let (np, nr, ni) = counts(p, r)?;
    if np + nr == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * ni as f64 / (np + nr) as f64)
}

/// Intersection over union |P∩R| / |P∪R|; both empty scores 1.0.
pub fn iou<S1, S2, D>(p: &ArrayBase<S1, D>, r: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = u8>,
    S2: Data<Elem = u8>,
    D: Dimension,
{
    let (np, nr, ni) = counts(p, r)?;
    let union = np + nr - ni;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(ni as f64 / union as f64)
}

/// Both metrics in one pass.
pub fn overlap<S1, S2, D>(
    p: &ArrayBase<S1, D>,
    r: &ArrayBase<S2, D>,
    class_id: u8,
    volume_id: &str,
) -> Result<OverlapScores>
where
    S1: Data<Elem = u8>,
    S2: Data<Elem = u8>,
    D: Dimension,
{
    let (np, nr, ni) = counts(p, r)?;
    let (dsc, iou) = if np + nr == 0 {
        (1.0, 1.0)
    } else {
        (2.0 * ni as f64 / (np + nr) as f64, ni as f64 / (np + nr - ni) as f64)
    };
    Ok(OverlapScores { dsc, iou, class_id, volume_id: volume_id.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn identical_masks_score_one() {
        let m = array![[1u8, 0], [1, 1]];
        assert_eq!(dsc(&m, &m).unwrap(), 1.0);
        assert_eq!(iou(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let p = array![[1u8, 0], [0, 0]];
        let r = array![[0u8, 1], [0, 1]];
        assert_eq!(dsc(&p, &r).unwrap(), 0.0);
        assert_eq!(iou(&p, &r).unwrap(), 0.0);
    }

    #[test]
    fn half_overlap() {
        // |P| = |R| = 4, |P∩R| = 2 -> DSC 0.5, IoU 1/3.
        let p = array![[1u8, 1, 1, 1, 0, 0]];
        let r = array![[0u8, 0, 1, 1, 1, 1]];
        assert_eq!(dsc(&p, &r).unwrap(), 0.5);
        assert!((iou(&p, &r).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn both_empty_score_one() {
        let z = Array2::<u8>::zeros((3, 3));
        assert_eq!(dsc(&z, &z).unwrap(), 1.0);
        assert_eq!(iou(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = Array2::<u8>::zeros((2, 3));
        let r = Array2::<u8>::zeros((3, 2));
        assert!(dsc(&p, &r).is_err());
    }

    #[test]
    fn identity_links_dsc_and_iou() {
        let mut rng = crate::rng::Rng::new(42);
        for _ in 0..500 {
            let p = Array2::from_shape_fn((8, 8), |_| u8::from(rng.coin(0.4)));
            let r = Array2::from_shape_fn((8, 8), |_| u8::from(rng.coin(0.4)));
            let d = dsc(&p, &r).unwrap();
            let i = iou(&p, &r).unwrap();
            assert!((i - d / (2.0 - d)).abs() < 1e-12);
            assert!(i <= d + 1e-15);
        }
    }
}
