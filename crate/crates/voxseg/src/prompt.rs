//! Click-prompt simulation.
//!
//! Mirrors the interactive evaluation protocol: the first click lands in the
//! interior of the reference mask (top 30% of boundary distances), and every
//! correction click lands at the interior-most pixel of the current error
//! map, labelled positive inside the reference (false negative) or negative
//! outside it (false positive).

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::edt::edt2d;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub type DistanceMap = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

/// One simulated user click on a slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickPrompt {
    pub slice: usize,
    pub row: usize,
    pub col: usize,
    pub polarity: Polarity,
    #[serde(rename = "class")]
    pub class_id: u8,
    #[serde(rename = "iter")]
    pub iteration: usize,
}

const FIRST_CLICK_TAG: u64 = 0xF1C;

/// Threshold of the top-30% eligible set: the 70th percentile (by index
/// floor(0.7 n) of the ascending sort) of foreground distances.
fn eligibility_threshold(distances: &mut Vec<f64>) -> f64 {
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distances[(0.7 * distances.len() as f64).floor() as usize]
}

/// First click: a uniformly chosen pixel from the top 30% of
/// boundary-distance values inside the reference mask. Positive polarity,
/// iteration 0.
pub fn first_click(
    rs: &ArrayView2<u8>,
    class_id: u8,
    slice: usize,
    rng_seed: u64,
) -> Result<ClickPrompt> {
    let dist = edt2d(rs);
    let mut fg: Vec<f64> = dist.iter().copied().filter(|&d| d > 0.0).collect();
    if fg.is_empty() {
        return Err(Error::EmptyStructure);
    }
    let q = eligibility_threshold(&mut fg);
    let eligible: Vec<(usize, usize)> = dist
        .indexed_iter()
        .filter(|&(_, &d)| d >= q && d > 0.0)
        .map(|((r, c), _)| (r, c))
        .collect();
    let mut rng = Rng::from_tags(rng_seed, &[FIRST_CLICK_TAG, slice as u64, class_id as u64]);
    let (row, col) = eligible[rng.below(eligible.len())];
    Ok(ClickPrompt { slice, row, col, polarity: Polarity::Positive, class_id, iteration: 0 })
}

/// Deterministic variant of [`first_click`]: the interior-most pixel (max
/// distance, lexicographic tie-break). Used in deterministic inference mode.
pub fn centroid_click(rs: &ArrayView2<u8>, class_id: u8, slice: usize) -> Result<ClickPrompt> {
    let dist = edt2d(rs);
    let best = argmax_lex(&dist).ok_or(Error::EmptyStructure)?;
    Ok(ClickPrompt {
        slice,
        row: best.0,
        col: best.1,
        polarity: Polarity::Positive,
        class_id,
        iteration: 0,
    })
}

/// Pixel with maximal distance, ties broken by smallest (row, col); None if
/// no pixel is positive.
fn argmax_lex(dist: &DistanceMap) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for ((r, c), &d) in dist.indexed_iter() {
        if d <= 0.0 {
            continue;
        }
        // Strict > keeps the lexicographically first of equal maxima
        // (indexed_iter is row-major).
        if best.is_none_or(|(_, bd)| d > bd) {
            best = Some(((r, c), d));
        }
    }
    best.map(|(rc, _)| rc)
}

/// Symmetric difference of prediction and reference.
pub fn error_map(pred: &ArrayView2<u8>, rs: &ArrayView2<u8>) -> Result<Array2<u8>> {
    if pred.dim() != rs.dim() {
        return Err(Error::DimensionError(format!(
            "prediction {:?} vs reference {:?}",
            pred.dim(),
            rs.dim()
        )));
    }
    let mut out = Array2::<u8>::zeros(pred.raw_dim());
    ndarray::Zip::from(&mut out)
        .and(pred)
        .and(rs)
        .for_each(|o, &p, &r| *o = ((p != 0) != (r != 0)) as u8);
    Ok(out)
}

/// Correction click: the interior-most pixel of the error map; positive if it
/// lies inside the reference mask, negative otherwise. `Converged` when the
/// prediction already matches the reference.
pub fn next_click(
    pred: &ArrayView2<u8>,
    rs: &ArrayView2<u8>,
    class_id: u8,
    slice: usize,
    iteration: usize,
) -> Result<ClickPrompt> {
    let errors = error_map(pred, rs)?;
    let dist = edt2d(&errors.view());
    let (row, col) = argmax_lex(&dist).ok_or(Error::Converged)?;
    let polarity = if rs[[row, col]] != 0 { Polarity::Positive } else { Polarity::Negative };
    Ok(ClickPrompt { slice, row, col, polarity, class_id, iteration })
}

/// Run one interactive session: first click, then predict/correct until the
/// prediction converges or `max_iters` clicks have been issued. Every
/// prediction sees the full accumulated click list.
pub fn simulate_session<F>(
    mut segmenter: F,
    rs: &ArrayView2<u8>,
    class_id: u8,
    slice: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(Vec<ClickPrompt>, Array2<u8>)>
where
    F: FnMut(&[ClickPrompt]) -> Result<Array2<u8>>,
{
    if max_iters == 0 {
        return Err(Error::InvalidArg("a session needs at least one click".into()));
    }
    let mut clicks = vec![first_click(rs, class_id, slice, seed)?];
    let mut pred = segmenter(&clicks)?;
    while clicks.len() < max_iters {
        match next_click(&pred.view(), rs, class_id, slice, clicks.len()) {
            Ok(click) => {
                clicks.push(click);
                pred = segmenter(&clicks)?;
            }
            Err(Error::Converged) => break,
            Err(e) => return Err(e),
        }
    }
    Ok((clicks, pred))
}

/// Serialize clicks as JSON lines.
pub fn clicks_to_jsonl(clicks: &[ClickPrompt]) -> String {
    let mut out = String::new();
    for c in clicks {
        out.push_str(&serde_json::to_string(c).expect("click serializes"));
        out.push('\n');
    }
    out
}

/// Parse clicks from JSON lines (blank lines ignored).
pub fn clicks_from_jsonl(text: &str) -> Result<Vec<ClickPrompt>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Filled disk of the given radius (pixels, centre-inclusive metric).
    fn disk(n: usize, cr: usize, cc: usize, radius: f64) -> Array2<u8> {
        Array2::from_shape_fn((n, n), |(r, c)| {
            let d = ((r as f64 - cr as f64).powi(2) + (c as f64 - cc as f64).powi(2)).sqrt();
            (d <= radius) as u8
        })
    }

    /// Brute-force EDT used as the in-test oracle.
    fn brute_edt(mask: &ArrayView2<u8>) -> Array2<f64> {
        let (nr, nc) = mask.dim();
        Array2::from_shape_fn((nr, nc), |(r, c)| {
            if mask[[r, c]] == 0 {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for rr in 0..nr {
                for cc in 0..nc {
                    if mask[[rr, cc]] == 0 {
                        let d = ((r as f64 - rr as f64).powi(2)
                            + (c as f64 - cc as f64).powi(2))
                        .sqrt();
                        best = best.min(d);
                    }
                }
            }
            best
        })
    }

    #[test]
    fn single_pixel_mask_is_the_click() {
        let mut m = Array2::<u8>::zeros((9, 9));
        m[[4, 6]] = 1;
        for seed in 0..5 {
            let c = first_click(&m.view(), 2, 3, seed).unwrap();
            assert_eq!((c.row, c.col, c.slice, c.class_id), (4, 6, 3, 2));
            assert_eq!(c.polarity, Polarity::Positive);
            assert_eq!(c.iteration, 0);
        }
    }

    #[test]
    fn first_click_lands_in_top_distance_band() {
        let m = disk(11, 5, 5, 5.0);
        let dist = brute_edt(&m.view());
        let mut fg: Vec<f64> = dist.iter().copied().filter(|&d| d > 0.0).collect();
        fg.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = fg[(0.7 * fg.len() as f64).floor() as usize];
        for seed in 0..20 {
            let c = first_click(&m.view(), 1, 0, seed).unwrap();
            assert!(m[[c.row, c.col]] != 0, "click inside mask");
            assert!(dist[[c.row, c.col]] >= q, "distance {} below threshold {q}", dist[[c.row, c.col]]);
        }
    }

    #[test]
    fn first_click_replays_by_seed() {
        let m = disk(11, 5, 5, 5.0);
        let a = first_click(&m.view(), 1, 0, 42).unwrap();
        let b = first_click(&m.view(), 1, 0, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_mask_rejected() {
        let m = Array2::<u8>::zeros((5, 5));
        assert!(matches!(first_click(&m.view(), 1, 0, 0), Err(Error::EmptyStructure)));
        assert!(matches!(centroid_click(&m.view(), 1, 0), Err(Error::EmptyStructure)));
    }

    #[test]
    fn centroid_click_is_deterministic_interior_max() {
        let m = disk(11, 5, 5, 5.0);
        let c = centroid_click(&m.view(), 1, 7).unwrap();
        assert_eq!((c.row, c.col), (5, 5));
        assert_eq!(c.slice, 7);
    }

    #[test]
    fn error_map_cases() {
        let rs = disk(9, 4, 4, 3.0);
        let same = error_map(&rs.view(), &rs.view()).unwrap();
        assert!(same.iter().all(|&v| v == 0));
        let empty = Array2::<u8>::zeros((9, 9));
        let fn_map = error_map(&empty.view(), &rs.view()).unwrap();
        assert_eq!(fn_map, rs);
        let complement = rs.mapv(|v| 1 - v);
        let all = error_map(&complement.view(), &rs.view()).unwrap();
        assert!(all.iter().all(|&v| v == 1));
        let small = Array2::<u8>::zeros((3, 3));
        assert!(error_map(&small.view(), &rs.view()).is_err());
    }

    #[test]
    fn next_click_hits_interior_most_false_negative() {
        let rs = disk(11, 5, 5, 5.0);
        let empty = Array2::<u8>::zeros((11, 11));
        let c = next_click(&empty.view(), &rs.view(), 1, 0, 1).unwrap();
        assert_eq!((c.row, c.col), (5, 5), "disk centre is the interior-most error");
        assert_eq!(c.polarity, Polarity::Positive);
        assert_eq!(c.iteration, 1);
    }

    #[test]
    fn next_click_flags_false_positive_blob() {
        let rs = disk(16, 5, 5, 3.0);
        let mut pred = rs.clone();
        // Spurious blob far from the reference mask.
        for r in 11..=13 {
            for c in 11..=13 {
                pred[[r, c]] = 1;
            }
        }
        let click = next_click(&pred.view(), &rs.view(), 1, 0, 2).unwrap();
        assert_eq!((click.row, click.col), (12, 12), "blob centre");
        assert_eq!(click.polarity, Polarity::Negative);
    }

    #[test]
    fn converged_when_prediction_matches() {
        let rs = disk(9, 4, 4, 3.0);
        assert!(matches!(
            next_click(&rs.view(), &rs.view(), 1, 0, 1),
            Err(Error::Converged)
        ));
    }

    #[test]
    fn next_click_matches_brute_force_argmax() {
        let mut rng = Rng::from_tags(88, &[1]);
        for _ in 0..50 {
            let rs = Array2::from_shape_fn((12, 12), |_| (rng.uniform() < 0.4) as u8);
            let pred = Array2::from_shape_fn((12, 12), |_| (rng.uniform() < 0.4) as u8);
            let errors = error_map(&pred.view(), &rs.view()).unwrap();
            if errors.iter().all(|&v| v == 0) {
                continue;
            }
            let c = next_click(&pred.view(), &rs.view(), 1, 0, 1).unwrap();
            assert_eq!(errors[[c.row, c.col]], 1, "click lies in the error map");
            let dist = brute_edt(&errors.view());
            let max = dist.iter().cloned().fold(0.0, f64::max);
            assert_eq!(dist[[c.row, c.col]], max, "click achieves max interior distance");
            // Lexicographic tie-break among maxima.
            let first_max = dist
                .indexed_iter()
                .find(|&(_, &d)| d == max)
                .map(|((r, cc), _)| (r, cc))
                .unwrap();
            assert_eq!((c.row, c.col), first_max);
            let expected = if rs[[c.row, c.col]] != 0 { Polarity::Positive } else { Polarity::Negative };
            assert_eq!(c.polarity, expected);
        }
    }

    #[test]
    fn oracle_segmenter_converges_after_one_click() {
        let rs = disk(11, 5, 5, 4.0);
        let oracle = |_clicks: &[ClickPrompt]| Ok(rs.clone());
        let (clicks, pred) = simulate_session(oracle, &rs.view(), 1, 0, 8, 3).unwrap();
        assert_eq!(clicks.len(), 1);
        assert_eq!(pred, rs);
    }

    #[test]
    fn adversarial_segmenter_uses_all_clicks() {
        let rs = disk(11, 5, 5, 4.0);
        let hopeless = |_clicks: &[ClickPrompt]| Ok(Array2::<u8>::zeros((11, 11)));
        let (clicks, _) = simulate_session(hopeless, &rs.view(), 1, 0, 8, 3).unwrap();
        assert_eq!(clicks.len(), 8);
        for (i, c) in clicks.iter().enumerate() {
            assert_eq!(c.iteration, i);
            assert_eq!(c.polarity, Polarity::Positive, "persistent FN region");
            assert!(rs[[c.row, c.col]] != 0, "positive clicks lie inside the mask");
        }
    }

    #[test]
    fn max_iters_one_is_first_click_only() {
        let rs = disk(11, 5, 5, 4.0);
        let mut calls = 0usize;
        let counter = |_clicks: &[ClickPrompt]| {
            calls += 1;
            Ok(Array2::<u8>::zeros((11, 11)))
        };
        let (clicks, _) = simulate_session(counter, &rs.view(), 1, 0, 1, 3).unwrap();
        assert_eq!(clicks.len(), 1);
        assert_eq!(clicks[0], first_click(&rs.view(), 1, 0, 3).unwrap());
        assert_eq!(calls, 1);
        assert!(simulate_session(|_| Ok(rs.clone()), &rs.view(), 1, 0, 0, 3).is_err());
    }

    #[test]
    fn session_polarity_invariant_holds_for_flaky_segmenter() {
        let rs = disk(13, 6, 6, 5.0);
        let mut step = 0usize;
        let flaky = |_clicks: &[ClickPrompt]| {
            step += 1;
            // Alternate between over- and under-segmentation.
            Ok(if step % 2 == 0 {
                Array2::<u8>::ones((13, 13))
            } else {
                disk(13, 6, 6, 2.0)
            })
        };
        let (clicks, _) = simulate_session(flaky, &rs.view(), 2, 4, 8, 9).unwrap();
        assert!(clicks.len() <= 8);
        for c in &clicks {
            match c.polarity {
                Polarity::Positive => assert!(rs[[c.row, c.col]] != 0),
                Polarity::Negative => assert!(rs[[c.row, c.col]] == 0),
            }
        }
    }

    #[test]
    fn jsonl_round_trip_and_schema() {
        let clicks = vec![
            ClickPrompt { slice: 3, row: 10, col: 11, polarity: Polarity::Positive, class_id: 2, iteration: 0 },
            ClickPrompt { slice: 3, row: 4, col: 5, polarity: Polarity::Negative, class_id: 2, iteration: 1 },
        ];
        let text = clicks_to_jsonl(&clicks);
        let back = clicks_from_jsonl(&text).unwrap();
        assert_eq!(back, clicks);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["slice"], 3);
        assert_eq!(first["row"], 10);
        assert_eq!(first["col"], 11);
        assert_eq!(first["polarity"], "pos");
        assert_eq!(first["class"], 2);
        assert_eq!(first["iter"], 0);
        assert!(clicks_from_jsonl("{\"slice\":}").is_err());
        assert_eq!(clicks_from_jsonl("\n  \n").unwrap(), vec![]);
    }
}
