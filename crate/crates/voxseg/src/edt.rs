//! Exact 2-D Euclidean distance transform (two-pass lower-envelope method).
//!
//! Distances are measured from each foreground pixel to the nearest
//! background pixel, in pixel units; background pixels are 0. A slice with no
//! background at all comes back as +inf on every pixel.

use ndarray::Array2;

/// Seed value standing in for "no background in sight"; large enough that no
/// real squared distance on a supported slice can reach it.
const FAR: f64 = 1e20;

/// 1-D squared distance transform: out[q] = min_p (f[p] + (q-p)^2).
fn dt1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    // Hull of parabolas: v = sites, z = boundaries between adjacent parabolas.
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let sect = |p: usize, q: usize| -> f64 {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * (q - p)) as f64
    };
    for q in 1..n {
        let mut s = sect(v[k], q);
        while s <= z[k] {
            k -= 1;
            s = sect(v[k], q);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        out[q] = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance transform of a binary mask (non-zero = foreground).
pub fn edt2d(mask: &ndarray::ArrayView2<'_, u8>) -> Array2<f64> {
    let (rows, cols) = mask.dim();
    let mut sq = Array2::<f64>::zeros((rows, cols));
    // Pass 1: per column, squared distance along rows to a background pixel.
    let mut f = vec![0.0f64; rows];
    let mut out = vec![0.0f64; rows];
    for c in 0..cols {
        for r in 0..rows {
            f[r] = if mask[[r, c]] != 0 { FAR } else { 0.0 };
        }
        dt1d(&f, &mut out);
        for r in 0..rows {
            sq[[r, c]] = out[r];
        }
    }
    // Pass 2: per row, combine with squared distance along columns.
    let mut f = vec![0.0f64; cols];
    let mut out = vec![0.0f64; cols];
    let mut result = Array2::<f64>::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            f[c] = sq[[r, c]];
        }
        dt1d(&f, &mut out);
        for c in 0..cols {
            result[[r, c]] = if out[c] >= FAR { f64::INFINITY } else { out[c].sqrt() };
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    /// O(n^2) reference: exact minimum over all background pixels.
    fn brute_force(mask: &Array2<u8>) -> Array2<f64> {
        let (rows, cols) = mask.dim();
        let bg: Vec<(i64, i64)> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .filter(|&(r, c)| mask[[r, c]] == 0)
            .map(|(r, c)| (r as i64, c as i64))
            .collect();
        Array2::from_shape_fn((rows, cols), |(r, c)| {
            if mask[[r, c]] == 0 {
                return 0.0;
            }
            bg.iter()
                .map(|&(br, bc)| {
                    let (dr, dc) = (r as i64 - br, c as i64 - bc);
                    ((dr * dr + dc * dc) as f64).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
    }

    #[test]
    fn all_background_is_zero() {
        let m = Array2::<u8>::zeros((5, 7));
        assert!(edt2d(&m.view()).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn row_mask_distances() {
        let m = array![[0u8, 1, 1, 1, 0]];
        let d = edt2d(&m.view());
        assert_eq!(d, array![[0.0, 1.0, 2.0, 1.0, 0.0]]);
    }

    #[test]
    fn all_foreground_is_infinite() {
        let m = Array2::<u8>::ones((4, 4));
        assert!(edt2d(&m.view()).iter().all(|&d| d == f64::INFINITY));
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        let mut rng = crate::rng::Rng::new(0xED7);
        for trial in 0..200 {
            let rows = 1 + rng.below(32);
            let cols = 1 + rng.below(32);
            let density = rng.uniform();
            let m = Array2::from_shape_fn((rows, cols), |_| u8::from(rng.uniform() < density));
            let fast = edt2d(&m.view());
            let slow = brute_force(&m);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert_eq!(a, b, "trial {trial} ({rows}x{cols})");
            }
        }
    }
}
