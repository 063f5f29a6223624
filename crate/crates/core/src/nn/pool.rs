use ndarray::Array2;

use super::Feature;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct PoolCache {
    argmax: Vec<u32>,
    in_rows: usize,
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns are dropped).
pub fn max_pool2<T: Scalar>(x: &Feature<T>) -> (Feature<T>, PoolCache) {
    let (n, h, w, c) = (x.n, x.h, x.w, x.channels());
    let (oh, ow) = (h / 2, w / 2);
    let xs = x.data.as_standard_layout();
    let src = xs.as_slice().expect("standard");
    let mut out = vec![T::zero(); n * oh * ow * c];
    let mut argmax = vec![0u32; n * oh * ow * c];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let orow = ((b * oh + oy) * ow + ox) * c;
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0usize;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                    out[orow + ch] = best;
                    argmax[orow + ch] = best_i as u32;
                }
            }
        }
    }
    let data = Array2::from_shape_vec((n * oh * ow, c), out).expect("pool shape");
    (
        Feature::new(data, n, oh, ow),
        PoolCache {
            argmax,
            in_rows: n * h * w,
        },
    )
}

pub fn max_pool2_backward<T: Scalar>(cache: &PoolCache, dy: &Array2<T>) -> Array2<T> {
    let c = dy.ncols();
    let mut dx = vec![T::zero(); cache.in_rows * c];
    let dys = dy.as_standard_layout();
    for (&i, &g) in cache.argmax.iter().zip(dys.iter()) {
        dx[i as usize] += g;
    }
    Array2::from_shape_vec((cache.in_rows, c), dx).expect("pool grad shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_maxima() {
        // one 4x4 single-channel map
        let vals: Vec<f64> = (0..16).map(|v| ((v * 7) % 16) as f64).collect();
        let x = Feature::new(
            Array2::from_shape_vec((16, 1), vals.clone()).unwrap(),
            1,
            4,
            4,
        );
        let (y, cache) = max_pool2(&x);
        let want: Vec<f64> = [[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]]
            .iter()
            .map(|w| w.iter().map(|&i| vals[i]).fold(f64::MIN, f64::max))
            .collect();
        assert_eq!(y.data.iter().copied().collect::<Vec<_>>(), want);
        let g = max_pool2_backward(&cache, &Array2::<f64>::ones((4, 1)));
        assert_eq!(g.sum(), 4.0);
    }
}
