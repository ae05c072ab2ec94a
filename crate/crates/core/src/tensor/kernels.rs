//! Raw buffer kernels shared by the tape's forward and backward passes.

use super::Scalar;

/// Spatial size after a 4x4, stride-2, padding-1 convolution.
pub fn down_size(n: usize) -> usize {
    (n + 2 - 4) / 2 + 1
}

/// Unfolds one `[channels, h, w]` image into `[channels * 16, (h/2) * (w/2)]`
/// columns for a 4x4 / stride 2 / pad 1 convolution.
pub fn im2col<T: Scalar>(src: &[T], channels: usize, h: usize, w: usize, cols: &mut [T]) {
    let (ho, wo) = (down_size(h), down_size(w));
    let plane = ho * wo;
    debug_assert_eq!(cols.len(), channels * 16 * plane);
    for c in 0..channels {
        let img = &src[c * h * w..(c + 1) * h * w];
        for ky in 0..4 {
            for kx in 0..4 {
                let row = &mut cols[((c * 16) + ky * 4 + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (2 * oy + ky) as isize - 1;
                    let out = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let line = &img[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        *o = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            line[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto a `[channels, h, w]`
/// image.
pub fn col2im<T: Scalar>(cols: &[T], channels: usize, h: usize, w: usize, dst: &mut [T]) {
    let (ho, wo) = (down_size(h), down_size(w));
    let plane = ho * wo;
    for c in 0..channels {
        let img = &mut dst[c * h * w..(c + 1) * h * w];
        for ky in 0..4 {
            for kx in 0..4 {
                let row = &cols[((c * 16) + ky * 4 + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut img[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Half-open source range covered by output bin `i` of an adaptive pool.
pub fn pool_bin(i: usize, out: usize, input: usize) -> (usize, usize) {
    let start = i * input / out;
    let end = ((i + 1) * input).div_ceil(out);
    (start, end)
}

/// For a broadcast operand of shape `small` against `full`, maps each flat
/// index of `full` to the flat index it reads in `small`. Returns `None` if
/// the shapes are identical (no mapping needed).
pub fn broadcast_map(full: &[usize], small: &[usize]) -> Option<Vec<usize>> {
    if full == small {
        return None;
    }
    let rank = full.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        strides[d] = if small[d] == 1 { 0 } else { s };
        s *= small[d];
    }
    let numel: usize = full.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    for _ in 0..numel {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < full[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Some(map)
}

/// True when `small` can broadcast to `full` (same rank, each dim equal or 1).
pub fn broadcastable(full: &[usize], small: &[usize]) -> bool {
    full.len() == small.len() && full.iter().zip(small).all(|(f, s)| f == s || *s == 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn down_size_halves_even_inputs() {
        assert_eq!(down_size(256), 128);
        assert_eq!(down_size(2), 1);
        assert_eq!(down_size(64), 32);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w) = (2, 6, 4);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let n_cols = c * 16 * (h / 2) * (w / 2);
        let y: Vec<f64> = (0..n_cols).map(|i| ((i * 5 % 13) as f64) * 0.5).collect();
        let mut cols = vec![0.0; n_cols];
        im2col(&x, c, h, w, &mut cols);
        let mut back = vec![0.0; c * h * w];
        col2im(&y, c, h, w, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn pool_bins_cover_input() {
        assert_eq!(pool_bin(0, 16, 64), (0, 4));
        assert_eq!(pool_bin(15, 16, 64), (60, 64));
        // 20 -> 16 bins overlap but cover everything
        assert_eq!(pool_bin(0, 16, 20), (0, 2));
        assert_eq!(pool_bin(15, 16, 20), (18, 20));
    }

    #[test]
    fn broadcast_map_trailing_singletons() {
        let m = broadcast_map(&[2, 3], &[2, 1]).unwrap();
        assert_eq!(m, vec![0, 0, 0, 1, 1, 1]);
        let m = broadcast_map(&[2, 3], &[1, 3]).unwrap();
        assert_eq!(m, vec![0, 1, 2, 0, 1, 2]);
        assert!(broadcast_map(&[2, 3], &[2, 3]).is_none());
        assert!(!broadcastable(&[2, 3], &[3]));
    }
}
