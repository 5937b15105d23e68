//! Raw kernels on flat NHWC buffers. No autodiff bookkeeping here.

use crate::tensor::Element;

/// Geometry of a strided, zero-padded 2-D convolution over NHWC input.
///
/// The kernel is `[kh, kw, cin, cout]`; viewed as a matrix it is
/// `[kh·kw·cin, cout]`, which is what the im2col product multiplies by.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output extent for one axis, or `None` if the window never fits.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = input + 2 * pad;
        if stride == 0 || kernel == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        h: usize,
        w: usize,
        cin: usize,
        kh: usize,
        kw: usize,
        cout: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        let oh = Self::out_extent(h, kh, stride, pad)?;
        let ow = Self::out_extent(w, kw, stride, pad)?;
        Some(Self {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            oh,
            ow,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    pub fn out_rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    /// Input coordinate for output index `o` and kernel offset `k`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfolds `input` into `[n·oh·ow, kh·kw·cin]` patch rows.
pub fn im2col<T: Element>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let plen = g.patch_len();
    let mut cols = vec![T::zero(); g.out_rows() * plen];
    let mut row = 0;
    for b in 0..g.n {
        let img = &input[b * g.h * g.w * g.cin..(b + 1) * g.h * g.w * g.cin];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * plen..(row + 1) * plen];
                for ky in 0..g.kh {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = g.source(ox, kx, g.w) else {
                            continue;
                        };
                        let src = (iy * g.w + ix) * g.cin;
                        let off = (ky * g.kw + kx) * g.cin;
                        dst[off..off + g.cin].copy_from_slice(&img[src..src + g.cin]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back into an NHWC buffer.
pub fn col2im<T: Element>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let plen = g.patch_len();
    debug_assert_eq!(cols.len(), g.out_rows() * plen);
    let mut out = vec![T::zero(); g.n * g.h * g.w * g.cin];
    let mut row = 0;
    for b in 0..g.n {
        let img = &mut out[b * g.h * g.w * g.cin..(b + 1) * g.h * g.w * g.cin];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &cols[row * plen..(row + 1) * plen];
                for ky in 0..g.kh {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = g.source(ox, kx, g.w) else {
                            continue;
                        };
                        let dst = (iy * g.w + ix) * g.cin;
                        let off = (ky * g.kw + kx) * g.cin;
                        for c in 0..g.cin {
                            img[dst + c] = img[dst + c] + src[off + c];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// 2×2 / stride-2 max pooling over NHWC. Returns the pooled values and, per
/// output element, the flat input index of the winning cell (first maximum
/// in row-major window order).
pub fn maxpool2x2<T: Element>(
    input: &[T],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                    let mut best = input[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    (out, argmax)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_extent_valid_and_padded() {
        assert_eq!(ConvGeom::out_extent(5, 3, 1, 0), Some(3));
        assert_eq!(ConvGeom::out_extent(32, 4, 2, 1), Some(16));
        assert_eq!(ConvGeom::out_extent(2, 3, 1, 0), None);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y.
        let g = ConvGeom::new(2, 5, 4, 3, 3, 2, 1, 2, 1).unwrap();
        let x: Vec<f64> = (0..2 * 5 * 4 * 3).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.out_rows() * g.patch_len())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_first_maximum_wins_ties() {
        let x = [1.0f32, 1.0, 1.0, 1.0];
        let (out, arg) = maxpool2x2(&x, 1, 2, 2, 1);
        assert_eq!(out, vec![1.0]);
        assert_eq!(arg, vec![0]);
    }
}
