//! Raw loops shared by the convolution forward and backward rules.

use crate::real::Real;

/// Geometry of a 2-D cross-correlation from an `in_h × in_w` image to an
/// `out_h × out_w` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, in_h: usize, in_w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || k == 0 || k > in_h + 2 * pad || k > in_w + 2 * pad {
            return None;
        }
        let out_h = (in_h + 2 * pad - k) / stride + 1;
        let out_w = (in_w + 2 * pad - k) / stride + 1;
        Some(ConvGeom { channels, in_h, in_w, k, stride, pad, out_h, out_w })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_identity(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

impl ConvGeom {
    /// Output columns `oj` whose input column `oj·stride + kj - pad` is in bounds.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = if kj >= self.pad { 0 } else { (self.pad - kj).div_ceil(self.stride) };
        // need oj·stride + kj - pad <= in_w - 1
        let limit = self.in_w + self.pad;
        let hi = if limit > kj { ((limit - kj - 1) / self.stride + 1).min(self.out_w) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Unfold `img[channels, in_h, in_w]` into `cols[channels·k·k, out_h·out_w]`.
pub fn im2col<T: Real>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let hw = g.col_cols();
    if g.is_identity() {
        cols[..g.channels * hw].copy_from_slice(&img[..g.channels * hw]);
        return;
    }
    let plane_len = g.in_h * g.in_w;
    for c in 0..g.channels {
        let plane = &img[c * plane_len..(c + 1) * plane_len];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (lo, hi) = g.valid_cols(kj);
                for oi in 0..g.out_h {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.out_w..(oi + 1) * g.out_w];
                    if ii < 0 || ii >= g.in_h as isize || lo >= hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * g.in_w..(ii as usize + 1) * g.in_w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, s) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *v = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate `cols` back into `img`.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let hw = g.col_cols();
    if g.is_identity() {
        for (d, s) in img[..g.channels * hw].iter_mut().zip(&cols[..g.channels * hw]) {
            *d += *s;
        }
        return;
    }
    let plane_len = g.in_h * g.in_w;
    for c in 0..g.channels {
        let plane = &mut img[c * plane_len..(c + 1) * plane_len];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                let (lo, hi) = g.valid_cols(kj);
                if lo >= hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad;
                for oi in 0..g.out_h {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.in_w..(ii as usize + 1) * g.in_w];
                    let line = &src[oi * g.out_w + lo..oi * g.out_w + hi];
                    for (d, s) in dst[first..].iter_mut().step_by(g.stride).zip(line) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Unfold a `[t, c]` sequence into `[t, c·k]` windows with symmetric zero padding.
pub fn temporal_im2col<T: Real>(x: &[T], t: usize, c: usize, k: usize, cols: &mut [T]) {
    let pad = (k - 1) / 2;
    for ti in 0..t {
        let row = &mut cols[ti * c * k..(ti + 1) * c * k];
        for ci in 0..c {
            for j in 0..k {
                let src = ti as isize + j as isize - pad as isize;
                row[ci * k + j] = if src < 0 || src >= t as isize {
                    T::zero()
                } else {
                    x[src as usize * c + ci]
                };
            }
        }
    }
}

pub fn temporal_col2im<T: Real>(cols: &[T], t: usize, c: usize, k: usize, x: &mut [T]) {
    let pad = (k - 1) / 2;
    for ti in 0..t {
        let row = &cols[ti * c * k..(ti + 1) * c * k];
        for ci in 0..c {
            for j in 0..k {
                let src = ti as isize + j as isize - pad as isize;
                if src >= 0 && src < t as isize {
                    x[src as usize * c + ci] += row[ci * k + j];
                }
            }
        }
    }
}
