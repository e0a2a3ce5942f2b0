// im2col / col2im kernels for grouped 2-D cross-correlation.

use super::Scalar;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// 1×1 kernel, unit stride, no padding: the input plane already is the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfold `input` (`channels × height × width`) into `cols` (`channels·kh·kw × out_h·out_w`).
pub(crate) fn im2col<T: Scalar>(input: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ncols = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + i) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if y < 0 || y >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let x = (ox * g.stride + j) as isize - pad;
                        *out = if x < 0 || x >= g.width as isize { T::zero() } else { src[x as usize] };
                    }
                }
            }
        }
    }
}

/// Fold `cols` back, adding into `input_grad`.
pub(crate) fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, input_grad: &mut [T]) {
    let ncols = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut input_grad[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + i) as isize - pad;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let line = &mut plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride + j) as isize - pad;
                        if x >= 0 && x < g.width as isize {
                            line[x as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}
