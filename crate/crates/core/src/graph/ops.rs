//! Layer kernels over `[C, H, W]` and `[N]` tensors.
//!
//! Each forward kernel has a matching vector-Jacobian product. Shapes are
//! assumed valid: the graph validates them once at construction.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims3 {
    pub fn of(shape: &[usize]) -> Dims3 {
        Dims3 { c: shape[0], h: shape[1], w: shape[2] }
    }
}

pub(crate) fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `y = W x + b` with `W: [out, in]`.
pub(crate) fn linear(x: &[f64], weight: &Tensor, bias: Option<&[f64]>) -> Vec<f64> {
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    let w = weight.data();
    (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            dot + bias.map_or(0.0, |b| b[o])
        })
        .collect()
}

/// `Wᵀ g`.
pub(crate) fn linear_vjp(grad: &[f64], weight: &Tensor) -> Vec<f64> {
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    let w = weight.data();
    let mut gx = vec![0.0; inp];
    for o in 0..out {
        let g = grad[o];
        if g == 0.0 {
            continue;
        }
        for (gi, wi) in gx.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
            *gi += g * wi;
        }
    }
    gx
}

pub(crate) struct ConvGeometry {
    pub input: Dims3,
    pub output: Dims3,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &Tensor, stride: usize, padding: usize) -> ConvGeometry {
        let ws = weight.shape();
        let input = Dims3::of(input);
        let (kh, kw) = (ws[2], ws[3]);
        let output = Dims3 {
            c: ws[0],
            h: conv_out_len(input.h, kh, stride, padding).unwrap_or(0),
            w: conv_out_len(input.w, kw, stride, padding).unwrap_or(0),
        };
        ConvGeometry { input, output, kh, kw, stride, padding }
    }

    /// Input coordinate hit by output `(oy, ox)` and kernel tap `(ky, kx)`, if inside the image.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.input.h && ix < self.input.w).then_some((iy, ix))
    }
}

pub(crate) fn conv2d(x: &[f64], weight: &Tensor, bias: Option<&[f64]>, geo: &ConvGeometry) -> Vec<f64> {
    let (i, o) = (geo.input, geo.output);
    let w = weight.data();
    let mut y = vec![0.0; o.c * o.h * o.w];
    // Accumulates tap by tap; each output still sums its taps in (ic, ky, kx) order.
    for oc in 0..o.c {
        let out = &mut y[oc * o.h * o.w..(oc + 1) * o.h * o.w];
        for ic in 0..i.c {
            let plane = &x[ic * i.h * i.w..(ic + 1) * i.h * i.w];
            let wbase = (oc * i.c + ic) * geo.kh * geo.kw;
            for ky in 0..geo.kh {
                for kx in 0..geo.kw {
                    let wv = w[wbase + ky * geo.kw + kx];
                    for oy in 0..o.h {
                        let Some(iy) = (oy * geo.stride + ky).checked_sub(geo.padding).filter(|&v| v < i.h) else {
                            continue;
                        };
                        let row = &plane[iy * i.w..(iy + 1) * i.w];
                        let out_row = &mut out[oy * o.w..(oy + 1) * o.w];
                        // Output columns whose tap lands inside the row.
                        let lo = geo.padding.saturating_sub(kx).div_ceil(geo.stride);
                        let hi = ((i.w + geo.padding).saturating_sub(kx + 1) / geo.stride + 1).min(o.w);
                        for ox in lo..hi {
                            out_row[ox] += wv * row[ox * geo.stride + kx - geo.padding];
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            for v in out.iter_mut() {
                *v += b[oc];
            }
        }
    }
    y
}

/// Gradient of a convolution with respect to its input.
pub(crate) fn conv2d_vjp(grad: &[f64], weight: &Tensor, geo: &ConvGeometry) -> Vec<f64> {
    let (i, o) = (geo.input, geo.output);
    let w = weight.data();
    let mut gx = vec![0.0; i.c * i.h * i.w];
    for oc in 0..o.c {
        for oy in 0..o.h {
            for ox in 0..o.w {
                let g = grad[(oc * o.h + oy) * o.w + ox];
                if g == 0.0 {
                    continue;
                }
                for ic in 0..i.c {
                    let wbase = (oc * i.c + ic) * geo.kh * geo.kw;
                    for ky in 0..geo.kh {
                        for kx in 0..geo.kw {
                            if let Some((iy, ix)) = geo.source(oy, ox, ky, kx) {
                                gx[(ic * i.h + iy) * i.w + ix] += g * w[wbase + ky * geo.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Gradient of a convolution with respect to its kernel.
pub(crate) fn conv2d_weight_grad(grad: &[f64], x: &[f64], geo: &ConvGeometry) -> Vec<f64> {
    let (i, o) = (geo.input, geo.output);
    let mut gw = vec![0.0; o.c * i.c * geo.kh * geo.kw];
    for oc in 0..o.c {
        for oy in 0..o.h {
            for ox in 0..o.w {
                let g = grad[(oc * o.h + oy) * o.w + ox];
                if g == 0.0 {
                    continue;
                }
                for ic in 0..i.c {
                    let wbase = (oc * i.c + ic) * geo.kh * geo.kw;
                    for ky in 0..geo.kh {
                        for kx in 0..geo.kw {
                            if let Some((iy, ix)) = geo.source(oy, ox, ky, kx) {
                                gw[wbase + ky * geo.kw + kx] += g * x[(ic * i.h + iy) * i.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    gw
}

pub(crate) struct PoolGeometry {
    pub input: Dims3,
    pub output: Dims3,
    pub kernel: usize,
    pub stride: usize,
}

impl PoolGeometry {
    pub fn new(input: &[usize], kernel: usize, stride: usize) -> PoolGeometry {
        let input = Dims3::of(input);
        let output = Dims3 {
            c: input.c,
            h: conv_out_len(input.h, kernel, stride, 0).unwrap_or(0),
            w: conv_out_len(input.w, kernel, stride, 0).unwrap_or(0),
        };
        PoolGeometry { input, output, kernel, stride }
    }

    /// Flat input indices covered by output cell `(c, oy, ox)`, row-major.
    pub fn window(&self, c: usize, oy: usize, ox: usize) -> impl Iterator<Item = usize> + '_ {
        let (h, w) = (self.input.h, self.input.w);
        let (y0, x0) = (oy * self.stride, ox * self.stride);
        (0..self.kernel).flat_map(move |ky| {
            (0..self.kernel).map(move |kx| (c * h + y0 + ky) * w + x0 + kx)
        })
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let o = self.output;
        (0..o.c).flat_map(move |c| {
            (0..o.h).flat_map(move |y| (0..o.w).map(move |x| (c, y, x, (c * o.h + y) * o.w + x)))
        })
    }
}

/// Index of the window maximum; ties go to the lowest flat index.
pub(crate) fn max_winner(x: &[f64], window: impl Iterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for i in window {
        match best {
            Some(b) if x[i] <= x[b] => {}
            _ => best = Some(i),
        }
    }
    best.expect("pool window is never empty")
}

pub(crate) fn max_pool(x: &[f64], geo: &PoolGeometry) -> Vec<f64> {
    let o = geo.output;
    let mut y = vec![0.0; o.c * o.h * o.w];
    for (c, oy, ox, out) in geo.cells() {
        y[out] = x[max_winner(x, geo.window(c, oy, ox))];
    }
    y
}

pub(crate) fn max_pool_vjp(grad: &[f64], x: &[f64], geo: &PoolGeometry) -> Vec<f64> {
    let mut gx = vec![0.0; x.len()];
    for (c, oy, ox, out) in geo.cells() {
        gx[max_winner(x, geo.window(c, oy, ox))] += grad[out];
    }
    gx
}

pub(crate) fn avg_pool(x: &[f64], geo: &PoolGeometry) -> Vec<f64> {
    let o = geo.output;
    let area = (geo.kernel * geo.kernel) as f64;
    let mut y = vec![0.0; o.c * o.h * o.w];
    for (c, oy, ox, out) in geo.cells() {
        y[out] = geo.window(c, oy, ox).map(|i| x[i]).sum::<f64>() / area;
    }
    y
}

pub(crate) fn avg_pool_vjp(grad: &[f64], input_len: usize, geo: &PoolGeometry) -> Vec<f64> {
    let area = (geo.kernel * geo.kernel) as f64;
    let mut gx = vec![0.0; input_len];
    for (c, oy, ox, out) in geo.cells() {
        let g = grad[out] / area;
        for i in geo.window(c, oy, ox) {
            gx[i] += g;
        }
    }
    gx
}

pub(crate) fn global_avg_pool(x: &[f64], dims: Dims3) -> Vec<f64> {
    let area = dims.h * dims.w;
    x.chunks(area).map(|ch| ch.iter().sum::<f64>() / area as f64).collect()
}

pub(crate) fn global_avg_pool_vjp(grad: &[f64], dims: Dims3) -> Vec<f64> {
    let area = dims.h * dims.w;
    grad.iter().flat_map(|&g| std::iter::repeat_n(g / area as f64, area)).collect()
}

/// Per-channel scale and shift of a frozen batch norm: `y = scale * x + shift`.
pub(crate) fn batch_norm_affine(
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let scale: Vec<f64> = gamma.iter().zip(var).map(|(g, v)| g / (v + eps).sqrt()).collect();
    let shift = beta.iter().zip(mean).zip(&scale).map(|((b, m), s)| b - s * m).collect();
    (scale, shift)
}

/// Applies `f(value, channel)` over a tensor whose leading dimension is the channel.
pub(crate) fn per_channel(x: &[f64], channels: usize, f: impl Fn(f64, usize) -> f64) -> Vec<f64> {
    let per = x.len() / channels;
    x.iter().enumerate().map(|(i, &v)| f(v, i / per)).collect()
}

/// Bilinear resize of a single `[h, w]` map, half-pixel centres, edge clamped.
pub fn bilinear_resize(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    if h == out_h && w == out_w {
        return map.to_vec();
    }
    let sample = |len: usize, out_len: usize, o: usize| -> (usize, usize, f64) {
        let scale = len as f64 / out_len as f64;
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut out = vec![0.0; out_h * out_w];
    for oy in 0..out_h {
        let (y0, y1, fy) = sample(h, out_h, oy);
        for ox in 0..out_w {
            let (x0, x1, fx) = sample(w, out_w, ox);
            let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
            let bottom = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
            out[oy * out_w + ox] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}
