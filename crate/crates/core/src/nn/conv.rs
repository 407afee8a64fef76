//! 2-D cross-correlation (no kernel flip) and 2×2 stride-2 transposed
//! convolution, both on `N × C × H × W` tensors.

use rand::Rng;
use rayon::prelude::*;

use super::module::join;
use super::{Mode, Module, Param, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Valid output index range `[lo, hi)` along one axis for kernel offset `k`.
fn valid_range(out: usize, extent: usize, offset: usize, pad: usize, stride: usize) -> (usize, usize) {
    // Input index is o * stride + offset - pad, which must land in [0, extent).
    let lo = if pad > offset { (pad - offset).div_ceil(stride) } else { 0 };
    if extent + pad <= offset {
        return (0, 0);
    }
    let hi = ((extent - 1 + pad - offset) / stride + 1).min(out);
    (lo.min(hi), hi)
}

fn conv_out(extent: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if extent + 2 * pad < k {
        return Err(Error::Shape(format!("kernel {k} larger than padded extent {}", extent + 2 * pad)));
    }
    Ok((extent + 2 * pad - k) / stride + 1)
}

fn check_conv(x: &Tensor, weight: &Tensor, stride: usize) -> Result<([usize; 4], [usize; 4])> {
    let xd = x.dims4()?;
    let wd = weight.dims4()?;
    if wd[1] != xd[1] {
        return Err(Error::Shape(format!("conv weight expects {} input channels, input has {}", wd[1], xd[1])));
    }
    if wd[2] != wd[3] {
        return Err(Error::Shape(format!("non-square kernel {}x{}", wd[2], wd[3])));
    }
    if stride == 0 {
        return Err(Error::Shape("stride must be >= 1".into()));
    }
    Ok((xd, wd))
}

/// `y[n,o] = b[o] + Σ_c w[o,c] ⋆ x[n,c]` with zero padding.
pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let ([n, cin, h, w], [cout, _, k, _]) = check_conv(x, weight, stride)?;
    if let Some(b) = bias {
        if b.dims() != [cout] {
            return Err(Error::Shape(format!("bias dims {:?}, expected [{cout}]", b.dims())));
        }
    }
    let oh = conv_out(h, k, stride, pad)?;
    let ow = conv_out(w, k, stride, pad)?;
    let mut out = vec![0.0; n * cout * oh * ow];
    let xs = x.data();
    let ws = weight.data();
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane, y)| {
        let (b_idx, o) = (plane / cout, plane % cout);
        if let Some(b) = bias {
            y.fill(b.data()[o]);
        }
        for c in 0..cin {
            let xin = &xs[(b_idx * cin + c) * h * w..][..h * w];
            for kh in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, h, kh, pad, stride);
                for kw in 0..k {
                    let wv = ws[((o * cin + c) * k + kh) * k + kw];
                    let (ox_lo, ox_hi) = valid_range(ow, w, kw, pad, stride);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + kh - pad;
                        let ix0 = ox_lo * stride + kw - pad;
                        let yrow = &mut y[oy * ow + ox_lo..oy * ow + ox_hi];
                        let xrow = &xin[iy * w..(iy + 1) * w];
                        if stride == 1 {
                            let len = yrow.len();
                            for (yv, xv) in yrow.iter_mut().zip(&xrow[ix0..ix0 + len]) {
                                *yv += wv * xv;
                            }
                        } else {
                            for (yv, xv) in yrow.iter_mut().zip(xrow[ix0..].iter().step_by(stride)) {
                                *yv += wv * xv;
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(&[n, cout, oh, ow], out)
}

/// Exact gradients of [`conv2d_forward`] with respect to input, weight and
/// (when `has_bias`) bias.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    has_bias: bool,
    stride: usize,
    pad: usize,
    dy: &Tensor,
) -> Result<Conv2dGrads> {
    let ([n, cin, h, w], [cout, _, k, _]) = check_conv(x, weight, stride)?;
    let oh = conv_out(h, k, stride, pad)?;
    let ow = conv_out(w, k, stride, pad)?;
    if dy.dims() != [n, cout, oh, ow] {
        return Err(Error::Shape(format!(
            "conv upstream gradient dims {:?}, expected {:?}",
            dy.dims(),
            [n, cout, oh, ow]
        )));
    }
    let xs = x.data();
    let ws = weight.data();
    let dys = dy.data();

    let mut dx = vec![0.0; n * cin * h * w];
    dx.par_chunks_mut(h * w).enumerate().for_each(|(plane, dxp)| {
        let (b_idx, c) = (plane / cin, plane % cin);
        for o in 0..cout {
            let dyp = &dys[(b_idx * cout + o) * oh * ow..][..oh * ow];
            for kh in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, h, kh, pad, stride);
                for kw in 0..k {
                    let wv = ws[((o * cin + c) * k + kh) * k + kw];
                    let (ox_lo, ox_hi) = valid_range(ow, w, kw, pad, stride);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + kh - pad;
                        let ix0 = ox_lo * stride + kw - pad;
                        let dyrow = &dyp[oy * ow + ox_lo..oy * ow + ox_hi];
                        let dxrow = &mut dxp[iy * w..(iy + 1) * w];
                        if stride == 1 {
                            for (d, g) in dxrow[ix0..ix0 + dyrow.len()].iter_mut().zip(dyrow) {
                                *d += wv * g;
                            }
                        } else {
                            for (d, g) in dxrow[ix0..].iter_mut().step_by(stride).zip(dyrow) {
                                *d += wv * g;
                            }
                        }
                    }
                }
            }
        }
    });

    let mut dw = vec![0.0; cout * cin * k * k];
    dw.par_chunks_mut(cin * k * k).enumerate().for_each(|(o, dwo)| {
        for c in 0..cin {
            for kh in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, h, kh, pad, stride);
                for kw in 0..k {
                    let (ox_lo, ox_hi) = valid_range(ow, w, kw, pad, stride);
                    let mut acc = 0.0;
                    if ox_lo < ox_hi {
                        for b_idx in 0..n {
                            let xin = &xs[(b_idx * cin + c) * h * w..][..h * w];
                            let dyp = &dys[(b_idx * cout + o) * oh * ow..][..oh * ow];
                            for oy in oy_lo..oy_hi {
                                let iy = oy * stride + kh - pad;
                                let ix0 = ox_lo * stride + kw - pad;
                                let dyrow = &dyp[oy * ow + ox_lo..oy * ow + ox_hi];
                                let xrow = &xin[iy * w..(iy + 1) * w];
                                if stride == 1 {
                                    acc += dyrow.iter().zip(&xrow[ix0..]).map(|(a, b)| a * b).sum::<f64>();
                                } else {
                                    acc += dyrow
                                        .iter()
                                        .zip(xrow[ix0..].iter().step_by(stride))
                                        .map(|(a, b)| a * b)
                                        .sum::<f64>();
                                }
                            }
                        }
                    }
                    dwo[(c * k + kh) * k + kw] = acc;
                }
            }
        }
    });

    let bias = has_bias.then(|| {
        let mut db = vec![0.0; cout];
        for b_idx in 0..n {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += dys[(b_idx * cout + o) * oh * ow..][..oh * ow].iter().sum::<f64>();
            }
        }
        Tensor::new(&[cout], db).expect("dims match")
    });

    Ok(Conv2dGrads { input: Tensor::new(&[n, cin, h, w], dx)?, weight: Tensor::new(&[cout, cin, k, k], dw)?, bias })
}

/// `k × k` convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// He-uniform weights, zero bias, stride 1, "same" zero padding.
    pub fn new(cin: usize, cout: usize, k: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        Conv2d {
            weight: Param::new(Tensor::uniform(&[cout, cin, k, k], -bound, bound, rng)),
            bias: bias.then(|| Param::new(Tensor::zeros(&[cout]))),
            stride: 1,
            pad: k / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dims()[0]
    }

    /// Trainable element count of a conv layer with these dimensions.
    pub fn param_count(cin: usize, cout: usize, k: usize, bias: bool) -> u64 {
        (cout * cin * k * k + if bias { cout } else { 0 }) as u64
    }
}

impl Module for Conv2d {
    type Cache = Tensor;

    fn forward(&self, x: &Tensor, _mode: Mode) -> Result<(Tensor, Tensor)> {
        let y = conv2d_forward(x, &self.weight.value, self.bias.as_ref().map(|b| &b.value), self.stride, self.pad)?;
        Ok((y, x.clone()))
    }

    fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let g = conv2d_backward(x, &self.weight.value, self.bias.is_some(), self.stride, self.pad, dy)?;
        self.weight.grad.add_assign(&g.weight)?;
        if let (Some(b), Some(db)) = (self.bias.as_mut(), g.bias.as_ref()) {
            b.grad.add_assign(db)?;
        }
        Ok(g.input)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// `y[n,o,2i+a,2j+b] = bias[o] + Σ_c x[n,c,i,j]·w[c,o,a,b]`; weight is `Cin × Cout × 2 × 2`.
pub fn transposed_conv2x_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, cin, h, w] = x.dims4()?;
    let wd = weight.dims4()?;
    if wd[0] != cin || wd[2] != 2 || wd[3] != 2 {
        return Err(Error::Shape(format!("transposed conv weight {:?} incompatible with {cin} input channels", wd)));
    }
    let cout = wd[1];
    if bias.dims() != [cout] {
        return Err(Error::Shape(format!("bias dims {:?}, expected [{cout}]", bias.dims())));
    }
    let (oh, ow) = (2 * h, 2 * w);
    let xs = x.data();
    let ws = weight.data();
    let mut out = vec![0.0; n * cout * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane, y)| {
        let (b_idx, o) = (plane / cout, plane % cout);
        y.fill(bias.data()[o]);
        for c in 0..cin {
            let xin = &xs[(b_idx * cin + c) * h * w..][..h * w];
            let wk = &ws[(c * cout + o) * 4..][..4];
            for i in 0..h {
                for a in 0..2 {
                    let yrow = &mut y[(2 * i + a) * ow..][..ow];
                    let (w0, w1) = (wk[2 * a], wk[2 * a + 1]);
                    for (j, &xv) in xin[i * w..(i + 1) * w].iter().enumerate() {
                        yrow[2 * j] += xv * w0;
                        yrow[2 * j + 1] += xv * w1;
                    }
                }
            }
        }
    });
    Tensor::new(&[n, cout, oh, ow], out)
}

/// Returns `(dx, dweight, dbias)`.
pub fn transposed_conv2x_backward(x: &Tensor, weight: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, cin, h, w] = x.dims4()?;
    let cout = weight.dims4()?[1];
    let (oh, ow) = (2 * h, 2 * w);
    if dy.dims() != [n, cout, oh, ow] {
        return Err(Error::Shape(format!(
            "transposed conv upstream gradient dims {:?}, expected {:?}",
            dy.dims(),
            [n, cout, oh, ow]
        )));
    }
    let xs = x.data();
    let ws = weight.data();
    let dys = dy.data();

    let mut dx = vec![0.0; n * cin * h * w];
    dx.par_chunks_mut(h * w).enumerate().for_each(|(plane, dxp)| {
        let (b_idx, c) = (plane / cin, plane % cin);
        for o in 0..cout {
            let dyp = &dys[(b_idx * cout + o) * oh * ow..][..oh * ow];
            let wk = &ws[(c * cout + o) * 4..][..4];
            for i in 0..h {
                for a in 0..2 {
                    let dyrow = &dyp[(2 * i + a) * ow..][..ow];
                    let (w0, w1) = (wk[2 * a], wk[2 * a + 1]);
                    for (j, d) in dxp[i * w..(i + 1) * w].iter_mut().enumerate() {
                        *d += dyrow[2 * j] * w0 + dyrow[2 * j + 1] * w1;
                    }
                }
            }
        }
    });

    let mut dw = vec![0.0; cin * cout * 4];
    dw.par_chunks_mut(cout * 4).enumerate().for_each(|(c, dwc)| {
        for o in 0..cout {
            for a in 0..2 {
                for b in 0..2 {
                    let mut acc = 0.0;
                    for b_idx in 0..n {
                        let xin = &xs[(b_idx * cin + c) * h * w..][..h * w];
                        let dyp = &dys[(b_idx * cout + o) * oh * ow..][..oh * ow];
                        for i in 0..h {
                            let dyrow = &dyp[(2 * i + a) * ow..][..ow];
                            for (j, &xv) in xin[i * w..(i + 1) * w].iter().enumerate() {
                                acc += xv * dyrow[2 * j + b];
                            }
                        }
                    }
                    dwc[o * 4 + a * 2 + b] = acc;
                }
            }
        }
    });

    let mut db = vec![0.0; cout];
    for b_idx in 0..n {
        for (o, acc) in db.iter_mut().enumerate() {
            *acc += dys[(b_idx * cout + o) * oh * ow..][..oh * ow].iter().sum::<f64>();
        }
    }
    Ok((Tensor::new(&[n, cin, h, w], dx)?, Tensor::new(&[cin, cout, 2, 2], dw)?, Tensor::new(&[cout], db)?))
}

/// 2×2 stride-2 transposed convolution, doubling spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct TransposedConv2x {
    pub weight: Param,
    pub bias: Param,
}

impl TransposedConv2x {
    pub fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (cin * 4) as f64).sqrt();
        TransposedConv2x {
            weight: Param::new(Tensor::uniform(&[cin, cout, 2, 2], -bound, bound, rng)),
            bias: Param::new(Tensor::zeros(&[cout])),
        }
    }

    pub fn param_count(cin: usize, cout: usize) -> u64 {
        (cin * cout * 4 + cout) as u64
    }
}

impl Module for TransposedConv2x {
    type Cache = Tensor;

    fn forward(&self, x: &Tensor, _mode: Mode) -> Result<(Tensor, Tensor)> {
        Ok((transposed_conv2x_forward(x, &self.weight.value, &self.bias.value)?, x.clone()))
    }

    fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let (dx, dw, db) = transposed_conv2x_backward(x, &self.weight.value, dy)?;
        self.weight.grad.add_assign(&dw)?;
        self.bias.grad.add_assign(&db)?;
        Ok(dx)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Direct quadruple-loop reference, independent of the row-slice kernels.
    fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
        let [n, cin, h, wd] = x.dims4().unwrap();
        let [cout, _, k, _] = w.dims4().unwrap();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, cout, oh, ow]);
        for bi in 0..n {
            for o in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.map_or(0.0, |b| b.data()[o]);
                        for c in 0..cin {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let iy = (oy * stride + kh) as isize - pad as isize;
                                    let ix = (ox * stride + kw) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.data()[((bi * cin + c) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((o * cin + c) * k + kh) * k + kw];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_valid_conv_is_nine() {
        let x = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::uniform(&[2, 1, 5, 4], -1.0, 1.0, &mut rng);
        let y = conv2d_forward(&x, &Tensor::filled(&[1, 1, 1, 1], 1.0), Some(&Tensor::zeros(&[1])), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn cross_correlation_convention() {
        // Kernel picks the top-left neighbour: no flip means y[i,j] = x[i-1,j-1].
        let x = Tensor::new(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let mut k = vec![0.0; 9];
        k[0] = 1.0;
        let w = Tensor::new(&[1, 1, 3, 3], k).unwrap();
        let y = conv2d_forward(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 4.0, 5.0]);
    }

    #[test]
    fn matches_naive_reference_across_strides_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (stride, pad, k) in [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 0, 2), (3, 2, 3), (1, 0, 1)] {
            let x = Tensor::uniform(&[2, 3, 7, 6], -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(&[4, 3, k, k], -1.0, 1.0, &mut rng);
            let b = Tensor::uniform(&[4], -1.0, 1.0, &mut rng);
            let fast = conv2d_forward(&x, &w, Some(&b), stride, pad).unwrap();
            let slow = naive_conv(&x, &w, Some(&b), stride, pad);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12, "stride {stride} pad {pad}");
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 3, 3, 3]), None, 1, 1).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 2, 5, 5]), None, 1, 0).is_err());
        assert!(conv2d_forward(&Tensor::zeros(&[2, 4, 4]), &Tensor::zeros(&[1, 2, 3, 3]), None, 1, 1).is_err());
        let w = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(conv2d_backward(&x, &w, true, 1, 1, &Tensor::zeros(&[1, 1, 3, 3])).is_err());
    }

    #[test]
    fn transposed_conv_places_kernel_blocks() {
        let x = Tensor::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = transposed_conv2x_forward(&x, &w, &Tensor::filled(&[1], 0.5)).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 4]);
        assert_eq!(y.data(), &[1.5, 2.5, 2.5, 4.5, 3.5, 4.5, 6.5, 8.5]);
    }
}
