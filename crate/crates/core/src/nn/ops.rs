//! Shape-changing and binary operations on `N × C × H × W` tensors.

use super::Tensor;
use crate::{Error, Result};

/// 2×2 max-pool, stride 2. Returns the output and the flat input index of
/// each selected maximum (first one on ties).
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = x.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("max-pool needs at least 2x2, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xs = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if xs[idx] > xs[best] {
                        best = idx;
                    }
                }
                out.push(xs[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, argmax))
}

pub fn maxpool2x2_backward(input_dims: &[usize], argmax: &[usize], dy: &Tensor) -> Result<Tensor> {
    if dy.len() != argmax.len() {
        return Err(Error::Shape("max-pool gradient does not match forward output".into()));
    }
    let mut dx = Tensor::zeros(input_dims);
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[idx] += g;
    }
    Ok(dx)
}

pub fn nearest_upsample2x_forward(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * c * oh * ow];
    for (plane, src) in x.data().chunks_exact(h * w).enumerate() {
        let dst = &mut out[plane * oh * ow..][..oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

pub fn nearest_upsample2x_backward(dy: &Tensor) -> Result<Tensor> {
    let [n, c, oh, ow] = dy.dims4()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::Shape(format!("upsample gradient has odd dims {oh}x{ow}")));
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = vec![0.0; n * c * h * w];
    for (plane, src) in dy.data().chunks_exact(oh * ow).enumerate() {
        let dst = &mut dx[plane * h * w..][..h * w];
        for i in 0..oh {
            for j in 0..ow {
                dst[(i / 2) * w + j / 2] += src[i * ow + j];
            }
        }
    }
    Tensor::new(&[n, c, h, w], dx)
}

/// Concatenates along the channel axis: `a` channels first.
pub fn concat_channels_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, ca, h, w] = a.dims4()?;
    let [nb, cb, hb, wb] = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::Shape(format!("concat of {:?} and {:?}", a.dims(), b.dims())));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * (ca + cb) * plane);
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        out.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    Tensor::new(&[n, ca + cb, h, w], out)
}

/// Splits a channel-concatenated gradient back into `(da, db)`.
pub fn concat_channels_backward(ca: usize, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = dy.dims4()?;
    if ca > c {
        return Err(Error::Shape(format!("cannot split {ca} channels from {c}")));
    }
    let cb = c - ca;
    let plane = h * w;
    let mut da = Vec::with_capacity(n * ca * plane);
    let mut db = Vec::with_capacity(n * cb * plane);
    for chunk in dy.data().chunks_exact(c * plane) {
        da.extend_from_slice(&chunk[..ca * plane]);
        db.extend_from_slice(&chunk[ca * plane..]);
    }
    Ok((Tensor::new(&[n, ca, h, w], da)?, Tensor::new(&[n, cb, h, w], db)?))
}

pub fn add_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = a.clone();
    out.add_assign(b).map_err(|_| Error::Shape(format!("add of {:?} and {:?}", a.dims(), b.dims())))?;
    Ok(out)
}

/// Both operands receive the upstream gradient unchanged.
pub fn add_backward(dy: &Tensor) -> (Tensor, Tensor) {
    (dy.clone(), dy.clone())
}

/// `y = a ⊙ x`, where `a` has either the same channel count as `x` or a
/// single channel broadcast over all of `x`'s channels.
pub fn mul_forward(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (ca, c, plane) = check_mul(a, x)?;
    let mut out = x.clone();
    for (i, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        let (bi, ci) = (i / c, i % c);
        let src = &a.data()[(bi * ca + if ca == 1 { 0 } else { ci }) * plane..][..plane];
        for (o, s) in chunk.iter_mut().zip(src) {
            *o *= s;
        }
    }
    Ok(out)
}

/// Returns `(da, dx)`; a broadcast operand sums its gradient over channels.
pub fn mul_backward(a: &Tensor, x: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let (ca, c, plane) = check_mul(a, x)?;
    x.same_dims(dy, "mul_backward")?;
    let mut da = Tensor::zeros_like(a);
    let mut dx = Tensor::zeros_like(x);
    for i in 0..dy.len() / plane {
        let (bi, ci) = (i / c, i % c);
        let aoff = (bi * ca + if ca == 1 { 0 } else { ci }) * plane;
        for p in 0..plane {
            let g = dy.data()[i * plane + p];
            da.data_mut()[aoff + p] += g * x.data()[i * plane + p];
            dx.data_mut()[i * plane + p] = g * a.data()[aoff + p];
        }
    }
    Ok((da, dx))
}

fn check_mul(a: &Tensor, x: &Tensor) -> Result<(usize, usize, usize)> {
    let [n, ca, h, w] = a.dims4()?;
    let [nx, c, hx, wx] = x.dims4()?;
    if (n, h, w) != (nx, hx, wx) || (ca != 1 && ca != c) {
        return Err(Error::Shape(format!("mul of {:?} and {:?}", a.dims(), x.dims())));
    }
    Ok((ca, c, h * w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_example() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dx = maxpool2x2_backward(x.dims(), &arg, &Tensor::filled(&[1, 1, 1, 1], 2.0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn upsample_repeats_and_sums_back() {
        let x = Tensor::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let y = nearest_upsample2x_forward(&x).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let dx = nearest_upsample2x_backward(&Tensor::filled(&[1, 1, 2, 4], 1.0)).unwrap();
        assert_eq!(dx.data(), &[4.0, 4.0]);
    }

    #[test]
    fn concat_round_trip() {
        let a = Tensor::filled(&[2, 1, 2, 2], 1.0);
        let b = Tensor::filled(&[2, 2, 2, 2], 2.0);
        let y = concat_channels_forward(&a, &b).unwrap();
        assert_eq!(y.dims(), &[2, 3, 2, 2]);
        assert_eq!(&y.data()[..4], &[1.0; 4]);
        assert_eq!(&y.data()[4..12], &[2.0; 8]);
        let (da, db) = concat_channels_backward(1, &y).unwrap();
        assert_eq!((da, db), (a, b));
        assert!(concat_channels_forward(&Tensor::zeros(&[1, 1, 2, 2]), &Tensor::zeros(&[1, 1, 2, 3])).is_err());
    }

    #[test]
    fn broadcast_mul() {
        let a = Tensor::new(&[1, 1, 1, 2], vec![2.0, 3.0]).unwrap();
        let x = Tensor::new(&[1, 2, 1, 2], vec![1.0, 1.0, 4.0, 5.0]).unwrap();
        assert_eq!(mul_forward(&a, &x).unwrap().data(), &[2.0, 3.0, 8.0, 15.0]);
        let (da, dx) = mul_backward(&a, &x, &Tensor::filled(&[1, 2, 1, 2], 1.0)).unwrap();
        assert_eq!(da.data(), &[5.0, 6.0]);
        assert_eq!(dx.data(), &[2.0, 3.0, 2.0, 3.0]);
        assert!(mul_forward(&Tensor::zeros(&[1, 3, 1, 2]), &x).is_err());
    }

    #[test]
    fn add_shape_mismatch() {
        assert!(add_forward(&Tensor::zeros(&[1, 1, 2, 2]), &Tensor::zeros(&[1, 2, 2, 2])).is_err());
    }
}
