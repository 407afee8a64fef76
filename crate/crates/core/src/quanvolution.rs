//! Quanvolutional feature extraction.
//!
//! Each `k × k` window of a `[0, 1]` raster is flattened row-major,
//! angle-encoded into the first `k²` qubits of a register, pushed through one
//! frozen circuit, and read back as per-qubit Z expectations. Qubit `q` at a
//! window position becomes channel `q` of the output at that position.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::RasterImage;
use crate::nn::Tensor;
use crate::qsim::{state, CircuitSpec, StateVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Only windows that fit entirely inside the image.
    Valid,
    /// Reflect-pad so that stride 1 preserves the image size: `(k-1)/2`
    /// before and `k/2` after on each axis (edge pixel not repeated).
    SameReflect,
}

impl fmt::Display for Padding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Padding::Valid => "valid",
            Padding::SameReflect => "same-reflect",
        })
    }
}

impl FromStr for Padding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(Padding::Valid),
            "same-reflect" | "same" => Ok(Padding::SameReflect),
            other => Err(Error::Config(format!("unknown padding `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuanvConfig {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: Padding,
    pub n_qubits: usize,
    pub circuit: CircuitSpec,
    /// Map each expectation from `[-1, 1]` to `(1 + z) / 2`.
    pub rescale: bool,
}

impl QuanvConfig {
    /// Stride 1, same-reflect padding, rescaled output; qubit count taken
    /// from the circuit.
    pub fn new(circuit: CircuitSpec, kernel_size: usize) -> Self {
        QuanvConfig {
            kernel_size,
            stride: 1,
            padding: Padding::SameReflect,
            n_qubits: circuit.n_qubits(),
            circuit,
            rescale: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kernel_size;
        if k == 0 {
            return Err(Error::Config("kernel size must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if self.n_qubits < k * k {
            return Err(Error::Config(format!(
                "{} qubits cannot hold a {k}x{k} kernel (need >= {})",
                self.n_qubits,
                k * k
            )));
        }
        if self.circuit.n_qubits() != self.n_qubits {
            return Err(Error::Config(format!(
                "config declares {} qubits, circuit has {}",
                self.n_qubits,
                self.circuit.n_qubits()
            )));
        }
        Ok(())
    }
}

/// One channel per qubit, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub rescaled: bool,
}

impl FeatureStack {
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.channels, self.height, self.width], self.data.clone()).expect("dims match")
    }

    /// Appends `image` as an extra last channel.
    pub fn concat_raw_band(&self, image: &RasterImage) -> Result<Tensor> {
        if image.height() != self.height || image.width() != self.width {
            return Err(Error::Shape(format!(
                "stack is {}x{}, raster is {}x{}",
                self.height,
                self.width,
                image.height(),
                image.width()
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(image.data());
        Tensor::new(&[self.channels + 1, self.height, self.width], data)
    }
}

/// `(before, after)` padding per axis.
fn pad_amount(kernel: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => (0, 0),
        Padding::SameReflect => ((kernel - 1) / 2, kernel / 2),
    }
}

/// Window origins in padded coordinates, row-major.
pub fn window_positions(
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<Vec<(usize, usize)>> {
    let (rows, cols) = output_dims(height, width, kernel, stride, padding)?;
    Ok((0..rows).flat_map(|r| (0..cols).map(move |c| (r * stride, c * stride))).collect())
}

fn output_dims(height: usize, width: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Config("kernel and stride must be >= 1".into()));
    }
    let (before, after) = pad_amount(kernel, padding);
    if after > 0 && (after >= height || after >= width) {
        return Err(Error::Size(format!("reflect padding of {after} needs an image larger than {height}x{width}")));
    }
    let (ph, pw) = (height + before + after, width + before + after);
    if kernel > ph || kernel > pw {
        return Err(Error::Size(format!("kernel {kernel} larger than padded image {ph}x{pw}")));
    }
    Ok(((ph - kernel) / stride + 1, (pw - kernel) / stride + 1))
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Applies the frozen circuit to every window of `image`.
///
/// Output is independent of how rayon schedules rows: every window is
/// evaluated by the same sequential code on its own register.
pub fn quanvolve(image: &RasterImage, config: &QuanvConfig) -> Result<FeatureStack> {
    config.validate()?;
    if let Some((position, &value)) = image.data().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::EncodingRange { position, value });
    }
    let (h, w) = (image.height(), image.width());
    let k = config.kernel_size;
    let n = config.n_qubits;
    let (out_h, out_w) = output_dims(h, w, k, config.stride, config.padding)?;

    let (pad, after) = pad_amount(k, config.padding);
    let (ph, pw) = (h + pad + after, w + pad + after);
    let mut padded = vec![0.0; ph * pw];
    for r in 0..ph {
        let sr = reflect(r as isize - pad as isize, h);
        for c in 0..pw {
            padded[r * pw + c] = image.get(sr, reflect(c as isize - pad as isize, w));
        }
    }

    let stride = config.stride;
    let rows: Vec<Vec<f64>> = (0..out_h)
        .into_par_iter()
        .map_init(
            || (StateVector::zero(n).expect("validated register"), vec![0.0; k * k], vec![0.0; n]),
            |(reg, window, z), orow| {
                let mut row = Vec::with_capacity(out_w * n);
                for ocol in 0..out_w {
                    let (r0, c0) = (orow * stride, ocol * stride);
                    for dr in 0..k {
                        let src = (r0 + dr) * pw + c0;
                        window[dr * k..(dr + 1) * k].copy_from_slice(&padded[src..src + k]);
                    }
                    state::encode_into(reg, window).expect("range checked above");
                    config.circuit.run_in_place(reg).expect("qubit counts validated");
                    reg.z_expectations_into(z);
                    if config.rescale {
                        row.extend(z.iter().map(|v| (1.0 + v) / 2.0));
                    } else {
                        row.extend_from_slice(z);
                    }
                }
                row
            },
        )
        .collect();

    let plane = out_h * out_w;
    let mut data = vec![0.0; n * plane];
    for (orow, row) in rows.iter().enumerate() {
        for (ocol, z) in row.chunks_exact(n).enumerate() {
            for (q, &v) in z.iter().enumerate() {
                data[q * plane + orow * out_w + ocol] = v;
            }
        }
    }
    Ok(FeatureStack { channels: n, height: out_h, width: out_w, data, rescaled: config.rescale })
}
