use std::fmt;
use std::str::FromStr;

use crate::nn::{BatchNorm2d, Conv2d, TransposedConv2x};
use crate::unet::AttentionGate;
use crate::{Error, Result};

/// How decoder levels double the spatial size of the coarser features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Upsample {
    /// 2×2 stride-2 transposed convolution.
    #[default]
    Transposed,
    /// Nearest-neighbour ×2 followed by conv3×3 + batch-norm + ReLU.
    NearestConv,
}

impl fmt::Display for Upsample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Upsample::Transposed => "transposed",
            Upsample::NearestConv => "nearest",
        })
    }
}

impl FromStr for Upsample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "transposed" => Ok(Upsample::Transposed),
            "nearest" | "nearest+conv" | "nearest-conv" => Ok(Upsample::NearestConv),
            other => Err(Error::Config(format!("unknown upsample kind `{other}`"))),
        }
    }
}

/// Shape of an Attention U-Net.
///
/// `widths[l]` is the channel count of encoder level `l` (the last entry is
/// the bottleneck); `gate_widths[l]` is the intermediate width of the
/// attention gate on skip `l`, one per level above the bottleneck.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionUNetConfig {
    pub in_channels: usize,
    pub depth: usize,
    pub widths: Vec<usize>,
    pub gate_widths: Vec<usize>,
    pub upsample: Upsample,
}

impl AttentionUNetConfig {
    /// Gate widths default to half the skip width (at least 1); transposed
    /// upsampling.
    pub fn new(in_channels: usize, widths: &[usize]) -> Self {
        let depth = widths.len();
        AttentionUNetConfig {
            in_channels,
            depth,
            widths: widths.to_vec(),
            gate_widths: default_gate_widths(widths),
            upsample: Upsample::Transposed,
        }
    }

    pub fn with_upsample(mut self, upsample: Upsample) -> Self {
        self.upsample = upsample;
        self
    }

    /// Full-size single-band model (about 34.9 million parameters).
    pub fn reference_baseline() -> Self {
        Self::new(1, &[64, 128, 256, 512, 1024]).with_upsample(Upsample::NearestConv)
    }

    /// Quarter-width model on a 9-channel quanvolved stack.
    pub fn reference_quantum() -> Self {
        Self::new(9, &[16, 32, 64, 128, 256]).with_upsample(Upsample::NearestConv)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("model needs at least one input channel".into()));
        }
        if self.depth == 0 || self.widths.len() != self.depth {
            return Err(Error::Config(format!("depth {} with {} widths", self.depth, self.widths.len())));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("widths must be >= 1".into()));
        }
        if self.gate_widths.len() != self.depth - 1 || self.gate_widths.contains(&0) {
            return Err(Error::Config(format!("need {} gate widths >= 1, got {:?}", self.depth - 1, self.gate_widths)));
        }
        Ok(())
    }

    /// Spatial extents must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.depth - 1)
    }
}

pub(crate) fn default_gate_widths(widths: &[usize]) -> Vec<usize> {
    widths.iter().take(widths.len().saturating_sub(1)).map(|&w| (w / 2).max(1)).collect()
}

fn conv_bn(cin: usize, cout: usize) -> u64 {
    Conv2d::param_count(cin, cout, 3, true) + BatchNorm2d::param_count(cout)
}

/// Closed-form trainable parameter count of the model `config` describes.
pub fn count_params(config: &AttentionUNetConfig) -> Result<u64> {
    config.validate()?;
    let w = &config.widths;
    let mut total = 0;
    let mut cin = config.in_channels;
    for &wl in w {
        total += conv_bn(cin, wl) + conv_bn(wl, wl);
        cin = wl;
    }
    for l in 0..config.depth - 1 {
        let (fine, coarse) = (w[l], w[l + 1]);
        total += match config.upsample {
            Upsample::Transposed => TransposedConv2x::param_count(coarse, fine),
            Upsample::NearestConv => conv_bn(coarse, fine),
        };
        total += AttentionGate::param_count(fine, fine, config.gate_widths[l]);
        total += conv_bn(2 * fine, fine) + conv_bn(fine, fine);
    }
    total += Conv2d::param_count(w[0], 1, 1, true);
    Ok(total)
}
