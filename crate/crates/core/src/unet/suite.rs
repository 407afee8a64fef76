use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttentionGate, AttentionUNet, AttentionUNetConfig, GatePair, Upsample};
use crate::nn::probes::*;
use crate::nn::{gradcheck, BatchNorm2d, Conv2d, GradcheckOptions, Module, Tensor, TransposedConv2x};
use crate::Result;

/// Worst finite-difference result of one component over all seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose step straddled a ReLU or max-pool switch.
    pub skipped: usize,
    pub worst: String,
}

/// Most coordinates the kink guard may leave out before an entry fails.
pub const MAX_SKIPPED_FRACTION: f64 = 0.01;

impl SuiteEntry {
    pub fn skipped_fraction(&self) -> f64 {
        self.skipped as f64 / (self.checked + self.skipped).max(1) as f64
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance && self.skipped_fraction() <= MAX_SKIPPED_FRACTION
    }
}

struct Case {
    name: &'static str,
    tolerance: f64,
    dims: &'static [usize],
    cap: usize,
    /// Whole models: compositions of ReLU and max-pool can put a switch
    /// inside the step, so those coordinates are guarded.
    guarded: bool,
    build: fn(&mut ChaCha8Rng) -> Box<dyn Checkable>,
}

/// Object-safe wrapper so the cases can hold differently typed modules.
trait Checkable {
    fn check(&mut self, x: &Tensor, opts: &GradcheckOptions) -> Result<crate::nn::GradReport>;
}

impl<M: Module> Checkable for M {
    fn check(&mut self, x: &Tensor, opts: &GradcheckOptions) -> Result<crate::nn::GradReport> {
        gradcheck(self, x, opts)
    }
}

fn scaled_bn(c: usize, rng: &mut ChaCha8Rng) -> BatchNorm2d {
    let mut bn = BatchNorm2d::new(c);
    bn.gamma.value = Tensor::uniform(&[c], 0.5, 1.5, rng);
    bn.beta.value = Tensor::uniform(&[c], -0.5, 0.5, rng);
    bn
}

const CASES: &[Case] = &[
    Case {
        name: "conv3x3",
        tolerance: 1e-4,
        dims: &[2, 3, 6, 6],
        cap: 200,
        guarded: false,
        build: |r| Box::new(Conv2d::new(3, 4, 3, true, r)),
    },
    Case {
        name: "conv1x1",
        tolerance: 1e-7,
        dims: &[2, 3, 5, 5],
        cap: 200,
        guarded: false,
        build: |r| Box::new(Conv2d::new(3, 2, 1, true, r)),
    },
    Case {
        name: "transposed_conv2x",
        tolerance: 1e-4,
        dims: &[2, 3, 3, 3],
        cap: 200,
        guarded: false,
        build: |r| Box::new(TransposedConv2x::new(3, 2, r)),
    },
    Case {
        name: "batchnorm",
        tolerance: 1e-4,
        dims: &[2, 3, 4, 4],
        cap: 200,
        guarded: false,
        build: |r| Box::new(scaled_bn(3, r)),
    },
    Case { name: "relu", tolerance: 1e-4, dims: &[2, 2, 4, 4], cap: 200, guarded: false, build: |_| Box::new(Relu) },
    Case {
        name: "sigmoid",
        tolerance: 1e-4,
        dims: &[2, 2, 4, 4],
        cap: 200,
        guarded: false,
        build: |_| Box::new(Sigmoid),
    },
    Case {
        name: "maxpool2x2",
        tolerance: 1e-4,
        dims: &[2, 2, 4, 6],
        cap: 200,
        guarded: false,
        build: |_| Box::new(MaxPool2x2),
    },
    Case {
        name: "nearest_upsample2x",
        tolerance: 1e-4,
        dims: &[2, 2, 3, 3],
        cap: 200,
        guarded: false,
        build: |_| Box::new(NearestUpsample2x),
    },
    Case {
        name: "concat_channels",
        tolerance: 1e-4,
        dims: &[2, 3, 3, 3],
        cap: 200,
        guarded: false,
        build: |_| Box::new(ConcatSplit { first: 1 }),
    },
    Case {
        name: "add",
        tolerance: 1e-4,
        dims: &[2, 4, 3, 3],
        cap: 200,
        guarded: false,
        build: |_| Box::new(AddHalves),
    },
    Case {
        name: "mul_broadcast",
        tolerance: 1e-4,
        dims: &[2, 4, 3, 3],
        cap: 200,
        guarded: false,
        build: |_| Box::new(MulSplit { first: 1 }),
    },
    Case {
        name: "attention_gate",
        tolerance: 1e-4,
        dims: &[2, 7, 6, 6],
        cap: 200,
        guarded: false,
        build: |r| {
            let mut gate = AttentionGate::new(3, 4, 2, r);
            gate.bn = scaled_bn(2, r);
            Box::new(GatePair(gate))
        },
    },
    Case {
        name: "unet_depth2_transposed",
        tolerance: 1e-3,
        dims: &[2, 1, 8, 8],
        cap: 40,
        guarded: true,
        build: |r| {
            let mut model = AttentionUNet::new(&AttentionUNetConfig::new(1, &[3, 4]), r.random()).unwrap();
            jitter_offsets(&mut model, r);
            Box::new(model)
        },
    },
    Case {
        name: "unet_depth2_nearest",
        tolerance: 1e-3,
        dims: &[2, 2, 8, 8],
        cap: 40,
        guarded: true,
        build: |r| {
            let cfg = AttentionUNetConfig::new(2, &[3, 4]).with_upsample(Upsample::NearestConv);
            let mut model = AttentionUNet::new(&cfg, r.random()).unwrap();
            jitter_offsets(&mut model, r);
            Box::new(model)
        },
    },
];

/// Replaces every bias and batch-norm shift with a draw from U(-0.2, 0.2).
///
/// At initialization these are all zero, so wherever ReLU zeroed both inputs
/// of a layer its pre-activation is exactly 0 and central differences
/// straddle the kink. Finite checks need a point where the model is
/// differentiable.
pub(crate) fn jitter_offsets<M: Module>(model: &mut M, rng: &mut ChaCha8Rng) {
    model.visit_params_mut("", &mut |name, p| {
        if name.ends_with("bias") || name.ends_with("beta") {
            p.value = Tensor::uniform(p.value.dims(), -0.2, 0.2, rng);
        }
    });
}

/// Finite-difference checks of every layer, the attention gate and a
/// depth-2 model, each over `seeds` random initializations and inputs.
pub fn gradient_suite(seeds: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::with_capacity(CASES.len());
    for case in CASES {
        let mut entry = SuiteEntry {
            name: case.name,
            tolerance: case.tolerance,
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
            worst: String::new(),
        };
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 17);
            let mut module = (case.build)(&mut rng);
            let x = Tensor::uniform(case.dims, -1.0, 1.0, &mut rng);
            let kink_guard = case.guarded.then_some(case.tolerance);
            let opts = GradcheckOptions { seed, max_per_tensor: case.cap, kink_guard, ..Default::default() };
            let report = module.check(&x, &opts)?;
            entry.checked += report.checked;
            entry.skipped += report.skipped;
            if report.max_rel_error >= entry.max_rel_error {
                entry.max_rel_error = report.max_rel_error;
                entry.worst = format!("seed {seed}: {}", report.worst);
            }
        }
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_two_seeds() {
        for e in gradient_suite(2).unwrap() {
            assert!(e.passed(), "{e:?}");
            assert!(e.checked > 0);
        }
    }
}
