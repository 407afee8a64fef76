//! Central finite-difference verification of hand-written backward passes.
//!
//! The scalar probed is `L = Σ r ⊙ y` with a fixed random `r ~ U(-1, 1)`
//! shaped like the module output, so `∂L/∂y = r`. Each checked coordinate
//! compares the analytic gradient `a` with `n = (L(θ+h) − L(θ−h)) / 2h` by
//! `|a − n| / max(|a|, |n|, floor)`; the floor keeps coordinates whose true
//! gradient is zero from dividing rounding noise by itself.
//!
//! With `kink_guard` set, a coordinate whose forward and backward one-sided
//! differences disagree by more than the guard (same relative measure) is
//! counted as skipped instead of scored: the step straddles a ReLU or
//! max-pool switch there, and the central difference of a piecewise function
//! is not its derivative. A wrong backward pass still shows, because there the
//! two one-sided differences agree with each other and not with `a`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mode, Module, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub step: f64,
    /// Coordinates checked per tensor; larger tensors are subsampled.
    pub max_per_tensor: usize,
    pub floor: f64,
    pub seed: u64,
    pub mode: Mode,
    pub kink_guard: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { step: 1e-5, max_per_tensor: 200, floor: 1e-6, seed: 0, mode: Mode::Train, kink_guard: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates left out by the kink guard.
    pub skipped: usize,
    /// Name and flat index of the coordinate with the largest error.
    pub worst: String,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    /// Fraction of visited coordinates the kink guard left out.
    pub fn skipped_fraction(&self) -> f64 {
        self.skipped as f64 / (self.checked + self.skipped).max(1) as f64
    }

    fn record(
        &mut self,
        what: &str,
        idx: usize,
        analytic: f64,
        [minus, base, plus]: [f64; 3],
        opts: &GradcheckOptions,
    ) {
        let h = opts.step;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(opts.floor);
        if let Some(guard) = opts.kink_guard {
            if rel((plus - base) / h, (base - minus) / h) > guard {
                self.skipped += 1;
                return;
            }
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = rel(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = format!("{what}[{idx}] analytic {analytic:e} numeric {numeric:e}");
        }
    }
}

/// Checks every input coordinate and every parameter coordinate of `module`
/// at `input` (subsampled past `max_per_tensor`). Parameters are restored
/// exactly afterwards; accumulated gradients are left zeroed.
pub fn gradcheck<M: Module + ?Sized>(module: &mut M, input: &Tensor, opts: &GradcheckOptions) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (y, cache) = module.forward(input, opts.mode)?;
    if !y.all_finite() {
        return Err(Error::Numeric("module output is not finite".into()));
    }
    let r = Tensor::uniform(y.dims(), -1.0, 1.0, &mut rng);
    module.zero_grad();
    let dx = module.backward(&cache, &r)?;
    drop(cache);

    let mut analytic = Vec::new();
    module.visit_params("", &mut |name, p| analytic.push((name.to_string(), p.grad.clone())));
    if !dx.all_finite() || analytic.iter().any(|(_, g)| !g.all_finite()) {
        return Err(Error::Numeric("analytic gradient is not finite".into()));
    }

    let loss = |m: &M, x: &Tensor| -> Result<f64> {
        let (y, _) = m.forward(x, opts.mode)?;
        let l = y.dot(&r)?;
        if l.is_finite() {
            Ok(l)
        } else {
            Err(Error::Numeric("probe loss is not finite".into()))
        }
    };
    let h = opts.step;
    let base = loss(module, input)?;
    let mut report = GradReport { max_rel_error: 0.0, checked: 0, skipped: 0, worst: String::new() };

    let mut x = input.clone();
    for idx in pick(x.len(), opts.max_per_tensor, &mut rng) {
        let orig = x.data()[idx];
        x.data_mut()[idx] = orig + h;
        let plus = loss(module, &x)?;
        x.data_mut()[idx] = orig - h;
        let minus = loss(module, &x)?;
        x.data_mut()[idx] = orig;
        report.record("input", idx, dx.data()[idx], [minus, base, plus], opts);
    }

    for (t, (name, grad)) in analytic.iter().enumerate() {
        for idx in pick(grad.len(), opts.max_per_tensor, &mut rng) {
            let orig = set_param(module, t, idx, None);
            set_param(module, t, idx, Some(orig + h));
            let plus = loss(module, input);
            set_param(module, t, idx, Some(orig - h));
            let minus = loss(module, input);
            set_param(module, t, idx, Some(orig));
            report.record(name, idx, grad.data()[idx], [minus?, base, plus?], opts);
        }
    }
    module.zero_grad();
    Ok(report)
}

fn pick(len: usize, cap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= cap {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, cap).into_vec();
        v.sort_unstable();
        v
    }
}

/// Reads coordinate `idx` of the `tensor`-th parameter, writing `value` if
/// given. Returns the previous value.
fn set_param<M: Module + ?Sized>(module: &mut M, tensor: usize, idx: usize, value: Option<f64>) -> f64 {
    let mut seen = 0;
    let mut old = f64::NAN;
    module.visit_params_mut("", &mut |_, p| {
        if seen == tensor {
            old = p.value.data()[idx];
            if let Some(v) = value {
                p.value.data_mut()[idx] = v;
            }
        }
        seen += 1;
    });
    old
}

#[cfg(test)]
mod tests {
    use super::super::probes::*;
    use super::super::{BatchNorm2d, Conv2d, TransposedConv2x};
    use super::*;

    fn opts(seed: u64) -> GradcheckOptions {
        GradcheckOptions { seed, ..Default::default() }
    }

    fn input(dims: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        Tensor::uniform(dims, -1.0, 1.0, &mut rng)
    }

    fn check<M: Module>(mut build: impl FnMut(&mut ChaCha8Rng) -> M, dims: &[usize], tol: f64) {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = build(&mut rng);
            let report = gradcheck(&mut m, &input(dims, seed), &opts(seed)).unwrap();
            assert!(report.passes(tol), "seed {seed}: {} ({})", report.max_rel_error, report.worst);
            assert!(report.checked > 0);
        }
    }

    #[test]
    fn conv3x3_two_outputs() {
        check(|rng| Conv2d::new(1, 2, 3, true, rng), &[1, 1, 6, 6], 1e-4);
    }

    #[test]
    fn conv_multichannel_batch() {
        check(|rng| Conv2d::new(3, 4, 3, true, rng), &[2, 3, 5, 5], 1e-4);
    }

    #[test]
    fn linear_layer_is_near_exact() {
        check(|rng| Conv2d::new(3, 2, 1, true, rng), &[2, 3, 4, 4], 1e-7);
    }

    #[test]
    fn batchnorm_train_and_eval() {
        check(
            |rng| {
                let mut bn = BatchNorm2d::new(3);
                bn.gamma.value = Tensor::uniform(&[3], 0.5, 1.5, rng);
                bn.beta.value = Tensor::uniform(&[3], -0.5, 0.5, rng);
                bn
            },
            &[2, 3, 4, 4],
            1e-4,
        );
        let mut bn = BatchNorm2d::new(2);
        bn.running_var = Tensor::filled(&[2], 2.0);
        let report =
            gradcheck(&mut bn, &input(&[1, 2, 3, 3], 1), &GradcheckOptions { mode: Mode::Eval, ..opts(1) }).unwrap();
        assert!(report.passes(1e-7));
    }

    #[test]
    fn transposed_conv() {
        check(|rng| TransposedConv2x::new(3, 2, rng), &[2, 3, 3, 3], 1e-4);
    }

    #[test]
    fn elementwise_and_shape_ops() {
        check(|_| Relu, &[2, 2, 4, 4], 1e-4);
        check(|_| Sigmoid, &[2, 2, 4, 4], 1e-4);
        check(|_| MaxPool2x2, &[2, 2, 4, 6], 1e-4);
        check(|_| NearestUpsample2x, &[2, 2, 3, 3], 1e-4);
        check(|_| ConcatSplit { first: 1 }, &[2, 3, 3, 3], 1e-4);
        check(|_| AddHalves, &[2, 4, 3, 3], 1e-4);
        check(|_| MulSplit { first: 1 }, &[2, 4, 3, 3], 1e-4);
        check(|_| MulSplit { first: 2 }, &[2, 4, 3, 3], 1e-4);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        struct Broken;
        impl Module for Broken {
            type Cache = ();
            fn forward(&self, x: &Tensor, _: Mode) -> Result<(Tensor, ())> {
                Ok((x.map(|v| v * v), ()))
            }
            fn backward(&mut self, _: &(), dy: &Tensor) -> Result<Tensor> {
                Ok(dy.clone())
            }
        }
        let report = gradcheck(&mut Broken, &input(&[1, 1, 2, 2], 0), &opts(0)).unwrap();
        assert!(!report.passes(1e-2));
    }

    #[test]
    fn kink_guard_skips_a_straddled_relu() {
        let mut x = input(&[1, 1, 2, 2], 4);
        x.data_mut()[2] = 3e-6;
        let plain = gradcheck(&mut Relu, &x, &opts(4)).unwrap();
        assert!(!plain.passes(1e-4));
        assert!(plain.worst.starts_with("input[2]"), "{}", plain.worst);
        let guarded = gradcheck(&mut Relu, &x, &GradcheckOptions { kink_guard: Some(1e-4), ..opts(4) }).unwrap();
        assert_eq!((guarded.checked, guarded.skipped), (3, 1));
        assert!(guarded.passes(1e-10));
    }

    #[test]
    fn kink_guard_does_not_hide_a_wrong_gradient() {
        struct Doubled;
        impl Module for Doubled {
            type Cache = Tensor;
            fn forward(&self, x: &Tensor, _: Mode) -> Result<(Tensor, Tensor)> {
                Ok((x.map(f64::sin), x.clone()))
            }
            fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
                Tensor::new(dy.dims(), dy.data().iter().zip(x.data()).map(|(g, v)| 2.0 * g * v.cos()).collect())
            }
        }
        let guarded = GradcheckOptions { kink_guard: Some(1e-3), ..opts(0) };
        let report = gradcheck(&mut Doubled, &input(&[1, 1, 3, 3], 0), &guarded).unwrap();
        assert_eq!(report.skipped, 0);
        assert!(!report.passes(0.4));
    }

    #[test]
    fn non_finite_output_is_numeric_error() {
        struct Blowup;
        impl Module for Blowup {
            type Cache = ();
            fn forward(&self, x: &Tensor, _: Mode) -> Result<(Tensor, ())> {
                Ok((x.map(|v| v / 0.0), ()))
            }
            fn backward(&mut self, _: &(), dy: &Tensor) -> Result<Tensor> {
                Ok(dy.clone())
            }
        }
        assert!(matches!(gradcheck(&mut Blowup, &input(&[1, 1, 2, 2], 0), &opts(0)), Err(Error::Numeric(_))));
    }

    #[test]
    fn parameters_restored() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::new(2, 2, 3, true, &mut rng);
        let before = conv.clone();
        gradcheck(&mut conv, &input(&[1, 2, 4, 4], 3), &opts(3)).unwrap();
        assert_eq!(conv.weight.value, before.weight.value);
        assert_eq!(conv.bias.as_ref().unwrap().value, before.bias.as_ref().unwrap().value);
    }
}
